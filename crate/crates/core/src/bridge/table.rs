use std::path::Path;

use crate::codec::extract_ranks;
use crate::error::{Error, Result};
use crate::model::{LanguageModel, Token};

pub const MAGIC: &[u8; 4] = b"RSRT";
pub const FORMAT_VERSION: u32 = 1;

/// Marginal rank frequencies over ranks `1..=len`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankFrequencyTable {
    // counts[r - 1] is the count of rank r
    counts: Vec<u64>,
}

impl RankFrequencyTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        RankFrequencyTable { counts }
    }

    pub fn uniform(ranks: usize, count: u64) -> Self {
        Self::from_counts(vec![count; ranks])
    }

    /// Number of ranks covered.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, rank: u32) -> u64 {
        rank.checked_sub(1)
            .and_then(|i| self.counts.get(i as usize))
            .copied()
            .unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_smoothed(&self) -> bool {
        !self.counts.is_empty() && self.counts.iter().all(|&c| c > 0)
    }

    /// `(rank, count)` pairs for every nonzero count, ascending rank.
    pub fn to_bytes(&self) -> Vec<u8> {
        let pairs: Vec<(u32, u64)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i as u32 + 1, c))
            .collect();
        let mut out = Vec::with_capacity(16 + pairs.len() * 12);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
        for (rank, count) in pairs {
            out.extend_from_slice(&rank.to_le_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a rank table file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported rank table version {version}"
            )));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != n.saturating_mul(12) {
            return Err(Error::Format(format!(
                "rank table declares {n} pairs but has {} body bytes",
                body.len()
            )));
        }
        let mut counts = Vec::new();
        let mut last = 0u32;
        for pair in body.chunks_exact(12) {
            let rank = u32::from_le_bytes(pair[..4].try_into().unwrap());
            let count = u64::from_le_bytes(pair[4..].try_into().unwrap());
            if rank <= last {
                return Err(Error::Format(
                    "rank table pairs not strictly ascending".into(),
                ));
            }
            last = rank;
            counts.resize(rank as usize, 0);
            counts[rank as usize - 1] = count;
        }
        Ok(Self::from_counts(counts))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Counts the ranks of every corpus token after `context`, then adds one to
/// every rank in `1..=V` so that all ranks stay encodable.
pub fn build_rank_table(
    model: &dyn LanguageModel,
    corpus: &[Vec<Token>],
    context: &[Token],
) -> Result<RankFrequencyTable> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("rank table corpus is empty".into()));
    }
    let mut counts = vec![1u64; model.vocab_size()];
    for seq in corpus {
        for r in extract_ranks(model, seq, context)?.ranks {
            counts[r as usize - 1] += 1;
        }
    }
    Ok(RankFrequencyTable::from_counts(counts))
}
