//! Plausibility scoring and rank statistics.
//!
//! All probabilities are accumulated in the log domain. Scores are only
//! meaningful between texts of the same token length.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::codec::encode_tokens;
use crate::error::{Error, Result};
use crate::key::StegoKey;
use crate::model::{check_window, LanguageModel, ModelFingerprint, Token};

#[derive(Clone, Debug, PartialEq)]
pub struct PlausibilityScore {
    /// Natural-log cumulative probability.
    pub log_prob: f64,
    pub token_count: usize,
    pub fingerprint: ModelFingerprint,
}

/// `sum ln p(token_i | context ++ tokens[..i])`.
pub fn score(
    model: &dyn LanguageModel,
    tokens: &[Token],
    context: &[Token],
) -> Result<PlausibilityScore> {
    check_window(model.context_window(), context.len() + tokens.len())?;
    let mut ctx = context.to_vec();
    let mut log_prob = 0.0;
    for &tok in tokens {
        let ranking = model.next_ranking(&ctx)?;
        if tok.index() >= ranking.vocab_size() {
            return Err(Error::TokenOutOfRange {
                token: tok.0,
                vocab: ranking.vocab_size(),
            });
        }
        log_prob += ranking.prob(tok).ln();
        ctx.push(tok);
    }
    Ok(PlausibilityScore {
        log_prob,
        token_count: tokens.len(),
        fingerprint: model.fingerprint(),
    })
}

/// Ranks with exact counts; deeper ranks are bucketed logarithmically.
pub const EXACT_RANKS: u32 = 100;

/// Rank counts and the mean probability observed at each rank or bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct RankHistogram {
    /// One entry per bucket: `(first_rank, last_rank, count, mean_prob)`.
    pub buckets: Vec<RankBucket>,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankBucket {
    pub first: u32,
    pub last: u32,
    pub count: u64,
    pub prob_sum: f64,
}

impl RankBucket {
    pub fn mean_prob(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.prob_sum / self.count as f64
        }
    }
}

impl RankHistogram {
    pub fn new(vocab: usize) -> Self {
        let vocab = vocab as u32;
        let mut buckets: Vec<RankBucket> = (1..=EXACT_RANKS.min(vocab))
            .map(|r| RankBucket {
                first: r,
                last: r,
                count: 0,
                prob_sum: 0.0,
            })
            .collect();
        let mut first = EXACT_RANKS + 1;
        while first <= vocab {
            let last = (first.saturating_sub(1).saturating_mul(2)).min(vocab);
            buckets.push(RankBucket {
                first,
                last,
                count: 0,
                prob_sum: 0.0,
            });
            first = last + 1;
        }
        RankHistogram { buckets, total: 0 }
    }

    fn bucket_index(&self, rank: u32) -> usize {
        self.buckets.partition_point(|b| b.last < rank)
    }

    pub fn add(&mut self, rank: u32, prob: f64) {
        let i = self.bucket_index(rank);
        let b = &mut self.buckets[i];
        b.count += 1;
        b.prob_sum += prob;
        self.total += 1;
    }

    pub fn count(&self, rank: u32) -> u64 {
        self.buckets
            .get(self.bucket_index(rank))
            .filter(|b| b.first == rank && b.last == rank)
            .map_or(0, |b| b.count)
    }

    pub fn frequency(&self, rank: u32) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(rank) as f64 / self.total as f64
        }
    }

    /// Mean probability of tokens observed at an exact rank.
    pub fn mean_prob(&self, rank: u32) -> f64 {
        self.buckets
            .get(self.bucket_index(rank))
            .filter(|b| b.first == rank && b.last == rank)
            .map_or(0.0, RankBucket::mean_prob)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("first_rank\tlast_rank\tcount\tfrequency\tmean_prob\n");
        for b in self.buckets.iter().filter(|b| b.count > 0) {
            let freq = b.count as f64 / self.total as f64;
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}",
                b.first,
                b.last,
                b.count,
                freq,
                b.mean_prob()
            );
        }
        out
    }
}

/// Histogram of the ranks (and their probabilities) of every corpus token.
pub fn rank_histogram(
    model: &dyn LanguageModel,
    corpus: &[Vec<Token>],
    context: &[Token],
) -> Result<RankHistogram> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("histogram corpus is empty".into()));
    }
    let mut hist = RankHistogram::new(model.vocab_size());
    for seq in corpus {
        check_window(model.context_window(), context.len() + seq.len())?;
        let mut ctx = context.to_vec();
        for &tok in seq {
            let ranking = model.next_ranking(&ctx)?;
            hist.add(ranking.rank_of(tok)?, ranking.prob(tok));
            ctx.push(tok);
        }
    }
    Ok(hist)
}

/// Per-rank mean-probability gap between two histograms (`a - b`) for
/// ranks `1..=ranks`.
pub fn probability_drop(a: &RankHistogram, b: &RankHistogram, ranks: u32) -> Vec<(u32, f64)> {
    (1..=ranks)
        .map(|r| (r, a.mean_prob(r) - b.mean_prob(r)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionStats {
    pub p20: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p80: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionalRankProfile {
    pub positions: Vec<PositionStats>,
}

impl PositionalRankProfile {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("position\tp20\tp25\tmedian\tp75\tp80\tmean\n");
        for (i, s) in self.positions.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
                i + 1,
                s.p20,
                s.p25,
                s.median,
                s.p75,
                s.p80,
                s.mean
            );
        }
        out
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = q * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn stats(mut values: Vec<f64>) -> PositionStats {
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    PositionStats {
        p20: percentile(&values, 0.20),
        p25: percentile(&values, 0.25),
        median: percentile(&values, 0.50),
        p75: percentile(&values, 0.75),
        p80: percentile(&values, 0.80),
        mean,
    }
}

/// Rank distribution at each position over a corpus of equal-length
/// sequences, all ranked after `context`.
pub fn positional_profile(
    model: &dyn LanguageModel,
    corpus: &[Vec<Token>],
    context: &[Token],
) -> Result<PositionalRankProfile> {
    let Some(first) = corpus.first() else {
        return Err(Error::InvalidInput("profile corpus is empty".into()));
    };
    let len = first.len();
    if let Some((index, seq)) = corpus.iter().enumerate().find(|(_, s)| s.len() != len) {
        return Err(Error::LengthMismatch {
            index,
            expected: len,
            found: seq.len(),
        });
    }
    let mut per_position = vec![Vec::with_capacity(corpus.len()); len];
    for seq in corpus {
        let ranks = crate::codec::extract_ranks(model, seq, context)?;
        for (slot, r) in per_position.iter_mut().zip(ranks.ranks) {
            slot.push(r as f64);
        }
    }
    Ok(PositionalRankProfile {
        positions: per_position.into_iter().map(stats).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Distinction {
    /// Index of the most probable candidate (first wins on ties).
    pub winner: usize,
    pub scores: Vec<PlausibilityScore>,
}

/// Picks the most probable of several equal-length candidates.
pub fn distinguish(
    model: &dyn LanguageModel,
    candidates: &[Vec<Token>],
    context: &[Token],
) -> Result<Distinction> {
    if candidates.len() < 2 {
        return Err(Error::InvalidInput(
            "distinguish needs at least two candidates".into(),
        ));
    }
    let len = candidates[0].len();
    if let Some((index, c)) = candidates.iter().enumerate().find(|(_, c)| c.len() != len) {
        return Err(Error::LengthMismatch {
            index,
            expected: len,
            found: c.len(),
        });
    }
    let scores = candidates
        .iter()
        .map(|c| score(model, c, context))
        .collect::<Result<Vec<_>>>()?;
    let mut winner = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.log_prob > scores[winner].log_prob {
            winner = i;
        }
    }
    Ok(Distinction { winner, scores })
}

/// Truncates `text` to exactly `n` tokens, or `None` if it is shorter.
pub fn truncate_to_tokens(
    model: &dyn LanguageModel,
    text: &str,
    n: usize,
) -> Result<Option<Vec<Token>>> {
    let tokens = model.tokenize(text)?;
    Ok((tokens.len() >= n).then(|| tokens[..n].to_vec()))
}

/// Uniformly random printable ASCII, `n` bytes.
pub fn ascii_baseline(rng: &mut impl Rng, n: usize) -> String {
    (0..n)
        .map(|_| rng.gen_range(0x20u8..=0x7e) as char)
        .collect()
}

/// Uniformly sampled words joined by spaces, at least `min_chars` long.
pub fn words_baseline(rng: &mut impl Rng, words: &[&str], min_chars: usize) -> String {
    let mut out = String::new();
    while out.len() < min_chars {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(words.choose(rng).expect("word list is non-empty"));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Real,
    Stego,
    Baseline,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Real => "real",
            Role::Stego => "stego",
            Role::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub role: Role,
    pub key_id: String,
    pub token_count: usize,
    pub log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct ReportConfig {
    /// Token length every scored text is truncated to.
    pub length: usize,
    /// Number of rows for each random baseline.
    pub baseline_count: usize,
    pub seed: u64,
    /// Worker sessions; each owns its own model handles.
    pub jobs: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            length: 85,
            baseline_count: 100,
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusReport {
    pub rows: Vec<ReportRow>,
}

/// A named prompt used as the secret key `k` for report stegotexts.
#[derive(Clone, Debug)]
pub struct ReportKey {
    pub id: String,
    pub prompt: String,
}

/// A model session for one report shard.
pub struct ReportSession {
    /// Generates stegotexts.
    pub generator: Box<dyn LanguageModel + Send>,
    /// Scores every text; may be a different model.
    pub scorer: Box<dyn LanguageModel + Send>,
}

enum Task {
    Score {
        id: String,
        role: Role,
        key_id: String,
        tokens: Vec<Token>,
    },
    Stego {
        id: String,
        key: ReportKey,
        message: Vec<Token>,
    },
}

fn run_task(session: &ReportSession, task: &Task) -> Result<ReportRow> {
    let scorer = session.scorer.as_ref();
    match task {
        Task::Score {
            id,
            role,
            key_id,
            tokens,
        } => {
            let s = score(scorer, tokens, &[])?;
            Ok(ReportRow {
                id: id.clone(),
                role: *role,
                key_id: key_id.clone(),
                token_count: tokens.len(),
                log_prob: s.log_prob,
            })
        }
        Task::Stego { id, key, message } => {
            let gen = session.generator.as_ref();
            let k = StegoKey::new(key.prompt.clone(), gen.fingerprint())
                .with_pad_len(0)
                .allowing_empty_k();
            let (stego, _) = encode_tokens(gen, message, &k)?;
            let tokens = if gen.fingerprint() == scorer.fingerprint() {
                stego.tokens
            } else {
                scorer.tokenize(&stego.text)?
            };
            let s = score(scorer, &tokens, &[])?;
            Ok(ReportRow {
                id: id.clone(),
                role: Role::Stego,
                key_id: key.id.clone(),
                token_count: tokens.len(),
                log_prob: s.log_prob,
            })
        }
    }
}

/// Scores real texts, one stegotext per (original, key) and the two random
/// baselines. Rows come out in input order regardless of `jobs`.
///
/// `sessions` is called once per worker to open that worker's models.
pub fn corpus_report<F>(
    sessions: F,
    real: &[&str],
    originals: &[&str],
    keys: &[ReportKey],
    config: &ReportConfig,
) -> Result<CorpusReport>
where
    F: Fn() -> Result<ReportSession> + Sync,
{
    let probe = sessions()?;
    let gen = probe.generator.as_ref();
    let scorer = probe.scorer.as_ref();
    let n = config.length;
    let mut tasks = Vec::new();

    for (i, text) in real.iter().enumerate() {
        if let Some(tokens) = truncate_to_tokens(scorer, text, n)? {
            tasks.push(Task::Score {
                id: format!("real-{i}"),
                role: Role::Real,
                key_id: "-".into(),
                tokens,
            });
        }
    }
    for (i, text) in originals.iter().enumerate() {
        let message = truncate_to_tokens(gen, text, n)?.ok_or_else(|| Error::LengthMismatch {
            index: i,
            expected: n,
            found: gen.tokenize(text).map(|t| t.len()).unwrap_or(0),
        })?;
        let scored = if gen.fingerprint() == scorer.fingerprint() {
            message.clone()
        } else {
            scorer.tokenize(&gen.detokenize(&message)?)?
        };
        tasks.push(Task::Score {
            id: format!("orig-{i}"),
            role: Role::Real,
            key_id: "original".into(),
            tokens: scored,
        });
        for key in keys {
            tasks.push(Task::Stego {
                id: format!("orig-{i}"),
                key: key.clone(),
                message: message.clone(),
            });
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let words = crate::corpus::words();
    for i in 0..config.baseline_count {
        let text = ascii_baseline(&mut rng, n * 4);
        if let Some(tokens) = truncate_to_tokens(scorer, &text, n)? {
            tasks.push(Task::Score {
                id: format!("ascii-{i}"),
                role: Role::Baseline,
                key_id: "ascii".into(),
                tokens,
            });
        }
    }
    for i in 0..config.baseline_count {
        let text = words_baseline(&mut rng, &words, n * 8);
        if let Some(tokens) = truncate_to_tokens(scorer, &text, n)? {
            tasks.push(Task::Score {
                id: format!("words-{i}"),
                role: Role::Baseline,
                key_id: "words".into(),
                tokens,
            });
        }
    }

    let jobs = config.jobs.max(1).min(tasks.len().max(1));
    let rows = if jobs == 1 {
        tasks
            .iter()
            .map(|t| run_task(&probe, t))
            .collect::<Result<Vec<_>>>()?
    } else {
        drop(probe);
        let chunk = tasks.len().div_ceil(jobs);
        let results: Vec<Result<Vec<ReportRow>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = tasks
                .chunks(chunk)
                .map(|shard| {
                    let sessions = &sessions;
                    scope.spawn(move || {
                        let session = sessions()?;
                        shard.iter().map(|t| run_task(&session, t)).collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("report worker panicked"))
                .collect()
        });
        let mut rows = Vec::with_capacity(tasks.len());
        for shard in results {
            rows.extend(shard?);
        }
        rows
    };
    Ok(CorpusReport { rows })
}

impl CorpusReport {
    pub fn rows_with_role(&self, role: Role) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.role == role)
    }

    /// Tab-separated rows, a blank line, then per-group percentiles.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\trole\tkey_id\ttoken_count\tlog_prob\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}",
                r.id,
                r.role.as_str(),
                r.key_id,
                r.token_count,
                r.log_prob
            );
        }
        out.push('\n');
        out.push_str("group\tcount\tmin\tp25\tmedian\tp75\tmax\n");
        let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
        for r in &self.rows {
            let name = match r.role {
                Role::Baseline => format!("baseline:{}", r.key_id),
                Role::Real if r.key_id == "original" => "real:original".to_string(),
                role => role.as_str().to_string(),
            };
            match groups.iter_mut().find(|(g, _)| *g == name) {
                Some((_, v)) => v.push(r.log_prob),
                None => groups.push((name, vec![r.log_prob])),
            }
        }
        for (name, mut v) in groups {
            v.sort_by(f64::total_cmp);
            let _ = writeln!(
                out,
                "{name}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                v.len(),
                v[0],
                percentile(&v, 0.25),
                percentile(&v, 0.5),
                percentile(&v, 0.75),
                v[v.len() - 1]
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::ReferenceModel;

    fn t(s: &str) -> Vec<Token> {
        s.bytes().map(|b| Token(b as u32)).collect()
    }

    #[test]
    fn empty_text_scores_zero() {
        let m = ReferenceModel::uniform();
        assert_eq!(score(&m, &[], &[]).unwrap().log_prob, 0.0);
    }

    #[test]
    fn uniform_score() {
        let m = ReferenceModel::uniform();
        let s = score(&m, &t("hello"), &t("ctx")).unwrap();
        let expected = 5.0 * (1.0f64 / 256.0).ln();
        assert!((s.log_prob - expected).abs() < 1e-12);
        assert_eq!(s.token_count, 5);
    }

    #[test]
    fn histogram_buckets_cover_vocab() {
        let h = RankHistogram::new(1000);
        assert_eq!(h.buckets[99].first, 100);
        assert_eq!(h.buckets[100].first, 101);
        assert_eq!(h.buckets[100].last, 200);
        assert_eq!(h.buckets.last().unwrap().last, 1000);
        for w in h.buckets.windows(2) {
            assert_eq!(w[0].last + 1, w[1].first);
        }
        assert_eq!(RankHistogram::new(50).buckets.len(), 50);
    }

    #[test]
    fn greedy_corpus_is_all_rank_one() {
        let m = ReferenceModel::build(crate::corpus::TEXT, 1.0).unwrap();
        let corpus: Vec<Vec<Token>> = ["a", "T", "q"]
            .iter()
            .map(|c| {
                let ctx = t(c);
                let mut seq = ctx.clone();
                seq.extend(crate::codec::greedy_continuation(&m, &ctx, 20).unwrap());
                seq[1..].to_vec()
            })
            .collect();
        // rank each continuation after its seed character
        let mut total = 0;
        for (c, seq) in ["a", "T", "q"].iter().zip(&corpus) {
            let h = rank_histogram(&m, std::slice::from_ref(seq), &t(c)).unwrap();
            assert_eq!(h.frequency(1), 1.0);
            total += h.total;
        }
        assert_eq!(total, 60);
    }

    #[test]
    fn percentiles_ordered() {
        let v: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        assert_eq!(percentile(&v, 0.5), 5.5);
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 10.0);
        let s = stats(vec![5.0, 1.0, 9.0, 3.0, 7.0]);
        assert!(s.p20 <= s.p25 && s.p25 <= s.median && s.median <= s.p75 && s.p75 <= s.p80);
    }

    #[test]
    fn profile_rejects_ragged_corpus() {
        let m = ReferenceModel::uniform();
        let err = positional_profile(&m, &[t("abc"), t("ab")], &[]).unwrap_err();
        assert!(matches!(
            err,
            Error::LengthMismatch {
                index: 1,
                expected: 3,
                found: 2
            }
        ));
    }

    #[test]
    fn distinguish_basics() {
        let m = ReferenceModel::build(crate::corpus::TEXT, 1.0).unwrap();
        let d = distinguish(&m, &[t("the cat"), t("the cat")], &[]).unwrap();
        assert_eq!(d.winner, 0);
        let d = distinguish(&m, &[t("#$QZ%kx"), t("the cat")], &[]).unwrap();
        assert_eq!(d.winner, 1);
        assert!(matches!(
            distinguish(&m, &[t("ab"), t("abc")], &[]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(distinguish(&m, &[t("ab")], &[]).is_err());
    }

    #[test]
    fn baselines_are_seeded() {
        let words = crate::corpus::words();
        let a = words_baseline(&mut ChaCha20Rng::seed_from_u64(3), &words, 50);
        let b = words_baseline(&mut ChaCha20Rng::seed_from_u64(3), &words, 50);
        assert_eq!(a, b);
        assert!(a.len() >= 50);
        let s = ascii_baseline(&mut ChaCha20Rng::seed_from_u64(1), 40);
        assert_eq!(s.len(), 40);
        assert!(s.bytes().all(|b| (0x20..=0x7e).contains(&b)));
    }
}
