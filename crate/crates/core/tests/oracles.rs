mod common;

use common::{percentile, rel_close, Oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rankstego::analyzer::{positional_profile, rank_histogram, score, truncate_to_tokens};
use rankstego::bridge::{
    arithmetic_recode, arithmetic_unrecode, plan_remap, remap_stream, unremap_stream,
    RankFrequencyTable,
};
use rankstego::codec::encode_tokens;
use rankstego::key::build_context;
use rankstego::model::NextTokenRanking;
use rankstego::{
    corpus, Error, LanguageModel, ModelFingerprint, ReferenceModel, Result, StegoKey, Token,
};
use sha2::{Digest, Sha256};

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[test]
fn analyzer_matches_recount() {
    let mut rng = rng(7);
    for _ in 0..100 {
        let corpus_len = rng.gen_range(0..200);
        let corpus = common::small_alphabet(&mut rng, corpus_len);
        let m = ReferenceModel::build(&corpus, 0.5).unwrap();
        let oracle = Oracle::new(&corpus, 0.5);
        let ctx_len = rng.gen_range(0..3);
        let ctx = m
            .tokenize(&common::small_alphabet(&mut rng, ctx_len))
            .unwrap();
        let len = rng.gen_range(1..25);
        let texts: Vec<Vec<Token>> = (0..rng.gen_range(1..6))
            .map(|_| m.tokenize(&common::small_alphabet(&mut rng, len)).unwrap())
            .collect();

        for t in &texts {
            let got = score(&m, t, &ctx).unwrap().log_prob;
            assert!(rel_close(got, oracle.log_prob(t, &ctx), 1e-9));
        }

        let hist = rank_histogram(&m, &texts, &ctx).unwrap();
        let mut counts = [0u64; 257];
        for t in &texts {
            for r in oracle.ranks(t, &ctx) {
                counts[r as usize] += 1;
            }
        }
        for r in 1..=rankstego::analyzer::EXACT_RANKS {
            assert_eq!(hist.count(r), counts[r as usize], "rank {r}");
        }
        assert_eq!(
            hist.total,
            texts.iter().map(|t| t.len() as u64).sum::<u64>()
        );

        let profile = positional_profile(&m, &texts, &ctx).unwrap();
        let per_text: Vec<Vec<u32>> = texts.iter().map(|t| oracle.ranks(t, &ctx)).collect();
        for (pos, stats) in profile.positions.iter().enumerate() {
            let column: Vec<f64> = per_text.iter().map(|r| r[pos] as f64).collect();
            assert!(rel_close(stats.median, percentile(&column, 0.5), 1e-12));
            assert!(rel_close(stats.p20, percentile(&column, 0.2), 1e-12));
            assert!(rel_close(stats.p80, percentile(&column, 0.8), 1e-12));
            let mean = column.iter().sum::<f64>() / column.len() as f64;
            assert!(rel_close(stats.mean, mean, 1e-12));
        }
    }
}

#[test]
fn histogram_buckets_cover_every_rank_once() {
    let m = common::english();
    let tokens: Vec<Vec<Token>> = corpus::passages()
        .iter()
        .take(20)
        .map(|p| m.tokenize(p).unwrap())
        .collect();
    let hist = rank_histogram(&m, &tokens, &[]).unwrap();
    let mut next = 1;
    for b in &hist.buckets {
        assert_eq!(b.first, next);
        next = b.last + 1;
    }
    assert_eq!(next, 257);
    assert_eq!(
        hist.buckets.iter().map(|b| b.count).sum::<u64>(),
        hist.total
    );
}

#[test]
fn remap_random_streams_roundtrip() {
    let mut rng = rng(11);
    let plans = [
        (100_000, 60_000),
        (1000, 900),
        (50_000, 32_000),
        (300, 256),
        (256, 256),
    ];
    for _ in 0..10_000 {
        let (v_enc, v_dec) = plans[rng.gen_range(0..plans.len())];
        let plan = plan_remap(v_enc, v_dec).unwrap();
        let band = plan.ambiguous_band();
        let stream: Vec<u32> = (0..rng.gen_range(0..40))
            .map(|_| loop {
                let r = rng.gen_range(1..=v_enc);
                if plan.is_identity() || !band.contains(&r) {
                    break r;
                }
            })
            .collect();
        let mapped = remap_stream(&plan, &stream).unwrap();
        assert!(mapped.iter().all(|&r| (1..=v_dec).contains(&r)));
        assert_eq!(unremap_stream(&plan, &mapped).unwrap(), stream);
    }
}

#[test]
fn remap_small_plan_is_total_outside_the_band() {
    let plan = plan_remap(1000, 900).unwrap();
    let band = plan.ambiguous_band();
    for r in 1..=1000u32 {
        match remap_stream(&plan, &[r]) {
            Ok(m) => assert_eq!(unremap_stream(&plan, &m).unwrap(), vec![r]),
            Err(Error::RemapAmbiguity { .. }) => assert!(band.contains(&r), "{r}"),
            Err(e) => panic!("rank {r}: {e}"),
        }
    }
}

#[test]
fn recode_random_tables() {
    let mut rng = rng(5);
    for _ in 0..200 {
        let table = |rng: &mut ChaCha20Rng| {
            let n = rng.gen_range(2..64);
            RankFrequencyTable::from_counts((0..n).map(|_| rng.gen_range(1..500)).collect())
        };
        let src = table(&mut rng);
        let dst = table(&mut rng);
        let ranks: Vec<u32> = (0..rng.gen_range(0..60))
            .map(|_| rng.gen_range(1..=src.len() as u32))
            .collect();
        let out = arithmetic_recode(&ranks, &src, &dst).unwrap();
        assert!(out.iter().all(|&r| (1..=dst.len() as u32).contains(&r)));
        assert_eq!(arithmetic_unrecode(&out, &src, &dst).unwrap(), ranks);
    }
}

#[test]
fn fingerprint_is_hash_of_weight_hash_and_config() {
    let m = common::english();
    let bytes = m.to_bytes();
    let mut h = Sha256::new();
    h.update(Sha256::digest(&bytes));
    h.update(rankstego::reference::CONFIG.as_bytes());
    let expected: [u8; 32] = h.finalize().into();
    assert_eq!(m.fingerprint(), ModelFingerprint(expected));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.rsbg");
    m.save(&path).unwrap();
    assert_eq!(
        ModelFingerprint::from_file(&path, rankstego::reference::CONFIG).unwrap(),
        m.fingerprint()
    );
}

#[test]
fn truncated_texts_retokenize_to_exact_length() {
    let m = common::english();
    let mut kept = 0;
    for p in corpus::passages() {
        if let Some(tokens) = truncate_to_tokens(&m, p, 85).unwrap() {
            let text = m.detokenize(&tokens).unwrap();
            assert_eq!(m.tokenize(&text).unwrap().len(), 85);
            kept += 1;
        }
    }
    assert_eq!(kept, corpus::passages().len());
}

#[test]
fn early_positions_rank_worse_after_generic_context() {
    let m = common::english();
    let ctx = build_context(&m, Some("A text:"), false).unwrap();
    let texts: Vec<Vec<Token>> = corpus::passages()
        .iter()
        .map(|p| truncate_to_tokens(&m, p, 85).unwrap().unwrap())
        .collect();
    let profile = positional_profile(&m, &texts, &ctx).unwrap();
    let mean = |s: &[rankstego::analyzer::PositionStats]| {
        s.iter().map(|p| p.mean).sum::<f64>() / s.len() as f64
    };
    let early = mean(&profile.positions[..5]);
    let late = mean(&profile.positions[19..]);
    assert!(early > late, "early {early} late {late}");
    assert!(profile.positions[0].median > profile.positions[49].median);
}

/// Tokenizes greedily into "ab" pairs, so text `a` + `b` re-tokenizes as one
/// token when emitted as two.
struct Merging;

impl LanguageModel for Merging {
    fn vocab_size(&self) -> usize {
        3
    }
    fn context_window(&self) -> usize {
        64
    }
    fn fingerprint(&self) -> ModelFingerprint {
        ModelFingerprint([9; 32])
    }
    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix("ab") {
                out.push(Token(2));
                rest = r;
            } else if let Some(r) = rest.strip_prefix('a') {
                out.push(Token(0));
                rest = r;
            } else if let Some(r) = rest.strip_prefix('b') {
                out.push(Token(1));
                rest = r;
            } else {
                return Err(Error::Encoding {
                    position: text.len() - rest.len(),
                    ch: rest.chars().next().unwrap(),
                });
            }
        }
        Ok(out)
    }
    fn detokenize(&self, tokens: &[Token]) -> Result<String> {
        Ok(tokens.iter().map(|t| ["a", "b", "ab"][t.index()]).collect())
    }
    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>> {
        // after `a`, `b` is most likely; otherwise `a`
        Ok(match context.last() {
            Some(Token(0)) => vec![0.0, 2.0, 1.0],
            _ => vec![2.0, 0.0, 1.0],
        })
    }
}

#[test]
fn unstable_retokenization_is_refused() {
    let m = Merging;
    let key = StegoKey::new("b", m.fingerprint()).with_pad_len(0);
    // a, b carries ranks [1, 1]; after "b" those emit a, b again, which
    // re-tokenize as the single token "ab"
    let message = vec![Token(0), Token(1)];
    assert!(matches!(
        encode_tokens(&m, &message, &key),
        Err(Error::RetokenizationUnstable { position: 0 })
    ));
    let transported = key.clone().with_token_transport(true);
    let (stego, _) = encode_tokens(&m, &message, &transported).unwrap();
    assert_eq!(stego.tokens, vec![Token(0), Token(1)]);
    assert_eq!(
        rankstego::codec::decode_tokens(&m, &stego, &transported).unwrap(),
        message
    );
}

/// Returns a different ranking on every call.
struct Flaky(std::cell::Cell<u32>);

impl LanguageModel for Flaky {
    fn vocab_size(&self) -> usize {
        4
    }
    fn context_window(&self) -> usize {
        64
    }
    fn fingerprint(&self) -> ModelFingerprint {
        ModelFingerprint([1; 32])
    }
    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        Ok(text.bytes().map(|b| Token(b as u32 % 4)).collect())
    }
    fn detokenize(&self, _: &[Token]) -> Result<String> {
        Ok(String::new())
    }
    fn next_logits(&self, _: &[Token]) -> Result<Vec<f64>> {
        let n = self.0.get();
        self.0.set(n + 1);
        Ok((0..4).map(|i| ((i + n) % 4) as f64).collect())
    }
}

#[test]
fn nondeterministic_backend_is_detected() {
    let m = Flaky(Default::default());
    assert!(matches!(
        rankstego::model::verify_determinism(&m),
        Err(Error::NondeterminismDetected)
    ));
    let a = NextTokenRanking::from_logits(&[0.0, 1.0, 2.0, 3.0]);
    let b = NextTokenRanking::from_logits(&[1.0, 0.0, 2.0, 3.0]);
    assert_ne!(a.digest(), b.digest());
}
