//! Bundled English text used to train and exercise the reference model.

/// One short English passage per line, ASCII only.
pub const TEXT: &str = include_str!("../data/corpus.txt");

/// 10,000 common English words, one per line, most frequent first.
pub const WORDS: &str = include_str!("../data/words.txt");

pub fn passages() -> Vec<&'static str> {
    TEXT.lines().filter(|l| !l.is_empty()).collect()
}

pub fn words() -> Vec<&'static str> {
    WORDS.lines().filter(|l| !l.is_empty()).collect()
}
