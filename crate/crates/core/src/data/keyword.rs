//! Token toy where the label is carried by planted keyword tokens.

use super::{DatasetSplit, LabeledExample, MetricKind, TokenSequence, Vocabulary};
use crate::{Error, Result};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

const NEGATIVE_WORDS: [&str; 3] = ["bad", "awful", "terrible"];
const POSITIVE_WORDS: [&str; 3] = ["good", "great", "excellent"];
const FILLER_WORDS: [&str; 20] = [
    "the", "a", "movie", "film", "plot", "actor", "scene", "was", "is", "and", "it", "this", "story", "of", "with",
    "director", "script", "very", "quite", "ending",
];

#[derive(Clone, Debug)]
pub struct KeywordConfig {
    pub n: usize,
    pub seq_len: usize,
    pub seed: u64,
    /// Keywords planted per sequence, all of the gold class.
    pub keywords_per_sequence: usize,
}

impl KeywordConfig {
    pub fn new(n: usize, seq_len: usize, seed: u64) -> Self {
        KeywordConfig { n, seq_len, seed, keywords_per_sequence: 1 }
    }

    pub fn generate(&self) -> Result<DatasetSplit> {
        if self.seq_len < 2 {
            return Err(Error::Config(format!("seq_len must be >= 2, got {}", self.seq_len)));
        }
        if self.keywords_per_sequence == 0 || self.keywords_per_sequence > self.seq_len {
            return Err(Error::Config(format!("keywords_per_sequence must be in 1..={}", self.seq_len)));
        }
        if self.n < 5 {
            return Err(Error::EmptyDataset("keyword dataset needs n >= 5 for three splits"));
        }
        let vocab = Vocabulary::new(NEGATIVE_WORDS.iter().chain(&POSITIVE_WORDS).chain(&FILLER_WORDS).copied());
        let ids =
            |words: &[&str]| -> Vec<usize> { words.iter().map(|w| vocab.id(w).expect("word in vocabulary")).collect() };
        let class_words = [ids(&NEGATIVE_WORDS), ids(&POSITIVE_WORDS)];
        let fillers = ids(&FILLER_WORDS);

        let mut rng = crate::rng::seeded(self.seed);
        let n_test = self.n / 5;
        let n_val = self.n / 5;
        let n_train = self.n - n_test - n_val;
        let mut next_id = 0;
        let mut make_split = |count: usize, rng: &mut crate::rng::Rng| {
            let mut golds: Vec<usize> = (0..count).map(|i| i % 2).collect();
            golds.shuffle(rng);
            golds
                .into_iter()
                .map(|gold| {
                    let mut tokens: Vec<usize> =
                        (0..self.seq_len).map(|_| *fillers.choose(rng).expect("nonempty fillers")).collect();
                    let positions = rand::seq::index::sample(rng, self.seq_len, self.keywords_per_sequence);
                    for pos in positions {
                        tokens[pos] = class_words[gold][rng.random_range(0..class_words[gold].len())];
                    }
                    let ex = LabeledExample { id: next_id, sequence: TokenSequence::new(tokens), gold };
                    next_id += 1;
                    ex
                })
                .collect::<Vec<_>>()
        };
        let train = make_split(n_train, &mut rng);
        let validation = make_split(n_val, &mut rng);
        let test = make_split(n_test, &mut rng);
        let signal_tokens = class_words.concat();
        Ok(DatasetSplit {
            train,
            validation,
            test,
            labels: vec!["negative".into(), "positive".into()],
            metric: MetricKind::Accuracy,
            vocab,
            seed: self.seed,
            signal_tokens,
        })
    }
}

pub fn gen_keyword_sentiment(n: usize, seq_len: usize, seed: u64) -> Result<DatasetSplit> {
    KeywordConfig::new(n, seq_len, seed).generate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gold_follows_keyword_class() {
        let split = gen_keyword_sentiment(200, 8, 1).unwrap();
        let pos: Vec<usize> = POSITIVE_WORDS.iter().map(|w| split.vocab.id(w).unwrap()).collect();
        let neg: Vec<usize> = NEGATIVE_WORDS.iter().map(|w| split.vocab.id(w).unwrap()).collect();
        for ex in split.train.iter().chain(&split.test) {
            let has_pos = ex.sequence.tokens().iter().any(|t| pos.contains(t));
            let has_neg = ex.sequence.tokens().iter().any(|t| neg.contains(t));
            assert!(has_pos ^ has_neg);
            assert_eq!(ex.gold, has_pos as usize);
        }
    }

    #[test]
    fn class_balance() {
        let split = gen_keyword_sentiment(1000, 10, 2).unwrap();
        let all: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test).collect();
        let frac = all.iter().filter(|e| e.gold == 1).count() as f64 / all.len() as f64;
        assert!((0.45..=0.55).contains(&frac));
    }

    #[test]
    fn short_sequences_rejected() {
        assert!(matches!(gen_keyword_sentiment(100, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn masking_keyword_leaves_only_fillers() {
        let split = gen_keyword_sentiment(10, 6, 3).unwrap();
        let ex = &split.train[0];
        let mut seq = ex.sequence.clone();
        for (i, t) in ex.sequence.tokens().iter().enumerate() {
            if split.signal_tokens.contains(t) {
                seq.mask(i);
            }
        }
        assert!(seq.effective_tokens().iter().all(|t| !split.signal_tokens.contains(t)));
    }
}
