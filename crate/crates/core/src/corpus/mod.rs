//! POS-annotated corpus ingestion: CoNLL-U parsing, Penn to UD conversion,
//! tag distributions and token-level train/test splits.

mod conllu;
mod tagset;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conllu::{parse_conllu, parse_conllu_with, ParseOptions, TagSource};
pub use tagset::{convert_penn_to_ud, PosTagset, Upos};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown UD tag {0:?}")]
    UnknownTag(String),
    #[error("invalid tagset: {0}")]
    InvalidTagset(String),
    #[error("tag {0} is not part of the tagset")]
    TagOutsideTagset(Upos),
    #[error("cannot compute a distribution over an empty stream")]
    EmptyStream,
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("need at least 2 records to split, got {0}")]
    TooFewRecords(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Word {
    pub sentence_id: usize,
    /// 0-based position within the sentence.
    pub word_index: usize,
    pub surface: String,
    pub xpos: String,
    pub upos: Upos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: usize,
    pub words: Vec<Word>,
}

/// Tag counts over a word or token stream, in tagset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosDistribution {
    tags: Vec<Upos>,
    counts: Vec<u64>,
    total: u64,
}

impl PosDistribution {
    /// Counts `stream` over `tagset`. Fails on an empty stream or on a tag
    /// outside the tagset.
    pub fn from_tags<I>(stream: I, tagset: &PosTagset) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = Upos>,
    {
        let mut counts = vec![0u64; tagset.len()];
        for tag in stream {
            let idx = tagset.index_of(tag).ok_or(CorpusError::TagOutsideTagset(tag))?;
            counts[idx] += 1;
        }
        Self::from_counts(tagset.tags().to_vec(), counts)
    }

    pub fn from_counts(tags: Vec<Upos>, counts: Vec<u64>) -> Result<Self, CorpusError> {
        assert_eq!(tags.len(), counts.len(), "one count per tag");
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(CorpusError::EmptyStream);
        }
        Ok(PosDistribution { tags, counts, total })
    }

    pub fn tags(&self) -> &[Upos] {
        &self.tags
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Fractions in tagset order; they sum to 1.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn probability(&self, tag: Upos) -> f64 {
        self.tags
            .iter()
            .position(|&t| t == tag)
            .map_or(0.0, |i| self.counts[i] as f64 / self.total as f64)
    }

    /// The most frequent tag; ties go to the earlier tag in tagset order.
    pub fn majority(&self) -> (Upos, f64) {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        (self.tags[best], self.counts[best] as f64 / self.total as f64)
    }
}

/// Tag distribution over a word stream.
pub fn corpus_distribution(words: &[Word], tagset: &PosTagset) -> Result<PosDistribution, CorpusError> {
    PosDistribution::from_tags(words.iter().map(|w| w.upos), tagset)
}

pub const DEFAULT_SPLIT_RATIO: f64 = 2.0 / 3.0;

/// Seeded index split: `round(ratio * n)` indices go to train, the rest to
/// test. Both sides are returned in ascending index order.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    if n < 2 {
        return Err(CorpusError::TooFewRecords(n));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Token-level split: subtokens of one word may land on different sides.
pub fn split_tokens<T: Clone>(records: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), CorpusError> {
    let (train, test) = split_indices(records.len(), ratio, seed)?;
    Ok((
        train.into_iter().map(|i| records[i].clone()).collect(),
        test.into_iter().map(|i| records[i].clone()).collect(),
    ))
}
