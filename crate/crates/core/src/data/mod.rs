//! Corpora, batches and their on-disk snapshot.

mod ingest;
pub mod minhash;
mod similarity;
mod snapshot;
mod synth;

pub use ingest::{build_lm_corpus, ingest, ingest_texts, preprocess_documents, IngestConfig, SplitRatios};
pub use similarity::batch_similarity;
pub use snapshot::{decode_corpus, encode_corpus, load_corpus, save_corpus, CORPUS_MAGIC, CORPUS_VERSION};
pub use synth::{regression_teacher, synth_regression, synth_text_documents, RegressionSpec};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One supervised regression sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub x: Vec<f64>,
    pub y: f64,
}

/// A homogeneous collection of samples: token sequences or regression pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    Tokens(Vec<Vec<u32>>),
    Pairs(Vec<Pair>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Tokens(s) => s.len(),
            Samples::Pairs(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tokens in LM mode, samples in regression mode.
    pub fn token_count(&self) -> usize {
        match self {
            Samples::Tokens(s) => s.iter().map(Vec::len).sum(),
            Samples::Pairs(s) => s.len(),
        }
    }

    pub fn token_frequencies(&self) -> Option<BTreeMap<u32, f64>> {
        match self {
            Samples::Tokens(seqs) => {
                let mut counts = BTreeMap::new();
                for &tok in seqs.iter().flatten() {
                    *counts.entry(tok).or_insert(0.0) += 1.0;
                }
                Some(counts)
            }
            Samples::Pairs(_) => None,
        }
    }

    /// Concatenate sample lists of the same kind.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Samples>) -> Option<Samples> {
        let mut iter = parts.into_iter();
        let mut out = iter.next()?.clone();
        for part in iter {
            match (&mut out, part) {
                (Samples::Tokens(a), Samples::Tokens(b)) => a.extend(b.iter().cloned()),
                (Samples::Pairs(a), Samples::Pairs(b)) => a.extend(b.iter().cloned()),
                _ => return None,
            }
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub id: usize,
    pub samples: Samples,
}

impl Batch {
    pub fn token_count(&self) -> usize {
        self.samples.token_count()
    }
}

/// Character vocabulary. Id 0 is reserved for context padding and is never a
/// prediction target.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    chars: Vec<char>,
}

pub const PAD_ID: u32 = 0;

impl Vocab {
    pub fn from_chars(mut chars: Vec<char>) -> Self {
        chars.sort_unstable();
        chars.dedup();
        Self { chars }
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut chars: Vec<char> = texts.into_iter().flat_map(str::chars).collect();
        chars.push('\n');
        Self::from_chars(chars)
    }

    /// Number of ids including padding.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> Option<u32> {
        self.chars.binary_search(&c).ok().map(|i| i as u32 + 1)
    }

    pub fn encode(&self, text: &str) -> Option<Vec<u32>> {
        text.chars().map(|c| self.id(c)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&i| (i as usize).checked_sub(1).and_then(|k| self.chars.get(k)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Batch>,
    pub validation: Samples,
    pub test: Samples,
    pub vocab: Vocab,
    /// Documents (LM) or samples (regression) assigned to each split.
    pub counts: SplitCounts,
}

impl Corpus {
    pub fn num_batches(&self) -> usize {
        self.train.len()
    }

    pub fn is_language_model(&self) -> bool {
        matches!(self.validation, Samples::Tokens(_))
    }

    pub fn batch(&self, id: usize) -> Option<&Batch> {
        self.train.get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_reserves_padding() {
        let v = Vocab::from_texts(["ba", "c"]);
        assert_eq!(v.size(), 5); // pad, \n, a, b, c
        assert_eq!(v.id('\n'), Some(1));
        assert_eq!(v.encode("abc").unwrap(), vec![2, 3, 4]);
        assert_eq!(v.decode(&[0, 4, 2]), "ca");
        assert!(v.encode("z").is_none());
    }

    #[test]
    fn concat_rejects_mixed_kinds() {
        let a = Samples::Tokens(vec![vec![1]]);
        let b = Samples::Pairs(vec![Pair { x: vec![1.0], y: 0.0 }]);
        assert!(Samples::concat([&a, &b]).is_none());
        let c = Samples::concat([&a, &a]).unwrap();
        assert_eq!(c.token_count(), 2);
    }
}
