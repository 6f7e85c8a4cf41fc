use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::minhash::{unique_by_signature, MinHasher};
use super::{Batch, Corpus, Samples, SplitCounts, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, sub_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("split ratios must lie in [0, 1]".into()));
        }
        if ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }

    /// Split `n` items; train and validation sizes are rounded, test takes the rest.
    pub fn counts(&self, n: usize) -> SplitCounts {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let validation = ((self.validation * n as f64).round() as usize).min(n - train);
        SplitCounts {
            train,
            validation,
            test: n - train - validation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    /// Texts with fewer characters are dropped.
    pub min_length: usize,
    pub num_permutations: usize,
    pub split: SplitRatios,
    pub batches: usize,
    /// Tokens per packed sequence.
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_length: 5,
            num_permutations: 128,
            split: SplitRatios::default(),
            batches: 8,
            seq_len: 64,
            seed: 0,
        }
    }
}

/// Length filter followed by exact-signature MinHash deduplication.
pub fn preprocess_documents<S: AsRef<str>>(docs: &[S], config: &IngestConfig) -> Vec<String> {
    let kept: Vec<&str> = docs
        .iter()
        .map(|d| d.as_ref().trim())
        .filter(|d| d.chars().count() >= config.min_length)
        .collect();
    let hasher = MinHasher::new(config.num_permutations, sub_seed(config.seed, "minhash"));
    unique_by_signature(&kept, &hasher)
        .into_iter()
        .map(|i| kept[i].to_string())
        .collect()
}

/// Read UTF-8 text files (one document per line) and build a corpus.
pub fn ingest<P: AsRef<Path>>(paths: &[P], config: &IngestConfig) -> Result<Corpus> {
    let mut docs = Vec::new();
    for path in paths {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Ingest(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        docs.extend(text.lines().map(str::to_string));
    }
    ingest_texts(&docs, config)
}

pub fn ingest_texts<S: AsRef<str>>(docs: &[S], config: &IngestConfig) -> Result<Corpus> {
    let kept = preprocess_documents(docs, config);
    if kept.is_empty() {
        return Err(Error::Ingest("corpus is empty after filtering".into()));
    }
    build_lm_corpus(&kept, config)
}

/// Tokenize, split and pack already-clean documents.
pub fn build_lm_corpus(docs: &[String], config: &IngestConfig) -> Result<Corpus> {
    config.split.validate()?;
    if config.batches == 0 || config.seq_len < 2 {
        return Err(Error::Config("need at least one batch and seq_len >= 2".into()));
    }
    let counts = config.split.counts(docs.len());
    if counts.train < config.batches {
        return Err(Error::Config(format!(
            "{} batches requested but only {} training documents",
            config.batches, counts.train
        )));
    }
    if counts.validation == 0 || counts.test == 0 {
        return Err(Error::Config(
            "validation and test splits must each hold at least one document".into(),
        ));
    }

    // Seeded assignment to splits; each split keeps the original document order.
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut rng_from_seed(sub_seed(config.seed, "split")));
    let mut train_idx = order[..counts.train].to_vec();
    let mut val_idx = order[counts.train..counts.train + counts.validation].to_vec();
    let mut test_idx = order[counts.train + counts.validation..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    let vocab = Vocab::from_texts(docs.iter().map(String::as_str));
    let stream = |idx: &[usize]| -> Vec<u32> {
        let mut out = Vec::new();
        for &i in idx {
            out.extend(vocab.encode(&docs[i]).expect("vocab built from these docs"));
            out.push(vocab.id('\n').expect("newline in vocab"));
        }
        out
    };

    let train_stream = stream(&train_idx);
    let n_seq = train_stream.len() / config.seq_len;
    let per_batch = n_seq / config.batches;
    if per_batch == 0 {
        return Err(Error::Config(format!(
            "{} training tokens cannot fill {} batches of {}-token sequences",
            train_stream.len(),
            config.batches,
            config.seq_len
        )));
    }
    let train = (0..config.batches)
        .map(|b| {
            let seqs = (0..per_batch)
                .map(|s| {
                    let start = (b * per_batch + s) * config.seq_len;
                    train_stream[start..start + config.seq_len].to_vec()
                })
                .collect();
            Batch {
                id: b,
                samples: Samples::Tokens(seqs),
            }
        })
        .collect();

    let windows = |tokens: Vec<u32>| -> Samples {
        Samples::Tokens(tokens.chunks(config.seq_len).map(<[u32]>::to_vec).collect())
    };

    Ok(Corpus {
        train,
        validation: windows(stream(&val_idx)),
        test: windows(stream(&test_idx)),
        vocab,
        counts,
    })
}
