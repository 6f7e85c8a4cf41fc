//! Deterministic synthetic corpora for desk-scale runs.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Batch, Corpus, Pair, Samples, SplitRatios, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, sub_seed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    pub seed: u64,
    pub n_samples: usize,
    pub dim: usize,
    pub batches: usize,
    pub noise: f64,
}

impl RegressionSpec {
    pub fn new(seed: u64, n_samples: usize, dim: usize, batches: usize) -> Self {
        Self {
            seed,
            n_samples,
            dim,
            batches,
            noise: 0.01,
        }
    }
}

/// The hidden weight vector `w*` for a given seed.
pub fn regression_teacher(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(sub_seed(seed, "teacher"));
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `y = w*·x + noise·z` with standard normal `x` and `z`, split 80/10/10 in
/// generation order and packed into equal batches.
pub fn synth_regression(spec: &RegressionSpec) -> Result<Corpus> {
    if spec.batches == 0 || spec.n_samples < 2 * spec.batches {
        return Err(Error::Config(format!(
            "need at least {} samples for {} batches",
            2 * spec.batches,
            spec.batches
        )));
    }
    if spec.dim == 0 {
        return Err(Error::Config("regression dim must be positive".into()));
    }
    let w = regression_teacher(spec.seed, spec.dim);
    let mut rng = rng_from_seed(sub_seed(spec.seed, "samples"));
    let samples: Vec<Pair> = (0..spec.n_samples)
        .map(|_| {
            let x: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let z: f64 = rng.sample(StandardNormal);
            let clean: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            Pair {
                y: clean + spec.noise * z,
                x,
            }
        })
        .collect();

    let counts = SplitRatios::default().counts(spec.n_samples);
    let per_batch = counts.train / spec.batches;
    if per_batch == 0 {
        return Err(Error::Config("training split too small for batch count".into()));
    }
    let train = (0..spec.batches)
        .map(|b| Batch {
            id: b,
            samples: Samples::Pairs(samples[b * per_batch..(b + 1) * per_batch].to_vec()),
        })
        .collect();
    let val_end = counts.train + counts.validation;
    Ok(Corpus {
        train,
        validation: Samples::Pairs(samples[counts.train..val_end].to_vec()),
        test: Samples::Pairs(samples[val_end..].to_vec()),
        vocab: Vocab::default(),
        counts,
    })
}

const CONSONANTS: &[char] = &[
    'b', 'c', 'd', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'w', 'z',
];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
const FUNCTION_WORDS: &[&str] = &["the", "of", "and", "a", "in", "is", "to", "was", "on", "for"];

/// Pseudo-English documents drawn from `topics` vocabularies. Documents are
/// emitted in contiguous topic blocks, so packing the training stream in order
/// gives batches with distinct content.
pub fn synth_text_documents(seed: u64, n_docs: usize, topics: usize) -> Vec<String> {
    let topics = topics.max(1);
    let mut rng = rng_from_seed(sub_seed(seed, "text"));
    let lexicons: Vec<Vec<String>> = (0..topics)
        .map(|_| {
            let mut pool = CONSONANTS.to_vec();
            for i in 0..6 {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            let consonants = &pool[..6];
            (0..14)
                .map(|_| {
                    let syllables = rng.random_range(1..=3);
                    (0..syllables)
                        .flat_map(|_| {
                            [
                                consonants[rng.random_range(0..consonants.len())],
                                VOWELS[rng.random_range(0..VOWELS.len())],
                            ]
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    (0..n_docs)
        .map(|d| {
            let lexicon = &lexicons[d * topics / n_docs.max(1)];
            let n_words = rng.random_range(8..=16);
            let words: Vec<&str> = (0..n_words)
                .map(|_| {
                    if rng.random_bool(0.65) {
                        // Zipf-like preference for the first few topic words
                        let r: f64 = rng.random();
                        let idx = ((lexicon.len() as f64).powf(r) - 1.0) as usize;
                        lexicon[idx.min(lexicon.len() - 1)].as_str()
                    } else {
                        FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())]
                    }
                })
                .collect();
            format!("{}.", words.join(" "))
        })
        .collect()
}
