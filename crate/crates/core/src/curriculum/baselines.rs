use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::estimator::Permutation;
use crate::model::{evaluate, DifferentiableModel};
use crate::numerics::{rng_from_seed, sub_seed, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifficultyStrategy {
    /// Random order.
    #[serde(rename = "ro")]
    Random,
    /// Sample length: tokens (or samples) in the batch.
    #[serde(rename = "sl")]
    SampleLength,
    /// Negative reference-model metric on the batch.
    #[serde(rename = "ppl")]
    Perplexity,
    /// `(R(θ_W, B) − R(θ_S, B)) / R(θ_W, B)` for a weak and a strong model.
    #[serde(rename = "pd")]
    PerplexityDifference,
}

impl DifficultyStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            DifficultyStrategy::Random => "ro",
            DifficultyStrategy::SampleLength => "sl",
            DifficultyStrategy::Perplexity => "ppl",
            DifficultyStrategy::PerplexityDifference => "pd",
        }
    }

    pub const ALL: [DifficultyStrategy; 4] = [
        DifficultyStrategy::Random,
        DifficultyStrategy::SampleLength,
        DifficultyStrategy::Perplexity,
        DifficultyStrategy::PerplexityDifference,
    ];
}

impl FromStr for DifficultyStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.label() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Input(format!("unknown difficulty strategy {s:?}")))
    }
}

/// Trained parameters the model-based strategies score with.
#[derive(Clone, Copy, Default)]
pub struct ReferenceModels<'a> {
    pub model: Option<&'a dyn DifferentiableModel>,
    pub reference: Option<&'a ParamVector>,
    pub weak: Option<&'a ParamVector>,
    pub strong: Option<&'a ParamVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub strategy: DifficultyStrategy,
    /// `ρ` per batch id.
    pub scores: Vec<f64>,
}

fn need<'a, T: ?Sized>(x: Option<&'a T>, what: &str, strategy: DifficultyStrategy) -> Result<&'a T> {
    x.ok_or_else(|| Error::Config(format!("strategy {} needs a {what}", strategy.label())))
}

pub fn difficulty_scores(
    corpus: &Corpus,
    strategy: DifficultyStrategy,
    refs: &ReferenceModels<'_>,
    seed: u64,
) -> Result<DifficultyScore> {
    let scores = match strategy {
        DifficultyStrategy::Random => {
            let mut rng = rng_from_seed(sub_seed(seed, "baseline-ro"));
            corpus.train.iter().map(|_| rng.random::<f64>()).collect()
        }
        DifficultyStrategy::SampleLength => corpus.train.iter().map(|b| b.token_count() as f64).collect(),
        DifficultyStrategy::Perplexity => {
            let model = need(refs.model, "model", strategy)?;
            let theta = need(refs.reference, "reference model", strategy)?;
            corpus
                .train
                .iter()
                .map(|b| Ok(-evaluate(model, theta, &b.samples)?.metric()))
                .collect::<Result<_>>()?
        }
        DifficultyStrategy::PerplexityDifference => {
            let model = need(refs.model, "model", strategy)?;
            let weak = need(refs.weak, "weak model", strategy)?;
            let strong = need(refs.strong, "strong model", strategy)?;
            corpus
                .train
                .iter()
                .map(|b| {
                    let rw = evaluate(model, weak, &b.samples)?.metric();
                    let rs = evaluate(model, strong, &b.samples)?.metric();
                    Ok((rw - rs) / rw)
                })
                .collect::<Result<_>>()?
        }
    };
    let scores: Vec<f64> = scores;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite difficulty for batch {i}")));
    }
    Ok(DifficultyScore { strategy, scores })
}

/// Batch ids sorted by difficulty, easy to hard unless `descending`; ties
/// keep ascending id either way.
pub fn order_by_difficulty(score: &DifficultyScore, descending: bool) -> Permutation {
    let mut ids: Vec<usize> = (0..score.scores.len()).collect();
    ids.sort_by(|&a, &b| {
        let c = score.scores[a].total_cmp(&score.scores[b]);
        let c = if descending { c.reverse() } else { c };
        c.then(a.cmp(&b))
    });
    Permutation::new(ids).expect("sorted ids form a permutation")
}

pub fn baseline_order(
    corpus: &Corpus,
    strategy: DifficultyStrategy,
    refs: &ReferenceModels<'_>,
    seed: u64,
    descending: bool,
) -> Result<Permutation> {
    Ok(order_by_difficulty(&difficulty_scores(corpus, strategy, refs, seed)?, descending))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_regression, Batch, RegressionSpec, Samples, SplitCounts, Vocab};
    use crate::model::QuadraticModel;

    fn token_corpus(lengths: &[usize]) -> Corpus {
        let train = lengths
            .iter()
            .enumerate()
            .map(|(id, &n)| Batch { id, samples: Samples::Tokens(vec![vec![0; n]]) })
            .collect();
        Corpus {
            train,
            validation: Samples::Tokens(vec![vec![0]]),
            test: Samples::Tokens(vec![vec![0]]),
            vocab: Vocab::from_chars(vec!['a']),
            counts: SplitCounts { train: lengths.len(), validation: 1, test: 1 },
        }
    }

    #[test]
    fn sample_length_sorts_by_token_count() {
        let corpus = token_corpus(&[30, 10, 20]);
        let order = baseline_order(&corpus, DifficultyStrategy::SampleLength, &ReferenceModels::default(), 0, false).unwrap();
        assert_eq!(order.as_slice(), &[1, 2, 0]);
        let rev = baseline_order(&corpus, DifficultyStrategy::SampleLength, &ReferenceModels::default(), 0, true).unwrap();
        assert_eq!(rev.as_slice(), &[0, 2, 1]);
    }

    #[test]
    fn ties_break_by_batch_id() {
        let corpus = token_corpus(&[5, 5, 1, 5]);
        let order = baseline_order(&corpus, DifficultyStrategy::SampleLength, &ReferenceModels::default(), 0, true).unwrap();
        assert_eq!(order.as_slice(), &[0, 1, 3, 2]);
    }

    #[test]
    fn random_order_is_reproducible() {
        let corpus = token_corpus(&[1; 9]);
        let refs = ReferenceModels::default();
        let a = baseline_order(&corpus, DifficultyStrategy::Random, &refs, 4, false).unwrap();
        assert_eq!(a, baseline_order(&corpus, DifficultyStrategy::Random, &refs, 4, false).unwrap());
        assert_ne!(a, baseline_order(&corpus, DifficultyStrategy::Random, &refs, 5, false).unwrap());
    }

    #[test]
    fn model_strategies_need_models() {
        let corpus = token_corpus(&[1, 2]);
        for s in [DifficultyStrategy::Perplexity, DifficultyStrategy::PerplexityDifference] {
            assert!(matches!(
                baseline_order(&corpus, s, &ReferenceModels::default(), 0, false),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn equal_weak_and_strong_models_give_identity() {
        let corpus = synth_regression(&RegressionSpec::new(1, 100, 3, 5)).unwrap();
        let model = QuadraticModel::new(3);
        let theta = model.init_params(0);
        let refs = ReferenceModels { model: Some(&model), weak: Some(&theta), strong: Some(&theta), reference: None };
        let score = difficulty_scores(&corpus, DifficultyStrategy::PerplexityDifference, &refs, 0).unwrap();
        assert!(score.scores.iter().all(|&s| s == 0.0));
        assert!(order_by_difficulty(&score, false).is_identity());
    }

    #[test]
    fn perplexity_strategy_puts_high_loss_batches_first() {
        let corpus = synth_regression(&RegressionSpec::new(2, 100, 3, 5)).unwrap();
        let model = QuadraticModel::new(3);
        let theta = model.init_params(1);
        let refs = ReferenceModels { model: Some(&model), reference: Some(&theta), ..Default::default() };
        let order = baseline_order(&corpus, DifficultyStrategy::Perplexity, &refs, 0, false).unwrap();
        let loss = |i: usize| evaluate(&model, &theta, &corpus.train[i].samples).unwrap().metric();
        for w in order.as_slice().windows(2) {
            assert!(loss(w[0]) >= loss(w[1]));
        }
    }

    #[test]
    fn labels_roundtrip() {
        for s in DifficultyStrategy::ALL {
            assert_eq!(s.label().parse::<DifficultyStrategy>().unwrap(), s);
        }
        assert!("xx".parse::<DifficultyStrategy>().is_err());
    }
}
