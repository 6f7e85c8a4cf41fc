use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Samples};
use crate::error::{Error, Result};
use crate::estimator::{estimate_final, EstimatorConfig, EstimatorMode, Permutation};
use crate::model::{evaluate, DifferentiableModel};
use crate::numerics::{indexed_seed, rng_from_seed, sub_seed};
use crate::store::UpdateTermStore;
use crate::trainer::{train_final, ReferenceTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub perm: Vec<usize>,
    pub truth: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsDiffReport {
    pub method: String,
    pub orders: Vec<OrderResult>,
    pub absdiff: f64,
}

impl AbsDiffReport {
    fn new(method: &str, perms: &[Permutation], truth: &[f64], estimates: &[f64]) -> Result<Self> {
        Ok(Self {
            method: method.to_string(),
            absdiff: absdiff(truth, estimates)?,
            orders: perms
                .iter()
                .zip(truth.iter().zip(estimates))
                .map(|(p, (&t, &e))| OrderResult { perm: p.as_slice().to_vec(), truth: t, estimate: e })
                .collect(),
        })
    }
}

/// Mean absolute gap between estimated and true metrics.
pub fn absdiff(truth: &[f64], estimates: &[f64]) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimates.len() {
        return Err(Error::Input(format!(
            "absdiff needs matching non-empty inputs, got {} and {}",
            truth.len(),
            estimates.len()
        )));
    }
    Ok(truth.iter().zip(estimates).map(|(t, e)| (t - e).abs()).sum::<f64>() / truth.len() as f64)
}

/// One uniform draw in `[min r, max r]` per true value.
pub fn random_baseline(truth: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let lo = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    truth
        .iter()
        .map(|_| if lo < hi { rng.random_range(lo..=hi) } else { lo })
        .collect()
}

/// Final metric on `eval_set` after actually training under `perm`.
pub fn oracle_metric(
    model: &dyn DifferentiableModel,
    corpus: &Corpus,
    traj: &ReferenceTrajectory,
    perm: &Permutation,
    eval_set: &Samples,
) -> Result<f64> {
    let theta = train_final(model, corpus, perm, &traj.config, traj.theta(0))?;
    Ok(evaluate(model, &theta, eval_set)?.metric())
}

pub fn estimated_metric(
    store: &UpdateTermStore,
    traj: &ReferenceTrajectory,
    model: &dyn DifferentiableModel,
    perm: &Permutation,
    cfg: &EstimatorConfig,
    eval_set: &Samples,
) -> Result<f64> {
    Ok(evaluate(model, &estimate_final(store, traj, perm, cfg)?, eval_set)?.metric())
}

#[derive(Clone, Copy)]
pub struct AbsDiffSetup<'a> {
    pub store: &'a UpdateTermStore,
    pub traj: &'a ReferenceTrajectory,
    pub model: &'a dyn DifferentiableModel,
    pub corpus: &'a Corpus,
    pub eval_set: &'a Samples,
}

/// Compare each estimator mode, plus the Random baseline, against retrained
/// ground truth on `n` sampled orders. Reports come back in `modes` order
/// with Random last.
pub fn absdiff_eval(
    setup: &AbsDiffSetup<'_>,
    n: usize,
    modes: &[EstimatorMode],
    base: &EstimatorConfig,
    seed: u64,
) -> Result<Vec<AbsDiffReport>> {
    if n == 0 {
        return Err(Error::Input("absdiff needs at least one order".into()));
    }
    let steps = setup.traj.num_steps();
    let mut rng = rng_from_seed(sub_seed(seed, "absdiff-orders"));
    let drawn: Vec<Permutation> = (0..n).map(|_| Permutation::random(steps, &mut rng)).collect();

    let truths: Vec<(Permutation, f64)> = drawn
        .into_par_iter()
        .enumerate()
        .map(|(k, perm)| {
            match oracle_metric(setup.model, setup.corpus, setup.traj, &perm, setup.eval_set) {
                Ok(r) => Ok((perm, r)),
                Err(e @ Error::Training { .. }) => {
                    log::warn!("oracle diverged on {perm} ({e}); resampling once");
                    let mut rng = rng_from_seed(indexed_seed(seed, "absdiff-resample", &[k as u64]));
                    let perm = Permutation::random(steps, &mut rng);
                    let r = oracle_metric(setup.model, setup.corpus, setup.traj, &perm, setup.eval_set)?;
                    Ok((perm, r))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let (perms, truth): (Vec<_>, Vec<_>) = truths.into_iter().unzip();

    let mut reports = Vec::with_capacity(modes.len() + 1);
    for &mode in modes {
        let cfg = EstimatorConfig { mode, ..*base };
        let est: Vec<f64> = perms
            .par_iter()
            .map(|p| estimated_metric(setup.store, setup.traj, setup.model, p, &cfg, setup.eval_set))
            .collect::<Result<_>>()?;
        reports.push(AbsDiffReport::new(mode.label(), &perms, &truth, &est)?);
    }
    let mut rng = rng_from_seed(sub_seed(seed, "absdiff-random"));
    let guesses = random_baseline(&truth, &mut rng);
    reports.push(AbsDiffReport::new("random", &perms, &truth, &guesses)?);
    Ok(reports)
}
