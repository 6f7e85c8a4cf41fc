//! Recursive trajectory estimation for an arbitrary batch order.
//!
//! `γ_0 = θ_0` and, with `Δ = γ_t − θ_t` and `l = perm[t]`,
//! `γ_{t+1} = γ_t − η·clip(Γ + Δ⊙∂Γ [+ c·Δ²⊙∂²Γ])` using the stored terms of
//! pair `(t, l)`.

mod permutation;

pub use permutation::Permutation;

use serde::{Deserialize, Serialize};

use crate::data::Samples;
use crate::error::{Error, Result};
use crate::model::{evaluate, DifferentiableModel, EvalResult};
use crate::numerics::ParamVector;
use crate::store::UpdateTermStore;
use crate::trainer::ReferenceTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorMode {
    #[serde(rename = "fut")]
    Fut,
    #[serde(rename = "futpp")]
    FutPlusPlus,
}

impl EstimatorMode {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorMode::Fut => "fut",
            EstimatorMode::FutPlusPlus => "futpp",
        }
    }
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fut" => Ok(EstimatorMode::Fut),
            "futpp" | "fut++" => Ok(EstimatorMode::FutPlusPlus),
            other => Err(Error::Input(format!("unknown estimator mode {other:?}"))),
        }
    }
}

/// What the clip bound limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipTarget {
    /// Each coordinate of the estimated update `Γ̂`. The bound never cuts
    /// below the stored `|Γ|` of the same coordinate, so a zero deviation
    /// always reproduces the reference step.
    Update,
    /// Each coordinate of the deviation `γ_{t+1} − θ_{t+1}`.
    Parameters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_mode")]
    pub mode: EstimatorMode,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_clip")]
    pub clip_bound: f64,
    #[serde(default = "default_clip_target")]
    pub clip_target: ClipTarget,
}

fn default_mode() -> EstimatorMode {
    EstimatorMode::Fut
}

fn default_c() -> f64 {
    0.5
}

fn default_clip() -> f64 {
    1.0
}

fn default_clip_target() -> ClipTarget {
    ClipTarget::Update
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            c: default_c(),
            clip_bound: default_clip(),
            clip_target: default_clip_target(),
        }
    }
}

impl EstimatorConfig {
    pub fn with_mode(mode: EstimatorMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0) || !(self.c >= 0.0) {
            return Err(Error::Config(format!(
                "estimator needs clip_bound > 0 and c ≥ 0, got {} and {}",
                self.clip_bound, self.c
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedTrajectory {
    /// `γ_0 ..= γ_T`.
    pub gammas: Vec<ParamVector>,
    pub evals: Option<Vec<EvalResult>>,
    pub perm: Permutation,
    pub config: EstimatorConfig,
}

impl EstimatedTrajectory {
    pub fn final_params(&self) -> &ParamVector {
        self.gammas.last().expect("γ_0 always present")
    }
}

fn check_inputs(store: &UpdateTermStore, traj: &ReferenceTrajectory, perm: &Permutation, cfg: &EstimatorConfig) -> Result<()> {
    cfg.validate()?;
    if perm.len() != store.steps() {
        return Err(Error::Input(format!(
            "permutation of {} batches for a store over {}",
            perm.len(),
            store.steps()
        )));
    }
    if traj.num_steps() != store.steps() || traj.order != *store.order() {
        return Err(Error::Store("store was not built from this trajectory".into()));
    }
    store.check_layout(traj.theta(0).layout())?;
    if cfg.mode == EstimatorMode::FutPlusPlus && !store.includes_second_order() {
        return Err(Error::Store("second-order estimation needs a store with second-order terms".into()));
    }
    Ok(())
}

/// Runs the recursion, handing each `γ_{t+1}` to `sink`.
fn recurse(
    store: &UpdateTermStore,
    traj: &ReferenceTrajectory,
    perm: &Permutation,
    cfg: &EstimatorConfig,
    mut sink: impl FnMut(&ParamVector),
) -> Result<ParamVector> {
    check_inputs(store, traj, perm, cfg)?;
    let lr = traj.config.lr;
    let bound = cfg.clip_bound;
    let second = cfg.mode == EstimatorMode::FutPlusPlus;
    let mut gamma = traj.theta(0).clone();
    let dim = gamma.total_dim();
    let mut update = vec![0.0; dim];
    for (t, &l) in perm.as_slice().iter().enumerate() {
        let terms = store.entry(t, l)?;
        let theta = traj.theta(t).values();
        let (g0, g1) = (terms.gamma.values(), terms.dgamma.values());
        let g2 = if second {
            Some(terms.d2gamma.as_ref().expect("checked by check_inputs").values())
        } else {
            None
        };
        for i in 0..dim {
            let delta = gamma.values()[i] - theta[i];
            let mut u = g0[i] + delta * g1[i];
            if let Some(g2) = g2 {
                u += cfg.c * delta * delta * g2[i];
            }
            if cfg.clip_target == ClipTarget::Update {
                let cap = bound.max(g0[i].abs());
                u = u.clamp(-cap, cap);
            }
            update[i] = u;
        }
        let next_theta = traj.theta(t + 1).values();
        for (i, (v, u)) in gamma.values_mut().iter_mut().zip(&update).enumerate() {
            *v -= lr * u;
            if cfg.clip_target == ClipTarget::Parameters {
                let dev = (*v - next_theta[i]).clamp(-bound, bound);
                *v = next_theta[i] + dev;
            }
        }
        if !gamma.is_finite() {
            return Err(Error::Divergence { step: t });
        }
        sink(&gamma);
    }
    Ok(gamma)
}

/// Estimate the whole trajectory under `perm`.
pub fn estimate(
    store: &UpdateTermStore,
    traj: &ReferenceTrajectory,
    perm: &Permutation,
    cfg: &EstimatorConfig,
) -> Result<EstimatedTrajectory> {
    let mut gammas = vec![traj.theta(0).clone()];
    recurse(store, traj, perm, cfg, |g| gammas.push(g.clone()))?;
    Ok(EstimatedTrajectory {
        gammas,
        evals: None,
        perm: perm.clone(),
        config: *cfg,
    })
}

/// Only `γ_T`, without keeping intermediate steps.
pub fn estimate_final(
    store: &UpdateTermStore,
    traj: &ReferenceTrajectory,
    perm: &Permutation,
    cfg: &EstimatorConfig,
) -> Result<ParamVector> {
    recurse(store, traj, perm, cfg, |_| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSteps {
    Final,
    All,
}

/// `R(γ_t, dataset)` at the final step, or at every step `0..=T`.
pub fn estimate_performance(
    estimated: &EstimatedTrajectory,
    model: &dyn DifferentiableModel,
    dataset: &Samples,
    steps: EvalSteps,
) -> Result<Vec<EvalResult>> {
    let chosen: &[ParamVector] = match steps {
        EvalSteps::Final => std::slice::from_ref(estimated.final_params()),
        EvalSteps::All => &estimated.gammas,
    };
    chosen.iter().map(|g| evaluate(model, g, dataset)).collect()
}

/// One JSON result line per estimated order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub perm: Vec<usize>,
    pub final_ppl: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_step_ppl: Option<Vec<f64>>,
    pub mode: String,
    pub config_digest: String,
}

impl EstimateRecord {
    pub fn new(estimated: &EstimatedTrajectory, evals: &[EvalResult], config_digest: &str) -> Self {
        let metrics: Vec<f64> = evals.iter().map(EvalResult::metric).collect();
        Self {
            perm: estimated.perm.as_slice().to_vec(),
            final_ppl: *metrics.last().expect("at least one evaluation"),
            per_step_ppl: (metrics.len() > 1).then_some(metrics),
            mode: estimated.config.mode.label().to_string(),
            config_digest: config_digest.to_string(),
        }
    }
}
