//! Update terms and their diagonal derivatives for one (checkpoint, batch)
//! pair.
//!
//! With `c1 = 1 − β1^s`, `c2 = 1 − β2^s`, `M`, `V` the raw accumulators after
//! seeing gradient `g`, and `D = √(V/c2) + ε`, the update term is
//! `Γ = (M/c1)/D`. Differentiating coordinatewise with `h ≈ ∂g/∂θ` and
//! `h3 ≈ ∂²g/∂θ²`:
//!
//! ```text
//! M' = β1·dm + (1−β1)·h            V' = β2·dv + 2(1−β2)·g·h
//! M'' = β1·d2m + (1−β1)·h3         V'' = β2·d2v + 2(1−β2)·(h² + g·h3)
//! a = √(V/c2)   a' = V'/(2·c2·a)   a'' = V''/(2·c2·a) − V'²/(4·c2²·a³)
//! Γ'  = (m̂'·D − m̂·a') / D²
//! Γ'' = (m̂''·D − m̂·a'' − 2·a'·m̂' + 2·a'²·m̂/D) / D²
//! ```
//!
//! `dm, dv, d2m, d2v` are the derivatives of the previous raw accumulators,
//! accumulated along the reference run with the same recursions.

use crate::error::{Error, Result};
use crate::numerics::{guard_denominator, ParamVector};
use crate::trainer::{adam_coord, AdamConfig, AdamState, ReferenceTrajectory};

/// Relative guard for difference-quotient denominators: `ε_div = 1e-8·(1 + |θ_t|)`.
pub const DIFFERENCE_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTerms {
    pub gamma: ParamVector,
    pub dgamma: ParamVector,
    pub d2gamma: Option<ParamVector>,
}

impl UpdateTerms {
    pub fn has_second_order(&self) -> bool {
        self.d2gamma.is_some()
    }

    pub fn quantities(&self) -> impl Iterator<Item = &ParamVector> {
        [&self.gamma, &self.dgamma].into_iter().chain(self.d2gamma.as_ref())
    }

    pub fn is_finite(&self) -> bool {
        self.quantities().all(ParamVector::is_finite)
    }
}

/// Derivatives of the raw moment accumulators with respect to `θ`, in force
/// before some reference step.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSeeds {
    pub dm: Vec<f64>,
    pub dv: Vec<f64>,
    pub d2m: Vec<f64>,
    pub d2v: Vec<f64>,
}

impl MomentSeeds {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dm: vec![0.0; dim],
            dv: vec![0.0; dim],
            d2m: vec![0.0; dim],
            d2v: vec![0.0; dim],
        }
    }

    /// Seeds after consuming gradient `g` with difference quotients `h`, `h3`.
    pub fn advance(&self, cfg: &AdamConfig, g: &[f64], h: &[f64], h3: &[f64]) -> Self {
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let n = g.len();
        let mut next = Self::zeros(n);
        for i in 0..n {
            next.dm[i] = b1 * self.dm[i] + (1.0 - b1) * h[i];
            next.dv[i] = b2 * self.dv[i] + 2.0 * (1.0 - b2) * g[i] * h[i];
            next.d2m[i] = b1 * self.d2m[i] + (1.0 - b1) * h3[i];
            next.d2v[i] = b2 * self.d2v[i] + 2.0 * (1.0 - b2) * (h[i] * h[i] + g[i] * h3[i]);
        }
        next
    }
}

/// `(g_now − g_prev) / guard(θ_t − θ_{t−1})` per coordinate.
pub fn difference_quotient(now: &[f64], prev: &[f64], theta_t: &[f64], theta_prev: &[f64]) -> Vec<f64> {
    now.iter()
        .zip(prev)
        .zip(theta_t.iter().zip(theta_prev))
        .map(|((a, b), (x, y))| {
            let eps = DIFFERENCE_GUARD * (1.0 + x.abs());
            (a - b) / guard_denominator(x - y, eps)
        })
        .collect()
}

/// Inputs for one pair: gradient at `θ_t` and the difference quotients built
/// from gradients at `θ_{t−1}` and `θ_{t−2}`.
#[derive(Debug, Clone)]
pub struct PairInputs<'a> {
    pub step: usize,
    pub grad: &'a [f64],
    pub h: &'a [f64],
    pub h3: &'a [f64],
}

/// Assemble `Γ`, `∂Γ` and optionally `∂²Γ` from the reference state before
/// step `t` and the pair inputs.
pub fn assemble(
    cfg: &AdamConfig,
    state: &AdamState,
    seeds: &MomentSeeds,
    template: &ParamVector,
    inputs: &PairInputs<'_>,
    second_order: bool,
) -> UpdateTerms {
    let (c1, c2) = cfg.bias_corrections(inputs.step + 1);
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
    let n = template.total_dim();
    let mut gamma = vec![0.0; n];
    let mut dgamma = vec![0.0; n];
    let mut d2gamma = if second_order { vec![0.0; n] } else { Vec::new() };
    let (m_prev, v_prev) = (state.m.values(), state.v.values());
    for i in 0..n {
        let (g, h, h3) = (inputs.grad[i], inputs.h[i], inputs.h3[i]);
        let (m, v, gam) = adam_coord(cfg, c1, c2, m_prev[i], v_prev[i], g);
        gamma[i] = gam;
        let m_hat = m / c1;
        let a = (v / c2).sqrt();
        let d = a + eps;
        let v1 = b2 * seeds.dv[i] + 2.0 * (1.0 - b2) * g * h;
        let m_hat1 = (b1 * seeds.dm[i] + (1.0 - b1) * h) / c1;
        let a1 = if a > 0.0 { v1 / (2.0 * c2 * a) } else { 0.0 };
        dgamma[i] = (m_hat1 * d - a1 * m_hat) / (d * d);
        if second_order {
            let v2 = b2 * seeds.d2v[i] + 2.0 * (1.0 - b2) * (h * h + g * h3);
            let m_hat2 = (b1 * seeds.d2m[i] + (1.0 - b1) * h3) / c1;
            let a2 = if a > 0.0 {
                v2 / (2.0 * c2 * a) - v1 * v1 / (4.0 * c2 * c2 * a * a * a)
            } else {
                0.0
            };
            d2gamma[i] = (m_hat2 * d - m_hat * a2 - 2.0 * a1 * m_hat1 + 2.0 * a1 * a1 * m_hat / d) / (d * d);
        }
    }
    let wrap = |v: Vec<f64>| ParamVector::from_values(template.layout(), v).expect("layout-sized");
    UpdateTerms {
        gamma: wrap(gamma),
        dgamma: wrap(dgamma),
        d2gamma: second_order.then(|| wrap(d2gamma)),
    }
}

pub(crate) fn check_finite(terms: &UpdateTerms, t: usize, l: usize) -> Result<()> {
    if terms.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite update terms at (t={t}, l={l})")))
    }
}

/// Quotients `h(t)` and `h3(t)` from gradients of one batch at `θ_t`, `θ_{t−1}`
/// and `θ_{t−2}`; missing history gives zeros.
pub(crate) fn quotients(
    traj: &ReferenceTrajectory,
    t: usize,
    g_t: &[f64],
    g_prev: Option<&[f64]>,
    g_prev2: Option<&[f64]>,
) -> (Vec<f64>, Vec<f64>) {
    let n = g_t.len();
    let Some(g1) = g_prev.filter(|_| t >= 1) else {
        return (vec![0.0; n], vec![0.0; n]);
    };
    let th = |s: usize| traj.checkpoints[s].values();
    let h = difference_quotient(g_t, g1, th(t), th(t - 1));
    let h3 = match g_prev2.filter(|_| t >= 2) {
        Some(g2) => {
            let h_prev = difference_quotient(g1, g2, th(t - 1), th(t - 2));
            difference_quotient(&h, &h_prev, th(t), th(t - 1))
        }
        None => vec![0.0; n],
    };
    (h, h3)
}
