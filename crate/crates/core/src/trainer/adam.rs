use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.95
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.eps > 0.0 && beta_ok(self.beta1) && beta_ok(self.beta2)) {
            return Err(Error::Config(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }

    /// `(1 − β1^s, 1 − β2^s)` for the 1-based update index `s`.
    #[inline]
    pub fn bias_corrections(&self, s: usize) -> (f64, f64) {
        let s = s as i32;
        (1.0 - self.beta1.powi(s), 1.0 - self.beta2.powi(s))
    }
}

/// Raw (uncorrected) moment accumulators after `t` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamVector,
    pub v: ParamVector,
    pub t: usize,
}

impl AdamState {
    pub fn new(template: &ParamVector) -> Self {
        Self {
            m: ParamVector::zeros(template.layout()),
            v: ParamVector::zeros(template.layout()),
            t: 0,
        }
    }
}

/// One coordinate of an Adam update: returns the new raw accumulators and
/// the update term `Γ = m̂/(√v̂ + ε)`. `s` is the 1-based update index.
///
/// Every consumer (training, the store, the oracle) goes through this
/// function so their update terms agree bit for bit.
#[inline]
pub fn adam_coord(cfg: &AdamConfig, c1: f64, c2: f64, m_prev: f64, v_prev: f64, g: f64) -> (f64, f64, f64) {
    let m = cfg.beta1 * m_prev + (1.0 - cfg.beta1) * g;
    let v = cfg.beta2 * v_prev + (1.0 - cfg.beta2) * g * g;
    let m_hat = m / c1;
    let root = (v / c2).sqrt();
    (m, v, m_hat / (root + cfg.eps))
}

/// Update term `Γ(θ, B)` given the previous raw state and a gradient, plus the
/// new state.
pub fn adam_direction(state: &AdamState, grad: &ParamVector, cfg: &AdamConfig) -> Result<(ParamVector, AdamState)> {
    state.m.check_conformable(grad)?;
    if !grad.is_finite() {
        return Err(Error::Numeric(format!("non-finite gradient at step {}", state.t)));
    }
    let (c1, c2) = cfg.bias_corrections(state.t + 1);
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut gamma = ParamVector::zeros(grad.layout());
    for i in 0..grad.total_dim() {
        let (mi, vi, gi) = adam_coord(cfg, c1, c2, state.m.values()[i], state.v.values()[i], grad.values()[i]);
        m.values_mut()[i] = mi;
        v.values_mut()[i] = vi;
        gamma.values_mut()[i] = gi;
    }
    Ok((gamma, AdamState { m, v, t: state.t + 1 }))
}

/// `θ' = θ − η·Γ` with the new raw state.
pub fn adam_step(
    params: &ParamVector,
    state: &AdamState,
    grad: &ParamVector,
    cfg: &AdamConfig,
) -> Result<(ParamVector, AdamState)> {
    params.check_conformable(grad)?;
    let (gamma, next) = adam_direction(state, grad, cfg)?;
    Ok((apply_update(params, &gamma, cfg.lr), next))
}

#[inline]
pub(crate) fn apply_update(params: &ParamVector, gamma: &ParamVector, lr: f64) -> ParamVector {
    params
        .zip_map(gamma, |p, g| p - lr * g)
        .expect("conformable update")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(x: f64) -> ParamVector {
        ParamVector::from_slice("w", &[x])
    }

    #[test]
    fn first_step_from_zero_moves_by_lr() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let p = scalar(0.0);
        let (next, state) = adam_step(&p, &AdamState::new(&p), &scalar(1.0), &cfg).unwrap();
        let m_hat = state.m.values()[0] / (1.0 - 0.9);
        let v_hat = state.v.values()[0] / (1.0 - 0.95);
        assert!((m_hat - 1.0).abs() < 1e-12);
        assert!((v_hat - 1.0).abs() < 1e-12);
        assert!((next.values()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradients_never_move_params() {
        let cfg = AdamConfig::default();
        let mut p = ParamVector::from_slice("w", &[0.3, -1.2]);
        let start = p.clone();
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            (p, s) = adam_step(&p, &s, &ParamVector::zeros(p.layout()), &cfg).unwrap();
        }
        assert_eq!(p, start);
    }

    #[test]
    fn constant_gradient_gives_unit_update() {
        let cfg = AdamConfig::default();
        let p = scalar(1.0);
        let g = scalar(0.37);
        let s0 = AdamState::new(&p);
        let (gamma1, s1) = adam_direction(&s0, &g, &cfg).unwrap();
        let (gamma2, _) = adam_direction(&s1, &g, &cfg).unwrap();
        // Γ_s = g / (|g| + ε) at every step
        let expected = 0.37 / (0.37 + 1e-8);
        assert!((gamma1.values()[0] - expected).abs() < 1e-12);
        assert!((gamma2.values()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let p = scalar(0.0);
        let r = adam_step(&p, &AdamState::new(&p), &scalar(f64::NAN), &AdamConfig::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn second_moment_stays_nonnegative(grads in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let cfg = AdamConfig::default();
            let p = scalar(0.0);
            let mut s = AdamState::new(&p);
            for g in grads {
                let (_, next) = adam_direction(&s, &scalar(g), &cfg).unwrap();
                prop_assert!(next.v.values()[0] >= 0.0);
                s = next;
            }
        }

        #[test]
        fn corrected_moments_match_closed_form(grads in prop::collection::vec(-5f64..5.0, 1..12)) {
            // m̂_s = Σ_i (1−β1) β1^{s−1−i} g_i / (1 − β1^s), and likewise for v̂
            let cfg = AdamConfig::default();
            let p = scalar(0.0);
            let mut s = AdamState::new(&p);
            for g in &grads {
                s = adam_direction(&s, &scalar(*g), &cfg).unwrap().1;
            }
            let n = grads.len();
            let (c1, c2) = cfg.bias_corrections(n);
            let mut m = 0.0;
            let mut v = 0.0;
            for (i, g) in grads.iter().enumerate() {
                m += 0.1 * 0.9f64.powi((n - 1 - i) as i32) * g;
                v += 0.05 * 0.95f64.powi((n - 1 - i) as i32) * g * g;
            }
            prop_assert!((s.m.values()[0] / c1 - m / c1).abs() <= 1e-12 * (1.0 + (m / c1).abs()));
            prop_assert!((s.v.values()[0] / c2 - v / c2).abs() <= 1e-12 * (1.0 + (v / c2).abs()));
        }
    }
}
