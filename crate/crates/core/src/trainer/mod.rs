//! Adam training along a batch order with full state capture, and the
//! retraining oracle.

mod adam;
mod io;

pub use adam::{adam_coord, adam_direction, adam_step, AdamConfig, AdamState};
pub use io::{decode_trajectory, encode_trajectory, load_trajectory, save_trajectory, TRAJECTORY_MAGIC, TRAJECTORY_VERSION};

use crate::data::{Corpus, Samples};
use crate::error::{Error, Result};
use crate::estimator::Permutation;
use crate::model::{evaluate, loss_and_grad, DifferentiableModel, EvalResult};
use crate::numerics::ParamVector;

pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    /// `θ_0 ..= θ_T`.
    pub checkpoints: Vec<ParamVector>,
    /// `g_t = ∇L(θ_t, B_{order[t]})`.
    pub grads: Vec<ParamVector>,
    /// Raw state after update `t`.
    pub states: Vec<AdamState>,
    pub losses: Vec<f64>,
    pub order: Permutation,
    pub config: AdamConfig,
}

impl ReferenceTrajectory {
    pub fn num_steps(&self) -> usize {
        self.grads.len()
    }

    pub fn theta(&self, t: usize) -> &ParamVector {
        &self.checkpoints[t]
    }

    pub fn final_params(&self) -> &ParamVector {
        self.checkpoints.last().expect("at least θ_0")
    }

    /// Raw accumulators in force before update `t`.
    pub fn state_before(&self, t: usize) -> AdamState {
        match t {
            0 => AdamState::new(&self.checkpoints[0]),
            _ => self.states[t - 1].clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.grads.len();
        if self.checkpoints.len() != t + 1 || self.states.len() != t || self.order.len() != t || self.losses.len() != t {
            return Err(Error::Store(format!(
                "inconsistent trajectory: {} checkpoints, {} gradients, {} states, order of {}",
                self.checkpoints.len(),
                t,
                self.states.len(),
                self.order.len()
            )));
        }
        Ok(())
    }

    /// Feed the stored gradients back through Adam and return the worst
    /// per-coordinate relative deviation from the stored checkpoints.
    pub fn replay_error(&self) -> Result<f64> {
        self.validate()?;
        let mut params = self.checkpoints[0].clone();
        let mut state = AdamState::new(&params);
        let mut worst: f64 = 0.0;
        for (t, g) in self.grads.iter().enumerate() {
            (params, state) = adam_step(&params, &state, g, &self.config)?;
            for (a, b) in params.values().iter().zip(self.checkpoints[t + 1].values()) {
                worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
            }
        }
        Ok(worst)
    }
}

fn check_order(corpus: &Corpus, order: &Permutation) -> Result<()> {
    if order.len() != corpus.num_batches() {
        return Err(Error::Input(format!(
            "order has {} entries for {} batches",
            order.len(),
            corpus.num_batches()
        )));
    }
    Ok(())
}

fn gradient_at(
    model: &dyn DifferentiableModel,
    params: &ParamVector,
    corpus: &Corpus,
    step: usize,
    batch: usize,
) -> Result<(f64, ParamVector)> {
    let (loss, grad) = loss_and_grad(model, params, &corpus.train[batch]).map_err(|e| match e {
        Error::Numeric(reason) => Error::Training { step, reason },
        other => other,
    })?;
    if loss > DIVERGENCE_LOSS {
        return Err(Error::Training {
            step,
            reason: format!("loss {loss:e} exceeds divergence threshold"),
        });
    }
    Ok((loss, grad))
}

/// One epoch along `order` from `theta0`, recording everything the store needs.
pub fn train_reference(
    model: &dyn DifferentiableModel,
    corpus: &Corpus,
    order: &Permutation,
    config: &AdamConfig,
    theta0: &ParamVector,
) -> Result<ReferenceTrajectory> {
    config.validate()?;
    check_order(corpus, order)?;
    let steps = order.len();
    let mut traj = ReferenceTrajectory {
        checkpoints: Vec::with_capacity(steps + 1),
        grads: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        losses: Vec::with_capacity(steps),
        order: order.clone(),
        config: *config,
    };
    let mut params = theta0.clone();
    let mut state = AdamState::new(&params);
    for (t, &batch) in order.as_slice().iter().enumerate() {
        let (loss, grad) = gradient_at(model, &params, corpus, t, batch)?;
        let (next, next_state) = adam_step(&params, &state, &grad, config)?;
        if !next.is_finite() {
            return Err(Error::Training {
                step: t,
                reason: "non-finite parameters".into(),
            });
        }
        traj.checkpoints.push(std::mem::replace(&mut params, next));
        traj.grads.push(grad);
        traj.states.push(next_state.clone());
        traj.losses.push(loss);
        state = next_state;
    }
    traj.checkpoints.push(params);
    log::debug!("trained {} steps along {}", steps, order);
    Ok(traj)
}

/// Final parameters after one epoch along `order`, without recording.
pub fn train_final(
    model: &dyn DifferentiableModel,
    corpus: &Corpus,
    order: &Permutation,
    config: &AdamConfig,
    theta0: &ParamVector,
) -> Result<ParamVector> {
    config.validate()?;
    check_order(corpus, order)?;
    let mut params = theta0.clone();
    let mut state = AdamState::new(&params);
    for (t, &batch) in order.as_slice().iter().enumerate() {
        let (_, grad) = gradient_at(model, &params, corpus, t, batch)?;
        (params, state) = adam_step(&params, &state, &grad, config)?;
    }
    Ok(params)
}

/// Ground truth: retrain along `order` and evaluate on `eval_set` at every
/// checkpoint, including `θ_0`.
pub fn retrain_oracle(
    model: &dyn DifferentiableModel,
    corpus: &Corpus,
    order: &Permutation,
    config: &AdamConfig,
    theta0: &ParamVector,
    eval_set: &Samples,
) -> Result<(ReferenceTrajectory, Vec<EvalResult>)> {
    let traj = train_reference(model, corpus, order, config, theta0)?;
    let evals = traj
        .checkpoints
        .iter()
        .map(|p| evaluate(model, p, eval_set))
        .collect::<Result<Vec<_>>>()?;
    Ok((traj, evals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_regression, RegressionSpec};
    use crate::model::MlpRegressor;

    fn setup(batches: usize) -> (Corpus, MlpRegressor, ParamVector) {
        let corpus = synth_regression(&RegressionSpec::new(11, 20 * batches, 4, batches)).unwrap();
        let model = MlpRegressor::new(4, None).unwrap();
        let theta0 = model.init_params(3);
        (corpus, model, theta0)
    }

    #[test]
    fn single_batch_is_one_adam_step() {
        let (corpus, model, theta0) = setup(1);
        let cfg = AdamConfig::default();
        let traj = train_reference(&model, &corpus, &Permutation::identity(1), &cfg, &theta0).unwrap();
        assert_eq!(traj.checkpoints.len(), 2);
        let (_, g) = model.loss_and_grad(&theta0, &corpus.train[0].samples).unwrap();
        let (expected, _) = adam_step(&theta0, &AdamState::new(&theta0), &g, &cfg).unwrap();
        assert_eq!(traj.checkpoints[1], expected);
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let (corpus, model, theta0) = setup(8);
        let order: Permutation = "3,1,4,0,7,2,6,5".parse().unwrap();
        let cfg = AdamConfig::default();
        let a = train_reference(&model, &corpus, &order, &cfg, &theta0).unwrap();
        let b = train_reference(&model, &corpus, &order, &cfg, &theta0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regression_validation_error_drops() {
        let (corpus, model, theta0) = setup(8);
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        let (traj, evals) =
            retrain_oracle(&model, &corpus, &Permutation::identity(8), &cfg, &theta0, &corpus.validation).unwrap();
        assert_eq!(evals.len(), 9);
        assert!(evals[8].loss < evals[0].loss);
        assert_eq!(evals[8], evaluate(&model, traj.final_params(), &corpus.validation).unwrap());
    }

    #[test]
    fn replay_reconstructs_checkpoints() {
        let (corpus, model, theta0) = setup(8);
        let traj = train_reference(&model, &corpus, &Permutation::identity(8), &AdamConfig::default(), &theta0).unwrap();
        assert!(traj.replay_error().unwrap() <= 1e-12);
        assert!(traj.states.iter().all(|s| s.v.values().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn oracle_under_reference_order_matches_reference() {
        let (corpus, model, theta0) = setup(4);
        let order: Permutation = "2,0,3,1".parse().unwrap();
        let cfg = AdamConfig::default();
        let reference = train_reference(&model, &corpus, &order, &cfg, &theta0).unwrap();
        let (oracle, _) = retrain_oracle(&model, &corpus, &order, &cfg, &theta0, &corpus.validation).unwrap();
        assert_eq!(reference, oracle);
        assert_eq!(&train_final(&model, &corpus, &order, &cfg, &theta0).unwrap(), reference.final_params());
    }

    #[test]
    fn wrong_order_length_is_rejected() {
        let (corpus, model, theta0) = setup(4);
        let r = train_reference(&model, &corpus, &Permutation::identity(3), &AdamConfig::default(), &theta0);
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn divergence_names_the_step() {
        let (corpus, model, _) = setup(4);
        let huge = ParamVector::from_values(model.layout(), vec![1e6; 5]).unwrap();
        let r = train_reference(&model, &corpus, &Permutation::identity(4), &AdamConfig::default(), &huge);
        assert!(matches!(r, Err(Error::Training { step: 0, .. })));
    }
}
