//! Least-squares regressor: linear, or one tanh hidden layer.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DifferentiableModel, ModelMode};
use crate::data::{Pair, Samples};
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, LayerSpec, Layout, ParamVector};

#[derive(Debug, Clone)]
pub struct MlpRegressor {
    dim: usize,
    hidden: Option<usize>,
    layout: Arc<Layout>,
}

impl MlpRegressor {
    /// `hidden = None` gives the linear model with layers `weight` `[1, dim]`
    /// and `bias` `[1]`.
    pub fn new(dim: usize, hidden: Option<usize>) -> Result<Self> {
        if dim == 0 || hidden == Some(0) {
            return Err(Error::Config("mlp dimensions must be positive".into()));
        }
        let layers = match hidden {
            None => vec![LayerSpec::new("weight", &[1, dim]), LayerSpec::new("bias", &[1])],
            Some(h) => vec![
                LayerSpec::new("hidden.weight", &[dim, h]),
                LayerSpec::new("hidden.bias", &[h]),
                LayerSpec::new("output.weight", &[h, 1]),
                LayerSpec::new("output.bias", &[1]),
            ],
        };
        Ok(Self {
            dim,
            hidden,
            layout: Layout::new(layers),
        })
    }

    fn pairs<'a>(&self, samples: &'a Samples) -> Result<&'a [Pair]> {
        let Samples::Pairs(pairs) = samples else {
            return Err(Error::Input("mlp needs regression samples".into()));
        };
        if pairs.is_empty() {
            return Err(Error::Input("no samples to score".into()));
        }
        if let Some(p) = pairs.iter().find(|p| p.x.len() != self.dim) {
            return Err(Error::Shape(format!(
                "sample has {} features, model expects {}",
                p.x.len(),
                self.dim
            )));
        }
        Ok(pairs)
    }

    /// Returns the prediction and fills `act` with hidden activations.
    fn predict(&self, p: &ParamVector, x: &[f64], act: &mut [f64]) -> f64 {
        match self.hidden {
            None => p.layer(1)[0] + p.layer(0).iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>(),
            Some(h) => {
                let w1 = p.layer(0);
                act.copy_from_slice(p.layer(1));
                for (i, &xi) in x.iter().enumerate() {
                    for (a, w) in act.iter_mut().zip(&w1[i * h..(i + 1) * h]) {
                        *a += xi * w;
                    }
                }
                for a in act.iter_mut() {
                    *a = a.tanh();
                }
                p.layer(3)[0] + act.iter().zip(p.layer(2)).map(|(a, w)| a * w).sum::<f64>()
            }
        }
    }
}

impl DifferentiableModel for MlpRegressor {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn mode(&self) -> ModelMode {
        ModelMode::Regression
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_from_seed(seed);
        let mut p = ParamVector::zeros(&self.layout);
        let scales: Vec<(usize, f64)> = match self.hidden {
            None => vec![(0, 0.1)],
            Some(h) => vec![(0, 1.0 / (self.dim as f64).sqrt()), (2, 1.0 / (h as f64).sqrt())],
        };
        for (layer, scale) in scales {
            for v in p.layer_mut(layer) {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        p
    }

    fn loss(&self, params: &ParamVector, samples: &Samples) -> Result<f64> {
        let pairs = self.pairs(samples)?;
        let mut act = vec![0.0; self.hidden.unwrap_or(0)];
        let sse: f64 = pairs
            .iter()
            .map(|s| {
                let r = self.predict(params, &s.x, &mut act) - s.y;
                r * r
            })
            .sum();
        Ok(sse / pairs.len() as f64)
    }

    fn loss_and_grad(&self, params: &ParamVector, samples: &Samples) -> Result<(f64, ParamVector)> {
        let pairs = self.pairs(samples)?;
        let n = pairs.len() as f64;
        let mut grad = ParamVector::zeros(&self.layout);
        let mut act = vec![0.0; self.hidden.unwrap_or(0)];
        let mut sse = 0.0;
        for s in pairs {
            let r = self.predict(params, &s.x, &mut act) - s.y;
            sse += r * r;
            let d = 2.0 * r / n;
            match self.hidden {
                None => {
                    for (g, xi) in grad.layer_mut(0).iter_mut().zip(&s.x) {
                        *g += d * xi;
                    }
                    grad.layer_mut(1)[0] += d;
                }
                Some(h) => {
                    let w2 = params.layer(2);
                    grad.layer_mut(3)[0] += d;
                    let dz: Vec<f64> = (0..h)
                        .map(|j| d * w2[j] * (1.0 - act[j] * act[j]))
                        .collect();
                    for (g, a) in grad.layer_mut(2).iter_mut().zip(&act) {
                        *g += d * a;
                    }
                    for (g, z) in grad.layer_mut(1).iter_mut().zip(&dz) {
                        *g += z;
                    }
                    let gw1 = grad.layer_mut(0);
                    for (i, &xi) in s.x.iter().enumerate() {
                        for (g, z) in gw1[i * h..(i + 1) * h].iter_mut().zip(&dz) {
                            *g += xi * z;
                        }
                    }
                }
            }
        }
        Ok((sse / n, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{regression_teacher, synth_regression, RegressionSpec};
    use crate::model::gradcheck::worst_relative_error;

    fn data() -> Samples {
        synth_regression(&RegressionSpec::new(5, 80, 3, 4)).unwrap().train[0]
            .samples
            .clone()
    }

    #[test]
    fn teacher_weights_are_a_stationary_point_without_noise() {
        let spec = RegressionSpec {
            noise: 0.0,
            ..RegressionSpec::new(3, 80, 4, 4)
        };
        let corpus = synth_regression(&spec).unwrap();
        let model = MlpRegressor::new(4, None).unwrap();
        let mut params = ParamVector::zeros(model.layout());
        params.layer_mut(0).copy_from_slice(&regression_teacher(3, 4));
        let (loss, grad) = model.loss_and_grad(&params, &corpus.train[0].samples).unwrap();
        assert!(loss < 1e-28, "{loss}");
        assert!(grad.max_abs() < 1e-14);
    }

    #[test]
    fn linear_gradient_matches_central_differences() {
        let model = MlpRegressor::new(3, None).unwrap();
        let params = model.init_params(1);
        assert!(worst_relative_error(&model, &params, &data(), 10, 2) < 1e-5);
    }

    #[test]
    fn hidden_gradient_matches_central_differences() {
        let model = MlpRegressor::new(3, Some(5)).unwrap();
        let params = model.init_params(4);
        assert!(worst_relative_error(&model, &params, &data(), 30, 3) < 1e-5);
    }

    #[test]
    fn feature_count_mismatch_is_a_shape_error() {
        let model = MlpRegressor::new(2, None).unwrap();
        let params = model.init_params(0);
        assert!(matches!(model.loss(&params, &data()), Err(Error::Shape(_))));
    }
}
