//! `L(θ) = ½·mean_s Σ_i (θ_i − x_si)²`, a model whose gradient is affine in
//! each coordinate. `∇²L` is the identity and every higher derivative is zero.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{DifferentiableModel, ModelMode};
use crate::data::{Pair, Samples};
use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, LayerSpec, Layout, ParamVector};

#[derive(Debug, Clone)]
pub struct QuadraticModel {
    layout: Arc<Layout>,
}

impl QuadraticModel {
    pub fn new(dim: usize) -> Self {
        Self {
            layout: Layout::new(vec![LayerSpec::new("theta", &[dim])]),
        }
    }

    fn pairs<'a>(&self, samples: &'a Samples) -> Result<&'a [Pair]> {
        let dim = self.layout.total_dim();
        match samples {
            Samples::Pairs(p) if p.is_empty() => Err(Error::Input("no samples to score".into())),
            Samples::Pairs(p) if p.iter().any(|s| s.x.len() != dim) => {
                Err(Error::Shape(format!("quadratic model expects {dim} features")))
            }
            Samples::Pairs(p) => Ok(p),
            Samples::Tokens(_) => Err(Error::Input("quadratic model needs regression samples".into())),
        }
    }
}

impl DifferentiableModel for QuadraticModel {
    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn mode(&self) -> ModelMode {
        ModelMode::Regression
    }

    fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = rng_from_seed(seed);
        let values = (0..self.layout.total_dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        ParamVector::from_values(&self.layout, values).expect("layout-sized values")
    }

    fn loss(&self, params: &ParamVector, samples: &Samples) -> Result<f64> {
        Ok(self.loss_and_grad(params, samples)?.0)
    }

    fn loss_and_grad(&self, params: &ParamVector, samples: &Samples) -> Result<(f64, ParamVector)> {
        let pairs = self.pairs(samples)?;
        let n = pairs.len() as f64;
        let mut grad = ParamVector::zeros(&self.layout);
        let mut loss = 0.0;
        for s in pairs {
            for ((g, &th), &x) in grad.values_mut().iter_mut().zip(params.values()).zip(&s.x) {
                let d = th - x;
                loss += 0.5 * d * d;
                *g += d;
            }
        }
        for g in grad.values_mut() {
            *g /= n;
        }
        Ok((loss / n, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::worst_relative_error;

    fn origin(dim: usize) -> Samples {
        Samples::Pairs(vec![Pair {
            x: vec![0.0; dim],
            y: 0.0,
        }])
    }

    #[test]
    fn half_theta_squared_has_gradient_theta() {
        let model = QuadraticModel::new(1);
        for th in [-2.5, 0.0, 0.3, 7.0] {
            let p = ParamVector::from_values(model.layout(), vec![th]).unwrap();
            let (loss, grad) = model.loss_and_grad(&p, &origin(1)).unwrap();
            assert_eq!(grad.values(), &[th]);
            assert_eq!(loss, 0.5 * th * th);
        }
    }

    #[test]
    fn gradient_is_mean_displacement() {
        let model = QuadraticModel::new(2);
        let data = Samples::Pairs(vec![
            Pair { x: vec![1.0, 2.0], y: 0.0 },
            Pair { x: vec![3.0, -2.0], y: 0.0 },
        ]);
        let p = ParamVector::from_values(model.layout(), vec![0.0, 1.0]).unwrap();
        let (_, grad) = model.loss_and_grad(&p, &data).unwrap();
        assert_eq!(grad.values(), &[-2.0, 1.0]);
        assert!(worst_relative_error(&model, &model.init_params(1), &data, 10, 0) < 1e-5);
    }
}
