//! Differentiable models: loss, exact gradients and evaluation.

mod char_lm;
mod mlp;
mod quadratic;

pub use char_lm::CharLm;
pub use mlp::MlpRegressor;
pub use quadratic::QuadraticModel;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Corpus, Samples};
use crate::error::{Error, Result};
use crate::numerics::{Layout, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Regression,
    LanguageModel,
}

/// A deterministic model whose loss is a mean over batch tokens or samples.
pub trait DifferentiableModel: Send + Sync {
    fn layout(&self) -> &Arc<Layout>;

    fn mode(&self) -> ModelMode;

    fn init_params(&self, seed: u64) -> ParamVector;

    fn loss(&self, params: &ParamVector, samples: &Samples) -> Result<f64>;

    fn loss_and_grad(&self, params: &ParamVector, samples: &Samples) -> Result<(f64, ParamVector)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean cross-entropy in nats per token, or mean squared error.
    pub loss: f64,
    /// `exp(loss)` in LM mode.
    pub perplexity: Option<f64>,
    pub token_count: usize,
}

impl EvalResult {
    /// The performance metric `R`: perplexity for LMs, MSE otherwise. Lower is better.
    pub fn metric(&self) -> f64 {
        self.perplexity.unwrap_or(self.loss)
    }
}

fn check_params(model: &dyn DifferentiableModel, params: &ParamVector) -> Result<()> {
    if **params.layout() != **model.layout() {
        return Err(Error::Shape(
            "parameters do not match the model layout".into(),
        ));
    }
    Ok(())
}

/// Mean loss and exact gradient on one training batch.
pub fn loss_and_grad(
    model: &dyn DifferentiableModel,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_params(model, params)?;
    let (loss, grad) = model.loss_and_grad(params, &batch.samples)?;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient on batch {}",
            batch.id
        )));
    }
    Ok((loss, grad))
}

/// `R(params, dataset)`.
pub fn evaluate(
    model: &dyn DifferentiableModel,
    params: &ParamVector,
    dataset: &Samples,
) -> Result<EvalResult> {
    if dataset.is_empty() || dataset.token_count() == 0 {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    check_params(model, params)?;
    let loss = model.loss(params, dataset)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite evaluation loss".into()));
    }
    let perplexity = match model.mode() {
        ModelMode::LanguageModel => Some(loss.exp()),
        ModelMode::Regression => None,
    };
    Ok(EvalResult {
        loss,
        perplexity,
        token_count: dataset.token_count(),
    })
}

/// Built-in model selection, dimensioned against a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    CharLm {
        context: usize,
        embed: usize,
        hidden: usize,
    },
    Mlp {
        #[serde(default)]
        hidden: Option<usize>,
    },
    Quadratic,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::CharLm {
            context: 8,
            embed: 16,
            hidden: 64,
        }
    }
}

impl ModelSpec {
    pub fn build(&self, corpus: &Corpus) -> Result<Box<dyn DifferentiableModel>> {
        let input_dim = || match &corpus.validation {
            Samples::Pairs(p) => p
                .first()
                .map(|s| s.x.len())
                .ok_or_else(|| Error::Config("empty regression corpus".into())),
            Samples::Tokens(_) => Err(Error::Config(
                "regression model needs a regression corpus".into(),
            )),
        };
        match *self {
            ModelSpec::CharLm {
                context,
                embed,
                hidden,
            } => {
                if !corpus.is_language_model() {
                    return Err(Error::Config("char_lm needs a text corpus".into()));
                }
                Ok(Box::new(CharLm::new(corpus.vocab.size(), context, embed, hidden)?))
            }
            ModelSpec::Mlp { hidden } => Ok(Box::new(MlpRegressor::new(input_dim()?, hidden)?)),
            ModelSpec::Quadratic => Ok(Box::new(QuadraticModel::new(input_dim()?))),
        }
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::*;
    use crate::numerics::rng_from_seed;
    use rand::Rng;

    /// Central differences with step `1e-4·max(1, |θ_i|)` on `count` random
    /// coordinates; returns the worst relative error.
    pub fn worst_relative_error(
        model: &dyn DifferentiableModel,
        params: &ParamVector,
        samples: &Samples,
        count: usize,
        seed: u64,
    ) -> f64 {
        let (_, grad) = model.loss_and_grad(params, samples).unwrap();
        let mut rng = rng_from_seed(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            let i = rng.random_range(0..params.total_dim());
            let h = 1e-4 * params.values()[i].abs().max(1.0);
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let numeric =
                (model.loss(&plus, samples).unwrap() - model.loss(&minus, samples).unwrap()) / (2.0 * h);
            let analytic = grad.values()[i];
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / scale);
        }
        worst
    }
}
