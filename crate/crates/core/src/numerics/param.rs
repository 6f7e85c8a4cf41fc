//! Flat parameter vectors with a named per-layer layout.
//!
//! Every quantity the estimator touches (checkpoints, gradients, moment
//! accumulators, update terms) lives in the same coordinate system, so all
//! arithmetic here is elementwise over a single contiguous buffer.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub id: String,
    pub shape: Vec<usize>,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            id: id.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(rows, cols)` for 2-D layers.
    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [rows, cols] => Some((*rows, *cols)),
            _ => None,
        }
    }
}

/// Ordered layer table shared by every vector of one model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(layers: Vec<LayerSpec>) -> Arc<Self> {
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for layer in &layers {
            offsets.push(total);
            total += layer.len();
        }
        Arc::new(Self {
            layers,
            offsets,
            total,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn range(&self, index: usize) -> std::ops::Range<usize> {
        let start = self.offsets[index];
        start..start + self.layers[index].len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Division whose denominator magnitude is floored at `eps`.
    DivGuarded { eps: f64 },
    /// Clamp `a` to `[-b, b]`.
    Clip,
}

#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Vector(&'a ParamVector),
    Scalar(f64),
}

/// Replace a denominator whose magnitude is below `eps` by `sign(den)·eps`,
/// with the sign of zero taken as positive.
#[inline]
pub fn guard_denominator(den: f64, eps: f64) -> f64 {
    if den.abs() < eps {
        if den < 0.0 {
            -eps
        } else {
            eps
        }
    } else {
        den
    }
}

#[derive(Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamVector")
            .field("layers", &self.layout.layers().len())
            .field("total_dim", &self.values.len())
            .finish()
    }
}

impl ParamVector {
    pub fn zeros(layout: &Arc<Layout>) -> Self {
        Self {
            layout: Arc::clone(layout),
            values: vec![0.0; layout.total_dim()],
        }
    }

    pub fn from_values(layout: &Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_dim() {
            return Err(Error::Shape(format!(
                "expected {} values for layout, got {}",
                layout.total_dim(),
                values.len()
            )));
        }
        Ok(Self {
            layout: Arc::clone(layout),
            values,
        })
    }

    /// Single-layer vector, handy for tests and scalar models.
    pub fn from_slice(id: &str, values: &[f64]) -> Self {
        let layout = Layout::new(vec![LayerSpec::new(id, &[values.len()])]);
        Self {
            layout,
            values: values.to_vec(),
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn total_dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.values[self.layout.range(index)]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut [f64] {
        let range = self.layout.range(index);
        &mut self.values[range]
    }

    pub fn is_conformable(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_conformable(&self, other: &ParamVector) -> Result<()> {
        if self.is_conformable(other) {
            Ok(())
        } else {
            Err(Error::Shape(
                "parameter vectors have different layer layouts".into(),
            ))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Input(format!(
                "{what} has non-finite value at coordinate {i}"
            ))),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            layout: Arc::clone(&self.layout),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_conformable(other)?;
        Ok(Self {
            layout: Arc::clone(&self.layout),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<Self> {
        if self.values.iter().any(|v| v.is_nan()) {
            return Err(Error::Input("NaN in left operand".into()));
        }
        let apply = move |a: f64, b: f64| match op {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::DivGuarded { eps } => a / guard_denominator(b, eps),
            ElementwiseOp::Clip => a.clamp(-b.abs(), b.abs()),
        };
        if let ElementwiseOp::DivGuarded { eps } = op {
            if !(eps > 0.0) {
                return Err(Error::Input(format!("division guard must be > 0, got {eps}")));
            }
        }
        match rhs {
            Operand::Scalar(b) => {
                if b.is_nan() {
                    return Err(Error::Input("NaN scalar operand".into()));
                }
                Ok(self.map(|a| apply(a, b)))
            }
            Operand::Vector(other) => {
                if other.values.iter().any(|v| v.is_nan()) {
                    return Err(Error::Input("NaN in right operand".into()));
                }
                self.zip_map(other, apply)
            }
        }
    }

    pub fn add(&self, other: &ParamVector) -> Result<Self> {
        self.elementwise(ElementwiseOp::Add, Operand::Vector(other))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<Self> {
        self.elementwise(ElementwiseOp::Sub, Operand::Vector(other))
    }

    pub fn mul(&self, other: &ParamVector) -> Result<Self> {
        self.elementwise(ElementwiseOp::Mul, Operand::Vector(other))
    }

    pub fn div_guarded(&self, other: &ParamVector, eps: f64) -> Result<Self> {
        self.elementwise(ElementwiseOp::DivGuarded { eps }, Operand::Vector(other))
    }

    pub fn clip(&self, bound: f64) -> Result<Self> {
        self.elementwise(ElementwiseOp::Clip, Operand::Scalar(bound))
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check_conformable(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }
}
