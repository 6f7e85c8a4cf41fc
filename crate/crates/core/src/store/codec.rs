//! Per-layer compression of update-term residuals.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::numerics::{project_with, recover_with, Layout, ParamVector, ProjectionSpec};

/// Target dimensions tried for 2-D layers, largest first.
pub const DEFAULT_K_LADDER: [usize; 6] = [300, 200, 160, 80, 20, 8];

/// Largest `k` from the ladder with `2k ≤ width`.
pub fn select_k(width: usize, ladder: &[usize]) -> Option<usize> {
    ladder.iter().copied().filter(|&k| k >= 1 && 2 * k <= width).max()
}

/// How one layer is stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCodec {
    pub layer_id: String,
    pub rows: usize,
    pub cols: usize,
    pub projection: Option<ProjectionSpec>,
    /// Worst relative Frobenius error measured over all entries at build time.
    pub error_bound: f64,
    #[serde(skip)]
    pinv: OnceLock<Arc<DMatrix<f64>>>,
}

impl PartialEq for LayerCodec {
    fn eq(&self, other: &Self) -> bool {
        self.layer_id == other.layer_id
            && self.rows == other.rows
            && self.cols == other.cols
            && self.projection == other.projection
            && self.error_bound.to_bits() == other.error_bound.to_bits()
    }
}

impl LayerCodec {
    pub fn new(layer_id: String, rows: usize, cols: usize, projection: Option<ProjectionSpec>) -> Self {
        Self {
            layer_id,
            rows,
            cols,
            projection,
            error_bound: 0.0,
            pinv: OnceLock::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stored_len(&self) -> usize {
        match self.projection {
            Some(p) => self.rows * p.target_dim,
            None => self.len(),
        }
    }

    fn pinv(&self, spec: &ProjectionSpec) -> Result<Arc<DMatrix<f64>>> {
        if let Some(p) = self.pinv.get() {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(spec.pseudoinverse()?);
        Ok(Arc::clone(self.pinv.get_or_init(|| p)))
    }
}

/// Codecs for every layer of a layout.
pub fn plan_layers(layout: &Layout, ladder: &[usize], seed: u64) -> Result<Vec<LayerCodec>> {
    layout
        .layers()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (rows, cols) = spec.matrix_dims().unwrap_or((1, spec.len()));
            let projection = match spec.matrix_dims().and_then(|(_, c)| select_k(c, ladder)) {
                Some(k) => Some(ProjectionSpec::new(
                    cols,
                    k,
                    crate::numerics::indexed_seed(seed, "projection", &[i as u64]),
                )?),
                None => None,
            };
            Ok(LayerCodec::new(spec.id.clone(), rows, cols, projection))
        })
        .collect()
}

/// Projection matrices for the compressed layers, materialized once per build.
pub(crate) fn projection_matrices(codecs: &[LayerCodec]) -> Vec<Option<DMatrix<f64>>> {
    codecs.iter().map(|c| c.projection.map(|p| p.matrix())).collect()
}

pub(crate) fn encode_vector(enc: &mut Encoder, v: &ParamVector, codecs: &[LayerCodec], mats: &[Option<DMatrix<f64>>]) -> Result<()> {
    for (i, codec) in codecs.iter().enumerate() {
        let values = v.layer(i);
        match &mats[i] {
            Some(a) => {
                let m = DMatrix::from_row_slice(codec.rows, codec.cols, values);
                let mp = project_with(&m, a)?;
                for r in 0..mp.nrows() {
                    for c in 0..mp.ncols() {
                        enc.f64(mp[(r, c)]);
                    }
                }
            }
            None => enc.f64s_fixed(values),
        }
    }
    Ok(())
}

pub(crate) fn decode_vector(dec: &mut Decoder<'_>, layout: &Arc<Layout>, codecs: &[LayerCodec]) -> Result<ParamVector> {
    let mut out = ParamVector::zeros(layout);
    for (i, codec) in codecs.iter().enumerate() {
        let stored = dec.f64s_fixed(codec.stored_len())?;
        match &codec.projection {
            Some(spec) => {
                let mp = DMatrix::from_row_slice(codec.rows, spec.target_dim, &stored);
                let m = recover_with(&mp, &*codec.pinv(spec)?)?;
                let dst = out.layer_mut(i);
                for r in 0..codec.rows {
                    for c in 0..codec.cols {
                        dst[r * codec.cols + c] = m[(r, c)];
                    }
                }
            }
            None => out.layer_mut(i).copy_from_slice(&stored),
        }
    }
    Ok(out)
}

pub(crate) fn check_codecs(layout: &Layout, codecs: &[LayerCodec]) -> Result<()> {
    let ok = layout.layers().len() == codecs.len()
        && layout
            .layers()
            .iter()
            .zip(codecs)
            .all(|(l, c)| l.id == c.layer_id && l.len() == c.len() && c.projection.is_none_or(|p| p.source_dim == c.cols));
    if ok {
        Ok(())
    } else {
        Err(Error::Corrupt("layer codecs disagree with the stored layout".into()))
    }
}
