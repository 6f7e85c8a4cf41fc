//! Precomputed update terms for every (checkpoint, batch) pair.
//!
//! The terms of the reference pair `(t, order[t])` are kept verbatim as the
//! step's anchor. Every other entry stores its residual against that anchor,
//! with 2-D layers compressed by a Gaussian projection along the column axis.

mod codec;
mod io;
mod terms;

pub use codec::{plan_layers, select_k, LayerCodec, DEFAULT_K_LADDER};
pub use io::{decode_store, encode_store, load_store, save_store, STORE_MAGIC, STORE_VERSION};
pub use terms::{assemble, difference_quotient, MomentSeeds, PairInputs, UpdateTerms, DIFFERENCE_GUARD};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Decoder, Encoder, DIGEST_LEN};
use crate::data::{Batch, Corpus};
use crate::error::{Error, Result};
use crate::estimator::Permutation;
use crate::model::{loss_and_grad, DifferentiableModel};
use crate::numerics::projection::relative_frobenius_error;
use crate::numerics::{Layout, ParamVector};
use crate::trainer::{AdamConfig, ReferenceTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreOptions {
    #[serde(default = "default_true")]
    pub second_order: bool,
    /// Empty disables compression.
    #[serde(default = "default_ladder")]
    pub k_ladder: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_ladder() -> Vec<usize> {
    DEFAULT_K_LADDER.to_vec()
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            second_order: true,
            k_ladder: default_ladder(),
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub(crate) struct Entry {
    blob: Vec<u8>,
    checksum: [u8; DIGEST_LEN],
    cache: OnceLock<Arc<UpdateTerms>>,
}

impl Entry {
    fn new(blob: Vec<u8>) -> Self {
        Self {
            checksum: sha256(&blob),
            blob,
            cache: OnceLock::new(),
        }
    }
}

#[derive(Debug)]
pub struct UpdateTermStore {
    pub(crate) steps: usize,
    pub(crate) order: Permutation,
    pub(crate) layout: Arc<Layout>,
    pub(crate) config: AdamConfig,
    pub(crate) second_order: bool,
    pub(crate) codecs: Vec<LayerCodec>,
    pub(crate) anchors: Vec<Arc<UpdateTerms>>,
    /// Row-major over `(t, l)`; anchor slots hold empty blobs.
    pub(crate) entries: Vec<Entry>,
    pub(crate) gradient_evaluations: usize,
}

/// Size accounting for a built store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoreStats {
    pub steps: usize,
    pub entries: usize,
    pub gradient_evaluations: usize,
    /// Bytes of term data actually kept (anchors plus residual blobs).
    pub stored_bytes: usize,
    /// Bytes an uncompressed T² store would need.
    pub raw_bytes: usize,
}

impl UpdateTermStore {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn order(&self) -> &Permutation {
        &self.order
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn adam_config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn includes_second_order(&self) -> bool {
        self.second_order
    }

    pub fn layer_codecs(&self) -> &[LayerCodec] {
        &self.codecs
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if *self.layout != *layout {
            return Err(Error::Shape("store layout does not match the model".into()));
        }
        Ok(())
    }

    pub fn stats(&self) -> StoreStats {
        let quantities = if self.second_order { 3 } else { 2 };
        let dim = self.layout.total_dim();
        StoreStats {
            steps: self.steps,
            entries: self.entries.len(),
            gradient_evaluations: self.gradient_evaluations,
            stored_bytes: self.anchors.len() * quantities * dim * 8
                + self.entries.iter().map(|e| e.blob.len()).sum::<usize>(),
            raw_bytes: self.steps * self.steps * quantities * dim * 8,
        }
    }

    /// Decompressed terms for `(t, l)`. Decoding happens once per entry.
    pub fn entry(&self, t: usize, l: usize) -> Result<Arc<UpdateTerms>> {
        if t >= self.steps || l >= self.steps {
            return Err(Error::Store(format!(
                "no entry for (t={t}, l={l}) in a store over {} steps",
                self.steps
            )));
        }
        let anchor = &self.anchors[t];
        if self.order.as_slice()[t] == l {
            return Ok(Arc::clone(anchor));
        }
        let entry = &self.entries[t * self.steps + l];
        if let Some(terms) = entry.cache.get() {
            return Ok(Arc::clone(terms));
        }
        if sha256(&entry.blob) != entry.checksum {
            return Err(Error::Corrupt(format!("checksum mismatch for entry (t={t}, l={l})")));
        }
        let terms = Arc::new(self.decode_residual(&entry.blob, anchor)?);
        Ok(Arc::clone(entry.cache.get_or_init(|| terms)))
    }

    fn decode_residual(&self, blob: &[u8], anchor: &UpdateTerms) -> Result<UpdateTerms> {
        let mut dec = Decoder::raw(blob);
        let mut next = |base: &ParamVector| -> Result<ParamVector> {
            let r = codec::decode_vector(&mut dec, &self.layout, &self.codecs)?;
            base.add(&r)
        };
        let gamma = next(&anchor.gamma)?;
        let dgamma = next(&anchor.dgamma)?;
        let d2gamma = match &anchor.d2gamma {
            Some(base) => Some(next(base)?),
            None => None,
        };
        dec.expect_end()?;
        Ok(UpdateTerms { gamma, dgamma, d2gamma })
    }
}

fn batch_gradient(
    model: &dyn DifferentiableModel,
    params: &ParamVector,
    batch: &Batch,
    counter: &AtomicUsize,
) -> Result<Vec<f64>> {
    counter.fetch_add(1, Ordering::Relaxed);
    Ok(loss_and_grad(model, params, batch)?.1.into_values())
}

/// Moment-derivative seeds in force before each reference step, plus the
/// difference quotients of the reference pairs.
pub struct DiagonalPass {
    pub seeds: Vec<MomentSeeds>,
    pub h: Vec<Vec<f64>>,
    pub h3: Vec<Vec<f64>>,
}

fn diagonal_pass(
    traj: &ReferenceTrajectory,
    model: &dyn DifferentiableModel,
    corpus: &Corpus,
    counter: &AtomicUsize,
) -> Result<DiagonalPass> {
    let steps = traj.num_steps();
    let quotients = (0..steps)
        .into_par_iter()
        .map(|t| {
            let batch = &corpus.train[traj.order.as_slice()[t]];
            let g1 = if t >= 1 { Some(batch_gradient(model, traj.theta(t - 1), batch, counter)?) } else { None };
            let g2 = if t >= 2 { Some(batch_gradient(model, traj.theta(t - 2), batch, counter)?) } else { None };
            Ok(terms::quotients(traj, t, traj.grads[t].values(), g1.as_deref(), g2.as_deref()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (h, h3): (Vec<_>, Vec<_>) = quotients.into_iter().unzip();
    let dim = traj.theta(0).total_dim();
    let mut seeds = Vec::with_capacity(steps);
    seeds.push(MomentSeeds::zeros(dim));
    for t in 0..steps.saturating_sub(1) {
        let next = seeds[t].advance(&traj.config, traj.grads[t].values(), &h[t], &h3[t]);
        seeds.push(next);
    }
    Ok(DiagonalPass { seeds, h, h3 })
}

/// Seeds along the reference run; `seeds[t]` applies to step `t`.
pub fn moment_seeds(traj: &ReferenceTrajectory, model: &dyn DifferentiableModel, corpus: &Corpus) -> Result<Vec<MomentSeeds>> {
    traj.validate()?;
    Ok(diagonal_pass(traj, model, corpus, &AtomicUsize::new(0))?.seeds)
}

/// Exact (uncompressed) terms for one pair.
pub fn compute_terms(
    traj: &ReferenceTrajectory,
    seeds: &[MomentSeeds],
    model: &dyn DifferentiableModel,
    batch: &Batch,
    t: usize,
    want_second_order: bool,
) -> Result<UpdateTerms> {
    traj.validate()?;
    if t >= traj.num_steps() || seeds.len() <= t {
        return Err(Error::Store(format!("trajectory has no data for step {t}")));
    }
    let counter = AtomicUsize::new(0);
    let g = batch_gradient(model, traj.theta(t), batch, &counter)?;
    let g1 = if t >= 1 { Some(batch_gradient(model, traj.theta(t - 1), batch, &counter)?) } else { None };
    let g2 = if t >= 2 { Some(batch_gradient(model, traj.theta(t - 2), batch, &counter)?) } else { None };
    let (h, h3) = terms::quotients(traj, t, &g, g1.as_deref(), g2.as_deref());
    let out = assemble(
        &traj.config,
        &traj.state_before(t),
        &seeds[t],
        traj.theta(t),
        &PairInputs { step: t, grad: &g, h: &h, h3: &h3 },
        want_second_order,
    );
    terms::check_finite(&out, t, batch.id)?;
    Ok(out)
}

/// Compute, compress and index update terms for all `T²` pairs.
pub fn build_store(
    traj: &ReferenceTrajectory,
    model: &dyn DifferentiableModel,
    corpus: &Corpus,
    options: &StoreOptions,
) -> Result<UpdateTermStore> {
    traj.validate()?;
    let steps = traj.num_steps();
    if corpus.num_batches() != steps {
        return Err(Error::Store(format!(
            "trajectory has {steps} steps but corpus has {} batches",
            corpus.num_batches()
        )));
    }
    let layout = Arc::clone(traj.theta(0).layout());
    if *layout != **model.layout() {
        return Err(Error::Shape("trajectory layout does not match the model".into()));
    }
    let counter = AtomicUsize::new(0);
    let diag = diagonal_pass(traj, model, corpus, &counter)?;
    let states: Vec<_> = (0..steps).map(|t| traj.state_before(t)).collect();
    let pair = |t: usize, g: &[f64], h: &[f64], h3: &[f64]| {
        assemble(
            &traj.config,
            &states[t],
            &diag.seeds[t],
            traj.theta(t),
            &PairInputs { step: t, grad: g, h, h3 },
            options.second_order,
        )
    };
    let order = traj.order.as_slice();
    let anchors = (0..steps)
        .map(|t| {
            let terms = pair(t, traj.grads[t].values(), &diag.h[t], &diag.h3[t]);
            terms::check_finite(&terms, t, order[t])?;
            Ok(Arc::new(terms))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut codecs = plan_layers(&layout, &options.k_ladder, options.seed)?;
    let mats = codec::projection_matrices(&codecs);
    let n_layers = codecs.len();

    // One column (all checkpoints, one batch) per task.
    let columns = (0..steps)
        .into_par_iter()
        .map(|l| -> Result<Vec<(Vec<u8>, Vec<f64>)>> {
            let batch = &corpus.train[l];
            let mut grads: Vec<Vec<f64>> = Vec::with_capacity(steps);
            for t in 0..steps {
                grads.push(if order[t] == l {
                    traj.grads[t].values().to_vec()
                } else {
                    batch_gradient(model, traj.theta(t), batch, &counter)?
                });
            }
            let mut out = Vec::with_capacity(steps);
            for t in 0..steps {
                if order[t] == l {
                    out.push((Vec::new(), vec![0.0; n_layers]));
                    continue;
                }
                let g1 = (t >= 1).then(|| grads[t - 1].as_slice());
                let g2 = (t >= 2).then(|| grads[t - 2].as_slice());
                let (h, h3) = terms::quotients(traj, t, &grads[t], g1, g2);
                let exact = pair(t, &grads[t], &h, &h3);
                terms::check_finite(&exact, t, l)?;
                let anchor = &anchors[t];
                let mut enc = Encoder::raw();
                for (q, base) in exact.quantities().zip(anchor.quantities()) {
                    codec::encode_vector(&mut enc, &q.sub(base)?, &codecs, &mats)?;
                }
                let blob = enc.into_inner();
                let mut dec = Decoder::raw(&blob);
                let mut errors = vec![0.0f64; n_layers];
                for (q, base) in exact.quantities().zip(anchor.quantities()) {
                    let approx = base.add(&codec::decode_vector(&mut dec, &layout, &codecs)?)?;
                    for (i, e) in errors.iter_mut().enumerate() {
                        *e = e.max(relative_frobenius_error(q.layer(i), approx.layer(i)));
                    }
                }
                out.push((blob, errors));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut slots: Vec<Option<Vec<u8>>> = (0..steps * steps).map(|_| None).collect();
    for (l, column) in columns.into_iter().enumerate() {
        for (t, (blob, errors)) in column.into_iter().enumerate() {
            for (c, e) in codecs.iter_mut().zip(errors) {
                c.error_bound = c.error_bound.max(e);
            }
            slots[t * steps + l] = Some(blob);
        }
    }
    let entries = slots
        .into_iter()
        .map(|s| Entry::new(s.expect("every slot filled")))
        .collect();
    let store = UpdateTermStore {
        steps,
        order: traj.order.clone(),
        layout,
        config: traj.config,
        second_order: options.second_order,
        codecs,
        anchors,
        entries,
        gradient_evaluations: counter.load(Ordering::Relaxed),
    };
    log::info!(
        "built store over {steps} steps with {} gradient evaluations",
        store.gradient_evaluations
    );
    Ok(store)
}
