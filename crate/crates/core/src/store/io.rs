//! `OLS1` store files.
//!
//! Layout (little-endian): magic `OLS1`, version u16, config digest, step
//! count `T`, flags u8 (bit 0: second-order terms), gradient evaluation
//! count, Adam block, reference order, layer table, then per layer
//! `(projected u8, [source_dim, target_dim, seed], error_bound)`, the `T`
//! anchor term sets as raw f64, an entry table of `T²` records
//! `(offset u64, length u64, sha256[32])` into the blob section, the blob
//! section, and the SHA-256 trailer over everything before it.

use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use super::{codec::check_codecs, Entry, LayerCodec, UpdateTermStore, UpdateTerms};
use crate::codec::{write_atomic, Decoder, Encoder, Tagged, DIGEST_LEN};
use crate::error::{Error, Result};
use crate::estimator::Permutation;
use crate::numerics::{ParamVector, ProjectionSpec};
use crate::trainer::AdamConfig;

pub const STORE_MAGIC: &[u8; 4] = b"OLS1";
pub const STORE_VERSION: u16 = 1;

pub fn encode_store(store: &UpdateTermStore, config_digest: &str) -> Vec<u8> {
    let mut enc = Encoder::new(STORE_MAGIC, STORE_VERSION);
    enc.str(config_digest);
    enc.usize(store.steps);
    enc.u8(u8::from(store.second_order));
    enc.usize(store.gradient_evaluations);
    let c = &store.config;
    for x in [c.lr, c.beta1, c.beta2, c.eps] {
        enc.f64(x);
    }
    enc.usizes(store.order.as_slice());
    enc.layout(&store.layout);
    for codec in &store.codecs {
        match codec.projection {
            Some(p) => {
                enc.u8(1);
                enc.usize(p.source_dim);
                enc.usize(p.target_dim);
                enc.u64(p.seed);
            }
            None => enc.u8(0),
        }
        enc.f64(codec.error_bound);
    }
    for anchor in &store.anchors {
        for q in anchor.quantities() {
            enc.f64s_fixed(q.values());
        }
    }
    let mut offset = 0u64;
    for e in &store.entries {
        enc.u64(offset);
        enc.u64(e.blob.len() as u64);
        enc.bytes_fixed(&e.checksum);
        offset += e.blob.len() as u64;
    }
    for e in &store.entries {
        enc.bytes_fixed(&e.blob);
    }
    enc.finish()
}

pub fn decode_store(bytes: &[u8]) -> Result<Tagged<UpdateTermStore>> {
    let mut dec = Decoder::open(bytes, STORE_MAGIC, STORE_VERSION)?;
    let config_digest = dec.str()?;
    let steps = dec.usize()?;
    let second_order = match dec.u8()? {
        0 => false,
        1 => true,
        f => return Err(Error::Corrupt(format!("unknown store flags {f}"))),
    };
    let gradient_evaluations = dec.usize()?;
    let config = AdamConfig {
        lr: dec.f64()?,
        beta1: dec.f64()?,
        beta2: dec.f64()?,
        eps: dec.f64()?,
    };
    let order = Permutation::new(dec.usizes()?).map_err(|e| Error::Corrupt(e.to_string()))?;
    if order.len() != steps {
        return Err(Error::Corrupt("reference order length disagrees with step count".into()));
    }
    let layout = dec.layout()?;
    let mut codecs = Vec::with_capacity(layout.layers().len());
    for spec in layout.layers() {
        let (rows, cols) = spec.matrix_dims().unwrap_or((1, spec.len()));
        let projection = match dec.u8()? {
            0 => None,
            1 => Some(
                ProjectionSpec::new(dec.usize()?, dec.usize()?, dec.u64()?)
                    .map_err(|e| Error::Corrupt(e.to_string()))?,
            ),
            f => return Err(Error::Corrupt(format!("unknown layer codec {f}"))),
        };
        let mut codec = LayerCodec::new(spec.id.clone(), rows, cols, projection);
        codec.error_bound = dec.f64()?;
        codecs.push(codec);
    }
    check_codecs(&layout, &codecs)?;
    let dim = layout.total_dim();
    let quantities = if second_order { 3 } else { 2 };
    if steps.saturating_mul(quantities * dim * 8) > dec.remaining() {
        return Err(Error::Corrupt("anchor section exceeds file".into()));
    }
    let mut anchors = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut read = || ParamVector::from_values(&layout, dec.f64s_fixed(dim)?);
        let gamma = read()?;
        let dgamma = read()?;
        let d2gamma = if second_order { Some(read()?) } else { None };
        anchors.push(Arc::new(UpdateTerms { gamma, dgamma, d2gamma }));
    }
    let n_entries = steps * steps;
    if n_entries.saturating_mul(16 + DIGEST_LEN) > dec.remaining() {
        return Err(Error::Corrupt("entry table exceeds file".into()));
    }
    let mut table = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let offset = dec.u64()? as usize;
        let len = dec.u64()? as usize;
        let mut checksum = [0u8; DIGEST_LEN];
        checksum.copy_from_slice(dec.bytes_fixed(DIGEST_LEN)?);
        table.push((offset, len, checksum));
    }
    let blobs = dec.bytes_fixed(dec.remaining())?;
    let mut entries = Vec::with_capacity(n_entries);
    for (offset, len, checksum) in table {
        let blob = offset
            .checked_add(len)
            .and_then(|end| blobs.get(offset..end))
            .ok_or_else(|| Error::Corrupt("entry offset outside blob section".into()))?;
        entries.push(Entry {
            blob: blob.to_vec(),
            checksum,
            cache: OnceLock::new(),
        });
    }
    Ok(Tagged {
        value: UpdateTermStore {
            steps,
            order,
            layout,
            config,
            second_order,
            codecs,
            anchors,
            entries,
            gradient_evaluations,
        },
        config_digest,
    })
}

pub fn save_store(path: &Path, store: &UpdateTermStore, config_digest: &str) -> Result<()> {
    write_atomic(path, &encode_store(store, config_digest))
}

/// Verify and index a store file. Entries are decompressed on first access.
pub fn load_store(path: &Path) -> Result<Tagged<UpdateTermStore>> {
    decode_store(&fs::read(path)?)
}
