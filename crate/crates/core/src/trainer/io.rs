//! `OLT1` trajectory files.
//!
//! Layout (little-endian): magic `OLT1`, version u16, config digest, Adam
//! block (lr, β1, β2, ε), layer table, order, step count `T`, `θ_0`, then per
//! step `(θ_{t+1}, g_t, m_raw_t, v_raw_t, loss_t)`, then the SHA-256 trailer.

use std::fs;
use std::path::Path;

use super::{AdamConfig, AdamState, ReferenceTrajectory};
use crate::codec::{write_atomic, Decoder, Encoder, Tagged};
use crate::error::{Error, Result};
use crate::estimator::Permutation;
use crate::numerics::ParamVector;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"OLT1";
pub const TRAJECTORY_VERSION: u16 = 1;

pub fn encode_trajectory(traj: &ReferenceTrajectory, config_digest: &str) -> Result<Vec<u8>> {
    traj.validate()?;
    let mut enc = Encoder::new(TRAJECTORY_MAGIC, TRAJECTORY_VERSION);
    enc.str(config_digest);
    let c = &traj.config;
    for x in [c.lr, c.beta1, c.beta2, c.eps] {
        enc.f64(x);
    }
    enc.layout(traj.checkpoints[0].layout());
    enc.usizes(traj.order.as_slice());
    enc.usize(traj.num_steps());
    enc.f64s_fixed(traj.checkpoints[0].values());
    for t in 0..traj.num_steps() {
        enc.f64s_fixed(traj.checkpoints[t + 1].values());
        enc.f64s_fixed(traj.grads[t].values());
        enc.f64s_fixed(traj.states[t].m.values());
        enc.f64s_fixed(traj.states[t].v.values());
        enc.f64(traj.losses[t]);
    }
    Ok(enc.finish())
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Tagged<ReferenceTrajectory>> {
    let mut dec = Decoder::open(bytes, TRAJECTORY_MAGIC, TRAJECTORY_VERSION)?;
    let config_digest = dec.str()?;
    let config = AdamConfig {
        lr: dec.f64()?,
        beta1: dec.f64()?,
        beta2: dec.f64()?,
        eps: dec.f64()?,
    };
    let layout = dec.layout()?;
    let order = Permutation::new(dec.usizes()?).map_err(|e| Error::Corrupt(e.to_string()))?;
    let steps = dec.usize()?;
    if steps != order.len() {
        return Err(Error::Corrupt("step count disagrees with order".into()));
    }
    let dim = layout.total_dim();
    let read = |dec: &mut Decoder<'_>| ParamVector::from_values(&layout, dec.f64s_fixed(dim)?);
    let mut traj = ReferenceTrajectory {
        checkpoints: vec![read(&mut dec)?],
        grads: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        losses: Vec::with_capacity(steps),
        order,
        config,
    };
    for t in 0..steps {
        traj.checkpoints.push(read(&mut dec)?);
        traj.grads.push(read(&mut dec)?);
        let m = read(&mut dec)?;
        let v = read(&mut dec)?;
        traj.states.push(AdamState { m, v, t: t + 1 });
        traj.losses.push(dec.f64()?);
    }
    dec.expect_end()?;
    Ok(Tagged {
        value: traj,
        config_digest,
    })
}

pub fn save_trajectory(path: &Path, traj: &ReferenceTrajectory, config_digest: &str) -> Result<()> {
    write_atomic(path, &encode_trajectory(traj, config_digest)?)
}

pub fn load_trajectory(path: &Path) -> Result<Tagged<ReferenceTrajectory>> {
    decode_trajectory(&fs::read(path)?)
}
