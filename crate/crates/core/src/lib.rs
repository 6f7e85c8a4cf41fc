//! Retraining-free estimation of Adam training trajectories under permuted
//! batch orders.

pub mod analysis;
pub mod codec;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod estimator;
pub mod model;
pub mod numerics;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
