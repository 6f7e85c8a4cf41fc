//! Parameter-vector arithmetic, seeded randomness and the projection kernels.

pub mod param;
pub mod projection;
pub mod rng;
pub mod stats;

pub use param::{guard_denominator, ElementwiseOp, LayerSpec, Layout, Operand, ParamVector};
pub use projection::{jl_min_dim, project, project_with, recover, recover_with, ProjectionSpec};
pub use rng::{indexed_seed, rng_from_seed, sub_seed, SeededRng};
