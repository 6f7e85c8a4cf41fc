//! Experiment harness: estimator accuracy, memorization and generalization
//! under pinned positions, and timing.

mod absdiff;
mod heatmap;
mod timing;

pub use absdiff::{
    absdiff, absdiff_eval, estimated_metric, oracle_metric, random_baseline, AbsDiffReport, AbsDiffSetup, OrderResult,
};
pub use heatmap::{
    generalization_curves, memorization_heatmap, pinned_permutation, similarity_groups, slope_sign_agreement,
    split_by_mean, GeneralizationReport, Heatmap, PinningSetup, SimilarityGroups, Source, DEFAULT_CELL_SAMPLES,
};
pub use timing::{timing_compare, write_timing_csv, TimingRow, DEFAULT_N_VALUES};
