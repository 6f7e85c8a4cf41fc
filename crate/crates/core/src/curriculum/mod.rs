//! Curriculum search over batch orders and difficulty-based baselines.

mod baselines;
mod ga;
mod pmx;

pub use baselines::{
    baseline_order, difficulty_scores, order_by_difficulty, DifficultyScore, DifficultyStrategy, ReferenceModels,
};
pub use ga::{estimated_fitness, ga_search, ga_search_with, GaConfig, GaResult, GenerationRecord};
pub use pmx::pmx_crossover;
