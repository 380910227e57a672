//! Conditional randomization tests for forced-choice conjoint experiments.

pub mod config;
pub mod design;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod glm;
pub mod hiernet;
pub mod inference;
pub mod randomization;
pub mod rng;
pub mod simulation;
pub mod statistics;

pub use config::{CoarseningConfig, ExperimentConfig};
pub use design::{apply_coarsening, load_dataset, CoarseningSpec, ConjointDataset, FactorSpec, Schema, Side};
pub use engine::{run_crt, run_crt_with, run_screen, CrtResult, EngineOptions, ScreenRow};
pub use error::{CrtError, Result};
pub use randomization::{RandomizationScheme, ResampleKind, ResamplePlan};
pub use statistics::{LambdaPolicy, StatisticKind, StatisticSpec};
