//! Synthetic benchmarks: data generators with known support, selection
//! metrics, and the replicated comparison driver.

mod experiment;
mod generate;
mod metrics;

pub use experiment::{
    run_baseline, run_experiment, BenchConfig, BenchResult, Method, MethodSummary, RepFailure, RepRecord,
};
pub use generate::{cholesky_factor, generate, SimConfig, SimModel};
pub use metrics::{confusion_metrics, jaccard_stability, GroundTruth, Metrics};
