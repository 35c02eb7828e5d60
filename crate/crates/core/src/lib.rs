//! Feature selection from minimum and averaged permutation Shapley
//! contributions.
//!
//! The pipeline: [`perm`] samples feature orderings, [`learners`] fits
//! models on growing prefixes, [`shapley`] records each feature's marginal
//! MSE reduction and its variance per ordering, and [`seltest`] turns those
//! into decisions (minimum-contribution threshold test, Max-p, and
//! partial-conjunction p-values). [`baselines`] and [`simbench`] provide
//! comparison selectors, synthetic data and metrics.

pub mod baselines;
pub mod data;
pub mod error;
pub mod learners;
pub mod perm;
pub mod rng;
pub mod seltest;
pub mod shapley;
pub mod simbench;
pub mod special;

pub use data::Dataset;
pub use error::{Error, ErrorClass, Result};
pub use learners::{EvalMode, FitSession, FittedModel, LearnerSpec, RidgeParams, TreeParams};
pub use perm::{order_statistics, sample_permutations, PermutationPlan};
pub use rng::RngStream;
pub use seltest::{FeatureTestRecord, PchtMethod};
pub use shapley::{ShapleyEngine, ShapleyStats, VIMatrix};
pub use simbench::{GroundTruth, Metrics, SimConfig, SimModel};
