//! Versioned JSON report types.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use minshap::baselines::BaselineResult;
use minshap::simbench::BenchResult;
use minshap::FeatureTestRecord;
use serde::Serialize;

use crate::config::ConfigEcho;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub created_unix_secs: u64,
    pub wall_clock_secs: f64,
    pub config: ConfigEcho,
}

impl Metadata {
    pub fn new(config: ConfigEcho, wall_clock_secs: f64) -> Self {
        Self {
            tool: "minshap",
            version: env!("CARGO_PKG_VERSION"),
            created_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_clock_secs,
            config,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct NamedRecord {
    pub name: String,
    #[serde(flatten)]
    pub record: FeatureTestRecord,
}

#[derive(Debug, Serialize)]
pub struct MatrixDump {
    pub perms: Vec<Vec<usize>>,
    /// `vi[j][k]`: contribution of feature j in ordering k.
    pub vi: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct SelectionReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub n_eval: usize,
    pub features: Vec<String>,
    /// Partial-conjunction level used by each requested partial-conjunction test.
    pub u: BTreeMap<String, usize>,
    pub records: Vec<NamedRecord>,
    /// Selected feature names keyed by test or baseline name.
    pub selected: BTreeMap<String, Vec<String>>,
    pub baselines: BTreeMap<String, BaselineResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vi_matrix: Option<MatrixDump>,
}

#[derive(Debug, Serialize)]
pub struct FeatureStats {
    pub name: String,
    pub phi_mean: f64,
    pub phi_min: f64,
    pub sigma2_assoc: f64,
    pub argmin_perm: usize,
}

#[derive(Debug, Serialize)]
pub struct ShapleyReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub n_eval: usize,
    pub features: Vec<FeatureStats>,
}

#[derive(Debug, Serialize)]
pub struct TruthReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub model: &'static str,
    pub n: usize,
    pub p: usize,
    pub response: &'static str,
    pub support: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub metadata: Metadata,
    pub result: BenchResult,
}
