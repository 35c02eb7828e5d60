//! Command-line options, JSON config files and their merge into run settings.

use std::path::{Path, PathBuf};

use clap::Args;
use minshap::learners::EvalMode;
use minshap::simbench::{Method, SimConfig, SimModel};
use minshap::LearnerSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "MINSHAP_SEED";

/// Every option a subcommand may take. Flags and config-file keys share these names;
/// flags win over the file, the file wins over `MINSHAP_SEED` and built-in defaults.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Opts {
    /// JSON file supplying any subset of these options
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Input CSV (comma-separated, header row)
    #[arg(long, value_name = "PATH", help_heading = "Data")]
    pub input: Option<PathBuf>,
    /// Name of the response column
    #[arg(long, value_name = "NAME", help_heading = "Data")]
    pub response: Option<String>,
    /// Explicit orderings: one per line, feature names or 0-based indices
    #[arg(long, value_name = "PATH", help_heading = "Data")]
    pub perms_file: Option<PathBuf>,
    /// Read a matrix written by `shapley` instead of fitting models
    #[arg(long, value_name = "PATH", help_heading = "Data")]
    pub from_matrix: Option<PathBuf>,

    /// Learner kind: ridge or boosted-trees
    #[arg(long, value_name = "KIND", help_heading = "Model")]
    pub learner: Option<String>,
    /// Full learner specification (config file only)
    #[arg(skip)]
    pub learner_spec: Option<LearnerSpec>,
    /// Fraction of rows held out for evaluation (0 = plug-in)
    #[arg(long, value_name = "FRACTION", help_heading = "Model")]
    pub holdout: Option<f64>,
    /// refit or dropout
    #[arg(long, value_name = "MODE", help_heading = "Model")]
    pub eval_mode: Option<String>,

    /// Number of sampled orderings
    #[arg(long = "K", value_name = "K", help_heading = "Testing")]
    #[serde(rename = "K")]
    pub k: Option<usize>,
    /// Per-feature significance level
    #[arg(long, value_name = "ALPHA", help_heading = "Testing")]
    pub alpha: Option<f64>,
    /// minshap, maxp, pcht-bonferroni, pcht-stouffer, pcht-fisher or all (comma-separated)
    #[arg(long, value_name = "TESTS", help_heading = "Testing")]
    pub test: Option<String>,
    /// Fixed partial-conjunction level
    #[arg(long, value_name = "U", help_heading = "Testing")]
    pub u: Option<usize>,
    /// Screening range LO:HI for the partial-conjunction level
    #[arg(long, value_name = "LO:HI", help_heading = "Testing")]
    pub u_range: Option<String>,
    /// Baselines to run next to the tests (loco, gcm, lasso, *-stability)
    #[arg(long, value_name = "METHODS", help_heading = "Testing")]
    pub baselines: Option<String>,
    /// Include the full VI matrix in the report
    #[arg(long, help_heading = "Testing")]
    #[serde(default)]
    pub dump_matrix: bool,

    /// Simulation model: a, b, c, d, chain, null, highdim-linear, highdim-nonlinear
    #[arg(long, value_name = "MODEL", help_heading = "Simulation")]
    pub model: Option<String>,
    /// Rows per simulated dataset
    #[arg(long, value_name = "N", help_heading = "Simulation")]
    pub n: Option<usize>,
    /// Number of features
    #[arg(long, value_name = "P", help_heading = "Simulation")]
    pub p: Option<usize>,
    /// Copies of the model's significant-feature pattern
    #[arg(long, value_name = "R", help_heading = "Simulation")]
    pub repeat: Option<usize>,
    /// Benchmark replicates
    #[arg(long, value_name = "REPS", help_heading = "Simulation")]
    pub reps: Option<usize>,
    /// Benchmark methods (comma-separated)
    #[arg(long, value_name = "METHODS", help_heading = "Simulation")]
    pub methods: Option<String>,

    /// Root seed (falls back to MINSHAP_SEED, then 0)
    #[arg(long, value_name = "SEED", help_heading = "Run")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, value_name = "W", help_heading = "Run")]
    pub workers: Option<usize>,
    /// Output path (report JSON, matrix CSV, data CSV or bench CSV)
    #[arg(long, value_name = "PATH", help_heading = "Run")]
    pub output: Option<PathBuf>,
    /// Secondary output: stats JSON for `shapley`, truth JSON for `simulate`, summary JSON for `bench`
    #[arg(long, value_name = "PATH", help_heading = "Run")]
    pub summary: Option<PathBuf>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),*) => {
        Opts { $($f: $a.$f.or($b.$f),)* dump_matrix: $a.dump_matrix || $b.dump_matrix }
    };
}

impl Opts {
    /// Loads the config file if one is named and fills in every option the flags left unset.
    pub fn resolve(self) -> Result<Opts, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Opts =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let me = self;
        Ok(
            prefer!(me, file; config, input, response, perms_file, from_matrix, learner, learner_spec,
            holdout, eval_mode, k, alpha, test, u, u_range, baselines, model, n, p, repeat, reps,
            methods, seed, workers, output, summary),
        )
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        let a = self.alpha.unwrap_or(0.05);
        if a > 0.0 && a <= 1.0 {
            Ok(a)
        } else {
            Err(CliError::Config(format!("--alpha must lie in (0, 1], got {a}")))
        }
    }

    pub fn k(&self) -> Result<usize, CliError> {
        match self.k.unwrap_or(50) {
            0 => Err(CliError::Config("--K must be >= 1".into())),
            k => Ok(k),
        }
    }

    pub fn learner(&self) -> Result<LearnerSpec, CliError> {
        let mut spec = match (&self.learner_spec, &self.learner) {
            (Some(s), None) => s.clone(),
            (Some(s), Some(kind)) if s.learner.kind() == kind => s.clone(),
            (_, Some(kind)) => LearnerSpec::from_kind(kind)?,
            (None, None) => LearnerSpec::default(),
        };
        if let Some(mode) = &self.eval_mode {
            spec.eval_mode = match mode.as_str() {
                "refit" => EvalMode::Refit,
                "dropout" => EvalMode::Dropout,
                other => return Err(CliError::Config(format!("unknown eval mode {other:?}"))),
            };
        }
        if let Some(h) = self.holdout {
            spec.holdout_fraction = h;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn u_range(&self, k: usize) -> Result<Option<(usize, usize)>, CliError> {
        let Some(text) = &self.u_range else {
            return Ok(None);
        };
        let bad = || CliError::Config(format!("--u-range must look like LO:HI, got {text:?}"));
        let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || lo > hi || hi > k {
            return Err(CliError::Config(format!(
                "--u-range {lo}:{hi} must satisfy 1 <= LO <= HI <= K = {k}"
            )));
        }
        Ok(Some((lo, hi)))
    }

    pub fn fixed_u(&self, k: usize) -> Result<Option<usize>, CliError> {
        match self.u {
            Some(u) if u == 0 || u > k => Err(CliError::Config(format!("--u must lie in [1, K = {k}], got {u}"))),
            u => Ok(u),
        }
    }

    pub fn tests(&self) -> Result<Vec<Method>, CliError> {
        let text = self.test.as_deref().unwrap_or("all");
        let mut out = Vec::new();
        for t in list(text) {
            if t == "all" {
                out.extend([
                    Method::Minshap,
                    Method::Maxp,
                    Method::PchtBonferroni,
                    Method::PchtStouffer,
                    Method::PchtFisher,
                ]);
            } else {
                let m = Method::parse(t)?;
                if !m.uses_shapley() {
                    return Err(CliError::Config(format!("{t:?} is a baseline; pass it to --baselines")));
                }
                out.push(m);
            }
        }
        finish(out, "--test")
    }

    pub fn baselines(&self) -> Result<Vec<Method>, CliError> {
        let Some(text) = &self.baselines else {
            return Ok(Vec::new());
        };
        let mut out = Vec::new();
        for t in list(text) {
            let m = Method::parse(t)?;
            if m.uses_shapley() {
                return Err(CliError::Config(format!("{t:?} is a Shapley test; pass it to --test")));
            }
            out.push(m);
        }
        finish(out, "--baselines")
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        let text = self.methods.as_deref().unwrap_or("minshap,maxp");
        let out = list(text).map(Method::parse).collect::<Result<Vec<_>, _>>()?;
        finish(out, "--methods")
    }

    pub fn sim(&self, seed: u64) -> Result<SimConfig, CliError> {
        let model = self
            .model
            .as_deref()
            .ok_or_else(|| CliError::Config("--model is required".into()))?;
        let mut cfg = SimConfig::new(SimModel::parse(model)?, self.n.unwrap_or(1000), seed);
        if let Some(p) = self.p {
            cfg = cfg.with_p(p);
        }
        if let Some(r) = self.repeat {
            cfg = cfg.with_repeat(r);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn require_output(&self) -> Result<&Path, CliError> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::Config("--output is required".into()))
    }
}

fn list(text: &str) -> impl Iterator<Item = &str> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn finish(mut v: Vec<Method>, flag: &str) -> Result<Vec<Method>, CliError> {
    v.sort_unstable();
    v.dedup();
    if v.is_empty() {
        return Err(CliError::Config(format!("{flag} names no methods")));
    }
    Ok(v)
}

/// Echo of the resolved settings, stored in every report.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perms_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from_matrix: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerSpec>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tests: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_range: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<&'static str>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    pub seed: u64,
    pub workers: usize,
}
