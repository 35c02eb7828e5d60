use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{confusion_metrics, generate, jaccard_stability, GroundTruth, Metrics, SimConfig};
use crate::baselines::{gcm, lasso_select, loco, stability_select, BaselineResult, Selector, StabilityParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::perm::sample_permutations;
use crate::rng::{tags, RngStream};
use crate::seltest::{adjusted_pvalues, perm_pvalues, run_all_tests, screen_u, PchtMethod, Tuning};
use crate::shapley::{reduce_stats, ShapleyEngine, VIMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Minshap,
    Maxp,
    PchtBonferroni,
    PchtStouffer,
    PchtFisher,
    Loco,
    Gcm,
    Lasso,
    LocoStability,
    GcmStability,
    LassoStability,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Minshap,
        Method::Maxp,
        Method::PchtBonferroni,
        Method::PchtStouffer,
        Method::PchtFisher,
        Method::Loco,
        Method::Gcm,
        Method::Lasso,
        Method::LocoStability,
        Method::GcmStability,
        Method::LassoStability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Minshap => "minshap",
            Method::Maxp => "maxp",
            Method::PchtBonferroni => "pcht-bonferroni",
            Method::PchtStouffer => "pcht-stouffer",
            Method::PchtFisher => "pcht-fisher",
            Method::Loco => "loco",
            Method::Gcm => "gcm",
            Method::Lasso => "lasso",
            Method::LocoStability => "loco-stability",
            Method::GcmStability => "gcm-stability",
            Method::LassoStability => "lasso-stability",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }

    pub fn pcht(self) -> Option<PchtMethod> {
        match self {
            Method::PchtBonferroni => Some(PchtMethod::Bonferroni),
            Method::PchtStouffer => Some(PchtMethod::Stouffer),
            Method::PchtFisher => Some(PchtMethod::Fisher),
            _ => None,
        }
    }

    /// Whether the method reads the Shapley matrix rather than fitting its own models.
    pub fn uses_shapley(self) -> bool {
        matches!(self, Method::Minshap | Method::Maxp) || self.pcht().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sim: SimConfig,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub alpha: f64,
    pub k: usize,
    /// Screening range for u; defaults to `[ceil(0.6 K), K]`.
    pub u_range: Option<(usize, usize)>,
    pub learner: LearnerSpec,
    pub lasso_folds: usize,
    pub stability: StabilityParams,
}

impl BenchConfig {
    pub fn new(sim: SimConfig, methods: Vec<Method>, reps: usize) -> Self {
        Self {
            sim,
            methods,
            reps,
            alpha: 0.05,
            k: 50,
            u_range: None,
            learner: LearnerSpec::default(),
            lasso_folds: 5,
            stability: StabilityParams::default(),
        }
    }

    pub fn u_range(&self) -> (usize, usize) {
        self.u_range
            .unwrap_or_else(|| (((0.6 * self.k as f64).ceil() as usize).max(1), self.k))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.learner.validate()?;
        self.stability.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods requested".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be >= 1".into()));
        }
        let (lo, hi) = self.u_range();
        if lo == 0 || lo > hi || hi > self.k {
            return Err(Error::InvalidConfig(format!(
                "u range [{lo}, {hi}] is outside [1, {}]",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: Method,
    pub selected: Vec<usize>,
    pub metrics: Metrics,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub rep: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub reps_ok: usize,
    pub failures: usize,
    /// Metric name to (mean, sample sd) over successful reps.
    pub metrics: BTreeMap<String, (f64, f64)>,
    /// Mean pairwise Jaccard index of the selections; absent with fewer than two successful reps.
    pub jaccard: Option<f64>,
    pub runtime_mean_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: BenchConfig,
    pub seed: u64,
    /// PCHT level chosen on the tuning replicate, per PCHT method.
    pub tuned_u: BTreeMap<String, usize>,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<RepRecord>,
    pub failures: Vec<RepFailure>,
}

const METRIC_NAMES: [&str; 5] = ["accuracy", "f1", "type1", "type2", "fdr"];

fn metric_values(m: &Metrics) -> [f64; 5] {
    [m.accuracy, m.f1, m.type1, m.type2, m.fdr]
}

impl BenchResult {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn records_for(&self, method: Method) -> impl Iterator<Item = &RepRecord> {
        self.records.iter().filter(move |r| r.method == method)
    }

    /// One row per method: metric means and sds, Jaccard index and mean runtime.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["method".to_string(), "reps_ok".into(), "failures".into()];
        for m in METRIC_NAMES {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_sd"));
        }
        header.push("jaccard".into());
        header.push("runtime_mean_secs".into());
        w.write_record(&header)?;
        for s in &self.summaries {
            let mut row = vec![
                s.method.name().to_string(),
                s.reps_ok.to_string(),
                s.failures.to_string(),
            ];
            for m in METRIC_NAMES {
                let (mean, sd) = s.metrics.get(m).copied().unwrap_or((f64::NAN, f64::NAN));
                row.push(mean.to_string());
                row.push(sd.to_string());
            }
            row.push(s.jaccard.map_or(String::new(), |j| j.to_string()));
            row.push(s.runtime_mean_secs.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn shapley_matrix(data: &Dataset, cfg: &BenchConfig, rng: &RngStream) -> Result<VIMatrix> {
    let plan = sample_permutations(data.p(), cfg.k, &rng.child(tags::PERMUTATIONS, 0))?;
    ShapleyEngine::new(data, &cfg.learner, &rng.child(tags::FIT, 0))?.build(&plan)
}

/// Chooses u per requested PCHT method by maximizing F1 on an independent tuning replicate.
fn tune_u(cfg: &BenchConfig, rng: &RngStream) -> Result<BTreeMap<String, usize>> {
    let pcht: Vec<PchtMethod> = cfg.methods.iter().filter_map(|m| m.pcht()).collect();
    let mut out = BTreeMap::new();
    if pcht.is_empty() {
        return Ok(out);
    }
    let (data, truth) = generate(&cfg.sim, &rng.child(tags::FEATURES, 0))?;
    let m = shapley_matrix(&data, cfg, &rng.child(tags::METHOD, 0))?;
    let adjusted = (0..m.p())
        .map(|j| {
            let (z, p) = perm_pvalues(m.vi(j), m.sigma2(j))?;
            Ok(adjusted_pvalues(&p, &z))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = cfg.u_range();
    for method in pcht {
        let per_feature: Vec<Vec<f64>> = adjusted.iter().map(|a| a.get(method).to_vec()).collect();
        let u = screen_u(&per_feature, lo..=hi, Tuning::Truth(&truth), cfg.alpha)?;
        out.insert(method.name().to_string(), u);
    }
    Ok(out)
}

type Outcome = (Method, Result<(Vec<usize>, f64)>);

fn run_rep(cfg: &BenchConfig, tuned_u: &BTreeMap<String, usize>, data: &Dataset, rng: &RngStream) -> Vec<Outcome> {
    let mut out = Vec::with_capacity(cfg.methods.len());
    let mut shapley: Option<Result<(VIMatrix, f64)>> = None;
    for &method in &cfg.methods {
        let mrng = rng.child(tags::METHOD, method as u64);
        let result = if method.uses_shapley() {
            let built = shapley.get_or_insert_with(|| {
                let start = Instant::now();
                shapley_matrix(data, cfg, &rng.child(tags::METHOD, 100)).map(|m| (m, start.elapsed().as_secs_f64()))
            });
            match built {
                Ok((matrix, build_secs)) => {
                    let start = Instant::now();
                    let u = method.pcht().map_or(cfg.k, |p| tuned_u[p.name()]);
                    reduce_stats(matrix)
                        .and_then(|stats| run_all_tests(&stats, matrix, cfg.alpha, u))
                        .map(|records| {
                            let sel = records
                                .iter()
                                .filter(|r| match method {
                                    Method::Minshap => r.decisions.minshap,
                                    Method::Maxp => r.decisions.maxp,
                                    m => r.decisions.pcht(m.pcht().expect("pcht method")),
                                })
                                .map(|r| r.feature)
                                .collect();
                            (sel, *build_secs + start.elapsed().as_secs_f64())
                        })
                }
                Err(e) => Err(Error::InvalidState(format!("shapley matrix failed: {e}"))),
            }
        } else {
            run_baseline(
                method,
                data,
                &cfg.learner,
                cfg.alpha,
                cfg.lasso_folds,
                &cfg.stability,
                &mrng,
            )
            .map(|r| (r.selected, r.runtime_secs))
        };
        out.push((method, result));
    }
    out
}

/// Runs one baseline (or its stability-wrapped form) on `data`.
pub fn run_baseline(
    method: Method,
    data: &Dataset,
    learner: &LearnerSpec,
    alpha: f64,
    lasso_folds: usize,
    stability: &StabilityParams,
    rng: &RngStream,
) -> Result<BaselineResult> {
    let stable = |base: &Selector<'_>| -> Result<BaselineResult> {
        let mut r = stability_select(base, data, stability, rng)?;
        r.method = method.name().to_string();
        Ok(r)
    };
    match method {
        Method::Loco => loco(data, learner, alpha, rng),
        Method::Gcm => gcm(data, learner, alpha, rng),
        Method::Lasso => lasso_select(data, lasso_folds, rng),
        Method::LocoStability => stable(&|d, r| Ok(loco(d, learner, alpha, r)?.selected)),
        Method::GcmStability => stable(&|d, r| Ok(gcm(d, learner, alpha, r)?.selected)),
        Method::LassoStability => stable(&|d, r| Ok(lasso_select(d, lasso_folds, r)?.selected)),
        m => Err(Error::invalid(format!("{} is not a baseline", m.name()))),
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (m, sd)
}

fn summarize(method: Method, records: &[RepRecord], failures: usize) -> Result<MethodSummary> {
    let mine: Vec<&RepRecord> = records.iter().filter(|r| r.method == method).collect();
    let mut metrics = BTreeMap::new();
    if !mine.is_empty() {
        for (k, name) in METRIC_NAMES.iter().enumerate() {
            let v: Vec<f64> = mine.iter().map(|r| metric_values(&r.metrics)[k]).collect();
            metrics.insert(name.to_string(), mean_sd(&v));
        }
    }
    let jaccard = if mine.len() >= 2 {
        Some(jaccard_stability(
            &mine.iter().map(|r| r.selected.clone()).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };
    let runtime_mean_secs = if mine.is_empty() {
        0.0
    } else {
        mine.iter().map(|r| r.runtime_secs).sum::<f64>() / mine.len() as f64
    };
    Ok(MethodSummary {
        method,
        reps_ok: mine.len(),
        failures,
        metrics,
        jaccard,
        runtime_mean_secs,
    })
}

/// Runs every method on `reps` independent replicates of the configured design.
///
/// Replicate `r` draws its data and method randomness from the `r`-th
/// replication substream, so results do not depend on scheduling. Failed
/// (rep, method) pairs are reported and excluded from the summaries.
pub fn run_experiment(cfg: &BenchConfig, rng: &RngStream) -> Result<BenchResult> {
    cfg.validate()?;
    let mut methods = cfg.methods.clone();
    methods.sort_unstable();
    methods.dedup();
    let cfg = BenchConfig { methods, ..cfg.clone() };
    let tuned_u = tune_u(&cfg, &rng.child(tags::TUNING, 0))?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for rep in 0..cfg.reps {
        let rrng = rng.child(tags::REPLICATION, rep as u64);
        let (data, truth): (Dataset, GroundTruth) = generate(&cfg.sim, &rrng.child(tags::FEATURES, 0))?;
        for (method, outcome) in run_rep(&cfg, &tuned_u, &data, &rrng) {
            match outcome.and_then(|(sel, secs)| Ok((confusion_metrics(&sel, &truth, data.p())?, sel, secs))) {
                Ok((metrics, selected, runtime_secs)) => records.push(RepRecord {
                    rep,
                    method,
                    selected,
                    metrics,
                    runtime_secs,
                }),
                Err(e) => {
                    log::warn!("rep {rep} method {} failed: {e}", method.name());
                    failures.push(RepFailure {
                        rep,
                        method,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    let summaries = cfg
        .methods
        .iter()
        .map(|&m| summarize(m, &records, failures.iter().filter(|f| f.method == m).count()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchResult {
        config: cfg,
        seed: rng.key(),
        tuned_u,
        summaries,
        records,
        failures,
    })
}
