//! Python bindings: datasets, learners, Shapley matrices, the tests, baselines and the benchmark.
//!
//! Structured results (records, statistics, benchmark summaries) are returned as plain
//! dicts and lists built from their JSON form.

use minshap::baselines::StabilityParams;
use minshap::learners::EvalMode;
use minshap::rng::tags;
use minshap::seltest::{self, run_all_tests};
use minshap::shapley::reduce_stats;
use minshap::simbench::{self, BenchConfig, GroundTruth, Method, SimConfig, SimModel};
use minshap::{ErrorClass, LearnerSpec, PchtMethod, PermutationPlan, RngStream, ShapleyEngine};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(
    minshap,
    MinShapError,
    PyException,
    "Raised for every library failure; `.code` is 2 config, 3 data, 4 numerical."
);

fn err(e: minshap::Error) -> PyErr {
    let code = match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    };
    Python::with_gil(|py| {
        let exc = MinShapError::new_err(e.to_string());
        // attaching an attribute to a fresh exception cannot fail in practice
        let _ = exc.value(py).setattr("code", code);
        exc
    })
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A feature matrix with named columns and a response.
#[pyclass(module = "minshap", frozen)]
#[derive(Clone)]
pub struct Dataset {
    inner: minshap::Dataset,
}

#[pymethods]
impl Dataset {
    /// `rows[i][j]` is feature j of observation i; names default to X1..Xp.
    #[new]
    #[pyo3(signature = (rows, response, names=None))]
    fn new(rows: Vec<Vec<f64>>, response: Vec<f64>, names: Option<Vec<String>>) -> PyResult<Self> {
        let base = minshap::Dataset::from_rows(&rows, response).map_err(err)?;
        let inner = match names {
            None => base,
            Some(names) => {
                minshap::Dataset::new(base.columns().to_vec(), names, base.response().to_vec()).map_err(err)?
            }
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read_csv(path: &str, response: &str) -> PyResult<Self> {
        Ok(Self {
            inner: minshap::Dataset::read_csv(path, response).map_err(err)?,
        })
    }

    fn write_csv(&self, path: &str, response_name: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.inner.write_csv(file, response_name).map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    #[getter]
    fn response(&self) -> Vec<f64> {
        self.inner.response().to_vec()
    }

    fn column(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.p() {
            return Err(err(minshap::Error::InvalidArgument(format!("column {j} out of range"))));
        }
        Ok(self.inner.column(j).to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// Learner choice plus evaluation mode and held-out fraction.
#[pyclass(module = "minshap", frozen)]
#[derive(Clone)]
pub struct Learner {
    inner: LearnerSpec,
}

#[pymethods]
impl Learner {
    /// `kind` is "ridge" or "boosted-trees"; `hyperparams` is a JSON object string.
    #[new]
    #[pyo3(signature = (kind="boosted-trees", eval_mode="refit", holdout=0.0, hyperparams=None))]
    fn new(kind: &str, eval_mode: &str, holdout: f64, hyperparams: Option<&str>) -> PyResult<Self> {
        let mode = match eval_mode {
            "refit" => EvalMode::Refit,
            "dropout" => EvalMode::Dropout,
            other => {
                return Err(err(minshap::Error::InvalidConfig(format!(
                    "unknown eval mode {other:?}"
                ))))
            }
        };
        let spec = match hyperparams {
            None => LearnerSpec::from_kind(kind).map_err(err)?,
            Some(hp) => {
                let json = format!(r#"{{"kind":{},"hyperparams":{hp}}}"#, serde_json::Value::from(kind));
                serde_json::from_str(&json).map_err(|e| err(e.into()))?
            }
        };
        let spec = spec.with_eval_mode(mode).with_holdout(holdout);
        spec.validate().map_err(err)?;
        Ok(Self { inner: spec })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| err(e.into()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(|e| err(e.into()))?,
        })
    }

    fn __repr__(&self) -> PyResult<String> {
        Ok(format!("Learner({})", self.to_json()?))
    }
}

/// Per-feature, per-ordering contributions and their variances.
#[pyclass(module = "minshap", frozen)]
#[derive(Clone)]
pub struct VIMatrix {
    inner: minshap::VIMatrix,
    names: Vec<String>,
}

#[pymethods]
impl VIMatrix {
    /// `vi[j][k]`: contribution of feature j in ordering k.
    #[getter]
    fn vi(&self) -> Vec<Vec<f64>> {
        (0..self.inner.p()).map(|j| self.inner.vi(j).to_vec()).collect()
    }

    #[getter]
    fn sigma2(&self) -> Vec<Vec<f64>> {
        (0..self.inner.p()).map(|j| self.inner.sigma2(j).to_vec()).collect()
    }

    #[getter]
    fn perms(&self) -> Vec<Vec<usize>> {
        self.inner.plan().perms().to_vec()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.names.clone()
    }

    #[getter]
    fn n_eval(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// Mean and minimum contribution per feature.
    fn stats(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &reduce_stats(&self.inner).map_err(err)?)
    }

    /// Runs every test; partial-conjunction decisions use level `u` (default K).
    #[pyo3(signature = (alpha=0.05, u=None))]
    fn test(&self, py: Python<'_>, alpha: f64, u: Option<usize>) -> PyResult<PyObject> {
        let stats = reduce_stats(&self.inner).map_err(err)?;
        let records = run_all_tests(&stats, &self.inner, alpha, u.unwrap_or(self.inner.k())).map_err(err)?;
        to_py(py, &records)
    }

    /// Selected feature names per test at level `alpha`.
    #[pyo3(signature = (alpha=0.05, u=None))]
    fn select(&self, alpha: f64, u: Option<usize>) -> PyResult<std::collections::BTreeMap<String, Vec<String>>> {
        let stats = reduce_stats(&self.inner).map_err(err)?;
        let records = run_all_tests(&stats, &self.inner, alpha, u.unwrap_or(self.inner.k())).map_err(err)?;
        let pick = |f: &dyn Fn(&seltest::Decisions) -> bool| -> Vec<String> {
            records
                .iter()
                .filter(|r| f(&r.decisions))
                .map(|r| self.names[r.feature].clone())
                .collect()
        };
        Ok([
            ("minshap", pick(&|d| d.minshap)),
            ("maxp", pick(&|d| d.maxp)),
            ("pcht-bonferroni", pick(&|d| d.bonferroni)),
            ("pcht-stouffer", pick(&|d| d.stouffer)),
            ("pcht-fisher", pick(&|d| d.fisher)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect())
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.inner.write_csv(file, &self.names).map_err(err)
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| err(e.into()))?;
        let (inner, names) = minshap::VIMatrix::read_csv(file).map_err(err)?;
        Ok(Self { inner, names })
    }

    fn __repr__(&self) -> String {
        format!("VIMatrix(p={}, K={})", self.inner.p(), self.inner.k())
    }
}

/// Builds the matrix over `perms` if given, otherwise over K sampled orderings.
#[pyfunction]
#[pyo3(signature = (data, learner, k=50, seed=0, perms=None))]
fn shapley_matrix(
    py: Python<'_>,
    data: &Dataset,
    learner: &Learner,
    k: usize,
    seed: u64,
    perms: Option<Vec<Vec<usize>>>,
) -> PyResult<VIMatrix> {
    let (d, spec) = (&data.inner, &learner.inner);
    let inner = py
        .allow_threads(|| {
            let rng = RngStream::new(seed)
                .child(tags::REPLICATION, 0)
                .child(tags::METHOD, 100);
            let plan = match perms {
                Some(p) => PermutationPlan::explicit(d.p(), p)?,
                None => minshap::sample_permutations(d.p(), k, &rng.child(tags::PERMUTATIONS, 0))?,
            };
            ShapleyEngine::new(d, spec, &rng.child(tags::FIT, 0))?.build(&plan)
        })
        .map_err(err)?;
    Ok(VIMatrix {
        inner,
        names: d.feature_names().to_vec(),
    })
}

/// K orderings of 0..p drawn from `seed`.
#[pyfunction]
fn sample_permutations(p: usize, k: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    Ok(minshap::sample_permutations(p, k, &RngStream::new(seed))
        .map_err(err)?
        .perms()
        .to_vec())
}

#[pyfunction]
fn minshap_threshold(sigma2: f64, alpha: f64) -> PyResult<f64> {
    seltest::minshap_threshold(sigma2, alpha).map_err(err)
}

/// Smallest K with `(s/(s+1))^K <= eps`.
#[pyfunction]
fn recommend_k(s: usize, eps: f64) -> PyResult<usize> {
    seltest::recommend_k(s, eps).map_err(err)
}

/// Raw partial-conjunction p-value at level `u` for "bonferroni", "stouffer" or "fisher".
#[pyfunction]
fn pcht_pvalue(method: &str, pvals: Vec<f64>, absz: Vec<f64>, u: usize) -> PyResult<f64> {
    let m = PchtMethod::ALL
        .into_iter()
        .find(|m| m.name() == method)
        .ok_or_else(|| err(minshap::Error::InvalidConfig(format!("unknown method {method:?}"))))?;
    seltest::pcht_pvalue(m, &pvals, &absz, u).map_err(err)
}

/// Draws a simulated dataset; returns it with the true support (0-based indices).
#[pyfunction]
#[pyo3(signature = (model, n, seed=0, p=None, repeat=None))]
fn simulate(
    model: &str,
    n: usize,
    seed: u64,
    p: Option<usize>,
    repeat: Option<usize>,
) -> PyResult<(Dataset, Vec<usize>)> {
    let cfg = sim_config(model, n, seed, p, repeat)?;
    let rng = RngStream::new(seed)
        .child(tags::REPLICATION, 0)
        .child(tags::FEATURES, 0);
    let (inner, truth) = simbench::generate(&cfg, &rng).map_err(err)?;
    Ok((Dataset { inner }, truth.support))
}

fn sim_config(model: &str, n: usize, seed: u64, p: Option<usize>, repeat: Option<usize>) -> PyResult<SimConfig> {
    let mut cfg = SimConfig::new(SimModel::parse(model).map_err(err)?, n, seed);
    if let Some(p) = p {
        cfg = cfg.with_p(p);
    }
    if let Some(r) = repeat {
        cfg = cfg.with_repeat(r);
    }
    Ok(cfg)
}

/// Runs one baseline ("loco", "gcm", "lasso" or a "-stability" variant); returns its result dict.
#[pyfunction]
#[pyo3(signature = (method, data, learner=None, alpha=0.05, seed=0))]
fn baseline(
    py: Python<'_>,
    method: &str,
    data: &Dataset,
    learner: Option<&Learner>,
    alpha: f64,
    seed: u64,
) -> PyResult<PyObject> {
    let m = Method::parse(method).map_err(err)?;
    let spec = learner.map(|l| l.inner.clone()).unwrap_or_default();
    let d = &data.inner;
    let rng = RngStream::new(seed)
        .child(tags::REPLICATION, 0)
        .child(tags::METHOD, m as u64);
    let result = py
        .allow_threads(|| simbench::run_baseline(m, d, &spec, alpha, 5, &StabilityParams::default(), &rng))
        .map_err(err)?;
    to_py(py, &result)
}

/// Confusion-matrix metrics of a selection against the true support.
#[pyfunction]
fn confusion_metrics(py: Python<'_>, selected: Vec<usize>, support: Vec<usize>, p: usize) -> PyResult<PyObject> {
    let m = simbench::confusion_metrics(&selected, &GroundTruth { support }, p).map_err(err)?;
    to_py(py, &m)
}

#[pyfunction]
fn jaccard_stability(sets: Vec<Vec<usize>>) -> PyResult<f64> {
    simbench::jaccard_stability(&sets).map_err(err)
}

/// Runs the simulation benchmark and returns the full result dict.
#[pyfunction(name = "bench")]
#[pyo3(signature = (model, n, methods, reps=5, k=50, alpha=0.05, learner=None, seed=0, p=None, repeat=None))]
#[allow(clippy::too_many_arguments)]
fn run_bench(
    py: Python<'_>,
    model: &str,
    n: usize,
    methods: Vec<String>,
    reps: usize,
    k: usize,
    alpha: f64,
    learner: Option<&Learner>,
    seed: u64,
    p: Option<usize>,
    repeat: Option<usize>,
) -> PyResult<PyObject> {
    let methods = methods
        .iter()
        .map(|m| Method::parse(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let mut cfg = BenchConfig::new(sim_config(model, n, seed, p, repeat)?, methods, reps);
    cfg.k = k;
    cfg.alpha = alpha;
    if let Some(l) = learner {
        cfg.learner = l.inner.clone();
    }
    let result = py
        .allow_threads(|| simbench::run_experiment(&cfg, &RngStream::new(seed)))
        .map_err(err)?;
    to_py(py, &result)
}

#[pymodule]
#[pyo3(name = "minshap")]
pub fn minshap_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MinShapError", m.py().get_type::<MinShapError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_class::<Learner>()?;
    m.add_class::<VIMatrix>()?;
    m.add_function(wrap_pyfunction!(shapley_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(sample_permutations, m)?)?;
    m.add_function(wrap_pyfunction!(minshap_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_k, m)?)?;
    m.add_function(wrap_pyfunction!(pcht_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard_stability, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
