//! Per-(feature, ordering) marginal contributions and their variances.
//!
//! For an ordering, features are added one at a time; the contribution of
//! the feature added at a step is the drop in MSE from the previous prefix
//! model to the new one, and its variance estimate is the unbiased sample
//! variance of the per-row change in squared residuals, divided by the
//! number of evaluation rows.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mean, sample_variance, Dataset};
use crate::error::{Error, Result};
use crate::learners::trees::DropoutWalker;
use crate::learners::{dropout_value, value, EvalMode, FitSession, FittedModel, LearnerSpec};
use crate::perm::{is_permutation, PermutationPlan};
use crate::rng::RngStream;

/// p×K grid of contributions and variances; row j is feature j, column k is ordering k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VIMatrix {
    vi: Vec<Vec<f64>>,
    sigma2: Vec<Vec<f64>>,
    plan: PermutationPlan,
    n: usize,
}

impl VIMatrix {
    pub fn from_parts(vi: Vec<Vec<f64>>, sigma2: Vec<Vec<f64>>, plan: PermutationPlan, n: usize) -> Result<Self> {
        let (p, k) = (plan.p(), plan.k());
        let shape_ok = |m: &Vec<Vec<f64>>| m.len() == p && m.iter().all(|r| r.len() == k);
        if !shape_ok(&vi) || !shape_ok(&sigma2) {
            return Err(Error::invalid(format!("matrix shape does not match a {p}x{k} plan")));
        }
        if sigma2.iter().flatten().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("variances must be finite and non-negative"));
        }
        if vi.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("contributions must be finite"));
        }
        Ok(Self { vi, sigma2, plan, n })
    }

    pub fn p(&self) -> usize {
        self.plan.p()
    }

    pub fn k(&self) -> usize {
        self.plan.k()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn plan(&self) -> &PermutationPlan {
        &self.plan
    }

    /// Contributions of feature `j` across orderings.
    pub fn vi(&self, j: usize) -> &[f64] {
        &self.vi[j]
    }

    pub fn sigma2(&self, j: usize) -> &[f64] {
        &self.sigma2[j]
    }

    /// Contributions of all features under ordering `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.vi.iter().map(|row| row[k]).collect()
    }

    /// Writes one row per feature and a (vi, sigma2) column pair per ordering.
    ///
    /// The header's first cell carries `n` and the plan seed; every other
    /// header cell carries its ordering, e.g. `vi[2 0 1]`.
    pub fn write_csv<W: Write>(&self, writer: W, names: &[String]) -> Result<()> {
        if names.len() != self.p() {
            return Err(Error::invalid("one name per feature required"));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut first = format!("feature(n={}", self.n);
        if let Some(seed) = self.plan.seed() {
            first.push_str(&format!(";seed={seed}"));
        }
        first.push(')');
        let mut header = vec![first];
        for perm in self.plan.perms() {
            let text = perm.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            header.push(format!("vi[{text}]"));
            header.push(format!("sigma2[{text}]"));
        }
        w.write_record(&header)?;
        for (j, name) in names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            for k in 0..self.k() {
                rec.push(self.vi[j][k].to_string());
                rec.push(self.sigma2[j][k].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`VIMatrix::write_csv`]; returns the matrix and feature names.
    pub fn read_csv<R: Read>(reader: R) -> Result<(Self, Vec<String>)> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let bad = |m: String| Error::DataShape(format!("matrix CSV: {m}"));
        let meta = header
            .first()
            .and_then(|h| h.strip_prefix("feature("))
            .and_then(|h| h.strip_suffix(')'))
            .ok_or_else(|| bad("first header cell must be feature(n=...)".into()))?;
        let mut n = None;
        let mut seed = None;
        for part in meta.split(';') {
            if let Some(v) = part.strip_prefix("n=") {
                n = v.parse::<usize>().ok();
            } else if let Some(v) = part.strip_prefix("seed=") {
                seed = v.parse::<u64>().ok();
            }
        }
        let n = n.ok_or_else(|| bad("missing n".into()))?;
        if header.len() < 3 || !(header.len() - 1).is_multiple_of(2) {
            return Err(bad("expected (vi, sigma2) column pairs".into()));
        }
        let mut perms = Vec::new();
        for pair in header[1..].chunks(2) {
            let inner = |cell: &str, prefix: &str| -> Option<String> {
                cell.strip_prefix(prefix)?.strip_suffix(']').map(str::to_owned)
            };
            let a = inner(&pair[0], "vi[").ok_or_else(|| bad(format!("bad header {:?}", pair[0])))?;
            let b = inner(&pair[1], "sigma2[").ok_or_else(|| bad(format!("bad header {:?}", pair[1])))?;
            if a != b {
                return Err(bad(format!("mismatched orderings {a:?} / {b:?}")));
            }
            let perm = a
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| bad(format!("bad ordering {a:?}"))))
                .collect::<Result<Vec<_>>>()?;
            perms.push(perm);
        }
        let mut names = Vec::new();
        let mut vi = Vec::new();
        let mut sigma2 = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            names.push(rec[0].to_owned());
            let mut v = Vec::new();
            let mut s = Vec::new();
            for (c, cell) in rec.iter().enumerate().skip(1) {
                let x = cell.parse::<f64>().map_err(|_| Error::Data {
                    row: r + 1,
                    column: header[c].clone(),
                    message: format!("cannot parse {cell:?}"),
                })?;
                if c % 2 == 1 {
                    v.push(x);
                } else {
                    s.push(x);
                }
            }
            vi.push(v);
            sigma2.push(s);
        }
        let p = names.len();
        let mut plan = PermutationPlan::explicit(p, perms)?;
        if let Some(seed) = seed {
            plan = plan.with_seed(seed);
        }
        Ok((Self::from_parts(vi, sigma2, plan, n)?, names))
    }
}

/// Mean and minimum contribution per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyStats {
    pub phi_mean: Vec<f64>,
    pub phi_min: Vec<f64>,
    /// Variance of the ordering that attains `phi_min`.
    pub sigma2_assoc: Vec<f64>,
    pub argmin_perm: Vec<usize>,
}

/// Reduces a matrix to per-feature mean and minimum; ties in the minimum go to the lowest ordering index.
pub fn reduce_stats(m: &VIMatrix) -> Result<ShapleyStats> {
    if m.k() == 0 || m.p() == 0 {
        return Err(Error::invalid("empty VI matrix"));
    }
    let mut stats = ShapleyStats {
        phi_mean: Vec::with_capacity(m.p()),
        phi_min: Vec::with_capacity(m.p()),
        sigma2_assoc: Vec::with_capacity(m.p()),
        argmin_perm: Vec::with_capacity(m.p()),
    };
    for j in 0..m.p() {
        let row = m.vi(j);
        let mut arg = 0;
        for (k, &v) in row.iter().enumerate().skip(1) {
            if v < row[arg] {
                arg = k;
            }
        }
        stats.phi_mean.push(row.iter().sum::<f64>() / row.len() as f64);
        stats.phi_min.push(row[arg]);
        stats.sigma2_assoc.push(m.sigma2(j)[arg]);
        stats.argmin_perm.push(arg);
    }
    Ok(stats)
}

/// MSE and squared residuals of one prefix model.
#[derive(Debug)]
struct PrefixValue {
    mse: f64,
    sq: Vec<f64>,
}

/// Evaluates orderings on one dataset, caching each distinct prefix model.
///
/// Fits are keyed by feature subset (see [`FitSession`]), so a cached value
/// is exactly what a fresh fit would produce.
pub struct ShapleyEngine<'a> {
    session: FitSession<'a>,
    cache: Mutex<HashMap<Vec<usize>, Arc<PrefixValue>>>,
    full_model: OnceLock<Result<FittedModel, String>>,
    walker: OnceLock<Option<DropoutWalker>>,
}

impl<'a> ShapleyEngine<'a> {
    pub fn new(data: &'a Dataset, spec: &'a LearnerSpec, rng: &RngStream) -> Result<Self> {
        Ok(Self {
            session: FitSession::new(spec, data, rng)?,
            cache: Mutex::new(HashMap::new()),
            full_model: OnceLock::new(),
            walker: OnceLock::new(),
        })
    }

    pub fn data(&self) -> &Dataset {
        self.session.data()
    }

    /// Evaluation-row count used as the variance divisor.
    pub fn n_eval(&self) -> usize {
        self.session.n_eval()
    }

    fn full_model(&self) -> Result<&FittedModel> {
        let data = self.session.data();
        self.full_model
            .get_or_init(|| {
                let all: Vec<usize> = (0..data.p()).collect();
                self.session.fit(&all).map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| Error::Learner {
                subset: (0..data.p()).collect(),
                source: Box::new(Error::Numerical(format!("full model fit failed: {e}"))),
            })
    }

    fn prefix_value(&self, subset: &[usize]) -> Result<Arc<PrefixValue>> {
        let mut key = subset.to_vec();
        key.sort_unstable();
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(v));
        }
        let wrap = |e: Error| Error::Learner {
            subset: key.clone(),
            source: Box::new(e),
        };
        let data = self.session.data();
        let (mse, sq) = match self.session.spec().eval_mode {
            EvalMode::Refit => {
                let model = self.session.fit(&key).map_err(wrap)?;
                value(&model, data).map_err(wrap)?
            }
            EvalMode::Dropout => dropout_value(self.full_model()?, data, &key).map_err(wrap)?,
        };
        if !mse.is_finite() {
            return Err(wrap(Error::Numerical("non-finite MSE".into())));
        }
        let v = Arc::new(PrefixValue { mse, sq });
        self.cache
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| Arc::clone(&v));
        Ok(v)
    }

    /// MSE of the empty-prefix model (the training mean in refit mode).
    pub fn null_mse(&self) -> Result<f64> {
        Ok(self.prefix_value(&[])?.mse)
    }

    /// MSE of the model on all features.
    pub fn full_mse(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.data().p()).collect();
        Ok(self.prefix_value(&all)?.mse)
    }

    /// Contributions and variances of every feature under one ordering, indexed by feature.
    pub fn evaluate(&self, perm: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.data().p();
        if !is_permutation(perm, p) {
            return Err(Error::invalid(format!("{perm:?} is not a permutation of 0..{p}")));
        }
        let n = self.n_eval() as f64;
        let values = self.prefix_values(perm)?;
        let mut vi = vec![0.0; p];
        let mut s2 = vec![0.0; p];
        let mut diff = vec![0.0; values[0].sq.len()];
        for (step, &j) in perm.iter().enumerate() {
            let (cur, new) = (&values[step], &values[step + 1]);
            vi[j] = cur.mse - new.mse;
            for ((d, a), b) in diff.iter_mut().zip(&cur.sq).zip(&new.sq) {
                *d = a - b;
            }
            s2[j] = sample_variance(&diff) / n;
        }
        Ok((vi, s2))
    }

    /// Values of the prefixes of `perm` of length 0..=p.
    fn prefix_values(&self, perm: &[usize]) -> Result<Vec<Arc<PrefixValue>>> {
        if self.session.spec().eval_mode == EvalMode::Dropout {
            let full = self.full_model()?;
            if let Some(walker) = self.walker.get_or_init(|| self.session.dropout_walker(full)) {
                let rows = self.session.eval_row_list();
                let y = self.session.data().response();
                let mut out = Vec::with_capacity(perm.len() + 1);
                walker.walk(perm, |k, pred| {
                    let sq: Vec<f64> = rows.iter().zip(pred).map(|(&i, f)| (y[i] - f) * (y[i] - f)).collect();
                    let mse = mean(&sq);
                    if !mse.is_finite() {
                        return Err(Error::Learner {
                            subset: perm[..k].to_vec(),
                            source: Box::new(Error::Numerical("non-finite MSE".into())),
                        });
                    }
                    out.push(Arc::new(PrefixValue { mse, sq }));
                    Ok(())
                })?;
                return Ok(out);
            }
        }
        let mut out = Vec::with_capacity(perm.len() + 1);
        out.push(self.prefix_value(&[])?);
        for k in 1..=perm.len() {
            out.push(self.prefix_value(&perm[..k])?);
        }
        Ok(out)
    }

    /// Evaluates every ordering of `plan`, in parallel on the current rayon pool.
    pub fn build(&self, plan: &PermutationPlan) -> Result<VIMatrix> {
        let p = self.data().p();
        if plan.p() != p {
            return Err(Error::invalid(format!(
                "plan is over {} features, data has {p}",
                plan.p()
            )));
        }
        let columns = plan
            .perms()
            .par_iter()
            .enumerate()
            .map(|(k, perm)| {
                self.evaluate(perm).map_err(|e| Error::Permutation {
                    index: k,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let k = plan.k();
        let mut vi = vec![vec![0.0; k]; p];
        let mut sigma2 = vec![vec![0.0; k]; p];
        for (kk, (v, s)) in columns.into_iter().enumerate() {
            for j in 0..p {
                vi[j][kk] = v[j];
                sigma2[j][kk] = s[j];
            }
        }
        VIMatrix::from_parts(vi, sigma2, plan.clone(), self.n_eval())
    }
}

/// One ordering's contributions and variances, indexed by feature.
pub fn evaluate_permutation(
    data: &Dataset,
    spec: &LearnerSpec,
    perm: &[usize],
    rng: &RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    ShapleyEngine::new(data, spec, rng)?.evaluate(perm)
}

/// Full p×K matrix for `plan`. Column k equals `evaluate_permutation(data, spec, &plan.perms()[k], rng)`.
pub fn build_vi_matrix(
    data: &Dataset,
    spec: &LearnerSpec,
    plan: &PermutationPlan,
    rng: &RngStream,
) -> Result<VIMatrix> {
    ShapleyEngine::new(data, spec, rng)?.build(plan)
}
