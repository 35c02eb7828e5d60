//! Learner contract: fit on a feature subset, evaluate mean squared error.
//!
//! Two learners ship in-crate: closed-form ridge regression and
//! histogram-based gradient-boosted regression trees.

mod ridge;
pub(crate) mod trees;

use std::sync::{Arc, OnceLock};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{mean, Dataset};
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};

pub use ridge::RidgeParams;
pub use trees::TreeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Retrain a model for every feature subset.
    Refit,
    /// Train the full model once; excluded columns are imputed by their training means.
    Dropout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Ridge(RidgeParams),
    BoostedTrees(TreeParams),
}

impl Learner {
    pub fn kind(&self) -> &'static str {
        match self {
            Learner::Ridge(_) => "ridge",
            Learner::BoostedTrees(_) => "boosted-trees",
        }
    }
}

/// Which learner to use and how to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct LearnerSpec {
    pub learner: Learner,
    pub eval_mode: EvalMode,
    /// 0 means plug-in evaluation on the training rows.
    pub holdout_fraction: f64,
}

impl LearnerSpec {
    pub fn ridge(lambda: f64) -> Self {
        Self {
            learner: Learner::Ridge(RidgeParams { lambda }),
            eval_mode: EvalMode::Refit,
            holdout_fraction: 0.0,
        }
    }

    pub fn boosted_trees(params: TreeParams) -> Self {
        Self {
            learner: Learner::BoostedTrees(params),
            eval_mode: EvalMode::Refit,
            holdout_fraction: 0.0,
        }
    }

    pub fn with_eval_mode(mut self, mode: EvalMode) -> Self {
        self.eval_mode = mode;
        self
    }

    pub fn with_holdout(mut self, fraction: f64) -> Self {
        self.holdout_fraction = fraction;
        self
    }

    /// Defaults for a learner named `ridge` or `boosted-trees`.
    pub fn from_kind(kind: &str) -> Result<Self> {
        match kind {
            "ridge" => Ok(Self::ridge(RidgeParams::default().lambda)),
            "boosted-trees" | "trees" | "gbt" => Ok(Self::boosted_trees(TreeParams::default())),
            other => Err(Error::InvalidConfig(format!("unknown learner kind {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig(format!(
                "holdout_fraction must lie in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        match &self.learner {
            Learner::Ridge(p) => p.validate(),
            Learner::BoostedTrees(p) => p.validate(),
        }
    }
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self::boosted_trees(TreeParams::default())
    }
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    kind: String,
    #[serde(default)]
    hyperparams: Option<serde_json::Value>,
    #[serde(default = "default_eval_mode")]
    eval_mode: EvalMode,
    #[serde(default)]
    holdout_fraction: f64,
}

fn default_eval_mode() -> EvalMode {
    EvalMode::Refit
}

impl TryFrom<SpecRepr> for LearnerSpec {
    type Error = Error;

    fn try_from(r: SpecRepr) -> Result<Self> {
        let hp = r.hyperparams.unwrap_or_else(|| serde_json::json!({}));
        let learner = match r.kind.as_str() {
            "ridge" => Learner::Ridge(serde_json::from_value(hp)?),
            "boosted-trees" => Learner::BoostedTrees(serde_json::from_value(hp)?),
            other => return Err(Error::InvalidConfig(format!("unknown learner kind {other:?}"))),
        };
        let spec = LearnerSpec {
            learner,
            eval_mode: r.eval_mode,
            holdout_fraction: r.holdout_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<LearnerSpec> for SpecRepr {
    fn from(s: LearnerSpec) -> Self {
        let hyperparams = match &s.learner {
            Learner::Ridge(p) => serde_json::to_value(p),
            Learner::BoostedTrees(p) => serde_json::to_value(p),
        }
        .expect("hyperparameters serialize");
        SpecRepr {
            kind: s.learner.kind().to_owned(),
            hyperparams: Some(hyperparams),
            eval_mode: s.eval_mode,
            holdout_fraction: s.holdout_fraction,
        }
    }
}

/// A column seen by a predictor: real data or a constant imputation.
#[derive(Clone, Copy)]
pub(crate) enum Column<'a> {
    Data(&'a [f64]),
    Const(f64),
}

impl Column<'_> {
    #[inline]
    pub(crate) fn get(&self, i: usize) -> f64 {
        match self {
            Column::Data(c) => c[i],
            Column::Const(v) => *v,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Predictor {
    Constant(f64),
    Linear(ridge::LinearModel),
    Trees(trees::Ensemble),
}

impl Predictor {
    fn predict_row(&self, cols: &[Column<'_>], i: usize) -> f64 {
        match self {
            Predictor::Constant(c) => *c,
            Predictor::Linear(m) => m.predict_row(cols, i),
            Predictor::Trees(e) => e.predict_row(cols, i),
        }
    }
}

/// A fitted predictor on one feature subset.
#[derive(Debug, Clone)]
pub struct FittedModel {
    subset: Vec<usize>,
    predictor: Predictor,
    train_column_means: Option<Vec<f64>>,
    feature_names: Arc<Vec<String>>,
    eval_rows: Option<Arc<Vec<usize>>>,
}

impl FittedModel {
    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn train_column_means(&self) -> Option<&[f64]> {
        self.train_column_means.as_deref()
    }

    /// Rows used by [`value`]; `None` means every row.
    pub fn eval_rows(&self) -> Option<&[usize]> {
        self.eval_rows.as_deref().map(Vec::as_slice)
    }

    /// `Some(c)` when the model predicts the constant `c` (the null model).
    pub fn constant(&self) -> Option<f64> {
        match self.predictor {
            Predictor::Constant(c) => Some(c),
            _ => None,
        }
    }

    /// Slope and intercept for linear models, indexed like `subset`.
    pub fn linear_coefficients(&self) -> Option<(f64, &[f64])> {
        match &self.predictor {
            Predictor::Linear(m) => Some((m.intercept, &m.coef)),
            Predictor::Constant(c) => Some((*c, &[])),
            Predictor::Trees(_) => None,
        }
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.p() != self.feature_names.len() || data.feature_names() != self.feature_names.as_slice() {
            return Err(Error::invalid(format!(
                "model expects {} columns {:?}, data has {}",
                self.feature_names.len(),
                self.feature_names,
                data.p()
            )));
        }
        Ok(())
    }

    /// Predictions for every row of `data`.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_data(data)?;
        let cols: Vec<Column<'_>> = data.columns().iter().map(|c| Column::Data(c)).collect();
        Ok((0..data.n()).map(|i| self.predictor.predict_row(&cols, i)).collect())
    }
}

/// Mean squared error and per-row squared residuals over the evaluation rows.
pub fn value(model: &FittedModel, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    model.check_data(data)?;
    let cols: Vec<Column<'_>> = data.columns().iter().map(|c| Column::Data(c)).collect();
    Ok(squared_residuals(model, &cols, data))
}

/// Like [`value`] but columns outside `subset` are replaced by the training means.
pub fn dropout_value(full_model: &FittedModel, data: &Dataset, subset: &[usize]) -> Result<(f64, Vec<f64>)> {
    full_model.check_data(data)?;
    let means = full_model.train_column_means.as_ref().ok_or_else(|| {
        Error::InvalidState("dropout evaluation needs a model fitted with stored column means".into())
    })?;
    let mut keep = vec![false; data.p()];
    for &j in subset {
        if j >= data.p() {
            return Err(Error::invalid(format!("feature index {j} out of range")));
        }
        keep[j] = true;
    }
    let cols: Vec<Column<'_>> = data
        .columns()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if keep[j] {
                Column::Data(c)
            } else {
                Column::Const(means[j])
            }
        })
        .collect();
    Ok(squared_residuals(full_model, &cols, data))
}

fn squared_residuals(model: &FittedModel, cols: &[Column<'_>], data: &Dataset) -> (f64, Vec<f64>) {
    let y = data.response();
    let sq: Vec<f64> = match &model.eval_rows {
        Some(rows) => rows
            .iter()
            .map(|&i| {
                let r = y[i] - model.predictor.predict_row(cols, i);
                r * r
            })
            .collect(),
        None => (0..data.n())
            .map(|i| {
                let r = y[i] - model.predictor.predict_row(cols, i);
                r * r
            })
            .collect(),
    };
    (mean(&sq), sq)
}

/// Fits `spec` on `subset` of `data`. An empty subset gives the null model.
pub fn fit(spec: &LearnerSpec, data: &Dataset, subset: &[usize], rng: &RngStream) -> Result<FittedModel> {
    FitSession::new(spec, data, rng)?.fit(subset)
}

/// Shared state for many fits on one dataset: the holdout split and
/// lazily built per-learner caches.
///
/// Fit randomness is keyed by the feature subset, so fitting the same subset
/// twice in one session gives the same model.
pub struct FitSession<'a> {
    spec: &'a LearnerSpec,
    data: &'a Dataset,
    rng: RngStream,
    train_rows: Option<Arc<Vec<usize>>>,
    eval_rows: Option<Arc<Vec<usize>>>,
    names: Arc<Vec<String>>,
    bins: OnceLock<trees::BinnedMatrix>,
    gram: OnceLock<ridge::Gram>,
}

impl<'a> FitSession<'a> {
    pub fn new(spec: &'a LearnerSpec, data: &'a Dataset, rng: &RngStream) -> Result<Self> {
        spec.validate()?;
        let (train_rows, eval_rows) = if spec.holdout_fraction > 0.0 {
            let n = data.n();
            let n_eval = ((n as f64) * spec.holdout_fraction).round() as usize;
            if n_eval == 0 || n_eval >= n {
                return Err(Error::invalid(format!(
                    "holdout fraction {} leaves an empty train or evaluation set for n={n}",
                    spec.holdout_fraction
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng.child(tags::HOLDOUT, 0).generator());
            let mut eval = idx[..n_eval].to_vec();
            let mut train = idx[n_eval..].to_vec();
            eval.sort_unstable();
            train.sort_unstable();
            (Some(Arc::new(train)), Some(Arc::new(eval)))
        } else {
            (None, None)
        };
        Ok(Self {
            spec,
            data,
            rng: *rng,
            train_rows,
            eval_rows,
            names: Arc::new(data.feature_names().to_vec()),
            bins: OnceLock::new(),
            gram: OnceLock::new(),
        })
    }

    pub fn spec(&self) -> &LearnerSpec {
        self.spec
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    /// Number of rows [`value`] averages over.
    pub fn n_eval(&self) -> usize {
        self.eval_rows.as_ref().map_or(self.data.n(), |r| r.len())
    }

    fn train_rows(&self) -> TrainRows<'_> {
        match &self.train_rows {
            Some(r) => TrainRows::Subset(r),
            None => TrainRows::All(self.data.n()),
        }
    }

    /// Evaluation rows in ascending order.
    pub(crate) fn eval_row_list(&self) -> Vec<usize> {
        match &self.eval_rows {
            Some(r) => r.to_vec(),
            None => (0..self.data.n()).collect(),
        }
    }

    /// Incremental prefix evaluator for a full tree model fitted in this session in dropout mode.
    pub(crate) fn dropout_walker(&self, full: &FittedModel) -> Option<trees::DropoutWalker> {
        // per-tree prediction buffers are trees x rows floats
        const MAX_CELLS: usize = 10_000_000;
        let (Predictor::Trees(ens), Some(means), Some(bins)) =
            (&full.predictor, &full.train_column_means, self.bins.get())
        else {
            return None;
        };
        let rows = self.eval_row_list();
        if full.subset.len() != self.data.p() || ens.n_trees() * rows.len() > MAX_CELLS {
            return None;
        }
        Some(trees::DropoutWalker::new(ens, bins, means, &rows))
    }

    pub fn fit(&self, subset: &[usize]) -> Result<FittedModel> {
        let mut subset = subset.to_vec();
        subset.sort_unstable();
        subset.dedup();
        if let Some(&j) = subset.iter().find(|&&j| j >= self.data.p()) {
            return Err(Error::invalid(format!(
                "feature index {j} out of range for p={}",
                self.data.p()
            )));
        }
        let rows = self.train_rows();
        let y = self.data.response();
        let predictor = if subset.is_empty() {
            Predictor::Constant(rows.mean_of(y))
        } else {
            let stream = subset_stream(&self.rng, &subset);
            match &self.spec.learner {
                Learner::Ridge(p) => {
                    let gram = self.gram.get_or_init(|| ridge::Gram::new(self.data, &rows));
                    Predictor::Linear(gram.solve(&subset, p.lambda)?)
                }
                Learner::BoostedTrees(p) => {
                    let bins = self
                        .bins
                        .get_or_init(|| trees::BinnedMatrix::new(self.data, p.max_bins));
                    Predictor::Trees(trees::Ensemble::fit(p, bins, y, &rows, &subset, &stream))
                }
            }
        };
        let train_column_means = match self.spec.eval_mode {
            EvalMode::Dropout => Some(self.data.columns().iter().map(|c| rows.mean_of(c)).collect()),
            EvalMode::Refit => None,
        };
        Ok(FittedModel {
            subset,
            predictor,
            train_column_means,
            feature_names: Arc::clone(&self.names),
            eval_rows: self.eval_rows.clone(),
        })
    }
}

pub(crate) enum TrainRows<'a> {
    All(usize),
    Subset(&'a [usize]),
}

impl TrainRows<'_> {
    pub(crate) fn to_vec(&self) -> Vec<usize> {
        match self {
            TrainRows::All(n) => (0..*n).collect(),
            TrainRows::Subset(r) => r.to_vec(),
        }
    }

    pub(crate) fn mean_of(&self, v: &[f64]) -> f64 {
        match self {
            TrainRows::All(_) => mean(v),
            TrainRows::Subset(r) => r.iter().map(|&i| v[i]).sum::<f64>() / r.len() as f64,
        }
    }
}

fn subset_stream(rng: &RngStream, subset: &[usize]) -> RngStream {
    subset.iter().fold(rng.child(tags::FIT, subset.len() as u64), |s, &j| {
        s.child(tags::FIT, j as u64)
    })
}
