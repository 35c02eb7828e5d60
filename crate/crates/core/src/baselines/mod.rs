//! Comparison selectors: leave-one-covariate-out, the generalized covariance
//! measure, cross-validated Lasso and a stability-selection wrapper.

mod lasso;

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lasso::{lasso_path, lasso_select, soft_threshold, LassoPath};

use crate::data::{mean, sample_variance, Dataset};
use crate::error::{Error, Result};
use crate::learners::{FitSession, LearnerSpec};
use crate::rng::{tags, RngStream};
use crate::special::{normal_sf, two_sided_p};

const MIN_ROWS: usize = 20;

/// Per-feature numbers backing a baseline's selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "kebab-case")]
pub enum Diagnostics {
    Pvalues(Vec<f64>),
    Coefficients(Vec<f64>),
    Frequencies(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: String,
    pub selected: Vec<usize>,
    pub diagnostics: Diagnostics,
    pub runtime_secs: f64,
}

fn check_rows(data: &Dataset) -> Result<()> {
    if data.n() < MIN_ROWS {
        return Err(Error::invalid(format!(
            "need at least {MIN_ROWS} rows, got {}",
            data.n()
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Baselines fit on all rows they are given; a configured holdout only applies to Shapley values.
fn in_sample(spec: &LearnerSpec) -> LearnerSpec {
    spec.clone().with_holdout(0.0)
}

fn select_below(pvals: &[f64], alpha: f64) -> Vec<usize> {
    (0..pvals.len()).filter(|&j| pvals[j] < alpha).collect()
}

/// One-sided test of `mean(d) > 0` by the normal approximation.
pub fn paired_pvalue(d: &[f64]) -> f64 {
    let m = mean(d);
    let sd = sample_variance(d).sqrt();
    if sd.is_nan() || sd <= 0.0 {
        return if m > 0.0 { 0.0 } else { 1.0 };
    }
    normal_sf((d.len() as f64).sqrt() * m / sd)
}

/// Two-sided GCM p-value from residual products.
pub fn gcm_pvalue(products: &[f64]) -> (f64, f64) {
    let n = products.len() as f64;
    let m = mean(products);
    let m2 = products.iter().map(|r| r * r).sum::<f64>() / n;
    let denom = (m2 - m * m).max(0.0).sqrt();
    if denom.is_nan() || denom <= 0.0 {
        return (0.0, 1.0);
    }
    let t = n.sqrt() * m / denom;
    (t, two_sided_p(t))
}

fn all_but(p: usize, j: usize) -> Vec<usize> {
    (0..p).filter(|&i| i != j).collect()
}

pub fn loco(data: &Dataset, spec: &LearnerSpec, alpha: f64, rng: &RngStream) -> Result<BaselineResult> {
    let start = Instant::now();
    check_rows(data)?;
    check_alpha(alpha)?;
    let n = data.n();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng.child(tags::SPLIT, 0).generator());
    let (train, test) = idx.split_at(n / 2);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    let train = data.select_rows(&train);
    let test = data.select_rows(&test);

    let spec = in_sample(spec);
    let session = FitSession::new(&spec, &train, &rng.child(tags::FIT, 0))?;
    let p = data.p();
    let y = test.response();
    let sq = |pred: Vec<f64>| -> Vec<f64> { pred.iter().zip(y).map(|(f, v)| (v - f) * (v - f)).collect() };
    let full = sq(session.fit(&(0..p).collect::<Vec<_>>())?.predict(&test)?);
    let pvalues = (0..p)
        .into_par_iter()
        .map(|j| {
            let reduced = sq(session.fit(&all_but(p, j))?.predict(&test)?);
            let d: Vec<f64> = reduced.iter().zip(&full).map(|(a, b)| a - b).collect();
            Ok(paired_pvalue(&d))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(BaselineResult {
        method: "loco".into(),
        selected: select_below(&pvalues, alpha),
        diagnostics: Diagnostics::Pvalues(pvalues),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

fn residuals(spec: &LearnerSpec, data: &Dataset, rng: &RngStream) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..data.p()).collect();
    let model = FitSession::new(spec, data, rng)?.fit(&all)?;
    let pred = model.predict(data)?;
    Ok(data.response().iter().zip(&pred).map(|(y, f)| y - f).collect())
}

pub fn gcm(data: &Dataset, spec: &LearnerSpec, alpha: f64, rng: &RngStream) -> Result<BaselineResult> {
    let start = Instant::now();
    check_rows(data)?;
    check_alpha(alpha)?;
    if data.p() < 2 {
        return Err(Error::invalid("GCM needs at least two features"));
    }
    let spec = in_sample(spec);
    let pvalues = (0..data.p())
        .into_par_iter()
        .map(|j| {
            let stream = rng.child(tags::FIT, j as u64);
            let eps = residuals(&spec, &data.without_feature(j, false)?, &stream.child(tags::FIT, 0))?;
            let xi = residuals(&spec, &data.without_feature(j, true)?, &stream.child(tags::FIT, 1))?;
            let r: Vec<f64> = eps.iter().zip(&xi).map(|(a, b)| a * b).collect();
            Ok(gcm_pvalue(&r).1)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(BaselineResult {
        method: "gcm".into(),
        selected: select_below(&pvalues, alpha),
        diagnostics: Diagnostics::Pvalues(pvalues),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityParams {
    pub subsamples: usize,
    pub rate: f64,
    pub threshold: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            subsamples: 50,
            rate: 0.5,
            threshold: 0.8,
        }
    }
}

impl StabilityParams {
    pub fn validate(&self) -> Result<()> {
        if self.subsamples == 0 {
            return Err(Error::InvalidConfig(
                "stability selection needs at least one subsample".into(),
            ));
        }
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "subsampling rate must lie in (0, 1), got {}",
                self.rate
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// A selector usable as a stability-selection base.
pub type Selector<'a> = dyn Fn(&Dataset, &RngStream) -> Result<Vec<usize>> + Sync + 'a;

/// Runs `base` on row subsamples and keeps features chosen in at least a `threshold` fraction.
pub fn stability_select(
    base: &Selector<'_>,
    data: &Dataset,
    params: &StabilityParams,
    rng: &RngStream,
) -> Result<BaselineResult> {
    let start = Instant::now();
    params.validate()?;
    let n = data.n();
    let m = (params.rate * n as f64).floor() as usize;
    if m < 2 {
        return Err(Error::invalid(format!("subsample of {m} rows is too small")));
    }
    let p = data.p();
    let picks: Vec<Vec<bool>> = (0..params.subsamples)
        .into_par_iter()
        .map(|b| {
            let mut rows: Vec<usize> = (0..n).collect();
            let (chosen, _) = rows.partial_shuffle(&mut rng.child(tags::SUBSAMPLE, b as u64).generator(), m);
            let mut chosen = chosen.to_vec();
            chosen.sort_unstable();
            let sub = data.select_rows(&chosen);
            let mut flags = vec![false; p];
            match base(&sub, &rng.child(tags::METHOD, b as u64)) {
                Ok(sel) => {
                    for j in sel {
                        if j < p {
                            flags[j] = true;
                        }
                    }
                }
                Err(e) => log::warn!("stability subsample {b} failed and counts as selecting nothing: {e}"),
            }
            flags
        })
        .collect();
    let freq: Vec<f64> = (0..p)
        .map(|j| picks.iter().filter(|f| f[j]).count() as f64 / params.subsamples as f64)
        .collect();
    let selected = (0..p).filter(|&j| freq[j] >= params.threshold).collect();
    Ok(BaselineResult {
        method: "stability".into(),
        selected,
        diagnostics: Diagnostics::Frequencies(freq),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
