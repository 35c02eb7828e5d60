//! Decision layer over a VI matrix.
//!
//! Per feature: the minimum-contribution threshold test, per-ordering z-scores
//! and two-sided p-values, the Max-p test, and partial-conjunction p-values
//! (Bonferroni, Stouffer, Fisher) monotonized across u with the Holm running
//! maximum.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapley::{ShapleyStats, VIMatrix};
use crate::simbench::{confusion_metrics, GroundTruth};
use crate::special::{chi2_sf, two_sided_p};

/// Variances below this are treated as zero: z = 0 and p = 1.
pub const DEGENERATE_VARIANCE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PchtMethod {
    Bonferroni,
    Stouffer,
    Fisher,
}

impl PchtMethod {
    pub const ALL: [PchtMethod; 3] = [PchtMethod::Bonferroni, PchtMethod::Stouffer, PchtMethod::Fisher];

    pub fn name(self) -> &'static str {
        match self {
            PchtMethod::Bonferroni => "bonferroni",
            PchtMethod::Stouffer => "stouffer",
            PchtMethod::Fisher => "fisher",
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// `sqrt(-2 ln(alpha) sigma2)`; reject when the minimum contribution is at least this.
pub fn minshap_threshold(sigma2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if sigma2.is_nan() || sigma2 < 0.0 {
        return Err(Error::invalid(format!("variance must be >= 0, got {sigma2}")));
    }
    Ok((-2.0 * alpha.ln() * sigma2).max(0.0).sqrt())
}

/// Threshold decision; with a degenerate variance only a strictly positive minimum rejects.
pub fn minshap_rejects(phi_min: f64, sigma2_assoc: f64, threshold: f64) -> bool {
    if sigma2_assoc < DEGENERATE_VARIANCE {
        phi_min > 0.0
    } else {
        phi_min >= threshold
    }
}

/// z-scores `vi / sqrt(sigma2)` and two-sided normal p-values.
pub fn perm_pvalues(vi: &[f64], sigma2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if vi.len() != sigma2.len() {
        return Err(Error::invalid("vi and sigma2 lengths differ"));
    }
    let mut z = Vec::with_capacity(vi.len());
    let mut p = Vec::with_capacity(vi.len());
    for (&v, &s) in vi.iter().zip(sigma2) {
        if s.is_nan() || s < 0.0 {
            return Err(Error::invalid(format!("negative variance {s}")));
        }
        if s < DEGENERATE_VARIANCE {
            z.push(0.0);
            p.push(1.0);
        } else {
            let zk = v / s.sqrt();
            z.push(zk);
            p.push(two_sided_p(zk));
        }
    }
    Ok((z, p))
}

pub fn max_p(pvals: &[f64]) -> Result<f64> {
    pvals
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::invalid("max_p of an empty vector"))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Partial-conjunction p-value for "at least `u` of the K orderings are non-null".
pub fn pcht_pvalue(method: PchtMethod, pvals: &[f64], absz: &[f64], u: usize) -> Result<f64> {
    let k = pvals.len();
    if k == 0 || absz.len() != k {
        return Err(Error::invalid("pvals and |z| must be non-empty and of equal length"));
    }
    if u == 0 || u > k {
        return Err(Error::invalid(format!("u must lie in [1, {k}], got {u}")));
    }
    let raw = pcht_raw(method, &sorted(pvals), &sorted_abs(absz));
    Ok(raw[u - 1])
}

fn sorted_abs(z: &[f64]) -> Vec<f64> {
    let a: Vec<f64> = z.iter().map(|v| v.abs()).collect();
    sorted(&a)
}

/// Unadjusted p-values for u = 1..K, from ascending p-values and ascending |z|.
fn pcht_raw(method: PchtMethod, p_sorted: &[f64], absz_sorted: &[f64]) -> Vec<f64> {
    let k = p_sorted.len();
    match method {
        PchtMethod::Bonferroni => (1..=k)
            .map(|u| ((k - u + 1) as f64 * p_sorted[u - 1]).min(1.0))
            .collect(),
        PchtMethod::Stouffer => {
            // prefix sums of the smallest |z|
            let mut prefix = vec![0.0; k + 1];
            for i in 0..k {
                prefix[i + 1] = prefix[i] + absz_sorted[i];
            }
            (1..=k)
                .map(|u| {
                    let m = k - u + 1;
                    two_sided_p(prefix[m] / (m as f64).sqrt())
                })
                .collect()
        }
        PchtMethod::Fisher => {
            // suffix sums of -2 ln p over the largest p-values
            let mut out = vec![0.0; k];
            let mut stat = 0.0;
            for u in (1..=k).rev() {
                stat += -2.0 * p_sorted[u - 1].ln();
                let dof = 2.0 * (k - u + 1) as f64;
                out[u - 1] = if stat.is_infinite() { 0.0 } else { chi2_sf(stat, dof) };
            }
            out
        }
    }
}

/// Holm running maximum over u, capped at 1.
pub fn holm_adjust(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut run = f64::NEG_INFINITY;
    for &r in raw {
        run = run.max(r).min(1.0);
        out.push(run);
    }
    out
}

/// Smallest K with `(s/(s+1))^K <= eps`.
pub fn recommend_k(s: usize, eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    if s == 0 {
        return Ok(1);
    }
    let q = s as f64 / (s as f64 + 1.0);
    let fails = |k: usize| q.powi(k as i32) > eps;
    let mut k = (eps.ln() / q.ln()).ceil().max(1.0) as usize;
    while k > 1 && !fails(k - 1) {
        k -= 1;
    }
    while fails(k) {
        k += 1;
    }
    Ok(k)
}

/// How `screen_u` scores a candidate level.
pub enum Tuning<'a> {
    /// Known support: maximize F1.
    Truth(&'a GroundTruth),
    /// Unknown support: minimize the returned held-out loss of a model on the selected set.
    HeldOut(&'a dyn Fn(&[usize]) -> Result<f64>),
}

/// Picks u from `u_range` for one method's adjusted p-values (`adjusted[j][u-1]`).
/// Ties go to the larger u.
pub fn screen_u(
    adjusted: &[Vec<f64>],
    u_range: RangeInclusive<usize>,
    tuning: Tuning<'_>,
    alpha: f64,
) -> Result<usize> {
    check_alpha(alpha)?;
    let (lo, hi) = (*u_range.start(), *u_range.end());
    let k = adjusted.first().map_or(0, Vec::len);
    if lo == 0 || lo > hi || hi > k {
        return Err(Error::invalid(format!(
            "u range [{lo}, {hi}] is empty or outside [1, {k}]"
        )));
    }
    let p = adjusted.len();
    let mut best: Option<(usize, f64)> = None;
    for u in lo..=hi {
        let selected: Vec<usize> = (0..p).filter(|&j| adjusted[j][u - 1] < alpha).collect();
        // higher is better
        let score = match &tuning {
            Tuning::Truth(t) => confusion_metrics(&selected, t, p)?.f1,
            Tuning::HeldOut(loss) => -loss(&selected)?,
        };
        if best.is_none_or(|(_, s)| score >= s) {
            best = Some((u, score));
        }
    }
    Ok(best.expect("non-empty range").0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub minshap: bool,
    pub maxp: bool,
    pub bonferroni: bool,
    pub stouffer: bool,
    pub fisher: bool,
}

impl Decisions {
    pub fn pcht(&self, m: PchtMethod) -> bool {
        match m {
            PchtMethod::Bonferroni => self.bonferroni,
            PchtMethod::Stouffer => self.stouffer,
            PchtMethod::Fisher => self.fisher,
        }
    }
}

/// Holm-adjusted PCHT p-values for u = 1..K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedPValues {
    pub bonferroni: Vec<f64>,
    pub stouffer: Vec<f64>,
    pub fisher: Vec<f64>,
}

impl AdjustedPValues {
    pub fn get(&self, m: PchtMethod) -> &[f64] {
        match m {
            PchtMethod::Bonferroni => &self.bonferroni,
            PchtMethod::Stouffer => &self.stouffer,
            PchtMethod::Fisher => &self.fisher,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTestRecord {
    pub feature: usize,
    pub phi_mean: f64,
    pub phi_min: f64,
    pub sigma2_assoc: f64,
    pub threshold: f64,
    pub z: Vec<f64>,
    pub pvals: Vec<f64>,
    pub p_max: f64,
    pub adjusted: AdjustedPValues,
    pub decisions: Decisions,
}

impl FeatureTestRecord {
    pub fn adjusted_at(&self, m: PchtMethod, u: usize) -> f64 {
        self.adjusted.get(m)[u - 1]
    }
}

/// Holm-adjusted PCHT p-values for one feature's per-ordering results.
pub fn adjusted_pvalues(pvals: &[f64], z: &[f64]) -> AdjustedPValues {
    let ps = sorted(pvals);
    let zs = sorted_abs(z);
    let adj = |m| holm_adjust(&pcht_raw(m, &ps, &zs));
    AdjustedPValues {
        bonferroni: adj(PchtMethod::Bonferroni),
        stouffer: adj(PchtMethod::Stouffer),
        fisher: adj(PchtMethod::Fisher),
    }
}

/// Runs every test for every feature at level `alpha`; PCHT decisions use level `u`.
pub fn run_all_tests(stats: &ShapleyStats, m: &VIMatrix, alpha: f64, u: usize) -> Result<Vec<FeatureTestRecord>> {
    check_alpha(alpha)?;
    let k = m.k();
    if u == 0 || u > k {
        return Err(Error::invalid(format!("u must lie in [1, {k}], got {u}")));
    }
    if stats.phi_min.len() != m.p() {
        return Err(Error::invalid(
            "statistics and matrix describe different feature counts",
        ));
    }
    (0..m.p())
        .map(|j| {
            let threshold = minshap_threshold(stats.sigma2_assoc[j], alpha)?;
            let (z, pvals) = perm_pvalues(m.vi(j), m.sigma2(j))?;
            let p_max = max_p(&pvals)?;
            let adjusted = adjusted_pvalues(&pvals, &z);
            let decisions = Decisions {
                minshap: minshap_rejects(stats.phi_min[j], stats.sigma2_assoc[j], threshold),
                maxp: p_max < alpha,
                bonferroni: adjusted.bonferroni[u - 1] < alpha,
                stouffer: adjusted.stouffer[u - 1] < alpha,
                fisher: adjusted.fisher[u - 1] < alpha,
            };
            Ok(FeatureTestRecord {
                feature: j,
                phi_mean: stats.phi_mean[j],
                phi_min: stats.phi_min[j],
                sigma2_assoc: stats.sigma2_assoc[j],
                threshold,
                z,
                pvals,
                p_max,
                adjusted,
                decisions,
            })
        })
        .collect()
}
