use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The set of features with a direct effect on the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub support: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub f1: f64,
    pub type1: f64,
    pub type2: f64,
    pub fdr: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn confusion_metrics(selected: &[usize], truth: &GroundTruth, p: usize) -> Result<Metrics> {
    if let Some(&j) = selected.iter().chain(&truth.support).find(|&&j| j >= p) {
        return Err(Error::invalid(format!("feature index {j} out of range for p={p}")));
    }
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    let tru: BTreeSet<usize> = truth.support.iter().copied().collect();
    let tp = sel.intersection(&tru).count();
    let fp = sel.len() - tp;
    let fn_ = tru.len() - tp;
    let tn = p - tp - fp - fn_;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / p as f64,
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        type1: ratio(fp, p - tru.len()),
        type2: ratio(fn_, tru.len()),
        fdr: fp as f64 / sel.len().max(1) as f64,
        tp,
        fp,
        fn_,
        tn,
    })
}

/// Mean pairwise intersection-over-union; two empty sets count as identical.
pub fn jaccard_stability(selections: &[Vec<usize>]) -> Result<f64> {
    let n = selections.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "jaccard stability needs at least 2 selections, got {n}"
        )));
    }
    let sets: Vec<BTreeSet<usize>> = selections.iter().map(|s| s.iter().copied().collect()).collect();
    let mut total = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            let inter = sets[a].intersection(&sets[b]).count();
            let union = sets[a].union(&sets[b]).count();
            total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        }
    }
    Ok(2.0 * total / (n * (n - 1)) as f64)
}
