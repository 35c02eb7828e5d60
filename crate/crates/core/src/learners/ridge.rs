use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Column, TrainRows};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeParams {
    /// Penalty on the centered sum of squares; the intercept is not penalized.
    pub lambda: f64,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self { lambda: 1e-8 }
    }
}

impl RidgeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ridge lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LinearModel {
    pub(crate) intercept: f64,
    pub(crate) coef: Vec<f64>,
    cols: Vec<usize>,
}

impl LinearModel {
    pub(crate) fn predict_row(&self, cols: &[Column<'_>], i: usize) -> f64 {
        self.coef
            .iter()
            .zip(&self.cols)
            .fold(self.intercept, |acc, (b, &j)| acc + b * cols[j].get(i))
    }
}

/// Centered cross-products over the training rows, shared by every subset fit.
pub(crate) struct Gram {
    means: Vec<f64>,
    y_mean: f64,
    xtx: DMatrix<f64>,
    xty: Vec<f64>,
}

impl Gram {
    pub(crate) fn new(data: &Dataset, rows: &TrainRows<'_>) -> Self {
        let p = data.p();
        let idx = rows.to_vec();
        let y = data.response();
        let y_mean = rows.mean_of(y);
        let means: Vec<f64> = data.columns().iter().map(|c| rows.mean_of(c)).collect();
        let centered: Vec<Vec<f64>> = data
            .columns()
            .iter()
            .zip(&means)
            .map(|(c, m)| idx.iter().map(|&i| c[i] - m).collect())
            .collect();
        let yc: Vec<f64> = idx.iter().map(|&i| y[i] - y_mean).collect();
        let mut xtx = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let s: f64 = centered[a].iter().zip(&centered[b]).map(|(u, v)| u * v).sum();
                xtx[(a, b)] = s;
                xtx[(b, a)] = s;
            }
        }
        let xty = centered
            .iter()
            .map(|c| c.iter().zip(&yc).map(|(u, v)| u * v).sum())
            .collect();
        Self {
            means,
            y_mean,
            xtx,
            xty,
        }
    }

    pub(crate) fn solve(&self, subset: &[usize], lambda: f64) -> Result<LinearModel> {
        let s = subset.len();
        let a = DMatrix::from_fn(s, s, |r, c| {
            self.xtx[(subset[r], subset[c])] + if r == c { lambda } else { 0.0 }
        });
        let b = DVector::from_iterator(s, subset.iter().map(|&j| self.xty[j]));
        let max_diag = a.diagonal().max();
        // A pivot this small relative to the diagonal means the block is numerically singular.
        let chol = a
            .clone()
            .cholesky()
            .filter(|ch| ch.l_dirty().diagonal().iter().all(|d| d * d > 1e-10 * max_diag));
        let beta = match chol {
            Some(ch) => ch.solve(&b),
            None => {
                // Rank-deficient block (e.g. duplicated or constant columns): minimum-norm solution.
                let svd = a.svd(true, true);
                let tol = 1e-12 * svd.singular_values.max().max(1e-300);
                svd.solve(&b, tol).map_err(|e| Error::Numerical(e.to_string()))?
            }
        };
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite ridge coefficients".into()));
        }
        let coef: Vec<f64> = beta.iter().copied().collect();
        let intercept = self.y_mean - coef.iter().zip(subset).map(|(b, &j)| b * self.means[j]).sum::<f64>();
        Ok(LinearModel {
            intercept,
            coef,
            cols: subset.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::data::Dataset;
    use crate::learners::{fit, value, LearnerSpec};
    use crate::rng::RngStream;

    #[test]
    fn duplicated_column_does_not_fail() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 1.0).collect();
        let d = Dataset::new(vec![x.clone(), x], vec!["a".into(), "b".into()], y).unwrap();
        let m = fit(&LearnerSpec::ridge(0.0), &d, &[0, 1], &RngStream::new(0)).unwrap();
        let (mse, _) = value(&m, &d).unwrap();
        assert!(mse < 1e-12);
        let (_, coef) = m.linear_coefficients().unwrap();
        assert!((coef[0] - coef[1]).abs() < 1e-9);
    }

    #[test]
    fn constant_column_gets_zero_weight() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let c = vec![4.0; 20];
        let y: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let d = Dataset::new(vec![x, c], vec!["x".into(), "c".into()], y).unwrap();
        let m = fit(&LearnerSpec::ridge(0.0), &d, &[0, 1], &RngStream::new(0)).unwrap();
        let (_, coef) = m.linear_coefficients().unwrap();
        assert!((coef[0] - 0.5).abs() < 1e-9);
        assert!(coef[1].abs() < 1e-9);
    }
}
