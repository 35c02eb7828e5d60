use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{BaselineResult, Diagnostics};
use crate::data::{mean, Dataset};
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};

const PATH_LEN: usize = 100;
const PATH_RATIO: f64 = 1e-3;
const TOL: f64 = 1e-11;
const MAX_SWEEPS: usize = 100_000;

/// `sign(rho) * max(|rho| - lambda, 0)`.
pub fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        0.0
    }
}

/// Solutions of `(1/2n)||y - Xb||^2 + lambda ||b||_1` on standardized features.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    /// Coefficients per lambda on the standardized scale; constant columns stay 0.
    pub coefs: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Population standard deviations; 0 marks a constant column.
    pub scales: Vec<f64>,
    pub y_mean: f64,
    /// Standardized features, column-major.
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl LassoPath {
    pub fn predict(&self, index: usize, data: &Dataset, row: usize) -> f64 {
        let b = &self.coefs[index];
        let mut f = self.y_mean;
        for (j, &bj) in b.iter().enumerate() {
            if bj != 0.0 {
                f += bj * (data.column(j)[row] - self.means[j]) / self.scales[j];
            }
        }
        f
    }

    /// Training objective's smooth-part MSE `(1/n)||y - Xb||^2` at path point `index`.
    pub fn train_mse(&self, index: usize) -> f64 {
        let r = self.residual(&self.coefs[index]);
        r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
    }

    /// Largest violation of the subgradient optimality conditions at path point `index`.
    pub fn kkt_violation(&self, index: usize) -> f64 {
        let (lambda, b) = (self.lambdas[index], &self.coefs[index]);
        let r = self.residual(b);
        let n = r.len() as f64;
        let mut worst: f64 = 0.0;
        for (j, x) in self.x.iter().enumerate() {
            if self.scales[j] == 0.0 {
                continue;
            }
            let g = dot(x, &r) / n;
            let v = if b[j] != 0.0 {
                (g - lambda * b[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn residual(&self, b: &[f64]) -> Vec<f64> {
        let mut r = self.y.clone();
        for (x, &bj) in self.x.iter().zip(b) {
            if bj != 0.0 {
                for (ri, xi) in r.iter_mut().zip(x) {
                    *ri -= bj * xi;
                }
            }
        }
        r
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-spaced grid from `max_j |x_j'y|/n` down by a factor of 1000.
fn default_lambdas(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let lmax = x.iter().map(|c| dot(c, y).abs() / n).fold(0.0, f64::max);
    if lmax == 0.0 {
        return vec![0.0];
    }
    let step = PATH_RATIO.ln() / (PATH_LEN - 1) as f64;
    (0..PATH_LEN).map(|k| lmax * (step * k as f64).exp()).collect()
}

/// Fits the path by cyclic coordinate descent with warm starts. `lambdas`
/// defaults to the standard 100-point grid and must be decreasing.
pub fn lasso_path(data: &Dataset, lambdas: Option<&[f64]>) -> Result<LassoPath> {
    let n = data.n();
    let nf = n as f64;
    let mut means = Vec::with_capacity(data.p());
    let mut scales = Vec::with_capacity(data.p());
    let mut x = Vec::with_capacity(data.p());
    for c in data.columns() {
        let m = mean(c);
        let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf).sqrt();
        let constant = sd.is_nan() || sd <= 1e-12 * (1.0 + m.abs());
        means.push(m);
        scales.push(if constant { 0.0 } else { sd });
        x.push(if constant {
            vec![0.0; n]
        } else {
            c.iter().map(|v| (v - m) / sd).collect()
        });
    }
    let y_mean = mean(data.response());
    let y: Vec<f64> = data.response().iter().map(|v| v - y_mean).collect();
    let lambdas = match lambdas {
        Some(l) => {
            if l.windows(2).any(|w| w[1] > w[0]) || l.iter().any(|v| v.is_nan() || *v < 0.0) {
                return Err(Error::invalid("lambdas must be non-negative and decreasing"));
            }
            l.to_vec()
        }
        None => default_lambdas(&x, &y),
    };

    let p = x.len();
    let mut b = vec![0.0; p];
    let mut r = y.clone();
    let mut coefs = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut delta: f64 = 0.0;
            for j in 0..p {
                if scales[j] == 0.0 {
                    continue;
                }
                let xj = &x[j];
                let rho = dot(xj, &r) / nf + b[j];
                let new = soft_threshold(rho, lambda);
                let d = new - b[j];
                if d != 0.0 {
                    for (ri, xi) in r.iter_mut().zip(xj) {
                        *ri -= d * xi;
                    }
                    b[j] = new;
                    delta = delta.max(d.abs());
                }
            }
            if delta < TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!("lasso did not converge at lambda={lambda}")));
        }
        coefs.push(b.clone());
    }
    Ok(LassoPath {
        lambdas,
        coefs,
        means,
        scales,
        y_mean,
        x,
        y,
    })
}

/// Lasso with the penalty chosen by `folds`-fold cross-validation on mean validation MSE.
pub fn lasso_select(data: &Dataset, folds: usize, rng: &RngStream) -> Result<BaselineResult> {
    let start = Instant::now();
    let n = data.n();
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("folds must lie in [2, {n}], got {folds}")));
    }
    let full = lasso_path(data, None)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng.child(tags::FOLDS, 0).generator());
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let errors = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let valid: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let path = lasso_path(&data.select_rows(&train), Some(&full.lambdas))?;
            let y = data.response();
            Ok((0..full.lambdas.len())
                .map(|k| {
                    valid
                        .iter()
                        .map(|&i| (y[i] - path.predict(k, data, i)).powi(2))
                        .sum::<f64>()
                        / valid.len() as f64
                })
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let cv: Vec<f64> = (0..full.lambdas.len())
        .map(|k| errors.iter().map(|e| e[k]).sum::<f64>() / folds as f64)
        .collect();
    let best = (0..cv.len()).fold(0, |b, k| if cv[k] < cv[b] { k } else { b });
    let coefficients: Vec<f64> = full.coefs[best]
        .iter()
        .zip(&full.scales)
        .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
        .collect();
    let selected = (0..coefficients.len()).filter(|&j| coefficients[j] != 0.0).collect();
    Ok(BaselineResult {
        method: "lasso".into(),
        selected,
        diagnostics: Diagnostics::Coefficients(coefficients),
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}
