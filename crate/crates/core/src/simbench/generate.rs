//! Synthetic benchmark designs.
//!
//! Features are Gaussian with unit variances and a model-specific
//! correlation matrix, sampled through its lower Cholesky factor. Responses
//! follow the benchmark formulas with the significant-feature pattern
//! optionally repeated `repeat_factor` times over consecutive feature blocks.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::GroundTruth;
use crate::data::{default_names, Dataset};
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimModel {
    /// Linear with interactions, Corr(X3, X4) = 0.5.
    A,
    /// Non-linear non-additive, block-diagonal correlations.
    B,
    /// Conditional interactions gated on X3 and X8.
    C,
    /// Sigmoid of a polynomial, small noise.
    D,
    /// X1 -> X2 -> X3 -> Y.
    Chain,
    /// Response independent of every feature.
    Null,
    HighdimLinear,
    HighdimNonlinear,
}

impl SimModel {
    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::InvalidConfig(format!("unknown simulation model {s:?}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            SimModel::A => "a",
            SimModel::B => "b",
            SimModel::C => "c",
            SimModel::D => "d",
            SimModel::Chain => "chain",
            SimModel::Null => "null",
            SimModel::HighdimLinear => "highdim-linear",
            SimModel::HighdimNonlinear => "highdim-nonlinear",
        }
    }

    /// Width of one copy of the signal pattern.
    fn pattern_width(self) -> usize {
        match self {
            SimModel::A | SimModel::B | SimModel::D => 8,
            SimModel::HighdimLinear | SimModel::HighdimNonlinear => 8,
            SimModel::C => 10,
            SimModel::Chain => 3,
            SimModel::Null => 0,
        }
    }

    fn base(self) -> SimModel {
        match self {
            SimModel::HighdimLinear => SimModel::A,
            SimModel::HighdimNonlinear => SimModel::B,
            m => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    pub repeat_factor: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Benchmark defaults: p = 20 (3 for the chain, 200 with two pattern copies in high dimension).
    pub fn new(model: SimModel, n: usize, seed: u64) -> Self {
        let (p, repeat_factor) = match model {
            SimModel::Chain => (3, 1),
            SimModel::HighdimLinear | SimModel::HighdimNonlinear => (200, 2),
            _ => (20, 1),
        };
        Self {
            model,
            n,
            p,
            repeat_factor,
            seed,
        }
    }

    pub fn with_p(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn with_repeat(mut self, r: usize) -> Self {
        self.repeat_factor = r;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be >= 2, got {}", self.n)));
        }
        if self.repeat_factor == 0 {
            return Err(Error::InvalidConfig("repeat_factor must be >= 1".into()));
        }
        if self.model == SimModel::Chain && self.repeat_factor != 1 {
            return Err(Error::InvalidConfig("the chain model has no repeatable pattern".into()));
        }
        let need = (self.model.pattern_width() * self.repeat_factor).max(1);
        if self.p < need {
            return Err(Error::InvalidConfig(format!(
                "model {} with repeat_factor {} needs p >= {need}, got {}",
                self.model.name(),
                self.repeat_factor,
                self.p
            )));
        }
        Ok(())
    }

    /// Significant features, 0-indexed.
    pub fn support(&self) -> GroundTruth {
        let per = match self.model.base() {
            SimModel::A | SimModel::B | SimModel::D => 8,
            SimModel::C => 10,
            SimModel::Chain => return GroundTruth { support: vec![2] },
            _ => 0,
        };
        let w = self.model.pattern_width();
        let support = (0..self.repeat_factor)
            .flat_map(|r| (0..per).map(move |i| r * w + i))
            .collect();
        GroundTruth { support }
    }

    /// Feature correlation matrix.
    pub fn correlation(&self) -> DMatrix<f64> {
        let p = self.p;
        let mut s = DMatrix::identity(p, p);
        let mut set = |a: usize, b: usize, v: f64| {
            s[(a, b)] = v;
            s[(b, a)] = v;
        };
        let w = self.model.pattern_width();
        match self.model.base() {
            SimModel::A => {
                for r in 0..self.repeat_factor {
                    set(r * w + 2, r * w + 3, 0.5);
                }
            }
            SimModel::B => {
                const WITHIN: [f64; 4] = [0.0, 0.2, 0.5, 0.8];
                for block in 0..p.div_ceil(5) {
                    let rho = WITHIN[block % 4];
                    let lo = block * 5;
                    let hi = (lo + 5).min(p);
                    for a in lo..hi {
                        for b in a + 1..hi {
                            set(a, b, rho);
                        }
                    }
                }
            }
            SimModel::C => {
                for r in 0..self.repeat_factor {
                    let o = r * w;
                    set(o, o + 1, 0.9);
                    set(o + 5, o + 6, 0.9);
                    set(o + 3, o + 4, 0.5);
                    set(o + 8, o + 9, 0.5);
                }
            }
            SimModel::D => {
                for r in 0..self.repeat_factor {
                    set(r * w, r * w + 1, 0.5);
                }
            }
            _ => {}
        }
        s
    }
}

/// Lower-triangular factor of `sigma`.
pub fn cholesky_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sigma
        .clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidConfig("feature covariance is not positive definite".into()))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ind(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Signal of one pattern copy; `x` is the copy's slice of a row.
fn signal(model: SimModel, x: &[f64]) -> f64 {
    match model {
        SimModel::A => {
            4.0 * x[0] + 4.0 * x[1] + 3.0 * x[2] * x[3] + 3.0 * x[4] + 2.0 * x[5] + 2.0 * x[4] * x[5] + x[6] + x[7]
        }
        SimModel::B => {
            2.0 * x[0].sin()
                + 2.0 * (x[1].abs() + 1.0).ln()
                + x[0] * x[1]
                + 3.0 * (x[2] + x[3]).cos()
                + x[4].max(0.0)
                + x[5] * x[6] * x[7]
        }
        SimModel::C => {
            1.5 * x[0] * x[1] * ind(x[2] > 0.0)
                + x[3] * x[4] * ind(x[2] < 0.0)
                + 3.0 * x[5] * x[6] * ind(x[7] > 0.0)
                + x[8] * x[9] * ind(x[7] < 0.0)
        }
        SimModel::D => {
            sigmoid(2.5 * x[0] + 2.5 * x[1] + 2.0 * x[2] * x[3] + 1.5 * x[4] + 1.5 * x[5] + x[6] * x[6] + x[7].powi(3))
        }
        _ => 0.0,
    }
}

/// Draws a dataset and its ground truth.
pub fn generate(config: &SimConfig, rng: &RngStream) -> Result<(Dataset, GroundTruth)> {
    config.validate()?;
    let (n, p) = (config.n, config.p);
    let mut feat_rng = rng.child(tags::FEATURES, 0).generator();
    let mut noise_rng = rng.child(tags::NOISE, 0).generator();
    let normal = |g: &mut rand_chacha::ChaCha8Rng| -> f64 { g.sample(StandardNormal) };

    let mut columns = vec![vec![0.0; n]; p];
    let mut y = vec![0.0; n];
    if config.model == SimModel::Chain {
        for i in 0..n {
            let x1 = normal(&mut feat_rng);
            let x2 = x1 + normal(&mut feat_rng);
            let x3 = x2 + normal(&mut feat_rng);
            columns[0][i] = x1;
            columns[1][i] = x2;
            columns[2][i] = x3;
            for col in columns.iter_mut().skip(3) {
                col[i] = normal(&mut feat_rng);
            }
            y[i] = x3 + normal(&mut noise_rng);
        }
    } else {
        let l = cholesky_factor(&config.correlation())?;
        let base = config.model.base();
        let w = config.model.pattern_width();
        let noise_sd = if base == SimModel::D { 0.1 } else { 1.0 };
        let mut z = vec![0.0; p];
        let mut row = vec![0.0; p];
        for i in 0..n {
            for v in z.iter_mut() {
                *v = normal(&mut feat_rng);
            }
            for a in 0..p {
                let mut acc = 0.0;
                for b in 0..=a {
                    acc += l[(a, b)] * z[b];
                }
                row[a] = acc;
                columns[a][i] = acc;
            }
            let s: f64 = (0..config.repeat_factor)
                .map(|r| signal(base, &row[r * w..r * w + w]))
                .sum();
            y[i] = s + noise_sd * normal(&mut noise_rng);
        }
    }
    let data = Dataset::new(columns, default_names(p), y)?;
    Ok((data, config.support()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn model_a_correlation() {
        let cfg = SimConfig::new(SimModel::A, 3000, 1);
        let (d, _) = generate(&cfg, &RngStream::new(1)).unwrap();
        let r = corr(d.column(2), d.column(3));
        assert!((r - 0.5).abs() < 0.05, "corr {r}");
    }

    #[test]
    fn chain_response_variance() {
        let cfg = SimConfig::new(SimModel::Chain, 100_000, 3);
        let (d, truth) = generate(&cfg, &RngStream::new(3)).unwrap();
        let y = d.response();
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let v = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (y.len() - 1) as f64;
        assert!((v - 4.0).abs() < 0.1, "var {v}");
        assert_eq!(truth.support, [2]);
    }

    #[test]
    fn repeat_factor_doubles_support() {
        for m in [SimModel::A, SimModel::B, SimModel::C, SimModel::D] {
            let one = SimConfig::new(m, 10, 0).with_p(40).support();
            let two = SimConfig::new(m, 10, 0).with_p(40).with_repeat(2).support();
            assert_eq!(two.support.len(), 2 * one.support.len());
        }
        assert_eq!(
            SimConfig::new(SimModel::C, 10, 0).support().support,
            (0..10).collect::<Vec<_>>()
        );
        assert!(SimConfig::new(SimModel::Null, 10, 0).support().support.is_empty());
    }

    #[test]
    fn factorization_round_trip() {
        for m in [
            SimModel::A,
            SimModel::B,
            SimModel::C,
            SimModel::D,
            SimModel::HighdimNonlinear,
        ] {
            let cfg = SimConfig::new(m, 10, 0);
            let sigma = cfg.correlation();
            let l = cholesky_factor(&sigma).unwrap();
            let back = &l * l.transpose();
            let err = (back - &sigma).abs().max();
            assert!(err < 1e-12, "{m:?}: {err}");
        }
    }

    #[test]
    fn undersized_p_rejected() {
        assert!(generate(&SimConfig::new(SimModel::A, 10, 0).with_p(7), &RngStream::new(0)).is_err());
        assert!(generate(
            &SimConfig::new(SimModel::A, 10, 0).with_p(30).with_repeat(4),
            &RngStream::new(0)
        )
        .is_err());
        assert!(SimConfig::new(SimModel::Chain, 10, 0)
            .with_repeat(2)
            .validate()
            .is_err());
    }

    #[test]
    fn model_names_parse() {
        for m in [
            SimModel::A,
            SimModel::B,
            SimModel::C,
            SimModel::D,
            SimModel::Chain,
            SimModel::Null,
            SimModel::HighdimLinear,
            SimModel::HighdimNonlinear,
        ] {
            assert_eq!(SimModel::parse(m.name()).unwrap(), m);
        }
        assert!(SimModel::parse("e").is_err());
    }

    /// The support is exactly the set of features the response depends on:
    /// perturbing a support feature moves the signal, perturbing any other does not.
    #[test]
    fn support_matches_formula_structurally() {
        for m in [SimModel::A, SimModel::B, SimModel::C, SimModel::D] {
            let cfg = SimConfig::new(m, 10, 0).with_p(24).with_repeat(2);
            let w = m.pattern_width();
            let truth = cfg.support();
            let total = |r: &[f64]| (0..2).map(|k| signal(m, &r[k * w..k * w + w])).sum::<f64>();
            let mut g = RngStream::new(5).generator();
            let rows: Vec<Vec<f64>> = (0..50)
                .map(|_| (0..24).map(|_| g.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            for j in 0..24 {
                // moving x_j to its negation crosses every gate at zero
                let changed = rows.iter().any(|row| {
                    let mut moved = row.clone();
                    moved[j] *= -1.3;
                    (total(&moved) - total(row)).abs() > 1e-12
                });
                assert_eq!(changed, truth.support.contains(&j), "{m:?} feature {j}");
            }
        }
    }
}
