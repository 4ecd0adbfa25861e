//! Synthetic functional data: zero-mean Gaussian processes observed at
//! random locations with additive noise, plus their closed-form second
//! moments.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smoother::FunctionalDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    BrownianMotion,
    BrownianBridge,
    IntegratedBrownianMotion,
    OrnsteinUhlenbeck { theta: f64, sigma: f64 },
}

impl Process {
    pub fn ornstein_uhlenbeck(theta: f64, sigma: f64) -> Result<Self> {
        for (name, v) in [("theta_ou", theta), ("sigma_ou", sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        Ok(Self::OrnsteinUhlenbeck { theta, sigma })
    }

    /// `E[Y(z1) Y(z2)]`; the processes are zero-mean, so this is also the
    /// covariance.
    pub fn second_moment(&self, z1: f64, z2: f64) -> f64 {
        let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
        match *self {
            Self::BrownianMotion => lo,
            Self::BrownianBridge => lo - z1 * z2,
            Self::IntegratedBrownianMotion => hi * lo * lo / 2.0 - lo * lo * lo / 6.0,
            Self::OrnsteinUhlenbeck { theta, sigma } => {
                sigma * sigma * ((-theta * (z1 - z2).abs()).exp() - (-theta * (z1 + z2)).exp())
                    / (2.0 * theta)
            }
        }
    }

    pub fn covariance_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        let r = points.len();
        let mut c = DMatrix::zeros(r, r);
        for j in 0..r {
            for i in 0..=j {
                let v = self.second_moment(points[i], points[j]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BrownianMotion => write!(f, "bm"),
            Self::BrownianBridge => write!(f, "bb"),
            Self::IntegratedBrownianMotion => write!(f, "ibm"),
            Self::OrnsteinUhlenbeck { theta, sigma } => write!(f, "ou:{theta}:{sigma}"),
        }
    }
}

impl FromStr for Process {
    type Err = Error;

    /// Parses `bm`, `bb`, `ibm` or `ou:θ:σ`.
    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: String| Error::Parse {
            input: s.to_string(),
            reason,
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["bm"] => Ok(Self::BrownianMotion),
            ["bb"] => Ok(Self::BrownianBridge),
            ["ibm"] => Ok(Self::IntegratedBrownianMotion),
            ["ou", theta, sigma] => {
                let theta = theta.parse::<f64>().map_err(|e| err(e.to_string()))?;
                let sigma = sigma.parse::<f64>().map_err(|e| err(e.to_string()))?;
                Self::ornstein_uhlenbeck(theta, sigma)
            }
            _ => Err(err("expected bm, bb, ibm or ou:<theta>:<sigma>".into())),
        }
    }
}

/// Full description of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub process: Process,
    /// Standard deviation of the additive observation noise.
    pub noise: f64,
    /// Observation count `r_i` per function; its length is `n`.
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl ProcessSpec {
    /// `n` functions each observed at `r` points.
    pub fn uniform(process: Process, noise: f64, n: usize, r: usize, seed: u64) -> Self {
        Self {
            process,
            noise,
            counts: vec![r; n],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("must be nonnegative, got {}", self.noise),
            });
        }
        if self.counts.is_empty() || self.counts.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "r",
                reason: "need at least one function and one observation per function".into(),
            });
        }
        if let Process::OrnsteinUhlenbeck { theta, sigma } = self.process {
            Process::ornstein_uhlenbeck(theta, sigma)?;
        }
        Ok(())
    }

    /// Second moment of the underlying process (noise excluded).
    pub fn true_second_moment(&self, z1: f64, z2: f64) -> f64 {
        self.process.second_moment(z1, z2)
    }
}

/// Per-function RNG stream: functions are independent of `n` and of each other.
fn function_rng(seed: u64, function: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(function as u64);
    rng
}

/// Relative pivot size below which a covariance direction counts as degenerate.
const PIVOT_TOL: f64 = 1e-12;

/// Lower-triangular `L` with `L Lᵀ = C` for positive semidefinite `C`.
///
/// Pivots below `PIVOT_TOL · max diag` are treated as exact zeros and their
/// column is dropped, so degenerate points (a Brownian motion at the origin,
/// repeated locations) are reproduced exactly. Returns `None` when a pivot
/// is clearly negative.
fn semidefinite_cholesky(c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let r = c.nrows();
    let scale = (0..r).map(|i| c[(i, i)].abs()).fold(0.0, f64::max);
    let tol = PIVOT_TOL * scale;
    let mut l = DMatrix::<f64>::zeros(r, r);
    for j in 0..r {
        let mut d = c[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -1e3 * tol - f64::MIN_POSITIVE {
            return None;
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..r {
            let mut s = c[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}

/// Draws one path of `process` at `points` plus `N(0, noise²)` noise.
/// Repeated points share one path value.
pub fn sample_path<R: Rng + ?Sized>(
    process: &Process,
    noise: f64,
    points: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut distinct: Vec<f64> = points.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let l = semidefinite_cholesky(&process.covariance_matrix(&distinct)).ok_or_else(|| {
        Error::SolveFailed("process covariance is not positive semidefinite".into())
    })?;
    let z = DVector::from_fn(distinct.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let path = l * z;
    Ok(points
        .iter()
        .map(|x| {
            let at = distinct
                .binary_search_by(|d| d.total_cmp(x))
                .expect("point present in its own dedup");
            let eps: f64 = rng.sample(StandardNormal);
            path[at] + noise * eps
        })
        .collect())
}

fn sample_function(spec: &ProcessSpec, i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = function_rng(spec.seed, i);
    let r = spec.counts[i];
    let mut last_err = None;
    // one resample of the design is allowed before giving up
    for _ in 0..2 {
        let mut xs: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        match sample_path(&spec.process, spec.noise, &xs, &mut rng) {
            Ok(ys) => return Ok((xs, ys)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("loop ran"))
}

/// Simulates a dataset: i.i.d. uniform locations on `[0, 1]`, sorted within
/// each function, exact joint-Gaussian path values, additive noise.
/// Bitwise deterministic for a fixed spec.
pub fn sample_dataset(spec: &ProcessSpec) -> Result<FunctionalDataset> {
    spec.validate()?;
    let n = spec.counts.len();
    #[cfg(feature = "parallel")]
    let draws: Vec<Result<(Vec<f64>, Vec<f64>)>> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| sample_function(spec, i))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let draws: Vec<Result<(Vec<f64>, Vec<f64>)>> =
        (0..n).map(|i| sample_function(spec, i)).collect();

    let mut locations = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for d in draws {
        let (xs, ys) = d?;
        locations.push(xs);
        values.push(ys);
    }
    FunctionalDataset::new(locations, values)
}

/// Regular grid `{(k - 1) / m : k = 1..m}` on `[0, 1)`.
pub fn regular_grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| k as f64 / m as f64).collect()
}
