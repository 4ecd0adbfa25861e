//! Reproducing kernels and the Gram/frame matrices built from them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::blockops::{BlockLayout, GramMatrix};
use crate::error::{Error, Result};

/// Basis evaluation `z ↦ (φ_1(z), ..., φ_p(z))`, written into the slice.
pub type BasisFn = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// Kernel induced by a finite frame `φ_1..φ_p` and the pseudo-inverse `P†`
/// of its penalty inner-product matrix: `K(z1, z2) = φ(z1)ᵀ P† φ(z2)`.
#[derive(Clone)]
pub struct FrameKernel {
    basis: Arc<BasisFn>,
    penalty_pinv: DMatrix<f64>,
}

impl FrameKernel {
    /// `penalty_pinv` must be square and exactly symmetric.
    pub fn new(basis: Arc<BasisFn>, penalty_pinv: DMatrix<f64>) -> Result<Self> {
        if !penalty_pinv.is_square() || penalty_pinv.nrows() == 0 {
            return Err(Error::InvalidParameter {
                name: "penalty_pinv",
                reason: format!(
                    "must be a nonempty square matrix, got {:?}",
                    penalty_pinv.shape()
                ),
            });
        }
        if penalty_pinv != penalty_pinv.transpose() {
            return Err(Error::InvalidParameter {
                name: "penalty_pinv",
                reason: "must be symmetric".into(),
            });
        }
        Ok(Self {
            basis,
            penalty_pinv,
        })
    }

    pub fn dim(&self) -> usize {
        self.penalty_pinv.nrows()
    }

    pub fn penalty_pinv(&self) -> &DMatrix<f64> {
        &self.penalty_pinv
    }

    fn eval(&self, z1: f64, z2: f64) -> f64 {
        let p = self.dim();
        let mut f1 = vec![0.0; p];
        let mut f2 = vec![0.0; p];
        (self.basis)(z1, &mut f1);
        (self.basis)(z2, &mut f2);
        // pairwise-symmetric summation keeps eval(z1, z2) == eval(z2, z1) bitwise
        let m = &self.penalty_pinv;
        let mut acc = 0.0;
        for a in 0..p {
            acc += m[(a, a)] * (f1[a] * f2[a]);
            for b in (a + 1)..p {
                acc += m[(a, b)] * (f1[a] * f2[b] + f1[b] * f2[a]);
            }
        }
        acc
    }
}

impl fmt::Debug for FrameKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameKernel")
            .field("dim", &self.dim())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Kernel {
    /// `exp(-γ (z1 - z2)²)`
    Gaussian {
        gamma: f64,
    },
    /// `exp(-γ |z1 - z2|)`
    Laplacian {
        gamma: f64,
    },
    /// `z1 z2`
    Linear,
    /// `(z1 z2 + c)^d`
    Polynomial {
        degree: u32,
        offset: f64,
    },
    PrecomputedFrame(FrameKernel),
}

impl Kernel {
    pub fn gaussian(gamma: f64) -> Result<Self> {
        check_scale(gamma)?;
        Ok(Self::Gaussian { gamma })
    }

    pub fn laplacian(gamma: f64) -> Result<Self> {
        check_scale(gamma)?;
        Ok(Self::Laplacian { gamma })
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParameter {
                name: "degree",
                reason: "must be at least 1".into(),
            });
        }
        if !offset.is_finite() {
            return Err(Error::InvalidParameter {
                name: "offset",
                reason: format!("must be finite, got {offset}"),
            });
        }
        Ok(Self::Polynomial { degree, offset })
    }

    pub fn eval(&self, z1: f64, z2: f64) -> f64 {
        match self {
            Self::Gaussian { gamma } => {
                let d = z1 - z2;
                (-gamma * d * d).exp()
            }
            Self::Laplacian { gamma } => (-gamma * (z1 - z2).abs()).exp(),
            Self::Linear => z1 * z2,
            Self::Polynomial { degree, offset } => (z1 * z2 + offset).powi(*degree as i32),
            Self::PrecomputedFrame(fk) => fk.eval(z1, z2),
        }
    }

    /// Dense Gram matrix over all observation locations, ordered by the
    /// layout's flat index. Only the upper triangle is evaluated; the lower
    /// one is mirrored.
    pub fn gram(&self, layout: &Arc<BlockLayout>, locations: &[Vec<f64>]) -> Result<GramMatrix> {
        let points = flatten_locations(layout, locations)?;
        let r = points.len();
        let mut data = vec![0.0; r * r];
        let fill_column = |c: usize, col: &mut [f64]| {
            for (row, slot) in col.iter_mut().enumerate().take(c + 1) {
                *slot = self.eval(points[row], points[c]);
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            data.par_chunks_mut(r)
                .enumerate()
                .for_each(|(c, col)| fill_column(c, col));
        }
        #[cfg(not(feature = "parallel"))]
        for (c, col) in data.chunks_mut(r).enumerate() {
            fill_column(c, col);
        }
        let mut matrix = DMatrix::from_vec(r, r, data);
        for c in 0..r {
            for row in (c + 1)..r {
                matrix[(row, c)] = matrix[(c, row)];
            }
        }
        Ok(GramMatrix::from_symmetric_unchecked(layout.clone(), matrix))
    }

    /// Frame matrix `F[idx(i, j), k] = K(z_k, X_ij)` of shape `R × m`.
    pub fn frame(
        &self,
        layout: &Arc<BlockLayout>,
        locations: &[Vec<f64>],
        grid: &[f64],
    ) -> Result<FrameMatrix> {
        if grid.is_empty() {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "must contain at least one point".into(),
            });
        }
        let points = flatten_locations(layout, locations)?;
        let r = points.len();
        let mut data = vec![0.0; r * grid.len()];
        let fill_column = |k: usize, col: &mut [f64]| {
            for (slot, &x) in col.iter_mut().zip(&points) {
                *slot = self.eval(grid[k], x);
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            data.par_chunks_mut(r)
                .enumerate()
                .for_each(|(k, col)| fill_column(k, col));
        }
        #[cfg(not(feature = "parallel"))]
        for (k, col) in data.chunks_mut(r).enumerate() {
            fill_column(k, col);
        }
        Ok(FrameMatrix {
            layout: layout.clone(),
            grid: grid.to_vec(),
            matrix: DMatrix::from_vec(r, grid.len(), data),
        })
    }
}

fn check_scale(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("must be positive and finite, got {gamma}"),
        })
    }
}

/// Concatenates per-block location lists after checking their lengths.
pub(crate) fn flatten_locations(layout: &BlockLayout, locations: &[Vec<f64>]) -> Result<Vec<f64>> {
    if locations.len() != layout.n_blocks() {
        return Err(Error::LayoutMismatch(format!(
            "{} location lists for {} blocks",
            locations.len(),
            layout.n_blocks()
        )));
    }
    let mut flat = Vec::with_capacity(layout.total());
    for (block, xs) in locations.iter().enumerate() {
        if xs.len() != layout.size(block) {
            return Err(Error::BlockLength {
                block,
                expected: layout.size(block),
                found: xs.len(),
            });
        }
        flat.extend_from_slice(xs);
    }
    Ok(flat)
}

/// Kernel evaluations between observation locations and an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    layout: Arc<BlockLayout>,
    grid: Vec<f64>,
    matrix: DMatrix<f64>,
}

impl FrameMatrix {
    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// The `R × m` matrix; column `k` is the frame vector `f(z_k)`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { gamma } => write!(f, "gaussian:{gamma}"),
            Self::Laplacian { gamma } => write!(f, "laplacian:{gamma}"),
            Self::Linear => write!(f, "linear"),
            Self::Polynomial { degree, offset } => write!(f, "poly:{degree}:{offset}"),
            Self::PrecomputedFrame(fk) => write!(f, "frame:{}", fk.dim()),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// Parses `gaussian:γ`, `laplacian:γ`, `linear` or `poly:d:c`.
    fn from_str(s: &str) -> Result<Self> {
        let parse_err = |reason: &str| Error::Parse {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(&e.to_string()))
        };
        match parts.as_slice() {
            [name, g] if name.eq_ignore_ascii_case("gaussian") => Self::gaussian(num(g)?),
            [name, g] if name.eq_ignore_ascii_case("laplacian") => Self::laplacian(num(g)?),
            [name] if name.eq_ignore_ascii_case("linear") => Ok(Self::Linear),
            [name, d, c] if name.eq_ignore_ascii_case("poly") => {
                let degree = d
                    .trim()
                    .parse::<u32>()
                    .map_err(|e| parse_err(&e.to_string()))?;
                Self::polynomial(degree, num(c)?)
            }
            _ => Err(parse_err(
                "expected gaussian:<gamma>, laplacian:<gamma>, linear or poly:<d>:<c>",
            )),
        }
    }
}
