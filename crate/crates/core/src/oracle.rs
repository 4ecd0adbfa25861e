//! Dense reference implementations used to cross-check the matrix-free
//! code paths. Everything here materializes the full tensorized system, so
//! it is only usable at small sizes.

use nalgebra::{DMatrix, DVector};

use crate::blockops::{BlockDiagMatrix, BlockLayout, GramMatrix};
use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// Largest `R⊙` the dense tensorized matrix is built for.
pub const MAX_DENSE_SQUARED: usize = 400;

/// 1-based position of the pair `(j1 < j2)` in the effective ordering
/// `(1,2), (1,3), (2,3), (1,4), …`.
pub fn idx_eff(j1: usize, j2: usize) -> usize {
    assert!(1 <= j1 && j1 < j2, "need 1 <= j1 < j2, got ({j1}, {j2})");
    j1 + (j2 - 1) * (j2 - 2) / 2
}

/// Elimination matrix `E_r` of shape `r(r-1)/2 × r²`: row `(j1, j2)` has
/// ones at the column-major positions of `(j1, j2)` and `(j2, j1)`.
pub fn build_elimination(r: usize) -> Result<DMatrix<f64>> {
    if r < 2 {
        return Err(Error::TooFewObservations { block: 0, found: r });
    }
    let mut e = DMatrix::zeros(r * (r - 1) / 2, r * r);
    for j2 in 2..=r {
        for j1 in 1..j2 {
            let row = idx_eff(j1, j2) - 1;
            e[(row, (j1 - 1) + (j2 - 1) * r)] = 1.0;
            e[(row, (j2 - 1) + (j1 - 1) * r)] = 1.0;
        }
    }
    Ok(e)
}

/// Block-diagonal `E = diag(E_1, …, E_n)` of shape `L × R⊙`.
pub fn block_elimination(layout: &BlockLayout) -> Result<DMatrix<f64>> {
    layout.require_pairs()?;
    let mut e = DMatrix::zeros(layout.total_effective(), layout.total_squared());
    for i in 0..layout.n_blocks() {
        let ei = build_elimination(layout.size(i))?;
        e.view_mut(
            (layout.effective_offset(i), layout.square_offset(i)),
            (ei.nrows(), ei.ncols()),
        )
        .copy_from(&ei);
    }
    Ok(e)
}

/// `Π = EᵀE / 2`.
pub fn projection_matrix(layout: &BlockLayout) -> Result<DMatrix<f64>> {
    let e = block_elimination(layout)?;
    Ok(e.transpose() * &e * 0.5)
}

fn guard(layout: &BlockLayout) -> Result<()> {
    let size = layout.total_squared();
    if size > MAX_DENSE_SQUARED {
        return Err(Error::SizeGuard {
            what: "dense tensorized matrix",
            size,
            limit: MAX_DENSE_SQUARED,
        });
    }
    Ok(())
}

/// Dense `K⊙K`: block `(i, i')` is `K_{ii'} ⊗ K_{ii'}`.
pub fn dense_khatri(gram: &GramMatrix) -> Result<DMatrix<f64>> {
    let layout = gram.layout();
    guard(layout)?;
    let mut out = DMatrix::zeros(layout.total_squared(), layout.total_squared());
    for i in 0..layout.n_blocks() {
        for ip in 0..layout.n_blocks() {
            let k = gram.block(i, ip).clone_owned();
            let kron = k.kronecker(&k);
            out.view_mut(
                (layout.square_offset(i), layout.square_offset(ip)),
                (kron.nrows(), kron.ncols()),
            )
            .copy_from(&kron);
        }
    }
    Ok(out)
}

/// Effective normal equations `E(K⊙K + ηI)Eᵀ â = 2E(y⊗y)`.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub elimination: DMatrix<f64>,
}

pub fn dense_system(gram: &GramMatrix, eta: f64, y: &[f64]) -> Result<DenseSystem> {
    let layout = gram.layout();
    if y.len() != layout.total() {
        return Err(Error::DimensionMismatch {
            expected: layout.total(),
            found: y.len(),
        });
    }
    let mut kk = dense_khatri(gram)?;
    for d in 0..kk.nrows() {
        kk[(d, d)] += eta;
    }
    let e = block_elimination(layout)?;
    let yy = BlockDiagMatrix::outer_products(layout.clone(), y)?;
    let yy = DVector::from_column_slice(yy.as_slice());
    Ok(DenseSystem {
        matrix: &e * kk * e.transpose(),
        rhs: &e * yy * 2.0,
        elimination: e,
    })
}

/// Solves the effective system by Cholesky, returning `â⊙_eff` and
/// `B̂ = odmat(Eᵀâ / 2)`.
pub fn dense_solve_effective(
    gram: &GramMatrix,
    eta: f64,
    y: &[f64],
) -> Result<(DVector<f64>, BlockDiagMatrix)> {
    let sys = dense_system(gram, eta, y)?;
    let a = sys
        .matrix
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolveFailed("effective system not positive definite".into()))?
        .solve(&sys.rhs);
    let b = sys.elimination.transpose() * &a * 0.5;
    let b = BlockDiagMatrix::odmat(b.as_slice().to_vec(), gram.layout().clone())?;
    Ok((a, b))
}

/// Minimizer of `½xᵀSx − bᵀx` over `range(C)`, via the reduced system
/// `CᵀSC z = Cᵀb` and `x = Cz`.
pub fn dense_restricted_solve(
    s: &DMatrix<f64>,
    c: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<DVector<f64>> {
    let reduced = c.transpose() * s * c;
    let eps = 1e-13 * reduced.amax().max(f64::MIN_POSITIVE);
    let pinv = reduced
        .pseudo_inverse(eps)
        .map_err(|e| Error::SolveFailed(e.to_string()))?;
    Ok(c * (pinv * (c.transpose() * b)))
}

/// Iterates and residual norms of textbook conjugate gradients.
#[derive(Debug, Clone)]
pub struct CgTrace {
    pub iterates: Vec<DVector<f64>>,
    pub deltas: Vec<f64>,
}

/// Unprojected conjugate gradients on `A x = b`, recorded step by step.
/// Stops once `rᵀr < tol` or after `maxiter` steps.
pub fn plain_cg(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: &DVector<f64>,
    tol: f64,
    maxiter: usize,
) -> CgTrace {
    let mut x = x0.clone();
    let mut r = b - a * &x;
    let mut p = r.clone();
    let mut delta = r.dot(&r);
    let mut trace = CgTrace {
        iterates: vec![x.clone()],
        deltas: vec![delta],
    };
    for _ in 0..maxiter {
        if delta < tol || delta == 0.0 {
            break;
        }
        let v = a * &p;
        let alpha = delta / p.dot(&v);
        x += alpha * &p;
        r -= alpha * &v;
        let new_delta = r.dot(&r);
        p = &r + (new_delta / delta) * &p;
        delta = new_delta;
        trace.iterates.push(x.clone());
        trace.deltas.push(delta);
    }
    trace
}

/// `Γ̂(z1, z2) = Σ_i Σ_{j1,j2} B_i[j1, j2] k(x_ij1, z1) k(x_ij2, z2)`,
/// summed term by term.
pub fn explicit_surface(
    b: &BlockDiagMatrix,
    kernel: &Kernel,
    locations: &[Vec<f64>],
    z1: f64,
    z2: f64,
) -> f64 {
    let mut total = 0.0;
    for (i, xs) in locations.iter().enumerate() {
        let block = b.block(i);
        for (j1, &x1) in xs.iter().enumerate() {
            for (j2, &x2) in xs.iter().enumerate() {
                total += block[(j1, j2)] * kernel.eval(x1, z1) * kernel.eval(x2, z2);
            }
        }
    }
    total
}
