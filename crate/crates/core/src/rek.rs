//! Restricted Krylov (ReK) solver.
//!
//! Conjugate gradients confined to the range of an orthogonal projector `Π`:
//! minimizes `φ(x) = ½⟨x, Sx⟩ − ⟨b, x⟩` over `x ∈ range(Π)` for an operator
//! `S` that is positive definite on that range. In exact arithmetic the
//! iteration terminates in at most `rank(Π)` steps.
//!
//! The solver is generic over the vector type, so the same loop drives both
//! flat vectors and block-diagonal matrices under the Frobenius inner product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blockops::{diag_elim_in_place, BlockDiagMatrix, LazyKhatriOperator};
use crate::error::{Error, Result};

/// Minimal inner-product-space interface needed by the solver.
pub trait InnerProductSpace: Clone {
    fn dot(&self, other: &Self) -> f64;
    /// `self += alpha * x`
    fn axpy(&mut self, alpha: f64, x: &Self);
    /// `self = x + beta * self`
    fn xpay(&mut self, x: &Self, beta: f64);
}

impl InnerProductSpace for DVector<f64> {
    fn dot(&self, other: &Self) -> f64 {
        nalgebra::Matrix::dot(self, other)
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        for (a, b) in self.iter_mut().zip(x.iter()) {
            *a += alpha * b;
        }
    }

    fn xpay(&mut self, x: &Self, beta: f64) {
        for (a, b) in self.iter_mut().zip(x.iter()) {
            *a = b + beta * *a;
        }
    }
}

impl InnerProductSpace for BlockDiagMatrix {
    fn dot(&self, other: &Self) -> f64 {
        debug_assert!(self.same_layout(other));
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn axpy(&mut self, alpha: f64, x: &Self) {
        BlockDiagMatrix::axpy(self, alpha, x)
    }

    fn xpay(&mut self, x: &Self, beta: f64) {
        BlockDiagMatrix::xpay(self, x, beta)
    }
}

/// Symmetric linear map `S`, applied matrix-free.
pub trait LinearOperator<V> {
    /// Writes `S x` into `out`.
    fn apply_into(&self, x: &V, out: &mut V) -> Result<()>;
}

/// Orthogonal (idempotent, self-adjoint) projector `Π`.
pub trait Projector<V> {
    /// Replaces `v` by `Π v`.
    fn project(&self, v: &mut V);

    fn projected(&self, v: &V) -> V
    where
        V: Clone,
    {
        let mut out = v.clone();
        self.project(&mut out);
        out
    }
}

/// `Π = I`; reduces the solver to textbook conjugate gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProjector;

impl<V> Projector<V> for IdentityProjector {
    fn project(&self, _v: &mut V) {}
}

/// Explicit dense projection matrix.
#[derive(Debug, Clone)]
pub struct DenseProjector(pub DMatrix<f64>);

impl DenseProjector {
    /// Orthogonal projector onto the column span of `c`, `U_r U_rᵀ` from
    /// the thin SVD. Singular values below `1e-6·σ_max` count as zero.
    pub fn onto_columns(c: &DMatrix<f64>) -> Result<Self> {
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("constraint matrix"));
        }
        let svd = c.clone().svd(true, false);
        let u = svd
            .u
            .ok_or_else(|| Error::SolveFailed("SVD of the constraint matrix".into()))?;
        let cutoff = 1e-6 * svd.singular_values.max();
        let kept: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&j| svd.singular_values[j] > cutoff && svd.singular_values[j] > 0.0)
            .collect();
        let basis = u.select_columns(&kept);
        let p = &basis * basis.transpose();
        Ok(Self((&p + p.transpose()) * 0.5))
    }
}

impl Projector<DVector<f64>> for DenseProjector {
    fn project(&self, v: &mut DVector<f64>) {
        *v = &self.0 * &*v;
    }
}

impl LinearOperator<DVector<f64>> for DMatrix<f64> {
    fn apply_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) -> Result<()> {
        if self.ncols() != x.len() || self.nrows() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: x.len(),
            });
        }
        out.gemv(1.0, self, x, 0.0);
        Ok(())
    }
}

/// Zeroes the diagonal of every block. The orthogonal projection onto
/// zero-diagonal block-diagonals; on symmetric inputs it coincides with the
/// projection onto the range of the transposed elimination matrices.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiagonalElimination;

impl Projector<BlockDiagMatrix> for DiagonalElimination {
    fn project(&self, v: &mut BlockDiagMatrix) {
        diag_elim_in_place(v);
    }
}

impl LinearOperator<BlockDiagMatrix> for LazyKhatriOperator<'_> {
    fn apply_into(&self, x: &BlockDiagMatrix, out: &mut BlockDiagMatrix) -> Result<()> {
        LazyKhatriOperator::apply_into(self, x, out)
    }
}

/// Stopping and safety parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Threshold on the squared projected-residual norm `δ`.
    pub tol: f64,
    pub maxiter: usize,
    /// Abort when `δ > divergence_cap · δ_0`.
    pub divergence_cap: f64,
    /// Stop on `δ < tol · δ_0` instead of `δ < tol`.
    pub relative: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            maxiter: 500,
            divergence_cap: 1e12,
            relative: false,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_maxiter(mut self, maxiter: usize) -> Self {
        self.maxiter = maxiter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "tol",
                reason: format!("must be positive, got {}", self.tol),
            });
        }
        if self.maxiter == 0 {
            return Err(Error::InvalidParameter {
                name: "maxiter",
                reason: "must be at least 1".into(),
            });
        }
        if self.divergence_cap.is_nan() || self.divergence_cap <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "divergence_cap",
                reason: format!("must be positive, got {}", self.divergence_cap),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterReached,
    /// `δ` became non-finite or exceeded the divergence cap.
    Diverged,
    /// `⟨p, Sp⟩ <= 0`: the operator is not positive definite on the range.
    NonPositiveCurvature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Number of steps taken, `κ`.
    pub iterations: usize,
    /// `δ_0, δ_1, ..., δ_κ`: squared norms of the projected residuals.
    pub residual_trace: Vec<f64>,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn final_delta(&self) -> f64 {
        *self.residual_trace.last().expect("trace holds δ_0")
    }
}

/// Solver state handed to an observer, once per iterate.
#[derive(Debug)]
pub struct IterationState<'a, V> {
    pub k: usize,
    pub x: &'a V,
    /// Projected residual `Π r_k`.
    pub residual: &'a V,
    /// Search direction `p_k` about to be used; `None` on the terminal state.
    pub direction: Option<&'a V>,
    pub delta: f64,
}

/// Solves `min φ(x)` over `range(Π)` from the starting point `Π x0`.
pub fn rek_solve<V, S, P>(
    op: &S,
    proj: &P,
    b: &V,
    x0: &V,
    cfg: &SolverConfig,
) -> Result<(V, SolveReport)>
where
    V: InnerProductSpace,
    S: LinearOperator<V> + ?Sized,
    P: Projector<V> + ?Sized,
{
    rek_solve_observed(op, proj, b, x0, cfg, |_| {})
}

/// [`rek_solve`] with a callback invoked on every iterate `x_0, ..., x_κ`.
///
/// On `Diverged` and `NonPositiveCurvature` the returned `x` is the last
/// iterate whose residual passed the checks; the offending `δ` (if any) is
/// still recorded in the trace.
pub fn rek_solve_observed<V, S, P, F>(
    op: &S,
    proj: &P,
    b: &V,
    x0: &V,
    cfg: &SolverConfig,
    mut observe: F,
) -> Result<(V, SolveReport)>
where
    V: InnerProductSpace,
    S: LinearOperator<V> + ?Sized,
    P: Projector<V> + ?Sized,
    F: FnMut(&IterationState<'_, V>),
{
    cfg.validate()?;

    let mut x = x0.clone();
    proj.project(&mut x);

    // r = Π(b - S x), reusing v as scratch for S x
    let mut v = x.clone();
    op.apply_into(&x, &mut v)?;
    let mut r = b.clone();
    r.axpy(-1.0, &v);
    proj.project(&mut r);

    let mut p = r.clone();
    let mut delta_old = r.dot(&r);
    let delta0 = delta_old;
    let mut trace = vec![delta_old];
    if !delta0.is_finite() {
        return Err(Error::NonFinite("initial residual"));
    }
    let threshold = if cfg.relative {
        cfg.tol * delta0
    } else {
        cfg.tol
    };

    let mut k = 0;
    let finish = |status, k, trace| SolveReport {
        iterations: k,
        residual_trace: trace,
        status,
    };

    if delta0 == 0.0 || delta0 < threshold {
        observe(&IterationState {
            k,
            x: &x,
            residual: &r,
            direction: None,
            delta: delta_old,
        });
        return Ok((x, finish(SolveStatus::Converged, k, trace)));
    }

    while k < cfg.maxiter {
        observe(&IterationState {
            k,
            x: &x,
            residual: &r,
            direction: Some(&p),
            delta: delta_old,
        });

        op.apply_into(&p, &mut v)?;
        let curvature = p.dot(&v);
        if !curvature.is_finite() {
            return Ok((x, finish(SolveStatus::Diverged, k, trace)));
        }
        if curvature <= 0.0 {
            return Ok((x, finish(SolveStatus::NonPositiveCurvature, k, trace)));
        }
        let alpha = delta_old / curvature;

        r.axpy(-alpha, &v);
        proj.project(&mut r);
        let delta_new = r.dot(&r);
        trace.push(delta_new);
        k += 1;

        if !delta_new.is_finite() || delta_new > cfg.divergence_cap * delta0 {
            return Ok((x, finish(SolveStatus::Diverged, k, trace)));
        }

        x.axpy(alpha, &p);

        if delta_new < threshold {
            observe(&IterationState {
                k,
                x: &x,
                residual: &r,
                direction: None,
                delta: delta_new,
            });
            return Ok((x, finish(SolveStatus::Converged, k, trace)));
        }

        let beta = delta_new / delta_old;
        p.xpay(&r, beta);
        delta_old = delta_new;
    }

    observe(&IterationState {
        k,
        x: &x,
        residual: &r,
        direction: None,
        delta: delta_old,
    });
    Ok((x, finish(SolveStatus::MaxIterReached, k, trace)))
}

#[cfg(test)]
mod tests {
    use nalgebra::{dmatrix, dvector};

    use super::*;

    #[test]
    fn identity_system_solves_in_one_step() {
        let s = DMatrix::<f64>::identity(3, 3);
        let b = dvector![1.0, -2.0, 0.5];
        let (x, rep) = rek_solve(
            &s,
            &IdentityProjector,
            &b,
            &DVector::zeros(3),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.status, SolveStatus::Converged);
        assert_eq!(rep.residual_trace.len(), 2);
    }

    #[test]
    fn restricted_diagonal_example() {
        let s = dmatrix![1.0, 0.0; 0.0, 2.0];
        let proj = DenseProjector::onto_columns(&dmatrix![1.0; 0.0]).unwrap();
        let (x, rep) = rek_solve(
            &s,
            &proj,
            &dvector![3.0, 5.0],
            &DVector::zeros(2),
            &SolverConfig::default(),
        )
        .unwrap();
        assert!((x[0] - 3.0).abs() < 1e-14 && x[1].abs() < 1e-14);
        assert!(rep.converged());
    }

    #[test]
    fn converged_start_takes_zero_steps() {
        let s = DMatrix::<f64>::identity(2, 2);
        let b = dvector![1.0, 1.0];
        let (x, rep) = rek_solve(&s, &IdentityProjector, &b, &b, &SolverConfig::default()).unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.residual_trace, vec![0.0]);
        assert!(rep.converged());
    }

    #[test]
    fn starting_point_is_projected() {
        let s = DMatrix::<f64>::identity(2, 2);
        let proj = DenseProjector::onto_columns(&dmatrix![1.0; 0.0]).unwrap();
        let (x, _) = rek_solve(
            &s,
            &proj,
            &dvector![0.0, 0.0],
            &dvector![0.0, 7.0],
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(x, dvector![0.0, 0.0]);
    }

    #[test]
    fn indefinite_operator_is_detected() {
        let s = dmatrix![-1.0, 0.0; 0.0, 1.0];
        let (_, rep) = rek_solve(
            &s,
            &IdentityProjector,
            &dvector![1.0, 0.0],
            &DVector::zeros(2),
            &SolverConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.status, SolveStatus::NonPositiveCurvature);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn maxiter_is_reported() {
        let s = DMatrix::from_diagonal(&dvector![1.0, 10.0, 100.0]);
        let (_, rep) = rek_solve(
            &s,
            &IdentityProjector,
            &dvector![1.0, 1.0, 1.0],
            &DVector::zeros(3),
            &SolverConfig::default().with_maxiter(1),
        )
        .unwrap();
        assert_eq!(rep.status, SolveStatus::MaxIterReached);
        assert_eq!(rep.iterations, 1);
        assert_eq!(rep.residual_trace.len(), 2);
    }

    #[test]
    fn divergence_cap_keeps_last_finite_iterate() {
        let s = DMatrix::from_diagonal(&dvector![1.0, 1e8]);
        let cfg = SolverConfig {
            divergence_cap: 1.0,
            ..SolverConfig::default()
        };
        // the first step overshoots along the stiff direction, raising δ above δ_0
        let (x, rep) = rek_solve(
            &s,
            &IdentityProjector,
            &dvector![1.0, 1e-3],
            &DVector::zeros(2),
            &cfg,
        )
        .unwrap();
        assert_eq!(rep.status, SolveStatus::Diverged);
        assert_eq!(rep.iterations, 1);
        assert_eq!(x, DVector::zeros(2));
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig::default().with_tol(0.0);
        assert!(bad.validate().is_err());
        assert!(SolverConfig::default().with_maxiter(0).validate().is_err());
    }
}
