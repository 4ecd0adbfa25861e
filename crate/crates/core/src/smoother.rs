//! Mean estimation, tensorized covariance smoothing, grid evaluation and
//! functional PCA.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::blockops::{
    diag_elim_in_place, symmetric_offdiag_projection, BlockDiagMatrix, BlockLayout, GramMatrix,
    LazyKhatriOperator,
};
use crate::error::{Error, Result};
use crate::kernels::{FrameMatrix, Kernel};
use crate::rek::{rek_solve_observed, DiagonalElimination, SolveReport, SolverConfig};

/// Values `Y_ij` observed at locations `X_ij`, one block per function.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDataset {
    layout: Arc<BlockLayout>,
    locations: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl FunctionalDataset {
    pub fn new(locations: Vec<Vec<f64>>, values: Vec<Vec<f64>>) -> Result<Self> {
        if locations.len() != values.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} location lists but {} value lists",
                locations.len(),
                values.len()
            )));
        }
        let layout = BlockLayout::new(locations.iter().map(Vec::len).collect())?;
        for (block, (xs, ys)) in locations.iter().zip(&values).enumerate() {
            if xs.len() != ys.len() {
                return Err(Error::BlockLength {
                    block,
                    expected: xs.len(),
                    found: ys.len(),
                });
            }
            if xs.iter().chain(ys).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset"));
            }
        }
        Ok(Self {
            layout: Arc::new(layout),
            locations,
            values,
        })
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn locations(&self) -> &[Vec<f64>] {
        &self.locations
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.values.concat()
    }

    pub fn flat_locations(&self) -> Vec<f64> {
        self.locations.concat()
    }

    pub fn gram(&self, kernel: &Kernel) -> Result<GramMatrix> {
        kernel.gram(&self.layout, &self.locations)
    }

    pub fn frame(&self, kernel: &Kernel, grid: &[f64]) -> Result<FrameMatrix> {
        kernel.frame(&self.layout, &self.locations, grid)
    }

    /// Same locations, new values (flat, in layout order).
    pub fn with_flat_values(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.layout.total() {
            return Err(Error::DimensionMismatch {
                expected: self.layout.total(),
                found: flat.len(),
            });
        }
        let values = (0..self.layout.n_blocks())
            .map(|i| flat[self.layout.range(i)].to_vec())
            .collect();
        Self::new(self.locations.clone(), values)
    }
}

/// Ridge-regularized kernel mean estimate `μ̂ = Σ â_ij k_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFit {
    pub coefficients: DVector<f64>,
    pub ridge: f64,
    /// `‖(K + νI) â − y‖` at fit time.
    pub residual_norm: f64,
}

impl MeanFit {
    /// `μ̂` on the grid of a frame matrix, `Fᵀ â`.
    pub fn evaluate(&self, frame: &FrameMatrix) -> Result<DVector<f64>> {
        check_len(frame.matrix().nrows(), self.coefficients.len())?;
        Ok(frame.matrix().tr_mul(&self.coefficients))
    }

    /// `μ̂` at the observation locations, `K â`.
    pub fn fitted(&self, gram: &GramMatrix) -> Result<DVector<f64>> {
        check_len(gram.matrix().nrows(), self.coefficients.len())?;
        Ok(gram.matrix() * &self.coefficients)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Fit of the raw second moment `E[Y ⊗ Y]`.
    SecondMoment,
    /// Fit on observations centered by an estimated mean.
    CenteredCovariance,
}

/// Smoothed second-moment (or covariance) tensor in block-diagonal form.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFit {
    /// `B̂`: symmetric, zero-diagonal blocks.
    pub coefficients: BlockDiagMatrix,
    pub ridge: f64,
    pub report: SolveReport,
    pub mode: CovarianceMode,
}

impl CovarianceFit {
    pub fn layout(&self) -> &Arc<BlockLayout> {
        self.coefficients.layout()
    }
}

/// Spectral decomposition `Σ̂ = Σ_l λ_l φ_l ⊗ φ_l` with `φ_l = Σ u^l_ij k_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcaResult {
    /// Descending by signed value.
    pub eigenvalues: Vec<f64>,
    /// `R × q` coefficient matrix `U`; satisfies `UᵀKU = I_q`.
    pub coefficients: DMatrix<f64>,
}

impl FpcaResult {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenfunctions on the frame's grid: `m × q` matrix `Fᵀ U`.
    pub fn eigenfunctions(&self, frame: &FrameMatrix) -> Result<DMatrix<f64>> {
        check_len(frame.matrix().nrows(), self.coefficients.nrows())?;
        Ok(frame.matrix().tr_mul(&self.coefficients))
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn check_gram(data: &FunctionalDataset, gram: &GramMatrix) -> Result<()> {
    if **gram.layout() == **data.layout() {
        Ok(())
    } else {
        Err(Error::LayoutMismatch(format!(
            "gram layout {:?} vs data layout {:?}",
            gram.layout().sizes(),
            data.layout().sizes()
        )))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be positive and finite, got {v}"),
        })
    }
}

pub fn fit_mean(data: &FunctionalDataset, kernel: &Kernel, nu: f64) -> Result<MeanFit> {
    let gram = data.gram(kernel)?;
    fit_mean_with_gram(data, &gram, nu)
}

/// Solves `(K + νI) â = y` by Cholesky factorization.
pub fn fit_mean_with_gram(data: &FunctionalDataset, gram: &GramMatrix, nu: f64) -> Result<MeanFit> {
    check_positive("nu", nu)?;
    check_gram(data, gram)?;
    let y = DVector::from_vec(data.flat_values());
    let mut system = gram.matrix().clone();
    for d in 0..system.nrows() {
        system[(d, d)] += nu;
    }
    let chol = system
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolveFailed("K + νI is not numerically positive definite".into()))?;
    let coefficients = chol.solve(&y);
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolveFailed("non-finite mean coefficients".into()));
    }
    let residual_norm = (&system * &coefficients - &y).norm();
    Ok(MeanFit {
        coefficients,
        ridge: nu,
        residual_norm,
    })
}

pub fn fit_second_moment(
    data: &FunctionalDataset,
    kernel: &Kernel,
    eta: f64,
    cfg: &SolverConfig,
    initial: Option<&BlockDiagMatrix>,
) -> Result<CovarianceFit> {
    let gram = data.gram(kernel)?;
    fit_second_moment_with_gram(data, &gram, eta, cfg, initial)
}

/// Tensorized restricted Krylov smoothing of the second moment.
///
/// Minimizes `½⟨B, (K⊙K + ηI) B⟩ − ⟨B, diag[y_i y_iᵀ]⟩` over symmetric
/// zero-diagonal block-diagonal `B`, starting from the projection of
/// `initial` (zero when absent).
pub fn fit_second_moment_with_gram(
    data: &FunctionalDataset,
    gram: &GramMatrix,
    eta: f64,
    cfg: &SolverConfig,
    initial: Option<&BlockDiagMatrix>,
) -> Result<CovarianceFit> {
    solve_tensorized(data, gram, eta, cfg, initial, CovarianceMode::SecondMoment)
}

fn solve_tensorized(
    data: &FunctionalDataset,
    gram: &GramMatrix,
    eta: f64,
    cfg: &SolverConfig,
    initial: Option<&BlockDiagMatrix>,
    mode: CovarianceMode,
) -> Result<CovarianceFit> {
    check_positive("eta", eta)?;
    check_gram(data, gram)?;
    let layout = data.layout().clone();
    layout.require_pairs()?;

    let mut rhs = BlockDiagMatrix::outer_products(layout.clone(), &data.flat_values())?;
    diag_elim_in_place(&mut rhs);

    let x0 = match initial {
        Some(b0) => {
            rhs.check_layout(b0)?;
            symmetric_offdiag_projection(b0)
        }
        None => BlockDiagMatrix::zeros(layout),
    };

    let op = LazyKhatriOperator::new(gram, eta)?;
    let (coefficients, report) =
        rek_solve_observed(&op, &DiagonalElimination, &rhs, &x0, cfg, |state| {
            debug_assert!(
                state.x.is_symmetric() && state.x.max_abs_diagonal() == 0.0,
                "iterate {} left the symmetric zero-diagonal range",
                state.k
            );
        })?;

    Ok(CovarianceFit {
        coefficients,
        ridge: eta,
        report,
        mode,
    })
}

/// Centers the data by a kernel mean estimate, then smooths the covariance.
pub fn fit_covariance_centered(
    data: &FunctionalDataset,
    kernel: &Kernel,
    nu: f64,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<(MeanFit, CovarianceFit)> {
    let gram = data.gram(kernel)?;
    fit_covariance_centered_with_gram(data, &gram, nu, eta, cfg)
}

pub fn fit_covariance_centered_with_gram(
    data: &FunctionalDataset,
    gram: &GramMatrix,
    nu: f64,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<(MeanFit, CovarianceFit)> {
    let mean = fit_mean_with_gram(data, gram, nu)?;
    let fitted = mean.fitted(gram)?;
    let centered: Vec<f64> = data
        .flat_values()
        .iter()
        .zip(fitted.iter())
        .map(|(y, m)| y - m)
        .collect();
    let centered = data.with_flat_values(&centered)?;
    let fit = solve_tensorized(
        &centered,
        gram,
        eta,
        cfg,
        None,
        CovarianceMode::CenteredCovariance,
    )?;
    Ok((mean, fit))
}

/// `Γ̂ = Fᵀ B̂ F` on the frame's grid, minus `(Fᵀâ)(Fᵀâ)ᵀ` when a mean is
/// supplied for a raw second-moment fit (plug-in covariance).
pub fn evaluate_on_grid(
    fit: &CovarianceFit,
    frame: &FrameMatrix,
    mean: Option<&MeanFit>,
) -> Result<DMatrix<f64>> {
    let layout = fit.layout();
    let f = frame.matrix();
    check_len(layout.total(), f.nrows())?;
    let m = f.ncols();
    let mut surface = DMatrix::zeros(m, m);
    let mut scratch = DMatrix::zeros(layout.max_size(), m);
    for i in 0..layout.n_blocks() {
        let ri = layout.size(i);
        let fi = f.rows(layout.offset(i), ri);
        let mut t = scratch.rows_mut(0, ri);
        t.gemm(1.0, &fit.coefficients.block(i), &fi, 0.0);
        surface.gemm_tr(1.0, &fi, &t, 1.0);
    }
    if let (Some(mean), CovarianceMode::SecondMoment) = (mean, fit.mode) {
        let mu = mean.evaluate(frame)?;
        surface.ger(-1.0, &mu, &mu, 1.0);
    }
    symmetrize(&mut surface);
    Ok(surface)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for c in 0..n {
        for r in (c + 1)..n {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}

/// Effective coefficients `â⊙_eff`: entry `(j1 < j2)` of block `i` is
/// `2 B̂_i[j1, j2]`, ordered by `j2` then `j1` within each block.
pub fn recover_coefficients(fit: &CovarianceFit) -> Vec<f64> {
    let b = &fit.coefficients;
    let layout = b.layout();
    let mut out = Vec::with_capacity(layout.total_effective());
    for i in 0..layout.n_blocks() {
        let block = b.block(i);
        for j2 in 1..layout.size(i) {
            for j1 in 0..j2 {
                out.push(block[(j1, j2)] + block[(j2, j1)]);
            }
        }
    }
    out
}

/// `φ(B) = ½⟨B, (K⊙K + ηI) B⟩ − ⟨B, diag[y_i y_iᵀ]⟩`, the objective minimized
/// by [`fit_second_moment_with_gram`].
pub fn second_moment_objective(
    data: &FunctionalDataset,
    gram: &GramMatrix,
    eta: f64,
    b: &BlockDiagMatrix,
) -> Result<f64> {
    check_gram(data, gram)?;
    let op = LazyKhatriOperator::new(gram, eta)?;
    let sb = op.apply(b)?;
    let rhs = BlockDiagMatrix::outer_products(data.layout().clone(), &data.flat_values())?;
    Ok(0.5 * b.frobenius_dot(&sb)? - b.frobenius_dot(&rhs)?)
}

/// Relative clamp below which Gram eigenvalues count as zero.
const GRAM_CLAMP: f64 = 1e-12;
/// Relative threshold below which FPCA eigenvalues are discarded.
const SPECTRUM_CUTOFF: f64 = 1e-10;

/// Functional PCA of the smoothed tensor through `K^{1/2} B̂ K^{1/2}`.
///
/// With a mean supplied for a raw second-moment fit the plug-in covariance
/// `B̂ − ââᵀ` is decomposed via a rank-one correction.
pub fn fpca(
    fit: &CovarianceFit,
    gram: &GramMatrix,
    mean: Option<&MeanFit>,
    truncate_negative: bool,
) -> Result<FpcaResult> {
    let layout = fit.layout();
    if **gram.layout() != **layout {
        return Err(Error::LayoutMismatch(format!(
            "gram layout {:?} vs fit layout {:?}",
            gram.layout().sizes(),
            layout.sizes()
        )));
    }
    let r = layout.total();

    let eig = SymmetricEigen::new(gram.matrix().clone());
    let lmax = eig.eigenvalues.max().max(0.0);
    let sqrt: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| if l > GRAM_CLAMP * lmax { l.sqrt() } else { 0.0 })
        .collect();
    let q_mat = &eig.eigenvectors;
    let half = scale_columns(q_mat, &sqrt) * q_mat.transpose();

    // K^{1/2} B̂, block column by block column
    let mut hb = DMatrix::zeros(r, r);
    for i in 0..layout.n_blocks() {
        let cols = layout.range(i);
        let ri = layout.size(i);
        let mut dst = hb.columns_mut(cols.start, ri);
        dst.gemm(
            1.0,
            &half.columns(cols.start, ri),
            &fit.coefficients.block(i),
            0.0,
        );
    }
    let mut m = hb * &half;
    if let (Some(mean), CovarianceMode::SecondMoment) = (mean, fit.mode) {
        check_len(r, mean.coefficients.len())?;
        let w = &half * &mean.coefficients;
        m.ger(-1.0, &w, &w, 1.0);
    }
    symmetrize(&mut m);

    let spec = SymmetricEigen::new(m);
    let max_abs = spec.eigenvalues.amax();
    let mut order: Vec<usize> = (0..r)
        .filter(|&l| {
            let lam = spec.eigenvalues[l];
            max_abs > 0.0
                && lam.abs() > SPECTRUM_CUTOFF * max_abs
                && (!truncate_negative || lam > 0.0)
        })
        .collect();
    order.sort_by(|&a, &b| {
        spec.eigenvalues[b]
            .total_cmp(&spec.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let eigenvalues: Vec<f64> = order.iter().map(|&l| spec.eigenvalues[l]).collect();
    let v = DMatrix::from_fn(r, order.len(), |row, c| spec.eigenvectors[(row, order[c])]);
    // U = (K^{1/2})† V through the clamped eigenbasis
    let inv_sqrt: Vec<f64> = sqrt
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    let coefficients = scale_columns(q_mat, &inv_sqrt) * (q_mat.tr_mul(&v));
    Ok(FpcaResult {
        eigenvalues,
        coefficients,
    })
}

fn scale_columns(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, &f) in out.column_iter_mut().zip(s) {
        col *= f;
    }
    out
}
