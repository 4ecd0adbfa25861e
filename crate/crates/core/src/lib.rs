//! Covariance smoothing for sparsely observed random functions.
//!
//! The second-moment tensor of functional data is estimated in a
//! reproducing kernel Hilbert space by solving a restricted, Khatri–Rao
//! structured normal equation with a tensorized conjugate-gradient method.
//! The Khatri–Rao matrix is never formed: the solver iterates on
//! block-diagonal matrices and only ever multiplies Gram blocks.
//!
//! - [`kernels`]: kernels, Gram and frame matrices
//! - [`blockops`]: block-diagonal algebra, the lazy Khatri–Rao operator
//! - [`rek`]: the generic restricted Krylov solver
//! - [`smoother`]: mean and covariance fits, grid evaluation, FPCA
//! - [`simulate`]: synthetic data from Gaussian processes

pub mod blockops;
pub mod error;
pub mod kernels;
#[cfg(feature = "oracle")]
#[doc(hidden)]
pub mod oracle;
pub mod rek;
pub mod simulate;
pub mod smoother;

pub use blockops::{BlockDiagMatrix, BlockLayout, GramMatrix, LazyKhatriOperator};
pub use error::{Error, Result};
pub use kernels::{FrameMatrix, Kernel};
pub use rek::{SolveReport, SolveStatus, SolverConfig};
pub use simulate::{Process, ProcessSpec};
pub use smoother::{CovarianceFit, CovarianceMode, FpcaResult, FunctionalDataset, MeanFit};
