//! Block-structured linear algebra for the tensorized solver.
//!
//! Layouts, block-diagonal matrices stored in diagonal-vectorized form, the
//! block-partitioned Gram matrix, the lazy Khatri–Rao operator and
//! diagonal elimination.

mod blockdiag;
mod gram;
mod khatri;
mod layout;

pub use blockdiag::{
    diag_elim, diag_elim_in_place, frobenius_dot, symmetric_offdiag_projection, BlockDiagMatrix,
};
pub use gram::GramMatrix;
pub use khatri::LazyKhatriOperator;
pub use layout::BlockLayout;
