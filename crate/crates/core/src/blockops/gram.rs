use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};

use crate::blockops::BlockLayout;
use crate::error::{Error, Result};

/// Dense `R × R` kernel matrix, block-partitioned by a [`BlockLayout`].
///
/// Always exactly symmetric: constructors either fill one triangle and
/// mirror it, or symmetrize their input.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    layout: Arc<BlockLayout>,
    matrix: DMatrix<f64>,
}

impl GramMatrix {
    /// Wraps a dense matrix, replacing it by `(K + Kᵀ) / 2`.
    pub fn new(layout: Arc<BlockLayout>, mut matrix: DMatrix<f64>) -> Result<Self> {
        let r = layout.total();
        if matrix.shape() != (r, r) {
            return Err(Error::LayoutMismatch(format!(
                "gram of shape {:?} for a layout with R = {r}",
                matrix.shape()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gram matrix"));
        }
        for c in 0..r {
            for row in (c + 1)..r {
                let avg = 0.5 * (matrix[(row, c)] + matrix[(c, row)]);
                matrix[(row, c)] = avg;
                matrix[(c, row)] = avg;
            }
        }
        Ok(Self { layout, matrix })
    }

    pub(crate) fn from_symmetric_unchecked(layout: Arc<BlockLayout>, matrix: DMatrix<f64>) -> Self {
        debug_assert_eq!(matrix, matrix.transpose());
        Self { layout, matrix }
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// View of block `K_{i1 i2}` (shape `r_{i1} × r_{i2}`), no copy.
    pub fn block(&self, i1: usize, i2: usize) -> DMatrixView<'_, f64> {
        let l = &self.layout;
        self.matrix
            .view((l.offset(i1), l.offset(i2)), (l.size(i1), l.size(i2)))
    }

    /// Rows of block `i`, i.e. the `r_i × R` block row `K_{i·}`.
    pub fn block_row(&self, i: usize) -> DMatrixView<'_, f64> {
        let l = &self.layout;
        self.matrix.view((l.offset(i), 0), (l.size(i), l.total()))
    }
}
