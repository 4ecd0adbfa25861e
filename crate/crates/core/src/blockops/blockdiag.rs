use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};

use crate::blockops::BlockLayout;
use crate::error::{Error, Result};

/// Block-diagonal matrix `diag[B_1, ..., B_n]` with `B_i ∈ R^{r_i × r_i}`.
///
/// Storage is the diagonal vectorization itself: each block column-major,
/// blocks concatenated. `odvec` is therefore a copy and inner products are
/// flat dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagMatrix {
    layout: Arc<BlockLayout>,
    data: Vec<f64>,
}

impl BlockDiagMatrix {
    pub fn zeros(layout: Arc<BlockLayout>) -> Self {
        let data = vec![0.0; layout.total_squared()];
        Self { layout, data }
    }

    /// Builds from per-block dense matrices.
    pub fn from_blocks(layout: Arc<BlockLayout>, blocks: &[DMatrix<f64>]) -> Result<Self> {
        if blocks.len() != layout.n_blocks() {
            return Err(Error::LayoutMismatch(format!(
                "{} blocks for a layout of {}",
                blocks.len(),
                layout.n_blocks()
            )));
        }
        let mut data = Vec::with_capacity(layout.total_squared());
        for (i, b) in blocks.iter().enumerate() {
            let r = layout.size(i);
            if b.shape() != (r, r) {
                return Err(Error::LayoutMismatch(format!(
                    "block {i} has shape {:?}, expected ({r}, {r})",
                    b.shape()
                )));
            }
            data.extend_from_slice(b.as_slice());
        }
        Ok(Self { layout, data })
    }

    /// Outer products `diag[y_i y_iᵀ]` of the per-block segments of `y`.
    pub fn outer_products(layout: Arc<BlockLayout>, y: &[f64]) -> Result<Self> {
        if y.len() != layout.total() {
            return Err(Error::DimensionMismatch {
                expected: layout.total(),
                found: y.len(),
            });
        }
        let mut out = Self::zeros(layout);
        for i in 0..out.layout.n_blocks() {
            let yi = &y[out.layout.range(i)];
            let mut b = out.block_mut(i);
            for (c, &yc) in yi.iter().enumerate() {
                for (r, &yr) in yi.iter().enumerate() {
                    b[(r, c)] = yr * yc;
                }
            }
        }
        Ok(out)
    }

    pub fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    pub fn n_blocks(&self) -> usize {
        self.layout.n_blocks()
    }

    pub fn block(&self, i: usize) -> DMatrixView<'_, f64> {
        let r = self.layout.size(i);
        DMatrixView::from_slice(&self.data[self.layout.square_range(i)], r, r)
    }

    pub fn block_mut(&mut self, i: usize) -> DMatrixViewMut<'_, f64> {
        let r = self.layout.size(i);
        let range = self.layout.square_range(i);
        DMatrixViewMut::from_slice(&mut self.data[range], r, r)
    }

    /// Mutable views of every block at once.
    pub fn blocks_mut(&mut self) -> Vec<DMatrixViewMut<'_, f64>> {
        let mut rest = self.data.as_mut_slice();
        let mut out = Vec::with_capacity(self.layout.n_blocks());
        for &r in self.layout.sizes() {
            let (head, tail) = rest.split_at_mut(r * r);
            out.push(DMatrixViewMut::from_slice(head, r, r));
            rest = tail;
        }
        out
    }

    pub fn to_blocks(&self) -> Vec<DMatrix<f64>> {
        (0..self.n_blocks())
            .map(|i| self.block(i).into_owned())
            .collect()
    }

    /// Diagonal vectorization: column-major blocks, stacked.
    pub fn odvec(&self) -> Vec<f64> {
        self.data.clone()
    }

    /// Inverse of [`odvec`](Self::odvec).
    pub fn odmat(v: Vec<f64>, layout: Arc<BlockLayout>) -> Result<Self> {
        if v.len() != layout.total_squared() {
            return Err(Error::DimensionMismatch {
                expected: layout.total_squared(),
                found: v.len(),
            });
        }
        Ok(Self { layout, data: v })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub(crate) fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(format!(
                "{:?} vs {:?}",
                self.layout.sizes(),
                other.layout.sizes()
            )))
        }
    }

    /// Frobenius inner product `Σ_i tr(A_iᵀ B_i)`.
    pub fn frobenius_dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn frobenius_norm_squared(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    /// Largest `|B_i[j1, j2] - B_i[j2, j1]|` over all blocks.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.n_blocks())
            .map(|i| {
                let b = self.block(i);
                let r = b.nrows();
                let mut worst = 0.0f64;
                for c in 0..r {
                    for row in (c + 1)..r {
                        worst = worst.max((b[(row, c)] - b[(c, row)]).abs());
                    }
                }
                worst
            })
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self) -> bool {
        self.max_asymmetry() == 0.0
    }

    /// Largest absolute diagonal entry.
    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.n_blocks())
            .flat_map(|i| {
                let b = self.block(i);
                (0..b.nrows()).map(move |j| b[(j, j)].abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Replaces every block by `(B_i + B_iᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        for mut b in self.blocks_mut() {
            symmetrize_block(&mut b);
        }
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        debug_assert!(self.same_layout(x));
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a += alpha * b;
        }
    }

    /// `self = x + beta * self`.
    pub fn xpay(&mut self, x: &Self, beta: f64) {
        debug_assert!(self.same_layout(x));
        for (a, b) in self.data.iter_mut().zip(&x.data) {
            *a = b + beta * *a;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

pub(crate) fn symmetrize_block(b: &mut DMatrixViewMut<'_, f64>) {
    let r = b.nrows();
    for c in 0..r {
        for row in (c + 1)..r {
            let avg = 0.5 * (b[(row, c)] + b[(c, row)]);
            b[(row, c)] = avg;
            b[(c, row)] = avg;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sets every diagonal entry of every block to zero, in place.
///
/// On symmetric inputs this is the orthogonal projection onto the range of
/// the transposed elimination matrices.
pub fn diag_elim_in_place(b: &mut BlockDiagMatrix) {
    for mut block in b.blocks_mut() {
        block.fill_diagonal(0.0);
    }
}

/// Copying variant of [`diag_elim_in_place`].
pub fn diag_elim(b: &BlockDiagMatrix) -> BlockDiagMatrix {
    let mut out = b.clone();
    diag_elim_in_place(&mut out);
    out
}

/// Full orthogonal projection for arbitrary (not necessarily symmetric)
/// blocks: off-diagonal pairs are averaged, diagonals are zeroed.
pub fn symmetric_offdiag_projection(b: &BlockDiagMatrix) -> BlockDiagMatrix {
    let mut out = b.clone();
    for mut block in out.blocks_mut() {
        symmetrize_block(&mut block);
        block.fill_diagonal(0.0);
    }
    out
}

/// Frobenius inner product of two block-diagonal matrices.
pub fn frobenius_dot(a: &BlockDiagMatrix, b: &BlockDiagMatrix) -> Result<f64> {
    a.frobenius_dot(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn layout(sizes: &[usize]) -> Arc<BlockLayout> {
        Arc::new(BlockLayout::new(sizes.to_vec()).unwrap())
    }

    #[test]
    fn odvec_is_column_major() {
        let (a, b, c, d) = (1.0, 2.0, 3.0, 4.0);
        let m = BlockDiagMatrix::from_blocks(layout(&[2]), &[dmatrix![a, c; b, d]]).unwrap();
        assert_eq!(m.odvec(), vec![a, b, c, d]);
    }

    #[test]
    fn odvec_stacks_blocks() {
        let (x, p, q, r, s) = (9.0, 1.0, 2.0, 3.0, 4.0);
        let m = BlockDiagMatrix::from_blocks(layout(&[1, 2]), &[dmatrix![x], dmatrix![p, r; q, s]])
            .unwrap();
        assert_eq!(m.odvec(), vec![x, p, q, r, s]);
        let back = BlockDiagMatrix::odmat(m.odvec(), m.layout().clone()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn odmat_rejects_wrong_length() {
        assert!(matches!(
            BlockDiagMatrix::odmat(vec![0.0; 3], layout(&[2])),
            Err(Error::DimensionMismatch {
                expected: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn diag_elim_zeroes_diagonal() {
        let m =
            BlockDiagMatrix::from_blocks(layout(&[2]), &[dmatrix![1.0, 2.0; 3.0, 4.0]]).unwrap();
        let e = diag_elim(&m);
        assert_eq!(e.block(0).into_owned(), dmatrix![0.0, 2.0; 3.0, 0.0]);
        let z = BlockDiagMatrix::zeros(layout(&[3, 2]));
        assert_eq!(diag_elim(&z), z);
    }

    #[test]
    fn general_projection_averages() {
        let m =
            BlockDiagMatrix::from_blocks(layout(&[2]), &[dmatrix![1.0, 2.0; 4.0, 4.0]]).unwrap();
        let p = symmetric_offdiag_projection(&m);
        assert_eq!(p.block(0).into_owned(), dmatrix![0.0, 3.0; 3.0, 0.0]);
    }

    #[test]
    fn frobenius_examples() {
        let l = layout(&[2, 3]);
        let eye = BlockDiagMatrix::from_blocks(
            l.clone(),
            &[DMatrix::identity(2, 2), DMatrix::identity(3, 3)],
        )
        .unwrap();
        assert_eq!(frobenius_dot(&eye, &eye).unwrap(), 5.0);

        let l2 = layout(&[2]);
        let skew =
            BlockDiagMatrix::from_blocks(l2.clone(), &[dmatrix![0.0, 1.0; -1.0, 0.0]]).unwrap();
        let eye2 = BlockDiagMatrix::from_blocks(l2, &[DMatrix::identity(2, 2)]).unwrap();
        assert_eq!(frobenius_dot(&skew, &eye2).unwrap(), 0.0);
        assert!(frobenius_dot(&skew, &eye).is_err());
    }

    #[test]
    fn outer_products_blocks() {
        let m = BlockDiagMatrix::outer_products(layout(&[1, 2]), &[2.0, 1.0, 3.0]).unwrap();
        assert_eq!(m.block(0)[(0, 0)], 4.0);
        assert_eq!(m.block(1).into_owned(), dmatrix![1.0, 3.0; 3.0, 9.0]);
    }
}
