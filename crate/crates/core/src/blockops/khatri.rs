use nalgebra::{DMatrixView, DMatrixViewMut};

use crate::blockops::{BlockDiagMatrix, GramMatrix};
use crate::error::{Error, Result};

/// Lazy `odMat ∘ (K ⊙ K + ηI) ∘ odvec` acting on block-diagonal matrices.
///
/// Output block `i` is `η B_i + Σ_{i'} K_{ii'} B_{i'} K_{ii'}ᵀ`. The
/// Khatri–Rao product itself is never formed; Gram blocks are read as views
/// into the dense Gram storage.
#[derive(Debug, Clone)]
pub struct LazyKhatriOperator<'a> {
    gram: &'a GramMatrix,
    ridge: f64,
    // max |K_{ii'}| per block pair, row-major n × n; scales the symmetry check
    block_max: Vec<f64>,
}

impl<'a> LazyKhatriOperator<'a> {
    pub fn new(gram: &'a GramMatrix, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "eta",
                reason: format!("ridge must be finite and nonnegative, got {ridge}"),
            });
        }
        let n = gram.layout().n_blocks();
        let mut block_max = Vec::with_capacity(n * n);
        for i in 0..n {
            for ip in 0..n {
                block_max.push(gram.block(i, ip).amax());
            }
        }
        Ok(Self {
            gram,
            ridge,
            block_max,
        })
    }

    pub fn gram(&self) -> &GramMatrix {
        self.gram
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn check(&self, b: &BlockDiagMatrix, out: &BlockDiagMatrix) -> Result<()> {
        if **b.layout() != **self.gram.layout() {
            return Err(Error::LayoutMismatch(format!(
                "operand layout {:?} vs gram layout {:?}",
                b.layout().sizes(),
                self.gram.layout().sizes()
            )));
        }
        b.check_layout(out)
    }

    /// Applies the operator, writing into `out` (overwritten).
    ///
    /// Runs block-parallel when the `parallel` feature is enabled.
    pub fn apply_into(&self, b: &BlockDiagMatrix, out: &mut BlockDiagMatrix) -> Result<()> {
        #[cfg(feature = "parallel")]
        {
            self.apply_parallel_into(b, out)
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.apply_sequential_into(b, out)
        }
    }

    pub fn apply(&self, b: &BlockDiagMatrix) -> Result<BlockDiagMatrix> {
        let mut out = BlockDiagMatrix::zeros(b.layout().clone());
        self.apply_into(b, &mut out)?;
        Ok(out)
    }

    /// Single-threaded application with one scratch buffer reused across blocks.
    pub fn apply_sequential_into(
        &self,
        b: &BlockDiagMatrix,
        out: &mut BlockDiagMatrix,
    ) -> Result<()> {
        self.check(b, out)?;
        let symmetric = b.is_symmetric();
        let layout = self.gram.layout();
        let mut scratch = vec![0.0; layout.total() * layout.max_size()];
        for (i, mut c) in out.blocks_mut().into_iter().enumerate() {
            self.output_block(i, b, &mut c, &mut scratch, symmetric);
        }
        Ok(())
    }

    /// Block-parallel application; each output block is independent.
    #[cfg(feature = "parallel")]
    pub fn apply_parallel_into(
        &self,
        b: &BlockDiagMatrix,
        out: &mut BlockDiagMatrix,
    ) -> Result<()> {
        use rayon::prelude::*;

        self.check(b, out)?;
        let symmetric = b.is_symmetric();
        let layout = self.gram.layout();
        let scratch_len = layout.total() * layout.max_size();
        out.blocks_mut().into_par_iter().enumerate().for_each_init(
            || vec![0.0; scratch_len],
            |scratch, (i, mut c)| self.output_block(i, b, &mut c, scratch, symmetric),
        );
        Ok(())
    }

    fn output_block(
        &self,
        i: usize,
        b: &BlockDiagMatrix,
        c: &mut DMatrixViewMut<'_, f64>,
        scratch: &mut [f64],
        symmetric: bool,
    ) {
        let layout = self.gram.layout();
        let ri = layout.size(i);
        // W = [B_{i'} K_{i'i}] stacked over i', then C_i = ηB_i + K_{i·} W
        let mut w =
            DMatrixViewMut::from_slice(&mut scratch[..layout.total() * ri], layout.total(), ri);
        for ip in 0..layout.n_blocks() {
            let k_ipi: DMatrixView<'_, f64> = self.gram.block(ip, i);
            w.rows_mut(layout.offset(ip), layout.size(ip))
                .gemm(1.0, &b.block(ip), &k_ipi, 0.0);
        }
        c.copy_from(&b.block(i));
        c.gemm(1.0, &self.gram.block_row(i), &w, self.ridge);
        if symmetric {
            #[cfg(debug_assertions)]
            self.debug_check_symmetry(i, b, c);
            super::blockdiag::symmetrize_block(c);
        }
    }

    #[cfg(debug_assertions)]
    fn debug_check_symmetry(&self, i: usize, b: &BlockDiagMatrix, c: &DMatrixViewMut<'_, f64>) {
        let layout = self.gram.layout();
        let n = layout.n_blocks();
        let mut scale = self.ridge * b.block(i).amax();
        for ip in 0..n {
            let r = layout.size(ip) as f64;
            let k = self.block_max[i * n + ip];
            scale += k * k * b.block(ip).amax() * r * r;
        }
        let r = c.nrows();
        for col in 0..r {
            for row in (col + 1)..r {
                let asym = (c[(row, col)] - c[(col, row)]).abs();
                debug_assert!(
                    asym <= 1e-13 * scale,
                    "Khatri-Rao output block {i} lost symmetry: {asym:e} vs scale {scale:e}"
                );
            }
        }
    }
}
