use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of `R = r_1 + ... + r_n` measurements into `n` functions.
///
/// Owns all index bookkeeping: flat offsets into `R`, offsets into the
/// block-diagonal storage of length `R⊙ = Σ r_i²`, and the effective
/// (strictly upper triangular) counts `l_i = r_i (r_i - 1) / 2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    square_offsets: Vec<usize>,
    effective_offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidLayout("no blocks".into()));
        }
        if let Some(i) = sizes.iter().position(|&r| r == 0) {
            return Err(Error::InvalidLayout(format!("block {i} is empty")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut square_offsets = Vec::with_capacity(sizes.len() + 1);
        let mut effective_offsets = Vec::with_capacity(sizes.len() + 1);
        let (mut o, mut s, mut e) = (0, 0, 0);
        for &r in &sizes {
            offsets.push(o);
            square_offsets.push(s);
            effective_offsets.push(e);
            o += r;
            s += r * r;
            e += r * (r - 1) / 2;
        }
        offsets.push(o);
        square_offsets.push(s);
        effective_offsets.push(e);
        Ok(Self {
            sizes,
            offsets,
            square_offsets,
            effective_offsets,
        })
    }

    /// `n` blocks of equal size `r`.
    pub fn uniform(n: usize, r: usize) -> Result<Self> {
        Self::new(vec![r; n])
    }

    /// Number of blocks `n`.
    pub fn n_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn max_size(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    /// Total number of measurements `R`.
    pub fn total(&self) -> usize {
        self.offsets[self.sizes.len()]
    }

    /// Length of the diagonal vectorization, `R⊙ = Σ r_i²`.
    pub fn total_squared(&self) -> usize {
        self.square_offsets[self.sizes.len()]
    }

    /// Effective number of measurements for covariance estimation, `L = Σ l_i`.
    pub fn total_effective(&self) -> usize {
        self.effective_offsets[self.sizes.len()]
    }

    /// `l_i = r_i (r_i - 1) / 2`.
    pub fn effective_size(&self, i: usize) -> usize {
        let r = self.sizes[i];
        r * (r - 1) / 2
    }

    /// Start of block `i` in flat `R`-indexing.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Start of block `i` in the diagonal vectorization.
    pub fn square_offset(&self, i: usize) -> usize {
        self.square_offsets[i]
    }

    /// Start of block `i` in the effective coefficient vector.
    pub fn effective_offset(&self, i: usize) -> usize {
        self.effective_offsets[i]
    }

    /// Flat index of measurement `j` of function `i`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j < self.sizes[i]);
        self.offsets[i] + j
    }

    /// Range of flat indices owned by block `i`.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Range of block `i` inside the diagonal vectorization.
    pub fn square_range(&self, i: usize) -> std::ops::Range<usize> {
        self.square_offsets[i]..self.square_offsets[i + 1]
    }

    /// Checks the covariance requirement `r_i >= 2` for every block.
    pub fn require_pairs(&self) -> Result<()> {
        match self.sizes.iter().position(|&r| r < 2) {
            Some(block) => Err(Error::TooFewObservations {
                block,
                found: self.sizes[block],
            }),
            None => Ok(()),
        }
    }
}

impl TryFrom<Vec<usize>> for BlockLayout {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<BlockLayout> for Vec<usize> {
    fn from(layout: BlockLayout) -> Self {
        layout.sizes
    }
}
