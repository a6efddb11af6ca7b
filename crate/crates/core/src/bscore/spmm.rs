//! Sparse × sparse block matrix multiply on sorted block-COO operands.

use std::cmp::Ordering;

use super::mask::{BlockMask, BlockShape};
use super::BsError;
use crate::tensor::{Matrix, Scalar};

/// Matrix stored as sorted nonzero `bo × bi` blocks (row major payloads).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseMatrix<T> {
    rows: usize,
    cols: usize,
    shape: BlockShape,
    /// Per block row: `(block col, payload)` sorted by column.
    block_rows: Vec<Vec<(usize, Vec<T>)>>,
}

impl<T: Scalar> BlockSparseMatrix<T> {
    /// Compresses `Γ A`; blocks with mask entry zero are dropped.
    pub fn from_dense(dense: &Matrix<T>, mask: &BlockMask) -> Result<Self, BsError> {
        mask.check_dims(dense.rows, dense.cols)?;
        let shape = mask.shape();
        let mut block_rows = vec![Vec::new(); mask.rows()];
        for (br, row) in block_rows.iter_mut().enumerate() {
            for bc in mask.row_cols(br) {
                let mut payload = Vec::with_capacity(shape.area());
                for dy in 0..shape.bo {
                    for dx in 0..shape.bi {
                        let (r, c) = (br * shape.bo + dy, bc * shape.bi + dx);
                        payload.push(if r < dense.rows && c < dense.cols { dense.get(r, c) } else { T::zero() });
                    }
                }
                row.push((bc, payload));
            }
        }
        Ok(Self { rows: dense.rows, cols: dense.cols, shape, block_rows })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> BlockShape {
        self.shape
    }

    pub fn block_count(&self) -> usize {
        self.block_rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (br, row) in self.block_rows.iter().enumerate() {
            for (bc, payload) in row {
                for dy in 0..self.shape.bo {
                    for dx in 0..self.shape.bi {
                        let (r, c) = (br * self.shape.bo + dy, bc * self.shape.bi + dx);
                        if r < self.rows && c < self.cols {
                            out.set(r, c, payload[dy * self.shape.bi + dx]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Transposes both the block structure and every payload.
    pub fn transpose(&self) -> Self {
        let shape = BlockShape { bo: self.shape.bi, bi: self.shape.bo };
        let grid_cols = self.cols.div_ceil(self.shape.bi);
        let mut block_rows: Vec<Vec<(usize, Vec<T>)>> = vec![Vec::new(); grid_cols];
        for (br, row) in self.block_rows.iter().enumerate() {
            for (bc, payload) in row {
                let mut t = vec![T::zero(); payload.len()];
                for dy in 0..self.shape.bo {
                    for dx in 0..self.shape.bi {
                        t[dx * self.shape.bo + dy] = payload[dy * self.shape.bi + dx];
                    }
                }
                // Rows are visited in order, so each column list stays sorted.
                block_rows[*bc].push((br, t));
            }
        }
        Self { rows: self.cols, cols: self.rows, shape, block_rows }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpmmStats {
    /// Number of block multiply-accumulate kernel calls.
    pub block_products: usize,
}

/// `C = (Γ A)(Ω B)ᵗ` when `transpose_b`, otherwise `C = (Γ A)(Ω B)`.
///
/// For every output block the two sorted lists of inner block indices are
/// merged; a block product is issued only where both operands hold a
/// nonzero block.
pub fn block_spmm<T: Scalar>(
    a: &BlockSparseMatrix<T>,
    b: &BlockSparseMatrix<T>,
    transpose_b: bool,
) -> Result<(Matrix<T>, SpmmStats), BsError> {
    let owned;
    let bt = if transpose_b {
        b
    } else {
        owned = b.transpose();
        &owned
    };
    if a.shape.bi != bt.shape.bi {
        return Err(BsError::BlockMismatch { left: a.shape, right: bt.shape });
    }
    if a.cols != bt.cols {
        return Err(BsError::Shape(format!("inner dimensions differ: {} vs {}", a.cols, bt.cols)));
    }
    let (bm, bk, bn) = (a.shape.bo, a.shape.bi, bt.shape.bo);
    let mut c = Matrix::zeros(a.rows, bt.rows);
    let mut stats = SpmmStats::default();
    let mut acc = vec![T::zero(); bm * bn];
    for (i, arow) in a.block_rows.iter().enumerate() {
        if arow.is_empty() {
            continue;
        }
        for (j, brow) in bt.block_rows.iter().enumerate() {
            let (mut p, mut q) = (0, 0);
            let mut touched = false;
            acc.iter_mut().for_each(|v| *v = T::zero());
            while p < arow.len() && q < brow.len() {
                match arow[p].0.cmp(&brow[q].0) {
                    Ordering::Less => p += 1,
                    Ordering::Greater => q += 1,
                    Ordering::Equal => {
                        let (ap, bp) = (&arow[p].1, &brow[q].1);
                        for r in 0..bm {
                            for s in 0..bn {
                                let mut sum = T::zero();
                                for t in 0..bk {
                                    sum += ap[r * bk + t] * bp[s * bk + t];
                                }
                                acc[r * bn + s] += sum;
                            }
                        }
                        stats.block_products += 1;
                        touched = true;
                        p += 1;
                        q += 1;
                    }
                }
            }
            if touched {
                for r in 0..bm {
                    for s in 0..bn {
                        let (row, col) = (i * bm + r, j * bn + s);
                        if row < c.rows && col < c.cols {
                            c.set(row, col, acc[r * bn + s]);
                        }
                    }
                }
            }
        }
    }
    Ok((c, stats))
}
