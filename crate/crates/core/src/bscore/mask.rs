use serde::{Deserialize, Serialize};

use super::BsError;
use crate::tensor::{Scalar, Tensor4};

/// Block extent in output channels (`bo`) and input channels (`bi`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockShape {
    pub bo: usize,
    pub bi: usize,
}

impl BlockShape {
    /// Granularities supported by the tensor-core kernels.
    pub const SUPPORTED: [(usize, usize); 3] = [(8, 8), (4, 16), (16, 4)];

    pub const B8X8: BlockShape = BlockShape { bo: 8, bi: 8 };

    pub fn new(bo: usize, bi: usize) -> Result<Self, BsError> {
        if Self::SUPPORTED.contains(&(bo, bi)) {
            Ok(Self { bo, bi })
        } else {
            Err(BsError::UnsupportedBlock { bo, bi })
        }
    }

    /// Accepts any positive pair, e.g. `1×1` for unstructured sparsity.
    pub fn permissive(bo: usize, bi: usize) -> Result<Self, BsError> {
        if bo == 0 || bi == 0 {
            return Err(BsError::UnsupportedBlock { bo, bi });
        }
        Ok(Self { bo, bi })
    }

    pub fn area(&self) -> usize {
        self.bo * self.bi
    }

    /// Parses `"8x8"`.
    pub fn parse(s: &str, permissive: bool) -> Result<Self, BsError> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| BsError::Parse(format!("block shape `{s}` is not of the form NxM")))?;
        let bo = a.trim().parse().map_err(|_| BsError::Parse(format!("bad block extent `{a}`")))?;
        let bi = b.trim().parse().map_err(|_| BsError::Parse(format!("bad block extent `{b}`")))?;
        if permissive {
            Self::permissive(bo, bi)
        } else {
            Self::new(bo, bi)
        }
    }
}

impl std::fmt::Display for BlockShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.bo, self.bi)
    }
}

/// Binary mask over the `(output block, input block)` grid of a weight
/// tensor. A zero entry means the whole `bo × h × k × bi` block is zero.
///
/// When the channel counts are not multiples of the block extents the
/// grid is rounded up; the channels past the tensor edge are treated as
/// zero padding and never become nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MaskJson", into = "MaskJson")]
pub struct BlockMask {
    rows: usize,
    cols: usize,
    shape: BlockShape,
    bits: Vec<bool>,
}

impl BlockMask {
    pub fn grid_for(out_channels: usize, in_channels: usize, shape: BlockShape) -> (usize, usize) {
        (out_channels.div_ceil(shape.bo), in_channels.div_ceil(shape.bi))
    }

    pub fn ones(rows: usize, cols: usize, shape: BlockShape) -> Self {
        Self { rows, cols, shape, bits: vec![true; rows * cols] }
    }

    pub fn zeros(rows: usize, cols: usize, shape: BlockShape) -> Self {
        Self { rows, cols, shape, bits: vec![false; rows * cols] }
    }

    /// All-ones mask sized for an `out × in` channel plane.
    pub fn dense_for(out_channels: usize, in_channels: usize, shape: BlockShape) -> Self {
        let (r, c) = Self::grid_for(out_channels, in_channels, shape);
        Self::ones(r, c, shape)
    }

    pub fn from_bits(rows: usize, cols: usize, shape: BlockShape, bits: Vec<bool>) -> Result<Self, BsError> {
        if bits.len() != rows * cols {
            return Err(BsError::Shape(format!("mask has {} bits, grid is {rows}x{cols}", bits.len())));
        }
        Ok(Self { rows, cols, shape, bits })
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

    pub fn cells(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.cols + col] = v;
    }

    pub fn nonzero_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Nonzero block columns of `row`, ascending.
    pub fn row_cols(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.cols).filter(move |&c| self.get(row, c))
    }

    /// Fraction of zero blocks in each row: `(N - Σ_i Γ[o, i]) / N`.
    pub fn row_sparsity(&self) -> Result<Vec<f64>, BsError> {
        if self.cells() == 0 {
            return Err(BsError::EmptyMask);
        }
        let n = self.cols as f64;
        Ok((0..self.rows)
            .map(|r| {
                let ones = (0..self.cols).filter(|&c| self.get(r, c)).count() as f64;
                (n - ones) / n
            })
            .collect())
    }

    /// Layer-level sparsity: the mean of the per-row ratios.
    pub fn sparsity(&self) -> Result<f64, BsError> {
        let rows = self.row_sparsity()?;
        Ok(rows.iter().sum::<f64>() / rows.len() as f64)
    }

    /// Verifies the grid matches a tensor with the given channel counts.
    pub fn check_dims(&self, out_channels: usize, in_channels: usize) -> Result<(), BsError> {
        let (r, c) = Self::grid_for(out_channels, in_channels, self.shape);
        if r != self.rows {
            return Err(BsError::AxisMismatch { axis: "output channels", extent: out_channels, block: self.shape.bo, grid: self.rows });
        }
        if c != self.cols {
            return Err(BsError::AxisMismatch { axis: "input channels", extent: in_channels, block: self.shape.bi, grid: self.cols });
        }
        Ok(())
    }
}

/// JSON form: `{"block": "8x8", "rows": 2, "cols": 4, "bits": ["1101", "0011"]}`.
/// Block shapes outside the supported set are accepted here so that masks
/// written in permissive mode read back.
#[derive(Serialize, Deserialize)]
struct MaskJson {
    block: String,
    rows: usize,
    cols: usize,
    bits: Vec<String>,
}

impl From<BlockMask> for MaskJson {
    fn from(m: BlockMask) -> Self {
        let bits = (0..m.rows).map(|r| (0..m.cols).map(|c| if m.get(r, c) { '1' } else { '0' }).collect()).collect();
        Self { block: m.shape.to_string(), rows: m.rows, cols: m.cols, bits }
    }
}

impl TryFrom<MaskJson> for BlockMask {
    type Error = BsError;

    fn try_from(j: MaskJson) -> Result<Self, BsError> {
        let shape = BlockShape::parse(&j.block, true)?;
        if j.bits.len() != j.rows {
            return Err(BsError::Shape(format!("mask lists {} rows, header says {}", j.bits.len(), j.rows)));
        }
        let mut bits = Vec::with_capacity(j.rows * j.cols);
        for (r, row) in j.bits.iter().enumerate() {
            if row.len() != j.cols {
                return Err(BsError::Shape(format!("mask row {r} has {} entries, expected {}", row.len(), j.cols)));
            }
            for ch in row.chars() {
                bits.push(match ch {
                    '1' => true,
                    '0' => false,
                    other => return Err(BsError::Parse(format!("mask row {r} has character `{other}`"))),
                });
            }
        }
        Self::from_bits(j.rows, j.cols, shape, bits)
    }
}

/// Either the per-row ratios or their mean.
#[derive(Debug, Clone, PartialEq)]
pub enum SparsityRatio {
    PerRow(Vec<f64>),
    Aggregate(f64),
}

pub fn sparsity_ratio(mask: &BlockMask, per_row: bool) -> Result<SparsityRatio, BsError> {
    if per_row {
        mask.row_sparsity().map(SparsityRatio::PerRow)
    } else {
        mask.sparsity().map(SparsityRatio::Aggregate)
    }
}

/// Returns `Γ W`: every weight inside a zero block is cleared.
pub fn apply_mask<T: Scalar>(weights: &Tensor4<T>, mask: &BlockMask) -> Result<Tensor4<T>, BsError> {
    let [o, h, k, i] = weights.dims();
    mask.check_dims(o, i)?;
    let shape = mask.shape();
    let mut out = weights.clone();
    for br in 0..mask.rows() {
        for bc in 0..mask.cols() {
            if mask.get(br, bc) {
                continue;
            }
            for oc in br * shape.bo..((br + 1) * shape.bo).min(o) {
                for y in 0..h {
                    for x in 0..k {
                        for ic in bc * shape.bi..((bc + 1) * shape.bi).min(i) {
                            out.set([oc, y, x, ic], T::zero());
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_bitmap() {
        let m = BlockMask::from_bits(2, 3, BlockShape::B8X8, vec![true, false, true, false, false, true]).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, r#"{"block":"8x8","rows":2,"cols":3,"bits":["101","001"]}"#);
        assert_eq!(serde_json::from_str::<BlockMask>(&text).unwrap(), m);
        assert!(serde_json::from_str::<BlockMask>(r#"{"block":"8x8","rows":1,"cols":2,"bits":["1"]}"#).is_err());
    }

    #[test]
    fn half_zero_row() {
        let m = BlockMask::from_bits(1, 4, BlockShape::B8X8, vec![true, true, false, false]).unwrap();
        assert_eq!(m.row_sparsity().unwrap(), vec![0.5]);
        assert_eq!(sparsity_ratio(&m, false).unwrap(), SparsityRatio::Aggregate(0.5));
    }

    #[test]
    fn extremes() {
        assert_eq!(BlockMask::ones(8, 8, BlockShape::B8X8).sparsity().unwrap(), 0.0);
        assert_eq!(BlockMask::zeros(8, 8, BlockShape::B8X8).sparsity().unwrap(), 1.0);
    }

    #[test]
    fn one_zero_block_per_row() {
        let mut m = BlockMask::ones(8, 8, BlockShape::B8X8);
        for r in 0..8 {
            m.set(r, (r * 3) % 8, false);
        }
        for s in m.row_sparsity().unwrap() {
            assert_eq!(s, 0.125);
        }
    }

    #[test]
    fn empty_mask_is_error() {
        let m = BlockMask::ones(0, 0, BlockShape::B8X8);
        assert!(matches!(m.sparsity(), Err(BsError::EmptyMask)));
    }

    #[test]
    fn block_shape_validation() {
        assert!(BlockShape::new(8, 8).is_ok());
        assert!(BlockShape::new(16, 4).is_ok());
        assert!(BlockShape::new(2, 2).is_err());
        assert!(BlockShape::permissive(2, 2).is_ok());
        assert!(BlockShape::permissive(0, 2).is_err());
        assert_eq!(BlockShape::parse("4x16", false).unwrap(), BlockShape { bo: 4, bi: 16 });
    }

    #[test]
    fn identity_and_zero_masks() {
        let w = Tensor4::from_fn([16, 3, 3, 16], |[o, y, x, i]| (o * 1000 + y * 100 + x * 10 + i) as i64 + 1);
        let ones = BlockMask::dense_for(16, 16, BlockShape::B8X8);
        assert_eq!(apply_mask(&w, &ones).unwrap(), w);
        let zeros = BlockMask::zeros(2, 2, BlockShape::B8X8);
        assert!(apply_mask(&w, &zeros).unwrap().data().iter().all(|&v| v == 0));
    }

    #[test]
    fn single_block_cleared_elementwise() {
        let w = Tensor4::from_fn([16, 3, 3, 16], |[o, y, x, i]| (o * 1000 + y * 100 + x * 10 + i) as i64 + 1);
        let mut mask = BlockMask::dense_for(16, 16, BlockShape::B8X8);
        mask.set(1, 1, false);
        let out = apply_mask(&w, &mask).unwrap();
        for o in 0..16 {
            for y in 0..3 {
                for x in 0..3 {
                    for i in 0..16 {
                        let expect = if (8..16).contains(&o) && (8..16).contains(&i) { 0 } else { w.get([o, y, x, i]) };
                        assert_eq!(out.get([o, y, x, i]), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn mismatch_names_axis() {
        let w = Tensor4::<i64>::zeros([16, 1, 1, 24]);
        let mask = BlockMask::dense_for(16, 16, BlockShape::B8X8);
        let err = apply_mask(&w, &mask).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let mask = BlockMask::dense_for(8, 24, BlockShape::B8X8);
        let err = apply_mask(&w, &mask).unwrap_err();
        assert!(err.to_string().contains("output channels"), "{err}");
    }

    #[test]
    fn ragged_channels_round_up() {
        // 3 input channels with 8x8 blocks: one partial block column.
        let w = Tensor4::from_fn([8, 3, 3, 3], |_| 1i64);
        let mask = BlockMask::dense_for(8, 3, BlockShape::B8X8);
        assert_eq!((mask.rows(), mask.cols()), (1, 1));
        assert_eq!(apply_mask(&w, &mask).unwrap(), w);
    }
}
