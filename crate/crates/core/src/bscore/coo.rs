//! Block-COO weight storage.
//!
//! Only the nonzero blocks of `Γ W` are kept. Each block carries its block
//! row and a column index relative to the previous stored block of the same
//! row (the first block of a row is absolute). The payload of a block is the
//! dense `bo × h × k × bi` sub-tensor, input channel innermost, zero padded
//! at ragged tensor edges.
//!
//! Binary layout (all integers little endian):
//!
//! ```text
//! magic    b"BSCO"
//! version  u16 = 1
//! dtype    u8  (1 = i8, 2 = i32, 3 = f32, 4 = f64)
//! pad      u8  = 0
//! header   u32 × 9: bo, bi, h, k, rows, cols, out_channels, in_channels, block_count
//! blocks   block_count × { u32 row, u32 col_delta, payload[bo·h·k·bi] }
//! ```

use serde::{Deserialize, Serialize};

use super::mask::{BlockMask, BlockShape};
use super::BsError;
use crate::tensor::{Scalar, Tensor4};

const MAGIC: &[u8; 4] = b"BSCO";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooBlock<T> {
    pub row: u32,
    pub col_delta: u32,
    pub payload: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCooWeight<T> {
    pub shape: BlockShape,
    /// Spatial kernel extent `(h, k)`.
    pub kernel: (usize, usize),
    pub out_channels: usize,
    pub in_channels: usize,
    /// Mask grid `(rows, cols)`.
    pub grid: (usize, usize),
    /// Always `"cout_h_k_cin"`.
    pub layout: String,
    pub blocks: Vec<CooBlock<T>>,
}

pub const LAYOUT_TAG: &str = "cout_h_k_cin";

impl<T: Copy> BlockCooWeight<T> {
    pub fn block_len(&self) -> usize {
        self.shape.bo * self.kernel.0 * self.kernel.1 * self.shape.bi
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Stored payload values (not bytes).
    pub fn stored_values(&self) -> usize {
        self.blocks.len() * self.block_len()
    }

    /// Blocks with absolute `(row, col)` coordinates.
    pub fn iter_abs(&self) -> impl Iterator<Item = (usize, usize, &[T])> + '_ {
        let mut last_row = usize::MAX;
        let mut col = 0usize;
        self.blocks.iter().map(move |b| {
            let row = b.row as usize;
            if row != last_row {
                col = b.col_delta as usize;
                last_row = row;
            } else {
                col += b.col_delta as usize;
            }
            (row, col, b.payload.as_slice())
        })
    }

    /// Reconstructs Γ from the stored block coordinates.
    pub fn mask(&self) -> BlockMask {
        let mut m = BlockMask::zeros(self.grid.0, self.grid.1, self.shape);
        for (r, c, _) in self.iter_abs() {
            m.set(r, c, true);
        }
        m
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> BlockCooWeight<U> {
        BlockCooWeight {
            shape: self.shape,
            kernel: self.kernel,
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            grid: self.grid,
            layout: self.layout.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| CooBlock { row: b.row, col_delta: b.col_delta, payload: b.payload.iter().map(|&v| f(v)).collect() })
                .collect(),
        }
    }
}

impl<T: Scalar> BlockCooWeight<T> {
    /// Keeps the blocks whose mask entry is one.
    pub fn compress(weights: &Tensor4<T>, mask: &BlockMask) -> Result<Self, BsError> {
        let [o, h, k, i] = weights.dims();
        mask.check_dims(o, i)?;
        let shape = mask.shape();
        let mut blocks = Vec::with_capacity(mask.nonzero_count());
        for br in 0..mask.rows() {
            let mut prev: Option<usize> = None;
            for bc in mask.row_cols(br) {
                let mut payload = Vec::with_capacity(shape.bo * h * k * shape.bi);
                for dy in 0..shape.bo {
                    let oc = br * shape.bo + dy;
                    for y in 0..h {
                        for x in 0..k {
                            for dx in 0..shape.bi {
                                let ic = bc * shape.bi + dx;
                                payload.push(if oc < o && ic < i { weights.get([oc, y, x, ic]) } else { T::zero() });
                            }
                        }
                    }
                }
                let col_delta = match prev {
                    None => bc,
                    Some(p) => bc - p,
                };
                prev = Some(bc);
                blocks.push(CooBlock { row: br as u32, col_delta: col_delta as u32, payload });
            }
        }
        Ok(Self {
            shape,
            kernel: (h, k),
            out_channels: o,
            in_channels: i,
            grid: (mask.rows(), mask.cols()),
            layout: LAYOUT_TAG.to_string(),
            blocks,
        })
    }

    pub fn decompress(&self) -> Tensor4<T> {
        let (h, k) = self.kernel;
        let mut out = Tensor4::zeros([self.out_channels, h, k, self.in_channels]);
        let shape = self.shape;
        for (br, bc, payload) in self.iter_abs() {
            let mut p = 0;
            for dy in 0..shape.bo {
                let oc = br * shape.bo + dy;
                for y in 0..h {
                    for x in 0..k {
                        for dx in 0..shape.bi {
                            let ic = bc * shape.bi + dx;
                            if oc < self.out_channels && ic < self.in_channels {
                                out.set([oc, y, x, ic], payload[p]);
                            }
                            p += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Element types with a fixed little-endian encoding.
pub trait Payload: Copy {
    const TAG: u8;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

macro_rules! payload {
    ($t:ty, $tag:expr) => {
        impl Payload for $t {
            const TAG: u8 = $tag;
            const SIZE: usize = std::mem::size_of::<$t>();
            fn put(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn take(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("payload width"))
            }
        }
    };
}

payload!(i8, 1);
payload!(i32, 2);
payload!(f32, 3);
payload!(f64, 4);

impl<T: Payload> BlockCooWeight<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(44 + self.blocks.len() * (8 + self.block_len() * T::SIZE));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::TAG);
        out.push(0);
        for v in [
            self.shape.bo,
            self.shape.bi,
            self.kernel.0,
            self.kernel.1,
            self.grid.0,
            self.grid.1,
            self.out_channels,
            self.in_channels,
            self.blocks.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for b in &self.blocks {
            out.extend_from_slice(&b.row.to_le_bytes());
            out.extend_from_slice(&b.col_delta.to_le_bytes());
            for &v in &b.payload {
                v.put(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BsError> {
        let bad = |m: &str| BsError::Format(m.to_string());
        if bytes.len() < 44 || &bytes[..4] != MAGIC {
            return Err(bad("missing BSCO header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(BsError::Format(format!("unsupported version {version}")));
        }
        if bytes[6] != T::TAG {
            return Err(BsError::Format(format!("payload tag {} does not match requested type {}", bytes[6], T::TAG)));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let shape = BlockShape::permissive(word(0), word(1))?;
        let kernel = (word(2), word(3));
        let grid = (word(4), word(5));
        let (out_channels, in_channels, count) = (word(6), word(7), word(8));
        let block_len = shape.bo * kernel.0 * kernel.1 * shape.bi;
        let record = 8 + block_len * T::SIZE;
        if bytes.len() != 44 + count * record {
            return Err(BsError::Format(format!("expected {} bytes, found {}", 44 + count * record, bytes.len())));
        }
        let mut blocks = Vec::with_capacity(count);
        let mut at = 44;
        let mut last: Option<(u32, usize)> = None;
        for _ in 0..count {
            let row = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            let col_delta = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
            at += 8;
            let col = match last {
                Some((r, c)) if r == row => {
                    if col_delta == 0 {
                        return Err(bad("duplicate block in row"));
                    }
                    c + col_delta as usize
                }
                Some((r, _)) if r > row => return Err(bad("blocks not sorted by row")),
                _ => col_delta as usize,
            };
            if row as usize >= grid.0 || col >= grid.1 {
                return Err(bad("block coordinate outside grid"));
            }
            last = Some((row, col));
            let payload = (0..block_len).map(|j| T::take(&bytes[at + j * T::SIZE..at + (j + 1) * T::SIZE])).collect();
            at += block_len * T::SIZE;
            blocks.push(CooBlock { row, col_delta, payload });
        }
        Ok(Self { shape, kernel, out_channels, in_channels, grid, layout: LAYOUT_TAG.to_string(), blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bscore::apply_mask;

    fn ramp(dims: [usize; 4]) -> Tensor4<i64> {
        Tensor4::from_fn(dims, |[o, y, x, i]| ((o * 31 + y * 7 + x * 3 + i) % 17) as i64 - 8)
    }

    #[test]
    fn full_grid_relative_columns() {
        let w = ramp([16, 1, 1, 16]);
        let coo = BlockCooWeight::compress(&w, &BlockMask::dense_for(16, 16, BlockShape::B8X8)).unwrap();
        assert_eq!(coo.block_count(), 4);
        let rel: Vec<_> = coo.blocks.iter().map(|b| (b.row, b.col_delta)).collect();
        assert_eq!(rel, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(coo.decompress(), w);
    }

    #[test]
    fn half_mask_halves_payload() {
        let w = ramp([32, 3, 3, 32]);
        let mut mask = BlockMask::dense_for(32, 32, BlockShape::B8X8);
        for r in 0..4 {
            for c in 0..4 {
                if (r + c) % 2 == 0 {
                    mask.set(r, c, false);
                }
            }
        }
        let coo = BlockCooWeight::compress(&w, &mask).unwrap();
        assert_eq!(coo.stored_values() * 2, 32 * 9 * 32);
        let bytes = coo.map(|v| v as i8).to_bytes();
        let dense_bytes = 32 * 9 * 32;
        let header = 44 + 8 * coo.block_count();
        assert_eq!((bytes.len() - header) * 2, dense_bytes);
    }

    #[test]
    fn zero_diagonal_blocks() {
        // B = [[0, B1], [B2, 0]] with 2x2 blocks.
        let mut mask = BlockMask::ones(2, 2, BlockShape::permissive(2, 2).unwrap());
        mask.set(0, 0, false);
        mask.set(1, 1, false);
        let w = Tensor4::from_fn([4, 1, 1, 4], |[o, _, _, i]| (o * 4 + i + 1) as i64);
        let coo = BlockCooWeight::compress(&apply_mask(&w, &mask).unwrap(), &mask).unwrap();
        let abs: Vec<_> = coo.iter_abs().map(|(r, c, _)| (r, c)).collect();
        assert_eq!(abs, vec![(0, 1), (1, 0)]);
        assert_eq!(coo.mask(), mask);
    }

    #[test]
    fn binary_roundtrip_and_corruption() {
        let w = ramp([12, 3, 3, 20]).map(|v| v as i32);
        let mut mask = BlockMask::dense_for(12, 20, BlockShape::B8X8);
        mask.set(1, 0, false);
        let coo = BlockCooWeight::compress(&w, &mask).unwrap();
        let bytes = coo.to_bytes();
        assert_eq!(BlockCooWeight::<i32>::from_bytes(&bytes).unwrap(), coo);
        assert!(BlockCooWeight::<f32>::from_bytes(&bytes).is_err());
        assert!(BlockCooWeight::<i32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(BlockCooWeight::<i32>::from_bytes(&bad).is_err());
    }

    #[test]
    fn json_debug_form() {
        let w = ramp([8, 1, 1, 8]);
        let coo = BlockCooWeight::compress(&w, &BlockMask::dense_for(8, 8, BlockShape::B8X8)).unwrap();
        let json = serde_json::to_string(&coo).unwrap();
        assert!(json.contains("\"layout\":\"cout_h_k_cin\""));
        let back: BlockCooWeight<i64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, coo);
    }
}
