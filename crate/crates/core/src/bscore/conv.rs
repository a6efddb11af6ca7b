use serde::{Deserialize, Serialize};

use super::coo::BlockCooWeight;
use super::BsError;
use crate::tensor::{Scalar, Tensor3};

/// Zero padding in rows (`top`, `bottom`) and columns (`left`, `right`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Pad {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad {
    pub fn uniform(p: usize) -> Self {
        Self { top: p, bottom: p, left: p, right: p }
    }

    /// Builds padding from signed values, rejecting negatives.
    pub fn checked(top: i64, bottom: i64, left: i64, right: i64) -> Result<Self, BsError> {
        let f = |v: i64| usize::try_from(v).map_err(|_| BsError::NegativePad(v));
        Ok(Self { top: f(top)?, bottom: f(bottom)?, left: f(left)?, right: f(right)? })
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// Output extent of a strided window along one axis.
pub fn out_extent(input: usize, kernel: usize, stride: usize, pad_lo: usize, pad_hi: usize) -> Option<usize> {
    let padded = input + pad_lo + pad_hi;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Convolution `Y = (Γ W) * X + b` that visits only stored blocks.
pub fn block_sparse_conv<T: Scalar>(
    input: &Tensor3<T>,
    w: &BlockCooWeight<T>,
    bias: &[T],
    stride: usize,
    pad: Pad,
) -> Result<Tensor3<T>, BsError> {
    let [ih, iw, ic] = input.dims();
    let (kh, kw) = w.kernel;
    if ic != w.in_channels {
        return Err(BsError::Shape(format!("input has {ic} channels, weights expect {}", w.in_channels)));
    }
    if bias.len() != w.out_channels {
        return Err(BsError::Shape(format!("bias has {} entries, weights have {} outputs", bias.len(), w.out_channels)));
    }
    let oh = out_extent(ih, kh, stride, pad.top, pad.bottom)
        .ok_or_else(|| BsError::Shape(format!("kernel {kh} does not fit height {ih} with stride {stride}")))?;
    let ow = out_extent(iw, kw, stride, pad.left, pad.right)
        .ok_or_else(|| BsError::Shape(format!("kernel {kw} does not fit width {iw} with stride {stride}")))?;
    let oc = w.out_channels;
    let mut out = Tensor3::from_fn([oh, ow, oc], |[_, _, c]| bias[c]);
    let (bo, bi) = (w.shape.bo, w.shape.bi);
    for (br, bc, payload) in w.iter_abs() {
        for oy in 0..oh {
            for ox in 0..ow {
                for dy in 0..bo {
                    let o = br * bo + dy;
                    if o >= oc {
                        break;
                    }
                    let mut acc = T::zero();
                    for y in 0..kh {
                        let iy = (oy * stride + y) as isize - pad.top as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for x in 0..kw {
                            let ix = (ox * stride + x) as isize - pad.left as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let base = ((dy * kh + y) * kw + x) * bi;
                            for dx in 0..bi {
                                let c = bc * bi + dx;
                                if c >= ic {
                                    break;
                                }
                                acc += payload[base + dx] * input.get(iy as usize, ix as usize, c);
                            }
                        }
                    }
                    let cur = out.get(oy, ox, o);
                    out.set(oy, ox, o, cur + acc);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bscore::{BlockMask, BlockShape};
    use crate::tensor::Tensor4;

    #[test]
    fn pointwise_channel_selection() {
        // One nonzero 8x8 block that is an identity: output channel o copies input channel o.
        let w = Tensor4::from_fn([8, 1, 1, 16], |[o, _, _, i]| i64::from(o == i));
        let mut mask = BlockMask::dense_for(8, 16, BlockShape::B8X8);
        mask.set(0, 1, false);
        let coo = BlockCooWeight::compress(&w, &mask).unwrap();
        let x = Tensor3::from_fn([4, 5, 16], |[y, x, c]| (y * 100 + x * 10 + c) as i64);
        let y = block_sparse_conv(&x, &coo, &[0; 8], 1, Pad::default()).unwrap();
        assert_eq!(y.dims(), [4, 5, 8]);
        for r in 0..4 {
            for c in 0..5 {
                for o in 0..8 {
                    assert_eq!(y.get(r, c, o), x.get(r, c, o));
                }
            }
        }
    }

    #[test]
    fn all_zero_mask_gives_bias() {
        let w = Tensor4::from_fn([16, 3, 3, 16], |_| 3i64);
        let coo = BlockCooWeight::compress(&w, &BlockMask::zeros(2, 2, BlockShape::B8X8)).unwrap();
        let x = Tensor3::from_fn([6, 6, 16], |_| 1i64);
        let bias: Vec<i64> = (0..16).collect();
        let y = block_sparse_conv(&x, &coo, &bias, 1, Pad::uniform(1)).unwrap();
        assert!(y.data().chunks(16).all(|px| px == bias.as_slice()));
    }

    #[test]
    fn shape_errors() {
        let w = Tensor4::<i64>::zeros([8, 3, 3, 8]);
        let coo = BlockCooWeight::compress(&w, &BlockMask::dense_for(8, 8, BlockShape::B8X8)).unwrap();
        let x = Tensor3::<i64>::zeros([2, 2, 8]);
        assert!(block_sparse_conv(&x, &coo, &[0; 8], 1, Pad::default()).is_err());
        let x = Tensor3::<i64>::zeros([4, 4, 4]);
        assert!(block_sparse_conv(&x, &coo, &[0; 8], 1, Pad::default()).is_err());
        assert!(matches!(Pad::checked(1, -1, 0, 0), Err(BsError::NegativePad(-1))));
    }

    #[test]
    fn extents() {
        assert_eq!(out_extent(224, 3, 1, 1, 1), Some(224));
        assert_eq!(out_extent(224, 3, 2, 1, 1), Some(112));
        assert_eq!(out_extent(2, 3, 1, 0, 0), None);
    }
}
