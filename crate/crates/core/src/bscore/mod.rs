//! Block sparsity primitives: masks, block-COO storage, reference kernels
//! and the weight quantizer.

mod conv;
mod coo;
mod mask;
mod quant;
mod spmm;

pub use conv::{block_sparse_conv, out_extent, Pad};
pub use coo::{BlockCooWeight, CooBlock, Payload, LAYOUT_TAG};
pub use mask::{apply_mask, sparsity_ratio, BlockMask, BlockShape, SparsityRatio};
pub use quant::{dequantize, quantize, scale_position, QuantParams};
pub use spmm::{block_spmm, BlockSparseMatrix, SpmmStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BsError {
    #[error("unsupported block shape {bo}x{bi} (expected 8x8, 4x16 or 16x4)")]
    UnsupportedBlock { bo: usize, bi: usize },
    #[error("{axis} mismatch: {extent} channels need {} blocks of {block}, mask has {grid}", .extent.div_ceil(*.block))]
    AxisMismatch { axis: &'static str, extent: usize, block: usize, grid: usize },
    #[error("block shapes differ: {left} vs {right}")]
    BlockMismatch { left: BlockShape, right: BlockShape },
    #[error("mask is empty")]
    EmptyMask,
    #[error("negative padding {0}")]
    NegativePad(i64),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("quantization: {0}")]
    Quant(String),
    #[error("malformed block-COO data: {0}")]
    Format(String),
    #[error("{0}")]
    Parse(String),
}
