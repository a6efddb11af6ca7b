use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bscore::BlockShape;
use crate::netir::{Layer, NetGraph, Shape, TensorInfo};

/// Position of a step inside an unrolled tiling loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRef {
    pub index: usize,
    pub count: usize,
}

/// One scheduled computation. Tile copies of a layer share its weights
/// through `weights_key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub layer: Layer,
    pub weights_key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<TileRef>,
    /// Rows of the outer tensor carved by an input boundary or filled by an
    /// output boundary; for tile copies, the rows of the untiled output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<(usize, usize)>,
    /// Graph layer a tile copy was made from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Step {
    pub fn plain(layer: Layer) -> Self {
        let weights_key = layer.weights.as_ref().map(|_| layer.id.clone());
        Self { layer, weights_key, tile: None, rows: None, source: None }
    }
}

/// Linear schedule the planner works on: a graph in topological order, or
/// the unrolled form produced by depth-wise tiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub name: String,
    pub tensors: BTreeMap<String, TensorInfo>,
    pub steps: Vec<Step>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Schedule {
    /// GEMMs become 1×1 convolutions; shapes must already be inferred.
    pub fn from_graph(graph: &NetGraph) -> Self {
        let g = graph.normalize_gemms();
        Self {
            name: g.name.clone(),
            tensors: g.tensors.iter().map(|t| (t.id.clone(), t.clone())).collect(),
            steps: g.layers.into_iter().map(Step::plain).collect(),
            inputs: g.inputs.clone(),
            outputs: g.outputs.clone(),
        }
    }

    pub fn shape(&self, id: &str) -> Shape {
        self.tensors.get(id).and_then(|t| t.shape).unwrap_or_else(|| panic!("tensor `{id}` has no shape"))
    }

    pub fn is_output(&self, id: &str) -> bool {
        self.outputs.iter().any(|t| t == id)
    }

    pub fn is_input(&self, id: &str) -> bool {
        self.inputs.iter().any(|t| t == id)
    }
}

/// Block structure of a layer's weights as the planner sees it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub shape: BlockShape,
    pub kernel: (usize, usize),
    pub out_channels: usize,
    pub in_channels: usize,
    /// Mask grid rows (output blocks) and columns (input blocks).
    pub rows: usize,
    pub cols: usize,
    pub nonzero: usize,
}

/// Bytes of block-COO index per stored block.
pub const INDEX_BYTES: usize = 4;

impl WeightStats {
    /// Dense layers are stored with an all-ones mask of `default_shape`.
    pub fn of(layer: &Layer, default_shape: BlockShape) -> Option<Self> {
        let w = layer.weights.as_ref()?;
        let (shape, rows, cols, nonzero) = match &w.mask {
            Some(m) => (m.shape(), m.rows(), m.cols(), m.nonzero_count()),
            None => {
                let (r, c) = crate::bscore::BlockMask::grid_for(w.out_channels, w.in_channels, default_shape);
                (default_shape, r, c, r * c)
            }
        };
        Some(Self { shape, kernel: layer.kernel, out_channels: w.out_channels, in_channels: w.in_channels, rows, cols, nonzero })
    }

    /// Fraction of nonzero blocks.
    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            return 0.0;
        }
        self.nonzero as f64 / (self.rows * self.cols) as f64
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.density()
    }

    /// Payload bytes of one `bo × h × k × bi` block of `i8`.
    pub fn block_bytes(&self) -> usize {
        self.shape.bo * self.kernel.0 * self.kernel.1 * self.shape.bi
    }

    /// Expected stored blocks in an `out_blocks × in_blocks` sub-grid.
    pub fn blocks_in(&self, out_blocks: usize, in_blocks: usize) -> usize {
        let cells = self.rows * self.cols;
        if cells == 0 {
            return 0;
        }
        (out_blocks * in_blocks * self.nonzero).div_ceil(cells)
    }

    /// Compressed bytes (payload, index and `i32` bias) of a sub-grid.
    pub fn bytes_for(&self, out_blocks: usize, in_blocks: usize) -> usize {
        self.blocks_in(out_blocks, in_blocks) * (self.block_bytes() + INDEX_BYTES) + out_blocks * self.shape.bo * 4
    }

    pub fn total_bytes(&self) -> usize {
        self.bytes_for(self.rows, self.cols)
    }

    /// Input channels rounded up to whole blocks, as the kernels compute them.
    pub fn padded_in(&self) -> usize {
        self.cols * self.shape.bi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bscore::BlockMask;
    use crate::netir::fixtures;

    #[test]
    fn dense_and_half_sparse_bytes() {
        let g = fixtures::small_cnn();
        let mut l = g.layer("conv2").unwrap().clone();
        let dense = WeightStats::of(&l, BlockShape::B8X8).unwrap();
        assert_eq!((dense.rows, dense.cols, dense.nonzero), (8, 4, 32));
        assert_eq!(dense.block_bytes(), 576);
        let mut m = BlockMask::ones(8, 4, BlockShape::B8X8);
        for r in 0..8 {
            m.set(r, 0, false);
            m.set(r, 1, false);
        }
        l.weights.as_mut().unwrap().mask = Some(m);
        let sparse = WeightStats::of(&l, BlockShape::B8X8).unwrap();
        assert_eq!(sparse.sparsity(), 0.5);
        let bias = 64 * 4;
        assert_eq!(sparse.total_bytes() - bias, (dense.total_bytes() - bias) / 2);
    }
}
