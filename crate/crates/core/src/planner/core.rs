use serde::{Deserialize, Serialize};

use super::schedule::WeightStats;
use crate::hwmodel::HwConfig;

/// Kernel family a core runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompOp {
    Conv,
    Pool,
    Add,
    Copy,
    Reduce,
}

impl CompOp {
    pub fn name(self) -> &'static str {
        match self {
            CompOp::Conv => "CONV",
            CompOp::Pool => "POOL",
            CompOp::Add => "ADD",
            CompOp::Copy => "COPY",
            CompOp::Reduce => "REDUCE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [CompOp::Conv, CompOp::Pool, CompOp::Add, CompOp::Copy, CompOp::Reduce].into_iter().find(|o| o.name() == s)
    }
}

/// Geometry of one Memtile-level leaf, before it is mapped onto cores.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub op: CompOp,
    pub out_rows: usize,
    /// Output columns of the leaf across all mesh columns.
    pub out_width: usize,
    /// Output channels of the leaf; for convolutions a multiple of `bo`.
    pub out_channels: usize,
    /// Bytes per pixel per input row a core column receives.
    pub load_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub pad_top: usize,
    pub pad_bottom: usize,
    /// Padded input width, bounding the window.
    pub in_width: usize,
    /// Input rows per output row for reductions.
    pub in_rows: usize,
    pub out_bytes: usize,
    /// Operations per output pixel and channel for kernels without weights.
    pub ops_per_pixel: usize,
    /// Weights restricted to the leaf's output and input blocks.
    pub weights: Option<LeafWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafWeights {
    pub stats: WeightStats,
    pub in_blocks: usize,
}

/// Which of the three row phases an iteration group belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowPhase {
    Head,
    Body,
    Tail,
}

/// One iteration group of a pass: per-iteration quantities for one core
/// (transfers are per column or row channel; all cores act alike).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub phase: RowPhase,
    pub iters: usize,
    pub loadfm_bytes: u64,
    /// Dense operations per iteration.
    pub ops: u64,
    pub writefm_bytes: u64,
}

/// Symmetric per-core work of a leaf. Core (r, c) computes width slice `c`
/// and output-channel chunk `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreTask {
    pub op: CompOp,
    pub out_rows: usize,
    pub head: bool,
    pub tail: bool,
    /// Output columns per core and the sub-width processed per pass.
    pub width: usize,
    pub sub_width: usize,
    pub width_passes: usize,
    /// Blocks (convolutions) or channels per core, and per weight pass.
    pub units_per_core: usize,
    pub units_per_pass: usize,
    pub passes: usize,
    pub unit_channels: usize,
    pub window_cols: usize,
    pub load_channels: usize,
    pub rows_head: usize,
    pub rows_body: usize,
    pub rows_tail: usize,
    /// Input rows consumed per output row by a reduction.
    pub reduce_rows: usize,
    pub ops_per_unit_pixel: u64,
    pub density: f64,
    pub out_bytes: usize,
    pub weight_unit_bytes: usize,
    pub core_bytes: usize,
}

impl CoreTask {
    pub fn pass_units(&self, pass: usize) -> usize {
        if pass + 1 < self.passes {
            self.units_per_pass
        } else {
            self.units_per_core - self.units_per_pass * (self.passes - 1)
        }
    }

    /// LOADWM bytes per row channel at the start of a pass.
    pub fn loadwm_bytes(&self, pass: usize) -> u64 {
        (self.pass_units(pass) * self.weight_unit_bytes) as u64
    }

    /// Iteration groups of one (pass, width sub-pass).
    pub fn phases(&self, pass: usize) -> Vec<PhaseSpec> {
        let units = self.pass_units(pass) as u64;
        let w = self.sub_width as u64;
        let row = (self.window_cols * self.load_channels) as u64;
        let ops = w * units * self.ops_per_unit_pixel;
        let write = w * units * (self.unit_channels * self.out_bytes) as u64;
        if self.op == CompOp::Reduce {
            return vec![
                PhaseSpec { phase: RowPhase::Body, iters: self.reduce_rows, loadfm_bytes: row, ops, writefm_bytes: 0 },
                PhaseSpec {
                    phase: RowPhase::Tail,
                    iters: 1,
                    loadfm_bytes: 0,
                    ops: 0,
                    writefm_bytes: units * (self.unit_channels * self.out_bytes) as u64,
                },
            ];
        }
        let mut out = Vec::new();
        let head = usize::from(self.head);
        let tail = usize::from(self.tail);
        if self.head {
            out.push(PhaseSpec { phase: RowPhase::Head, iters: 1, loadfm_bytes: row * self.rows_head as u64, ops, writefm_bytes: write });
        }
        let body = self.out_rows - head - tail;
        if body > 0 {
            out.push(PhaseSpec {
                phase: RowPhase::Body,
                iters: body,
                loadfm_bytes: row * self.rows_body as u64,
                ops,
                writefm_bytes: write,
            });
        }
        if self.tail {
            out.push(PhaseSpec { phase: RowPhase::Tail, iters: 1, loadfm_bytes: row * self.rows_tail as u64, ops, writefm_bytes: write });
        }
        out
    }

    /// Dense operations one core performs over the whole task.
    pub fn total_ops(&self) -> u64 {
        (0..self.passes).flat_map(|p| self.phases(p)).map(|s| s.ops * s.iters as u64).sum::<u64>() * self.width_passes as u64
    }
}

/// Maps a leaf onto the mesh, choosing the widest sub-width and then the
/// most units per weight pass that fit core memory. `None` when even one
/// unit over a single column does not fit.
pub fn fit_core(leaf: &Leaf, cfg: &HwConfig) -> Option<CoreTask> {
    let (rows, cols) = (cfg.mesh.rows, cfg.mesh.cols);
    let budget = cfg.core_buffer_bytes();
    let width = leaf.out_width.div_ceil(cols).max(1);
    let (unit_channels, units_total, weight_unit_bytes, density, ops_per_unit_pixel) = match (&leaf.weights, leaf.op) {
        (Some(w), CompOp::Conv) => {
            let s = &w.stats;
            let units = leaf.out_channels.div_ceil(s.shape.bo);
            let ops = (s.shape.bo * w.in_blocks * s.shape.bi * leaf.kernel.0 * leaf.kernel.1) as u64;
            (s.shape.bo, units, s.bytes_for(1, w.in_blocks), s.density(), ops)
        }
        _ => (1, leaf.out_channels, 0, 1.0, leaf.ops_per_pixel.max(1) as u64),
    };
    let units_per_core = units_total.div_ceil(rows).max(1);
    let windowed = matches!(leaf.op, CompOp::Conv | CompOp::Pool);
    let window_rows = if windowed { leaf.kernel.0 } else { 1 };
    let mut sub = width;
    loop {
        let window_cols = match leaf.op {
            CompOp::Reduce => leaf.in_width,
            _ if windowed => ((sub - 1) * leaf.stride + leaf.kernel.1).min(leaf.in_width),
            _ => sub,
        };
        let in_buf = 2 * window_rows * window_cols * leaf.load_channels;
        let per_unit = 2 * sub * unit_channels * leaf.out_bytes + weight_unit_bytes;
        if in_buf + per_unit <= budget {
            let per_pass = ((budget - in_buf) / per_unit).min(units_per_core);
            let head = windowed && leaf.pad_top > 0;
            let tail = windowed && leaf.pad_bottom > 0 && leaf.out_rows > usize::from(head);
            let clip = |pad: usize| leaf.kernel.0.saturating_sub(pad).max(1);
            return Some(CoreTask {
                op: leaf.op,
                out_rows: leaf.out_rows,
                head,
                tail,
                width,
                sub_width: sub,
                width_passes: width.div_ceil(sub),
                units_per_core,
                units_per_pass: per_pass,
                passes: units_per_core.div_ceil(per_pass),
                unit_channels,
                window_cols,
                load_channels: leaf.load_channels,
                rows_head: clip(leaf.pad_top),
                rows_body: window_rows,
                rows_tail: clip(leaf.pad_bottom),
                reduce_rows: leaf.in_rows,
                ops_per_unit_pixel,
                density,
                out_bytes: leaf.out_bytes,
                weight_unit_bytes,
                core_bytes: in_buf + per_pass * per_unit,
            });
        }
        if sub == 1 {
            return None;
        }
        // Next smaller sub-width that changes the pass count.
        let mut passes = width.div_ceil(sub);
        while width.div_ceil(passes) >= sub {
            passes += 1;
        }
        sub = width.div_ceil(passes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bscore::BlockShape;

    fn stats(out: usize, inp: usize, k: usize, nonzero_frac: f64) -> WeightStats {
        let s = BlockShape::B8X8;
        let (rows, cols) = (out / 8, inp / 8);
        WeightStats {
            shape: s,
            kernel: (k, k),
            out_channels: out,
            in_channels: inp,
            rows,
            cols,
            nonzero: ((rows * cols) as f64 * nonzero_frac) as usize,
        }
    }

    fn conv_leaf(h: usize, w: usize, cin: usize, cout: usize, frac: f64) -> Leaf {
        let st = stats(cout, cin, 3, frac);
        Leaf {
            op: CompOp::Conv,
            out_rows: h,
            out_width: w,
            out_channels: cout,
            load_channels: cin,
            kernel: (3, 3),
            stride: 1,
            pad_top: 1,
            pad_bottom: 1,
            in_width: w + 2,
            in_rows: 3,
            out_bytes: 1,
            ops_per_pixel: 0,
            weights: Some(LeafWeights { stats: st, in_blocks: cin / 8 }),
        }
    }

    #[test]
    fn iterations_cover_rows() {
        let cfg = HwConfig::default().validated().unwrap();
        let t = fit_core(&conv_leaf(56, 56, 64, 64, 1.0), &cfg).unwrap();
        assert_eq!(t.width, 14);
        assert_eq!(t.units_per_core, 2);
        let ph = t.phases(0);
        assert_eq!(ph.iter().map(|p| p.iters).sum::<usize>(), 56);
        assert_eq!(ph[0].phase, RowPhase::Head);
        assert_eq!(ph[1].iters, 54);
        // Head skips the padded row of the window.
        assert_eq!(ph[0].loadfm_bytes * 3, ph[1].loadfm_bytes * 2);
    }

    #[test]
    fn ops_match_mac_count() {
        let cfg = HwConfig::default().validated().unwrap();
        let t = fit_core(&conv_leaf(56, 56, 64, 64, 1.0), &cfg).unwrap();
        let per_core = t.total_ops() as usize;
        assert_eq!(per_core * 16, 56 * 56 * 64 * 64 * 9);
    }

    #[test]
    fn deep_layer_needs_passes() {
        let cfg = HwConfig::default().validated().unwrap();
        let t = fit_core(&conv_leaf(14, 14, 512, 512, 1.0), &cfg).unwrap();
        // One block row of 3×3×512 weights is 36 KiB, leaving room for one.
        assert_eq!(t.units_per_pass, 1);
        assert_eq!(t.passes, 16);
        assert!(t.core_bytes <= cfg.core_buffer_bytes());
        // Half sparsity halves the block row, leaving room for a wider window.
        let s = fit_core(&conv_leaf(14, 14, 512, 512, 0.5), &cfg).unwrap();
        assert_eq!(t.sub_width, 1);
        assert_eq!(s.sub_width, 4);
    }

    #[test]
    fn too_wide_block_row_fails() {
        let cfg = HwConfig::default().validated().unwrap();
        let mut leaf = conv_leaf(14, 14, 512, 512, 1.0);
        let mut st = stats(512, 512, 3, 1.0);
        st.shape = BlockShape::new(16, 4).unwrap();
        st.rows = 32;
        st.cols = 128;
        st.nonzero = 32 * 128;
        leaf.weights = Some(LeafWeights { stats: st, in_blocks: 128 });
        assert!(fit_core(&leaf, &cfg).is_none());
    }
}
