//! Depth-wise tiling of layer chains along the height axis.
//!
//! A chain is a run of consecutive layers that reads one outer tensor and
//! produces one. Its output is cut into row tiles of equal height and each
//! tile is computed from the input rows it depends on, so the intermediate
//! tensors only ever exist one tile at a time. Neighbouring input tiles
//! overlap by the chain's generalized kernel minus its stride.

mod exec;
mod unroll;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netir::{IrError, Layer, NetGraph, OpKind};
use crate::planner::PlanError;

pub use exec::execute_schedule;
pub use unroll::{best_chain, candidate_chains, choose_tiles, insert_boundaries, tile_ddr_bytes, unroll, TiledEstimate};

#[derive(Debug, Error)]
pub enum TileError {
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("empty chain")]
    Empty,
    #[error("layer `{layer}` ({op}) cannot be projected")]
    Unprojectable { layer: String, op: OpKind },
    #[error("chain is not contiguous in the schedule at `{0}`")]
    NotContiguous(String),
    #[error("chain must read exactly one outer tensor, found {0:?}")]
    Inputs(Vec<String>),
    #[error("chain must produce exactly one outer tensor, found {0:?}")]
    Outputs(Vec<String>),
    #[error("{tiles} tiles of equal height do not fit {rows} output rows")]
    TooManyTiles { tiles: usize, rows: usize },
    #[error("no tiling up to {max} tiles keeps the chain free of DDR traffic")]
    Infeasible { max: usize },
    #[error("no tileable chain in the graph")]
    NoChain,
    #[error("step `{step}`: {message}")]
    Exec { step: String, message: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

/// Half-open row range `[start, end)` of an untiled tensor.
pub type Rows = (usize, usize);

/// Spatial extent of a sub-tensor; channels are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub h: usize,
    pub w: usize,
}

impl Extent {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w }
    }

    pub fn square(n: usize) -> Self {
        Self { h: n, w: n }
    }

    pub fn max(self, o: Self) -> Self {
        Self { h: self.h.max(o.h), w: self.w.max(o.w) }
    }
}

impl std::fmt::Display for Extent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.h, self.w)
    }
}

/// Consecutive layers with one outer input and one outer output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub layers: Vec<String>,
    pub input: String,
    pub output: String,
}

fn projectable(op: OpKind) -> bool {
    matches!(op, OpKind::Conv | OpKind::Gemm | OpKind::MaxPool | OpKind::Add | OpKind::Concat | OpKind::Identity)
}

impl Chain {
    /// Validates `ids` as a chain of `graph`.
    pub fn new<S: AsRef<str>>(graph: &NetGraph, ids: &[S]) -> Result<Self, TileError> {
        if ids.is_empty() {
            return Err(TileError::Empty);
        }
        let mut pos = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let p = graph.layers.iter().position(|l| l.id == id).ok_or_else(|| TileError::UnknownLayer(id.into()))?;
            let l = &graph.layers[p];
            if !projectable(l.op) {
                return Err(TileError::Unprojectable { layer: l.id.clone(), op: l.op });
            }
            pos.push(p);
        }
        for (w, id) in pos.windows(2).zip(ids.iter().skip(1)) {
            if w[1] != w[0] + 1 {
                return Err(TileError::NotContiguous(id.as_ref().into()));
            }
        }
        let layers: Vec<&Layer> = pos.iter().map(|&p| &graph.layers[p]).collect();
        let produced: BTreeSet<&str> = layers.iter().map(|l| l.output.as_str()).collect();
        let members: BTreeSet<&str> = layers.iter().map(|l| l.id.as_str()).collect();
        let mut inputs: Vec<String> = Vec::new();
        for l in &layers {
            for t in &l.inputs {
                if !produced.contains(t.as_str()) && !inputs.contains(t) {
                    inputs.push(t.clone());
                }
            }
        }
        let outputs: Vec<String> = layers
            .iter()
            .map(|l| &l.output)
            .filter(|t| {
                let mut users = graph.consumers(t);
                let outside = graph.consumers(t).any(|c| !members.contains(c.id.as_str()));
                graph.is_graph_output(t) || outside || users.next().is_none()
            })
            .cloned()
            .collect();
        if inputs.len() != 1 {
            return Err(TileError::Inputs(inputs));
        }
        let last = &layers[layers.len() - 1].output;
        if outputs.len() != 1 || &outputs[0] != last {
            return Err(TileError::Outputs(outputs));
        }
        Ok(Self { layers: layers.iter().map(|l| l.id.clone()).collect(), input: inputs.remove(0), output: last.clone() })
    }

    /// Every layer from `first` to `last` in schedule order.
    pub fn between(graph: &NetGraph, first: &str, last: &str) -> Result<Self, TileError> {
        let a = graph.layers.iter().position(|l| l.id == first).ok_or_else(|| TileError::UnknownLayer(first.into()))?;
        let b = graph.layers.iter().position(|l| l.id == last).ok_or_else(|| TileError::UnknownLayer(last.into()))?;
        if b < a {
            return Err(TileError::NotContiguous(last.into()));
        }
        let ids: Vec<&str> = graph.layers[a..=b].iter().map(|l| l.id.as_str()).collect();
        Self::new(graph, &ids)
    }

    fn layers<'a>(&'a self, graph: &'a NetGraph) -> impl DoubleEndedIterator<Item = &'a Layer> + 'a {
        self.layers.iter().map(move |id| graph.layer(id).expect("validated chain"))
    }

    /// Tensors produced inside the chain other than its output.
    pub fn intermediates(&self, graph: &NetGraph) -> Vec<String> {
        self.layers(graph).map(|l| l.output.clone()).filter(|t| *t != self.output).collect()
    }
}

/// Input extent one layer needs for an output extent `u`.
fn project_layer(layer: &Layer, u: Extent) -> Extent {
    match layer.op {
        OpKind::Conv | OpKind::MaxPool => {
            let s = layer.stride;
            Extent::new((u.h - 1) * s + layer.kernel.0, (u.w - 1) * s + layer.kernel.1)
        }
        _ => u,
    }
}

/// Required extent of every tensor of a chain for an output extent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub output: Extent,
    pub extents: BTreeMap<String, Extent>,
}

impl Projection {
    pub fn of(&self, tensor: &str) -> Option<Extent> {
        self.extents.get(tensor).copied()
    }
}

/// Propagates `u` backwards through the chain; a tensor read by several
/// layers needs the largest of their projections.
pub fn project(graph: &NetGraph, chain: &Chain, u: Extent) -> Result<Projection, TileError> {
    let mut extents: BTreeMap<String, Extent> = BTreeMap::new();
    extents.insert(chain.output.clone(), u);
    for l in chain.layers(graph).rev() {
        if !projectable(l.op) {
            return Err(TileError::Unprojectable { layer: l.id.clone(), op: l.op });
        }
        let ul = extents.get(&l.output).copied().ok_or_else(|| TileError::Outputs(vec![l.output.clone()]))?;
        let e = project_layer(l, ul);
        for t in &l.inputs {
            let cur = extents.entry(t.clone()).or_insert(e);
            *cur = cur.max(e);
        }
    }
    Ok(Projection { output: u, extents })
}

/// The chain seen as one convolution with kernel `k` and stride `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralizedConv {
    pub k: Extent,
    pub s: Extent,
}

pub fn generalized_kernel(graph: &NetGraph, chain: &Chain) -> Result<GeneralizedConv, TileError> {
    let one = project(graph, chain, Extent::square(1))?.of(&chain.input).expect("input projected");
    let two = project(graph, chain, Extent::square(2))?.of(&chain.input).expect("input projected");
    Ok(GeneralizedConv { k: one, s: Extent::new(two.h - one.h, two.w - one.w) })
}

/// Rows of its input a layer reads for output rows `out`, clipped to the
/// input, and the padding rows that remain above and below.
pub(crate) fn input_rows(layer: &Layer, out: Rows, in_h: usize) -> (Rows, usize, usize) {
    match layer.op {
        OpKind::Conv | OpKind::MaxPool => {
            let (s, kh, pt) = (layer.stride as isize, layer.kernel.0 as isize, layer.pad.top as isize);
            let lo = out.0 as isize * s - pt;
            let hi = (out.1 as isize - 1) * s + kh - pt;
            let (lo_c, hi_c) = (lo.max(0), hi.min(in_h as isize));
            ((lo_c as usize, hi_c as usize), (lo_c - lo) as usize, (hi - hi_c) as usize)
        }
        _ => (out, 0, 0),
    }
}

/// Row range of every chain tensor needed for output rows `out`.
pub fn tile_ranges(graph: &NetGraph, chain: &Chain, out: Rows) -> BTreeMap<String, Rows> {
    let mut ranges: BTreeMap<String, Rows> = BTreeMap::new();
    ranges.insert(chain.output.clone(), out);
    for l in chain.layers(graph).rev() {
        let Some(&o) = ranges.get(&l.output) else { continue };
        for t in &l.inputs {
            let (r, _, _) = input_rows(l, o, graph.shape(t).h);
            let cur = ranges.entry(t.clone()).or_insert(r);
            *cur = (cur.0.min(r.0), cur.1.max(r.1));
        }
    }
    ranges
}

fn tile_bytes(graph: &NetGraph, t: &str, r: Rows) -> usize {
    let s = graph.shape(t);
    (r.1 - r.0) * s.w * s.c
}

/// Peak bytes of intermediate tensors live at once while one tile runs.
/// Chain input and output are not counted.
fn live_peak(graph: &NetGraph, chain: &Chain, ranges: &BTreeMap<String, Rows>) -> usize {
    let layers: Vec<&Layer> = chain.layers(graph).collect();
    let mut peak = 0;
    for step in 0..layers.len() {
        let live: usize = chain
            .intermediates(graph)
            .iter()
            .filter(|t| {
                let born = layers.iter().position(|l| &l.output == *t).expect("produced in chain");
                let last = layers.iter().rposition(|l| l.inputs.contains(t)).unwrap_or(born);
                born <= step && step <= last
            })
            .map(|t| ranges.get(t).map_or(0, |r| tile_bytes(graph, t, *r)))
            .sum();
        peak = peak.max(live);
    }
    peak
}

/// Largest intermediate footprint over the tiles of height `u_o`.
pub fn live_analysis(graph: &NetGraph, chain: &Chain, u_o: usize) -> usize {
    let h = graph.shape(&chain.output).h;
    let u = u_o.clamp(1, h.max(1));
    (0..h.div_ceil(u)).map(|i| live_peak(graph, chain, &tile_ranges(graph, chain, (i * u, ((i + 1) * u).min(h))))).max().unwrap_or(0)
}

/// A chain cut into `tiles` output tiles of `tile_rows` rows (the last may
/// be shorter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub chain: Chain,
    pub tiles: usize,
    pub tile_rows: usize,
    pub kernel: GeneralizedConv,
    /// `(tile_rows − 1)·s + k` input rows per tile before clipping.
    pub in_tile_rows: usize,
    /// Rows shared by neighbouring input tiles, `k − s`.
    pub overlap: usize,
    /// Bytes of intermediate tensors live at once, over all tiles.
    pub peak_bytes: usize,
    /// Input rows read more than once, `(tiles − 1)·overlap`.
    pub reread_rows: usize,
    /// Row range of every chain tensor, per tile.
    pub ranges: Vec<BTreeMap<String, Rows>>,
}

impl TilePlan {
    pub fn new(graph: &NetGraph, chain: &Chain, tiles: usize) -> Result<Self, TileError> {
        let h = graph.shape(&chain.output).h;
        let u = h.div_ceil(tiles.max(1));
        if tiles == 0 || u == 0 || h.div_ceil(u) != tiles {
            return Err(TileError::TooManyTiles { tiles, rows: h });
        }
        let kernel = generalized_kernel(graph, chain)?;
        let (k, s) = (kernel.k.h, kernel.s.h);
        let ranges: Vec<BTreeMap<String, Rows>> = (0..tiles).map(|i| tile_ranges(graph, chain, (i * u, ((i + 1) * u).min(h)))).collect();
        let peak_bytes = ranges.iter().map(|r| live_peak(graph, chain, r)).max().unwrap_or(0);
        let overlap = k.saturating_sub(s);
        Ok(Self {
            chain: chain.clone(),
            tiles,
            tile_rows: u,
            kernel,
            in_tile_rows: (u - 1) * s + k,
            overlap,
            peak_bytes,
            reread_rows: (tiles - 1) * overlap,
            ranges,
        })
    }

    pub fn output_rows(&self, tile: usize) -> Rows {
        self.ranges[tile][&self.chain.output]
    }

    pub fn input_rows(&self, tile: usize) -> Rows {
        self.ranges[tile][&self.chain.input]
    }

    /// Input rows loaded beyond one full read of the input tensor.
    pub fn measured_reread(&self, graph: &NetGraph) -> usize {
        let loaded: usize = (0..self.tiles).map(|i| self.input_rows(i)).map(|r| r.1 - r.0).sum();
        loaded.saturating_sub(graph.shape(&self.chain.input).h)
    }
}
