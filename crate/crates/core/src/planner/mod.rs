//! Memtile planning: residency, eviction, splitting and the mapping of each
//! computation onto the core mesh.
//!
//! Every layer runs in one of three modes. Resident layers keep inputs,
//! weights and output in Memtile. When only the weights do not fit, they are
//! streamed from DDR in output-channel pieces. Otherwise everything is
//! evicted and the layer is split into pieces that go DDR to DDR.

mod alloc;
mod core;
mod schedule;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::alloc::{AllocRecord, Allocation, CircularBuffer};
pub use self::core::{fit_core, CompOp, CoreTask, Leaf, LeafWeights, PhaseSpec, RowPhase};
pub use self::schedule::{Schedule, Step, TileRef, WeightStats, INDEX_BYTES};
use crate::bscore::BlockShape;
use crate::hwmodel::{HwConfig, HwError, InstrKind, Mesh};
use crate::netir::{Layer, NetGraph, OpKind, Shape};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("layer `{layer}` failed: {reason}")]
    Failed { layer: String, reason: String },
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error(transparent)]
    Hw(#[from] HwError),
}

/// Dimension a computation is split along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAxis {
    W,
    Cout,
    H,
    Cin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Refuse weight splits that do not divide evenly over the mesh rows.
    pub strict: bool,
    /// Preference among splits with the same piece count, most preferred first.
    pub split_order: [SplitAxis; 4],
    /// Block shape used for layers that carry no mask.
    pub block: BlockShape,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { strict: false, split_order: [SplitAxis::W, SplitAxis::Cout, SplitAxis::H, SplitAxis::Cin], block: BlockShape::B8X8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMode {
    Resident,
    StreamWeights,
    Spill,
    Boundary,
}

/// A symmetric DDR transfer: every Memtile moves `bytes` of its own slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdrMove {
    pub kind: InstrKind,
    pub tensor: String,
    pub bytes: u64,
    pub memtile_offset: u64,
    pub ddr_offset: u64,
}

/// One Memtile-level unit of work: transfers in, core task, transfers out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub ddr_in: Vec<DdrMove>,
    pub task: Option<CoreTask>,
    pub ddr_out: Vec<DdrMove>,
    /// Memtile offsets the cores read activations and weights from and write
    /// results to.
    pub src_offset: u64,
    pub weight_offset: u64,
    pub dst_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub factors: Vec<(SplitAxis, usize)>,
    /// Input-channel splits produce `i32` partial sums combined afterwards.
    pub partials: bool,
}

impl SplitPlan {
    pub fn none() -> Self {
        Self { factors: Vec::new(), partials: false }
    }

    pub fn pieces(&self) -> usize {
        self.factors.iter().map(|f| f.1).product()
    }

    pub fn factor(&self, axis: SplitAxis) -> usize {
        self.factors.iter().find(|f| f.0 == axis).map_or(1, |f| f.1)
    }
}

impl std::fmt::Display for SplitPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.factors.is_empty() {
            return write!(f, "-");
        }
        let parts: Vec<String> = self.factors.iter().map(|(a, n)| format!("{}{n}", axis_name(*a))).collect();
        write!(f, "{}", parts.join("·"))?;
        if self.partials {
            write!(f, "+sum")?;
        }
        Ok(())
    }
}

fn axis_name(a: SplitAxis) -> &'static str {
    match a {
        SplitAxis::W => "W",
        SplitAxis::Cout => "Co",
        SplitAxis::H => "H",
        SplitAxis::Cin => "Ci",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub step: usize,
    pub layer: String,
    pub op: OpKind,
    pub mode: LayerMode,
    pub split: SplitPlan,
    pub sparsity: f64,
    pub weight_bytes: u64,
    pub pieces: Vec<Piece>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile: Option<TileRef>,
}

impl LayerPlan {
    pub fn moves(&self) -> impl Iterator<Item = &DdrMove> {
        self.pieces.iter().flat_map(|p| p.ddr_in.iter().chain(&p.ddr_out))
    }

    /// DDR bytes per Memtile of the given kind.
    pub fn ddr_bytes(&self, kind: InstrKind) -> u64 {
        self.moves().filter(|m| m.kind == kind).map(|m| m.bytes).sum()
    }

    /// Activation traffic to or from DDR beyond weights.
    pub fn activation_ddr_bytes(&self) -> u64 {
        self.ddr_bytes(InstrKind::Load) + self.ddr_bytes(InstrKind::Write)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub name: String,
    pub mesh: Mesh,
    pub memtiles: usize,
    pub layers: Vec<LayerPlan>,
    pub allocation: Allocation,
}

impl Plan {
    pub fn layer(&self, id: &str) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer == id)
    }

    pub fn ddr_bytes(&self, kind: InstrKind) -> u64 {
        self.layers.iter().map(|l| l.ddr_bytes(kind)).sum()
    }

    /// One line per layer: mode, split, pieces and DDR bytes per Memtile.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:<10} {:<14} {:<12} {:>6} {:>12} {:>12} {:>12}",
            "layer", "op", "mode", "split", "pieces", "load", "loadw", "write"
        );
        for l in &self.layers {
            let mode = match l.mode {
                LayerMode::Resident => "resident",
                LayerMode::StreamWeights => "stream-w",
                LayerMode::Spill => "spill",
                LayerMode::Boundary => "boundary",
            };
            let _ = writeln!(
                s,
                "{:<24} {:<10} {:<14} {:<12} {:>6} {:>12} {:>12} {:>12}",
                l.layer,
                l.op.to_string(),
                mode,
                l.split.to_string(),
                l.pieces.len(),
                l.ddr_bytes(InstrKind::Load),
                l.ddr_bytes(InstrKind::LoadW),
                l.ddr_bytes(InstrKind::Write)
            );
        }
        s
    }
}

/// Bytes one Memtile holds of a tensor split by width.
pub fn memtile_bytes(shape: Shape, memtiles: usize, elem: usize) -> usize {
    shape.h * shape.w.div_ceil(memtiles) * shape.c * elem
}

/// Smallest factor for every distinct value of `ceil(n / f)`.
fn distinct_factors(n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut f = 1;
    while f <= n.max(1) {
        out.push(f);
        let q = n.div_ceil(f);
        if q <= 1 {
            break;
        }
        f = n.div_ceil(q - 1);
    }
    out
}

/// Memory report for one layer against an empty Memtile set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub input_bytes: usize,
    pub weight_bytes: usize,
    pub output_bytes: usize,
    pub total_bytes: usize,
    pub budget: usize,
    pub fits: bool,
    /// Core-level mapping of the unsplit layer, if one fits core memory.
    pub core: Option<CoreTask>,
}

/// Whether a layer's inputs, weights and output fit Memtile together.
pub fn fits(graph: &NetGraph, layer_id: &str, cfg: &HwConfig, opts: &PlanOptions) -> Result<FitReport, PlanError> {
    let cfg = cfg.clone().validated()?;
    let sched = Schedule::from_graph(graph);
    let step = sched.steps.iter().find(|s| s.layer.id == layer_id).ok_or_else(|| PlanError::UnknownLayer(layer_id.into()))?;
    let mt = cfg.memtile_count();
    let layer = &step.layer;
    let stats = WeightStats::of(layer, opts.block);
    let inputs: BTreeSet<&String> = layer.inputs.iter().collect();
    let input_bytes: usize = inputs.iter().map(|t| memtile_bytes(sched.shape(t), mt, 1)).sum::<usize>() * mt;
    let output_bytes = memtile_bytes(sched.shape(&layer.output), mt, 1) * mt;
    let weight_bytes = stats.map_or(0, |s| s.total_bytes().div_ceil(mt) * mt);
    let total_bytes = input_bytes + output_bytes + weight_bytes;
    let budget = cfg.memtile_total_bytes();
    let planner = Planner::new(&sched, &cfg, opts);
    let leaf = planner.full_leaf(layer, stats);
    Ok(FitReport { input_bytes, weight_bytes, output_bytes, total_bytes, budget, fits: total_bytes <= budget, core: fit_core(&leaf, &cfg) })
}

/// Plans a graph in its topological order.
pub fn plan(graph: &NetGraph, cfg: &HwConfig, opts: &PlanOptions) -> Result<Plan, PlanError> {
    plan_schedule(&Schedule::from_graph(graph), cfg, opts)
}

/// Memtile and DDR placement of every tensor of a graph.
pub fn allocate(graph: &NetGraph, cfg: &HwConfig, opts: &PlanOptions) -> Result<Allocation, PlanError> {
    Ok(plan(graph, cfg, opts)?.allocation)
}

/// Split chosen for a layer when it has the whole Memtile to itself.
pub fn split(graph: &NetGraph, layer_id: &str, cfg: &HwConfig, opts: &PlanOptions) -> Result<SplitPlan, PlanError> {
    let cfg = cfg.clone().validated()?;
    let sched = Schedule::from_graph(graph);
    let step = sched.steps.iter().find(|s| s.layer.id == layer_id).ok_or_else(|| PlanError::UnknownLayer(layer_id.into()))?;
    let planner = Planner::new(&sched, &cfg, opts);
    let stats = WeightStats::of(&step.layer, opts.block);
    planner.search_split(&step.layer, stats).map(|s| s.plan)
}

pub fn plan_schedule(sched: &Schedule, cfg: &HwConfig, opts: &PlanOptions) -> Result<Plan, PlanError> {
    let cfg = cfg.clone().validated()?;
    let mut p = Planner::new(sched, &cfg, opts);
    let mut layers = Vec::with_capacity(sched.steps.len());
    for i in 0..sched.steps.len() {
        let lp = p.step(i)?;
        p.retire(i);
        layers.push(lp);
    }
    let last = sched.steps.len().saturating_sub(1);
    let names: Vec<String> = p.resident.keys().cloned().collect();
    for n in names {
        p.free(&n, last);
    }
    Ok(Plan { name: sched.name.clone(), mesh: cfg.mesh, memtiles: cfg.memtile_count(), layers, allocation: p.alloc })
}

#[derive(Debug, Clone)]
struct Resident {
    offset: usize,
    bytes: usize,
    dirty: bool,
    first_step: usize,
}

/// A fitting split with its per-piece geometry.
struct SplitChoice {
    plan: SplitPlan,
    fw: usize,
    fh: usize,
    fco: usize,
    fci: usize,
}

struct Planner<'a> {
    sched: &'a Schedule,
    cfg: &'a HwConfig,
    opts: &'a PlanOptions,
    mt: usize,
    buf: CircularBuffer,
    resident: BTreeMap<String, Resident>,
    in_ddr: BTreeSet<String>,
    remaining: BTreeMap<String, usize>,
    alloc: Allocation,
}

const DDR_ALIGN: u64 = 4096;

fn weight_name(key: &str) -> String {
    format!("w:{key}")
}

fn distinct_inputs(layer: &Layer) -> Vec<String> {
    let mut seen = BTreeSet::new();
    layer.inputs.iter().filter(|t| seen.insert(t.as_str())).cloned().collect()
}

impl<'a> Planner<'a> {
    fn new(sched: &'a Schedule, cfg: &'a HwConfig, opts: &'a PlanOptions) -> Self {
        let mt = cfg.memtile_count();
        let mut remaining: BTreeMap<String, usize> = BTreeMap::new();
        let mut alloc = Allocation::default();
        let mut next = 0u64;
        let mut home = |name: String, bytes: usize, alloc: &mut Allocation| {
            if let std::collections::btree_map::Entry::Vacant(e) = alloc.ddr.entry(name) {
                e.insert(next);
                next += (bytes as u64).div_ceil(DDR_ALIGN).max(1) * DDR_ALIGN;
            }
        };
        for (id, t) in &sched.tensors {
            home(id.clone(), t.shape.map_or(0, |s| s.elems()), &mut alloc);
        }
        for step in &sched.steps {
            for t in distinct_inputs(&step.layer) {
                *remaining.entry(t).or_default() += 1;
            }
            if let Some(k) = &step.weights_key {
                let bytes = WeightStats::of(&step.layer, opts.block).map_or(0, |s| s.total_bytes());
                home(weight_name(k), bytes, &mut alloc);
                *remaining.entry(weight_name(k)).or_default() += 1;
            }
        }
        let in_ddr: BTreeSet<String> =
            sched.inputs.iter().cloned().chain(sched.steps.iter().filter_map(|s| s.weights_key.as_deref().map(weight_name))).collect();
        Self { sched, cfg, opts, mt, buf: CircularBuffer::new(cfg.memtile_bytes), resident: BTreeMap::new(), in_ddr, remaining, alloc }
    }

    fn ddr(&self, name: &str) -> u64 {
        let base = name.split('~').next().unwrap_or(name);
        self.alloc.ddr.get(name).or_else(|| self.alloc.ddr.get(base)).copied().unwrap_or(0)
    }

    fn try_alloc(&mut self, name: &str, bytes: usize, step: usize) -> Option<usize> {
        let off = self.buf.alloc(name, bytes)?;
        self.resident.insert(name.into(), Resident { offset: off, bytes: bytes.max(1), dirty: false, first_step: step });
        Some(off)
    }

    /// Undoes an allocation made by a failed attempt.
    fn release(&mut self, name: &str) {
        self.buf.free(name);
        self.resident.remove(name);
    }

    fn free(&mut self, name: &str, last_step: usize) {
        if let Some(r) = self.resident.remove(name) {
            self.buf.free(name);
            self.alloc.memtile.push(AllocRecord {
                tensor: name.into(),
                offset: r.offset,
                bytes: r.bytes,
                first_step: r.first_step,
                last_step: last_step.max(r.first_step),
            });
        }
    }

    fn write_move(&self, name: &str, r: &Resident) -> DdrMove {
        DdrMove {
            kind: InstrKind::Write,
            tensor: name.into(),
            bytes: r.bytes as u64,
            memtile_offset: r.offset as u64,
            ddr_offset: self.ddr(name),
        }
    }

    fn needed_later(&self, name: &str) -> bool {
        self.remaining.get(name).copied().unwrap_or(0) > 0
    }

    /// Drops clean tensors outside `keep`; they have a DDR copy.
    fn drop_clean(&mut self, keep: &BTreeSet<String>, step: usize) {
        let names: Vec<String> = self.resident.iter().filter(|(n, r)| !r.dirty && !keep.contains(*n)).map(|(n, _)| n.clone()).collect();
        for n in names {
            self.free(&n, step.saturating_sub(1));
        }
    }

    /// Writes back and drops every tensor outside `keep`.
    fn evict(&mut self, keep: &BTreeSet<String>, step: usize) -> Vec<DdrMove> {
        let names: Vec<String> = self.resident.keys().filter(|n| !keep.contains(*n)).cloned().collect();
        let mut out = Vec::new();
        for n in names {
            let r = self.resident[&n].clone();
            if r.dirty && self.needed_later(&n) {
                out.push(self.write_move(&n, &r));
                self.in_ddr.insert(n.clone());
            }
            self.free(&n, step.saturating_sub(1));
        }
        out
    }

    fn retire(&mut self, i: usize) {
        let step = &self.sched.steps[i];
        let mut names = distinct_inputs(&step.layer);
        if let Some(k) = &step.weights_key {
            names.push(weight_name(k));
        }
        for n in &names {
            if let Some(c) = self.remaining.get_mut(n) {
                *c = c.saturating_sub(1);
            }
        }
        names.push(step.layer.output.clone());
        for n in names {
            if !self.needed_later(&n) {
                self.free(&n, i);
            }
        }
    }

    fn step(&mut self, i: usize) -> Result<LayerPlan, PlanError> {
        let step = self.sched.steps[i].clone();
        let mut lp = match step.layer.op {
            OpKind::InputBoundary => self.input_boundary(i, &step)?,
            OpKind::OutputBoundary => self.output_boundary(i, &step)?,
            _ => self.compute(i, &step)?,
        };
        lp.tile = step.tile;
        Ok(lp)
    }

    fn failed(&self, layer: &Layer, reason: impl Into<String>) -> PlanError {
        PlanError::Failed { layer: layer.id.clone(), reason: reason.into() }
    }

    fn boundary_plan(&self, i: usize, layer: &Layer, piece: Piece) -> LayerPlan {
        LayerPlan {
            step: i,
            layer: layer.id.clone(),
            op: layer.op,
            mode: LayerMode::Boundary,
            split: SplitPlan::none(),
            sparsity: 0.0,
            weight_bytes: 0,
            pieces: vec![piece],
            tile: None,
        }
    }

    /// Carves rows of a DDR tensor into a Memtile tile.
    fn input_boundary(&mut self, i: usize, step: &Step) -> Result<LayerPlan, PlanError> {
        let layer = &step.layer;
        let src = &layer.inputs[0];
        let mut ddr_in = Vec::new();
        if let Some(r) = self.resident.get(src).cloned() {
            if r.dirty {
                ddr_in.push(self.write_move(src, &r));
                self.resident.get_mut(src).expect("resident").dirty = false;
                self.in_ddr.insert(src.clone());
            }
        }
        let bytes = memtile_bytes(self.sched.shape(&layer.output), self.mt, 1);
        let keep: BTreeSet<String> = [layer.output.clone()].into();
        let off = match self.try_alloc(&layer.output, bytes, i) {
            Some(o) => o,
            None => {
                self.drop_clean(&keep, i);
                ddr_in.extend(self.evict_if_needed(&keep, bytes, i));
                self.try_alloc(&layer.output, bytes, i).ok_or_else(|| self.failed(layer, "input tile does not fit Memtile"))?
            }
        };
        // The tile has no DDR copy of its own; evicting it must write it back.
        self.resident.get_mut(&layer.output).expect("resident").dirty = true;
        let full = self.sched.shape(src);
        let r0 = step.rows.map_or(0, |r| r.0);
        let row_bytes = (full.w.div_ceil(self.mt) * full.c) as u64;
        ddr_in.push(DdrMove {
            kind: InstrKind::Load,
            tensor: src.clone(),
            bytes: bytes as u64,
            memtile_offset: off as u64,
            ddr_offset: self.ddr(src) + r0 as u64 * row_bytes,
        });
        let piece = Piece { ddr_in, task: None, ddr_out: Vec::new(), src_offset: 0, weight_offset: 0, dst_offset: off as u64 };
        Ok(self.boundary_plan(i, layer, piece))
    }

    fn evict_if_needed(&mut self, keep: &BTreeSet<String>, bytes: usize, step: usize) -> Vec<DdrMove> {
        if self.buf.largest_gap() >= bytes {
            return Vec::new();
        }
        self.evict(keep, step)
    }

    /// Writes a Memtile tile into its rows of a DDR tensor.
    fn output_boundary(&mut self, i: usize, step: &Step) -> Result<LayerPlan, PlanError> {
        let layer = &step.layer;
        let tile = &layer.inputs[0];
        let full = self.sched.shape(&layer.output);
        let r0 = step.rows.map_or(0, |r| r.0);
        let row_bytes = (full.w.div_ceil(self.mt) * full.c) as u64;
        let bytes = memtile_bytes(self.sched.shape(tile), self.mt, 1) as u64;
        let mut ddr_in = Vec::new();
        let src = match self.resident.get(tile) {
            Some(r) => r.offset as u64,
            None => {
                // The tile was evicted: stage it back through Memtile.
                let off = self.try_alloc(tile, bytes as usize, i).ok_or_else(|| self.failed(layer, "output tile does not fit Memtile"))?;
                ddr_in.push(DdrMove {
                    kind: InstrKind::Load,
                    tensor: tile.clone(),
                    bytes,
                    memtile_offset: off as u64,
                    ddr_offset: self.ddr(tile),
                });
                off as u64
            }
        };
        let ddr_out = vec![DdrMove {
            kind: InstrKind::Write,
            tensor: layer.output.clone(),
            bytes,
            memtile_offset: src,
            ddr_offset: self.ddr(&layer.output) + r0 as u64 * row_bytes,
        }];
        self.in_ddr.insert(layer.output.clone());
        let piece = Piece { ddr_in, task: None, ddr_out, src_offset: src, weight_offset: 0, dst_offset: 0 };
        Ok(self.boundary_plan(i, layer, piece))
    }

    /// Leaf covering output rows `rows`, `width` columns, output blocks (or
    /// channels) `co` and input blocks `ci`.
    #[allow(clippy::too_many_arguments)]
    fn leaf(
        &self,
        layer: &Layer,
        stats: Option<WeightStats>,
        rows: (usize, usize),
        width: usize,
        co: (usize, usize),
        ci: (usize, usize),
        partial: bool,
    ) -> Leaf {
        let out = self.sched.shape(&layer.output);
        let ins: Vec<Shape> = layer.inputs.iter().map(|t| self.sched.shape(t)).collect();
        let x = ins[0];
        let pad_top = if rows.0 == 0 { layer.pad.top } else { 0 };
        let pad_bottom = if rows.1 == out.h { layer.pad.bottom } else { 0 };
        let mut leaf = Leaf {
            op: CompOp::Copy,
            out_rows: rows.1 - rows.0,
            out_width: width,
            out_channels: out.c,
            load_channels: x.c,
            kernel: layer.kernel,
            stride: layer.stride,
            pad_top,
            pad_bottom,
            in_width: x.w + layer.pad.left + layer.pad.right,
            in_rows: x.h,
            out_bytes: if partial { 4 } else { 1 },
            ops_per_pixel: 1,
            weights: None,
        };
        match layer.op {
            OpKind::Conv | OpKind::Gemm => {
                let st = stats.expect("conv has weights");
                let bi = st.shape.bi;
                leaf.op = CompOp::Conv;
                leaf.out_channels = (co.1 - co.0) * st.shape.bo;
                leaf.load_channels = (ci.1 * bi).min(x.c) - ci.0 * bi;
                leaf.weights = Some(LeafWeights { stats: st, in_blocks: ci.1 - ci.0 });
            }
            OpKind::MaxPool => {
                leaf.op = CompOp::Pool;
                leaf.ops_per_pixel = layer.kernel.0 * layer.kernel.1;
            }
            OpKind::Add => {
                leaf.op = CompOp::Add;
                leaf.load_channels = ins.iter().map(|s| s.c).sum();
                leaf.ops_per_pixel = ins.len();
            }
            OpKind::Concat | OpKind::Identity => {
                leaf.load_channels = ins.iter().map(|s| s.c).sum();
            }
            OpKind::GlobalPool => {
                leaf.op = CompOp::Reduce;
                leaf.out_rows = 1;
                leaf.out_width = 1;
                leaf.in_width = x.w;
                leaf.ops_per_pixel = x.w;
                leaf.pad_top = 0;
                leaf.pad_bottom = 0;
            }
            OpKind::InputBoundary | OpKind::OutputBoundary => unreachable!("boundaries carry no core work"),
        }
        leaf
    }

    fn full_leaf(&self, layer: &Layer, stats: Option<WeightStats>) -> Leaf {
        let out = self.sched.shape(&layer.output);
        let (co, ci) = stats.map_or(((0, out.c), (0, 1)), |s| ((0, s.rows), (0, s.cols)));
        self.leaf(layer, stats, (0, out.h), out.w, co, ci, false)
    }

    fn strict_check(&self, layer: &Layer, stats: Option<WeightStats>) -> Result<(), PlanError> {
        if let Some(s) = stats {
            let rows = self.cfg.mesh.rows;
            if self.opts.strict && s.rows % rows != 0 {
                return Err(self.failed(layer, format!("{} weight blocks cannot be split evenly over {rows} core rows", s.rows)));
            }
        }
        Ok(())
    }

    fn compute(&mut self, i: usize, step: &Step) -> Result<LayerPlan, PlanError> {
        let layer = &step.layer;
        let stats = WeightStats::of(layer, self.opts.block);
        self.strict_check(layer, stats)?;
        let ins = distinct_inputs(layer);
        let wkey = step.weights_key.as_deref().map(weight_name);
        let mut keep: BTreeSet<String> = ins.iter().cloned().collect();
        keep.insert(layer.output.clone());
        keep.extend(wkey.clone());
        let mut pre = Vec::new();
        for stage in 0..3 {
            match stage {
                1 => self.drop_clean(&keep, i),
                2 => pre.extend(self.evict(&keep, i)),
                _ => {}
            }
            if let Some(lp) = self.try_resident(i, layer, stats, wkey.as_deref(), &pre) {
                return Ok(lp);
            }
            if let (Some(st), Some(w)) = (stats, wkey.as_deref()) {
                if let Some(lp) = self.try_stream(i, layer, st, w, &pre) {
                    return Ok(lp);
                }
            }
        }
        self.spill(i, layer, stats, pre)
    }

    /// Allocates every input not yet resident; returns the fresh ones.
    fn alloc_inputs(&mut self, ins: &[String], step: usize, fresh: &mut Vec<String>) -> bool {
        for t in ins {
            if self.resident.contains_key(t) {
                continue;
            }
            let bytes = memtile_bytes(self.sched.shape(t), self.mt, 1);
            if self.try_alloc(t, bytes, step).is_none() {
                return false;
            }
            fresh.push(t.clone());
        }
        true
    }

    fn load_moves(&self, fresh: &[String]) -> Vec<DdrMove> {
        fresh
            .iter()
            .map(|t| {
                let r = &self.resident[t];
                let kind = if t.starts_with("w:") { InstrKind::LoadW } else { InstrKind::Load };
                debug_assert!(self.in_ddr.contains(t), "`{t}` has no DDR copy");
                DdrMove { kind, tensor: t.clone(), bytes: r.bytes as u64, memtile_offset: r.offset as u64, ddr_offset: self.ddr(t) }
            })
            .collect()
    }

    fn finish_output(&mut self, layer: &Layer) -> Vec<DdrMove> {
        let out = &layer.output;
        let r = self.resident[out].clone();
        if self.sched.is_output(out) {
            self.in_ddr.insert(out.clone());
            vec![self.write_move(out, &r)]
        } else {
            self.resident.get_mut(out).expect("resident").dirty = true;
            Vec::new()
        }
    }

    fn layer_plan(
        &self,
        i: usize,
        layer: &Layer,
        stats: Option<WeightStats>,
        mode: LayerMode,
        split: SplitPlan,
        pieces: Vec<Piece>,
    ) -> LayerPlan {
        LayerPlan {
            step: i,
            layer: layer.id.clone(),
            op: layer.op,
            mode,
            split,
            sparsity: stats.map_or(0.0, |s| s.sparsity()),
            weight_bytes: stats.map_or(0, |s| s.total_bytes() as u64),
            pieces,
            tile: None,
        }
    }

    fn try_resident(
        &mut self,
        i: usize,
        layer: &Layer,
        stats: Option<WeightStats>,
        wkey: Option<&str>,
        pre: &[DdrMove],
    ) -> Option<LayerPlan> {
        let ins = distinct_inputs(layer);
        let mut fresh = Vec::new();
        let mut ok = self.alloc_inputs(&ins, i, &mut fresh);
        if ok {
            if let (Some(w), Some(st)) = (wkey, stats) {
                if !self.resident.contains_key(w) {
                    ok = self.try_alloc(w, st.total_bytes().div_ceil(self.mt), i).is_some();
                    if ok {
                        fresh.push(w.to_string());
                    }
                }
            }
        }
        let out_bytes = memtile_bytes(self.sched.shape(&layer.output), self.mt, 1);
        if ok {
            ok = self.try_alloc(&layer.output, out_bytes, i).is_some();
            if ok {
                fresh.push(layer.output.clone());
            }
        }
        let task = if ok { fit_core(&self.full_leaf(layer, stats), self.cfg) } else { None };
        let Some(task) = task else {
            for t in fresh {
                self.release(&t);
            }
            return None;
        };
        fresh.pop();
        let mut ddr_in = pre.to_vec();
        ddr_in.extend(self.load_moves(&fresh));
        let ddr_out = self.finish_output(layer);
        let piece = Piece {
            ddr_in,
            task: Some(task),
            ddr_out,
            src_offset: self.resident[&ins[0]].offset as u64,
            weight_offset: wkey.map_or(0, |w| self.resident[w].offset as u64),
            dst_offset: self.resident[&layer.output].offset as u64,
        };
        Some(self.layer_plan(i, layer, stats, LayerMode::Resident, SplitPlan::none(), vec![piece]))
    }

    /// Activations resident, weights streamed through one buffer in
    /// output-block pieces.
    fn try_stream(&mut self, i: usize, layer: &Layer, st: WeightStats, wkey: &str, pre: &[DdrMove]) -> Option<LayerPlan> {
        let ins = distinct_inputs(layer);
        let mut fresh = Vec::new();
        let mut ok = self.alloc_inputs(&ins, i, &mut fresh);
        let out_bytes = memtile_bytes(self.sched.shape(&layer.output), self.mt, 1);
        if ok {
            ok = self.try_alloc(&layer.output, out_bytes, i).is_some();
        }
        let rollback = |p: &mut Self, fresh: &[String], out: bool| {
            for t in fresh {
                p.release(t);
            }
            if out {
                p.release(&layer.output);
            }
        };
        if !ok {
            let out_alloc = self.resident.get(&layer.output).is_some_and(|r| r.first_step == i);
            rollback(self, &fresh, out_alloc);
            return None;
        }
        let gap = self.buf.largest_gap();
        let rows = self.cfg.mesh.rows;
        let piece_bytes = |co: usize| st.bytes_for(co, st.cols).div_ceil(self.mt);
        let mut chunk = (1..=st.rows).rev().find(|&co| piece_bytes(co) <= gap).unwrap_or(0);
        if self.opts.strict {
            while chunk > 0 && (!st.rows.is_multiple_of(chunk) || !chunk.is_multiple_of(rows)) {
                chunk -= 1;
            }
        }
        let stream = format!("{wkey}~stream");
        if chunk == 0 || self.try_alloc(&stream, piece_bytes(chunk), i).is_none() {
            rollback(self, &fresh, true);
            return None;
        }
        let out = self.sched.shape(&layer.output);
        let n = st.rows.div_ceil(chunk);
        let mut tasks = Vec::with_capacity(n);
        for p in 0..n {
            let co = (p * chunk, ((p + 1) * chunk).min(st.rows));
            match fit_core(&self.leaf(layer, Some(st), (0, out.h), out.w, co, (0, st.cols), false), self.cfg) {
                Some(t) => tasks.push((co, t)),
                None => {
                    self.release(&stream);
                    rollback(self, &fresh, true);
                    return None;
                }
            }
        }
        let w_off = self.resident[&stream].offset as u64;
        let src = self.resident[&ins[0]].offset as u64;
        let dst = self.resident[&layer.output].offset as u64;
        let loads = self.load_moves(&fresh);
        let mut pieces = Vec::with_capacity(n);
        for (p, (co, task)) in tasks.into_iter().enumerate() {
            let mut ddr_in = if p == 0 { pre.iter().cloned().chain(loads.iter().cloned()).collect() } else { Vec::new() };
            let frac = st.bytes_for(co.1 - co.0, st.cols).div_ceil(self.mt) as u64;
            ddr_in.push(DdrMove {
                kind: InstrKind::LoadW,
                tensor: wkey.into(),
                bytes: frac,
                memtile_offset: w_off,
                ddr_offset: self.ddr(wkey) + (co.0 * st.shape.bo) as u64,
            });
            pieces.push(Piece { ddr_in, task: Some(task), ddr_out: Vec::new(), src_offset: src, weight_offset: w_off, dst_offset: dst });
        }
        self.free(&stream, i);
        let ddr_out = self.finish_output(layer);
        pieces.last_mut().expect("at least one piece").ddr_out = ddr_out;
        let split = SplitPlan { factors: vec![(SplitAxis::Cout, n)], partials: false };
        Some(self.layer_plan(i, layer, Some(st), LayerMode::StreamWeights, split, pieces))
    }

    /// Input rows a piece of output rows reads, clipped to the tensor.
    fn input_rows(layer: &Layer, rows: (usize, usize), in_h: usize) -> (usize, usize) {
        if layer.op == OpKind::GlobalPool {
            return (0, in_h);
        }
        let (kh, s) = (layer.kernel.0, layer.stride);
        let lo = (rows.0 * s).saturating_sub(layer.pad.top);
        let hi = ((rows.1 - 1) * s + kh).saturating_sub(layer.pad.top).min(in_h);
        (lo.min(hi), hi)
    }

    fn input_cols_per_memtile(&self, layer: &Layer, width: usize, in_w: usize) -> usize {
        if layer.op == OpKind::GlobalPool {
            return in_w.div_ceil(self.mt);
        }
        let wpm = width.div_ceil(self.mt);
        ((wpm - 1) * layer.stride + layer.kernel.1).min(in_w)
    }

    /// Per-Memtile bytes of one piece: input slices, weights and output.
    fn piece_footprint(&self, layer: &Layer, stats: Option<WeightStats>, c: &SplitChoice) -> (Vec<usize>, usize, usize) {
        let out = self.sched.shape(&layer.output);
        let hp = out.h.div_ceil(c.fh);
        let wp = out.w.div_ceil(c.fw);
        let ins: Vec<Shape> = layer.inputs.iter().map(|t| self.sched.shape(t)).collect();
        let (in_ch, out_ch, wbytes) = match stats {
            Some(st) => {
                let cop = st.rows.div_ceil(c.fco);
                let cip = st.cols.div_ceil(c.fci);
                ((cip * st.shape.bi).min(ins[0].c), (cop * st.shape.bo).min(out.c), st.bytes_for(cop, cip).div_ceil(self.mt))
            }
            None => (0, out.c, 0),
        };
        let in_bytes = ins
            .iter()
            .map(|s| {
                let (r0, r1) = Self::input_rows(layer, (0, hp), s.h);
                let ch = if stats.is_some() { in_ch } else { s.c };
                (r1 - r0) * self.input_cols_per_memtile(layer, wp, s.w) * ch
            })
            .collect();
        let out_rows = if layer.op == OpKind::GlobalPool { 1 } else { hp };
        let elem = if c.fci > 1 { 4 } else { 1 };
        (in_bytes, wbytes, out_rows * wp.div_ceil(self.mt) * out_ch * elem)
    }

    /// Fewest pieces that fit an empty Memtile and core memory; ties go to
    /// the most preferred axes.
    fn search_split(&self, layer: &Layer, stats: Option<WeightStats>) -> Result<SplitChoice, PlanError> {
        let out = self.sched.shape(&layer.output);
        let budget = self.cfg.memtile_bytes;
        let rows = self.cfg.mesh.rows;
        let reduce = layer.op == OpKind::GlobalPool;
        let fws = if reduce { vec![1] } else { distinct_factors(out.w) };
        let fhs = if reduce { vec![1] } else { distinct_factors(out.h) };
        let (fcos, fcis) = match stats {
            Some(s) => (distinct_factors(s.rows), distinct_factors(s.cols)),
            None => (vec![1], vec![1]),
        };
        let rank = |c: &SplitChoice| {
            let f = |a: SplitAxis| match a {
                SplitAxis::W => c.fw,
                SplitAxis::Cout => c.fco,
                SplitAxis::H => c.fh,
                SplitAxis::Cin => c.fci,
            };
            let o = &self.opts.split_order;
            (c.fw * c.fh * c.fco * c.fci, f(o[3]), f(o[2]), f(o[1]))
        };
        let mut best: Option<SplitChoice> = None;
        for &fco in &fcos {
            if let Some(s) = stats {
                let cop = s.rows.div_ceil(fco);
                if self.opts.strict && (s.rows % fco != 0 || cop % rows != 0) {
                    continue;
                }
            }
            for &fci in &fcis {
                for &fw in &fws {
                    let base = fco * fci * fw;
                    if best.as_ref().is_some_and(|b| rank(b).0 < base) {
                        continue;
                    }
                    let co = stats.map_or((0, out.c), |s| (0, s.rows.div_ceil(fco)));
                    let ci = stats.map_or((0, 1), |s| (0, s.cols.div_ceil(fci)));
                    let leaf = self.leaf(layer, stats, (0, out.h), out.w.div_ceil(fw), co, ci, fci > 1);
                    if fit_core(&leaf, self.cfg).is_none() {
                        continue;
                    }
                    for &fh in &fhs {
                        let cand = SplitChoice { plan: SplitPlan::none(), fw, fh, fco, fci };
                        if best.as_ref().is_some_and(|b| rank(b) <= rank(&cand)) {
                            break;
                        }
                        let (ins, w, o) = self.piece_footprint(layer, stats, &cand);
                        if ins.iter().sum::<usize>() + w + o <= budget {
                            best = Some(cand);
                            break;
                        }
                    }
                }
            }
        }
        let mut c = best.ok_or_else(|| self.failed(layer, "no split fits Memtile and core memory"))?;
        let mut factors = Vec::new();
        for a in self.opts.split_order {
            let f = match a {
                SplitAxis::W => c.fw,
                SplitAxis::Cout => c.fco,
                SplitAxis::H => c.fh,
                SplitAxis::Cin => c.fci,
            };
            if f > 1 {
                factors.push((a, f));
            }
        }
        c.plan = SplitPlan { factors, partials: c.fci > 1 };
        Ok(c)
    }

    fn spill(&mut self, i: usize, layer: &Layer, stats: Option<WeightStats>, mut pre: Vec<DdrMove>) -> Result<LayerPlan, PlanError> {
        pre.extend(self.evict(&BTreeSet::new(), i));
        // Inputs just written back must be reloaded by the pieces.
        for t in distinct_inputs(layer) {
            if !self.in_ddr.contains(&t) {
                return Err(self.failed(layer, format!("input `{t}` has no DDR copy")));
            }
        }
        let c = self.search_split(layer, stats)?;
        let out = self.sched.shape(&layer.output);
        let (in_sizes, w_size, out_size) = self.piece_footprint(layer, stats, &c);
        let ins = layer.inputs.clone();
        let in_names: Vec<String> = (0..ins.len()).map(|k| format!("{}~in{k}", layer.id)).collect();
        let mut in_offs = Vec::new();
        for (n, &b) in in_names.iter().zip(&in_sizes) {
            in_offs.push(self.try_alloc(n, b, i).ok_or_else(|| self.failed(layer, "piece buffers do not fit"))? as u64);
        }
        let w_name = format!("{}~w", layer.id);
        let w_off = if stats.is_some() {
            self.try_alloc(&w_name, w_size, i).ok_or_else(|| self.failed(layer, "piece buffers do not fit"))? as u64
        } else {
            0
        };
        let o_name = format!("{}~out", layer.id);
        let o_off = self.try_alloc(&o_name, out_size, i).ok_or_else(|| self.failed(layer, "piece buffers do not fit"))? as u64;
        let elem = if c.fci > 1 { 4 } else { 1 };
        let mut pieces = Vec::new();
        let (nbo, nbi) = stats.map_or((out.c, 1), |s| (s.rows, s.cols));
        let (cop, cip) = (nbo.div_ceil(c.fco), nbi.div_ceil(c.fci));
        let (hp, wp) = (out.h.div_ceil(c.fh), out.w.div_ceil(c.fw));
        for a in 0..c.fco {
            let co = (a * cop, ((a + 1) * cop).min(nbo));
            if co.0 >= co.1 {
                continue;
            }
            for b in 0..c.fci {
                let ci = (b * cip, ((b + 1) * cip).min(nbi));
                if ci.0 >= ci.1 {
                    continue;
                }
                let mut weights_loaded = false;
                for h in 0..c.fh {
                    let rows = (h * hp, ((h + 1) * hp).min(out.h));
                    if rows.0 >= rows.1 {
                        continue;
                    }
                    for w in 0..c.fw {
                        let cols = (w * wp, ((w + 1) * wp).min(out.w));
                        if cols.0 >= cols.1 {
                            continue;
                        }
                        let width = cols.1 - cols.0;
                        let leaf = self.leaf(layer, stats, rows, width, if stats.is_some() { co } else { (0, out.c) }, ci, c.fci > 1);
                        let task = fit_core(&leaf, self.cfg).ok_or_else(|| self.failed(layer, "piece does not fit core memory"))?;
                        let mut ddr_in = if pieces.is_empty() { std::mem::take(&mut pre) } else { Vec::new() };
                        for (k, t) in ins.iter().enumerate() {
                            let s = self.sched.shape(t);
                            let (r0, r1) = Self::input_rows(layer, rows, s.h);
                            let ch = match stats {
                                Some(st) => (ci.1 * st.shape.bi).min(s.c) - ci.0 * st.shape.bi,
                                None => s.c,
                            };
                            let bytes = ((r1 - r0) * self.input_cols_per_memtile(layer, width, s.w) * ch) as u64;
                            let row_bytes = (s.w.div_ceil(self.mt) * s.c) as u64;
                            ddr_in.push(DdrMove {
                                kind: InstrKind::Load,
                                tensor: t.clone(),
                                bytes,
                                memtile_offset: in_offs[k],
                                ddr_offset: self.ddr(t) + r0 as u64 * row_bytes,
                            });
                        }
                        if let (Some(st), false) = (stats, weights_loaded) {
                            let bytes = st.bytes_for(co.1 - co.0, ci.1 - ci.0).div_ceil(self.mt) as u64;
                            ddr_in.push(DdrMove {
                                kind: InstrKind::LoadW,
                                tensor: weight_name(&layer.id),
                                bytes,
                                memtile_offset: w_off,
                                ddr_offset: self.ddr(&weight_name(&layer.id)),
                            });
                            weights_loaded = true;
                        }
                        let out_rows = if layer.op == OpKind::GlobalPool { 1 } else { rows.1 - rows.0 };
                        let out_ch = stats.map_or(out.c, |st| ((co.1 * st.shape.bo).min(out.c)) - co.0 * st.shape.bo);
                        let bytes = (out_rows * width.div_ceil(self.mt) * out_ch * elem) as u64;
                        let target = if c.fci > 1 { format!("{}~p{b}", layer.output) } else { layer.output.clone() };
                        let row_bytes = (out.w.div_ceil(self.mt) * out.c * elem) as u64;
                        let ddr_out = vec![DdrMove {
                            kind: InstrKind::Write,
                            tensor: target.clone(),
                            bytes,
                            memtile_offset: o_off,
                            ddr_offset: self.ddr(&target) + rows.0 as u64 * row_bytes,
                        }];
                        pieces.push(Piece {
                            ddr_in,
                            task: Some(task),
                            ddr_out,
                            src_offset: in_offs[0],
                            weight_offset: w_off,
                            dst_offset: o_off,
                        });
                    }
                }
            }
        }
        for n in in_names.iter().chain([&w_name, &o_name]) {
            self.free(n, i);
        }
        if c.fci > 1 {
            pieces.extend(self.combine(i, layer, c.fci)?);
        }
        self.in_ddr.insert(layer.output.clone());
        Ok(self.layer_plan(i, layer, stats, LayerMode::Spill, c.plan, pieces))
    }

    /// Sums `parts` `i32` partial outputs into the final tensor, split by rows.
    fn combine(&mut self, i: usize, layer: &Layer, parts: usize) -> Result<Vec<Piece>, PlanError> {
        let out = self.sched.shape(&layer.output);
        let wpm = out.w.div_ceil(self.mt);
        let row = wpm * out.c;
        let per_row = row * (4 * parts + 1);
        let hp = (self.cfg.memtile_bytes / per_row).min(out.h);
        if hp == 0 {
            return Err(self.failed(layer, "partial sums do not fit Memtile"));
        }
        let name_in = format!("{}~sum_in", layer.id);
        let name_out = format!("{}~sum_out", layer.id);
        let in_off =
            self.try_alloc(&name_in, hp * row * 4 * parts, i).ok_or_else(|| self.failed(layer, "partial sums do not fit Memtile"))? as u64;
        let out_off = self.try_alloc(&name_out, hp * row, i).ok_or_else(|| self.failed(layer, "partial sums do not fit Memtile"))? as u64;
        let mut pieces = Vec::new();
        for r0 in (0..out.h).step_by(hp) {
            let r1 = (r0 + hp).min(out.h);
            let rows = r1 - r0;
            let leaf = Leaf {
                op: CompOp::Add,
                out_rows: rows,
                out_width: out.w,
                out_channels: out.c,
                load_channels: out.c * 4 * parts,
                kernel: (1, 1),
                stride: 1,
                pad_top: 0,
                pad_bottom: 0,
                in_width: out.w,
                in_rows: rows,
                out_bytes: 1,
                ops_per_pixel: parts,
                weights: None,
            };
            let task = fit_core(&leaf, self.cfg).ok_or_else(|| self.failed(layer, "partial sum does not fit core memory"))?;
            let ddr_in = (0..parts)
                .map(|b| {
                    let t = format!("{}~p{b}", layer.output);
                    DdrMove {
                        kind: InstrKind::Load,
                        tensor: t.clone(),
                        bytes: (rows * row * 4) as u64,
                        memtile_offset: in_off + (b * hp * row * 4) as u64,
                        ddr_offset: self.ddr(&t) + (r0 * row * 4) as u64,
                    }
                })
                .collect();
            let ddr_out = vec![DdrMove {
                kind: InstrKind::Write,
                tensor: layer.output.clone(),
                bytes: (rows * row) as u64,
                memtile_offset: out_off,
                ddr_offset: self.ddr(&layer.output) + (r0 * row) as u64,
            }];
            pieces.push(Piece { ddr_in, task: Some(task), ddr_out, src_offset: in_off, weight_offset: 0, dst_offset: out_off });
        }
        self.free(&name_in, i);
        self.free(&name_out, i);
        Ok(pieces)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netir::fixtures;

    #[test]
    fn factors_distinct() {
        assert_eq!(distinct_factors(7), vec![1, 2, 3, 4, 7]);
        assert_eq!(distinct_factors(1), vec![1]);
        for n in [5usize, 14, 56, 224] {
            let f = distinct_factors(n);
            let q: BTreeSet<usize> = f.iter().map(|&x| n.div_ceil(x)).collect();
            assert_eq!(q.len(), f.len());
            assert_eq!(*f.last().unwrap(), n);
        }
    }

    #[test]
    fn small_conv_single_leaf() {
        let g = fixtures::small_cnn();
        let cfg = HwConfig::default();
        let p = plan(&g, &cfg, &PlanOptions::default()).unwrap();
        let l = p.layer("conv1").unwrap();
        assert_eq!(l.mode, LayerMode::Resident);
        assert_eq!(l.pieces.len(), 1);
        let t = l.pieces[0].task.as_ref().unwrap();
        let iters: usize = t.phases(0).iter().map(|s| s.iters).sum();
        assert_eq!(iters, 32);
        p.allocation.check_disjoint().unwrap();
    }

    #[test]
    fn resident_chain_has_no_activation_spills() {
        let g = fixtures::small_cnn();
        let p = plan(&g, &HwConfig::default(), &PlanOptions::default()).unwrap();
        let x = memtile_bytes(g.shape("x"), 4, 1) as u64;
        let y = memtile_bytes(g.shape("conv3"), 4, 1) as u64;
        // Only the graph input is loaded and only the graph output written.
        assert_eq!(p.ddr_bytes(InstrKind::Load), x);
        assert_eq!(p.ddr_bytes(InstrKind::Write), y);
    }

    #[test]
    fn vgg_first_layers_do_not_fit() {
        let g = fixtures::vgg16();
        let r = fits(&g, "conv1_2", &HwConfig::default(), &PlanOptions::default()).unwrap();
        assert_eq!(r.input_bytes, 224 * 224 * 64);
        assert!(!r.fits);
        assert_eq!(r.budget, 4 * 524288);
    }

    #[test]
    fn tiny_memtile_spills_everywhere() {
        let g = fixtures::small_cnn();
        let cfg = HwConfig { memtile_bytes: 4 * 1024, ..HwConfig::default() };
        let p = plan(&g, &cfg, &PlanOptions::default()).unwrap();
        for l in &p.layers {
            assert_eq!(l.mode, LayerMode::Spill, "{}", l.layer);
            assert!(l.ddr_bytes(InstrKind::Load) > 0 && l.ddr_bytes(InstrKind::Write) > 0);
        }
        p.allocation.check_disjoint().unwrap();
    }

    #[test]
    fn strict_rejects_uneven_rows() {
        let g = fixtures::small_cnn();
        let cfg = HwConfig::with_mesh(3, 3);
        let strict = PlanOptions { strict: true, ..PlanOptions::default() };
        let err = plan(&g, &cfg, &strict).unwrap_err();
        assert!(matches!(err, PlanError::Failed { .. }));
        assert!(plan(&g, &cfg, &PlanOptions::default()).is_ok());
    }

    #[test]
    fn split_prefers_fewest_pieces() {
        let g = fixtures::vgg16();
        let cfg = HwConfig::default();
        let s = split(&g, "conv1_2", &cfg, &PlanOptions::default()).unwrap();
        assert!(s.pieces() >= 2);
        assert!(!s.partials);
    }
}
