//! End-to-end helpers: sparsify a graph, plan it, emit the program,
//! estimate its time and compare tilings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bscore::{sparsity_ratio, BlockCooWeight, BlockShape, SparsityRatio};
use crate::codegen::{emit_program, Program};
use crate::hwmodel::HwConfig;
use crate::netir::{materialize_weights, IrError, NetGraph, WeightSource};
use crate::planner::{plan_schedule, Plan, PlanError, PlanOptions, Schedule};
use crate::sparsifier::{select_mask, ImportanceMeasure, SparsifyError, SparsitySchedule};
use crate::tiler::{best_chain, choose_tiles, unroll, Chain, TileError, TilePlan};
use crate::timeline::{estimate_program, Estimate};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("layer `{layer}`: {source}")]
    Sparsify {
        layer: String,
        #[source]
        source: SparsifyError,
    },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsifyOptions {
    pub schedule: SparsitySchedule,
    pub measure: ImportanceMeasure,
    /// Leave the first convolution dense; it usually has very few input
    /// channels.
    pub exempt_first: bool,
}

impl SparsifyOptions {
    pub fn new(target: f64, shape: BlockShape) -> Self {
        Self { schedule: SparsitySchedule::one_shot(target, shape), measure: ImportanceMeasure::L2, exempt_first: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: String,
    pub cells: usize,
    pub zeroed: usize,
    pub ratio: f64,
}

/// Selects a mask for every weighted layer and records it in the graph.
/// A zero target leaves the graph untouched.
pub fn sparsify_graph(graph: &NetGraph, opts: &SparsifyOptions) -> Result<(NetGraph, Vec<LayerSparsity>), PipelineError> {
    let mut out = graph.clone();
    let mut report = Vec::new();
    if opts.schedule.target == 0.0 {
        return Ok((out, report));
    }
    let first = graph.first_conv().map(|l| l.id.clone());
    for layer in &graph.layers {
        if layer.weights.is_none() || (opts.exempt_first && Some(&layer.id) == first.as_ref()) {
            continue;
        }
        let w = materialize_weights(graph, layer)?.map(f64::from);
        let err = |source| PipelineError::Sparsify { layer: layer.id.clone(), source };
        let mask = select_mask(&w, opts.measure, &opts.schedule).map_err(err)?;
        let ratio = match sparsity_ratio(&mask, false).map_err(|e| err(e.into()))? {
            SparsityRatio::Aggregate(r) => r,
            SparsityRatio::PerRow(v) => v.iter().sum::<f64>() / v.len().max(1) as f64,
        };
        let zeroed = mask.bits().iter().filter(|b| !**b).count();
        report.push(LayerSparsity { layer: layer.id.clone(), cells: mask.cells(), zeroed, ratio });
        if let Some(spec) = out.layer_mut(&layer.id).and_then(|l| l.weights.as_mut()) {
            spec.mask = Some(mask);
        }
    }
    Ok((out, report))
}

/// Stores every masked layer's weights as a block-COO file next to the
/// model, named `{model}.{layer}.bcoo`, and points the layer at it.
pub fn export_sidecars(graph: &NetGraph, dir: &Path) -> Result<NetGraph, PipelineError> {
    let mut out = graph.clone();
    for layer in &graph.layers {
        let Some(mask) = layer.mask() else { continue };
        let w = materialize_weights(graph, layer)?;
        let coo = BlockCooWeight::compress(&w, mask).map_err(IrError::from)?.map(|v| v as i8);
        let bytes = coo.to_bytes();
        let name = format!("{}.{}.bcoo", graph.name, layer.id);
        let path = dir.join(&name);
        std::fs::write(&path, &bytes).map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
        let spec = out.layer_mut(&layer.id).and_then(|l| l.weights.as_mut()).expect("weighted layer");
        spec.source = WeightSource::Sidecar { path: name, sha256: crate::netir::sha256_hex(&bytes) };
    }
    out.base_dir = Some(dir.to_path_buf());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compiled {
    pub plan: Plan,
    pub program: Program,
}

pub fn compile(graph: &NetGraph, cfg: &HwConfig, opts: &PlanOptions) -> Result<Compiled, PipelineError> {
    compile_schedule(&Schedule::from_graph(graph), cfg, opts)
}

pub fn compile_schedule(sched: &Schedule, cfg: &HwConfig, opts: &PlanOptions) -> Result<Compiled, PipelineError> {
    let plan = plan_schedule(sched, cfg, opts)?;
    let program = emit_program(&plan);
    Ok(Compiled { plan, program })
}

pub fn estimate_schedule(sched: &Schedule, cfg: &HwConfig, opts: &PlanOptions) -> Result<(Compiled, Estimate), PlanError> {
    let plan = plan_schedule(sched, cfg, opts)?;
    let program = emit_program(&plan);
    let e = estimate_program(&program, cfg);
    Ok((Compiled { plan, program }, e))
}

pub fn estimate(graph: &NetGraph, cfg: &HwConfig, opts: &PlanOptions) -> Result<(Compiled, Estimate), PipelineError> {
    let c = compile(graph, cfg, opts)?;
    let e = estimate_program(&c.program, cfg);
    Ok((c, e))
}

/// Totals of the four variants of the tiling comparison, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingStudy {
    pub chain: Chain,
    pub tiles: usize,
    pub ddr_only: f64,
    pub tiled: f64,
    pub sparse: f64,
    pub tiled_sparse: f64,
    pub tile_plan: TilePlan,
}

impl TilingStudy {
    pub fn table(&self) -> String {
        let chain = format!("{}..{}", self.chain.layers[0], self.chain.layers[self.chain.layers.len() - 1]);
        let mut s = format!("chain {chain} in {} tiles\n", self.tiles);
        for (name, v) in [("ddr-only", self.ddr_only), ("tiled", self.tiled), ("sparse", self.sparse), ("tiled+sparse", self.tiled_sparse)]
        {
            s.push_str(&format!("{name:<14} {v:.6e} s\n"));
        }
        s
    }
}

/// Longest chain considered when the chain is picked automatically.
pub const MAX_CHAIN: usize = 8;

/// Estimates the graph untiled and tiled, dense and sparse. Without an
/// explicit chain, the one with the smallest dense tiled estimate is used;
/// without a tile count, the fewest tiles that keep the chain off DDR.
/// A single tile is the untiled graph.
pub fn tiling_study(
    graph: &NetGraph,
    cfg: &HwConfig,
    opts: &PlanOptions,
    chain: Option<Chain>,
    tiles: Option<usize>,
    sparsify: &SparsifyOptions,
) -> Result<TilingStudy, PipelineError> {
    let (sparse_graph, _) = sparsify_graph(graph, sparsify)?;
    let tile_plan = match (chain, tiles) {
        (Some(c), Some(m)) => TilePlan::new(graph, &c, m)?,
        (Some(c), None) => choose_tiles(graph, &c, cfg, opts, graph.shape(&c.output).h)?,
        (None, m) => best_chain(graph, cfg, opts, m, MAX_CHAIN)?.tiles,
    };
    let chain = tile_plan.chain.clone();
    let sparse_plan = TilePlan::new(&sparse_graph, &chain, tile_plan.tiles)?;
    let total = |g: &NetGraph, p: Option<&TilePlan>| -> Result<f64, PipelineError> {
        let sched = match p {
            Some(p) if p.tiles > 1 => unroll(g, std::slice::from_ref(p)),
            _ => Schedule::from_graph(g),
        };
        Ok(estimate_schedule(&sched, cfg, opts)?.1.report.total_s)
    };
    Ok(TilingStudy {
        tiles: tile_plan.tiles,
        ddr_only: total(graph, None)?,
        tiled: total(graph, Some(&tile_plan))?,
        sparse: total(&sparse_graph, None)?,
        tiled_sparse: total(&sparse_graph, Some(&sparse_plan))?,
        chain,
        tile_plan,
    })
}
