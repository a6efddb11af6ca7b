//! Browser bindings: estimate a built-in network on a chosen mesh, run the
//! tiling comparison, and inspect the block masks picked by the sparsifier.
//! Every call returns JSON text or an error message.

use serde_json::{json, Value};
use sparsetile::bscore::BlockShape;
use sparsetile::hwmodel::HwConfig;
use sparsetile::netir::{fixtures, NetGraph};
use sparsetile::pipeline::{estimate, sparsify_graph, tiling_study, SparsifyOptions};
use sparsetile::planner::PlanOptions;
use wasm_bindgen::prelude::*;

fn graph(name: &str) -> Result<NetGraph, String> {
    fixtures::by_name(name).ok_or_else(|| format!("unknown network `{name}` (one of {})", fixtures::NAMES.join(", ")))
}

fn config(rows: usize, cols: usize, ddr_slowdown: f64) -> Result<HwConfig, String> {
    HwConfig { ddr_slowdown, ..HwConfig::with_mesh(rows, cols) }.validated().map_err(|e| e.to_string())
}

fn sparsity(target: f64) -> SparsifyOptions {
    SparsifyOptions::new(target, BlockShape::B8X8)
}

fn to_text(v: Value) -> String {
    serde_json::to_string(&v).expect("json values serialize")
}

/// Names of the built-in networks, as a JSON array.
#[wasm_bindgen]
pub fn networks() -> String {
    to_text(json!(fixtures::NAMES))
}

/// Dense and sparse estimates of a network: per-layer times, totals in
/// seconds and the speedup.
#[wasm_bindgen]
pub fn estimate_network(name: &str, rows: usize, cols: usize, ddr_slowdown: f64, target: f64) -> Result<String, String> {
    let g = graph(name)?;
    let cfg = config(rows, cols, ddr_slowdown)?;
    let opts = PlanOptions::default();
    let (_, dense) = estimate(&g, &cfg, &opts).map_err(|e| e.to_string())?;
    let (s, _) = sparsify_graph(&g, &sparsity(target)).map_err(|e| e.to_string())?;
    let (_, sparse) = estimate(&s, &cfg, &opts).map_err(|e| e.to_string())?;
    Ok(to_text(json!({
        "dense": dense.report,
        "sparse": sparse.report,
        "speedup": dense.report.total_s / sparse.report.total_s,
    })))
}

/// The four-way tiling comparison. A tile count of zero picks the fewest
/// tiles that keep the chain off DDR.
#[wasm_bindgen]
pub fn tile_network(name: &str, rows: usize, cols: usize, ddr_slowdown: f64, tiles: usize, target: f64) -> Result<String, String> {
    let g = graph(name)?;
    let cfg = config(rows, cols, ddr_slowdown)?;
    let tiles = (tiles > 0).then_some(tiles);
    let study = tiling_study(&g, &cfg, &PlanOptions::default(), None, tiles, &sparsity(target)).map_err(|e| e.to_string())?;
    Ok(to_text(json!({
        "chain": study.chain.layers,
        "tiles": study.tiles,
        "overlap": study.tile_plan.overlap,
        "ddr_only": study.ddr_only,
        "tiled": study.tiled,
        "sparse": study.sparse,
        "tiled_sparse": study.tiled_sparse,
    })))
}

/// The 8x8 block masks chosen for each weighted layer at the target ratio.
#[wasm_bindgen]
pub fn network_masks(name: &str, target: f64) -> Result<String, String> {
    let (s, report) = sparsify_graph(&graph(name)?, &sparsity(target)).map_err(|e| e.to_string())?;
    let layers: Vec<Value> = report
        .iter()
        .filter_map(|r| {
            let mask = s.layer(&r.layer)?.mask()?;
            Some(json!({ "layer": r.layer, "ratio": r.ratio, "mask": mask }))
        })
        .collect();
    Ok(to_text(json!(layers)))
}
