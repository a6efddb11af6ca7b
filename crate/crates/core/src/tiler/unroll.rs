//! Boundary layers, the unrolled tile loop and the choice of tiles.

use std::collections::BTreeSet;

use super::{input_rows, Chain, TileError, TilePlan};
use crate::bscore::Pad;
use crate::hwmodel::HwConfig;
use crate::netir::{BoundarySpec, Layer, NetGraph, OpKind, Shape, TensorInfo};
use crate::pipeline::{estimate_schedule, Compiled};
use crate::planner::{plan_schedule, Plan, PlanOptions, Schedule, Step, TileRef};
use crate::timeline::Estimate;

fn tile_name(t: &str, i: usize) -> String {
    format!("{t}@t{i}")
}

fn boundary(tiles: usize, tile_rows: usize, full_rows: usize) -> Option<BoundarySpec> {
    Some(BoundarySpec { tiles, tile_rows, full_rows })
}

fn with_rows(s: Shape, r: (usize, usize)) -> Shape {
    Shape::new(r.1 - r.0, s.w, s.c)
}

/// Tile copy of `layer` computing output rows `out`, with the padding
/// left once its input starts at the rows it needs.
fn tile_layer(graph: &NetGraph, layer: &Layer, out: (usize, usize), rename: impl Fn(&str) -> String) -> Layer {
    let (_, top, bottom) = input_rows(layer, out, graph.shape(&layer.inputs[0]).h);
    let mut l = layer.clone();
    l.id = rename(&layer.id);
    l.inputs = layer.inputs.iter().map(|t| rename(t)).collect();
    l.output = rename(&layer.output);
    if layer.op.is_windowed() {
        l.pad = Pad { top, bottom, ..layer.pad };
    }
    l
}

/// The chain as one loop body: `I_b`, the layers on tile tensors, `I_e`.
/// Tile tensors are named `{tensor}@tile` and sized for the largest tile.
pub fn insert_boundaries(graph: &NetGraph, plan: &TilePlan) -> NetGraph {
    let chain = &plan.chain;
    let rename = |t: &str| format!("{t}@tile");
    let largest = |t: &str| plan.ranges.iter().filter_map(|r| r.get(t)).map(|r| r.1 - r.0).max().unwrap_or(0);
    let mut g = graph.clone();
    let members: BTreeSet<&str> = chain.layers.iter().map(String::as_str).collect();
    let first = g.layers.iter().position(|l| members.contains(l.id.as_str())).expect("chain in graph");
    let mut body = Vec::new();
    let in_rows = largest(&chain.input);
    let mut ib = Layer::new(format!("{}:ib", chain.output), OpKind::InputBoundary, vec![chain.input.clone()], rename(&chain.input));
    ib.boundary = boundary(plan.tiles, in_rows, graph.shape(&chain.input).h);
    body.push(ib);
    let mut tensors = vec![TensorInfo::new(rename(&chain.input), Some(with_rows(graph.shape(&chain.input), (0, in_rows))))];
    for id in &chain.layers {
        let l = graph.layer(id).expect("validated chain");
        body.push(tile_layer(graph, l, plan.ranges[0][&l.output], rename));
        tensors.push(TensorInfo::new(rename(&l.output), Some(with_rows(graph.shape(&l.output), (0, largest(&l.output))))));
    }
    let mut ie = Layer::new(format!("{}:ie", chain.output), OpKind::OutputBoundary, vec![rename(&chain.output)], chain.output.clone());
    ie.boundary = boundary(plan.tiles, plan.tile_rows, graph.shape(&chain.output).h);
    body.push(ie);
    g.layers.retain(|l| !members.contains(l.id.as_str()));
    g.layers.splice(first..first, body);
    let drop: BTreeSet<String> = chain.intermediates(graph).into_iter().collect();
    g.tensors.retain(|t| !drop.contains(&t.id));
    g.tensors.extend(tensors);
    g
}

/// The schedule `I_b(0), L_0 … L_n, I_e(0), …, I_b(M−1), …, I_e(M−1)` for
/// every tiled chain, with the rest of the graph unchanged. Tile copies of
/// a layer share its weights.
pub fn unroll(graph: &NetGraph, plans: &[TilePlan]) -> Schedule {
    let mut sched = Schedule::from_graph(graph);
    let norm = graph.normalize_gemms();
    let mut steps = Vec::with_capacity(sched.steps.len());
    for step in std::mem::take(&mut sched.steps) {
        let Some(plan) = plans.iter().find(|p| p.chain.layers.contains(&step.layer.id)) else {
            steps.push(step);
            continue;
        };
        if plan.chain.layers[0] != step.layer.id {
            continue;
        }
        let chain = &plan.chain;
        for t in chain.intermediates(graph) {
            sched.tensors.remove(&t);
        }
        for i in 0..plan.tiles {
            let tile = Some(TileRef { index: i, count: plan.tiles });
            let ranges = &plan.ranges[i];
            let rename = |t: &str| tile_name(t, i);
            let in_r = ranges[&chain.input];
            let mut ib =
                Layer::new(format!("{}:ib@t{i}", chain.output), OpKind::InputBoundary, vec![chain.input.clone()], rename(&chain.input));
            ib.boundary = boundary(plan.tiles, in_r.1 - in_r.0, graph.shape(&chain.input).h);
            steps.push(Step { layer: ib, weights_key: None, tile, rows: Some(in_r), source: None });
            for id in &chain.layers {
                let l = norm.layer(id).expect("validated chain");
                let out = ranges[&l.output];
                let weights_key = l.weights.as_ref().map(|_| l.id.clone());
                steps.push(Step {
                    layer: tile_layer(graph, l, out, rename),
                    weights_key,
                    tile,
                    rows: Some(out),
                    source: Some(l.id.clone()),
                });
            }
            for (t, r) in ranges {
                let info = TensorInfo::new(rename(t), Some(with_rows(graph.shape(t), *r)));
                sched.tensors.insert(info.id.clone(), info);
            }
            let out_r = ranges[&chain.output];
            let mut ie =
                Layer::new(format!("{}:ie@t{i}", chain.output), OpKind::OutputBoundary, vec![rename(&chain.output)], chain.output.clone());
            ie.boundary = boundary(plan.tiles, out_r.1 - out_r.0, graph.shape(&chain.output).h);
            steps.push(Step { layer: ie, weights_key: None, tile, rows: Some(out_r), source: None });
        }
    }
    sched.steps = steps;
    sched
}

/// DDR bytes moved for tile tensors: zero when every tile stays in Memtile
/// between its input and output boundary.
pub fn tile_ddr_bytes(plan: &Plan) -> u64 {
    plan.layers.iter().flat_map(|l| l.moves()).filter(|m| m.tensor.contains("@t")).map(|m| m.bytes).sum()
}

/// Fewest tiles (the tallest output tile) whose intermediates fit Memtile
/// and that the planner runs with no DDR traffic for tile tensors.
pub fn choose_tiles(graph: &NetGraph, chain: &Chain, cfg: &HwConfig, opts: &PlanOptions, max_tiles: usize) -> Result<TilePlan, TileError> {
    let h = graph.shape(&chain.output).h;
    let budget = cfg.memtile_total_bytes();
    let mut last = 0;
    for u in (1..=h).rev() {
        let m = h.div_ceil(u);
        if m > max_tiles {
            break;
        }
        if m == last {
            continue;
        }
        last = m;
        let tp = TilePlan::new(graph, chain, m)?;
        if tp.peak_bytes > budget {
            continue;
        }
        let p = plan_schedule(&unroll(graph, std::slice::from_ref(&tp)), cfg, opts)?;
        if tile_ddr_bytes(&p) == 0 {
            return Ok(tp);
        }
    }
    Err(TileError::Infeasible { max: max_tiles })
}

/// Every chain of two to `max_len` consecutive layers.
pub fn candidate_chains(graph: &NetGraph, max_len: usize) -> Vec<Chain> {
    let n = graph.layers.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n.min(a + max_len) {
            let ids: Vec<&str> = graph.layers[a..=b].iter().map(|l| l.id.as_str()).collect();
            if let Ok(c) = Chain::new(graph, &ids) {
                out.push(c);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TiledEstimate {
    pub tiles: TilePlan,
    pub compiled: Compiled,
    pub estimate: Estimate,
}

/// The chain whose tiling gives the smallest estimated total. With `tiles`
/// every candidate is cut into that many tiles; otherwise each gets the
/// zero-DDR choice.
pub fn best_chain(
    graph: &NetGraph,
    cfg: &HwConfig,
    opts: &PlanOptions,
    tiles: Option<usize>,
    max_len: usize,
) -> Result<TiledEstimate, TileError> {
    let mut best: Option<TiledEstimate> = None;
    for chain in candidate_chains(graph, max_len) {
        let tp = match tiles {
            Some(m) => TilePlan::new(graph, &chain, m),
            None => choose_tiles(graph, &chain, cfg, opts, graph.shape(&chain.output).h),
        };
        let Ok(tp) = tp else { continue };
        let Ok((compiled, estimate)) = estimate_schedule(&unroll(graph, std::slice::from_ref(&tp)), cfg, opts) else { continue };
        if best.as_ref().is_none_or(|b| estimate.report.total_ps < b.estimate.report.total_ps) {
            best = Some(TiledEstimate { tiles: tp, compiled, estimate });
        }
    }
    best.ok_or(TileError::NoChain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netir::fixtures::{self, GraphBuilder};
    use crate::planner::plan;

    fn three_convs() -> NetGraph {
        let mut b = GraphBuilder::new("t", 11);
        let x = b.input("x", [32, 32, 16]);
        let a = b.conv("a", &x, 16, 3, 1, 1);
        let c = b.conv("b", &a, 16, 3, 1, 1);
        let y = b.conv("c", &c, 16, 3, 1, 1);
        b.finish(&[&y]).unwrap()
    }

    #[test]
    fn unrolled_length() {
        let g = three_convs();
        let tp = TilePlan::new(&g, &Chain::new(&g, &["a", "b", "c"]).unwrap(), 2).unwrap();
        let s = unroll(&g, &[tp]);
        assert_eq!(s.steps.len(), 10);
        let kinds: Vec<OpKind> = s.steps[..5].iter().map(|s| s.layer.op).collect();
        assert_eq!(kinds, [OpKind::InputBoundary, OpKind::Conv, OpKind::Conv, OpKind::Conv, OpKind::OutputBoundary]);
        assert_eq!(s.steps[1].weights_key, s.steps[6].weights_key);
        assert_eq!(s.steps[0].rows, Some((0, 19)));
        assert_eq!(s.steps[5].rows, Some((13, 32)));
        // Interior tiles lose the padding on their inner side.
        assert_eq!((s.steps[1].layer.pad.top, s.steps[1].layer.pad.bottom), (1, 0));
        assert_eq!((s.steps[6].layer.pad.top, s.steps[6].layer.pad.bottom), (0, 1));
    }

    #[test]
    fn single_tile_boundaries_copy_everything() {
        let g = three_convs();
        let tp = TilePlan::new(&g, &Chain::new(&g, &["a", "b", "c"]).unwrap(), 1).unwrap();
        let bg = insert_boundaries(&g, &tp);
        let ib = &bg.layers[0];
        assert_eq!(ib.op, OpKind::InputBoundary);
        assert_eq!(ib.boundary, Some(BoundarySpec { tiles: 1, tile_rows: 32, full_rows: 32 }));
        assert_eq!(bg.layers.last().unwrap().boundary, Some(BoundarySpec { tiles: 1, tile_rows: 32, full_rows: 32 }));
        assert_eq!(bg.layers.len(), 5);
    }

    #[test]
    fn fitting_chain_needs_one_tile() {
        let g = fixtures::small_cnn();
        let chain = Chain::new(&g, &["conv1", "pool1", "conv2", "conv3"]).unwrap();
        let tp = choose_tiles(&g, &chain, &HwConfig::default(), &PlanOptions::default(), 8).unwrap();
        assert_eq!((tp.tiles, tp.overlap * (tp.tiles - 1)), (1, 0));
    }

    #[test]
    fn tiles_remove_intermediate_traffic() {
        let cfg = HwConfig::with_mesh(3, 3).validated().unwrap();
        let g = fixtures::vgg16_segment();
        let opts = PlanOptions::default();
        let chain = Chain::between(&g, "pool2", "conv3_3").unwrap();
        let untiled = plan(&g, &cfg, &opts).unwrap();
        let inter = chain.intermediates(&g);
        let spilled: u64 = untiled.layers.iter().flat_map(|l| l.moves()).filter(|m| inter.contains(&m.tensor)).map(|m| m.bytes).sum();
        assert!(spilled > 0);
        let tp = choose_tiles(&g, &chain, &cfg, &opts, 8).unwrap();
        assert!(tp.tiles >= 2);
        let p = plan_schedule(&unroll(&g, &[tp]), &cfg, &opts).unwrap();
        assert_eq!(tile_ddr_bytes(&p), 0);
    }
}
