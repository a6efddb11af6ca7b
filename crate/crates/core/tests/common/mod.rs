//! Oracles, generators and checks shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsetile::bscore::{BlockMask, BlockShape, Pad};
use sparsetile::hwmodel::{HwConfig, InstrKind};
use sparsetile::netir::fixtures::GraphBuilder;
use sparsetile::netir::{Activations, NetGraph, OpKind};
use sparsetile::planner::Plan;
use sparsetile::tensor::{Matrix, Tensor3, Tensor4};
use sparsetile::tiler::{Chain, Extent, TilePlan};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mask(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, shape: BlockShape) -> BlockMask {
    let (r, c) = BlockMask::grid_for(out_c, in_c, shape);
    let density = rng.gen_range(0.0..=1.0);
    let bits = (0..r * c).map(|_| rng.gen_bool(density)).collect();
    BlockMask::from_bits(r, c, shape, bits).expect("grid matches")
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<i64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-128..=127))
}

/// Zeroes every weight outside the mask's nonzero blocks.
pub fn masked_matrix(m: &Matrix<i64>, mask: &BlockMask) -> Matrix<i64> {
    let s = mask.shape();
    Matrix::from_fn(m.rows, m.cols, |r, c| if mask.get(r / s.bo, c / s.bi) { m.get(r, c) } else { 0 })
}

/// Direct convolution with weights laid out `[cout, kh, kw, cin]`.
pub fn dense_conv(x: &Tensor3<i64>, w: &Tensor4<i64>, bias: &[i64], stride: usize, pad: Pad) -> Tensor3<i64> {
    let [ih, iw, ic] = x.dims();
    let [oc, kh, kw, _] = w.dims();
    let oh = (ih + pad.top + pad.bottom - kh) / stride + 1;
    let ow = (iw + pad.left + pad.right - kw) / stride + 1;
    Tensor3::from_fn([oh, ow, oc], |[oy, ox, o]| {
        let mut acc = bias[o];
        for y in 0..kh {
            for xx in 0..kw {
                let iy = (oy * stride + y) as isize - pad.top as isize;
                let ix = (ox * stride + xx) as isize - pad.left as isize;
                if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                    continue;
                }
                for c in 0..ic {
                    acc += w.get([o, y, xx, c]) * x.get(iy as usize, ix as usize, c);
                }
            }
        }
        acc
    })
}

/// A random height-tileable network: convolutions, pools and residual
/// additions around same-shape convolutions.
pub fn random_chain(rng: &mut ChaCha8Rng, seed: u64, depth: usize, max_k: usize, max_s: usize, residual: bool) -> NetGraph {
    loop {
        let mut b = GraphBuilder::new("rand", seed);
        let h = rng.gen_range(12..=28);
        let w = rng.gen_range(6..=12);
        let mut c = [4, 8][rng.gen_range(0..2)];
        let mut t = b.input("x", [h, w, c]);
        let (mut th, mut tw) = (h, w);
        let mut ok = true;
        for i in 0..depth {
            let kind = rng.gen_range(0..if residual { 3 } else { 2 });
            let k = rng.gen_range(1..=max_k);
            let s = rng.gen_range(1..=max_s);
            let p = rng.gen_range(0..=k / 2);
            match kind {
                2 => {
                    let k = [5, 3, 1].into_iter().find(|k| *k <= max_k).unwrap_or(1);
                    let branch = b.conv(&format!("r{i}"), &t, c, k, 1, k / 2);
                    t = b.add(&format!("a{i}"), &[&t, &branch]);
                }
                _ if th + 2 * p < k || tw + 2 * p < k => {
                    ok = false;
                    break;
                }
                1 => {
                    t = b.max_pool(&format!("p{i}"), &t, k, s, p);
                    th = (th + 2 * p - k) / s + 1;
                    tw = (tw + 2 * p - k) / s + 1;
                }
                _ => {
                    c = [4, 8][rng.gen_range(0..2)];
                    t = b.conv(&format!("c{i}"), &t, c, k, s, p);
                    th = (th + 2 * p - k) / s + 1;
                    tw = (tw + 2 * p - k) / s + 1;
                }
            }
        }
        if ok && th >= 2 {
            return b.finish(&[&t]).expect("generated graph is valid");
        }
    }
}

/// Stride-1 convolutions whose combined kernel is `k` rows, on an input
/// sized so the output splits into `tiles` equal tiles, each at least as
/// tall as the padding above or below the chain plus one row.
pub fn stride_one_chain(rng: &mut ChaCha8Rng, k: usize, tiles: usize) -> NetGraph {
    let mut convs = Vec::new();
    let mut left = k - 1;
    while left > 0 || convs.is_empty() {
        let grow = if left == 0 { 0 } else { rng.gen_range(1..=left) };
        convs.push((grow + 1, rng.gen_range(0..=grow.div_ceil(2))));
        left -= grow;
    }
    let pads: usize = convs.iter().map(|c| c.1).sum();
    let u = rng.gen_range(pads + 1..=pads + 6);
    let mut b = GraphBuilder::new("reread", k as u64);
    let mut t = b.input("x", [tiles * u + k - 1 - 2 * pads, k + 4, 4]);
    for (i, (kl, p)) in convs.into_iter().enumerate() {
        t = b.conv(&format!("c{i}"), &t, 4, kl, 1, p);
    }
    b.finish(&[&t]).expect("generated graph is valid")
}

/// The whole graph as one chain.
pub fn whole_chain(g: &NetGraph) -> Chain {
    let ids: Vec<&str> = g.layers.iter().map(|l| l.id.as_str()).collect();
    Chain::new(g, &ids).expect("graph is a chain")
}

/// Bounding box of the pixels of every tensor that an output tile at
/// `(0, 0)` depends on, found by walking dependencies pixel by pixel.
pub fn brute_extents(g: &NetGraph, chain: &Chain, u: Extent) -> Vec<(String, Extent)> {
    let mut needed: std::collections::BTreeMap<String, BTreeSet<(i64, i64)>> = Default::default();
    let tile: BTreeSet<(i64, i64)> = (0..u.h as i64).flat_map(|y| (0..u.w as i64).map(move |x| (y, x))).collect();
    needed.insert(chain.output.clone(), tile);
    for l in g.layers.iter().rev().filter(|l| chain.layers.contains(&l.id)) {
        let Some(out) = needed.get(&l.output).cloned() else { continue };
        let mut reach = BTreeSet::new();
        for &(y, x) in &out {
            match l.op {
                OpKind::Conv | OpKind::MaxPool => {
                    let s = l.stride as i64;
                    for dy in 0..l.kernel.0 as i64 {
                        for dx in 0..l.kernel.1 as i64 {
                            reach.insert((y * s - l.pad.top as i64 + dy, x * s - l.pad.left as i64 + dx));
                        }
                    }
                }
                _ => {
                    reach.insert((y, x));
                }
            }
        }
        for t in &l.inputs {
            needed.entry(t.clone()).or_default().extend(reach.iter().copied());
        }
    }
    needed
        .into_iter()
        .map(|(t, px)| {
            let (y0, y1) = (px.iter().map(|p| p.0).min().unwrap(), px.iter().map(|p| p.0).max().unwrap());
            let (x0, x1) = (px.iter().map(|p| p.1).min().unwrap(), px.iter().map(|p| p.1).max().unwrap());
            (t, Extent::new((y1 - y0 + 1) as usize, (x1 - x0 + 1) as usize))
        })
        .collect()
}

pub fn input_for(g: &NetGraph, rng: &mut ChaCha8Rng) -> Activations {
    g.inputs.iter().map(|id| (id.clone(), Tensor3::from_fn(g.shape(id).dims(), |_| rng.gen_range(-128..=127)))).collect()
}

/// The largest tile count not above `want` that cuts the output rows into
/// equal tiles.
pub fn valid_tiles(g: &NetGraph, chain: &Chain, want: usize) -> usize {
    (1..=want).rev().find(|&m| TilePlan::new(g, chain, m).is_ok()).unwrap_or(1)
}

pub fn total_ddr(plan: &Plan) -> u64 {
    [InstrKind::Load, InstrKind::LoadW, InstrKind::Write].iter().map(|k| plan.ddr_bytes(*k)).sum()
}

/// Traffic of running each chain layer straight from DDR: every input and
/// output crosses once and the weights are loaded once.
pub fn per_layer_traffic(g: &NetGraph, chain: &Chain, untiled: &Plan) -> u64 {
    chain
        .layers
        .iter()
        .map(|id| {
            let l = g.layer(id).unwrap();
            let io: usize = l.inputs.iter().map(|t| g.tensor_bytes(t)).sum::<usize>() + g.tensor_bytes(&l.output);
            io as u64 + untiled.layer(id).map_or(0, |p| p.ddr_bytes(InstrKind::LoadW))
        })
        .sum()
}

pub fn mesh_configs(range: std::ops::RangeInclusive<usize>) -> Vec<HwConfig> {
    range.map(|n| HwConfig::with_mesh(n, n).validated().expect("valid mesh")).collect()
}
