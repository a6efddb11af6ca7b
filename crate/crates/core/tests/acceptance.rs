//! Acceptance run: one PASS/FAIL line per criterion; exits nonzero if any
//! criterion fails.

mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use sparsetile::bscore::{
    apply_mask, block_sparse_conv, block_spmm, dequantize, quantize, BlockCooWeight, BlockShape, BlockSparseMatrix, Pad,
};
use sparsetile::codegen::{simulate_locks, to_asm};
use sparsetile::hwmodel::{HwConfig, InstrKind};
use sparsetile::netir::{execute, fixtures, NetGraph};
use sparsetile::pipeline::{estimate, sparsify_graph, tiling_study, SparsifyOptions};
use sparsetile::planner::{CompOp, PlanOptions};
use sparsetile::tensor::{Tensor3, Tensor4};
use sparsetile::tiler::{execute_schedule, project, unroll, Extent, TilePlan};
use sparsetile::timeline::{comp_ps, events_csv, events_svg, instr_ps};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn half_sparse() -> SparsifyOptions {
    SparsifyOptions::new(0.5, BlockShape::B8X8)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let shapes = BlockShape::SUPPORTED;
    for case in 0..100 {
        let (bo, bi) = shapes[case % 3];
        let (sa, sb) = (BlockShape::new(bo, bi).unwrap(), BlockShape::new(bi, bo).unwrap());
        let (m, k, n) = (r.gen_range(1..=128), r.gen_range(1..=128), r.gen_range(1..=128));
        let (a, b) = (random_matrix(&mut r, m, k), random_matrix(&mut r, k, n));
        let (ma, mb) = (random_mask(&mut r, m, k, sa), random_mask(&mut r, k, n, sb));
        let want = masked_matrix(&a, &ma).matmul(&masked_matrix(&b, &mb));
        let got = block_spmm(&BlockSparseMatrix::from_dense(&a, &ma).unwrap(), &BlockSparseMatrix::from_dense(&b, &mb).unwrap(), false)
            .unwrap()
            .0;
        if got != want {
            return Err(format!("spmm case {case} ({m}x{k} by {k}x{n}) differs"));
        }
    }
    for case in 0..100 {
        let (bo, bi) = shapes[case % 3];
        let shape = BlockShape::new(bo, bi).unwrap();
        let (cin, cout, k, s) = (r.gen_range(1..=32), r.gen_range(1..=32), r.gen_range(1..=5), r.gen_range(1..=2));
        let pad = Pad::uniform(r.gen_range(0..=k / 2));
        let (h, w) = (r.gen_range(k..=12), r.gen_range(k..=12));
        let x = Tensor3::from_fn([h, w, cin], |_| r.gen_range(-128..=127i64));
        let wt = Tensor4::from_fn([cout, k, k, cin], |_| r.gen_range(-128..=127i64));
        let bias: Vec<i64> = (0..cout).map(|_| r.gen_range(-1000..=1000)).collect();
        let mask = random_mask(&mut r, cout, cin, shape);
        let want = dense_conv(&x, &apply_mask(&wt, &mask).unwrap(), &bias, s, pad);
        let got = block_sparse_conv(&x, &BlockCooWeight::compress(&wt, &mask).unwrap(), &bias, s, pad).unwrap();
        if got != want {
            return Err(format!("conv case {case} ({cin}->{cout}, k{k} s{s}) differs"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("100 spmm and 100 conv instances exact in {secs:.2} s"), format!("exact but took {secs:.1} s"))
}

fn quantizer_bound() -> Outcome {
    let mut r = rng(2);
    for case in 0..100 {
        let n = r.gen_range(1..=512);
        let scale = 10f64.powi(r.gen_range(-3..=3));
        let w: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..=1.0) * scale).collect();
        let (codes, p) = quantize(&w, 8).map_err(|e| e.to_string())?;
        for (a, b) in w.iter().zip(dequantize(&codes, p)) {
            if (a - b).abs() > p.delta / 2.0 {
                return Err(format!("tensor {case}: |{b} - {a}| exceeds {}", p.delta / 2.0));
            }
        }
    }
    let (_, p) = quantize(&[0.3, -1.0, 0.75], 8).map_err(|e| e.to_string())?;
    check(
        p.delta == 1.0 / 128.0,
        "100 tensors within half a step; max 1.0 gives step 1/128".into(),
        format!("max 1.0 gives step {}", p.delta),
    )
}

fn compute_time() -> Outcome {
    let cfg = HwConfig::default().validated().unwrap();
    for (macs, ps) in [(2_064_384u64, 8_064_000u64), (256, 1_000), (1_179_648, 4_608_000), (115_605_504, 451_584_000)] {
        if comp_ps(macs, 1.0, &cfg) != ps {
            return Err(format!("{macs} MACs took {} ps, expected {ps}", comp_ps(macs, 1.0, &cfg)));
        }
    }
    let mut spans = 0;
    for name in fixtures::NAMES {
        let c =
            sparsetile::pipeline::compile(&fixtures::by_name(name).unwrap(), &cfg, &PlanOptions::default()).map_err(|e| e.to_string())?;
        for i in c.program.instrs().filter(|i| i.kind == InstrKind::Comp && i.op == Some(CompOp::Conv)) {
            let mut half = i.clone();
            half.density *= 0.5;
            if 2 * instr_ps(&half, &cfg) != instr_ps(i, &cfg) {
                return Err(format!("{name}: {} MACs do not halve exactly", i.ops));
            }
            spans += 1;
        }
    }
    Ok(format!("2,064,384 MACs take 8.064 us; 50% sparsity halves all {spans} weighted COMP spans"))
}

fn sparse_vs_dense() -> Outcome {
    let opts = PlanOptions::default();
    let (mut lo, mut hi, mut ok, mut failed) = (f64::MAX, 0.0f64, 0, 0);
    for name in ["resnet_like", "inception_like", "vgg16"] {
        let g = fixtures::by_name(name).unwrap();
        let (s, _) = sparsify_graph(&g, &half_sparse()).map_err(|e| e.to_string())?;
        for cfg in mesh_configs(2..=8) {
            let (Ok((_, d)), Ok((_, e))) = (estimate(&g, &cfg, &opts), estimate(&s, &cfg, &opts)) else {
                failed += 1;
                continue;
            };
            let ratio = d.report.total_ps as f64 / e.report.total_ps as f64;
            if e.report.total_ps >= d.report.total_ps || !(1.1..=2.6).contains(&ratio) {
                return Err(format!("{name} on {}: speedup {ratio:.3}", cfg.mesh));
            }
            (lo, hi, ok) = (lo.min(ratio), hi.max(ratio), ok + 1);
        }
    }
    check(ok > 0, format!("{ok} planned configurations, speedup {lo:.2} to {hi:.2}, {failed} failed to plan"), "nothing planned".into())
}

fn non_monotone_scaling() -> Outcome {
    let g = fixtures::vgg16();
    let opts = PlanOptions::default();
    let mut runs = Vec::new();
    for r in 2..=8 {
        for c in 2..=8 {
            let cfg = HwConfig::with_mesh(r, c).validated().unwrap();
            if let Ok((_, e)) = estimate(&g, &cfg, &opts) {
                runs.push((cfg.mesh, e.report.total_ps));
            }
        }
    }
    let worst = runs
        .iter()
        .flat_map(|a| runs.iter().map(move |b| (a, b)))
        .filter(|(a, b)| a.0.cores() > b.0.cores() && a.1 > b.1)
        .max_by(|(a, b), (c, d)| (a.1 as f64 / b.1 as f64).total_cmp(&(c.1 as f64 / d.1 as f64)));
    match worst {
        Some((big, small)) => Ok(format!(
            "vgg16 on {} ({} cores) takes {:.3} ms, {} ({} cores) takes {:.3} ms",
            big.0,
            big.0.cores(),
            big.1 as f64 / 1e9,
            small.0,
            small.0.cores(),
            small.1 as f64 / 1e9
        )),
        None => Err(format!("all {} vgg16 meshes speed up with core count", runs.len())),
    }
}

fn tiling_ordering() -> Outcome {
    let cfg = HwConfig { ddr_slowdown: 16.0, ..HwConfig::with_mesh(3, 3) }.validated().unwrap();
    let st = tiling_study(&fixtures::vgg16(), &cfg, &PlanOptions::default(), None, Some(2), &half_sparse()).map_err(|e| e.to_string())?;
    let line = format!(
        "{}..{}: ddr-only {:.4} s > tiled {:.4} s > sparse {:.4} s > tiled+sparse {:.4} s",
        st.chain.layers[0],
        st.chain.layers[st.chain.layers.len() - 1],
        st.ddr_only,
        st.tiled,
        st.sparse,
        st.tiled_sparse
    );
    check(st.ddr_only > st.tiled && st.tiled > st.sparse && st.sparse > st.tiled_sparse, line.clone(), line.replace('>', "?"))
}

fn tiling_exactness() -> Outcome {
    let mut r = rng(7);
    for case in 0..25 {
        let depth = r.gen_range(1..=4);
        let g = random_chain(&mut r, case, depth, 5, 2, true);
        let chain = whole_chain(&g);
        let m = valid_tiles(&g, &chain, r.gen_range(2..=4));
        let x = input_for(&g, &mut r);
        let want = execute(&g, &x).map_err(|e| e.to_string())?;
        let tp = TilePlan::new(&g, &chain, m).map_err(|e| e.to_string())?;
        let got = execute_schedule(&g, &unroll(&g, &[tp]), &x).map_err(|e| e.to_string())?;
        if got[&chain.output] != want[&chain.output] {
            return Err(format!("chain {case} in {m} tiles differs"));
        }
    }
    for case in 0..100 {
        let depth = r.gen_range(1..=4);
        let g = random_chain(&mut r, 1000 + case, depth, 5, 2, case % 2 == 0);
        let chain = whole_chain(&g);
        let out = g.shape(&chain.output);
        let u = Extent::new(r.gen_range(1..=out.h.min(4)), r.gen_range(1..=out.w.min(4)));
        let p = project(&g, &chain, u).map_err(|e| e.to_string())?;
        if let Some((t, e)) = brute_extents(&g, &chain, u).into_iter().find(|(t, e)| p.of(t) != Some(*e)) {
            return Err(format!("chain {case}: `{t}` projects to {:?}, walk finds {e}", p.of(&t)));
        }
    }
    Ok("25 tiled chains bit-exact; 100 projections match the dependency walk".into())
}

fn lock_safety() -> Outcome {
    let opts = PlanOptions::default();
    let (mut programs, mut skipped) = (0, 0);
    for name in fixtures::NAMES {
        let g = fixtures::by_name(name).unwrap();
        let (s, _) = sparsify_graph(&g, &half_sparse()).map_err(|e| e.to_string())?;
        for cfg in mesh_configs(2..=8) {
            for graph in [&g, &s] {
                let Ok(c) = sparsetile::pipeline::compile(graph, &cfg, &opts) else {
                    skipped += 1;
                    continue;
                };
                simulate_locks(&c.program, programs as u64, 2).map_err(|e| format!("{name} on {}: {e}", cfg.mesh))?;
                programs += 1;
            }
        }
    }
    Ok(format!("{programs} programs ran to completion without deadlock ({skipped} failed to plan)"))
}

fn reread_formula() -> Outcome {
    let mut r = rng(9);
    let mut cases = 0;
    for k in 1..=7usize {
        for m in 1..=4 {
            let g = stride_one_chain(&mut r, k, m);
            let chain = whole_chain(&g);
            let tp = TilePlan::new(&g, &chain, m).map_err(|e| e.to_string())?;
            let measured = tp.measured_reread(&g);
            if tp.tiles != m || measured != (m - 1) * (k - 1) {
                return Err(format!("k {k}, {} tiles: measured {measured}, formula {}", tp.tiles, (tp.tiles - 1) * (k - 1)));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} tilings with M up to 4 and k up to 7 reread (M-1)(k-1) rows"))
}

fn artifacts(g: &NetGraph, cfg: &HwConfig) -> Result<[String; 4], String> {
    let (s, _) = sparsify_graph(g, &half_sparse()).map_err(|e| e.to_string())?;
    let (c, e) = estimate(&s, cfg, &PlanOptions::default()).map_err(|e| e.to_string())?;
    Ok([serde_json::to_string(&c.plan).unwrap(), to_asm(&c.program), events_csv(&e.events), events_svg(&e.events)])
}

fn determinism() -> Outcome {
    let cfg = HwConfig::default().validated().unwrap();
    for name in fixtures::NAMES {
        let g = fixtures::by_name(name).unwrap();
        if artifacts(&g, &cfg)? != artifacts(&fixtures::by_name(name).unwrap(), &cfg)? {
            return Err(format!("{name}: artifacts differ between runs"));
        }
    }
    Ok(format!("plan, ASM and timelines identical across two runs of all {} fixtures", fixtures::NAMES.len()))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("quantizer bound", quantizer_bound),
        ("compute time", compute_time),
        ("sparse faster than dense", sparse_vs_dense),
        ("non-monotone scaling", non_monotone_scaling),
        ("tiling study ordering", tiling_ordering),
        ("tiling exactness", tiling_exactness),
        ("lock safety", lock_safety),
        ("reread formula", reread_formula),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", n + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
