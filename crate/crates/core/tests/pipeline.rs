mod common;

use std::path::Path;

use common::*;
use sparsetile::bscore::BlockShape;
use sparsetile::codegen::{parse_asm, simulate_locks, to_asm};
use sparsetile::hwmodel::{config_from_str, load_config, HwConfig};
use sparsetile::netir::{fixtures, load_model, save_model};
use sparsetile::pipeline::{compile, compile_schedule, estimate, export_sidecars, sparsify_graph, SparsifyOptions};
use sparsetile::planner::PlanOptions;
use sparsetile::tiler::{unroll, Chain, TilePlan};

#[test]
fn golden_hardware_config() {
    let golden = load_config(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/hw_default.json")).unwrap();
    let default = HwConfig::default().validated().unwrap();
    assert_eq!(golden, default);
    assert_eq!(config_from_str("").unwrap(), default);
    assert_eq!(config_from_str(r#"{"mesh": {"rows": 4, "cols": 4}}"#).unwrap(), default);
}

#[test]
fn sparse_model_survives_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = HwConfig::default().validated().unwrap();
    let opts = PlanOptions::default();
    for name in ["small_cnn", "bottleneck", "mlp"] {
        let (s, _) = sparsify_graph(&fixtures::by_name(name).unwrap(), &SparsifyOptions::new(0.5, BlockShape::B8X8)).unwrap();
        let path = dir.path().join(format!("{name}.json"));
        save_model(&export_sidecars(&s, dir.path()).unwrap(), &path).unwrap();
        let back = load_model(&path).unwrap();
        let (a, b) = (compile(&s, &cfg, &opts).unwrap(), compile(&back, &cfg, &opts).unwrap());
        assert_eq!(to_asm(&a.program), to_asm(&b.program), "{name}");
    }
}

#[test]
fn asm_round_trips() {
    let cfg = HwConfig::with_mesh(3, 5).validated().unwrap();
    let c = compile(&fixtures::bottleneck_block(), &cfg, &PlanOptions::default()).unwrap();
    let text = to_asm(&c.program);
    assert_eq!(to_asm(&parse_asm(&text).unwrap()), text);
}

#[test]
fn tiled_programs_are_lock_safe() {
    let opts = PlanOptions::default();
    let g = fixtures::vgg16_segment();
    let chain = Chain::between(&g, "pool2", "conv3_3").unwrap();
    for cfg in mesh_configs(2..=5) {
        for m in [2, 4, 7] {
            let c = compile_schedule(&unroll(&g, &[TilePlan::new(&g, &chain, m).unwrap()]), &cfg, &opts).unwrap();
            simulate_locks(&c.program, m as u64, 3).unwrap_or_else(|e| panic!("{} with {m} tiles: {e}", cfg.mesh));
        }
    }
}

#[test]
fn slower_ddr_never_speeds_up() {
    let g = fixtures::small_cnn();
    let opts = PlanOptions::default();
    let mut last = 0;
    for slowdown in [1.0, 2.0, 4.0, 16.0] {
        let cfg = HwConfig { ddr_slowdown: slowdown, ..HwConfig::default() }.validated().unwrap();
        let total = estimate(&g, &cfg, &opts).unwrap().1.report.total_ps;
        assert!(total >= last, "slowdown {slowdown}");
        last = total;
    }
}
