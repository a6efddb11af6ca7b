use std::path::Path;
use std::process::{Command, Output};

fn sparsetile(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsetile")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let o = sparsetile(args, dir);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn code(args: &[&str], dir: &Path) -> i32 {
    sparsetile(args, dir).status.code().expect("exit code")
}

#[test]
fn sparsify_writes_model_masks_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["sparsify", "fixture:small_cnn", "--target", "0.5", "-o", "m.json"], dir.path());
    assert!(out.contains("conv2") && out.contains("0.5000"), "{out}");
    for f in ["m.json", "small_cnn.conv2.bcoo", "small_cnn.conv2.mask.json", "small_cnn.conv3.bcoo"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let mask: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("small_cnn.conv2.mask.json")).unwrap()).unwrap();
    assert_eq!((mask["rows"].as_u64(), mask["cols"].as_u64(), mask["block"].as_str()), (Some(8), Some(4), Some("8x8")), "{mask}");
    let sparse = ok(&["estimate", "m.json", "--report", "json"], dir.path());
    let dense = ok(&["estimate", "fixture:small_cnn", "--report", "json"], dir.path());
    let total = |s: &str| serde_json::from_str::<serde_json::Value>(s).unwrap()["dense"]["total_ps"].as_u64().unwrap();
    assert!(total(&sparse) < total(&dense));
}

#[test]
fn zero_target_keeps_model_bytes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sparsify", "fixture:small_cnn", "--target", "0", "-o", "a.json"], dir.path());
    ok(&["sparsify", "a.json", "--target", "0", "-o", "b.json"], dir.path());
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn estimate_side_by_side_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &["estimate", "fixture:bottleneck", "--target", "0.5", "--emit-timeline", "t.csv", "--emit-plan", "p.json", "--emit-asm", "a.s"],
        dir.path(),
    );
    assert!(out.contains("dense") && out.contains("sparse") && out.contains("speedup"), "{out}");
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("layer,group,instruction,lane,start_us,duration_us"));
    assert!(std::fs::read_to_string(dir.path().join("a.s")).unwrap().contains("COMP"));
    let plan: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(plan["mesh"]["rows"], 4);
}

#[test]
fn commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let (p, a, t) = (format!("p{tag}.json"), format!("a{tag}.s"), format!("t{tag}.svg"));
        let out = ok(
            &["compile", "fixture:small_cnn", "--target", "0.5", "--emit-plan", &p, "--emit-asm", &a, "--emit-timeline", &t],
            dir.path(),
        );
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        (out, read(&p), read(&a), read(&t))
    };
    assert_eq!(run("1"), run("2"));
}

#[test]
fn compile_checks_locks() {
    let dir = tempfile::tempdir().unwrap();
    let o = sparsetile(&["compile", "fixture:bottleneck", "--mesh", "3x2", "--check-locks", "5"], dir.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no deadlock"));
}

#[test]
fn tile_study_and_plan_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &["tile", "fixture:small_cnn", "--chain", "conv1:conv3", "--tiles", "2", "--target", "0.5", "--emit-plan", "tp.json"],
        dir.path(),
    );
    for name in ["ddr-only", "tiled", "sparse", "tiled+sparse"] {
        assert!(out.contains(name), "{out}");
    }
    let tp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("tp.json")).unwrap()).unwrap();
    assert_eq!(tp["tiles"], 2);
}

#[test]
fn one_tile_equals_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let study: serde_json::Value =
        serde_json::from_str(&ok(&["tile", "fixture:small_cnn", "--chain", "conv1:conv3", "--tiles", "1", "--report", "json"], dir.path()))
            .unwrap();
    let est: serde_json::Value = serde_json::from_str(&ok(&["estimate", "fixture:small_cnn", "--report", "json"], dir.path())).unwrap();
    assert_eq!(study["tiled"], est["dense"]["total_s"]);
    assert_eq!(study["ddr_only"], est["dense"]["total_s"]);
}

#[test]
fn report_sweeps_meshes() {
    let dir = tempfile::tempdir().unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(
        &["report", "fixture:small_cnn", "--target", "0.5", "--min", "2", "--max", "4", "--report", "json"],
        dir.path(),
    ))
    .unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r["sparse_s"].as_f64().unwrap() < r["dense_s"].as_f64().unwrap(), "{r}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), r#"{"bad": 1}"#).unwrap();
    std::fs::write(p.join("tiny.json"), r#"{"memtile_bytes": 256, "core_bank_bytes": 64}"#).unwrap();
    assert_eq!(code(&["estimate", "bad.json"], p), 3);
    assert_eq!(code(&["estimate", "fixture:small_cnn", "--hw", "bad.json"], p), 3);
    assert_eq!(code(&["estimate", "fixture:small_cnn", "--hw", "tiny.json"], p), 4);
    assert_eq!(code(&["tile", "fixture:small_cnn", "--chain", "conv1:conv3", "--tiles", "99"], p), 5);
    assert_eq!(code(&["estimate", "missing.json"], p), 1);
    assert_eq!(code(&["estimate", "fixture:nope"], p), 1);
    assert_eq!(code(&["sparsify", "fixture:small_cnn", "--target", "1.5", "-o", "x.json"], p), 1);
    assert_eq!(code(&["estimate", "fixture:small_cnn"], p), 0);
}
