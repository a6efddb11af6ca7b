//! `sparsetile`: sparsify, plan, emit and estimate networks on a mesh of
//! tensor cores.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsetile::bscore::BlockShape;
use sparsetile::codegen::{simulate_locks, to_asm};
use sparsetile::hwmodel::{load_config, HwConfig, HwError, Mesh};
use sparsetile::netir::{fixtures, load_model, save_model, IrError, NetGraph};
use sparsetile::pipeline::{
    estimate, export_sidecars, sparsify_graph, tiling_study, Compiled, LayerSparsity, PipelineError, SparsifyOptions,
};
use sparsetile::planner::{PlanError, PlanOptions};
use sparsetile::sparsifier::{ImportanceMeasure, SparsitySchedule};
use sparsetile::tiler::{Chain, TileError};
use sparsetile::timeline::{write_timeline, Estimate};

const EXIT_OTHER: u8 = 1;
const EXIT_SCHEMA: u8 = 3;
const EXIT_PLANNER: u8 = 4;
const EXIT_TILING: u8 = 5;

#[derive(Parser)]
#[command(name = "sparsetile", version, about = "Block-sparse network compiler and estimator for tensor-core meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select block masks and write the masked model with compressed sidecars.
    Sparsify(SparsifyArgs),
    /// Plan and emit the instruction program.
    Compile(CompileArgs),
    /// Estimate execution time, dense and sparse side by side.
    Estimate(EstimateArgs),
    /// Compare untiled and tiled execution, dense and sparse.
    Tile(TileArgs),
    /// Dense and sparse totals over a range of square meshes.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Table,
    Json,
}

#[derive(Args)]
struct ModelArgs {
    /// Model JSON path, or `fixture:NAME`.
    model: String,
    /// Hardware config JSON; defaults to a 4x4 mesh.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Override the mesh as ROWSxCOLS, with one Memtile per column.
    #[arg(long)]
    mesh: Option<String>,
    /// Divide DDR bandwidth by this factor.
    #[arg(long)]
    ddr_slowdown: Option<f64>,
    #[arg(long, value_enum, default_value = "table")]
    report: ReportFormat,
}

#[derive(Args)]
struct SparsityArgs {
    /// Fraction of blocks to zero in every eligible layer.
    #[arg(long, default_value_t = 0.0)]
    target: f64,
    /// Block shape as BOxBI.
    #[arg(long, default_value = "8x8")]
    block: String,
    /// Importance measure: l1, l2 or variance.
    #[arg(long, default_value = "l2")]
    measure: String,
    /// Zero blocks in rounds instead of at once.
    #[arg(long)]
    incremental: bool,
    /// Also mask the first convolution.
    #[arg(long)]
    include_first: bool,
}

#[derive(Args)]
struct SparsifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sparsity: SparsityArgs,
    /// Output model path; sidecars go next to it.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EmitArgs {
    /// Write the plan as JSON.
    #[arg(long)]
    emit_plan: Option<PathBuf>,
    /// Write the program as text assembly.
    #[arg(long)]
    emit_asm: Option<PathBuf>,
    /// Write the timeline; `.csv` or `.svg`.
    #[arg(long)]
    emit_timeline: Option<PathBuf>,
}

#[derive(Args)]
struct CompileArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sparsity: SparsityArgs,
    #[command(flatten)]
    emit: EmitArgs,
    /// Check the program for deadlocks over this many randomized runs.
    #[arg(long, default_value_t = 0)]
    check_locks: usize,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sparsity: SparsityArgs,
    #[command(flatten)]
    emit: EmitArgs,
}

#[derive(Args)]
struct TileArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sparsity: SparsityArgs,
    /// Number of height tiles; the fewest that avoid DDR traffic when absent.
    #[arg(long)]
    tiles: Option<usize>,
    /// Chain to tile as FIRST:LAST; the fastest one when absent.
    #[arg(long)]
    chain: Option<String>,
    /// Write the tile plan as JSON.
    #[arg(long)]
    emit_plan: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sparsity: SparsityArgs,
    /// Smallest mesh side.
    #[arg(long, default_value_t = 2)]
    min: usize,
    /// Largest mesh side.
    #[arg(long, default_value_t = 8)]
    max: usize,
}

fn read_model(spec: &str) -> Result<NetGraph> {
    if let Some(name) = spec.strip_prefix("fixture:") {
        let names = fixtures::NAMES.join(", ");
        return fixtures::by_name(name).with_context(|| format!("unknown fixture `{name}` (one of {names})"));
    }
    Ok(load_model(spec)?)
}

fn parse_mesh(s: &str) -> Result<Mesh> {
    let (r, c) = s.split_once(['x', 'X']).with_context(|| format!("mesh `{s}` is not ROWSxCOLS"))?;
    let rows = r.trim().parse().with_context(|| format!("mesh rows `{r}`"))?;
    let cols = c.trim().parse().with_context(|| format!("mesh cols `{c}`"))?;
    Ok(Mesh { rows, cols })
}

impl ModelArgs {
    fn config(&self) -> Result<HwConfig> {
        let mut cfg = match &self.hw {
            Some(p) => load_config(p)?,
            None => HwConfig::default(),
        };
        if let Some(m) = &self.mesh {
            let mesh = parse_mesh(m)?;
            cfg = HwConfig { memtiles: None, ..HwConfig { mesh, ..cfg } };
        }
        if let Some(s) = self.ddr_slowdown {
            cfg.ddr_slowdown = s;
        }
        Ok(cfg.validated()?)
    }
}

impl SparsityArgs {
    fn options(&self) -> Result<SparsifyOptions> {
        let shape = BlockShape::parse(&self.block, false).map_err(|e| anyhow::anyhow!("--block: {e}"))?;
        let measure: ImportanceMeasure = self.measure.parse().map_err(|e: String| anyhow::anyhow!("--measure: {e}"))?;
        if !(0.0..=1.0).contains(&self.target) {
            bail!("--target {} is outside [0, 1]", self.target);
        }
        let schedule = if self.incremental {
            SparsitySchedule::incremental(self.target, shape)
        } else {
            SparsitySchedule::one_shot(self.target, shape)
        };
        Ok(SparsifyOptions { schedule, measure, exempt_first: !self.include_first })
    }

    fn plan_options(&self) -> Result<PlanOptions> {
        Ok(PlanOptions { block: self.options()?.schedule.granularity, ..PlanOptions::default() })
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(args: &EmitArgs, c: &Compiled, e: Option<&Estimate>) -> Result<()> {
    if let Some(p) = &args.emit_plan {
        write_file(p, &serde_json::to_string_pretty(&c.plan)?)?;
    }
    if let Some(p) = &args.emit_asm {
        write_file(p, &to_asm(&c.program))?;
    }
    if let (Some(p), Some(e)) = (&args.emit_timeline, e) {
        write_timeline(&e.events, p)?;
    }
    Ok(())
}

fn sparsity_table(rows: &[LayerSparsity]) -> String {
    let mut s = format!("{:<24} {:>8} {:>8} {:>7}\n", "layer", "blocks", "zeroed", "ratio");
    for r in rows {
        s.push_str(&format!("{:<24} {:>8} {:>8} {:>7.4}\n", r.layer, r.cells, r.zeroed, r.ratio));
    }
    s
}

fn cmd_sparsify(a: &SparsifyArgs) -> Result<()> {
    let g = read_model(&a.model.model)?;
    let opts = a.sparsity.options()?;
    let (masked, rows) = sparsify_graph(&g, &opts)?;
    let dir = match a.output.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let out = if rows.is_empty() { masked } else { export_sidecars(&masked, &dir)? };
    for l in out.layers.iter() {
        if let Some(mask) = l.mask() {
            let path = dir.join(format!("{}.{}.mask.json", out.name, l.id));
            write_file(&path, &serde_json::to_string(mask)?)?;
        }
    }
    save_model(&out, &a.output)?;
    match a.model.report {
        ReportFormat::Table => print!("{}", sparsity_table(&rows)),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
    }
    Ok(())
}

/// The model as given plus, with a nonzero target, its sparsified copy.
fn variants(model: &ModelArgs, sparsity: &SparsityArgs) -> Result<(NetGraph, Option<NetGraph>)> {
    let g = read_model(&model.model)?;
    let opts = sparsity.options()?;
    if opts.schedule.target == 0.0 {
        return Ok((g, None));
    }
    let (s, _) = sparsify_graph(&g, &opts)?;
    Ok((g, Some(s)))
}

fn cmd_compile(a: &CompileArgs) -> Result<()> {
    let cfg = a.model.config()?;
    let (g, s) = variants(&a.model, &a.sparsity)?;
    let (c, e) = estimate(s.as_ref().unwrap_or(&g), &cfg, &a.sparsity.plan_options()?)?;
    emit(&a.emit, &c, Some(&e))?;
    if a.check_locks > 0 {
        let r = simulate_locks(&c.program, 0, a.check_locks)?;
        eprintln!("locks: {} layers, {} operations, {} runs, no deadlock", r.layers, r.operations, r.runs);
    }
    match a.model.report {
        ReportFormat::Table => print!("{}", c.plan.table()),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&c.plan)?),
    }
    Ok(())
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let cfg = a.model.config()?;
    let opts = a.sparsity.plan_options()?;
    let (g, s) = variants(&a.model, &a.sparsity)?;
    let (dc, de) = estimate(&g, &cfg, &opts)?;
    let sparse = s.map(|s| estimate(&s, &cfg, &opts)).transpose()?;
    match &sparse {
        Some((c, e)) => emit(&a.emit, c, Some(e))?,
        None => emit(&a.emit, &dc, Some(&de))?,
    }
    match a.model.report {
        ReportFormat::Table => {
            print!("{}", de.report.table());
            if let Some((_, e)) = &sparse {
                println!();
                print!("{}", e.report.table());
                println!();
                println!("dense  {:.6e} s", de.report.total_s);
                println!("sparse {:.6e} s", e.report.total_s);
                println!("speedup {:.3}", de.report.total_ps as f64 / e.report.total_ps as f64);
            }
        }
        ReportFormat::Json => {
            let v = serde_json::json!({ "dense": de.report, "sparse": sparse.as_ref().map(|(_, e)| &e.report) });
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
    }
    Ok(())
}

fn cmd_tile(a: &TileArgs) -> Result<()> {
    let cfg = a.model.config()?;
    let g = read_model(&a.model.model)?;
    let chain = match &a.chain {
        Some(c) => {
            let (first, last) = c.split_once(':').with_context(|| format!("--chain `{c}` is not FIRST:LAST"))?;
            Some(Chain::between(&g, first, last)?)
        }
        None => None,
    };
    let study = tiling_study(&g, &cfg, &a.sparsity.plan_options()?, chain, a.tiles, &a.sparsity.options()?)?;
    if let Some(p) = &a.emit_plan {
        write_file(p, &serde_json::to_string_pretty(&study.tile_plan)?)?;
    }
    match a.model.report {
        ReportFormat::Table => print!("{}", study.table()),
        ReportFormat::Json => println!("{}", serde_json::to_string_pretty(&study)?),
    }
    Ok(())
}

struct SweepRow {
    mesh: String,
    dense_s: Option<f64>,
    sparse_s: Option<f64>,
    failure: Option<String>,
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    if a.min == 0 || a.min > a.max {
        bail!("mesh range {}..{} is empty", a.min, a.max);
    }
    let base = a.model.config()?;
    let opts = a.sparsity.plan_options()?;
    let (g, s) = variants(&a.model, &a.sparsity)?;
    let mut rows = Vec::new();
    for n in a.min..=a.max {
        let cfg = HwConfig { mesh: Mesh { rows: n, cols: n }, memtiles: Some(n), ..base.clone() };
        let total = |g: &NetGraph| estimate(g, &cfg, &opts).map(|(_, e)| e.report.total_s);
        let mut row = SweepRow { mesh: cfg.mesh.to_string(), dense_s: None, sparse_s: None, failure: None };
        match total(&g) {
            Ok(t) => row.dense_s = Some(t),
            Err(PipelineError::Plan(e)) => row.failure = Some(e.to_string()),
            Err(e) => return Err(e.into()),
        }
        if let Some(s) = &s {
            match total(s) {
                Ok(t) => row.sparse_s = Some(t),
                Err(PipelineError::Plan(e)) => row.failure = row.failure.or(Some(e.to_string())),
                Err(e) => return Err(e.into()),
            }
        }
        rows.push(row);
    }
    match a.model.report {
        ReportFormat::Table => {
            let cell = |v: Option<f64>| v.map_or_else(|| "failed".to_string(), |t| format!("{t:.3e}"));
            println!("{:<6} {:>10} {:>10} {:>8}", "mesh", "dense_s", "sparse_s", "speedup");
            for r in &rows {
                let speedup = match (r.dense_s, r.sparse_s) {
                    (Some(d), Some(s)) => format!("{:.3}", d / s),
                    _ => "-".into(),
                };
                let sparse = if s.is_some() { cell(r.sparse_s) } else { "-".into() };
                print!("{:<6} {:>10} {:>10} {:>8}", r.mesh, cell(r.dense_s), sparse, speedup);
                match &r.failure {
                    Some(f) => println!("  {f}"),
                    None => println!(),
                }
            }
        }
        ReportFormat::Json => {
            let v: Vec<_> = rows
                .iter()
                .map(|r| serde_json::json!({ "mesh": r.mesh, "dense_s": r.dense_s, "sparse_s": r.sparse_s, "failure": r.failure }))
                .collect();
            println!("{}", serde_json::to_string_pretty(&v)?);
        }
    }
    Ok(())
}

fn ir_code(e: &IrError) -> u8 {
    match e {
        IrError::Io { .. } => EXIT_OTHER,
        _ => EXIT_SCHEMA,
    }
}

fn hw_code(e: &HwError) -> u8 {
    match e {
        HwError::Io { .. } => EXIT_OTHER,
        _ => EXIT_SCHEMA,
    }
}

fn plan_code(e: &PlanError) -> u8 {
    match e {
        PlanError::Hw(h) => hw_code(h),
        _ => EXIT_PLANNER,
    }
}

fn tile_code(e: &TileError) -> u8 {
    match e {
        TileError::Infeasible { .. } | TileError::TooManyTiles { .. } | TileError::NoChain => EXIT_TILING,
        TileError::Plan(p) => plan_code(p),
        TileError::Ir(i) => ir_code(i),
        TileError::Exec { .. } => EXIT_OTHER,
        _ => EXIT_SCHEMA,
    }
}

/// Maps the first recognised error in the chain to an exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Ir(i) => ir_code(i),
                PipelineError::Plan(p) => plan_code(p),
                PipelineError::Tile(t) => tile_code(t),
                PipelineError::Sparsify { .. } | PipelineError::Io { .. } => EXIT_OTHER,
            };
        }
        if let Some(i) = cause.downcast_ref::<IrError>() {
            return ir_code(i);
        }
        if let Some(h) = cause.downcast_ref::<HwError>() {
            return hw_code(h);
        }
        if let Some(p) = cause.downcast_ref::<PlanError>() {
            return plan_code(p);
        }
        if let Some(t) = cause.downcast_ref::<TileError>() {
            return tile_code(t);
        }
    }
    EXIT_OTHER
}

/// The error chain, skipping causes already spelled out by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sparsify(a) => cmd_sparsify(a),
        Command::Compile(a) => cmd_compile(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Tile(a) => cmd_tile(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
