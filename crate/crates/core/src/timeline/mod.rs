//! Analytic execution-time model. Transfers cost bytes over channel
//! bandwidth, computation costs operations over peak MAC rate. Single
//! iterations run load, compute and write back to back; loops overlap them
//! so a group takes the slowest stage times the iteration count. Layers run
//! one after another. Internal time is integer picoseconds.

mod export;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::export::{events_csv, events_svg, write_timeline, TimelineFormat};
use crate::codegen::{Group, GroupKind, Instr, Program};
use crate::hwmodel::{bandwidth_for, HwConfig, InstrKind};

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown timeline format `{0}` (expected csv or svg)")]
    Format(String),
}

pub const PS_PER_US: u64 = 1_000_000;

pub fn ps_to_us(ps: u64) -> f64 {
    ps as f64 / PS_PER_US as f64
}

/// Picoseconds for `macs` multiply-accumulates at the given weight density.
pub fn comp_ps(macs: u64, density: f64, cfg: &HwConfig) -> u64 {
    (macs as f64 * density * 1000.0 / cfg.macs_per_ns()).round() as u64
}

/// Microseconds to compute `macs` dense MACs at block sparsity `sparsity`.
pub fn estimate_comp(macs: u64, sparsity: f64, cfg: &HwConfig) -> f64 {
    ps_to_us(comp_ps(macs, 1.0 - sparsity, cfg))
}

pub fn transfer_ps(kind: InstrKind, bytes: u64, cfg: &HwConfig) -> u64 {
    (bytes as f64 * 1000.0 / bandwidth_for(kind, cfg)).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub us: f64,
    /// Nothing else on the cores proceeds while it runs.
    pub halting: bool,
}

/// Time of one iteration of a transfer instruction.
pub fn estimate_transfer(instr: &Instr, cfg: &HwConfig) -> Transfer {
    Transfer { us: ps_to_us(transfer_ps(instr.kind, instr.bytes, cfg)), halting: instr.kind == InstrKind::LoadWm }
}

/// Time of one iteration of any instruction.
pub fn instr_ps(i: &Instr, cfg: &HwConfig) -> u64 {
    match i.kind {
        InstrKind::Comp => comp_ps(i.ops, i.density, cfg),
        k => transfer_ps(k, i.bytes, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub layer: String,
    pub group: GroupKind,
    /// Position of the instruction in the program, counting from zero.
    pub instr: usize,
    pub lane: InstrKind,
    pub start_ps: u64,
    pub duration_ps: u64,
}

impl TimelineEvent {
    pub fn end_ps(&self) -> u64 {
        self.start_ps + self.duration_ps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    Compute,
    Communication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTime {
    pub layer: String,
    pub start_us: f64,
    pub total_us: f64,
    pub comp_us: f64,
    pub ddr_us: f64,
    pub bottleneck: Bottleneck,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindSum {
    pub bytes: u64,
    pub busy_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: String,
    pub total_s: f64,
    pub total_ps: u64,
    pub layers: Vec<LayerTime>,
    pub kinds: BTreeMap<InstrKind, KindSum>,
}

impl EstimateReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>12} {:>12} {:>12} {:>12}  bound", "layer", "start_us", "total_us", "comp_us", "ddr_us");
        for l in &self.layers {
            let bound = match l.bottleneck {
                Bottleneck::Compute => "compute",
                Bottleneck::Communication => "comm",
            };
            let _ =
                writeln!(s, "{:<24} {:>12.3} {:>12.3} {:>12.3} {:>12.3}  {bound}", l.layer, l.start_us, l.total_us, l.comp_us, l.ddr_us);
        }
        let _ = writeln!(s, "{:<24} {:>12} {:>12.3}", "total", "", ps_to_us(self.total_ps));
        let _ = writeln!(s, "total {:.6e} s", self.total_s);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub report: EstimateReport,
    pub events: Vec<TimelineEvent>,
}

struct Clock<'a> {
    cfg: &'a HwConfig,
    now: u64,
    instr: usize,
    events: Vec<TimelineEvent>,
}

impl Clock<'_> {
    fn event(&mut self, layer: &str, group: GroupKind, instr: usize, lane: InstrKind, start: u64, dur: u64) {
        self.events.push(TimelineEvent { layer: layer.into(), group, instr, lane, start_ps: start, duration_ps: dur });
    }

    /// DDR group: evictions first, then activation and weight loads on
    /// their own channels in parallel.
    fn ddr(&mut self, layer: &str, g: &Group) {
        let base = self.instr;
        let mut t = self.now;
        for (n, i) in g.instrs.iter().enumerate().filter(|(_, i)| i.kind == InstrKind::Write) {
            let d = instr_ps(i, self.cfg) * i.iters as u64;
            self.event(layer, g.kind, base + n, i.kind, t, d);
            t += d;
        }
        let mut end = t;
        for lane in [InstrKind::Load, InstrKind::LoadW] {
            let mut l = t;
            for (n, i) in g.instrs.iter().enumerate().filter(|(_, i)| i.kind == lane) {
                let d = instr_ps(i, self.cfg) * i.iters as u64;
                self.event(layer, g.kind, base + n, lane, l, d);
                l += d;
            }
            end = end.max(l);
        }
        self.now = end;
    }

    fn core(&mut self, layer: &str, g: &Group) {
        let base = self.instr;
        let iters = g.instrs.first().map_or(0, |i| i.iters) as u64;
        if iters <= 1 {
            for (n, i) in g.instrs.iter().enumerate() {
                let d = instr_ps(i, self.cfg) * i.iters as u64;
                self.event(layer, g.kind, base + n, i.kind, self.now, d);
                self.now += d;
            }
            return;
        }
        let stage = g.instrs.iter().map(|i| instr_ps(i, self.cfg)).max().unwrap_or(0);
        for (n, i) in g.instrs.iter().enumerate() {
            let d = instr_ps(i, self.cfg) * iters;
            self.event(layer, g.kind, base + n, i.kind, self.now, d);
        }
        self.now += stage * iters;
    }
}

/// Estimates a program: one event per instruction and per-layer totals.
pub fn estimate_program(prog: &Program, cfg: &HwConfig) -> Estimate {
    let overhead = (cfg.layer_overhead_us * PS_PER_US as f64).round() as u64;
    let mut clock = Clock { cfg, now: 0, instr: 0, events: Vec::new() };
    let mut layers = Vec::new();
    for code in &prog.layers {
        let start = clock.now;
        let first = clock.events.len();
        for g in &code.groups {
            match g.kind {
                GroupKind::DdrIn | GroupKind::DdrOut => clock.ddr(&code.layer, g),
                _ => clock.core(&code.layer, g),
            }
            clock.instr += g.instrs.len();
        }
        clock.now += overhead;
        let busy =
            |pred: &dyn Fn(InstrKind) -> bool| clock.events[first..].iter().filter(|e| pred(e.lane)).map(|e| e.duration_ps).sum::<u64>();
        let comp = busy(&|k| k == InstrKind::Comp);
        let ddr = busy(&|k| k.is_ddr());
        let fm = InstrKind::ALL.iter().filter(|k| !k.is_ddr() && **k != InstrKind::Comp).map(|&k| busy(&|x| x == k)).max().unwrap_or(0);
        let bottleneck = if comp >= ddr.max(fm) { Bottleneck::Compute } else { Bottleneck::Communication };
        layers.push(LayerTime {
            layer: code.layer.clone(),
            start_us: ps_to_us(start),
            total_us: ps_to_us(clock.now - start),
            comp_us: ps_to_us(comp),
            ddr_us: ps_to_us(ddr),
            bottleneck,
        });
    }
    let mut kinds: BTreeMap<InstrKind, KindSum> = BTreeMap::new();
    let mut n = 0;
    for code in &prog.layers {
        for g in &code.groups {
            for i in &g.instrs {
                let e = &clock.events[n];
                let k = kinds.entry(i.kind).or_default();
                k.bytes += i.bytes * i.iters as u64;
                k.busy_us += ps_to_us(e.duration_ps);
                n += 1;
            }
        }
    }
    let total_ps = clock.now;
    let report = EstimateReport { name: prog.name.clone(), total_s: total_ps as f64 / 1e12, total_ps, layers, kinds };
    Estimate { report, events: clock.events }
}
