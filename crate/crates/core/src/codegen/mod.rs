//! Instruction emission. Every plan piece becomes a DDR-in group, one
//! weight group per pass, head/body/tail iteration groups and a DDR-out
//! group. Core groups are written once from the perspective of a single
//! core and drive the whole mesh.

mod asm;
mod locks;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::asm::{parse_asm, to_asm};
pub use self::locks::{simulate_locks, LockError, SimReport};
use crate::hwmodel::{InstrKind, Mesh};
use crate::netir::OpKind;
use crate::planner::{CompOp, CoreTask, DdrMove, LayerPlan, Plan, RowPhase};

#[derive(Debug, Error)]
pub enum CodegenError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Ddr,
    Memtile,
    Core,
}

/// Address in one memory level; Memtile addresses are the same in every
/// Memtile because layouts are symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Addr {
    pub level: Level,
    pub offset: u64,
}

impl Addr {
    pub fn ddr(offset: u64) -> Self {
        Self { level: Level::Ddr, offset }
    }
    pub fn memtile(offset: u64) -> Self {
        Self { level: Level::Memtile, offset }
    }
    pub fn core(offset: u64) -> Self {
        Self { level: Level::Core, offset }
    }
}

/// Lock `k` of the layer at schedule step `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LockId {
    pub layer: usize,
    pub k: usize,
}

impl std::fmt::Display for LockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}.k{}", self.layer, self.k)
    }
}

/// Lock of the first iteration and, for loops, the one used by odd
/// iterations (ping/pong).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockPair {
    pub ping: LockId,
    pub pong: Option<LockId>,
}

impl LockPair {
    pub fn at(&self, iter: usize) -> LockId {
        match self.pong {
            Some(p) if iter % 2 == 1 => p,
            _ => self.ping,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instr {
    pub kind: InstrKind,
    /// Kernel run by a COMP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<CompOp>,
    /// Buffer lock this instruction fills.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lock: Option<LockPair>,
    /// Buffer lock this instruction drains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<LockPair>,
    /// Fill lock of the previous load group this load is chained to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<LockId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<Addr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<Addr>,
    /// Bytes per iteration; DDR transfers count one Memtile's share.
    pub bytes: u64,
    pub iters: usize,
    /// Dense operations per iteration of a COMP.
    pub ops: u64,
    /// Fraction of weight blocks that are nonzero.
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tensor: Option<String>,
}

impl Instr {
    fn transfer(kind: InstrKind, src: Addr, dst: Addr, bytes: u64, iters: usize) -> Self {
        Self {
            kind,
            op: None,
            lock: None,
            after: None,
            chain: None,
            src: Some(src),
            dst: Some(dst),
            bytes,
            iters,
            ops: 0,
            density: 1.0,
            tensor: None,
        }
    }

    fn ddr(m: &DdrMove) -> Self {
        let (src, dst) = match m.kind {
            InstrKind::Write => (Addr::memtile(m.memtile_offset), Addr::ddr(m.ddr_offset)),
            _ => (Addr::ddr(m.ddr_offset), Addr::memtile(m.memtile_offset)),
        };
        Self { tensor: Some(m.tensor.clone()), ..Self::transfer(m.kind, src, dst, m.bytes, 1) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    DdrIn,
    Weights,
    Head,
    Body,
    Tail,
    DdrOut,
}

impl GroupKind {
    pub const ALL: [GroupKind; 6] =
        [GroupKind::DdrIn, GroupKind::Weights, GroupKind::Head, GroupKind::Body, GroupKind::Tail, GroupKind::DdrOut];

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::DdrIn => "ddr_in",
            GroupKind::Weights => "weights",
            GroupKind::Head => "head",
            GroupKind::Body => "body",
            GroupKind::Tail => "tail",
            GroupKind::DdrOut => "ddr_out",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn is_core(self) -> bool {
        matches!(self, GroupKind::Head | GroupKind::Body | GroupKind::Tail)
    }
}

impl From<RowPhase> for GroupKind {
    fn from(p: RowPhase) -> Self {
        match p {
            RowPhase::Head => GroupKind::Head,
            RowPhase::Body => GroupKind::Body,
            RowPhase::Tail => GroupKind::Tail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub kind: GroupKind,
    pub instrs: Vec<Instr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCode {
    pub step: usize,
    pub layer: String,
    pub op: OpKind,
    pub groups: Vec<Group>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    pub mesh: Mesh,
    pub memtiles: usize,
    pub layers: Vec<LayerCode>,
}

impl Program {
    pub fn instrs(&self) -> impl Iterator<Item = &Instr> {
        self.layers.iter().flat_map(|l| l.groups.iter().flat_map(|g| g.instrs.iter()))
    }

    pub fn count(&self, kind: InstrKind) -> usize {
        self.instrs().filter(|i| i.kind == kind).count()
    }

    /// Bytes moved by all instructions of `kind`, iterations included.
    pub fn bytes(&self, kind: InstrKind) -> u64 {
        self.instrs().filter(|i| i.kind == kind).map(|i| i.bytes * i.iters as u64).sum()
    }
}

/// Physical buffer locks of a layer: input ping/pong, output ping/pong and
/// the weight buffer.
const IN_PING: usize = 0;
const OUT_PING: usize = 1;
const IN_PONG: usize = 2;
const OUT_PONG: usize = 3;
const WEIGHTS: usize = 4;

struct Emitter {
    step: usize,
    /// Global iteration parity, carried across groups so ping/pong stay in
    /// step between head, body and tail.
    iter: usize,
    last_load: Option<LockId>,
}

impl Emitter {
    fn lock(&self, k: usize) -> LockId {
        LockId { layer: self.step, k }
    }

    fn pair(&self, ping: usize, pong: usize, iters: usize) -> LockPair {
        let (a, b) = if self.iter.is_multiple_of(2) { (ping, pong) } else { (pong, ping) };
        LockPair { ping: self.lock(a), pong: (iters > 1).then(|| self.lock(b)) }
    }

    fn task_groups(&mut self, task: &CoreTask, src: u64, weights: u64, dst: u64, out: &mut Vec<Group>) {
        let window = (task.rows_body.max(task.rows_head).max(1) * task.window_cols * task.load_channels) as u64;
        let out_buf = (task.sub_width * task.units_per_pass * task.unit_channels * task.out_bytes)
            .max(task.units_per_pass * task.unit_channels * task.out_bytes) as u64;
        let core_w = 2 * window + 2 * out_buf;
        for pass in 0..task.passes {
            for ws in 0..task.width_passes {
                if ws == 0 && task.weight_unit_bytes > 0 {
                    let mut wm = Instr::transfer(InstrKind::LoadWm, Addr::memtile(weights), Addr::core(core_w), task.loadwm_bytes(pass), 1);
                    wm.lock = Some(LockPair { ping: self.lock(WEIGHTS), pong: None });
                    out.push(Group { kind: GroupKind::Weights, instrs: vec![wm] });
                }
                for spec in task.phases(pass) {
                    let n = spec.iters;
                    let in_locks = self.pair(IN_PING, IN_PONG, n);
                    let out_locks = self.pair(OUT_PING, OUT_PONG, n);
                    let in_addr = if self.iter.is_multiple_of(2) { 0 } else { window };
                    let out_addr = 2 * window + if self.iter.is_multiple_of(2) { 0 } else { out_buf };
                    let mut load = Instr::transfer(InstrKind::LoadFm, Addr::memtile(src), Addr::core(in_addr), spec.loadfm_bytes, n);
                    load.lock = Some(in_locks);
                    load.chain = self.last_load;
                    let comp = Instr {
                        kind: InstrKind::Comp,
                        op: Some(task.op),
                        lock: Some(out_locks),
                        after: Some(in_locks),
                        chain: None,
                        src: None,
                        dst: None,
                        bytes: 0,
                        iters: n,
                        ops: spec.ops,
                        density: task.density,
                        tensor: None,
                    };
                    let mut write = Instr::transfer(InstrKind::WriteFm, Addr::core(out_addr), Addr::memtile(dst), spec.writefm_bytes, n);
                    write.after = Some(out_locks);
                    self.last_load = Some(in_locks.ping);
                    self.iter += n;
                    out.push(Group { kind: spec.phase.into(), instrs: vec![load, comp, write] });
                }
            }
        }
    }
}

/// Instructions of one planned layer.
pub fn emit_layer(lp: &LayerPlan) -> LayerCode {
    let mut e = Emitter { step: lp.step, iter: 0, last_load: None };
    let mut groups = Vec::new();
    for piece in &lp.pieces {
        if !piece.ddr_in.is_empty() {
            groups.push(Group { kind: GroupKind::DdrIn, instrs: piece.ddr_in.iter().map(Instr::ddr).collect() });
        }
        if let Some(task) = &piece.task {
            e.task_groups(task, piece.src_offset, piece.weight_offset, piece.dst_offset, &mut groups);
        }
        if !piece.ddr_out.is_empty() {
            groups.push(Group { kind: GroupKind::DdrOut, instrs: piece.ddr_out.iter().map(Instr::ddr).collect() });
        }
    }
    LayerCode { step: lp.step, layer: lp.layer.clone(), op: lp.op, groups }
}

pub fn emit_program(plan: &Plan) -> Program {
    Program { name: plan.name.clone(), mesh: plan.mesh, memtiles: plan.memtiles, layers: plan.layers.iter().map(emit_layer).collect() }
}
