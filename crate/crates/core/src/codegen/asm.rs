//! Textual program form. Directives start with `.`, comments with `##`;
//! comments are regenerated on printing and ignored when parsing.
//!
//! ```text
//! .program small_cnn mesh 4x4 memtiles 4
//! .layer 0 conv1 conv
//! .group head
//! ## Head: 1 iteration
//! LOADFM lock=L0.k0 src=mt:0x0 dst=core:0x0 bytes=288 iter=1
//! COMP op=CONV lock=L0.k1 after=L0.k0 iter=1 ops=18432 density=1
//! WRITEFM after=L0.k1 src=core:0x480 dst=mt:0x4000 bytes=64 iter=1
//! ```

use std::fmt::Write as _;

use super::{Addr, CodegenError, Group, GroupKind, Instr, LayerCode, Level, LockId, LockPair, Program};
use crate::hwmodel::{InstrKind, Mesh};
use crate::netir::OpKind;
use crate::planner::CompOp;

fn addr(a: &Addr) -> String {
    let l = match a.level {
        Level::Ddr => "ddr",
        Level::Memtile => "mt",
        Level::Core => "core",
    };
    format!("{l}:{:#x}", a.offset)
}

fn pair(p: &LockPair) -> String {
    match p.pong {
        Some(q) => format!("{}/{q}", p.ping),
        None => p.ping.to_string(),
    }
}

fn comment(g: &Group) -> String {
    let iters = g.instrs.first().map_or(0, |i| i.iters);
    let plural = |n: usize| if n == 1 { "iteration" } else { "iterations" };
    match g.kind {
        GroupKind::DdrIn => {
            let names: Vec<&str> = g.instrs.iter().filter_map(|i| i.tensor.as_deref()).collect();
            format!("## DDR to Memtile: {}", names.join(", "))
        }
        GroupKind::Weights => "## Weights to cores (halting)".into(),
        GroupKind::Head => format!("## Head: {iters} {}", plural(iters)),
        GroupKind::Body => format!("## Body: {iters} {}", plural(iters)),
        GroupKind::Tail => format!("## Tail: {iters} {}", plural(iters)),
        GroupKind::DdrOut => {
            let names: Vec<&str> = g.instrs.iter().filter_map(|i| i.tensor.as_deref()).collect();
            format!("## Memtile to DDR: {}", names.join(", "))
        }
    }
}

fn instr_line(i: &Instr) -> String {
    let mut s = i.kind.name().to_string();
    if let Some(op) = i.op {
        let _ = write!(s, " op={}", op.name());
    }
    if let Some(l) = &i.lock {
        let _ = write!(s, " lock={}", pair(l));
    }
    if let Some(l) = &i.after {
        let _ = write!(s, " after={}", pair(l));
    }
    if let Some(c) = &i.chain {
        let _ = write!(s, " chain={c}");
    }
    if let Some(a) = &i.src {
        let _ = write!(s, " src={}", addr(a));
    }
    if let Some(a) = &i.dst {
        let _ = write!(s, " dst={}", addr(a));
    }
    if i.kind != InstrKind::Comp {
        let _ = write!(s, " bytes={}", i.bytes);
    }
    let _ = write!(s, " iter={}", i.iters);
    if i.kind == InstrKind::Comp {
        let _ = write!(s, " ops={} density={}", i.ops, i.density);
    }
    if let Some(t) = &i.tensor {
        let _ = write!(s, " tensor={t}");
    }
    s
}

pub fn to_asm(p: &Program) -> String {
    let mut s = String::new();
    let _ = writeln!(s, ".program {} mesh {} memtiles {}", p.name, p.mesh, p.memtiles);
    for l in &p.layers {
        let _ = writeln!(s, ".layer {} {} {}", l.step, l.layer, l.op);
        for g in &l.groups {
            let _ = writeln!(s, ".group {}", g.kind.name());
            let _ = writeln!(s, "{}", comment(g));
            for i in &g.instrs {
                let _ = writeln!(s, "{}", instr_line(i));
            }
        }
    }
    s
}

struct Parser {
    line: usize,
}

impl Parser {
    fn err(&self, message: impl Into<String>) -> CodegenError {
        CodegenError::Parse { line: self.line, message: message.into() }
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T, CodegenError> {
        s.parse().map_err(|_| self.err(format!("bad number `{s}`")))
    }

    fn hex(&self, s: &str) -> Result<u64, CodegenError> {
        let digits = s.strip_prefix("0x").ok_or_else(|| self.err(format!("address `{s}` lacks 0x")))?;
        u64::from_str_radix(digits, 16).map_err(|_| self.err(format!("bad address `{s}`")))
    }

    fn addr(&self, s: &str) -> Result<Addr, CodegenError> {
        let (l, off) = s.split_once(':').ok_or_else(|| self.err(format!("bad address `{s}`")))?;
        let level = match l {
            "ddr" => Level::Ddr,
            "mt" => Level::Memtile,
            "core" => Level::Core,
            _ => return Err(self.err(format!("unknown memory level `{l}`"))),
        };
        Ok(Addr { level, offset: self.hex(off)? })
    }

    fn lock(&self, s: &str) -> Result<LockId, CodegenError> {
        let bad = || self.err(format!("bad lock `{s}`"));
        let rest = s.strip_prefix('L').ok_or_else(bad)?;
        let (layer, k) = rest.split_once(".k").ok_or_else(bad)?;
        Ok(LockId { layer: layer.parse().map_err(|_| bad())?, k: k.parse().map_err(|_| bad())? })
    }

    fn pair(&self, s: &str) -> Result<LockPair, CodegenError> {
        match s.split_once('/') {
            Some((a, b)) => Ok(LockPair { ping: self.lock(a)?, pong: Some(self.lock(b)?) }),
            None => Ok(LockPair { ping: self.lock(s)?, pong: None }),
        }
    }

    fn instr(&self, text: &str) -> Result<Instr, CodegenError> {
        let mut parts = text.split_whitespace();
        let head = parts.next().ok_or_else(|| self.err("empty instruction"))?;
        let kind = InstrKind::parse(head).ok_or_else(|| self.err(format!("unknown instruction `{head}`")))?;
        let mut i = Instr {
            kind,
            op: None,
            lock: None,
            after: None,
            chain: None,
            src: None,
            dst: None,
            bytes: 0,
            iters: 1,
            ops: 0,
            density: 1.0,
            tensor: None,
        };
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| self.err(format!("expected key=value, got `{p}`")))?;
            match k {
                "op" => i.op = Some(CompOp::parse(v).ok_or_else(|| self.err(format!("unknown kernel `{v}`")))?),
                "lock" => i.lock = Some(self.pair(v)?),
                "after" => i.after = Some(self.pair(v)?),
                "chain" => i.chain = Some(self.lock(v)?),
                "src" => i.src = Some(self.addr(v)?),
                "dst" => i.dst = Some(self.addr(v)?),
                "bytes" => i.bytes = self.num(v)?,
                "iter" => i.iters = self.num(v)?,
                "ops" => i.ops = self.num(v)?,
                "density" => i.density = self.num(v)?,
                "tensor" => i.tensor = Some(v.to_string()),
                _ => return Err(self.err(format!("unknown field `{k}`"))),
            }
        }
        Ok(i)
    }
}

fn op_kind(s: &str) -> Option<OpKind> {
    serde_json::from_value(serde_json::Value::String(s.into())).ok()
}

pub fn parse_asm(text: &str) -> Result<Program, CodegenError> {
    let mut p = Parser { line: 0 };
    let mut prog: Option<Program> = None;
    for (n, raw) in text.lines().enumerate() {
        p.line = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("##") {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words[0] {
            ".program" => {
                let [_, name, "mesh", mesh, "memtiles", mt] = words[..] else {
                    return Err(p.err("expected `.program NAME mesh RxC memtiles N`"));
                };
                let (r, c) = mesh.split_once('x').ok_or_else(|| p.err(format!("bad mesh `{mesh}`")))?;
                let mesh = Mesh { rows: p.num(r)?, cols: p.num(c)? };
                prog = Some(Program { name: name.into(), mesh, memtiles: p.num(mt)?, layers: Vec::new() });
            }
            ".layer" => {
                let [_, step, id, op] = words[..] else {
                    return Err(p.err("expected `.layer STEP ID OP`"));
                };
                let op = op_kind(op).ok_or_else(|| p.err(format!("unknown op `{op}`")))?;
                let prog = prog.as_mut().ok_or_else(|| p.err(".layer before .program"))?;
                prog.layers.push(LayerCode { step: p.num(step)?, layer: id.into(), op, groups: Vec::new() });
            }
            ".group" => {
                let [_, kind] = words[..] else {
                    return Err(p.err("expected `.group KIND`"));
                };
                let kind = GroupKind::parse(kind).ok_or_else(|| p.err(format!("unknown group `{kind}`")))?;
                let layer = prog.as_mut().and_then(|q| q.layers.last_mut()).ok_or_else(|| p.err(".group outside a layer"))?;
                layer.groups.push(Group { kind, instrs: Vec::new() });
            }
            _ => {
                let i = p.instr(line)?;
                let group = prog
                    .as_mut()
                    .and_then(|q| q.layers.last_mut())
                    .and_then(|l| l.groups.last_mut())
                    .ok_or_else(|| p.err("instruction outside a group"))?;
                group.instrs.push(i);
            }
        }
    }
    prog.ok_or_else(|| CodegenError::Parse { line: 0, message: "missing .program".into() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::emit_program;
    use crate::hwmodel::HwConfig;
    use crate::netir::fixtures;
    use crate::planner::{plan, PlanOptions};

    #[test]
    fn round_trip() {
        for name in ["small_cnn", "bottleneck", "mlp"] {
            let g = fixtures::by_name(name).unwrap();
            let prog = emit_program(&plan(&g, &HwConfig::default(), &PlanOptions::default()).unwrap());
            let text = to_asm(&prog);
            assert_eq!(parse_asm(&text).unwrap(), prog, "{name}");
        }
    }

    #[test]
    fn comments_regenerated() {
        let g = fixtures::small_cnn();
        let prog = emit_program(&plan(&g, &HwConfig::default(), &PlanOptions::default()).unwrap());
        let text = to_asm(&prog);
        assert!(text.contains("## Head: 1 iteration\n"));
        assert!(text.contains("## Body: 30 iterations\n"));
        let stripped: String = text.lines().filter(|l| !l.starts_with("##")).map(|l| format!("{l}\n")).collect();
        assert_eq!(to_asm(&parse_asm(&stripped).unwrap()), text);
    }

    #[test]
    fn errors_carry_line() {
        let err = parse_asm(".program p mesh 2x2 memtiles 2\n.layer 0 a conv\n.group body\nLOADFM bytes=x\n").unwrap_err();
        assert!(err.to_string().starts_with("line 4:"), "{err}");
    }
}
