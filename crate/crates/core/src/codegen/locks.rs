//! Lock-chain checker. Core groups are expanded into per-iteration
//! operations on three engines (activation loads, compute, result writes)
//! which are then interleaved at random. Each lock guards one buffer and
//! records which iteration last filled it, so a wrong ping/pong pairing
//! shows up as a stale read or a deadlock.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Group, Instr, LayerCode, LockId, LockPair, Program};
use crate::hwmodel::InstrKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LockError {
    #[error("layer `{layer}`: {kind} without a lock")]
    MissingLock { layer: String, kind: InstrKind },
    #[error("layer `{layer}`: deadlock with {pending} operations pending")]
    Deadlock { layer: String, pending: usize },
    #[error("layer `{layer}`: {kind} of iteration {iter} found {lock} holding iteration {found}")]
    StaleRead { layer: String, kind: InstrKind, iter: usize, lock: LockId, found: usize },
    #[error("layer `{layer}`: {lock} still full at a barrier")]
    Unconsumed { layer: String, lock: LockId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimReport {
    pub layers: usize,
    pub operations: usize,
    pub runs: usize,
}

#[derive(Clone, Copy)]
struct Op {
    iter: usize,
    fill: Option<LockId>,
    drain: Option<LockId>,
}

/// The three engine queues of a run of core groups.
#[derive(Default)]
struct Segment {
    loads: Vec<Op>,
    comps: Vec<Op>,
    writes: Vec<Op>,
}

fn need(layer: &str, i: &Instr, p: Option<LockPair>) -> Result<LockPair, LockError> {
    p.ok_or_else(|| LockError::MissingLock { layer: layer.into(), kind: i.kind })
}

fn segments(code: &LayerCode) -> Result<Vec<Segment>, LockError> {
    let mut out = Vec::new();
    let mut cur = Segment::default();
    let mut iter = 0;
    let flush = |cur: &mut Segment, out: &mut Vec<Segment>| {
        if !cur.loads.is_empty() || !cur.comps.is_empty() {
            out.push(std::mem::take(cur));
        }
    };
    for g in &code.groups {
        if !g.kind.is_core() {
            flush(&mut cur, &mut out);
            continue;
        }
        expand(&code.layer, g, &mut iter, &mut cur)?;
    }
    flush(&mut cur, &mut out);
    Ok(out)
}

fn expand(layer: &str, g: &Group, iter: &mut usize, seg: &mut Segment) -> Result<(), LockError> {
    let n = g.instrs.first().map_or(0, |i| i.iters);
    for t in 0..n {
        let j = *iter + t;
        for i in &g.instrs {
            match i.kind {
                InstrKind::LoadFm => seg.loads.push(Op { iter: j, fill: Some(need(layer, i, i.lock)?.at(t)), drain: None }),
                InstrKind::Comp => {
                    seg.comps.push(Op { iter: j, fill: Some(need(layer, i, i.lock)?.at(t)), drain: Some(need(layer, i, i.after)?.at(t)) })
                }
                InstrKind::WriteFm => seg.writes.push(Op { iter: j, fill: None, drain: Some(need(layer, i, i.after)?.at(t)) }),
                _ => {}
            }
        }
    }
    *iter += n;
    Ok(())
}

/// Whether `op` can run; an error if it would read the wrong iteration.
fn ready(layer: &str, kind: InstrKind, op: &Op, state: &BTreeMap<LockId, usize>) -> Result<bool, LockError> {
    if let Some(d) = op.drain {
        match state.get(&d) {
            None => return Ok(false),
            Some(&f) if f != op.iter => {
                return Err(LockError::StaleRead { layer: layer.into(), kind, iter: op.iter, lock: d, found: f });
            }
            _ => {}
        }
    }
    Ok(op.fill.is_none_or(|f| !state.contains_key(&f)))
}

fn run(layer: &str, seg: &Segment, rng: &mut ChaCha8Rng) -> Result<usize, LockError> {
    let queues = [(InstrKind::LoadFm, &seg.loads), (InstrKind::Comp, &seg.comps), (InstrKind::WriteFm, &seg.writes)];
    let mut heads = [0usize; 3];
    let mut state: BTreeMap<LockId, usize> = BTreeMap::new();
    let total: usize = queues.iter().map(|q| q.1.len()).sum();
    let mut done = 0;
    while done < total {
        let mut enabled = Vec::with_capacity(3);
        for (e, (kind, q)) in queues.iter().enumerate() {
            if let Some(op) = q.get(heads[e]) {
                if ready(layer, *kind, op, &state)? {
                    enabled.push(e);
                }
            }
        }
        if enabled.is_empty() {
            return Err(LockError::Deadlock { layer: layer.into(), pending: total - done });
        }
        let e = enabled[rng.gen_range(0..enabled.len())];
        let op = queues[e].1[heads[e]];
        if let Some(d) = op.drain {
            state.remove(&d);
        }
        if let Some(f) = op.fill {
            state.insert(f, op.iter);
        }
        heads[e] += 1;
        done += 1;
    }
    if let Some((&lock, _)) = state.iter().next() {
        return Err(LockError::Unconsumed { layer: layer.into(), lock });
    }
    Ok(total)
}

/// Runs every layer's lock chain under `runs` random interleavings.
pub fn simulate_locks(prog: &Program, seed: u64, runs: usize) -> Result<SimReport, LockError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SimReport { layers: prog.layers.len(), operations: 0, runs };
    for code in &prog.layers {
        let segs = segments(code)?;
        for _ in 0..runs {
            for s in &segs {
                report.operations += run(&code.layer, s, &mut rng)?;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{emit_program, GroupKind};
    use crate::hwmodel::HwConfig;
    use crate::netir::fixtures;
    use crate::planner::{plan, PlanOptions};

    fn program() -> Program {
        emit_program(&plan(&fixtures::small_cnn(), &HwConfig::default(), &PlanOptions::default()).unwrap())
    }

    #[test]
    fn emitted_chains_are_safe() {
        let r = simulate_locks(&program(), 7, 20).unwrap();
        assert!(r.operations > 0);
    }

    #[test]
    fn missing_pong_is_caught() {
        let mut prog = program();
        let body = prog.layers[0].groups.iter_mut().find(|g| g.kind == GroupKind::Body).unwrap();
        body.instrs[2].after.as_mut().unwrap().pong = None;
        let err = simulate_locks(&prog, 7, 5).unwrap_err();
        assert!(matches!(err, LockError::StaleRead { .. } | LockError::Deadlock { .. }), "{err}");
    }

    #[test]
    fn swapped_pong_is_caught() {
        let mut prog = program();
        let body = prog.layers[0].groups.iter_mut().find(|g| g.kind == GroupKind::Body).unwrap();
        let comp = &mut body.instrs[1];
        let a = comp.after.as_mut().unwrap();
        std::mem::swap(&mut a.ping, a.pong.as_mut().unwrap());
        assert!(simulate_locks(&prog, 3, 5).is_err());
    }
}
