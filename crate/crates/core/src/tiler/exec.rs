//! Runs an unrolled schedule on data. Every tile tensor remembers which rows
//! of the untiled tensor it holds, and each tile copy reads exactly the rows
//! its source layer needs from them.

use std::collections::BTreeMap;

use super::{input_rows, Rows, TileError};
use crate::netir::{run_layer, Activations, LayerParams, NetGraph, OpKind};
use crate::planner::Schedule;
use crate::tensor::Tensor3;

pub fn execute_schedule(graph: &NetGraph, sched: &Schedule, inputs: &Activations) -> Result<Activations, TileError> {
    let mut env = Activations::new();
    let mut held: BTreeMap<String, Rows> = BTreeMap::new();
    for id in &sched.inputs {
        let t = inputs.get(id).ok_or_else(|| TileError::Exec { step: "input".into(), message: format!("no value for `{id}`") })?;
        held.insert(id.clone(), (0, t.height()));
        env.insert(id.clone(), t.clone());
    }
    let mut params: BTreeMap<String, LayerParams> = BTreeMap::new();
    for step in &sched.steps {
        let l = &step.layer;
        let err = |message: String| TileError::Exec { step: l.id.clone(), message };
        let value = |t: &str| env.get(t).ok_or_else(|| err(format!("`{t}` was never computed")));
        let rows = |r: Option<Rows>| r.ok_or_else(|| err("no row range".into()));
        match l.op {
            OpKind::InputBoundary => {
                let r = rows(step.rows)?;
                let full = value(&l.inputs[0])?;
                if r.1 > full.height() || held[&l.inputs[0]] != (0, full.height()) {
                    return Err(err(format!("rows {r:?} outside the input")));
                }
                let tile = full.rows(r.0, r.1);
                held.insert(l.output.clone(), r);
                env.insert(l.output.clone(), tile);
            }
            OpKind::OutputBoundary => {
                let r = rows(step.rows)?;
                let tile = value(&l.inputs[0])?.clone();
                if held[&l.inputs[0]] != r {
                    return Err(err(format!("tile holds rows {:?}, boundary expects {r:?}", held[&l.inputs[0]])));
                }
                let full = env.entry(l.output.clone()).or_insert_with(|| Tensor3::zeros(sched.shape(&l.output).dims()));
                full.paste(&tile, r.0, 0, 0);
                held.insert(l.output.clone(), (0, full.height()));
            }
            _ => {
                let src = match &step.source {
                    Some(s) => graph.layer(s).ok_or_else(|| err(format!("unknown source layer `{s}`")))?,
                    None => l,
                };
                let key = step.weights_key.clone().unwrap_or_else(|| src.id.clone());
                if src.op.has_weights() && !params.contains_key(&key) {
                    params.insert(key.clone(), LayerParams::prepare(graph, src)?);
                }
                let (run, out_rows, slices) = if step.source.is_some() {
                    let out = rows(step.rows)?;
                    let mut run = src.clone();
                    let mut slices = Vec::with_capacity(l.inputs.len());
                    for (t, orig) in l.inputs.iter().zip(&src.inputs) {
                        let (need, top, bottom) = input_rows(src, out, graph.shape(orig).h);
                        let have = held.get(t).copied().ok_or_else(|| err(format!("`{t}` was never computed")))?;
                        if need.0 < have.0 || need.1 > have.1 {
                            return Err(err(format!("needs rows {need:?} of `{orig}`, tile holds {have:?}")));
                        }
                        slices.push(value(t)?.rows(need.0 - have.0, need.1 - have.0));
                        if src.op.is_windowed() {
                            run.pad.top = top;
                            run.pad.bottom = bottom;
                        }
                    }
                    (run, out, slices)
                } else {
                    let slices = l.inputs.iter().map(|t| value(t).cloned()).collect::<Result<Vec<_>, _>>()?;
                    (l.clone(), (0, sched.shape(&l.output).h), slices)
                };
                let ins: Vec<&Tensor3<i64>> = slices.iter().collect();
                let out = run_layer(&run, params.get(&key), &ins)?;
                if out.height() != out_rows.1 - out_rows.0 {
                    return Err(err(format!("computed {} rows, expected {out_rows:?}", out.height())));
                }
                held.insert(l.output.clone(), out_rows);
                env.insert(l.output.clone(), out);
            }
        }
    }
    Ok(env)
}
