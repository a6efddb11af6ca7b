//! Reference executor for whole graphs. Activations are `i8` codes held in
//! `i64` so intermediate sums never overflow before saturation.

use std::collections::BTreeMap;

use super::{materialize_bias, materialize_weights, IrError, Layer, NetGraph, OpKind};
use crate::bscore::{block_sparse_conv, BlockCooWeight, BlockMask, BlockShape};
use crate::tensor::Tensor3;

pub type Activations = BTreeMap<String, Tensor3<i64>>;

/// Arithmetic right shift followed by saturation to `i8`, with optional ReLU.
pub fn requantize(acc: i64, shift: u32, relu: bool) -> i64 {
    let v = (acc >> shift).clamp(-128, 127);
    if relu {
        v.max(0)
    } else {
        v
    }
}

/// Compressed weights and bias of a weighted layer, prepared once.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weights: BlockCooWeight<i64>,
    pub bias: Vec<i64>,
}

impl LayerParams {
    pub fn prepare(graph: &NetGraph, layer: &Layer) -> Result<Self, IrError> {
        let w = materialize_weights(graph, layer)?.map(i64::from);
        let [o, _, _, i] = w.dims();
        let mask = match layer.mask() {
            Some(m) => m.clone(),
            None => BlockMask::dense_for(o, i, BlockShape::B8X8),
        };
        Ok(Self { weights: BlockCooWeight::compress(&w, &mask)?, bias: materialize_bias(layer)?.into_iter().map(i64::from).collect() })
    }
}

/// Runs one layer on its inputs. `params` is required for weighted layers.
pub fn run_layer(layer: &Layer, params: Option<&LayerParams>, ins: &[&Tensor3<i64>]) -> Result<Tensor3<i64>, IrError> {
    let err = |message: String| IrError::Shape { layer: layer.id.clone(), message };
    let x = ins[0];
    Ok(match layer.op {
        OpKind::Conv | OpKind::Gemm => {
            let p = params.ok_or_else(|| err("weights not prepared".into()))?;
            let (stride, pad) = if layer.op == OpKind::Gemm { (1, Default::default()) } else { (layer.stride, layer.pad) };
            let acc = block_sparse_conv(x, &p.weights, &p.bias, stride, pad).map_err(|e| err(e.to_string()))?;
            let shift = layer.effective_shift();
            let [h, w, c] = acc.dims();
            Tensor3::from_fn([h, w, c], |[y, xx, ch]| requantize(acc.get(y, xx, ch), shift, layer.relu))
        }
        OpKind::MaxPool => max_pool(layer, x).ok_or_else(|| err("pool window does not fit".into()))?,
        OpKind::Add => {
            let [h, w, c] = x.dims();
            if ins.iter().any(|t| t.dims() != x.dims()) {
                return Err(err("add operands differ in shape".into()));
            }
            Tensor3::from_fn([h, w, c], |[y, xx, ch]| {
                let s: i64 = ins.iter().map(|t| t.get(y, xx, ch)).sum();
                requantize(s, 0, layer.relu)
            })
        }
        OpKind::Concat => {
            let [h, w, _] = x.dims();
            let c: usize = ins.iter().map(|t| t.channels()).sum();
            let mut out = Tensor3::zeros([h, w, c]);
            let mut c0 = 0;
            for t in ins {
                out.paste(t, 0, 0, c0);
                c0 += t.channels();
            }
            out
        }
        OpKind::GlobalPool => {
            let [h, w, c] = x.dims();
            let n = (h * w) as i64;
            Tensor3::from_fn([1, 1, c], |[_, _, ch]| {
                let s: i64 = (0..h).flat_map(|y| (0..w).map(move |xx| (y, xx))).map(|(y, xx)| x.get(y, xx, ch)).sum();
                s.div_euclid(n)
            })
        }
        OpKind::Identity => x.clone(),
        OpKind::InputBoundary | OpKind::OutputBoundary => {
            return Err(err("boundary layers run through the tiled executor".into()));
        }
    })
}

/// Max pooling; padded positions are skipped rather than read as zero.
fn max_pool(layer: &Layer, x: &Tensor3<i64>) -> Option<Tensor3<i64>> {
    let [ih, iw, c] = x.dims();
    let (kh, kw) = layer.kernel;
    let (s, p) = (layer.stride, layer.pad);
    let oh = crate::bscore::out_extent(ih, kh, s, p.top, p.bottom)?;
    let ow = crate::bscore::out_extent(iw, kw, s, p.left, p.right)?;
    Some(Tensor3::from_fn([oh, ow, c], |[oy, ox, ch]| {
        let mut m = i64::MIN;
        for dy in 0..kh {
            let iy = (oy * s + dy) as isize - p.top as isize;
            if iy < 0 || iy >= ih as isize {
                continue;
            }
            for dx in 0..kw {
                let ix = (ox * s + dx) as isize - p.left as isize;
                if ix >= 0 && ix < iw as isize {
                    m = m.max(x.get(iy as usize, ix as usize, ch));
                }
            }
        }
        m
    }))
}

/// Executes the graph in schedule order and returns every tensor.
pub fn execute(graph: &NetGraph, inputs: &Activations) -> Result<Activations, IrError> {
    let mut env = Activations::new();
    for id in &graph.inputs {
        let t = inputs.get(id).ok_or_else(|| IrError::Invalid(format!("no value for graph input `{id}`")))?;
        let want = graph.shape(id).dims();
        if t.dims() != want {
            return Err(IrError::Invalid(format!("input `{id}` has dims {:?}, graph expects {want:?}", t.dims())));
        }
        env.insert(id.clone(), t.clone());
    }
    for layer in &graph.layers {
        let params = if layer.op.has_weights() { Some(LayerParams::prepare(graph, layer)?) } else { None };
        let ins: Vec<&Tensor3<i64>> = layer.inputs.iter().map(|t| &env[t]).collect();
        let out = run_layer(layer, params.as_ref(), &ins)?;
        env.insert(layer.output.clone(), out);
    }
    Ok(env)
}
