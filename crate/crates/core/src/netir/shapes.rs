use super::{DType, IrError, Layer, NetGraph, OpKind, Shape};
use crate::bscore::out_extent;

/// Computes every tensor shape from the graph inputs. Declared shapes must
/// agree with the computed ones.
pub fn infer_shapes(graph: &NetGraph) -> Result<NetGraph, IrError> {
    let mut g = graph.clone();
    for i in 0..g.layers.len() {
        let layer = g.layers[i].clone();
        let ins: Vec<Shape> = layer
            .inputs
            .iter()
            .map(|t| {
                g.tensor(t)
                    .and_then(|t| t.shape)
                    .ok_or_else(|| IrError::Shape { layer: layer.id.clone(), message: format!("input `{t}` has no shape") })
            })
            .collect::<Result<_, _>>()?;
        let out = layer_output_shape(&layer, &ins)?;
        let info = g.tensor_mut(&layer.output).expect("validated reference");
        match info.shape {
            Some(declared) if declared != out => {
                return Err(IrError::Shape {
                    layer: layer.id.clone(),
                    message: format!("`{}` declared {declared}, computed {out}", layer.output),
                });
            }
            _ => info.shape = Some(out),
        }
        info.dtype = DType::I8;
    }
    Ok(g)
}

pub(crate) fn layer_output_shape(layer: &Layer, ins: &[Shape]) -> Result<Shape, IrError> {
    let err = |message: String| IrError::Shape { layer: layer.id.clone(), message };
    let x = ins[0];
    let (kh, kw) = layer.kernel;
    let p = layer.pad;
    let window = |x: Shape| -> Result<(usize, usize), IrError> {
        let h =
            out_extent(x.h, kh, layer.stride, p.top, p.bottom).ok_or_else(|| err(format!("kernel height {kh} does not fit input {x}")))?;
        let w =
            out_extent(x.w, kw, layer.stride, p.left, p.right).ok_or_else(|| err(format!("kernel width {kw} does not fit input {x}")))?;
        Ok((h, w))
    };
    Ok(match layer.op {
        OpKind::Conv | OpKind::Gemm => {
            let w = layer.weights.as_ref().expect("validated");
            if w.in_channels != x.c {
                return Err(err(format!("weights expect {} input channels, input {x} has {}", w.in_channels, x.c)));
            }
            if let Some(m) = &w.mask {
                m.check_dims(w.out_channels, w.in_channels).map_err(|e| err(e.to_string()))?;
            }
            if layer.op == OpKind::Gemm {
                if x.h != 1 {
                    return Err(err(format!("gemm input must be (1, n, k), got {x}")));
                }
                Shape::new(1, x.w, w.out_channels)
            } else {
                let (h, wd) = window(x)?;
                Shape::new(h, wd, w.out_channels)
            }
        }
        OpKind::MaxPool => {
            let (h, w) = window(x)?;
            Shape::new(h, w, x.c)
        }
        OpKind::Add => {
            if let Some(other) = ins.iter().find(|s| **s != x) {
                return Err(err(format!("add operands differ: {x} vs {other}")));
            }
            x
        }
        OpKind::Concat => {
            if let Some(other) = ins.iter().find(|s| s.h != x.h || s.w != x.w) {
                return Err(err(format!("concat operands differ spatially: {x} vs {other}")));
            }
            Shape::new(x.h, x.w, ins.iter().map(|s| s.c).sum())
        }
        OpKind::GlobalPool => Shape::new(1, 1, x.c),
        OpKind::Identity => x,
        OpKind::InputBoundary => {
            let b = layer.boundary.expect("validated");
            if b.full_rows != x.h || b.tile_rows > x.h {
                return Err(err(format!("input boundary tiles of {} rows do not fit {x}", b.tile_rows)));
            }
            Shape::new(b.tile_rows, x.w, x.c)
        }
        OpKind::OutputBoundary => {
            let b = layer.boundary.expect("validated");
            if b.tile_rows != x.h {
                return Err(err(format!("output boundary expects {} rows, input is {x}", b.tile_rows)));
            }
            Shape::new(b.full_rows, x.w, x.c)
        }
    })
}
