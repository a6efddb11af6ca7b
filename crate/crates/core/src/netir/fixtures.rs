//! Built-in networks with seeded weights. Architectures follow the public
//! layer tables of the named networks; weights are random codes.

use std::collections::HashMap;

use super::io::finalize;
use super::shapes::layer_output_shape;
use super::{BiasSource, IrError, Layer, NetGraph, OpKind, Shape, TensorInfo, WeightSource, WeightSpec};
use crate::bscore::Pad;

/// Incremental graph construction; every tensor is named after the layer
/// that writes it.
pub struct GraphBuilder {
    graph: NetGraph,
    shapes: HashMap<String, Shape>,
    seed: u64,
}

impl GraphBuilder {
    pub fn new(name: &str, seed: u64) -> Self {
        Self { graph: NetGraph::new(name), shapes: HashMap::new(), seed }
    }

    pub fn input(&mut self, id: &str, dims: [usize; 3]) -> String {
        let shape = Shape::from(dims);
        let mut t = TensorInfo::new(id, Some(shape));
        t.scale_position = 4;
        self.graph.tensors.push(t);
        self.graph.inputs.push(id.into());
        self.shapes.insert(id.into(), shape);
        id.into()
    }

    fn push(&mut self, layer: Layer) -> String {
        let ins: Vec<Shape> = layer.inputs.iter().map(|t| self.shapes[t]).collect();
        let shape = layer_output_shape(&layer, &ins).unwrap_or_else(|e| panic!("fixture `{}`: {e}", self.graph.name));
        self.shapes.insert(layer.output.clone(), shape);
        self.graph.tensors.push(TensorInfo::new(layer.output.clone(), None));
        let out = layer.output.clone();
        self.graph.layers.push(layer);
        out
    }

    fn weight_spec(&mut self, out_c: usize, in_c: usize) -> WeightSpec {
        self.seed += 1;
        WeightSpec {
            out_channels: out_c,
            in_channels: in_c,
            source: WeightSource::Seeded { seed: self.seed },
            scale_position: 7,
            bias: BiasSource::Seeded { seed: self.seed ^ 0xB1A5 },
            mask: None,
        }
    }

    pub fn conv(&mut self, id: &str, x: &str, out_c: usize, k: usize, stride: usize, pad: usize) -> String {
        let in_c = self.shapes[x].c;
        let mut l = Layer::new(id, OpKind::Conv, vec![x.into()], id);
        l.kernel = (k, k);
        l.stride = stride;
        l.pad = Pad::uniform(pad);
        l.relu = true;
        l.weights = Some(self.weight_spec(out_c, in_c));
        self.push(l)
    }

    pub fn gemm(&mut self, id: &str, x: &str, out_c: usize) -> String {
        let in_c = self.shapes[x].c;
        let mut l = Layer::new(id, OpKind::Gemm, vec![x.into()], id);
        l.weights = Some(self.weight_spec(out_c, in_c));
        self.push(l)
    }

    pub fn max_pool(&mut self, id: &str, x: &str, k: usize, stride: usize, pad: usize) -> String {
        let mut l = Layer::new(id, OpKind::MaxPool, vec![x.into()], id);
        l.kernel = (k, k);
        l.stride = stride;
        l.pad = Pad::uniform(pad);
        self.push(l)
    }

    pub fn add(&mut self, id: &str, ins: &[&str]) -> String {
        let mut l = Layer::new(id, OpKind::Add, ins.iter().map(|s| s.to_string()).collect(), id);
        l.relu = true;
        self.push(l)
    }

    pub fn concat(&mut self, id: &str, ins: &[&str]) -> String {
        self.push(Layer::new(id, OpKind::Concat, ins.iter().map(|s| s.to_string()).collect(), id))
    }

    pub fn global_pool(&mut self, id: &str, x: &str) -> String {
        self.push(Layer::new(id, OpKind::GlobalPool, vec![x.into()], id))
    }

    pub fn finish(mut self, outputs: &[&str]) -> Result<NetGraph, IrError> {
        self.graph.outputs = outputs.iter().map(|s| s.to_string()).collect();
        finalize(self.graph)
    }
}

/// Three convs and a pool on a 32×32×16 input.
pub fn small_cnn() -> NetGraph {
    let mut b = GraphBuilder::new("small_cnn", 100);
    let x = b.input("x", [32, 32, 16]);
    let c1 = b.conv("conv1", &x, 32, 3, 1, 1);
    let p1 = b.max_pool("pool1", &c1, 2, 2, 0);
    let c2 = b.conv("conv2", &p1, 64, 3, 1, 1);
    let c3 = b.conv("conv3", &c2, 64, 1, 1, 0);
    b.finish(&[&c3]).expect("fixture is valid")
}

/// The 13 convolutions and 5 pools of VGG16 on 224×224×3.
pub fn vgg16() -> NetGraph {
    let mut b = GraphBuilder::new("vgg16", 1600);
    let mut t = b.input("x", [224, 224, 3]);
    let stages: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    for (s, &(ch, n)) in stages.iter().enumerate() {
        for i in 0..n {
            t = b.conv(&format!("conv{}_{}", s + 1, i + 1), &t, ch, 3, 1, 1);
        }
        t = b.max_pool(&format!("pool{}", s + 1), &t, 2, 2, 0);
    }
    b.finish(&[&t]).expect("fixture is valid")
}

/// VGG16 from conv2_2 through conv3_3 (112×112×128 in, 56×56×256 out):
/// the segment used for the depth-wise tiling study.
pub fn vgg16_segment() -> NetGraph {
    let mut b = GraphBuilder::new("vgg16_segment", 1620);
    let x = b.input("conv2_1", [112, 112, 128]);
    let t = b.conv("conv2_2", &x, 128, 3, 1, 1);
    let t = b.max_pool("pool2", &t, 2, 2, 0);
    let t = b.conv("conv3_1", &t, 256, 3, 1, 1);
    let t = b.conv("conv3_2", &t, 256, 3, 1, 1);
    let t = b.conv("conv3_3", &t, 256, 3, 1, 1);
    b.finish(&[&t]).expect("fixture is valid")
}

fn bottleneck(b: &mut GraphBuilder, name: &str, x: &str, mid: usize, out: usize, stride: usize) -> String {
    let in_c = b.shapes[x].c;
    let a = b.conv(&format!("{name}_a"), x, mid, 1, 1, 0);
    let m = b.conv(&format!("{name}_b"), &a, mid, 3, stride, 1);
    let c = b.conv(&format!("{name}_c"), &m, out, 1, 1, 0);
    let short = if in_c != out || stride != 1 { b.conv(&format!("{name}_proj"), x, out, 1, stride, 0) } else { x.to_string() };
    b.add(&format!("{name}_add"), &[&c, &short])
}

/// The ResNet-50 convolutional body: stem and four stages of bottleneck
/// blocks.
pub fn resnet_like() -> NetGraph {
    let mut b = GraphBuilder::new("resnet_like", 5000);
    let x = b.input("x", [224, 224, 3]);
    let t = b.conv("stem", &x, 64, 7, 2, 3);
    let mut t = b.max_pool("stem_pool", &t, 3, 2, 1);
    let stages: [(usize, usize, usize); 4] = [(3, 64, 256), (4, 128, 512), (6, 256, 1024), (3, 512, 2048)];
    for (s, &(n, mid, out)) in stages.iter().enumerate() {
        for i in 0..n {
            let stride = if s > 0 && i == 0 { 2 } else { 1 };
            t = bottleneck(&mut b, &format!("res{}{}", s + 2, (b'a' + i as u8) as char), &t, mid, out, stride);
        }
    }
    b.finish(&[&t]).expect("fixture is valid")
}

/// One residual bottleneck at 28×28×256, small enough to stay in Memtile.
pub fn bottleneck_block() -> NetGraph {
    let mut b = GraphBuilder::new("bottleneck", 5100);
    let x = b.input("x", [28, 28, 256]);
    let t = bottleneck(&mut b, "block", &x, 64, 256, 1);
    b.finish(&[&t]).expect("fixture is valid")
}

fn inception(b: &mut GraphBuilder, name: &str, x: &str, c1: usize, c3: (usize, usize), c5: (usize, usize), cp: usize) -> String {
    let b1 = b.conv(&format!("{name}_1x1"), x, c1, 1, 1, 0);
    let r3 = b.conv(&format!("{name}_3x3r"), x, c3.0, 1, 1, 0);
    let b3 = b.conv(&format!("{name}_3x3"), &r3, c3.1, 3, 1, 1);
    let r5 = b.conv(&format!("{name}_5x5r"), x, c5.0, 1, 1, 0);
    let b5 = b.conv(&format!("{name}_5x5"), &r5, c5.1, 5, 1, 2);
    let p = b.max_pool(&format!("{name}_pool"), x, 3, 1, 1);
    let bp = b.conv(&format!("{name}_poolproj"), &p, cp, 1, 1, 0);
    b.concat(&format!("{name}_concat"), &[&b1, &b3, &b5, &bp])
}

/// The GoogLeNet convolutional body: stem and inception modules 3a to 5b.
pub fn inception_like() -> NetGraph {
    type Module = (&'static str, usize, (usize, usize), (usize, usize), usize);
    let mut b = GraphBuilder::new("inception_like", 7000);
    let x = b.input("x", [224, 224, 3]);
    let t = b.conv("conv1", &x, 64, 7, 2, 3);
    let t = b.max_pool("pool1", &t, 3, 2, 1);
    let t = b.conv("conv2r", &t, 64, 1, 1, 0);
    let t = b.conv("conv2", &t, 192, 3, 1, 1);
    let mut t = b.max_pool("pool2", &t, 3, 2, 1);
    let stages: [&[Module]; 3] = [
        &[("inc3a", 64, (96, 128), (16, 32), 32), ("inc3b", 128, (128, 192), (32, 96), 64)],
        &[
            ("inc4a", 192, (96, 208), (16, 48), 64),
            ("inc4b", 160, (112, 224), (24, 64), 64),
            ("inc4c", 128, (128, 256), (24, 64), 64),
            ("inc4d", 112, (144, 288), (32, 64), 64),
            ("inc4e", 256, (160, 320), (32, 128), 128),
        ],
        &[("inc5a", 256, (160, 320), (32, 128), 128), ("inc5b", 384, (192, 384), (48, 128), 128)],
    ];
    for (s, modules) in stages.iter().enumerate() {
        if s > 0 {
            t = b.max_pool(&format!("pool{}", s + 2), &t, 3, 2, 1);
        }
        for &(name, c1, c3, c5, cp) in modules.iter() {
            t = inception(&mut b, name, &t, c1, c3, c5, cp);
        }
    }
    b.finish(&[&t]).expect("fixture is valid")
}

/// Two GEMMs over 4 rows of 64 features.
pub fn mlp() -> NetGraph {
    let mut b = GraphBuilder::new("mlp", 300);
    let x = b.input("x", [1, 4, 64]);
    let h = b.gemm("fc1", &x, 64);
    let y = b.gemm("fc2", &h, 32);
    b.finish(&[&y]).expect("fixture is valid")
}

/// Name → constructor for every built-in network.
pub fn by_name(name: &str) -> Option<NetGraph> {
    Some(match name {
        "small_cnn" => small_cnn(),
        "vgg16" => vgg16(),
        "vgg16_segment" => vgg16_segment(),
        "resnet_like" => resnet_like(),
        "bottleneck" => bottleneck_block(),
        "inception_like" => inception_like(),
        "mlp" => mlp(),
        _ => return None,
    })
}

pub const NAMES: [&str; 7] = ["small_cnn", "vgg16", "vgg16_segment", "resnet_like", "bottleneck", "inception_like", "mlp"];
