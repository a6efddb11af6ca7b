//! Graph IR: layers that read tensors and write one tensor each.
//!
//! Activations are `i8` in `(height, width, channels)` layout with a
//! power-of-two scale given by the position of the binary point. Weights are
//! `i8` in `C_out × h × k × C_in` layout; biases are `i32`.

mod exec;
pub mod fixtures;
mod io;
mod shapes;
mod weights;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bscore::{BlockMask, BsError, Pad};

pub use exec::{execute, requantize, run_layer, Activations, LayerParams};
pub use io::{finalize, load_model, model_from_str, save_model, to_canonical_json};
pub use shapes::infer_shapes;
pub use weights::{materialize_bias, materialize_weights, seeded_weights, sha256_hex};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IrError {
    #[error("schema error at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error("unsupported schema version {found} (this build reads {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("layer `{layer}` references unknown tensor `{tensor}`")]
    DanglingTensor { layer: String, tensor: String },
    #[error("graph has a cycle through `{from}` -> `{to}`")]
    Cycle { from: String, to: String },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("shape error in layer `{layer}`: {message}")]
    Shape { layer: String, message: String },
    #[error("weights of layer `{layer}`: {message}")]
    Weights { layer: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Block(#[from] BsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    I8,
    I32,
}

impl DType {
    pub fn bytes(self) -> usize {
        match self {
            DType::I8 => 1,
            DType::I32 => 4,
        }
    }
}

/// `(height, width, channels)`; a matrix of `n × c` is `(1, n, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn elems(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.h, self.w, self.c]
    }
}

impl From<[usize; 3]> for Shape {
    fn from([h, w, c]: [usize; 3]) -> Self {
        Self { h, w, c }
    }
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        s.dims()
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
    #[serde(default)]
    pub dtype: DType,
    /// Position where the fraction starts: value = code · 2^-scale_position.
    #[serde(default)]
    pub scale_position: i32,
}

impl TensorInfo {
    pub fn new(id: impl Into<String>, shape: Option<Shape>) -> Self {
        Self { id: id.into(), shape, dtype: DType::I8, scale_position: 0 }
    }

    /// Size in bytes; zero until the shape is known.
    pub fn bytes(&self) -> usize {
        self.shape.map_or(0, |s| s.elems() * self.dtype.bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv,
    /// Matrix multiply; normalized to a 1×1 conv before planning.
    Gemm,
    MaxPool,
    /// Element-wise saturating add.
    Add,
    /// Channel concatenation.
    Concat,
    /// Average over the whole spatial extent. Not tileable.
    GlobalPool,
    Identity,
    InputBoundary,
    OutputBoundary,
}

impl OpKind {
    pub fn has_weights(self) -> bool {
        matches!(self, OpKind::Conv | OpKind::Gemm)
    }

    /// Ops with a spatial window described by `kernel`, `stride` and `pad`.
    pub fn is_windowed(self) -> bool {
        matches!(self, OpKind::Conv | OpKind::MaxPool)
    }
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OpKind::Conv => "conv",
            OpKind::Gemm => "gemm",
            OpKind::MaxPool => "max_pool",
            OpKind::Add => "add",
            OpKind::Concat => "concat",
            OpKind::GlobalPool => "global_pool",
            OpKind::Identity => "identity",
            OpKind::InputBoundary => "input_boundary",
            OpKind::OutputBoundary => "output_boundary",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Uniform codes in `[-127, 127]` from a ChaCha8 stream.
    Seeded { seed: u64 },
    /// Block-COO file relative to the model file, checked against its hash.
    Sidecar { path: String, sha256: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasSource {
    #[default]
    Zero,
    Seeded {
        seed: u64,
    },
    Values(Vec<i32>),
}

fn default_weight_position() -> i32 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub source: WeightSource,
    #[serde(default = "default_weight_position")]
    pub scale_position: i32,
    #[serde(default)]
    pub bias: BiasSource,
    /// Γ; absent means dense.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<BlockMask>,
}

/// Which slice of the tiled tensors a boundary layer moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub tiles: usize,
    /// Rows of the largest tile this boundary carries.
    pub tile_rows: usize,
    /// Rows of the full tensor on the outer side.
    pub full_rows: usize,
}

fn one_one() -> (usize, usize) {
    (1, 1)
}

fn is_one_one(k: &(usize, usize)) -> bool {
    *k == (1, 1)
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default = "one_one", skip_serializing_if = "is_one_one")]
    pub kernel: (usize, usize),
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Pad::is_zero", with = "pad_json")]
    pub pad: Pad,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub relu: bool,
    /// Right shift applied to the accumulator before saturation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundarySpec>,
}

impl Layer {
    pub fn new(id: impl Into<String>, op: OpKind, inputs: Vec<String>, output: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            op,
            inputs,
            output: output.into(),
            kernel: (1, 1),
            stride: 1,
            pad: Pad::default(),
            relu: false,
            shift: None,
            weights: None,
            boundary: None,
        }
    }

    /// Accumulator shift: explicit, or `weights.scale_position + ⌈log2 fan_in⌉ / 2`,
    /// which keeps typical outputs of random codes inside `i8`.
    pub fn effective_shift(&self) -> u32 {
        if let Some(s) = self.shift {
            return s;
        }
        match &self.weights {
            Some(w) => {
                let fan_in = (self.kernel.0 * self.kernel.1 * w.in_channels).max(1);
                let bits = usize::BITS - (fan_in - 1).leading_zeros();
                w.scale_position.max(0) as u32 + bits / 2
            }
            None => 0,
        }
    }

    pub fn mask(&self) -> Option<&BlockMask> {
        self.weights.as_ref().and_then(|w| w.mask.as_ref())
    }
}

/// Integer for uniform padding, `[top, bottom, left, right]` otherwise.
mod pad_json {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::bscore::Pad;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum PadJson {
        Uniform(usize),
        Sides([usize; 4]),
    }

    pub fn serialize<S: Serializer>(p: &Pad, s: S) -> Result<S::Ok, S::Error> {
        if p.top == p.bottom && p.top == p.left && p.top == p.right {
            PadJson::Uniform(p.top).serialize(s)
        } else {
            PadJson::Sides([p.top, p.bottom, p.left, p.right]).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pad, D::Error> {
        Ok(
            match PadJson::deserialize(d)
                .map_err(|_| serde::de::Error::custom("pad must be a non-negative integer or [top, bottom, left, right]"))?
            {
                PadJson::Uniform(v) => Pad::uniform(v),
                PadJson::Sides([top, bottom, left, right]) => Pad { top, bottom, left, right },
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetGraph {
    pub version: u32,
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tensors: Vec<TensorInfo>,
    /// Topological order once loaded.
    pub layers: Vec<Layer>,
    /// Directory sidecar paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl NetGraph {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            version: SCHEMA_VERSION,
            name: name.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tensors: Vec::new(),
            layers: Vec::new(),
            base_dir: None,
        }
    }

    pub fn tensor(&self, id: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.id == id)
    }

    pub fn tensor_mut(&mut self, id: &str) -> Option<&mut TensorInfo> {
        self.tensors.iter_mut().find(|t| t.id == id)
    }

    /// Shape of a tensor after inference.
    ///
    /// # Panics
    /// If the tensor is unknown or its shape was never inferred.
    pub fn shape(&self, id: &str) -> Shape {
        self.tensor(id).and_then(|t| t.shape).unwrap_or_else(|| panic!("tensor `{id}` has no shape"))
    }

    pub fn tensor_bytes(&self, id: &str) -> usize {
        self.tensor(id).map_or(0, TensorInfo::bytes)
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn layer_mut(&mut self, id: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.id == id)
    }

    pub fn producer(&self, tensor: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.output == tensor)
    }

    pub fn consumers<'a>(&'a self, tensor: &'a str) -> impl Iterator<Item = &'a Layer> + 'a {
        self.layers.iter().filter(move |l| l.inputs.iter().any(|i| i == tensor))
    }

    pub fn is_graph_input(&self, tensor: &str) -> bool {
        self.inputs.iter().any(|t| t == tensor)
    }

    pub fn is_graph_output(&self, tensor: &str) -> bool {
        self.outputs.iter().any(|t| t == tensor)
    }

    /// Replaces every GEMM by the equivalent 1×1 convolution.
    pub fn normalize_gemms(&self) -> NetGraph {
        let mut g = self.clone();
        for l in &mut g.layers {
            if l.op == OpKind::Gemm {
                *l = gemm_to_conv(l);
            }
        }
        g
    }

    /// First convolution in schedule order; exempt from sparsity by default.
    pub fn first_conv(&self) -> Option<&Layer> {
        self.layers.iter().find(|l| l.op.has_weights())
    }
}

/// A GEMM `Y[n, O] = X[n, I] · Wᵗ + b` is a 1×1 convolution over a
/// `(1, n, I)` input with the same `O × 1 × 1 × I` weights and bias.
pub fn gemm_to_conv(layer: &Layer) -> Layer {
    if layer.op != OpKind::Gemm {
        return layer.clone();
    }
    Layer { op: OpKind::Conv, kernel: (1, 1), stride: 1, pad: Pad::default(), ..layer.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_default() {
        let mut l = Layer::new("c", OpKind::Conv, vec!["x".into()], "y");
        l.kernel = (3, 3);
        l.weights = Some(WeightSpec {
            out_channels: 64,
            in_channels: 64,
            source: WeightSource::Seeded { seed: 1 },
            scale_position: 7,
            bias: BiasSource::Zero,
            mask: None,
        });
        // fan-in 576 -> 10 bits -> 7 + 5.
        assert_eq!(l.effective_shift(), 12);
        l.shift = Some(3);
        assert_eq!(l.effective_shift(), 3);
    }

    #[test]
    fn gemm_normalizes() {
        let mut l = Layer::new("fc", OpKind::Gemm, vec!["x".into()], "y");
        l.bias_for_test();
        let c = gemm_to_conv(&l);
        assert_eq!(c.op, OpKind::Conv);
        assert_eq!(c.kernel, (1, 1));
        assert_eq!(c.weights, l.weights);
    }

    impl Layer {
        fn bias_for_test(&mut self) {
            self.weights = Some(WeightSpec {
                out_channels: 4,
                in_channels: 4,
                source: WeightSource::Seeded { seed: 9 },
                scale_position: 7,
                bias: BiasSource::Values(vec![1, 2, 3, 4]),
                mask: None,
            });
        }
    }
}
