use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde_path_to_error::Segment;

use super::{infer_shapes, IrError, NetGraph, OpKind, WeightSource, SCHEMA_VERSION};

/// Reads, validates, orders and shape-checks a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<NetGraph, IrError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| IrError::Io { path: path.display().to_string(), source })?;
    model_from_str(&text, path.parent())
}

pub fn model_from_str(text: &str, base_dir: Option<&Path>) -> Result<NetGraph, IrError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut graph: NetGraph = serde_path_to_error::deserialize(de)
        .map_err(|e| IrError::Schema { pointer: json_pointer(e.path()), message: e.inner().to_string() })?;
    if graph.version != SCHEMA_VERSION {
        return Err(IrError::Version { found: graph.version });
    }
    graph.base_dir = base_dir.map(Path::to_path_buf);
    let graph = finalize(graph)?;
    check_sidecars(&graph)?;
    Ok(graph)
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

/// Canonical text: pretty JSON in field declaration order, newline terminated.
pub fn to_canonical_json(graph: &NetGraph) -> String {
    let mut s = serde_json::to_string_pretty(graph).expect("graph serializes");
    s.push('\n');
    s
}

pub fn save_model(graph: &NetGraph, path: impl AsRef<Path>) -> Result<(), IrError> {
    let path = path.as_ref();
    std::fs::write(path, to_canonical_json(graph)).map_err(|source| IrError::Io { path: path.display().to_string(), source })
}

/// Validates references, sorts layers topologically and infers shapes.
pub fn finalize(graph: NetGraph) -> Result<NetGraph, IrError> {
    validate(&graph)?;
    let graph = topo_sort(graph)?;
    infer_shapes(&graph)
}

fn validate(g: &NetGraph) -> Result<(), IrError> {
    let mut tensor_ids = HashSet::new();
    for t in &g.tensors {
        if !tensor_ids.insert(t.id.as_str()) {
            return Err(IrError::Invalid(format!("tensor `{}` declared twice", t.id)));
        }
        if let Some(s) = t.shape {
            if s.h == 0 || s.w == 0 || s.c == 0 {
                return Err(IrError::Invalid(format!("tensor `{}` has a zero extent", t.id)));
            }
        }
    }
    if g.inputs.is_empty() || g.outputs.is_empty() {
        return Err(IrError::Invalid("graph must declare inputs and outputs".into()));
    }
    for id in &g.inputs {
        match g.tensor(id) {
            None => return Err(IrError::DanglingTensor { layer: "<inputs>".into(), tensor: id.clone() }),
            Some(t) if t.shape.is_none() => return Err(IrError::Invalid(format!("graph input `{id}` needs a shape"))),
            _ => {}
        }
    }
    let mut layer_ids = HashSet::new();
    let mut producer: HashMap<&str, &str> = HashMap::new();
    for l in &g.layers {
        if !layer_ids.insert(l.id.as_str()) {
            return Err(IrError::Invalid(format!("layer `{}` declared twice", l.id)));
        }
        for t in l.inputs.iter().chain(std::iter::once(&l.output)) {
            if !tensor_ids.contains(t.as_str()) {
                return Err(IrError::DanglingTensor { layer: l.id.clone(), tensor: t.clone() });
            }
        }
        if let Some(prev) = producer.insert(&l.output, &l.id) {
            return Err(IrError::Invalid(format!("tensor `{}` written by `{prev}` and `{}`", l.output, l.id)));
        }
        if g.is_graph_input(&l.output) {
            return Err(IrError::Invalid(format!("layer `{}` writes graph input `{}`", l.id, l.output)));
        }
        let arity_ok = match l.op {
            OpKind::Add => l.inputs.len() >= 2,
            OpKind::Concat => !l.inputs.is_empty(),
            _ => l.inputs.len() == 1,
        };
        if !arity_ok {
            return Err(IrError::Invalid(format!("layer `{}` ({}) has {} inputs", l.id, l.op, l.inputs.len())));
        }
        if l.op.has_weights() != l.weights.is_some() {
            return Err(IrError::Invalid(format!(
                "layer `{}` ({}) {} weights",
                l.id,
                l.op,
                if l.op.has_weights() { "needs" } else { "cannot have" }
            )));
        }
        if l.stride == 0 || l.kernel.0 == 0 || l.kernel.1 == 0 {
            return Err(IrError::Invalid(format!("layer `{}` has a zero kernel or stride", l.id)));
        }
        if matches!(l.op, OpKind::InputBoundary | OpKind::OutputBoundary) && l.boundary.is_none() {
            return Err(IrError::Invalid(format!("boundary layer `{}` lacks its tile description", l.id)));
        }
    }
    for l in &g.layers {
        for t in &l.inputs {
            if !g.is_graph_input(t) && !producer.contains_key(t.as_str()) {
                return Err(IrError::Invalid(format!("layer `{}` reads `{t}`, which nothing produces", l.id)));
            }
        }
    }
    for t in &g.outputs {
        if !producer.contains_key(t.as_str()) && !g.is_graph_input(t) {
            return Err(IrError::DanglingTensor { layer: "<outputs>".into(), tensor: t.clone() });
        }
    }
    check_connected(g)
}

fn check_connected(g: &NetGraph) -> Result<(), IrError> {
    // Union-find over tensors; each layer joins its inputs and output.
    let mut idx: HashMap<&str, usize> = HashMap::new();
    for (i, t) in g.tensors.iter().enumerate() {
        idx.insert(&t.id, i);
    }
    let mut parent: Vec<usize> = (0..g.tensors.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut used = HashSet::new();
    for l in &g.layers {
        let o = idx[l.output.as_str()];
        used.insert(o);
        for t in &l.inputs {
            let i = idx[t.as_str()];
            used.insert(i);
            let (a, b) = (find(&mut parent, i), find(&mut parent, o));
            parent[a] = b;
        }
    }
    for t in g.inputs.iter().chain(&g.outputs) {
        used.insert(idx[t.as_str()]);
    }
    let roots: BTreeSet<usize> = used.iter().map(|&u| find(&mut parent, u)).collect();
    if roots.len() > 1 {
        return Err(IrError::Invalid(format!("graph has {} disconnected components", roots.len())));
    }
    Ok(())
}

/// Kahn's algorithm, always releasing the earliest layer in file order.
fn topo_sort(mut g: NetGraph) -> Result<NetGraph, IrError> {
    let n = g.layers.len();
    let producer: HashMap<&str, usize> = g.layers.iter().enumerate().map(|(i, l)| (l.output.as_str(), i)).collect();
    let mut indeg = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, l) in g.layers.iter().enumerate() {
        let mut seen = HashSet::new();
        for t in &l.inputs {
            if let Some(&p) = producer.get(t.as_str()) {
                if seen.insert(p) {
                    indeg[i] += 1;
                    succ[p].push(i);
                }
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if order.len() < n {
        let (from, to) = find_back_edge(&succ, &indeg);
        return Err(IrError::Cycle { from: g.layers[from].id.clone(), to: g.layers[to].id.clone() });
    }
    let mut slots: Vec<Option<_>> = g.layers.drain(..).map(Some).collect();
    g.layers = order.iter().map(|&i| slots[i].take().expect("each layer once")).collect();
    Ok(g)
}

/// DFS over the layers Kahn could not release; returns the edge closing a cycle.
fn find_back_edge(succ: &[Vec<usize>], indeg: &[usize]) -> (usize, usize) {
    let stuck: Vec<usize> = (0..succ.len()).filter(|&i| indeg[i] > 0).collect();
    let mut state = vec![0u8; succ.len()];
    fn dfs(u: usize, succ: &[Vec<usize>], state: &mut [u8]) -> Option<(usize, usize)> {
        state[u] = 1;
        for &v in &succ[u] {
            if state[v] == 1 {
                return Some((u, v));
            }
            if state[v] == 0 {
                if let Some(e) = dfs(v, succ, state) {
                    return Some(e);
                }
            }
        }
        state[u] = 2;
        None
    }
    for &s in &stuck {
        if state[s] == 0 {
            if let Some(e) = dfs(s, succ, &mut state) {
                return e;
            }
        }
    }
    unreachable!("Kahn left layers behind without a cycle")
}

fn check_sidecars(g: &NetGraph) -> Result<(), IrError> {
    for l in &g.layers {
        if let Some(WeightSource::Sidecar { path, sha256 }) = l.weights.as_ref().map(|w| &w.source) {
            let full = g.base_dir.as_deref().unwrap_or(Path::new(".")).join(path);
            let bytes = std::fs::read(&full).map_err(|source| IrError::Io { path: full.display().to_string(), source })?;
            let got = super::weights::sha256_hex(&bytes);
            if !got.eq_ignore_ascii_case(sha256) {
                return Err(IrError::Weights {
                    layer: l.id.clone(),
                    message: format!("sidecar {path} has sha256 {got}, model expects {sha256}"),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_CONV: &str = r#"{
  "version": 1,
  "name": "one",
  "inputs": ["x"],
  "outputs": ["y"],
  "tensors": [
    {"id": "x", "shape": [8, 8, 16]},
    {"id": "y"}
  ],
  "layers": [
    {"id": "c0", "op": "conv", "inputs": ["x"], "output": "y", "kernel": [3, 3], "pad": 1,
     "weights": {"out_channels": 8, "in_channels": 16, "source": {"seeded": {"seed": 3}}}}
  ]
}"#;

    #[test]
    fn one_conv_model() {
        let g = model_from_str(ONE_CONV, None).unwrap();
        assert_eq!(g.layers.len(), 1);
        assert_eq!(g.shape("y").dims(), [8, 8, 8]);
    }

    #[test]
    fn dangling_reference() {
        let text = ONE_CONV.replace(r#""inputs": ["x"], "output""#, r#""inputs": ["z"], "output""#);
        match model_from_str(&text, None) {
            Err(IrError::DanglingTensor { tensor, .. }) => assert_eq!(tensor, "z"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_error_has_pointer() {
        let text = ONE_CONV.replace(r#""pad": 1"#, r#""pad": -1"#);
        match model_from_str(&text, None) {
            Err(IrError::Schema { pointer, .. }) => assert_eq!(pointer, "/layers/0/pad"),
            other => panic!("{other:?}"),
        }
        let text = ONE_CONV.replace(r#""op": "conv""#, r#""op": "softmax""#);
        match model_from_str(&text, None) {
            Err(IrError::Schema { pointer, .. }) => assert_eq!(pointer, "/layers/0/op"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_checked() {
        let text = ONE_CONV.replace(r#""version": 1"#, r#""version": 9"#);
        assert!(matches!(model_from_str(&text, None), Err(IrError::Version { found: 9 })));
    }

    #[test]
    fn cycle_reports_back_edge() {
        let text = r#"{"version":1,"name":"cyc","inputs":["x"],"outputs":["b"],
          "tensors":[{"id":"x","shape":[4,4,8]},{"id":"a"},{"id":"b"}],
          "layers":[
            {"id":"l1","op":"add","inputs":["x","b"],"output":"a"},
            {"id":"l2","op":"identity","inputs":["a"],"output":"b"}]}"#;
        match model_from_str(text, None) {
            Err(IrError::Cycle { from, to }) => assert_eq!((from.as_str(), to.as_str()), ("l2", "l1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn order_is_topological_and_stable() {
        let text = r#"{"version":1,"name":"ord","inputs":["x"],"outputs":["c"],
          "tensors":[{"id":"x","shape":[4,4,8]},{"id":"a"},{"id":"b"},{"id":"c"}],
          "layers":[
            {"id":"join","op":"add","inputs":["a","b"],"output":"c"},
            {"id":"p","op":"identity","inputs":["x"],"output":"a"},
            {"id":"q","op":"identity","inputs":["x"],"output":"b"}]}"#;
        let g = model_from_str(text, None).unwrap();
        let ids: Vec<_> = g.layers.iter().map(|l| l.id.as_str()).collect();
        assert_eq!(ids, ["p", "q", "join"]);
    }

    #[test]
    fn disconnected_rejected() {
        let text = r#"{"version":1,"name":"two","inputs":["x","u"],"outputs":["a","b"],
          "tensors":[{"id":"x","shape":[4,4,8]},{"id":"u","shape":[4,4,8]},{"id":"a"},{"id":"b"}],
          "layers":[
            {"id":"p","op":"identity","inputs":["x"],"output":"a"},
            {"id":"q","op":"identity","inputs":["u"],"output":"b"}]}"#;
        assert!(matches!(model_from_str(text, None), Err(IrError::Invalid(_))));
    }
}
