//! DNN computation-graph representation.
//!
//! A [`ModelGraph`] is a DAG of [`LayerSpec`] nodes keyed by integer id, with
//! a single external input and output.  The module provides validation
//! ([`validate`]), shape inference ([`infer_shapes`]), deterministic
//! linearization ([`ModelGraph::topo_order`] / [`ModelGraph::to_sequence`]),
//! weight initialization, and the JSON model document used by the CLI and by
//! language bindings.
//!
//! Ids are stable labels, not indices: transforms insert nodes with fresh ids
//! and never renumber existing ones, so a node keeps its identity across
//! rewrites.  Nodes live in a `BTreeMap` and every iteration order in this
//! crate is derived from ids, which is what makes serialized output
//! byte-for-byte reproducible.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

/// Node identifier.  Unique within a graph, never reused by rewrites.
pub type NodeId = u32;

/// The layer vocabulary.  `Input`/`Output` mark the graph boundary, `Slice`
/// is a zero-cost channel view introduced by input branching; the rest are
/// ordinary layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    FullyConnected,
    ReLU,
    BatchNorm,
    MaxPool2D,
    AvgPool2D,
    Add,
    Concat,
    Slice,
    Input,
    Output,
}

impl LayerKind {
    /// Kinds that launch a GPU kernel of their own and therefore appear in
    /// traces and layer sequences.  `ReLU` and `BatchNorm` are fused into the
    /// preceding kernel by the execution model; `Slice` is a view; `Input`
    /// and `Output` are markers.
    pub fn emits_kernel(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2D
                | LayerKind::FullyConnected
                | LayerKind::MaxPool2D
                | LayerKind::AvgPool2D
                | LayerKind::Add
                | LayerKind::Concat
        )
    }

    /// Kinds fused into the preceding kernel (optionally included in
    /// sequences for diagnostics).
    pub fn is_fused(self) -> bool {
        matches!(self, LayerKind::ReLU | LayerKind::BatchNorm)
    }

    /// Name as written in model documents and trace labels.
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2D => "Conv2D",
            LayerKind::FullyConnected => "FullyConnected",
            LayerKind::ReLU => "ReLU",
            LayerKind::BatchNorm => "BatchNorm",
            LayerKind::MaxPool2D => "MaxPool2D",
            LayerKind::AvgPool2D => "AvgPool2D",
            LayerKind::Add => "Add",
            LayerKind::Concat => "Concat",
            LayerKind::Slice => "Slice",
            LayerKind::Input => "Input",
            LayerKind::Output => "Output",
        }
    }

    /// Inverse of [`LayerKind::name`]; `None` for unknown labels.
    pub fn from_name(s: &str) -> Option<LayerKind> {
        Some(match s {
            "Conv2D" => LayerKind::Conv2D,
            "FullyConnected" => LayerKind::FullyConnected,
            "ReLU" => LayerKind::ReLU,
            "BatchNorm" => LayerKind::BatchNorm,
            "MaxPool2D" => LayerKind::MaxPool2D,
            "AvgPool2D" => LayerKind::AvgPool2D,
            "Add" => LayerKind::Add,
            "Concat" => LayerKind::Concat,
            "Slice" => LayerKind::Slice,
            "Input" => LayerKind::Input,
            "Output" => LayerKind::Output,
            _ => return None,
        })
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense weight payload, stored row-major in the order given by `shape`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Weights {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Weights {
        Weights { shape, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// One graph node: a layer kind plus the dimension fields that kind uses.
///
/// Unused fields stay `None` and are omitted from serialized documents.
/// Field meanings by kind:
///
/// | kind             | fields                                                         |
/// |------------------|----------------------------------------------------------------|
/// | `Input`          | `c`, `in_h`, `in_w` — the external tensor shape                |
/// | `Conv2D`         | `k1`×`k2` kernel, `c` in / `j` out channels, `stride`, `groups`|
/// | `FullyConnected` | `c` in / `j` out features                                      |
/// | `BatchNorm`      | `c` channels                                                   |
/// | pools            | `k1`×`k2` window, `stride`                                     |
/// | `Slice`          | `c_start`..`c_start`+`c` channel view of its input             |
/// | `ReLU`/`Add`/`Concat`/`Output` | shape follows from inputs                        |
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub id: NodeId,
    pub kind: LayerKind,
    pub k1: Option<u32>,
    pub k2: Option<u32>,
    pub c: Option<u32>,
    pub j: Option<u32>,
    pub stride: Option<u32>,
    pub in_h: Option<u32>,
    pub in_w: Option<u32>,
    /// Channel groups for `Conv2D` (`None` = 1 = dense).  A depthwise
    /// convolution has `groups == c == j`.
    pub groups: Option<u32>,
    /// First channel of a `Slice` view.
    pub c_start: Option<u32>,
    pub inputs: Vec<NodeId>,
    pub weights: Option<Weights>,
}

impl LayerSpec {
    fn bare(id: NodeId, kind: LayerKind, inputs: Vec<NodeId>) -> LayerSpec {
        LayerSpec {
            id,
            kind,
            k1: None,
            k2: None,
            c: None,
            j: None,
            stride: None,
            in_h: None,
            in_w: None,
            groups: None,
            c_start: None,
            inputs,
            weights: None,
        }
    }

    pub fn input(id: NodeId, c: u32, h: u32, w: u32) -> LayerSpec {
        LayerSpec {
            c: Some(c),
            in_h: Some(h),
            in_w: Some(w),
            ..LayerSpec::bare(id, LayerKind::Input, vec![])
        }
    }

    pub fn output(id: NodeId, src: NodeId) -> LayerSpec {
        LayerSpec::bare(id, LayerKind::Output, vec![src])
    }

    pub fn conv(id: NodeId, src: NodeId, c: u32, j: u32, k: u32, stride: u32) -> LayerSpec {
        LayerSpec {
            k1: Some(k),
            k2: Some(k),
            c: Some(c),
            j: Some(j),
            stride: Some(stride),
            ..LayerSpec::bare(id, LayerKind::Conv2D, vec![src])
        }
    }

    pub fn conv_grouped(
        id: NodeId,
        src: NodeId,
        c: u32,
        j: u32,
        k: u32,
        stride: u32,
        groups: u32,
    ) -> LayerSpec {
        LayerSpec {
            groups: Some(groups),
            ..LayerSpec::conv(id, src, c, j, k, stride)
        }
    }

    pub fn fully_connected(id: NodeId, src: NodeId, c: u32, j: u32) -> LayerSpec {
        LayerSpec {
            c: Some(c),
            j: Some(j),
            ..LayerSpec::bare(id, LayerKind::FullyConnected, vec![src])
        }
    }

    pub fn relu(id: NodeId, src: NodeId) -> LayerSpec {
        LayerSpec::bare(id, LayerKind::ReLU, vec![src])
    }

    pub fn batch_norm(id: NodeId, src: NodeId, c: u32) -> LayerSpec {
        LayerSpec {
            c: Some(c),
            ..LayerSpec::bare(id, LayerKind::BatchNorm, vec![src])
        }
    }

    pub fn max_pool(id: NodeId, src: NodeId, k: u32, stride: u32) -> LayerSpec {
        LayerSpec {
            k1: Some(k),
            k2: Some(k),
            stride: Some(stride),
            ..LayerSpec::bare(id, LayerKind::MaxPool2D, vec![src])
        }
    }

    pub fn avg_pool(id: NodeId, src: NodeId, k: u32, stride: u32) -> LayerSpec {
        LayerSpec {
            k1: Some(k),
            k2: Some(k),
            stride: Some(stride),
            ..LayerSpec::bare(id, LayerKind::AvgPool2D, vec![src])
        }
    }

    pub fn add(id: NodeId, srcs: Vec<NodeId>) -> LayerSpec {
        LayerSpec::bare(id, LayerKind::Add, srcs)
    }

    pub fn concat(id: NodeId, srcs: Vec<NodeId>) -> LayerSpec {
        LayerSpec::bare(id, LayerKind::Concat, srcs)
    }

    pub fn slice(id: NodeId, src: NodeId, c_start: u32, c: u32) -> LayerSpec {
        LayerSpec {
            c: Some(c),
            c_start: Some(c_start),
            ..LayerSpec::bare(id, LayerKind::Slice, vec![src])
        }
    }

    /// Convolution groups, defaulting to dense.
    pub fn conv_groups(&self) -> u32 {
        self.groups.unwrap_or(1)
    }

    /// Weight tensor shape this node's declared dimensions call for, if the
    /// kind carries weights.  BatchNorm packs `[scale, shift, mean, var]`
    /// rows, hence `[4, c]`.
    pub fn expected_weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Conv2D => {
                let (k1, k2, c, j) = (self.k1?, self.k2?, self.c?, self.j?);
                let g = self.conv_groups();
                Some(vec![k1 as usize, k2 as usize, (c / g) as usize, j as usize])
            }
            LayerKind::FullyConnected => Some(vec![self.c? as usize, self.j? as usize]),
            LayerKind::BatchNorm => Some(vec![4, self.c? as usize]),
            _ => None,
        }
    }
}

/// Channel/height/width of a tensor flowing along an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: u32,
    pub h: u32,
    pub w: u32,
}

impl Shape {
    pub fn elems(&self) -> u64 {
        u64::from(self.c) * u64::from(self.h) * u64::from(self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Inferred output shape per node.
pub type ShapeMap = BTreeMap<NodeId, Shape>;

/// Layer-kind string of a model, in deterministic topological order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSequence(pub Vec<LayerKind>);

impl LayerSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for LayerSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(k.name())?;
        }
        Ok(())
    }
}

/// Options for [`ModelGraph::to_sequence`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SequenceOptions {
    /// Also include fused `ReLU`/`BatchNorm` nodes (diagnostics only; traces
    /// and attack labels never see them).
    pub include_fused: bool,
}

/// A whole model: named DAG with one input and one output node.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    pub input_id: NodeId,
    pub output_id: NodeId,
    nodes: BTreeMap<NodeId, LayerSpec>,
}

impl ModelGraph {
    /// Assemble a graph from parts.  No validation happens here; call
    /// [`validate`] (or any operation that requires validity) afterwards.
    pub fn new(
        name: impl Into<String>,
        input_id: NodeId,
        output_id: NodeId,
        nodes: Vec<LayerSpec>,
    ) -> ModelGraph {
        ModelGraph {
            name: name.into(),
            input_id,
            output_id,
            nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&LayerSpec> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut LayerSpec> {
        self.nodes.get_mut(&id)
    }

    /// Nodes in ascending id order.
    pub fn nodes(&self) -> impl Iterator<Item = &LayerSpec> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest id strictly greater than every existing id.
    pub fn next_id(&self) -> NodeId {
        self.nodes.keys().next_back().map_or(0, |id| id + 1)
    }

    /// Insert a node, replacing any previous node with the same id.
    pub fn insert(&mut self, node: LayerSpec) {
        self.nodes.insert(node.id, node);
    }

    pub fn remove(&mut self, id: NodeId) -> Option<LayerSpec> {
        self.nodes.remove(&id)
    }

    /// Consumers of each node (edge targets), in ascending consumer order.
    pub fn consumers(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut map: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in self.nodes.values() {
            for &src in &node.inputs {
                map.entry(src).or_default().push(node.id);
            }
        }
        map
    }

    /// Number of kernel-emitting nodes.
    pub fn kernel_count(&self) -> usize {
        self.nodes.values().filter(|n| n.kind.emits_kernel()).count()
    }

    /// Total number of nodes, kernel-emitting or not.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Deterministic topological order: Kahn's algorithm with a min-heap, so
    /// among ready nodes the smallest id always comes first.  Edges to
    /// missing nodes are ignored (validation reports them); an actual cycle
    /// is an error.
    pub fn topo_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
        for node in self.nodes.values() {
            indegree.entry(node.id).or_insert(0);
            for &src in &node.inputs {
                if self.nodes.contains_key(&src) {
                    *indegree.entry(node.id).or_insert(0) += 1;
                }
            }
        }
        let consumers = self.consumers();
        let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
            .iter()
            .filter(|(_, &deg)| deg == 0)
            .map(|(&id, _)| Reverse(id))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for &next in consumers.get(&id).into_iter().flatten() {
                let deg = indegree.get_mut(&next).expect("consumer is a node");
                *deg -= 1;
                if *deg == 0 {
                    ready.push(Reverse(next));
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::InvalidGraph(ValidationReport {
                violations: vec![Violation::Cycle],
            }));
        }
        Ok(order)
    }

    /// Layer-kind sequence in deterministic topological order, restricted to
    /// kernel-emitting kinds (plus fused kinds if requested).
    pub fn to_sequence(&self, opts: SequenceOptions) -> Result<LayerSequence> {
        let order = self.topo_order()?;
        let kinds = order
            .into_iter()
            .map(|id| self.nodes[&id].kind)
            .filter(|k| k.emits_kernel() || (opts.include_fused && k.is_fused()))
            .collect();
        Ok(LayerSequence(kinds))
    }

    /// Copy of this graph with every weight payload dropped.  Shape-driven
    /// consumers (tracing, search) work on the skeleton; the full graph only
    /// matters when tensors are actually pushed through.
    pub fn without_weights(&self) -> ModelGraph {
        let mut g = self.clone();
        for node in g.nodes.values_mut() {
            node.weights = None;
        }
        g
    }

    /// Stable hash of the weightless structure: ids, kinds, dimension
    /// fields, and wiring.  Genomes record it so a genome bred for one model
    /// cannot silently be applied to another.
    pub fn structural_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.input_id.to_le_bytes());
        bytes.extend_from_slice(&self.output_id.to_le_bytes());
        for node in self.nodes.values() {
            bytes.extend_from_slice(&node.id.to_le_bytes());
            bytes.push(node.kind as u8);
            for field in [
                node.k1, node.k2, node.c, node.j, node.stride, node.in_h, node.in_w, node.groups,
                node.c_start,
            ] {
                match field {
                    // 1+value keeps None distinct from Some(0).
                    Some(v) => bytes.extend_from_slice(&(1 + u64::from(v)).to_le_bytes()),
                    None => bytes.extend_from_slice(&0u64.to_le_bytes()),
                }
            }
            bytes.extend_from_slice(&(node.inputs.len() as u32).to_le_bytes());
            for &src in &node.inputs {
                bytes.extend_from_slice(&src.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }

    /// Fill in random weights for every weight-bearing node that has none.
    /// Existing payloads are left untouched, so loading a document with
    /// partial weights completes it without disturbing the stored tensors.
    ///
    /// Convention: Conv2D/FullyConnected weights and the BatchNorm shift and
    /// running mean draw from N(0, 0.1); the BatchNorm scale draws from
    /// N(1, 0.1) and the running variance from |1 + N(0, 0.1)| so the
    /// normalizer stays well-defined.
    pub fn init_missing_weights<R: Rng>(&mut self, rng: &mut R) {
        let normal = Normal::new(0.0f64, 0.1).expect("valid stddev");
        for node in self.nodes.values_mut() {
            if node.weights.is_some() {
                continue;
            }
            let Some(shape) = node.expected_weight_shape() else {
                continue;
            };
            let count: usize = shape.iter().product();
            let data = match node.kind {
                LayerKind::BatchNorm => {
                    let c = count / 4;
                    let mut data = Vec::with_capacity(count);
                    // scale row
                    data.extend((0..c).map(|_| (1.0 + normal.sample(rng)) as f32));
                    // shift and mean rows
                    data.extend((0..2 * c).map(|_| normal.sample(rng) as f32));
                    // variance row, kept positive
                    data.extend((0..c).map(|_| (1.0 + normal.sample(rng)).abs() as f32));
                    data
                }
                _ => (0..count).map(|_| normal.sample(rng) as f32).collect(),
            };
            node.weights = Some(Weights::new(shape, data));
        }
    }

    /// Serialize to the pretty-printed JSON model document.
    pub fn to_json(&self) -> String {
        let doc = GraphDoc {
            name: self.name.clone(),
            input_id: self.input_id,
            output_id: self.output_id,
            nodes: self.nodes.values().map(NodeDoc::from_spec).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serialization cannot fail")
    }

    /// Parse a JSON model document.  JSON-level problems surface with line
    /// and column; node-level problems (missing or unknown `kind`, duplicate
    /// ids) name the offending node.  Semantic problems beyond that are the
    /// business of [`validate`].
    pub fn from_json(text: &str) -> Result<ModelGraph> {
        let doc: GraphDoc =
            serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        let mut nodes = BTreeMap::new();
        for raw in doc.nodes {
            let kind_name = raw
                .kind
                .as_deref()
                .ok_or_else(|| Error::Document(format!("node {}: missing \"kind\"", raw.id)))?;
            let kind = LayerKind::from_name(kind_name).ok_or_else(|| {
                Error::Document(format!("node {}: unknown kind \"{kind_name}\"", raw.id))
            })?;
            let spec = raw.into_spec(kind);
            if nodes.insert(spec.id, spec).is_some() {
                return Err(Error::Document(format!(
                    "duplicate node id {}",
                    nodes.keys().next_back().unwrap()
                )));
            }
        }
        Ok(ModelGraph {
            name: doc.name,
            input_id: doc.input_id,
            output_id: doc.output_id,
            nodes,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    name: String,
    input_id: NodeId,
    output_id: NodeId,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: NodeId,
    // Kept optional so a missing kind can be reported with the node id
    // instead of a bare serde message.
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k1: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k2: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    j: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_h: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_w: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_start: Option<u32>,
    #[serde(default)]
    inputs: Vec<NodeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Weights>,
}

impl NodeDoc {
    fn from_spec(spec: &LayerSpec) -> NodeDoc {
        NodeDoc {
            id: spec.id,
            kind: Some(spec.kind.name().to_string()),
            k1: spec.k1,
            k2: spec.k2,
            c: spec.c,
            j: spec.j,
            stride: spec.stride,
            in_h: spec.in_h,
            in_w: spec.in_w,
            groups: spec.groups,
            c_start: spec.c_start,
            inputs: spec.inputs.clone(),
            weights: spec.weights.clone(),
        }
    }

    fn into_spec(self, kind: LayerKind) -> LayerSpec {
        LayerSpec {
            id: self.id,
            kind,
            k1: self.k1,
            k2: self.k2,
            c: self.c,
            j: self.j,
            stride: self.stride,
            in_h: self.in_h,
            in_w: self.in_w,
            groups: self.groups,
            c_start: self.c_start,
            inputs: self.inputs,
            weights: self.weights,
        }
    }
}

/// One well-formedness problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `node` lists an input id that does not exist.
    MissingNode { node: NodeId, missing: NodeId },
    /// The graph's `input_id`/`output_id` does not name a node of that kind.
    BadBoundary { which: &'static str, id: NodeId },
    /// More than one `Input` or `Output` node, or zero.
    BoundaryCount { kind: LayerKind, count: usize },
    /// The graph contains a directed cycle.
    Cycle,
    /// `node` is not reachable from the input, or the output is not
    /// reachable from it.
    Disconnected { node: NodeId },
    /// Wrong number of inputs for the kind.
    Arity { node: NodeId, expected: &'static str, got: usize },
    /// A dimension field the kind requires is absent.
    MissingField { node: NodeId, field: &'static str },
    /// A field value is out of range (zero stride, zero channels, …).
    BadValue { node: NodeId, msg: String },
    /// Input shapes disagree with the node's declared dimensions.
    ShapeMismatch { node: NodeId, msg: String },
    /// Declared weight shape disagrees with the node's dimension fields.
    WeightShape { node: NodeId, expected: Vec<usize>, got: Vec<usize> },
    /// Weight payload length disagrees with its declared shape.
    WeightLen { node: NodeId, expected: usize, got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingNode { node, missing } => {
                write!(f, "node {node}: input {missing} does not exist")
            }
            Violation::BadBoundary { which, id } => {
                write!(f, "{which} id {id} does not name a matching node")
            }
            Violation::BoundaryCount { kind, count } => {
                write!(f, "expected exactly one {kind} node, found {count}")
            }
            Violation::Cycle => write!(f, "graph contains a cycle"),
            Violation::Disconnected { node } => {
                write!(f, "node {node} is not on a path from input to output")
            }
            Violation::Arity { node, expected, got } => {
                write!(f, "node {node}: expected {expected} inputs, got {got}")
            }
            Violation::MissingField { node, field } => {
                write!(f, "node {node}: missing required field \"{field}\"")
            }
            Violation::BadValue { node, msg } => write!(f, "node {node}: {msg}"),
            Violation::ShapeMismatch { node, msg } => write!(f, "node {node}: {msg}"),
            Violation::WeightShape { node, expected, got } => {
                write!(f, "node {node}: weight shape {got:?}, expected {expected:?}")
            }
            Violation::WeightLen { node, expected, got } => {
                write!(f, "node {node}: {got} weight values, expected {expected}")
            }
        }
    }
}

/// Outcome of [`validate`]: empty means well-formed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Promote to an error if any violation was recorded.
    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// Expected input arity per kind as (min, max, label).
fn arity(kind: LayerKind) -> (usize, usize, &'static str) {
    match kind {
        LayerKind::Input => (0, 0, "0"),
        LayerKind::Add | LayerKind::Concat => (2, usize::MAX, "2 or more"),
        _ => (1, 1, "1"),
    }
}

/// Dimension fields each kind requires.
fn required_fields(node: &LayerSpec) -> Vec<(&'static str, Option<u32>)> {
    match node.kind {
        LayerKind::Input => vec![("c", node.c), ("in_h", node.in_h), ("in_w", node.in_w)],
        LayerKind::Conv2D => vec![
            ("k1", node.k1),
            ("k2", node.k2),
            ("c", node.c),
            ("j", node.j),
            ("stride", node.stride),
        ],
        LayerKind::FullyConnected => vec![("c", node.c), ("j", node.j)],
        LayerKind::BatchNorm => vec![("c", node.c)],
        LayerKind::MaxPool2D | LayerKind::AvgPool2D => {
            vec![("k1", node.k1), ("k2", node.k2), ("stride", node.stride)]
        }
        LayerKind::Slice => vec![("c", node.c), ("c_start", node.c_start)],
        LayerKind::ReLU | LayerKind::Add | LayerKind::Concat | LayerKind::Output => vec![],
    }
}

/// Check graph well-formedness.  All problems are collected into one report
/// rather than failing fast; an empty report means the graph is valid and
/// every shape-dependent operation in this crate will succeed on it.
///
/// Checks, in order: boundary nodes, edge targets, arity, required fields and
/// value ranges, acyclicity, input→output connectivity, shape agreement along
/// every edge, and weight payload consistency.  Shape checking is skipped
/// when structural problems make shapes meaningless.
pub fn validate(graph: &ModelGraph) -> ValidationReport {
    let mut v = Vec::new();

    // Boundary nodes.
    for (kind, declared) in [
        (LayerKind::Input, graph.input_id),
        (LayerKind::Output, graph.output_id),
    ] {
        let count = graph.nodes().filter(|n| n.kind == kind).count();
        if count != 1 {
            v.push(Violation::BoundaryCount { kind, count });
        }
        let which = if kind == LayerKind::Input { "input_id" } else { "output_id" };
        if graph.node(declared).map(|n| n.kind) != Some(kind) {
            v.push(Violation::BadBoundary { which, id: declared });
        }
    }

    // Edges, arity, fields, values.
    for node in graph.nodes() {
        for &src in &node.inputs {
            if graph.node(src).is_none() {
                v.push(Violation::MissingNode { node: node.id, missing: src });
            }
        }
        let (min, max, label) = arity(node.kind);
        if node.inputs.len() < min || node.inputs.len() > max {
            v.push(Violation::Arity { node: node.id, expected: label, got: node.inputs.len() });
        }
        for (field, value) in required_fields(node) {
            match value {
                None => v.push(Violation::MissingField { node: node.id, field }),
                // c_start = 0 is legal; every other required field is a size
                // and must be positive.
                Some(0) if field != "c_start" => v.push(Violation::BadValue {
                    node: node.id,
                    msg: format!("field \"{field}\" must be positive"),
                }),
                Some(_) => {}
            }
        }
        if node.kind == LayerKind::Conv2D {
            let g = node.conv_groups();
            if g == 0 {
                v.push(Violation::BadValue { node: node.id, msg: "groups must be positive".into() });
            } else if let (Some(c), Some(j)) = (node.c, node.j) {
                if c % g != 0 || j % g != 0 {
                    v.push(Violation::BadValue {
                        node: node.id,
                        msg: format!("groups {g} must divide channels {c} and {j}"),
                    });
                }
            }
        }
    }

    let structurally_sound = v.is_empty();

    // Cycle / connectivity.
    let order = match graph.topo_order() {
        Ok(order) => Some(order),
        Err(_) => {
            v.push(Violation::Cycle);
            None
        }
    };
    if let Some(order) = &order {
        if structurally_sound {
            let consumers = graph.consumers();
            let mut from_input: BTreeSet<NodeId> = BTreeSet::new();
            from_input.insert(graph.input_id);
            for &id in order {
                if from_input.contains(&id) {
                    for &next in consumers.get(&id).into_iter().flatten() {
                        from_input.insert(next);
                    }
                }
            }
            let mut to_output: BTreeSet<NodeId> = BTreeSet::new();
            to_output.insert(graph.output_id);
            for &id in order.iter().rev() {
                if to_output.contains(&id) {
                    for &src in &graph.nodes[&id].inputs {
                        to_output.insert(src);
                    }
                }
            }
            for &id in order {
                if !from_input.contains(&id) || !to_output.contains(&id) {
                    v.push(Violation::Disconnected { node: id });
                }
            }
        }
    }

    // Shapes and weights, only once the structure makes them meaningful.
    if structurally_sound {
        if let Some(order) = &order {
            let mut shapes: BTreeMap<NodeId, Shape> = BTreeMap::new();
            for &id in order {
                let node = &graph.nodes[&id];
                match node_output_shape(node, &shapes) {
                    Ok(Some(shape)) => {
                        shapes.insert(id, shape);
                    }
                    Ok(None) => {} // an input shape was unknown; skip silently
                    Err(msg) => v.push(Violation::ShapeMismatch { node: id, msg }),
                }
            }
        }
        for node in graph.nodes() {
            let Some(weights) = &node.weights else { continue };
            match node.expected_weight_shape() {
                Some(expected) => {
                    if weights.shape != expected {
                        v.push(Violation::WeightShape {
                            node: node.id,
                            expected,
                            got: weights.shape.clone(),
                        });
                    } else {
                        let count: usize = expected.iter().product();
                        if weights.data.len() != count {
                            v.push(Violation::WeightLen {
                                node: node.id,
                                expected: count,
                                got: weights.data.len(),
                            });
                        }
                    }
                }
                None => v.push(Violation::BadValue {
                    node: node.id,
                    msg: format!("{} nodes do not carry weights", node.kind),
                }),
            }
        }
    }

    ValidationReport { violations: v }
}

/// Output shape of one node given the shapes of its inputs.
///
/// `Ok(None)` means an input shape is not known (an upstream violation was
/// already reported); `Err` is a shape rule violation at this node.
fn node_output_shape(
    node: &LayerSpec,
    shapes: &BTreeMap<NodeId, Shape>,
) -> std::result::Result<Option<Shape>, String> {
    let input_shapes: Option<Vec<Shape>> =
        node.inputs.iter().map(|src| shapes.get(src).copied()).collect();
    let Some(ins) = input_shapes else { return Ok(None) };

    let shape = match node.kind {
        LayerKind::Input => Shape {
            c: node.c.unwrap(),
            h: node.in_h.unwrap(),
            w: node.in_w.unwrap(),
        },
        LayerKind::Conv2D => {
            let s = ins[0];
            let (c, j, stride) = (node.c.unwrap(), node.j.unwrap(), node.stride.unwrap());
            if s.c != c {
                return Err(format!("declares {c} input channels but receives {}", s.c));
            }
            // Same padding: output spans ceil(in / stride).
            Shape { c: j, h: s.h.div_ceil(stride), w: s.w.div_ceil(stride) }
        }
        LayerKind::FullyConnected => {
            let s = ins[0];
            let c = node.c.unwrap();
            if s.elems() != u64::from(c) {
                return Err(format!(
                    "declares {c} input features but receives {} ({} values)",
                    s,
                    s.elems()
                ));
            }
            Shape { c: node.j.unwrap(), h: 1, w: 1 }
        }
        LayerKind::ReLU | LayerKind::Output => ins[0],
        LayerKind::BatchNorm => {
            let s = ins[0];
            let c = node.c.unwrap();
            if s.c != c {
                return Err(format!("declares {c} channels but receives {}", s.c));
            }
            s
        }
        LayerKind::MaxPool2D | LayerKind::AvgPool2D => {
            let s = ins[0];
            let stride = node.stride.unwrap();
            // Valid pooling: only full windows count, so floor division.
            let (h, w) = (s.h / stride, s.w / stride);
            if h == 0 || w == 0 {
                return Err(format!("pool stride {stride} collapses {s} to zero extent"));
            }
            Shape { c: s.c, h, w }
        }
        LayerKind::Add => {
            let first = ins[0];
            if let Some(bad) = ins.iter().find(|s| **s != first) {
                return Err(format!("summand shapes differ: {first} vs {bad}"));
            }
            first
        }
        LayerKind::Concat => {
            let first = ins[0];
            if let Some(bad) = ins.iter().find(|s| s.h != first.h || s.w != first.w) {
                return Err(format!("operand extents differ: {first} vs {bad}"));
            }
            Shape { c: ins.iter().map(|s| s.c).sum(), h: first.h, w: first.w }
        }
        LayerKind::Slice => {
            let s = ins[0];
            let (c, c_start) = (node.c.unwrap(), node.c_start.unwrap());
            if c_start + c > s.c {
                return Err(format!(
                    "slice {c_start}..{} exceeds {} input channels",
                    c_start + c,
                    s.c
                ));
            }
            Shape { c, h: s.h, w: s.w }
        }
    };
    Ok(Some(shape))
}

/// Infer the output shape of every node.  Requires a valid graph; the shape
/// of each edge is then fully determined, and calling this repeatedly always
/// yields the same map.
pub fn infer_shapes(graph: &ModelGraph) -> Result<ShapeMap> {
    validate(graph).into_result()?;
    let mut shapes = ShapeMap::new();
    for id in graph.topo_order()? {
        let shape = node_output_shape(&graph.nodes[&id], &shapes)
            .expect("validated graph has no shape violations")
            .expect("topological order resolves all inputs");
        shapes.insert(id, shape);
    }
    Ok(shapes)
}
