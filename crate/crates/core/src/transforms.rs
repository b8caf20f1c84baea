//! Function-preserving obfuscation rewrites and the genome that encodes them.
//!
//! Four primitive rewrites change a graph's layer sequence without changing
//! the function it computes:
//!
//! * [`branch_output`] — split a layer's output channels at `m` into two
//!   sibling layers whose results are concatenated back in order.
//! * [`branch_input`] — split a convolution's input channels at `m`; two
//!   sibling convolutions consume the slices and their partial sums are
//!   added.
//! * [`skip`] — bolt a 3×3 all-zero convolution onto a layer's output and
//!   add it back in: a residual branch that contributes nothing.
//! * [`deepen`] — insert a `k`×`k` identity-kernel convolution (odd `k`,
//!   exact identity under same padding) after a layer's activation chain.
//!
//! A [`Genome`] assigns each transformable layer of a base graph a subset of
//! these operations; [`apply_genome`] materializes them in a fixed order so
//! the rewrite is reproducible.  Weight handling follows the source: slicing
//! a weightless layer yields weightless siblings (the skeleton workflows
//! used by search never pay for payloads), while zero/identity kernels are
//! written out explicitly whenever the graph carries weights at all.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate, LayerKind, LayerSpec, ModelGraph, NodeId, Weights};

/// Default deepening kernel size.  A 1×1 identity is the cheapest
/// function-preserving insertion — k² times cheaper in the trace than wider
/// kernels — which keeps randomly drawn genomes close to the latency budget;
/// the search can still mutate individual deepenings wider.
pub const DEFAULT_DEEPEN_K: u32 = 1;
/// Kernel size of the zero convolution inserted by [`skip`].
const SKIP_K: u32 = 3;

// ---------------------------------------------------------------------------
// Primitive rewrites
// ---------------------------------------------------------------------------

/// Split `layer_id`'s output channels at `m`: the layer keeps channels
/// `0..m`, a new sibling takes `m..j`, and a `Concat` reassembles them in
/// order, so every consumer sees the exact tensor it saw before.  Applies to
/// dense `Conv2D` and `FullyConnected` layers with `j >= 2`.
pub fn branch_output(graph: &ModelGraph, layer_id: NodeId, m: u32) -> Result<ModelGraph> {
    let mut g = graph.clone();
    branch_output_mut(&mut g, layer_id, m)?;
    Ok(g)
}

/// Split `layer_id`'s input channels at `m`: two slice views feed sibling
/// convolutions holding the matching weight slices, and an `Add` combines
/// the partial sums.  Applies to dense `Conv2D` layers with `c >= 2`.
pub fn branch_input(graph: &ModelGraph, layer_id: NodeId, m: u32) -> Result<ModelGraph> {
    let mut g = graph.clone();
    branch_input_mut(&mut g, layer_id, m)?;
    Ok(g)
}

/// Insert a residual side branch at `layer_id`: a 3×3 zero-weight
/// convolution reads the layer's output and an `Add` folds it back.  The
/// branch computes zero, so the sum is bit-exact.  Applies to any
/// kernel-emitting layer.
pub fn skip(graph: &ModelGraph, layer_id: NodeId) -> Result<ModelGraph> {
    let mut g = graph.clone();
    skip_mut(&mut g, layer_id)?;
    Ok(g)
}

/// Insert a `k`×`k` identity convolution after `layer_id`.  The kernel is 1
/// at the center tap where input and output channel agree and 0 elsewhere,
/// which under same padding reproduces its input exactly.  `k` must be odd
/// (an even kernel has no center); the insertion point must be a `ReLU` or a
/// linear layer.
pub fn deepen(graph: &ModelGraph, layer_id: NodeId, k: u32) -> Result<ModelGraph> {
    let mut g = graph.clone();
    deepen_mut(&mut g, layer_id, k)?;
    Ok(g)
}

/// Redirect every snapshot consumer's edges from `old` to `new`.
fn rewire(g: &mut ModelGraph, consumers: &[NodeId], old: NodeId, new: NodeId) {
    for &id in consumers {
        let node = g.node_mut(id).expect("consumer snapshot is stale");
        for input in &mut node.inputs {
            if *input == old {
                *input = new;
            }
        }
    }
}

fn consumers_of(g: &ModelGraph, id: NodeId) -> Vec<NodeId> {
    g.consumers().remove(&id).unwrap_or_default()
}

fn require_node(g: &ModelGraph, id: NodeId) -> Result<&LayerSpec> {
    g.node(id).ok_or(Error::UnknownNode(id))
}

/// Check the split point for a layer with `total` channels.
fn check_split(node: NodeId, m: u32, total: u32) -> Result<()> {
    if total < 2 || m < 1 || m >= total {
        return Err(Error::SplitOutOfRange { node, m, max: total });
    }
    Ok(())
}

/// Slice a weight payload along `axis`, keeping `range` of that dimension.
fn slice_weights(w: &Weights, axis: usize, range: std::ops::Range<usize>) -> Weights {
    let outer: usize = w.shape[..axis].iter().product();
    let axis_len = w.shape[axis];
    let inner: usize = w.shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * range.len() * inner);
    for o in 0..outer {
        let base = o * axis_len * inner;
        data.extend_from_slice(&w.data[base + range.start * inner..base + range.end * inner]);
    }
    let mut shape = w.shape.clone();
    shape[axis] = range.len();
    Weights::new(shape, data)
}

/// [`branch_output`] in place; returns `(kept, sibling, concat)` ids.
pub(crate) fn branch_output_mut(
    g: &mut ModelGraph,
    layer_id: NodeId,
    m: u32,
) -> Result<(NodeId, NodeId, NodeId)> {
    let node = require_node(g, layer_id)?;
    let kind = node.kind;
    match kind {
        LayerKind::Conv2D if node.conv_groups() == 1 => {}
        LayerKind::FullyConnected => {}
        LayerKind::Conv2D => {
            return Err(Error::InapplicableOp {
                node: layer_id,
                op: "BranchOut",
                kind: "grouped Conv2D",
            })
        }
        _ => {
            return Err(Error::InapplicableOp { node: layer_id, op: "BranchOut", kind: kind.name() })
        }
    }
    let j = node.j.expect("conv/fc layers declare j");
    check_split(layer_id, m, j)?;

    let downstream = consumers_of(g, layer_id);
    let sibling_id = g.next_id();
    let concat_id = sibling_id + 1;

    let node = g.node_mut(layer_id).unwrap();
    let mut sibling = node.clone();
    sibling.id = sibling_id;
    node.j = Some(m);
    sibling.j = Some(j - m);
    if let Some(w) = node.weights.take() {
        // j is the last axis of both [k1, k2, c, j] and [c, j].
        let axis = w.shape.len() - 1;
        node.weights = Some(slice_weights(&w, axis, 0..m as usize));
        sibling.weights = Some(slice_weights(&w, axis, m as usize..j as usize));
    } else {
        sibling.weights = None;
    }
    g.insert(sibling);
    g.insert(LayerSpec::concat(concat_id, vec![layer_id, sibling_id]));
    rewire(g, &downstream, layer_id, concat_id);
    Ok((layer_id, sibling_id, concat_id))
}

/// [`branch_input`] in place; returns `(kept, sibling, add)` ids.
pub(crate) fn branch_input_mut(
    g: &mut ModelGraph,
    layer_id: NodeId,
    m: u32,
) -> Result<(NodeId, NodeId, NodeId)> {
    let node = require_node(g, layer_id)?;
    match node.kind {
        LayerKind::Conv2D if node.conv_groups() == 1 => {}
        LayerKind::Conv2D => {
            return Err(Error::InapplicableOp {
                node: layer_id,
                op: "BranchIn",
                kind: "grouped Conv2D",
            })
        }
        kind => {
            return Err(Error::InapplicableOp { node: layer_id, op: "BranchIn", kind: kind.name() })
        }
    }
    let c = node.c.expect("conv layers declare c");
    check_split(layer_id, m, c)?;

    let src = node.inputs[0];
    let downstream = consumers_of(g, layer_id);
    let lo_slice_id = g.next_id();
    let hi_slice_id = lo_slice_id + 1;
    let sibling_id = lo_slice_id + 2;
    let add_id = lo_slice_id + 3;

    g.insert(LayerSpec::slice(lo_slice_id, src, 0, m));
    g.insert(LayerSpec::slice(hi_slice_id, src, m, c - m));

    let node = g.node_mut(layer_id).unwrap();
    let mut sibling = node.clone();
    sibling.id = sibling_id;
    node.c = Some(m);
    node.inputs = vec![lo_slice_id];
    sibling.c = Some(c - m);
    sibling.inputs = vec![hi_slice_id];
    if let Some(w) = node.weights.take() {
        // c is axis 2 of [k1, k2, c, j].
        node.weights = Some(slice_weights(&w, 2, 0..m as usize));
        sibling.weights = Some(slice_weights(&w, 2, m as usize..c as usize));
    } else {
        sibling.weights = None;
    }
    g.insert(sibling);
    g.insert(LayerSpec::add(add_id, vec![layer_id, sibling_id]));
    rewire(g, &downstream, layer_id, add_id);
    Ok((layer_id, sibling_id, add_id))
}

/// Channel count a node presents to its consumers, resolved locally (enough
/// for kernel-emitting nodes once the graph validates).
fn out_channels(g: &ModelGraph, id: NodeId) -> Result<u32> {
    let node = require_node(g, id)?;
    match node.kind {
        LayerKind::Conv2D | LayerKind::FullyConnected => Ok(node.j.unwrap()),
        LayerKind::Input | LayerKind::Slice | LayerKind::BatchNorm => Ok(node.c.unwrap()),
        LayerKind::MaxPool2D
        | LayerKind::AvgPool2D
        | LayerKind::ReLU
        | LayerKind::Add
        | LayerKind::Output => out_channels(g, node.inputs[0]),
        LayerKind::Concat => node.inputs.iter().map(|&src| out_channels(g, src)).sum(),
    }
}

/// [`skip`] in place; returns `(zero_conv, add)` ids.
pub(crate) fn skip_mut(g: &mut ModelGraph, layer_id: NodeId) -> Result<(NodeId, NodeId)> {
    let node = require_node(g, layer_id)?;
    if !node.kind.emits_kernel() {
        return Err(Error::InapplicableOp { node: layer_id, op: "Skip", kind: node.kind.name() });
    }
    let channels = out_channels(g, layer_id)?;
    let downstream = consumers_of(g, layer_id);
    let conv_id = g.next_id();
    let add_id = conv_id + 1;

    let mut zero = LayerSpec::conv(conv_id, layer_id, channels, channels, SKIP_K, 1);
    if graph_carries_weights(g) {
        let count = (SKIP_K * SKIP_K * channels * channels) as usize;
        zero.weights = Some(Weights::new(
            vec![SKIP_K as usize, SKIP_K as usize, channels as usize, channels as usize],
            vec![0.0; count],
        ));
    }
    g.insert(zero);
    g.insert(LayerSpec::add(add_id, vec![layer_id, conv_id]));
    rewire(g, &downstream, layer_id, add_id);
    Ok((conv_id, add_id))
}

/// Layer kinds after which an identity insertion is valid: `ReLU`, or any
/// layer that computes a linear map.
fn deepen_compatible(kind: LayerKind) -> bool {
    !matches!(kind, LayerKind::MaxPool2D | LayerKind::Input | LayerKind::Output)
}

/// [`deepen`] in place; returns the new conv's id.
pub(crate) fn deepen_mut(g: &mut ModelGraph, layer_id: NodeId, k: u32) -> Result<NodeId> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::EvenKernel(k));
    }
    let node = require_node(g, layer_id)?;
    if !deepen_compatible(node.kind) {
        return Err(Error::InapplicableOp { node: layer_id, op: "Deepen", kind: node.kind.name() });
    }
    let channels = out_channels(g, layer_id)?;
    let downstream = consumers_of(g, layer_id);
    let conv_id = g.next_id();

    let mut ident = LayerSpec::conv(conv_id, layer_id, channels, channels, k, 1);
    if graph_carries_weights(g) {
        ident.weights = Some(identity_kernel(k, channels));
    }
    g.insert(ident);
    rewire(g, &downstream, layer_id, conv_id);
    Ok(conv_id)
}

/// The identity convolution kernel: 1 at the center tap wherever input and
/// output channel coincide, 0 everywhere else.
fn identity_kernel(k: u32, channels: u32) -> Weights {
    let (k, c) = (k as usize, channels as usize);
    let mut data = vec![0.0f32; k * k * c * c];
    let center = k / 2;
    for ch in 0..c {
        data[((center * k + center) * c + ch) * c + ch] = 1.0;
    }
    Weights::new(vec![k, k, c, c], data)
}

/// Whether inserted kernels should materialize weight payloads: yes as soon
/// as the graph carries any weights (a weightless search skeleton stays
/// weightless; a loaded model keeps its function).
fn graph_carries_weights(g: &ModelGraph) -> bool {
    g.nodes().any(|n| n.weights.is_some())
}

// ---------------------------------------------------------------------------
// Genome
// ---------------------------------------------------------------------------

/// One obfuscation operation with its parameters, as stored in a genome
/// slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum ObfOp {
    /// Split input channels at `m`.
    BranchIn { m: u32 },
    /// Split output channels at `m`.
    BranchOut { m: u32 },
    /// Insert a `k`×`k` identity convolution after the layer's activation
    /// chain.
    Deepen { k: u32 },
    /// Insert a zero residual branch at the layer.
    Skip,
}

impl ObfOp {
    /// Application rank: `BranchIn` first, then `BranchOut`, `Deepen`,
    /// `Skip`.  The order is arbitrary but fixed so results are
    /// reproducible.
    pub fn rank(self) -> u8 {
        match self {
            ObfOp::BranchIn { .. } => 0,
            ObfOp::BranchOut { .. } => 1,
            ObfOp::Deepen { .. } => 2,
            ObfOp::Skip => 3,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ObfOp::BranchIn { .. } => "BranchIn",
            ObfOp::BranchOut { .. } => "BranchOut",
            ObfOp::Deepen { .. } => "Deepen",
            ObfOp::Skip => "Skip",
        }
    }
}

/// The operations chosen for one transformable layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub layer_id: NodeId,
    pub ops: Vec<ObfOp>,
}

/// Identity of the graph a genome was bred for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseModelRef {
    pub name: String,
    /// Hex form of [`ModelGraph::structural_hash`].
    pub hash: String,
}

impl BaseModelRef {
    pub fn of(graph: &ModelGraph) -> BaseModelRef {
        BaseModelRef { name: graph.name.clone(), hash: format!("{:016x}", graph.structural_hash()) }
    }
}

/// A complete obfuscation plan: one slot per transformable layer of the base
/// graph, in deterministic topological order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genome {
    pub base_model: BaseModelRef,
    pub slots: Vec<Slot>,
}

impl Genome {
    /// The all-empty genome for a base graph: applies nothing.
    pub fn empty(base: &ModelGraph) -> Result<Genome> {
        let template = GenomeTemplate::of(base)?;
        Ok(Genome {
            base_model: template.base,
            slots: template
                .slots
                .iter()
                .map(|s| Slot { layer_id: s.layer_id, ops: Vec::new() })
                .collect(),
        })
    }

    /// Total number of operations across all slots.
    pub fn op_count(&self) -> usize {
        self.slots.iter().map(|s| s.ops.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genome serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Genome> {
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))
    }
}

/// Per-layer applicability and parameter ranges, derived once from a base
/// graph and shared by random generation, mutation, and application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTemplate {
    pub layer_id: NodeId,
    /// `Some(c)` if input branching applies; split points range over `1..c`.
    pub branch_in: Option<u32>,
    /// `Some(j)` if output branching applies; split points range over `1..j`.
    pub branch_out: Option<u32>,
    pub deepen: bool,
    pub skip: bool,
}

impl SlotTemplate {
    pub fn applicable_ops(&self) -> usize {
        usize::from(self.branch_in.is_some())
            + usize::from(self.branch_out.is_some())
            + usize::from(self.deepen)
            + usize::from(self.skip)
    }

    /// The op with default parameters, if applicable.  Defaults are the
    /// 50/50 split (`m = ⌊·/2⌋`) and a 3×3 deepening kernel.
    pub fn default_op(&self, rank: u8) -> Option<ObfOp> {
        match rank {
            0 => self.branch_in.map(|c| ObfOp::BranchIn { m: c / 2 }),
            1 => self.branch_out.map(|j| ObfOp::BranchOut { m: j / 2 }),
            2 => self.deepen.then_some(ObfOp::Deepen { k: DEFAULT_DEEPEN_K }),
            3 => self.skip.then_some(ObfOp::Skip),
            _ => None,
        }
    }
}

/// Template for a whole graph: the slots a genome must align with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenomeTemplate {
    pub base: BaseModelRef,
    pub slots: Vec<SlotTemplate>,
}

impl GenomeTemplate {
    /// Derive the template: one slot per kernel-emitting layer in
    /// deterministic topological order.
    ///
    /// Branching applies to dense convolutions (and output branching to
    /// fully-connected layers) with at least two channels on the split axis.
    /// Deepening applies when the layer's activation chain ends in a
    /// deepen-compatible node; skipping applies everywhere.
    pub fn of(base: &ModelGraph) -> Result<GenomeTemplate> {
        let order = base.topo_order()?;
        let consumers = base.consumers();
        let mut slots = Vec::new();
        for id in order {
            let node = base.node(id).expect("id from topo order");
            if !node.kind.emits_kernel() {
                continue;
            }
            let dense_conv = node.kind == LayerKind::Conv2D && node.conv_groups() == 1;
            let branch_in = (dense_conv && node.c.unwrap_or(0) >= 2).then(|| node.c.unwrap());
            let branch_out = ((dense_conv || node.kind == LayerKind::FullyConnected)
                && node.j.unwrap_or(0) >= 2)
                .then(|| node.j.unwrap());
            let anchor = fused_chain_end(base, id, &consumers);
            let deepen = deepen_compatible(base.node(anchor).unwrap().kind);
            slots.push(SlotTemplate { layer_id: id, branch_in, branch_out, deepen, skip: true });
        }
        if slots.is_empty() {
            return Err(Error::NoEligibleLayers);
        }
        Ok(GenomeTemplate { base: BaseModelRef::of(base), slots })
    }

    /// Draw a genome: every applicable operation of every slot is included
    /// independently with probability one half, at default parameters.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Genome {
        let slots = self
            .slots
            .iter()
            .map(|slot| {
                let ops = (0..4)
                    .filter_map(|rank| slot.default_op(rank))
                    .filter(|_| rng.gen_bool(0.5))
                    .collect();
                Slot { layer_id: slot.layer_id, ops }
            })
            .collect();
        Genome { base_model: self.base.clone(), slots }
    }
}

/// Transformable layers of a base graph, in slot order.
pub fn eligible_layers(base: &ModelGraph) -> Result<Vec<NodeId>> {
    Ok(GenomeTemplate::of(base)?.slots.into_iter().map(|s| s.layer_id).collect())
}

/// Draw a random genome for `base` from a dedicated substream of `seed`.
pub fn random_genome(base: &ModelGraph, seed: u64) -> Result<Genome> {
    let template = GenomeTemplate::of(base)?;
    Ok(template.sample(&mut crate::rng::substream(seed, "genome")))
}

/// Walk single-consumer `ReLU`/`BatchNorm` links downstream of `id` and
/// return the last node of that chain (possibly `id` itself).  This is the
/// "after the activation" point deepening inserts at.
fn fused_chain_end(
    g: &ModelGraph,
    id: NodeId,
    consumers: &BTreeMap<NodeId, Vec<NodeId>>,
) -> NodeId {
    let mut cur = id;
    loop {
        match consumers.get(&cur).map(Vec::as_slice) {
            Some([only]) if g.node(*only).is_some_and(|n| n.kind.is_fused()) => cur = *only,
            _ => return cur,
        }
    }
}

/// Apply every slot of `genome` to a copy of `base` and validate the result.
///
/// Slots apply in order; within a slot the operations apply as
/// `BranchIn` → `BranchOut` → `Deepen` → `Skip`.  After input branching the
/// layer exists as two partial convolutions, and a subsequent `BranchOut`
/// splits each of them.  `Deepen` resolves its insertion point at the end of
/// the activation chain following the slot's current join node; `Skip`
/// attaches at the join node itself.  Errors carry the slot index; the
/// genome must reference `base` by structural hash.
pub fn apply_genome(base: &ModelGraph, genome: &Genome) -> Result<ModelGraph> {
    let expected = format!("{:016x}", base.structural_hash());
    if genome.base_model.hash != expected {
        return Err(Error::GenomeMismatch(format!(
            "genome was bred for structural hash {}, graph has {expected}",
            genome.base_model.hash
        )));
    }
    let mut g = base.clone();
    for (index, slot) in genome.slots.iter().enumerate() {
        apply_slot(&mut g, slot).map_err(|e| Error::Slot {
            slot: index,
            layer: slot.layer_id,
            source: Box::new(e),
        })?;
    }
    validate(&g).into_result()?;
    Ok(g)
}

fn apply_slot(g: &mut ModelGraph, slot: &Slot) -> Result<()> {
    let mut ops = slot.ops.clone();
    ops.sort_by_key(|op| op.rank());
    for pair in ops.windows(2) {
        if pair[0].rank() == pair[1].rank() {
            return Err(Error::GenomeMismatch(format!(
                "operation {} listed more than once",
                pair[0].name()
            )));
        }
    }

    // The node whose output currently stands for the slot layer's output.
    let mut rep = slot.layer_id;
    // After input branching, the partial convolutions that jointly make up
    // the layer; output branching then splits each of them.
    let mut partials: Vec<NodeId> = Vec::new();
    for op in ops {
        match op {
            ObfOp::BranchIn { m } => {
                let (kept, sibling, add) = branch_input_mut(g, rep, m)?;
                partials = vec![kept, sibling];
                rep = add;
            }
            ObfOp::BranchOut { m } => {
                if partials.is_empty() {
                    let (.., concat) = branch_output_mut(g, rep, m)?;
                    rep = concat;
                } else {
                    for &p in &partials {
                        branch_output_mut(g, p, m)?;
                    }
                }
            }
            ObfOp::Deepen { k } => {
                let anchor = fused_chain_end(g, rep, &g.consumers());
                deepen_mut(g, anchor, k)?;
            }
            ObfOp::Skip => {
                skip_mut(g, rep)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, SequenceOptions};
    use crate::rng::{substream, substream_indexed};
    use crate::tensor::{forward, Tensor};

    /// input(4x6x6) -> conv(4->6) -> bn -> relu -> maxpool -> fc -> output
    fn base_net() -> ModelGraph {
        let mut g = ModelGraph::new(
            "base",
            0,
            6,
            vec![
                LayerSpec::input(0, 4, 6, 6),
                LayerSpec::conv(1, 0, 4, 6, 3, 1),
                LayerSpec::batch_norm(2, 1, 6),
                LayerSpec::relu(3, 2),
                LayerSpec::max_pool(4, 3, 2, 2),
                LayerSpec::fully_connected(5, 4, 6 * 3 * 3, 10),
                LayerSpec::output(6, 5),
            ],
        );
        g.init_missing_weights(&mut substream(11, "weights"));
        g
    }

    fn outputs_close(a: &ModelGraph, b: &ModelGraph, seed: u64) -> bool {
        let shape = infer_shapes(a).unwrap()[&a.input_id];
        (0..10).all(|i| {
            let x = Tensor::random(shape, &mut substream_indexed(seed, "stimulus", i));
            forward(a, &x).unwrap().approx_eq(&forward(b, &x).unwrap(), 1e-4, 1e-6)
        })
    }

    #[test]
    fn branch_output_splits_conv_and_preserves_function() {
        let g = base_net();
        let b = branch_output(&g, 1, 2).unwrap();
        assert!(validate(&b).is_ok());
        assert_eq!(b.kernel_count(), g.kernel_count() + 2);
        // Kept sibling has 2 output channels, new sibling 4, concat joins.
        assert_eq!(b.node(1).unwrap().j, Some(2));
        let sibling = b.node(7).unwrap();
        assert_eq!(sibling.kind, LayerKind::Conv2D);
        assert_eq!(sibling.j, Some(4));
        assert_eq!(b.node(8).unwrap().kind, LayerKind::Concat);
        assert!(outputs_close(&g, &b, 21));
    }

    #[test]
    fn branch_output_weight_slices_line_up() {
        let g = base_net();
        let m = 2;
        let b = branch_output(&g, 1, m).unwrap();
        let w = g.node(1).unwrap().weights.as_ref().unwrap();
        let lo = b.node(1).unwrap().weights.as_ref().unwrap();
        let hi = b.node(7).unwrap().weights.as_ref().unwrap();
        assert_eq!(lo.shape, vec![3, 3, 4, 2]);
        assert_eq!(hi.shape, vec![3, 3, 4, 4]);
        // Row (ky,kx,ci) of the original splits into the two siblings' rows.
        let j = 6;
        for row in 0..3 * 3 * 4 {
            assert_eq!(lo.data[row * 2..row * 2 + 2], w.data[row * j..row * j + m as usize]);
            assert_eq!(hi.data[row * 4..row * 4 + 4], w.data[row * j + m as usize..(row + 1) * j]);
        }
    }

    #[test]
    fn branch_output_applies_to_fully_connected() {
        let g = base_net();
        let b = branch_output(&g, 5, 4).unwrap();
        assert!(validate(&b).is_ok());
        assert_eq!(b.node(5).unwrap().j, Some(4));
        assert_eq!(b.node(7).unwrap().j, Some(6));
        assert!(outputs_close(&g, &b, 22));
    }

    #[test]
    fn branch_output_rejects_bad_targets() {
        let g = base_net();
        assert!(matches!(
            branch_output(&g, 4, 1).unwrap_err(),
            Error::InapplicableOp { node: 4, .. }
        ));
        assert!(matches!(
            branch_output(&g, 1, 0).unwrap_err(),
            Error::SplitOutOfRange { m: 0, .. }
        ));
        assert!(matches!(
            branch_output(&g, 1, 6).unwrap_err(),
            Error::SplitOutOfRange { m: 6, max: 6, .. }
        ));
    }

    #[test]
    fn branch_input_splits_channels_and_preserves_function() {
        let g = base_net();
        let b = branch_input(&g, 1, 1).unwrap();
        assert!(validate(&b).is_ok());
        assert_eq!(b.kernel_count(), g.kernel_count() + 2);
        // Two slice views feed the siblings; slices emit no kernels.
        let slices: Vec<_> =
            b.nodes().filter(|n| n.kind == LayerKind::Slice).map(|n| n.id).collect();
        assert_eq!(slices.len(), 2);
        assert_eq!(b.node(slices[0]).unwrap().c_start, Some(0));
        assert_eq!(b.node(slices[1]).unwrap().c_start, Some(1));
        assert_eq!(b.node(1).unwrap().c, Some(1));
        assert!(outputs_close(&g, &b, 23));
    }

    #[test]
    fn branch_input_sibling_payloads_have_half_size() {
        // c=16 split at m=8: each sibling carries k1*k2*8*j values.
        let mut g = ModelGraph::new(
            "wide",
            0,
            3,
            vec![
                LayerSpec::input(0, 16, 4, 4),
                LayerSpec::conv(1, 0, 16, 5, 3, 1),
                LayerSpec::relu(2, 1),
                LayerSpec::output(3, 2),
            ],
        );
        g.init_missing_weights(&mut substream(12, "weights"));
        let b = branch_input(&g, 1, 8).unwrap();
        let lo = b.node(1).unwrap().weights.as_ref().unwrap();
        assert_eq!(lo.data.len(), 3 * 3 * 8 * 5);
        let sibling = b.nodes().find(|n| n.kind == LayerKind::Conv2D && n.id != 1).unwrap();
        assert_eq!(sibling.weights.as_ref().unwrap().data.len(), 3 * 3 * 8 * 5);
        assert!(outputs_close(&g, &b, 24));
    }

    #[test]
    fn skip_adds_zero_branch_without_changing_outputs() {
        let g = base_net();
        let s = skip(&g, 1).unwrap();
        assert!(validate(&s).is_ok());
        assert_eq!(s.kernel_count(), g.kernel_count() + 2);
        let before = g.to_sequence(SequenceOptions::default()).unwrap();
        let after = s.to_sequence(SequenceOptions::default()).unwrap();
        assert_eq!(
            after.0,
            {
                // [Conv2D, Add] appears right after the skipped conv.
                let mut expect = before.0.clone();
                expect.splice(1..1, [LayerKind::Conv2D, LayerKind::Add]);
                expect
            }
        );
        // The zero branch contributes exactly nothing.
        let shape = infer_shapes(&g).unwrap()[&g.input_id];
        let x = Tensor::random(shape, &mut substream(25, "stimulus"));
        assert_eq!(forward(&g, &x).unwrap().max_abs_diff(&forward(&s, &x).unwrap()), 0.0);
    }

    #[test]
    fn skip_rejects_non_kernel_targets() {
        let g = base_net();
        assert!(matches!(skip(&g, 3).unwrap_err(), Error::InapplicableOp { node: 3, .. }));
        assert!(matches!(skip(&g, 6).unwrap_err(), Error::InapplicableOp { node: 6, .. }));
    }

    #[test]
    fn deepen_inserts_exact_identity() {
        let g = base_net();
        // Insert after the ReLU — the point right after an activation.
        let d = deepen(&g, 3, 3).unwrap();
        assert!(validate(&d).is_ok());
        assert_eq!(d.kernel_count(), g.kernel_count() + 1);
        let shape = infer_shapes(&g).unwrap()[&g.input_id];
        let x = Tensor::random(shape, &mut substream(26, "stimulus"));
        assert_eq!(forward(&g, &x).unwrap().max_abs_diff(&forward(&d, &x).unwrap()), 0.0);
    }

    #[test]
    fn identity_kernel_has_one_tap_per_channel() {
        // k=3, 4 channels: exactly 4 ones among 3*3*4*4 = 144 entries, all
        // at the center tap with matching channels.
        let w = identity_kernel(3, 4);
        assert_eq!(w.data.len(), 144);
        assert_eq!(w.data.iter().filter(|&&v| v == 1.0).count(), 4);
        assert_eq!(w.data.iter().filter(|&&v| v == 0.0).count(), 140);
        for ch in 0..4usize {
            assert_eq!(w.data[((1 * 3 + 1) * 4 + ch) * 4 + ch], 1.0);
        }
    }

    #[test]
    fn deepen_with_k1_is_a_pointwise_identity() {
        let g = base_net();
        let d = deepen(&g, 5, 1).unwrap();
        let new_conv = d.nodes().find(|n| n.id >= 7).unwrap();
        assert_eq!((new_conv.k1, new_conv.k2), (Some(1), Some(1)));
        let shape = infer_shapes(&g).unwrap()[&g.input_id];
        let x = Tensor::random(shape, &mut substream(27, "stimulus"));
        assert_eq!(forward(&g, &x).unwrap().max_abs_diff(&forward(&d, &x).unwrap()), 0.0);
    }

    #[test]
    fn deepen_rejects_even_kernels_and_nonlinear_anchors() {
        let g = base_net();
        assert!(matches!(deepen(&g, 3, 4).unwrap_err(), Error::EvenKernel(4)));
        assert!(matches!(
            deepen(&g, 4, 3).unwrap_err(),
            Error::InapplicableOp { node: 4, op: "Deepen", .. }
        ));
    }

    #[test]
    fn template_reflects_applicability() {
        let g = base_net();
        let t = GenomeTemplate::of(&g).unwrap();
        // Slots: conv 1, maxpool 4, fc 5 — in topological order.
        let ids: Vec<_> = t.slots.iter().map(|s| s.layer_id).collect();
        assert_eq!(ids, vec![1, 4, 5]);
        let conv = &t.slots[0];
        assert_eq!((conv.branch_in, conv.branch_out), (Some(4), Some(6)));
        assert!(conv.deepen && conv.skip);
        let pool = &t.slots[1];
        assert_eq!((pool.branch_in, pool.branch_out), (None, None));
        assert!(!pool.deepen && pool.skip);
        let fc = &t.slots[2];
        assert_eq!((fc.branch_in, fc.branch_out), (None, Some(10)));
        assert!(fc.deepen && fc.skip);
    }

    #[test]
    fn default_split_is_floor_of_half() {
        // j=5 branches into siblings of 2 and 3 channels by default.
        let slot = SlotTemplate {
            layer_id: 1,
            branch_in: None,
            branch_out: Some(5),
            deepen: false,
            skip: false,
        };
        assert_eq!(slot.default_op(1), Some(ObfOp::BranchOut { m: 2 }));
    }

    #[test]
    fn empty_genome_changes_nothing() {
        let g = base_net();
        let out = apply_genome(&g, &Genome::empty(&g).unwrap()).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn single_skip_slot_adds_two_kernels() {
        let g = base_net();
        let mut genome = Genome::empty(&g).unwrap();
        genome.slots[0].ops.push(ObfOp::Skip);
        let out = apply_genome(&g, &genome).unwrap();
        assert_eq!(out.kernel_count(), g.kernel_count() + 2);
    }

    #[test]
    fn full_slot_composes_and_preserves_function() {
        let g = base_net();
        let mut genome = Genome::empty(&g).unwrap();
        genome.slots[0].ops = vec![
            ObfOp::BranchIn { m: 2 },
            ObfOp::BranchOut { m: 3 },
            ObfOp::Deepen { k: 3 },
            ObfOp::Skip,
        ];
        let out = apply_genome(&g, &genome).unwrap();
        assert!(validate(&out).is_ok());
        // BranchIn +2, BranchOut on both partials +4, Deepen +1, Skip +2.
        assert_eq!(out.kernel_count(), g.kernel_count() + 9);
        assert!(outputs_close(&g, &out, 28));
    }

    #[test]
    fn apply_genome_is_deterministic() {
        let g = base_net();
        let genome = random_genome(&g, 5).unwrap();
        let a = apply_genome(&g, &genome).unwrap();
        let b = apply_genome(&g, &genome).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn genome_hash_guard_rejects_other_graphs() {
        let g = base_net();
        let mut other = g.clone();
        other.node_mut(1).unwrap().j = Some(8);
        let genome = random_genome(&g, 6).unwrap();
        assert!(matches!(apply_genome(&other, &genome), Err(Error::GenomeMismatch(_))));
    }

    #[test]
    fn slot_errors_carry_their_index() {
        let g = base_net();
        let mut genome = Genome::empty(&g).unwrap();
        genome.slots[1].ops.push(ObfOp::BranchOut { m: 1 }); // maxpool slot
        match apply_genome(&g, &genome).unwrap_err() {
            Error::Slot { slot: 1, layer: 4, source } => {
                assert!(matches!(*source, Error::InapplicableOp { .. }))
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn duplicate_ops_in_a_slot_are_rejected() {
        let g = base_net();
        let mut genome = Genome::empty(&g).unwrap();
        genome.slots[0].ops = vec![ObfOp::Skip, ObfOp::Skip];
        assert!(matches!(apply_genome(&g, &genome), Err(Error::Slot { slot: 0, .. })));
    }

    #[test]
    fn random_genome_matches_inclusion_probabilities() {
        // A slot with three applicable ops includes 0 or 3 of them 12.5% of
        // the time each and 1 or 2 of them 37.5% each.
        let slot = SlotTemplate {
            layer_id: 1,
            branch_in: None,
            branch_out: Some(4),
            deepen: true,
            skip: true,
        };
        let template = GenomeTemplate {
            base: BaseModelRef { name: "p".into(), hash: "0".into() },
            slots: vec![slot],
        };
        let mut rng = substream(99, "distribution");
        let mut counts = [0u32; 4];
        let draws = 10_000;
        for _ in 0..draws {
            counts[template.sample(&mut rng).slots[0].ops.len()] += 1;
        }
        let p: Vec<f64> = counts.iter().map(|&c| f64::from(c) / f64::from(draws)).collect();
        assert!((p[0] - 0.125).abs() < 0.02, "P(0) = {}", p[0]);
        assert!((p[1] - 0.375).abs() < 0.02, "P(1) = {}", p[1]);
        assert!((p[2] - 0.375).abs() < 0.02, "P(2) = {}", p[2]);
        assert!((p[3] - 0.125).abs() < 0.02, "P(3) = {}", p[3]);
    }

    #[test]
    fn random_genome_is_seed_deterministic() {
        let g = base_net();
        assert_eq!(random_genome(&g, 41).unwrap(), random_genome(&g, 41).unwrap());
        assert_ne!(random_genome(&g, 41).unwrap(), random_genome(&g, 42).unwrap());
    }

    #[test]
    fn inapplicable_slot_stays_empty() {
        let template = GenomeTemplate {
            base: BaseModelRef { name: "none".into(), hash: "0".into() },
            slots: vec![SlotTemplate {
                layer_id: 9,
                branch_in: None,
                branch_out: None,
                deepen: false,
                skip: false,
            }],
        };
        let genome = template.sample(&mut substream(1, "x"));
        assert!(genome.slots[0].ops.is_empty());
    }

    #[test]
    fn genome_json_round_trips() {
        let g = base_net();
        let genome = random_genome(&g, 77).unwrap();
        let text = genome.to_json();
        assert_eq!(Genome::from_json(&text).unwrap(), genome);
        // Tagged op encoding, e.g. {"op": "Skip"}.
        let mut skip_only = Genome::empty(&g).unwrap();
        skip_only.slots[0].ops.push(ObfOp::Skip);
        assert!(skip_only.to_json().contains("\"op\": \"Skip\""));
    }

    #[test]
    fn genomes_survive_weightless_application() {
        // Search operates on skeletons: rewrites there must not invent
        // payloads, and the rewritten skeleton must still validate.
        let skeleton = base_net().without_weights();
        let mut genome = Genome::empty(&skeleton).unwrap();
        genome.slots[0].ops = vec![ObfOp::BranchOut { m: 3 }, ObfOp::Deepen { k: 3 }, ObfOp::Skip];
        let out = apply_genome(&skeleton, &genome).unwrap();
        assert!(out.nodes().all(|n| n.weights.is_none()));
        assert!(validate(&out).is_ok());
    }
}
