//! Analytic execution-trace model.
//!
//! Stands in for a GPU profiler: every kernel-emitting node maps to one
//! [`KernelTrace`] row of modeled compute cycles, DRAM read bytes, and DRAM
//! write bytes.  The model is deliberately simple and *shape-only* — weight
//! values never influence cost, which is exactly why an all-zero convolution
//! is indistinguishable from a real one in the trace:
//!
//! * `read_bytes  = (input elements + weight elements) · E`
//! * `write_bytes = output elements · E`
//! * `cycles      = MACs / λ` for `Conv2D`/`FullyConnected`,
//!   `output elements · κ` for everything else
//!
//! with element width `E = 4` bytes by default.  Per-kernel latency follows
//! a roofline: `max(cycles, bytes / BW)`, compute and memory overlapping the
//! way DMA engines do.  Optional multiplicative log-normal noise emulates
//! measurement jitter; at `σ = 0` the trace is exactly deterministic.
//!
//! All parameters (`λ`, `κ`, `BW`, `E`, `σ`) are configurable so the model
//! can later be calibrated against a real profiler.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, LayerKind, ModelGraph, NodeId};
use crate::rng::substream;

/// Trace-model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceParams {
    /// MAC operations retired per cycle.
    pub lambda: f64,
    /// Cycles per output element for non-MAC kernels.
    pub kappa: f64,
    /// Memory bandwidth in bytes per cycle.
    pub bandwidth: f64,
    /// Bytes per tensor element.
    pub elem_bytes: f64,
    /// Standard deviation of the log-normal jitter; 0 disables noise.
    pub noise_sigma: f64,
    /// Seed for the jitter substream (unused at `noise_sigma = 0`).
    pub seed: u64,
}

impl Default for TraceParams {
    fn default() -> TraceParams {
        TraceParams {
            lambda: 64.0,
            kappa: 1.0,
            bandwidth: 256.0,
            elem_bytes: 4.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl TraceParams {
    pub fn check(&self) -> Result<()> {
        for (name, value) in [
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("bandwidth", self.bandwidth),
            ("elem_bytes", self.elem_bytes),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "trace.{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "trace.noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// One profiled kernel.  `label` is the ground-truth layer kind; it is
/// stripped before a trace is shown to the attack.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTrace {
    pub node_id: NodeId,
    pub label: Option<LayerKind>,
    pub cycles: f64,
    pub read_bytes: f64,
    pub write_bytes: f64,
}

/// The full run-time trace: one row per kernel-emitting node, in the
/// graph's deterministic topological order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceMatrix {
    pub rows: Vec<KernelTrace>,
}

impl TraceMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Attack-facing copy: identical features, no ground-truth labels.
    pub fn strip_labels(&self) -> TraceMatrix {
        TraceMatrix {
            rows: self.rows.iter().map(|r| KernelTrace { label: None, ..r.clone() }).collect(),
        }
    }

    /// Ground-truth labels, if every row carries one.
    pub fn labels(&self) -> Option<Vec<LayerKind>> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Render as CSV.  Rows without a label leave the field empty.
    pub fn export_csv(&self) -> String {
        let mut out = String::from("node_id,label,cycles,read_bytes,write_bytes\n");
        for r in &self.rows {
            let label = r.label.map_or("", LayerKind::name);
            out.push_str(&format!(
                "{},{label},{},{},{}\n",
                r.node_id, r.cycles, r.read_bytes, r.write_bytes
            ));
        }
        out
    }

    /// Parse the CSV produced by [`TraceMatrix::export_csv`].
    pub fn import_csv(text: &str) -> Result<TraceMatrix> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != "node_id,label,cycles,read_bytes,write_bytes" {
            return Err(Error::Document(format!("unexpected trace header \"{header}\"")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [id, label, cycles, read, write] = fields[..] else {
                return Err(Error::Document(format!(
                    "trace line {}: expected 5 fields, got {}",
                    i + 2,
                    fields.len()
                )));
            };
            let bad = |what: &str| {
                Error::Document(format!("trace line {}: malformed {what}", i + 2))
            };
            rows.push(KernelTrace {
                node_id: id.parse().map_err(|_| bad("node_id"))?,
                label: match label {
                    "" => None,
                    name => Some(LayerKind::from_name(name).ok_or_else(|| bad("label"))?),
                },
                cycles: cycles.parse().map_err(|_| bad("cycles"))?,
                read_bytes: read.parse().map_err(|_| bad("read_bytes"))?,
                write_bytes: write.parse().map_err(|_| bad("write_bytes"))?,
            });
        }
        Ok(TraceMatrix { rows })
    }
}

/// Profile a graph under the analytic model.  The graph must validate (shape
/// inference runs internally); rows come out in deterministic topological
/// order, matching `to_sequence`.
pub fn trace(graph: &ModelGraph, params: &TraceParams) -> Result<TraceMatrix> {
    params.check()?;
    let shapes = infer_shapes(graph)?;
    let mut rows = Vec::new();
    for id in graph.topo_order()? {
        let node = graph.node(id).expect("id from topo order");
        if !node.kind.emits_kernel() {
            continue;
        }
        let input_elems: u64 = node.inputs.iter().map(|src| shapes[src].elems()).sum();
        let weight_elems: u64 = node
            .expected_weight_shape()
            .map_or(0, |s| s.iter().product::<usize>() as u64);
        let out_elems = shapes[&id].elems();
        let cycles = match node.kind {
            LayerKind::Conv2D => {
                // MACs = output elements · taps per output, taps spanning
                // this group's input channels.
                let taps = u64::from(node.k1.unwrap())
                    * u64::from(node.k2.unwrap())
                    * u64::from(node.c.unwrap() / node.conv_groups());
                (out_elems * taps) as f64 / params.lambda
            }
            LayerKind::FullyConnected => {
                let macs = u64::from(node.c.unwrap()) * u64::from(node.j.unwrap());
                macs as f64 / params.lambda
            }
            _ => out_elems as f64 * params.kappa,
        };
        rows.push(KernelTrace {
            node_id: id,
            label: Some(node.kind),
            cycles,
            read_bytes: (input_elems + weight_elems) as f64 * params.elem_bytes,
            write_bytes: out_elems as f64 * params.elem_bytes,
        });
    }
    let mut tm = TraceMatrix { rows };
    if params.noise_sigma > 0.0 {
        apply_noise(&mut tm, params);
    }
    Ok(tm)
}

/// Multiply every feature by an independent log-normal factor
/// `exp(N(0, σ))` — jitter is multiplicative and positive.  Draw order is
/// row-major (cycles, read, write), so a trace is reproducible given the
/// seed.
fn apply_noise(tm: &mut TraceMatrix, params: &TraceParams) {
    let normal = Normal::new(0.0, params.noise_sigma).expect("checked sigma");
    let mut rng = substream(params.seed, "trace-noise");
    for row in &mut tm.rows {
        for feature in [&mut row.cycles, &mut row.read_bytes, &mut row.write_bytes] {
            *feature *= normal.sample(&mut rng).exp();
        }
    }
}

/// Total modeled latency: per-kernel roofline `max(cycles, bytes/BW)`,
/// summed over rows.
pub fn total_latency(tm: &TraceMatrix, params: &TraceParams) -> f64 {
    tm.rows
        .iter()
        .map(|r| r.cycles.max((r.read_bytes + r.write_bytes) / params.bandwidth))
        .sum()
}
