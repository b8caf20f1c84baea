//! C ABI for the alias-forge library.
//!
//! Every object crosses the boundary as an opaque handle (`AfGraph`,
//! `AfGenome`, `AfPredictor`) created and destroyed by paired
//! constructor/`*_free` calls.  Fallible functions return an [`AfStatus`]
//! code and write their results through out-pointers only on `AF_STATUS_OK`;
//! the message behind the most recent failure is available from
//! [`af_last_error`] until the next failure on the same thread.
//!
//! Strings returned through `char**` out-pointers are NUL-terminated, owned
//! by the caller, and released with [`af_string_free`]; byte buffers are
//! released with [`af_buffer_free`].  String arguments must be valid UTF-8.
//! The header shipped in `include/alias_forge.h` is generated from this
//! file at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};

use alias_forge::attack::{self, AttackPredictor, PredictorKind};
use alias_forge::error::Error;
use alias_forge::ga::{self, GaConfig};
use alias_forge::graph::{LayerKind, LayerSequence, ModelGraph};
use alias_forge::metrics::{self, FitnessMode};
use alias_forge::netgen::{self, NetGenConfig};
use alias_forge::rng::substream;
use alias_forge::tensor::{forward, Tensor};
use alias_forge::trace::{total_latency, trace, TraceParams};
use alias_forge::transforms::{apply_genome, random_genome, Genome};

/// Result code of a fallible ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfStatus {
    /// The call succeeded and its out-pointers are populated.
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A JSON or CSV document could not be parsed.
    Document = 3,
    /// A configuration value is out of range.
    InvalidConfig = 4,
    /// A graph failed validation or referenced an unknown node.
    Graph = 5,
    /// A rewrite was not applicable or a genome mismatched its graph.
    Transform = 6,
    /// Execution failed: missing weights or a mismatched input tensor.
    Execution = 7,
    /// A metric was undefined for the given input.
    Metric = 8,
    /// The attack corpus was unusable for training or prediction.
    Attack = 9,
    /// A panic or other unexpected fault inside the library.
    Internal = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: AfStatus, msg: impl Display) -> AfStatus {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
    status
}

fn fail_error(e: Error) -> AfStatus {
    let status = match &e {
        Error::Document(_) => AfStatus::Document,
        Error::InvalidConfig(_) => AfStatus::InvalidConfig,
        Error::InvalidGraph(_) | Error::UnknownNode(_) => AfStatus::Graph,
        Error::InapplicableOp { .. }
        | Error::SplitOutOfRange { .. }
        | Error::EvenKernel(_)
        | Error::Slot { .. }
        | Error::GenomeMismatch(_)
        | Error::NoEligibleLayers => AfStatus::Transform,
        Error::WeightMismatch { .. } | Error::InputShape { .. } => AfStatus::Execution,
        Error::DegenerateTrace | Error::EmptyTruth => AfStatus::Metric,
        Error::EmptyCorpus | Error::SingleClass | Error::FeatureDim { .. } => AfStatus::Attack,
        Error::Io(_) => AfStatus::Internal,
    };
    fail(status, e)
}

/// Run a body that may touch library code, translating panics into
/// `AF_STATUS_INTERNAL` instead of unwinding across the ABI.
fn guarded(body: impl FnOnce() -> AfStatus) -> AfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(AfStatus::Internal, "panic inside alias-forge"),
    }
}

/// Borrow a UTF-8 string argument, or report why it cannot be borrowed.
///
/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, AfStatus> {
    if ptr.is_null() {
        return Err(fail(AfStatus::NullArgument, "string argument is NULL"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| fail(AfStatus::InvalidUtf8, format!("string argument: {e}")))
}

/// Parse an optional JSON config argument; NULL means the default.
///
/// # Safety
/// `ptr` must be NULL or a NUL-terminated string.
unsafe fn json_arg<T: serde::de::DeserializeOwned + Default>(
    ptr: *const c_char,
    what: &str,
) -> Result<T, AfStatus> {
    if ptr.is_null() {
        return Ok(T::default());
    }
    let text = utf8_arg(ptr)?;
    serde_json::from_str(text).map_err(|e| fail(AfStatus::Document, format!("{what}: {e}")))
}

fn give_string(text: String, out: *mut *mut c_char) -> AfStatus {
    let c = match CString::new(text) {
        Ok(c) => c,
        Err(e) => return fail(AfStatus::Internal, format!("interior NUL in result: {e}")),
    };
    unsafe { *out = c.into_raw() };
    AfStatus::Ok
}

macro_rules! arg {
    ($ptr:expr, $name:literal) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => return fail(AfStatus::NullArgument, concat!($name, " is NULL")),
        }
    };
}

macro_rules! out_arg {
    ($ptr:expr) => {
        if $ptr.is_null() {
            return fail(AfStatus::NullArgument, "out-pointer is NULL");
        }
    };
}

/// A model graph.
pub struct AfGraph(ModelGraph);
/// An obfuscation recipe bound to the graph it was sampled for.
pub struct AfGenome(Genome);
/// A trained per-kernel layer-type predictor.
pub struct AfPredictor(AttackPredictor);

/// Library version as a static NUL-terminated string; never freed.
#[no_mangle]
pub extern "C" fn af_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread.  The pointer stays
/// valid until the next failing call on the same thread; never freed.
#[no_mangle]
pub extern "C" fn af_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Release a string returned through a `char**` out-pointer.  NULL is a
/// no-op.
///
/// # Safety
/// `s` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn af_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Release a byte buffer returned through a `uint8_t**` out-pointer, with
/// the length the call reported.  NULL is a no-op.
///
/// # Safety
/// `(ptr, len)` must match a buffer from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn af_buffer_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)));
    }
}

/// Parse a model document into a graph handle.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_graph_from_json(
    json: *const c_char,
    out: *mut *mut AfGraph,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let text = match utf8_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ModelGraph::from_json(text) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(AfGraph(g)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Serialize a graph to its model-document JSON.
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_graph_to_json(
    graph: *const AfGraph,
    out: *mut *mut c_char,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        give_string(g.0.to_json(), out)
    })
}

/// Destroy a graph handle.  NULL is a no-op.
///
/// # Safety
/// `graph` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn af_graph_free(graph: *mut AfGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// The graph's name field.
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_graph_name(graph: *const AfGraph, out: *mut *mut c_char) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        give_string(g.0.name.clone(), out)
    })
}

/// Number of nodes in the graph, I/O markers included.
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_graph_node_count(
    graph: *const AfGraph,
    out: *mut usize,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        *out = g.0.node_count();
        AfStatus::Ok
    })
}

/// Number of kernel-emitting nodes — the rows a trace of this graph has.
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_graph_kernel_count(
    graph: *const AfGraph,
    out: *mut usize,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        *out = g.0.kernel_count();
        AfStatus::Ok
    })
}

/// Draw a random victim graph.  `config_json` is a generator config
/// document or NULL for the defaults; `seed` overrides the config's seed
/// so callers can sweep draws without recomposing JSON.
///
/// # Safety
/// `config_json` must be NULL or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_graph_random(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut AfGraph,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let mut cfg: NetGenConfig = match json_arg(config_json, "generator config") {
            Ok(c) => c,
            Err(s) => return s,
        };
        cfg.seed = seed;
        match netgen::generate_corpus(&cfg, 1) {
            Ok(mut graphs) => {
                let g = graphs.pop().expect("corpus of one");
                *out = Box::into_raw(Box::new(AfGraph(g)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Fill in any weights the graph is missing, drawn from `seed`.  Graphs
/// from shape-only documents need this before [`af_forward`].
///
/// # Safety
/// `graph` must be a live handle, not aliased during the call.
#[no_mangle]
pub unsafe extern "C" fn af_graph_init_weights(graph: *mut AfGraph, seed: u64) -> AfStatus {
    guarded(|| {
        let g = match graph.as_mut() {
            Some(g) => g,
            None => return fail(AfStatus::NullArgument, "graph is NULL"),
        };
        g.0.init_missing_weights(&mut substream(seed, "weights"));
        AfStatus::Ok
    })
}

/// Sample a random obfuscation genome for a graph.
///
/// # Safety
/// `graph` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_genome_random(
    graph: *const AfGraph,
    seed: u64,
    out: *mut *mut AfGenome,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        match random_genome(&g.0, seed) {
            Ok(genome) => {
                *out = Box::into_raw(Box::new(AfGenome(genome)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Parse a genome document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_genome_from_json(
    json: *const c_char,
    out: *mut *mut AfGenome,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let text = match utf8_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match Genome::from_json(text) {
            Ok(genome) => {
                *out = Box::into_raw(Box::new(AfGenome(genome)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Serialize a genome document.
///
/// # Safety
/// `genome` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_genome_to_json(
    genome: *const AfGenome,
    out: *mut *mut c_char,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(genome, "genome");
        give_string(g.0.to_json(), out)
    })
}

/// Destroy a genome handle.  NULL is a no-op.
///
/// # Safety
/// `genome` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn af_genome_free(genome: *mut AfGenome) {
    if !genome.is_null() {
        drop(Box::from_raw(genome));
    }
}

/// Total number of rewrite operations the genome applies.
///
/// # Safety
/// `genome` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_genome_op_count(
    genome: *const AfGenome,
    out: *mut usize,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(genome, "genome");
        *out = g.0.slots.iter().map(|s| s.ops.len()).sum();
        AfStatus::Ok
    })
}

/// Apply a genome to the graph it was sampled for, producing the
/// function-preserving obfuscated graph.
///
/// # Safety
/// `graph` and `genome` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_apply_genome(
    graph: *const AfGraph,
    genome: *const AfGenome,
    out: *mut *mut AfGraph,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        let gen = arg!(genome, "genome");
        match apply_genome(&g.0, &gen.0) {
            Ok(obf) => {
                *out = Box::into_raw(Box::new(AfGraph(obf)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Run the graph on a raw input tensor and return the raw output tensor.
/// The raw layout is three little-endian `uint32` dims (channels, height,
/// width) followed by that many little-endian `float32` values.  Free the
/// output with [`af_buffer_free`].
///
/// # Safety
/// `graph` must be a live handle; `input` must point to `input_len` bytes;
/// `out` and `out_len` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn af_forward(
    graph: *const AfGraph,
    input: *const u8,
    input_len: usize,
    out: *mut *mut u8,
    out_len: *mut usize,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        out_arg!(out_len);
        let g = arg!(graph, "graph");
        if input.is_null() {
            return fail(AfStatus::NullArgument, "input is NULL");
        }
        let bytes = std::slice::from_raw_parts(input, input_len);
        let tensor = match Tensor::from_raw(bytes) {
            Ok(t) => t,
            Err(e) => return fail_error(e),
        };
        match forward(&g.0, &tensor) {
            Ok(result) => {
                let boxed = result.to_raw().into_boxed_slice();
                *out_len = boxed.len();
                *out = Box::into_raw(boxed) as *mut u8;
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Trace the graph under the analytic model and return the trace as CSV.
/// `params_json` is a trace-parameter document or NULL for the defaults.
///
/// # Safety
/// `graph` must be a live handle; `params_json` NULL or NUL-terminated;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_trace_csv(
    graph: *const AfGraph,
    params_json: *const c_char,
    out: *mut *mut c_char,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        let params: TraceParams = match json_arg(params_json, "trace params") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match trace(&g.0, &params) {
            Ok(tm) => give_string(tm.export_csv(), out),
            Err(e) => fail_error(e),
        }
    })
}

/// Modeled end-to-end latency of the graph in cycles.
///
/// # Safety
/// Same contract as [`af_trace_csv`], with a double out-pointer.
#[no_mangle]
pub unsafe extern "C" fn af_latency(
    graph: *const AfGraph,
    params_json: *const c_char,
    out: *mut f64,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        let params: TraceParams = match json_arg(params_json, "trace params") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match trace(&g.0, &params) {
            Ok(tm) => {
                *out = total_latency(&tm, &params);
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Summed per-feature standard deviation of the graph's trace — the
/// side-channel leakage score the search minimizes.
///
/// # Safety
/// Same contract as [`af_trace_csv`], with a double out-pointer.
#[no_mangle]
pub unsafe extern "C" fn af_stdev_sum(
    graph: *const AfGraph,
    params_json: *const c_char,
    out: *mut f64,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let g = arg!(graph, "graph");
        let params: TraceParams = match json_arg(params_json, "trace params") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let tm = match trace(&g.0, &params) {
            Ok(tm) => tm,
            Err(e) => return fail_error(e),
        };
        let latency = total_latency(&tm, &params);
        match metrics::fitness(&tm, latency, 0.0, &params, FitnessMode::Verbatim) {
            Ok(report) => {
                *out = report.stdev_sum;
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Search for a budget-constrained balancing genome.  `ga_json` and
/// `params_json` are config documents or NULL for the defaults; `hinge`
/// selects the fitness mode that keeps the deviation objective active
/// inside the budget.  `out_feasible` reports whether the returned genome
/// met the latency budget; when false the genome is the best found and
/// callers should treat the budget as missed.
///
/// # Safety
/// `graph` must be a live handle; config strings NULL or NUL-terminated;
/// `out` and `out_feasible` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn af_evolve(
    graph: *const AfGraph,
    ga_json: *const c_char,
    params_json: *const c_char,
    hinge: bool,
    out: *mut *mut AfGenome,
    out_feasible: *mut bool,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        out_arg!(out_feasible);
        let g = arg!(graph, "graph");
        let cfg: GaConfig = match json_arg(ga_json, "search config") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let params: TraceParams = match json_arg(params_json, "trace params") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let mode = if hinge { FitnessMode::Hinge } else { FitnessMode::Verbatim };
        match ga::evolve(&g.0, &cfg, &params, mode) {
            Ok(outcome) => {
                *out_feasible = outcome.best_is_feasible;
                *out = Box::into_raw(Box::new(AfGenome(outcome.best.genome)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Train a per-kernel layer-type predictor on a corpus of graphs.
/// `kind_json` selects the classifier (e.g. `{"kind":"gaussian_nb"}`,
/// `{"kind":"knn","k":5}`) or NULL for the default; `params_json` sets the
/// trace model the victims are observed under.
///
/// # Safety
/// `graphs` must point to `count` live handles; config strings NULL or
/// NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_predictor_train(
    graphs: *const *const AfGraph,
    count: usize,
    kind_json: *const c_char,
    params_json: *const c_char,
    out: *mut *mut AfPredictor,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        if graphs.is_null() {
            return fail(AfStatus::NullArgument, "graphs is NULL");
        }
        let handles = std::slice::from_raw_parts(graphs, count);
        let mut corpus = Vec::with_capacity(count);
        for (i, &h) in handles.iter().enumerate() {
            match h.as_ref() {
                Some(g) => corpus.push(g.0.clone()),
                None => return fail(AfStatus::NullArgument, format!("graphs[{i}] is NULL")),
            }
        }
        let kind: PredictorKind = match json_arg(kind_json, "predictor kind") {
            Ok(k) => k,
            Err(s) => return s,
        };
        let params: TraceParams = match json_arg(params_json, "trace params") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let ds = match attack::build_dataset(&corpus, &params) {
            Ok(ds) => ds,
            Err(e) => return fail_error(e),
        };
        match attack::train(&ds, kind) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(AfPredictor(p)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Parse a predictor document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_predictor_from_json(
    json: *const c_char,
    out: *mut *mut AfPredictor,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let text = match utf8_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match AttackPredictor::from_json(text) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(AfPredictor(p)));
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}

/// Serialize a predictor document.
///
/// # Safety
/// `predictor` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_predictor_to_json(
    predictor: *const AfPredictor,
    out: *mut *mut c_char,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let p = arg!(predictor, "predictor");
        give_string(p.0.to_json(), out)
    })
}

/// Destroy a predictor handle.  NULL is a no-op.
///
/// # Safety
/// `predictor` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn af_predictor_free(predictor: *mut AfPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Observe a victim graph under the trace model and extract its layer
/// sequence, returned as space-separated layer names in execution order.
///
/// # Safety
/// `predictor` and `graph` must be live handles; `params_json` NULL or
/// NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_predictor_extract(
    predictor: *const AfPredictor,
    graph: *const AfGraph,
    params_json: *const c_char,
    out: *mut *mut c_char,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let p = arg!(predictor, "predictor");
        let g = arg!(graph, "graph");
        let params: TraceParams = match json_arg(params_json, "trace params") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let tm = match trace(&g.0, &params) {
            Ok(tm) => tm,
            Err(e) => return fail_error(e),
        };
        match attack::predict_sequence(&p.0, &tm) {
            Ok(seq) => give_string(seq.to_string(), out),
            Err(e) => fail_error(e),
        }
    })
}

/// Layer error rate between an extracted sequence and the ground truth,
/// both as space-separated layer names (the [`af_predictor_extract`]
/// format): edit distance normalized by the truth's length.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn af_ler(
    predicted: *const c_char,
    truth: *const c_char,
    out: *mut f64,
) -> AfStatus {
    guarded(|| {
        out_arg!(out);
        let parse = |ptr: *const c_char| -> Result<LayerSequence, AfStatus> {
            let text = utf8_arg(ptr)?;
            let mut kinds = Vec::new();
            for word in text.split_whitespace() {
                match LayerKind::from_name(word) {
                    Some(k) => kinds.push(k),
                    None => {
                        return Err(fail(
                            AfStatus::Document,
                            format!("unknown layer name \"{word}\""),
                        ))
                    }
                }
            }
            Ok(LayerSequence(kinds))
        };
        let predicted = match parse(predicted) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let truth = match parse(truth) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match metrics::ler(&predicted, &truth) {
            Ok(value) => {
                *out = value;
                AfStatus::Ok
            }
            Err(e) => fail_error(e),
        }
    })
}
