//! Crate-wide error type.
//!
//! Every fallible library operation returns [`Result`].  Variants are grouped
//! roughly by module: graph loading/validation, transform application, search
//! configuration, and attack training.  The CLI maps these onto process exit
//! codes; library callers can match on the variants directly.

use crate::graph::{NodeId, ValidationReport};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model document could not be parsed into a graph.  The message
    /// carries the JSON location or the offending node id.
    #[error("malformed model document: {0}")]
    Document(String),

    /// An operation that requires a well-formed graph was handed one that
    /// fails validation.
    #[error("graph validation failed:\n{0}")]
    InvalidGraph(ValidationReport),

    /// A node id was referenced that does not exist in the graph.
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),

    /// A transform was requested on a layer kind that does not support it.
    #[error("node {node}: {op} is not applicable to {kind}")]
    InapplicableOp {
        node: NodeId,
        op: &'static str,
        kind: &'static str,
    },

    /// A channel split point fell outside the open interval the layer allows.
    #[error("node {node}: split point {m} outside 1..{max}")]
    SplitOutOfRange { node: NodeId, m: u32, max: u32 },

    /// Identity deepening only admits odd kernel sizes (an even kernel has no
    /// center tap to carry the identity).
    #[error("deepening kernel size {0} must be odd")]
    EvenKernel(u32),

    /// A genome slot failed to apply; wraps the underlying transform error.
    #[error("genome slot {slot} (layer {layer}): {source}")]
    Slot {
        slot: usize,
        layer: NodeId,
        #[source]
        source: Box<Error>,
    },

    /// A genome was paired with a graph it was not built for.
    #[error("genome/model mismatch: {0}")]
    GenomeMismatch(String),

    /// Weight payloads disagree with the shape a rewrite expects, or are
    /// absent where execution needs them.
    #[error("node {node}: {msg}")]
    WeightMismatch { node: NodeId, msg: String },

    /// The tensor fed to [`crate::tensor::forward`] does not match the model
    /// input shape.
    #[error("input tensor is {got}, model expects {expected}")]
    InputShape { expected: String, got: String },

    /// The graph offers no layer a genome slot could attach to.
    #[error("graph has no transformable layers")]
    NoEligibleLayers,

    /// A search or trace configuration parameter is out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The standard deviation of a single observation is undefined.
    #[error("trace has fewer than two kernels")]
    DegenerateTrace,

    /// The layer error rate divides by the ground-truth length.
    #[error("ground-truth layer sequence is empty")]
    EmptyTruth,

    /// Attack training needs at least one labeled kernel.
    #[error("training corpus is empty")]
    EmptyCorpus,

    /// A classifier cannot separate fewer than two classes.
    #[error("training corpus contains a single layer class")]
    SingleClass,

    /// A predictor was applied to feature vectors of the wrong width.
    #[error("predictor expects {expected} features per kernel, got {got}")]
    FeatureDim { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
