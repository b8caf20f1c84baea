//! Layer-balancing architecture obfuscation for convolutional networks.
//!
//! The library models a DNN as a small computation graph, rewrites it with
//! function-preserving transforms (channel branching, skip connections,
//! identity deepening), and searches — under a latency budget — for the
//! rewrite that makes the per-kernel side-channel trace as uniform as
//! possible.  A simulated architecture-stealing attack and a layer-error-rate
//! metric close the loop so defenses can be scored end to end.
//!
//! The top-level workflow mirrors the `alias-forge` CLI:
//!
//! 1. [`netgen`] samples random victim networks (or load one from JSON via
//!    [`graph::ModelGraph::from_json`]).
//! 2. [`ga::evolve`] searches genome space for a balanced obfuscation.
//! 3. [`transforms::apply_genome`] materializes the winning rewrite.
//! 4. [`trace`] renders the analytic per-kernel trace an attacker would see.
//! 5. [`attack`] trains/runs the simulated attacker; [`metrics`] scores the
//!    reconstruction with the layer error rate.

pub mod attack;
pub mod config;
pub mod error;
pub mod ga;
pub mod graph;
pub mod metrics;
pub mod netgen;
pub mod rng;
pub mod tensor;
pub mod trace;
pub mod transforms;

pub use error::{Error, Result};
