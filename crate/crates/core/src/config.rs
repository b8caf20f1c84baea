//! Run configuration: one document that drives the whole pipeline.
//!
//! Every CLI command reads the same [`RunConfig`]: an optional TOML file in
//! which every key has a default, a handful of flag overrides, and one
//! global seed.  After overrides the config is *resolved* — each component's
//! private seed is derived from the global one through a named substream
//! (`netgen`, `ga`, `noise`; the attack's train/test split hashes its own
//! name), so a run is reproducible from the single seed and no two
//! components ever share a random stream.  The stable hash of the resolved
//! document is printed with every run as its provenance tag: equal hash and
//! seed means equal output, byte for byte.

use serde::{Deserialize, Serialize};

use crate::attack::PredictorKind;
use crate::error::{Error, Result};
use crate::ga::GaConfig;
use crate::metrics::FitnessMode;
use crate::netgen::NetGenConfig;
use crate::rng::{fnv1a64, sub_seed};
use crate::trace::TraceParams;

/// Simulated-attack knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Per-kernel classifier to fit.
    pub predictor: PredictorKind,
    /// Fraction of graphs held out when a train/test split is requested.
    pub test_fraction: f64,
    /// Number of networks generated for training when no corpus is supplied.
    pub corpus_size: usize,
}

impl Default for AttackConfig {
    fn default() -> AttackConfig {
        AttackConfig {
            predictor: PredictorKind::default(),
            test_fraction: 0.2,
            corpus_size: 500,
        }
    }
}

impl AttackConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "attack.test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.corpus_size == 0 {
            return Err(Error::InvalidConfig(
                "attack.corpus_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The merged configuration for one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Global seed; every random stream in the run derives from it.
    pub seed: u64,
    /// How the fitness function treats latencies under the budget.
    pub fitness_mode: FitnessMode,
    /// Analytic trace model.
    pub trace: TraceParams,
    /// Genetic search.
    pub ga: GaConfig,
    /// Random-network generator.
    pub netgen: NetGenConfig,
    /// Simulated attack.
    pub attack: AttackConfig,
}

impl RunConfig {
    /// Parse a TOML document; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Document(format!("config: {e}")))
    }

    /// Read and parse the TOML file at `path`.
    pub fn from_path(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml(&text)
    }

    /// Validate, then rewire component seeds from the global seed.
    ///
    /// Any `seed` keys inside the `[ga]`, `[netgen]`, and `[trace]` sections
    /// are deliberately overwritten: after resolution each component draws
    /// from its own named substream of the top-level `seed`, which is what
    /// makes a whole run reproducible from one value.
    pub fn resolved(mut self) -> Result<RunConfig> {
        self.ga.seed = sub_seed(self.seed, "ga");
        self.netgen.seed = sub_seed(self.seed, "netgen");
        self.trace.seed = sub_seed(self.seed, "noise");
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        self.trace.check()?;
        self.ga.check()?;
        self.netgen.check()?;
        self.attack.check()
    }

    /// Stable hash of the document, printed with every run for provenance.
    pub fn hash_hex(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }
}
