//! Random DNN generation for attack corpora and defense evaluation.
//!
//! Each network is a chain of convolutional layers — any of which may be
//! replaced by a residual block, a depthwise-separable block, or a max-pool
//! layer — followed by a small fully-connected head.  Batch normalization
//! and ReLU follow every convolution and every hidden dense layer.  Weights
//! are drawn from a normal distribution with scale 0.1, so the generated
//! models run through the numeric executor as-is.
//!
//! All draws are made in a fixed order (depths, then per-layer channel and
//! variant, then dense widths, then weights in node-id order), so a given
//! seed always produces the same graph, including across thread counts when
//! generating a corpus in parallel.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{infer_shapes, LayerSpec, ModelGraph, NodeId};
use crate::rng::substream_indexed;

/// Knobs for the random-network generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetGenConfig {
    /// Inclusive range for the number of convolutional layer positions.
    pub conv_range: (u32, u32),
    /// Inclusive range for the number of fully-connected layers.
    pub fc_range: (u32, u32),
    /// Channel counts a convolutional layer may choose from.
    pub channel_choices: Vec<u32>,
    /// Widths a hidden dense layer may choose from.
    pub fc_dim_choices: Vec<u32>,
    /// Probability that a conv position becomes a residual block.
    pub p_residual: f64,
    /// Probability that a conv position becomes a depthwise-separable block.
    pub p_depthwise: f64,
    /// Probability that a conv position becomes a max-pool layer.
    pub p_pool: f64,
    /// Input planes as (channels, height, width).
    pub input: (u32, u32, u32),
    /// Output dimension of the final dense layer.
    pub classes: u32,
    pub seed: u64,
}

impl Default for NetGenConfig {
    fn default() -> NetGenConfig {
        NetGenConfig {
            conv_range: (4, 12),
            fc_range: (1, 4),
            channel_choices: vec![16, 32, 64, 128, 256],
            fc_dim_choices: vec![64, 128, 256, 512],
            p_residual: 0.15,
            p_depthwise: 0.15,
            p_pool: 0.2,
            input: (3, 32, 32),
            classes: 10,
            seed: 0,
        }
    }
}

impl NetGenConfig {
    /// A lighter preset — narrow layers, small dense head — for quick
    /// corpora where generation volume matters more than layer width.
    pub fn small() -> NetGenConfig {
        NetGenConfig {
            channel_choices: vec![8, 16, 32],
            fc_dim_choices: vec![32, 64],
            ..NetGenConfig::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        let range_ok = |(lo, hi): (u32, u32)| lo >= 1 && lo <= hi;
        if !range_ok(self.conv_range) || !range_ok(self.fc_range) {
            return Err(Error::InvalidConfig(format!(
                "layer-count ranges must be non-empty and start at 1, got conv {:?}, fc {:?}",
                self.conv_range, self.fc_range
            )));
        }
        if self.channel_choices.is_empty() || self.fc_dim_choices.is_empty() {
            return Err(Error::InvalidConfig("channel and dense-width choice sets must be non-empty".into()));
        }
        if self.channel_choices.iter().any(|&c| c == 0) || self.fc_dim_choices.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("channel and dense-width choices must be positive".into()));
        }
        let probs = [self.p_residual, self.p_depthwise, self.p_pool];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || probs.iter().sum::<f64>() > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "replacement probabilities must lie in [0, 1] and sum to at most 1, got {probs:?}"
            )));
        }
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 || self.classes == 0 {
            return Err(Error::InvalidConfig(format!(
                "input extents and class count must be positive, got {:?} / {}",
                self.input, self.classes
            )));
        }
        Ok(())
    }
}

/// What one convolutional position turned into.
enum Variant {
    Plain,
    Residual,
    Depthwise,
    Pool,
}

fn draw_depths<R: Rng>(cfg: &NetGenConfig, rng: &mut R) -> (u32, u32) {
    let n_conv = rng.gen_range(cfg.conv_range.0..=cfg.conv_range.1);
    let n_fc = rng.gen_range(cfg.fc_range.0..=cfg.fc_range.1);
    (n_conv, n_fc)
}

/// Generate one random network.  The configuration must pass
/// [`NetGenConfig::check`]; the result always validates and carries weights.
pub fn generate<R: Rng>(cfg: &NetGenConfig, rng: &mut R) -> Result<ModelGraph> {
    cfg.check()?;
    let (n_conv, n_fc) = draw_depths(cfg, rng);
    let (mut c, mut h, mut w) = cfg.input;

    // Ids are assigned densely in construction order, so a node's id is
    // just the list length at the time it is emitted.
    fn emit(nodes: &mut Vec<LayerSpec>, build: impl FnOnce(NodeId) -> LayerSpec) -> NodeId {
        let id = nodes.len() as NodeId;
        nodes.push(build(id));
        id
    }

    let mut nodes = vec![LayerSpec::input(0, c, h, w)];
    let mut cur: NodeId = 0;

    for _ in 0..n_conv {
        // Both draws happen for every position — even when the variant ends
        // up ignoring the channel choice — so positions consume a fixed
        // number of draws and downstream layers don't shift with the draw.
        let ch = cfg.channel_choices[rng.gen_range(0..cfg.channel_choices.len())];
        let u: f64 = rng.gen();
        let variant = if u < cfg.p_residual {
            Variant::Residual
        } else if u < cfg.p_residual + cfg.p_depthwise {
            Variant::Depthwise
        } else if u < cfg.p_residual + cfg.p_depthwise + cfg.p_pool && h >= 2 && w >= 2 {
            // Pooling needs room to halve; at 1×1 the position falls back
            // to a plain convolution.
            Variant::Pool
        } else {
            Variant::Plain
        };
        match variant {
            Variant::Plain => {
                cur = emit(&mut nodes, |id| LayerSpec::conv(id, cur, c, ch, 3, 1));
                cur = emit(&mut nodes, |id| LayerSpec::batch_norm(id, cur, ch));
                cur = emit(&mut nodes, |id| LayerSpec::relu(id, cur));
                c = ch;
            }
            Variant::Residual => {
                // Identity shortcut, so the block keeps its channel count.
                let entry = cur;
                cur = emit(&mut nodes, |id| LayerSpec::conv(id, cur, c, c, 3, 1));
                cur = emit(&mut nodes, |id| LayerSpec::batch_norm(id, cur, c));
                cur = emit(&mut nodes, |id| LayerSpec::relu(id, cur));
                cur = emit(&mut nodes, |id| LayerSpec::conv(id, cur, c, c, 3, 1));
                cur = emit(&mut nodes, |id| LayerSpec::batch_norm(id, cur, c));
                cur = emit(&mut nodes, |id| LayerSpec::add(id, vec![entry, cur]));
                cur = emit(&mut nodes, |id| LayerSpec::relu(id, cur));
            }
            Variant::Depthwise => {
                cur = emit(&mut nodes, |id| LayerSpec::conv_grouped(id, cur, c, c, 3, 1, c));
                cur = emit(&mut nodes, |id| LayerSpec::batch_norm(id, cur, c));
                cur = emit(&mut nodes, |id| LayerSpec::relu(id, cur));
                cur = emit(&mut nodes, |id| LayerSpec::conv(id, cur, c, ch, 1, 1));
                cur = emit(&mut nodes, |id| LayerSpec::batch_norm(id, cur, ch));
                cur = emit(&mut nodes, |id| LayerSpec::relu(id, cur));
                c = ch;
            }
            Variant::Pool => {
                cur = emit(&mut nodes, |id| LayerSpec::max_pool(id, cur, 2, 2));
                h /= 2;
                w /= 2;
            }
        }
    }

    // Shrink the spatial extent to at most 4×4 before flattening, so dense
    // weight matrices stay bounded no matter how few pools were drawn.
    // Max pooling, like the replacement pools: the trace model prices both
    // pooling flavors identically, so the generator sticks to one kind.
    while h * w > 16 && h >= 2 && w >= 2 {
        cur = emit(&mut nodes, |id| LayerSpec::max_pool(id, cur, 2, 2));
        h /= 2;
        w /= 2;
    }

    let mut flat = c * h * w;
    for f in 0..n_fc {
        let last = f == n_fc - 1;
        let j = if last {
            cfg.classes
        } else {
            cfg.fc_dim_choices[rng.gen_range(0..cfg.fc_dim_choices.len())]
        };
        cur = emit(&mut nodes, |id| LayerSpec::fully_connected(id, cur, flat, j));
        if !last {
            cur = emit(&mut nodes, |id| LayerSpec::batch_norm(id, cur, j));
            cur = emit(&mut nodes, |id| LayerSpec::relu(id, cur));
        }
        flat = j;
    }
    let output = emit(&mut nodes, |id| LayerSpec::output(id, cur));

    let mut graph = ModelGraph::new("random-dnn", 0, output, nodes);
    infer_shapes(&graph)?;
    graph.init_missing_weights(rng);
    Ok(graph)
}

/// Generate `count` networks from per-index substreams of `cfg.seed`.
/// Workers share nothing, so the corpus is identical at any thread count.
pub fn generate_corpus(cfg: &NetGenConfig, count: usize) -> Result<Vec<ModelGraph>> {
    cfg.check()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream_indexed(cfg.seed, "netgen", i as u64);
            let mut graph = generate(cfg, &mut rng)?;
            graph.name = format!("random-{i:05}");
            Ok(graph)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{validate, LayerKind};
    use crate::rng::substream;

    #[test]
    fn bad_configs_are_rejected() {
        let ok = NetGenConfig::default();
        assert!(ok.check().is_ok());
        assert!(NetGenConfig { conv_range: (5, 4), ..ok.clone() }.check().is_err());
        assert!(NetGenConfig { fc_range: (0, 2), ..ok.clone() }.check().is_err());
        assert!(NetGenConfig { channel_choices: vec![], ..ok.clone() }.check().is_err());
        assert!(NetGenConfig { fc_dim_choices: vec![64, 0], ..ok.clone() }.check().is_err());
        assert!(NetGenConfig { p_pool: 0.9, ..ok.clone() }.check().is_err());
        assert!(NetGenConfig { p_residual: -0.1, ..ok.clone() }.check().is_err());
        assert!(NetGenConfig { classes: 0, ..ok }.check().is_err());
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = NetGenConfig::small();
        let a = generate(&cfg, &mut substream(7, "netgen-test")).unwrap();
        let b = generate(&cfg, &mut substream(7, "netgen-test")).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate(&cfg, &mut substream(8, "netgen-test")).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn corpus_is_deterministic_and_named() {
        let cfg = NetGenConfig::small();
        let a = generate_corpus(&cfg, 3).unwrap();
        let b = generate_corpus(&cfg, 3).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].name, "random-00002");
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_json(), y.to_json());
        }
    }

    #[test]
    fn bulk_generation_validates_within_kernel_bounds() {
        // Kernel-count envelope from the configuration: at least 4 conv
        // positions of one kernel each plus one dense layer; at most 12
        // residual blocks (3 kernels each) plus 3 appended average pools
        // (32×32 → 4×4) plus 4 dense layers = 43.
        let cfg = NetGenConfig { seed: 11, ..NetGenConfig::small() };
        let corpus = generate_corpus(&cfg, 5_000).unwrap();
        let (mut lo, mut hi) = (usize::MAX, 0);
        for g in &corpus {
            assert!(validate(g).into_result().is_ok(), "{} invalid", g.name);
            let k = g.kernel_count();
            lo = lo.min(k);
            hi = hi.max(k);
            assert!((4..=43).contains(&k), "{}: {k} kernels", g.name);
            // The classifier head really ends in a dense layer of the
            // configured width.
            let out = g.node(g.output_id).unwrap();
            let head = g.node(out.inputs[0]).unwrap();
            assert_eq!(head.kind, LayerKind::FullyConnected);
            assert_eq!(head.j, Some(cfg.classes));
        }
        assert!(lo >= 4 && hi <= 43, "observed kernel range [{lo}, {hi}]");
    }

    #[test]
    fn conv_depth_draws_are_uniform() {
        // χ² goodness of fit against uniform over [4, 12]: 9 bins, 8
        // degrees of freedom, 99.9 % quantile ≈ 26.12.
        let cfg = NetGenConfig::default();
        let mut rng = substream(13, "depth-chi2");
        let mut counts = [0u32; 9];
        let draws = 10_000;
        for _ in 0..draws {
            let (n_conv, _) = draw_depths(&cfg, &mut rng);
            counts[(n_conv - 4) as usize] += 1;
        }
        let expected = f64::from(draws) / 9.0;
        let chi2: f64 = counts
            .iter()
            .map(|&o| {
                let d = f64::from(o) - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 26.12, "chi-square statistic {chi2} with counts {counts:?}");
    }

    #[test]
    fn forced_residual_blocks_carry_identity_adds() {
        let cfg = NetGenConfig {
            conv_range: (3, 3),
            fc_range: (1, 1),
            p_residual: 1.0,
            p_depthwise: 0.0,
            p_pool: 0.0,
            ..NetGenConfig::small()
        };
        let g = generate(&cfg, &mut substream(21, "residual")).unwrap();
        let seq = g.to_sequence(Default::default()).unwrap();
        let adds = seq.0.iter().filter(|k| **k == LayerKind::Add).count();
        assert_eq!(adds, 3);
        // 3 blocks × (2 convs + add) + 3 appended pools + 1 dense head.
        assert_eq!(g.kernel_count(), 13);
    }

    #[test]
    fn forced_depthwise_blocks_are_grouped() {
        let cfg = NetGenConfig {
            conv_range: (2, 2),
            fc_range: (1, 1),
            p_residual: 0.0,
            p_depthwise: 1.0,
            p_pool: 0.0,
            ..NetGenConfig::small()
        };
        let g = generate(&cfg, &mut substream(22, "depthwise")).unwrap();
        let grouped: Vec<_> = g
            .nodes()
            .filter(|n| n.kind == LayerKind::Conv2D && n.groups.is_some())
            .collect();
        assert_eq!(grouped.len(), 2);
        for n in grouped {
            assert_eq!(n.groups, n.c, "depthwise conv has one group per channel");
            assert_eq!(n.c, n.j);
        }
    }

    #[test]
    fn pool_replacement_stops_at_unit_extent() {
        // Twelve forced pool positions, but 32×32 only supports five
        // halvings; the rest must degrade to plain convolutions.
        let cfg = NetGenConfig {
            conv_range: (12, 12),
            fc_range: (1, 1),
            p_residual: 0.0,
            p_depthwise: 0.0,
            p_pool: 1.0,
            ..NetGenConfig::small()
        };
        let g = generate(&cfg, &mut substream(23, "pools")).unwrap();
        let seq = g.to_sequence(Default::default()).unwrap();
        let pools = seq.0.iter().filter(|k| **k == LayerKind::MaxPool2D).count();
        let convs = seq.0.iter().filter(|k| **k == LayerKind::Conv2D).count();
        assert_eq!(pools, 5);
        assert_eq!(convs, 7);
        assert!(validate(&g).into_result().is_ok());
    }

    #[test]
    fn generated_graphs_carry_weights_everywhere() {
        let g = generate(&NetGenConfig::small(), &mut substream(24, "weights")).unwrap();
        for n in g.nodes() {
            if n.expected_weight_shape().is_some() {
                assert!(n.weights.is_some(), "node {} has no weights", n.id);
            }
        }
    }
}
