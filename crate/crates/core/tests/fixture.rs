//! Golden tests around the committed `resnet20-like` fixture.
//!
//! Everything under `fixtures/` — the model document, the stimulus tensor,
//! and the golden outputs — is produced by this very file.  Run the suite
//! with `UPDATE_GOLDEN=1` to regenerate the files, then commit the diff
//! deliberately; without the variable the tests compare byte-for-byte.

use std::path::{Path, PathBuf};

use alias_forge::ga::{self, GaConfig};
use alias_forge::graph::{LayerKind, LayerSpec, ModelGraph, NodeId};
use alias_forge::metrics::{self, FitnessMode};
use alias_forge::rng::substream;
use alias_forge::tensor::{forward, Tensor};
use alias_forge::trace::{total_latency, trace, TraceParams};
use alias_forge::transforms::{apply_genome, random_genome};

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Compare `actual` against the committed golden, or rewrite the golden when
/// `UPDATE_GOLDEN` is set.
fn check_golden(name: &str, actual: &[u8]) {
    let path = fixtures_dir().join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(fixtures_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let golden = std::fs::read(&path)
        .unwrap_or_else(|e| panic!("missing golden {}: {e}; run with UPDATE_GOLDEN=1", name));
    assert!(
        golden == actual,
        "{name} drifted from its golden copy; regenerate with UPDATE_GOLDEN=1 \
         and commit the diff if the change is intended"
    );
}

fn emit(nodes: &mut Vec<LayerSpec>, build: impl FnOnce(NodeId) -> LayerSpec) -> NodeId {
    let id = nodes.len() as NodeId;
    nodes.push(build(id));
    id
}

fn conv_bn_relu(nodes: &mut Vec<LayerSpec>, src: NodeId, c: u32, j: u32, stride: u32) -> NodeId {
    let conv = emit(nodes, |id| LayerSpec::conv(id, src, c, j, 3, stride));
    let bn = emit(nodes, |id| LayerSpec::batch_norm(id, conv, j));
    emit(nodes, |id| LayerSpec::relu(id, bn))
}

fn identity_block(nodes: &mut Vec<LayerSpec>, src: NodeId, c: u32) -> NodeId {
    let mid = conv_bn_relu(nodes, src, c, c, 1);
    let conv = emit(nodes, |id| LayerSpec::conv(id, mid, c, c, 3, 1));
    let bn = emit(nodes, |id| LayerSpec::batch_norm(id, conv, c));
    let add = emit(nodes, |id| LayerSpec::add(id, vec![src, bn]));
    emit(nodes, |id| LayerSpec::relu(id, add))
}

/// The fixture: a scaled-down residual classifier in the CIFAR ResNet style.
/// Stem conv plus max-pool, three stages of identity blocks separated by
/// strided transition convs, a tail conv, global average pooling, and a
/// linear head — 22 kernel-emitting nodes in all.
fn resnet20_like() -> ModelGraph {
    let mut n = Vec::new();
    let input = emit(&mut n, |id| LayerSpec::input(id, 3, 32, 32));
    let stem = conv_bn_relu(&mut n, input, 3, 16, 1);
    let pool = emit(&mut n, |id| LayerSpec::max_pool(id, stem, 2, 2));
    let s1 = identity_block(&mut n, pool, 16);
    let s1 = identity_block(&mut n, s1, 16);
    let t1 = conv_bn_relu(&mut n, s1, 16, 32, 2);
    let s2 = identity_block(&mut n, t1, 32);
    let s2 = identity_block(&mut n, s2, 32);
    let t2 = conv_bn_relu(&mut n, s2, 32, 64, 2);
    let s3 = identity_block(&mut n, t2, 64);
    let tail = conv_bn_relu(&mut n, s3, 64, 64, 1);
    let gap = emit(&mut n, |id| LayerSpec::avg_pool(id, tail, 4, 4));
    let head = emit(&mut n, |id| LayerSpec::fully_connected(id, gap, 64, 10));
    let output = emit(&mut n, |id| LayerSpec::output(id, head));
    ModelGraph::new("resnet20-like", input, output, n)
}

#[test]
fn fixture_document_matches_the_constructor() {
    check_golden("resnet20-like.json", resnet20_like().to_json().as_bytes());
}

#[test]
fn fixture_deserializes_to_twenty_two_kernels() {
    let text = std::fs::read_to_string(fixtures_dir().join("resnet20-like.json")).unwrap();
    let g = ModelGraph::from_json(&text).unwrap();
    assert_eq!(g.kernel_count(), 22);
    let kinds: Vec<LayerKind> = g.to_sequence(Default::default()).unwrap().0;
    assert!(kinds.contains(&LayerKind::AvgPool2D));
    assert!(kinds.contains(&LayerKind::MaxPool2D));
    assert!(kinds.contains(&LayerKind::Add));
    assert_eq!(kinds.len(), 22);
}

#[test]
fn fixture_trace_matches_golden_csv() {
    let g = resnet20_like();
    let tm = trace(&g, &TraceParams::default()).unwrap();
    check_golden("resnet20-like.trace.csv", tm.export_csv().as_bytes());
}

#[test]
fn fixture_budget_decision_is_stable() {
    let g = resnet20_like();
    let params = TraceParams::default();
    let baseline = total_latency(&trace(&g, &params).unwrap(), &params);
    let genome = random_genome(&g, 0).unwrap();
    let obf = apply_genome(&g, &genome).unwrap();
    let ok = metrics::budget_ok(&trace(&obf, &params).unwrap(), baseline, 0.2, &params);
    check_golden("resnet20-like.budget_ok.txt", format!("{ok}\n").as_bytes());
}

#[test]
fn fixture_forward_is_preserved_under_a_random_genome() {
    let mut g = resnet20_like();
    g.init_missing_weights(&mut substream(0, "fixture-weights"));
    let stimulus = Tensor::random(
        alias_forge::graph::Shape { c: 3, h: 32, w: 32 },
        &mut substream(0, "fixture-stimulus"),
    );
    check_golden("stimulus.raw", &stimulus.to_raw());
    let loaded = Tensor::from_raw(&std::fs::read(fixtures_dir().join("stimulus.raw")).unwrap())
        .unwrap();

    let genome = random_genome(&g, 0).unwrap();
    let obf = apply_genome(&g, &genome).unwrap();
    let before = forward(&g, &loaded).unwrap();
    let after = forward(&obf, &loaded).unwrap();
    assert!(
        after.approx_eq(&before, 1e-4, 1e-6),
        "rewrite changed the function: max |Δ| = {}",
        after.max_abs_diff(&before)
    );
}

#[test]
fn fixture_search_is_monotone_and_balances_the_trace() {
    let g = resnet20_like();
    let params = TraceParams::default();
    let cfg = GaConfig::default();
    let outcome = ga::evolve(&g, &cfg, &params, FitnessMode::Verbatim).unwrap();

    // Elitism makes the best-so-far fitness non-increasing generation over
    // generation.
    let best = outcome.log.best_per_generation();
    assert_eq!(best.len(), cfg.generations);
    for w in best.windows(2) {
        assert!(w[1] <= w[0], "best fitness rose between generations: {w:?}");
    }

    // The search should flatten the per-kernel trace profile markedly; a
    // ≥30% drop in summed per-feature deviation is the bar.  This
    // residual-style fixture is nearly all convolution slots, so it takes a
    // wider population than the default to reach the budget, and hinge mode
    // to keep the deviation objective active once inside it.
    let wide = GaConfig {
        population_size: 48,
        seed: alias_forge::rng::sub_seed(0, "ga"),
        ..GaConfig::default()
    };
    let outcome = ga::evolve(&g, &wide, &params, FitnessMode::Hinge).unwrap();
    assert!(outcome.best_is_feasible);
    let before = trace(&g, &params).unwrap();
    let baseline = metrics::fitness(
        &before,
        outcome.best.report.baseline_latency,
        wide.budget,
        &params,
        FitnessMode::Hinge,
    )
    .unwrap();
    let sd_before = baseline.stdev_sum;
    let sd_after = outcome.best.report.stdev_sum;
    assert!(
        sd_after <= 0.7 * sd_before,
        "trace deviation only moved {sd_before:.1} -> {sd_after:.1}"
    );
}
