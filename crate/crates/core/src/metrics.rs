//! Security and similarity metrics.
//!
//! Three measurements close the loop between defense and attack:
//!
//! * [`stdev`] — sample standard deviation of a trace feature column.  The
//!   defense's goal is to make all kernels look alike, i.e. drive these
//!   down.
//! * [`fitness`] — the budget-constrained objective the search minimizes:
//!   the per-feature deviations summed, multiplied by a scaling term that
//!   anchors total latency `T` to the budgeted baseline `(1+B)·T*`.
//! * [`ler`] — layer error rate: edit distance between an attacker's
//!   predicted layer sequence and the truth, normalized by the truth length.
//!   An LER above 1 means the reconstruction is worse than useless.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LayerKind, LayerSequence};
use crate::trace::{total_latency, TraceMatrix, TraceParams};

/// Keeps the balancing objective alive inside the budget in hinge mode.
pub const HINGE_EPSILON: f64 = 1e-6;

/// Sample standard deviation (denominator `N−1`).
pub fn stdev(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::DegenerateTrace);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

/// How the budget scaling term treats latencies under the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessMode {
    /// The plain quadratic form `((T−(1+B)T*)/T*)²`.  Note it is
    /// symmetric around the budget — being under budget is penalized too,
    /// and the objective vanishes exactly at the budget.
    #[default]
    Verbatim,
    /// One-sided variant: `max(0, (T−(1+B)T*)/T*)² + ε`.  Within budget the
    /// scaling collapses to the small constant ε, so candidates are ranked
    /// purely by how balanced their traces are.
    Hinge,
}

/// The decomposed objective for one candidate trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    /// Sample deviation of each feature column: cycles, read bytes, write
    /// bytes.
    pub stdev_per_feature: [f64; 3],
    /// Their sum — the quantity the defense wants small.
    pub stdev_sum: f64,
    /// Modeled total latency `T` of the candidate.
    pub latency: f64,
    /// Modeled latency `T*` of the unobfuscated baseline.
    pub baseline_latency: f64,
    /// Budget `B` as a fraction of `T*`.
    pub budget: f64,
    /// The budget penalty factor.
    pub scaling: f64,
    /// `stdev_sum · scaling`; lower is better.
    pub fitness: f64,
}

fn check_budget_inputs(baseline_latency: f64, budget: f64) -> Result<()> {
    if !(baseline_latency > 0.0 && baseline_latency.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "baseline latency must be positive, got {baseline_latency}"
        )));
    }
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::InvalidConfig(format!("budget must be non-negative, got {budget}")));
    }
    Ok(())
}

/// Evaluate the constrained objective of a candidate trace against the
/// baseline latency.  Requires at least two kernels (a single row has no
/// deviation).
pub fn fitness(
    tm: &TraceMatrix,
    baseline_latency: f64,
    budget: f64,
    params: &TraceParams,
    mode: FitnessMode,
) -> Result<FitnessReport> {
    check_budget_inputs(baseline_latency, budget)?;
    let columns: [Vec<f64>; 3] = [
        tm.rows.iter().map(|r| r.cycles).collect(),
        tm.rows.iter().map(|r| r.read_bytes).collect(),
        tm.rows.iter().map(|r| r.write_bytes).collect(),
    ];
    let stdev_per_feature =
        [stdev(&columns[0])?, stdev(&columns[1])?, stdev(&columns[2])?];
    let stdev_sum: f64 = stdev_per_feature.iter().sum();
    let latency = total_latency(tm, params);
    let overshoot = (latency - (1.0 + budget) * baseline_latency) / baseline_latency;
    let scaling = match mode {
        FitnessMode::Verbatim => overshoot.powi(2),
        FitnessMode::Hinge => overshoot.max(0.0).powi(2) + HINGE_EPSILON,
    };
    Ok(FitnessReport {
        stdev_per_feature,
        stdev_sum,
        latency,
        baseline_latency,
        budget,
        scaling,
        fitness: stdev_sum * scaling,
    })
}

/// The budget constraint: `T ≤ (1+B)·T*`.
pub fn budget_ok(
    tm: &TraceMatrix,
    baseline_latency: f64,
    budget: f64,
    params: &TraceParams,
) -> bool {
    total_latency(tm, params) <= (1.0 + budget) * baseline_latency
}

/// Levenshtein distance between two layer sequences: the minimum number of
/// insertions, deletions, and substitutions, all at unit cost.  Two-row DP.
pub fn edit_distance(a: &[LayerKind], b: &[LayerKind]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ka) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &kb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ka != kb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Layer error rate: `ED(predicted, truth) / |truth|`.
pub fn ler(predicted: &LayerSequence, truth: &LayerSequence) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    Ok(edit_distance(&predicted.0, &truth.0) as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::trace::KernelTrace;
    use rand::Rng;
    use LayerKind::*;

    /// Trace rows that are strongly compute-bound, so total latency is the
    /// plain sum of the cycles column.
    fn tm_with_cycles(cycles: &[f64]) -> TraceMatrix {
        TraceMatrix {
            rows: cycles
                .iter()
                .enumerate()
                .map(|(i, &c)| KernelTrace {
                    node_id: i as u32,
                    label: None,
                    cycles: c,
                    read_bytes: 1.0,
                    write_bytes: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn stdev_matches_hand_value() {
        assert_eq!(stdev(&[2.0, 4.0, 6.0]).unwrap(), 2.0);
        assert_eq!(stdev(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn stdev_rejects_degenerate_input() {
        assert!(matches!(stdev(&[1.0]), Err(Error::DegenerateTrace)));
        assert!(matches!(stdev(&[]), Err(Error::DegenerateTrace)));
    }

    #[test]
    fn stdev_agrees_with_welford() {
        // Independent one-pass oracle.
        fn welford(values: &[f64]) -> f64 {
            let (mut mean, mut m2) = (0.0f64, 0.0f64);
            for (i, &v) in values.iter().enumerate() {
                let delta = v - mean;
                mean += delta / (i + 1) as f64;
                m2 += delta * (v - mean);
            }
            (m2 / (values.len() - 1) as f64).sqrt()
        }
        let mut rng = substream(31, "stdev-oracle");
        for trial in 0..50 {
            let n = 2 + (trial % 40);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1000.0)).collect();
            let ours = stdev(&values).unwrap();
            let oracle = welford(&values);
            assert!((ours - oracle).abs() <= 1e-12 * oracle.max(1.0), "{ours} vs {oracle}");
        }
    }

    #[test]
    fn stdev_is_translation_invariant_and_homogeneous() {
        let mut rng = substream(32, "stdev-props");
        for _ in 0..20 {
            let values: Vec<f64> = (0..16).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let s = stdev(&values).unwrap();
            let shifted: Vec<f64> = values.iter().map(|v| v + 123.25).collect();
            assert!((stdev(&shifted).unwrap() - s).abs() < 1e-9 * s.max(1.0));
            let scaled: Vec<f64> = values.iter().map(|v| v * -3.0).collect();
            assert!((stdev(&scaled).unwrap() - 3.0 * s).abs() < 1e-9 * s.max(1.0));
        }
    }

    #[test]
    fn fitness_vanishes_exactly_at_budget() {
        // T = 1000, T* = 800, B = 0.25: T = (1+B)·T* exactly.
        let tm = tm_with_cycles(&[400.0, 600.0]);
        let params = TraceParams::default();
        let r = fitness(&tm, 800.0, 0.25, &params, FitnessMode::Verbatim).unwrap();
        assert_eq!(r.scaling, 0.0);
        assert_eq!(r.fitness, 0.0);
        assert!(r.stdev_sum > 0.0);
    }

    #[test]
    fn unmodified_latency_scales_to_budget_squared() {
        // T = T*, B = 0.2 → scaling = (−0.2)² = 0.04.
        let tm = tm_with_cycles(&[300.0, 700.0]);
        let params = TraceParams::default();
        let r = fitness(&tm, 1000.0, 0.2, &params, FitnessMode::Verbatim).unwrap();
        assert!((r.scaling - 0.04).abs() < 1e-12);
        assert_eq!(r.fitness, r.stdev_sum * r.scaling);
    }

    #[test]
    fn doubling_the_trace_doubles_deviations() {
        let params = TraceParams::default();
        let tm = tm_with_cycles(&[100.0, 250.0, 400.0]);
        let doubled = tm_with_cycles(&[200.0, 500.0, 800.0]);
        let a = fitness(&tm, 500.0, 0.2, &params, FitnessMode::Verbatim).unwrap();
        let b = fitness(&doubled, 500.0, 0.2, &params, FitnessMode::Verbatim).unwrap();
        assert!((b.stdev_per_feature[0] - 2.0 * a.stdev_per_feature[0]).abs() < 1e-9);
        assert!((b.latency - 2.0 * a.latency).abs() < 1e-9);
        // Brute-force recomputation of the scaling form.
        let expect = ((b.latency - 1.2 * 500.0) / 500.0).powi(2);
        assert!((b.scaling - expect).abs() < 1e-12);
    }

    #[test]
    fn hinge_mode_frees_the_objective_inside_budget() {
        let params = TraceParams::default();
        let tm = tm_with_cycles(&[100.0, 200.0]); // T = 300 < 1.2 · 400
        let r = fitness(&tm, 400.0, 0.2, &params, FitnessMode::Hinge).unwrap();
        assert_eq!(r.scaling, HINGE_EPSILON);
        assert_eq!(r.fitness, r.stdev_sum * HINGE_EPSILON);
        // Over budget both modes agree up to ε.
        let over = tm_with_cycles(&[400.0, 200.0]); // T = 600 > 480
        let h = fitness(&over, 400.0, 0.2, &params, FitnessMode::Hinge).unwrap();
        let v = fitness(&over, 400.0, 0.2, &params, FitnessMode::Verbatim).unwrap();
        assert!((h.scaling - (v.scaling + HINGE_EPSILON)).abs() < 1e-15);
    }

    #[test]
    fn budget_gate_is_the_published_inequality() {
        let params = TraceParams::default();
        let tm = tm_with_cycles(&[500.0, 500.0]); // T = 1000
        assert!(budget_ok(&tm, 1000.0, 0.0, &params)); // T = T*
        assert!(budget_ok(&tm, 1000.0, 0.5, &params));
        assert!(!budget_ok(&tm, 999.0, 0.0, &params));
        assert!(budget_ok(&tm, 900.0, 0.2, &params)); // 1000 ≤ 1080
    }

    #[test]
    fn degenerate_traces_are_rejected() {
        let params = TraceParams::default();
        let tm = tm_with_cycles(&[1.0]);
        assert!(matches!(
            fitness(&tm, 1.0, 0.2, &params, FitnessMode::Verbatim),
            Err(Error::DegenerateTrace)
        ));
        assert!(fitness(&tm, 0.0, 0.2, &params, FitnessMode::Verbatim).is_err());
        assert!(fitness(&tm, 1.0, -0.5, &params, FitnessMode::Verbatim).is_err());
    }

    #[test]
    fn ler_matches_hand_values() {
        let truth = LayerSequence(vec![Conv2D, FullyConnected]);
        assert_eq!(ler(&truth.clone(), &truth).unwrap(), 0.0);
        let predicted = LayerSequence(vec![Conv2D, Conv2D, FullyConnected]);
        assert_eq!(ler(&predicted, &truth).unwrap(), 0.5);
        // Five pure insertions over a three-layer truth: LER can exceed 1.
        let truth3 = LayerSequence(vec![Conv2D, Conv2D, FullyConnected]);
        let long = LayerSequence(vec![
            Conv2D, Add, Add, Conv2D, Add, Add, Add, FullyConnected,
        ]);
        assert_eq!(ler(&long, &truth3).unwrap(), 5.0 / 3.0);
    }

    #[test]
    fn ler_rejects_empty_truth() {
        let empty = LayerSequence(vec![]);
        let pred = LayerSequence(vec![Conv2D]);
        assert!(matches!(ler(&pred, &empty), Err(Error::EmptyTruth)));
        // Empty prediction against non-empty truth is fine: all deletions.
        let truth = LayerSequence(vec![Conv2D, Add]);
        assert_eq!(ler(&empty, &truth).unwrap(), 1.0);
    }

    fn random_seq<R: Rng>(rng: &mut R, max_len: usize) -> Vec<LayerKind> {
        const ALPHABET: [LayerKind; 6] =
            [Conv2D, FullyConnected, MaxPool2D, AvgPool2D, Add, Concat];
        let len = rng.gen_range(0..=max_len);
        (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
    }

    #[test]
    fn edit_distance_agrees_with_full_matrix_oracle() {
        fn oracle(a: &[LayerKind], b: &[LayerKind]) -> usize {
            let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
            for (i, row) in d.iter_mut().enumerate() {
                row[0] = i;
            }
            for j in 0..=b.len() {
                d[0][j] = j;
            }
            for i in 1..=a.len() {
                for j in 1..=b.len() {
                    let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                    d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
                }
            }
            d[a.len()][b.len()]
        }
        let mut rng = substream(33, "ed-oracle");
        for _ in 0..200 {
            let a = random_seq(&mut rng, 12);
            let b = random_seq(&mut rng, 12);
            assert_eq!(edit_distance(&a, &b), oracle(&a, &b), "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn edit_distance_is_a_metric() {
        let mut rng = substream(34, "ed-metric");
        for _ in 0..100 {
            let a = random_seq(&mut rng, 10);
            let b = random_seq(&mut rng, 10);
            let c = random_seq(&mut rng, 10);
            assert_eq!(edit_distance(&a, &a), 0);
            assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            assert!(
                edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c),
                "triangle violated for {a:?} {b:?} {c:?}"
            );
        }
    }
}
