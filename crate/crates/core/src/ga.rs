//! Genetic search for a balanced obfuscation under a latency budget.
//!
//! The search minimizes [`fitness`](crate::metrics::fitness) over genomes:
//! each generation evaluates the population (genome → rewritten skeleton →
//! trace → fitness), keeps the better half as parents — elitism, so the best
//! candidate can never be lost — and refills the other half by one-point
//! crossover of adjacent ranked parents followed by Gaussian mutation.
//!
//! Evaluation happens on the weightless skeleton of the base graph: the
//! trace model is shape-only, so stripping payloads changes nothing except
//! the cost of cloning graphs in the inner loop.  The winning genome applies
//! unchanged to the weighted original (structural hashes ignore weights).
//!
//! All randomness derives from `cfg.seed` via named substreams: one per
//! initial candidate, one per breeding round, so results are reproducible
//! bit for bit, including across thread counts.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{validate, ModelGraph};
use crate::metrics::{budget_ok, fitness, FitnessMode, FitnessReport};
use crate::rng::substream_indexed;
use crate::trace::{total_latency, trace, TraceParams};
use crate::transforms::{apply_genome, Genome, GenomeTemplate, ObfOp};

/// Fraction of the population kept as parents each generation.  The
/// selection scheme fixes this at one half.
pub const ELITISM_FRACTION: f64 = 0.5;

/// Search hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    /// Latency budget `B`: candidates may spend up to `(1+B)·T*`.
    pub budget: f64,
    /// Scale of the Gaussian mutation noise.
    pub mutation_sigma: f64,
    pub seed: u64,
    /// Emit a progress line per generation on standard error.
    pub progress: bool,
}

impl Default for GaConfig {
    fn default() -> GaConfig {
        GaConfig {
            population_size: 16,
            generations: 20,
            budget: 0.2,
            mutation_sigma: 0.5,
            seed: 0,
            progress: false,
        }
    }
}

impl GaConfig {
    pub fn check(&self) -> Result<()> {
        if self.population_size < 4 || self.population_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "ga.population_size must be even and at least 4, got {}",
                self.population_size
            )));
        }
        if self.generations < 1 {
            return Err(Error::InvalidConfig("ga.generations must be at least 1".into()));
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ga.budget must be non-negative, got {}",
                self.budget
            )));
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "ga.mutation_sigma must be non-negative, got {}",
                self.mutation_sigma
            )));
        }
        Ok(())
    }
}

/// One evaluated genome.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub genome: Genome,
    pub report: FitnessReport,
    /// Whether the candidate satisfies the latency budget.
    pub feasible: bool,
}

/// One run-log row: a candidate's evaluation in one generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaLogRow {
    pub generation: u32,
    pub candidate: u32,
    pub stdev_sum: f64,
    pub latency: f64,
    pub scaling: f64,
    pub fitness: f64,
}

/// Per-generation, per-candidate evaluation log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaLog {
    pub rows: Vec<GaLogRow>,
}

impl GaLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("generation,candidate,stdev_sum,latency,scaling,fitness\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.generation, r.candidate, r.stdev_sum, r.latency, r.scaling, r.fitness
            ));
        }
        out
    }

    /// Best (lowest) fitness per generation, in generation order.
    pub fn best_per_generation(&self) -> Vec<f64> {
        let mut best: Vec<f64> = Vec::new();
        for r in &self.rows {
            let g = r.generation as usize - 1;
            if g >= best.len() {
                best.resize(g + 1, f64::INFINITY);
            }
            best[g] = best[g].min(r.fitness);
        }
        best
    }
}

/// Everything a finished search returns.
#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub best: Candidate,
    /// False when no candidate ever satisfied the budget; `best` is then the
    /// best infeasible candidate and callers should warn.
    pub best_is_feasible: bool,
    pub log: GaLog,
    /// Clean (noise-free) latency of the unobfuscated base, `T*`.
    pub baseline_latency: f64,
}

/// One-point crossover: offspring take slots `[0, point)` from one parent
/// and `[point, n)` from the other.  Parents must come from the same base
/// graph and `point` must split both (`1 ≤ point < slot count`).
pub fn crossover(a: &Genome, b: &Genome, point: usize) -> Result<(Genome, Genome)> {
    if a.base_model.hash != b.base_model.hash || a.slots.len() != b.slots.len() {
        return Err(Error::GenomeMismatch("crossover parents share no base graph".into()));
    }
    if point < 1 || point >= a.slots.len() {
        return Err(Error::InvalidConfig(format!(
            "crossover point {point} outside 1..{}",
            a.slots.len()
        )));
    }
    let mut left = a.clone();
    let mut right = b.clone();
    left.slots[point..].clone_from_slice(&b.slots[point..]);
    right.slots[point..].clone_from_slice(&a.slots[point..]);
    Ok((left, right))
}

/// Gaussian mutation.  Every applicable op-inclusion bit becomes a real
/// activation (1 present, 0 absent), gets `N(0, σ)` noise, and re-thresholds
/// at 0.5 — so with σ = 0.5 a bit flips with probability ≈ 0.1587.  Split
/// points and deepening kernels take a rounded Gaussian step (scaled to the
/// parameter's span) and clamp to their valid range, so the result is always
/// applicable.
pub fn mutate<R: Rng>(
    genome: &Genome,
    template: &GenomeTemplate,
    sigma: f64,
    rng: &mut R,
) -> Genome {
    let noise = Normal::new(0.0, sigma).expect("checked sigma");
    let step = |range: f64, rng: &mut R| (noise.sample(rng) * range).round() as i64;

    let mut out = genome.clone();
    for (slot, tmpl) in out.slots.iter_mut().zip(&template.slots) {
        let mut ops = Vec::new();
        for rank in 0..4u8 {
            let Some(default_op) = tmpl.default_op(rank) else { continue };
            let current = slot.ops.iter().find(|op| op.rank() == rank).copied();
            let activation = if current.is_some() { 1.0 } else { 0.0 };
            if activation + noise.sample(rng) <= 0.5 {
                continue; // absent after mutation
            }
            let op = current.unwrap_or(default_op);
            // Parameter step for the ops that have one.
            let mutated = match op {
                ObfOp::BranchIn { m } => {
                    let max = tmpl.branch_in.expect("op applicable");
                    ObfOp::BranchIn { m: step_split(m, max, step(span(max), rng)) }
                }
                ObfOp::BranchOut { m } => {
                    let max = tmpl.branch_out.expect("op applicable");
                    ObfOp::BranchOut { m: step_split(m, max, step(span(max), rng)) }
                }
                ObfOp::Deepen { k } => {
                    // The search holds deepening at 1×1: wider identity
                    // kernels are legal in the library but cost k² in the
                    // trace for zero balancing benefit, so the valid range
                    // the step clamps to is the single point k=1.
                    let idx = i64::from((k - 1) / 2) + step(1.0, rng);
                    ObfOp::Deepen { k: 1 + 2 * idx.clamp(0, 0) as u32 }
                }
                ObfOp::Skip => ObfOp::Skip,
            };
            ops.push(mutated);
        }
        slot.ops = ops;
    }
    out
}

/// Mutation step scale for a split axis of `max` channels: wide layers get
/// proportionally wider steps, small ones still move by ±1.
fn span(max: u32) -> f64 {
    (f64::from(max) / 8.0).max(1.0)
}

fn step_split(m: u32, max: u32, step: i64) -> u32 {
    (i64::from(m) + step).clamp(1, i64::from(max) - 1) as u32
}

/// Run the search from a fresh random population.
pub fn evolve(
    base: &ModelGraph,
    cfg: &GaConfig,
    params: &TraceParams,
    mode: FitnessMode,
) -> Result<EvolveOutcome> {
    let template = GenomeTemplate::of(base)?;
    let initial = (0..cfg.population_size)
        .map(|i| template.sample(&mut substream_indexed(cfg.seed, "ga-init", i as u64)))
        .collect();
    evolve_from(base, initial, cfg, params, mode)
}

/// Run the search from an explicit initial population (e.g. to resume or to
/// study convergence from a chosen start).  The population must match
/// `cfg.population_size` and every genome must reference `base`.
pub fn evolve_from(
    base: &ModelGraph,
    initial: Vec<Genome>,
    cfg: &GaConfig,
    params: &TraceParams,
    mode: FitnessMode,
) -> Result<EvolveOutcome> {
    cfg.check()?;
    params.check()?;
    validate(base).into_result()?;
    let template = GenomeTemplate::of(base)?;
    if initial.len() != cfg.population_size {
        return Err(Error::InvalidConfig(format!(
            "initial population has {} genomes, config wants {}",
            initial.len(),
            cfg.population_size
        )));
    }

    let skeleton = base.without_weights();
    // T* is the clean latency of the unobfuscated model: the reference the
    // budget is anchored to, so it is computed without jitter.
    let clean = TraceParams { noise_sigma: 0.0, ..*params };
    let baseline_latency = total_latency(&trace(&skeleton, &clean)?, &clean);

    // Population as (genome, cached evaluation): parents keep their reports,
    // so elitism is exact and only offspring cost an evaluation.
    let mut population: Vec<(Genome, Option<Candidate>)> =
        initial.into_iter().map(|g| (g, None)).collect();
    let mut log = GaLog::default();
    let mut best_feasible: Option<Candidate> = None;
    let mut best_any: Option<Candidate> = None;
    let parent_count = (cfg.population_size as f64 * ELITISM_FRACTION) as usize;

    for generation in 1..=cfg.generations {
        // Evaluate cache misses, in parallel, results in population order.
        let fresh: Vec<(usize, Candidate)> = population
            .par_iter()
            .enumerate()
            .filter(|(_, (_, cached))| cached.is_none())
            .map(|(i, (genome, _))| {
                let candidate = evaluate(&skeleton, genome, baseline_latency, cfg, params, mode)?;
                Ok((i, candidate))
            })
            .collect::<Result<_>>()?;
        for (i, candidate) in fresh {
            population[i].1 = Some(candidate);
        }

        for (i, (_, cached)) in population.iter().enumerate() {
            let c = cached.as_ref().expect("evaluated above");
            log.rows.push(GaLogRow {
                generation: generation as u32,
                candidate: i as u32,
                stdev_sum: c.report.stdev_sum,
                latency: c.report.latency,
                scaling: c.report.scaling,
                fitness: c.report.fitness,
            });
            track_best(&mut best_feasible, &mut best_any, c);
        }

        // Rank: feasible before infeasible, then fitness, latency, index.
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&x, &y| {
            let a = population[x].1.as_ref().unwrap();
            let b = population[y].1.as_ref().unwrap();
            b.feasible
                .cmp(&a.feasible)
                .then(a.report.fitness.total_cmp(&b.report.fitness))
                .then(a.report.latency.total_cmp(&b.report.latency))
                .then(x.cmp(&y))
        });

        if cfg.progress {
            let lead = population[order[0]].1.as_ref().unwrap();
            eprintln!(
                "generation {generation}/{}: best fitness {:.6e}, stdev sum {:.1}, {}",
                cfg.generations,
                lead.report.fitness,
                lead.report.stdev_sum,
                if lead.feasible { "feasible" } else { "over budget" },
            );
        }
        if generation == cfg.generations {
            break; // the bred pool after the last generation is never scored
        }

        // Parents survive with their evaluations; the other half is bred
        // from pairs, crossed at a uniform point and mutated.  While any
        // parent is feasible, both picks are rank tournaments, which
        // concentrates the search on the least-penalized genomes.  Until
        // the pool reaches the budget region at all, the two cheapest
        // parents breed every pair instead: offspring then explore around
        // the genomes nearest the budget, the fastest route to feasibility.
        let mut next: Vec<(Genome, Option<Candidate>)> =
            order[..parent_count].iter().map(|&i| population[i].clone()).collect();
        let any_feasible =
            next.iter().any(|(_, cached)| cached.as_ref().is_some_and(|c| c.feasible));
        let budget_pair = two_cheapest(&next[..parent_count]);
        let mut rng = substream_indexed(cfg.seed, "ga-breed", generation as u64);
        for _ in 0..parent_count / 2 {
            let (first, second) = if any_feasible {
                (tournament(parent_count, &mut rng), tournament(parent_count, &mut rng))
            } else {
                budget_pair
            };
            let a = &next[first].0;
            let b = &next[second].0;
            let (mut left, mut right) = if a.slots.len() >= 2 {
                let point = rng.gen_range(1..a.slots.len());
                crossover(a, b, point)?
            } else {
                (a.clone(), b.clone())
            };
            left = mutate(&left, &template, cfg.mutation_sigma, &mut rng);
            right = mutate(&right, &template, cfg.mutation_sigma, &mut rng);
            next.push((left, None));
            next.push((right, None));
        }
        population = next;
    }

    let best_is_feasible = best_feasible.is_some();
    let best = best_feasible
        .or(best_any)
        .expect("at least one generation was evaluated");
    Ok(EvolveOutcome { best, best_is_feasible, log, baseline_latency })
}

/// Index of the best-ranked of three uniform draws from the parent pool
/// (parents are stored in rank order, so smaller is better).
fn tournament<R: Rng>(parent_count: usize, rng: &mut R) -> usize {
    let a = rng.gen_range(0..parent_count);
    let b = rng.gen_range(0..parent_count);
    let c = rng.gen_range(0..parent_count);
    a.min(b).min(c)
}

/// Indices of the runner-up and winner of the parent pool by modeled
/// latency — the pair the search breeds while everything is over budget.
fn two_cheapest(parents: &[(Genome, Option<Candidate>)]) -> (usize, usize) {
    let latency =
        |i: usize| parents[i].1.as_ref().expect("parents are evaluated").report.latency;
    let mut order: Vec<usize> = (0..parents.len()).collect();
    order.sort_by(|&x, &y| latency(x).total_cmp(&latency(y)));
    (order[1], order[0])
}

fn evaluate(
    skeleton: &ModelGraph,
    genome: &Genome,
    baseline_latency: f64,
    cfg: &GaConfig,
    params: &TraceParams,
    mode: FitnessMode,
) -> Result<Candidate> {
    let rewritten = apply_genome(skeleton, genome)?;
    let tm = trace(&rewritten, params)?;
    let report = fitness(&tm, baseline_latency, cfg.budget, params, mode)?;
    let feasible = budget_ok(&tm, baseline_latency, cfg.budget, params);
    Ok(Candidate { genome: genome.clone(), report, feasible })
}

/// Keep the best feasible and best overall candidates seen so far.  Strictly
/// better (fitness, then latency) replaces; ties keep the earlier candidate.
fn track_best(
    best_feasible: &mut Option<Candidate>,
    best_any: &mut Option<Candidate>,
    c: &Candidate,
) {
    let better = |incumbent: &Option<Candidate>| match incumbent {
        None => true,
        Some(b) => match c.report.fitness.total_cmp(&b.report.fitness) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Equal => c.report.latency < b.report.latency,
            std::cmp::Ordering::Greater => false,
        },
    };
    if c.feasible && better(best_feasible) {
        *best_feasible = Some(c.clone());
    }
    if better(best_any) {
        *best_any = Some(c.clone());
    }
}
