//! Command-line front end for the obfuscation pipeline.
//!
//! One binary, six subcommands:
//!
//! * `gen` — sample a corpus of random victim networks onto disk.
//! * `obfuscate` — search for a balanced rewrite of one model.
//! * `trace` — print the analytic per-kernel trace as CSV.
//! * `attack train` / `attack predict` — fit and run the simulated
//!   architecture-stealing attack.
//! * `eval` — obfuscate, trace, attack, and score end to end.
//! * `report` — render a saved report document as a table.
//!
//! Every command loads the same [`RunConfig`] (optional TOML file plus flag
//! overrides) and prints `config <hash> seed <seed>` on stderr, so any run
//! can be reproduced from its log line alone.  Exit codes: 0 success, 1
//! usage error, 2 validation or I/O error, 3 the search finished but no
//! candidate met the latency budget.
//!
//! `ALIAS_FORGE_THREADS` caps worker parallelism (0 or unset picks the
//! default).

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use alias_forge::attack::{self, AttackPredictor, DefenseReport, PredictorKind};
use alias_forge::config::RunConfig;
use alias_forge::ga;
use alias_forge::graph::{ModelGraph, SequenceOptions};
use alias_forge::metrics::{self, FitnessMode};
use alias_forge::netgen;
use alias_forge::trace::{trace, TraceMatrix};

#[derive(Parser)]
#[command(
    name = "alias-forge",
    version,
    about = "Layer-balancing DNN obfuscation, analytic side-channel traces, \
             and a simulated architecture-stealing attack"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Configuration file (TOML; every key optional).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Latency budget as a fraction over baseline (e.g. 0.2 allows +20%).
    #[arg(long, global = true)]
    budget: Option<f64>,
    /// How the fitness function treats latencies under the budget.
    #[arg(long, global = true, value_enum, value_name = "MODE")]
    fitness_mode: Option<FitnessModeArg>,
    /// Standard deviation of the trace jitter; 0 disables noise.
    #[arg(long, global = true, value_name = "SIGMA")]
    noise_sigma: Option<f64>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FitnessModeArg {
    Verbatim,
    Hinge,
}

impl From<FitnessModeArg> for FitnessMode {
    fn from(arg: FitnessModeArg) -> FitnessMode {
        match arg {
            FitnessModeArg::Verbatim => FitnessMode::Verbatim,
            FitnessModeArg::Hinge => FitnessMode::Hinge,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus of random victim networks.
    Gen {
        /// Number of networks to generate.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Directory for the model documents and manifest.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also serialize weights (large; shapes alone drive the trace).
        #[arg(long)]
        weights: bool,
    },
    /// Search for a balanced obfuscation of one model.
    Obfuscate {
        /// Victim model document.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Directory for genome, obfuscated model, and per-generation log.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print the analytic per-kernel trace as CSV on stdout.
    Trace {
        /// Model document to trace.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
    /// Train or run the simulated architecture-stealing attack.
    Attack {
        #[command(subcommand)]
        mode: AttackCmd,
    },
    /// Obfuscate, trace, attack, and score one model end to end.
    Eval {
        /// Victim model document.
        #[arg(long, value_name = "FILE", required_unless_present = "victims")]
        model: Option<PathBuf>,
        /// Directory of victim documents: one summary row each, then medians.
        #[arg(long, value_name = "DIR", conflicts_with = "model")]
        victims: Option<PathBuf>,
        /// Training corpus directory; networks are generated from the config
        /// when omitted.
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        /// Pre-trained predictor document; trained fresh when omitted.
        #[arg(long, value_name = "FILE")]
        predictor: Option<PathBuf>,
        /// Write the report document here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Render a saved report document as a human-readable table.
    Report {
        /// Report document produced by `eval`.
        #[arg(long, value_name = "FILE")]
        path: PathBuf,
    },
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Fit the per-kernel classifier on a corpus of model documents.
    Train {
        /// Corpus directory (`gen` output works as-is).
        #[arg(long, value_name = "DIR")]
        corpus: PathBuf,
        /// Where to write the predictor document.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also report accuracy over a held-out by-graph split.
        #[arg(long)]
        holdout: bool,
    },
    /// Reconstruct a layer sequence from a victim model or trace.
    Predict {
        /// Predictor document from `attack train`.
        #[arg(long, value_name = "FILE")]
        predictor: PathBuf,
        /// Victim model document to trace and attack.
        #[arg(
            long,
            value_name = "FILE",
            required_unless_present = "trace",
            conflicts_with = "trace"
        )]
        model: Option<PathBuf>,
        /// Trace CSV as printed by `trace`; "-" reads stdin.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// Original (unobfuscated) model; adds reconstruction scores.
        #[arg(long, value_name = "FILE")]
        truth: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Gen { count, out, weights } => cmd_gen(&cfg, count, &out, weights),
        Command::Obfuscate { model, out } => cmd_obfuscate(&cfg, &model, &out),
        Command::Trace { model } => cmd_trace(&cfg, &model),
        Command::Attack { mode } => match mode {
            AttackCmd::Train { corpus, out, holdout } => {
                cmd_attack_train(&cfg, &corpus, &out, holdout)
            }
            AttackCmd::Predict { predictor, model, trace, truth } => {
                cmd_attack_predict(&cfg, &predictor, model.as_deref(), trace.as_deref(), truth.as_deref())
            }
        },
        Command::Eval { model, victims, corpus, predictor, out } => cmd_eval(
            &cfg,
            model.as_deref(),
            victims.as_deref(),
            corpus.as_deref(),
            predictor.as_deref(),
            out.as_deref(),
        ),
        Command::Report { path } => cmd_report(&path),
    }
}

/// Apply `ALIAS_FORGE_THREADS` before any parallel work runs.
fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("ALIAS_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("ALIAS_FORGE_THREADS must be an integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

/// Config file, then flag overrides, then seed resolution; prints the
/// provenance line.
fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::from_path(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(budget) = global.budget {
        cfg.ga.budget = budget;
    }
    if let Some(mode) = global.fitness_mode {
        cfg.fitness_mode = mode.into();
    }
    if let Some(sigma) = global.noise_sigma {
        cfg.trace.noise_sigma = sigma;
    }
    let cfg = cfg.resolved()?;
    eprintln!("config {} seed {}", cfg.hash_hex(), cfg.seed);
    Ok(cfg)
}

fn read_model(path: &Path) -> Result<ModelGraph> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model {}", path.display()))?;
    ModelGraph::from_json(&text)
        .with_context(|| format!("parsing model {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// One corpus entry in `manifest.json`.
#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    name: String,
    nodes: usize,
    kernels: usize,
}

/// The document `gen` writes next to the models.
#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    config: String,
    count: usize,
    models: Vec<ManifestEntry>,
}

fn cmd_gen(cfg: &RunConfig, count: usize, out: &Path, weights: bool) -> Result<ExitCode> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))?;
    let corpus = netgen::generate_corpus(&cfg.netgen, count)?;
    let mut models = Vec::with_capacity(corpus.len());
    for graph in &corpus {
        let file = format!("{}.json", graph.name);
        let doc = if weights {
            graph.to_json()
        } else {
            graph.without_weights().to_json()
        };
        write_file(&out.join(&file), &doc)?;
        models.push(ManifestEntry {
            file,
            name: graph.name.clone(),
            nodes: graph.node_count(),
            kernels: graph.kernel_count(),
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        config: cfg.hash_hex(),
        count,
        models,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), &text)?;
    println!("wrote {count} models and manifest.json to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

/// Model documents under `dir`, in manifest order when a manifest exists and
/// sorted-filename order otherwise.
fn load_corpus(dir: &Path) -> Result<Vec<ModelGraph>> {
    let manifest_path = dir.join("manifest.json");
    let files: Vec<PathBuf> = if manifest_path.is_file() {
        let text = std::fs::read_to_string(&manifest_path)
            .with_context(|| format!("reading {}", manifest_path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", manifest_path.display()))?;
        manifest.models.iter().map(|m| dir.join(&m.file)).collect()
    } else {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|e| e == "json")
                    && p.file_name().is_some_and(|n| n != "manifest.json")
            })
            .collect();
        files.sort();
        files
    };
    if files.is_empty() {
        bail!("no model documents in {}", dir.display());
    }
    files.iter().map(|p| read_model(p)).collect()
}

fn cmd_obfuscate(cfg: &RunConfig, model: &Path, out: &Path) -> Result<ExitCode> {
    let base = read_model(model)?;
    let outcome = ga::evolve(&base, &cfg.ga, &cfg.trace, cfg.fitness_mode)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))?;

    write_file(&out.join("genome.json"), &outcome.best.genome.to_json())?;
    let obfuscated = alias_forge::transforms::apply_genome(&base, &outcome.best.genome)?;
    write_file(&out.join("model.obf.json"), &obfuscated.to_json())?;
    write_file(&out.join("ga_log.csv"), &outcome.log.to_csv())?;

    let report = &outcome.best.report;
    println!("baseline_latency {:.0}", outcome.baseline_latency);
    println!("stdev_sum {:.3}", report.stdev_sum);
    println!(
        "latency {:.0} ({:.4}x of baseline)",
        report.latency,
        report.latency / outcome.baseline_latency
    );
    println!("feasible {}", outcome.best_is_feasible);
    if !outcome.best_is_feasible {
        eprintln!(
            "warning: no candidate met the latency budget (+{:.0}%); emitted the best overall",
            cfg.ga.budget * 100.0
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_trace(cfg: &RunConfig, model: &Path) -> Result<ExitCode> {
    let graph = read_model(model)?;
    let tm = trace(&graph, &cfg.trace)?;
    print!("{}", tm.export_csv());
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack_train(
    cfg: &RunConfig,
    corpus: &Path,
    out: &Path,
    holdout: bool,
) -> Result<ExitCode> {
    let graphs = load_corpus(corpus)?;
    let ds = attack::build_dataset(&graphs, &cfg.trace)?;
    if holdout {
        let (train_ds, test_ds) = ds.split_by_graph(cfg.attack.test_fraction, cfg.seed);
        let probe = attack::train(&train_ds, cfg.attack.predictor)?;
        println!(
            "holdout accuracy {:.4} ({} train / {} test samples)",
            attack::accuracy(&probe, &test_ds)?,
            train_ds.samples.len(),
            test_ds.samples.len()
        );
    }
    let predictor = attack::train(&ds, cfg.attack.predictor)?;
    write_file(out, &predictor.to_json())?;
    println!(
        "trained {} on {} samples from {} graphs; wrote {}",
        predictor_name(cfg.attack.predictor),
        ds.samples.len(),
        graphs.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn predictor_name(kind: PredictorKind) -> String {
    match kind {
        PredictorKind::NearestCentroid => "nearest-centroid".into(),
        PredictorKind::GaussianNb => "gaussian-nb".into(),
        PredictorKind::Knn { k } => format!("knn(k={k})"),
    }
}

fn read_predictor(path: &Path) -> Result<AttackPredictor> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading predictor {}", path.display()))?;
    AttackPredictor::from_json(&text)
        .with_context(|| format!("parsing predictor {}", path.display()))
}

fn cmd_attack_predict(
    cfg: &RunConfig,
    predictor: &Path,
    model: Option<&Path>,
    trace_input: Option<&Path>,
    truth: Option<&Path>,
) -> Result<ExitCode> {
    let predictor = read_predictor(predictor)?;
    let truth_graph = truth.map(read_model).transpose()?;

    if let Some(path) = model {
        let victim = read_model(path)?;
        let tm = trace(&victim, &cfg.trace)?;
        let extracted = attack::predict_sequence(&predictor, &tm)?;
        println!("{extracted}");
        if let Some(original) = &truth_graph {
            let report =
                attack::evaluate_defense_graphs(original, &victim, &predictor, &cfg.trace)?;
            println!("{report}");
        }
        return Ok(ExitCode::SUCCESS);
    }

    // Trace input: the attacker sees only the CSV.
    let path = trace_input.expect("clap guarantees one input");
    let text = if path == Path::new("-") {
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .context("reading trace from stdin")?;
        buf
    } else {
        std::fs::read_to_string(path)
            .with_context(|| format!("reading trace {}", path.display()))?
    };
    let tm = TraceMatrix::import_csv(&text)?;
    let extracted = attack::predict_sequence(&predictor, &tm)?;
    println!("{extracted}");
    if let Some(original) = &truth_graph {
        let truth_seq = original.to_sequence(SequenceOptions::default())?;
        println!("ler {:.4}", metrics::ler(&extracted, &truth_seq)?);
    }
    Ok(ExitCode::SUCCESS)
}

/// The document `eval` emits: the defense scorecard plus enough provenance
/// to rerun it.
#[derive(Serialize, Deserialize)]
struct EvalDocument {
    config: String,
    seed: u64,
    model: String,
    feasible: bool,
    /// Trace-deviation sum of the unobfuscated victim.
    stdev_sum_baseline: f64,
    /// Trace-deviation sum of the emitted obfuscation.
    stdev_sum: f64,
    report: DefenseReport,
}

fn acquire_predictor(
    cfg: &RunConfig,
    corpus: Option<&Path>,
    predictor: Option<&Path>,
) -> Result<AttackPredictor> {
    if let Some(path) = predictor {
        return read_predictor(path);
    }
    let graphs = match corpus {
        Some(dir) => load_corpus(dir)?,
        None => netgen::generate_corpus(&cfg.netgen, cfg.attack.corpus_size)?,
    };
    let ds = attack::build_dataset(&graphs, &cfg.trace)?;
    Ok(attack::train(&ds, cfg.attack.predictor)?)
}

fn eval_one(
    cfg: &RunConfig,
    base: &ModelGraph,
    predictor: &AttackPredictor,
) -> Result<EvalDocument> {
    let outcome = ga::evolve(base, &cfg.ga, &cfg.trace, cfg.fitness_mode)?;
    let report =
        attack::evaluate_defense(base, &outcome.best.genome, predictor, &cfg.trace)?;
    let tm_base = trace(base, &cfg.trace)?;
    let baseline = metrics::fitness(
        &tm_base,
        outcome.baseline_latency,
        cfg.ga.budget,
        &cfg.trace,
        cfg.fitness_mode,
    )?;
    Ok(EvalDocument {
        config: cfg.hash_hex(),
        seed: cfg.seed,
        model: base.name.clone(),
        feasible: outcome.best_is_feasible,
        stdev_sum_baseline: baseline.stdev_sum,
        stdev_sum: outcome.best.report.stdev_sum,
        report,
    })
}

fn render_eval(doc: &EvalDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!("model               {}\n", doc.model));
    out.push_str(&format!("config              {}\n", doc.config));
    out.push_str(&format!("seed                {}\n", doc.seed));
    out.push_str(&format!("feasible            {}\n", doc.feasible));
    out.push_str(&format!(
        "stdev_sum           {:.3} (baseline {:.3})\n",
        doc.stdev_sum, doc.stdev_sum_baseline
    ));
    out.push_str(&doc.report.to_string());
    out.push('\n');
    out
}

fn median(values: &mut Vec<f64>) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn cmd_eval(
    cfg: &RunConfig,
    model: Option<&Path>,
    victims: Option<&Path>,
    corpus: Option<&Path>,
    predictor: Option<&Path>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let predictor = acquire_predictor(cfg, corpus, predictor)?;

    if let Some(path) = model {
        let base = read_model(path)?;
        let doc = eval_one(cfg, &base, &predictor)?;
        let json = serde_json::to_string_pretty(&doc).expect("report serializes");
        match out {
            Some(path) => {
                write_file(path, &json)?;
                print!("{}", render_eval(&doc));
            }
            None => {
                println!("{json}");
                eprint!("{}", render_eval(&doc));
            }
        }
        return Ok(ExitCode::from(if doc.feasible { 0 } else { 3 }));
    }

    // Batch mode: one row per victim, then medians.
    let dir = victims.expect("clap guarantees one input");
    let bases = load_corpus(dir)?;
    let mut docs = Vec::with_capacity(bases.len());
    for base in &bases {
        docs.push(eval_one(cfg, base, &predictor)?);
    }
    println!(
        "{:<14} {:>8} {:>10} {:>10} {:>8} {:>8} {:>8}",
        "model", "feasible", "stdev_sum", "baseline", "ler_org", "ler_obf", "latency"
    );
    for doc in &docs {
        println!(
            "{:<14} {:>8} {:>10.3} {:>10.3} {:>8.4} {:>8.4} {:>8.4}",
            doc.model,
            doc.feasible,
            doc.stdev_sum,
            doc.stdev_sum_baseline,
            doc.report.ler_extracted_original,
            doc.report.ler_extracted_obfuscated,
            doc.report.latency_overhead
        );
    }
    let med = |f: &dyn Fn(&EvalDocument) -> f64| {
        median(&mut docs.iter().map(f).collect())
    };
    println!(
        "{:<14} {:>8} {:>10.3} {:>10.3} {:>8.4} {:>8.4} {:>8.4}",
        "median",
        "-",
        med(&|d| d.stdev_sum),
        med(&|d| d.stdev_sum_baseline),
        med(&|d| d.report.ler_extracted_original),
        med(&|d| d.report.ler_extracted_obfuscated),
        med(&|d| d.report.latency_overhead)
    );
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&docs).expect("reports serialize");
        write_file(path, &json)?;
    }
    let all_feasible = docs.iter().all(|d| d.feasible);
    Ok(ExitCode::from(if all_feasible { 0 } else { 3 }))
}

fn cmd_report(path: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading report {}", path.display()))?;
    if let Ok(doc) = serde_json::from_str::<EvalDocument>(&text) {
        print!("{}", render_eval(&doc));
        return Ok(ExitCode::SUCCESS);
    }
    if let Ok(docs) = serde_json::from_str::<Vec<EvalDocument>>(&text) {
        for doc in &docs {
            print!("{}", render_eval(doc));
            println!();
        }
        return Ok(ExitCode::SUCCESS);
    }
    let report: DefenseReport = serde_json::from_str(&text)
        .with_context(|| format!("parsing report {}", path.display()))?;
    println!("{report}");
    Ok(ExitCode::SUCCESS)
}
