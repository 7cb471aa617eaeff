//! `riskpipe`: command-line front end for the conversation-tree risk
//! pipeline and its causal verification lab.
//!
//! One binary, seven subcommands. Stage outputs are plain files so any
//! stage can be rerun independently against the response cache:
//!
//! * `ingest`     — parse and validate a dataset, optionally normalizing it
//! * `reason`     — run the debate stage, writing an inference store
//! * `cluster`    — compress a stored inference set into representatives
//! * `predict`    — end-to-end risk predictions for every tree
//! * `eval`       — stratified cross-validation with optional ablations
//! * `scm-verify` — check the front-door estimator against exact ground truth
//! * `cache`      — inspect or clear the response cache
//!
//! Exit codes: 0 success, 1 usage error, 2 pipeline error, 3 validation
//! error.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use riskpipe_core::backend::{cache_clear, cache_disk_stats};
use riskpipe_core::causal::{
    frontdoor_estimate, naive_estimate, parse_scm_file, total_variation, DiscreteScm,
};
use riskpipe_core::config::build_backend;
use riskpipe_core::decider::{predict, DemonstrationPool};
use riskpipe_core::eval::{compare_reports, run_experiment, ExperimentReport};
use riskpipe_core::mediator::{distinct_point_count, select_representatives};
use riskpipe_core::reasoner::{generate_inferences, EvidenceLevel};
use riskpipe_core::seeds::derive_seed;
use riskpipe_core::tree::{parse_dataset, serialize_dataset};
use riskpipe_core::{Ablation, PipelineConfig, RiskLabelSet};

#[derive(Parser)]
#[command(
    name = "riskpipe",
    version,
    about = "Counterfactual risk inference over conversation trees, with a causal verification lab"
)]
struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Master seed, overriding the config value. Every stage seed is
    /// derived from it.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Use the deterministic scripted stub backend (no network).
    #[arg(long, global = true)]
    stub: bool,

    /// Validate inputs and print the resolved plan without any model call.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a dataset file.
    Ingest {
        /// Line-delimited dataset file.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Comma-separated label names, lowest risk first (default: config labels).
        #[arg(long, value_name = "NAMES")]
        labels: Option<String>,
        /// Validate and summarize only; never write anything.
        #[arg(long)]
        validate_only: bool,
        /// Write a normalized copy of the dataset here.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Run the debate stage for every tree, writing an inference store.
    Reason {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Debate generations per tree (default: config value).
        #[arg(long, value_name = "INT")]
        n: Option<usize>,
        /// Inference store to write (one record per tree and generation).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Cluster a stored inference set into weighted representatives.
    Cluster {
        /// Inference store written by `reason`.
        #[arg(long, value_name = "FILE")]
        inferences: PathBuf,
        /// Cluster count (default: config value).
        #[arg(long, value_name = "INT")]
        k: Option<usize>,
        /// Mediator store to write (one record per tree).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Predict a risk level for every tree in a dataset.
    Predict {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Labeled dataset supplying demonstration examples.
        #[arg(long, value_name = "FILE")]
        pool: Option<PathBuf>,
        /// Predictions file to write (one JSON record per line).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Stratified k-fold cross-validation, optionally across ablations.
    Eval {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Fold count (default: config value).
        #[arg(long, value_name = "INT")]
        k: Option<usize>,
        /// Comma-separated ablations to run
        /// (full, no_reasoner, no_decider, analyst_only).
        #[arg(long, value_name = "LIST")]
        ablations: Option<String>,
        /// Directory for per-fold predictions, confusion matrices, and a
        /// summary table.
        #[arg(long, value_name = "DIR")]
        report: Option<PathBuf>,
    },
    /// Verify the front-door estimator against exact interventional
    /// ground truth on a discrete structural causal model.
    #[command(name = "scm-verify")]
    ScmVerify {
        /// Plain-text SCM table file (default: the built-in confounded
        /// binary benchmark).
        #[arg(long, value_name = "FILE")]
        scm: Option<PathBuf>,
        /// Observational sample size per run.
        #[arg(long, value_name = "INT", default_value_t = 100_000)]
        samples: usize,
        /// Number of independent sampling seeds.
        #[arg(long, value_name = "INT", default_value_t = 20)]
        seeds: u64,
        /// Write the verification table here as well as to stdout.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Inspect or clear the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Print entry count and total size of the cache directory.
    Stats,
    /// Delete every cached response.
    Clear,
}

/// Failures grouped by exit code: validation problems (bad config,
/// malformed input files) exit 3, operational pipeline failures exit 2.
#[derive(Debug)]
enum CliError {
    Validation(String),
    Pipeline(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Pipeline(_) => 2,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Pipeline(m) => m,
        }
    }
}

fn validation(err: impl std::fmt::Display) -> CliError {
    CliError::Validation(err.to_string())
}

fn pipeline(err: impl std::fmt::Display) -> CliError {
    CliError::Pipeline(err.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version are successes, not usage errors.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::from_default_env()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Ingest {
            input,
            labels,
            validate_only,
            output,
        } => cmd_ingest(cli, &config, input, labels.as_deref(), *validate_only, output.as_deref()),
        Command::Reason { dataset, n, out } => cmd_reason(cli, &config, dataset, *n, out),
        Command::Cluster {
            inferences,
            k,
            out,
        } => cmd_cluster(&config, inferences, *k, out, cli.dry_run),
        Command::Predict { dataset, pool, out } => {
            cmd_predict(cli, &config, dataset, pool.as_deref(), out)
        }
        Command::Eval {
            dataset,
            k,
            ablations,
            report,
        } => cmd_eval(cli, &config, dataset, *k, ablations.as_deref(), report.as_deref()),
        Command::ScmVerify {
            scm,
            samples,
            seeds,
            report,
        } => cmd_scm_verify(cli, scm.as_deref(), *samples, *seeds, report.as_deref()),
        Command::Cache { action } => cmd_cache(&config, action, cli.dry_run),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let (mut config, warnings) = match &cli.config {
        Some(path) => PipelineConfig::from_file(path).map_err(validation)?,
        None => (PipelineConfig::default(), Vec::new()),
    };
    for warning in warnings {
        log::warn!("config: {warning}");
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Chat and embedding calls one tree costs under the given config,
/// excluding the one-time demonstration-pool embeddings.
fn per_tree_call_plan(config: &PipelineConfig) -> (usize, usize) {
    let n = config.generations;
    let k = config.clusters;
    let t = config.votes;
    match config.ablation {
        Ablation::Full => (n * 4 + k * t, n + 1),
        Ablation::AnalystOnly => (n + k * t, n + 1),
        Ablation::NoDecider => (n * 4 + k, n),
        Ablation::NoReasoner => (t, 0),
    }
}

fn needs_pool(ablation: Ablation) -> bool {
    matches!(ablation, Ablation::Full | Ablation::AnalystOnly)
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| pipeline(format!("creating {}: {e}", parent.display())))?;
        }
    }
    fs::write(path, content).map_err(|e| pipeline(format!("writing {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// ingest

fn cmd_ingest(
    cli: &Cli,
    config: &PipelineConfig,
    input: &Path,
    labels: Option<&str>,
    validate_only: bool,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let label_set = match labels {
        Some(csv) => {
            let names: Vec<String> = csv.split(',').map(|s| s.trim().to_string()).collect();
            RiskLabelSet::new(names).map_err(validation)?
        }
        None => config.label_set(),
    };
    let dataset = parse_dataset(input, &label_set).map_err(validation)?;

    let mut per_level = vec![0usize; label_set.len()];
    let mut unlabeled = 0usize;
    let mut nodes = 0usize;
    for tree in &dataset.trees {
        nodes += tree.node_count();
        match tree.gold_label {
            Some(level) => per_level[level] += 1,
            None => unlabeled += 1,
        }
    }
    println!("dataset {}: {} trees, {} nodes", dataset.name, dataset.trees.len(), nodes);
    for (level, count) in per_level.iter().enumerate() {
        println!("  {}: {count}", label_set.name(level));
    }
    if unlabeled > 0 {
        println!("  unlabeled: {unlabeled}");
    }

    if let Some(path) = output {
        if validate_only || cli.dry_run {
            println!("validate-only: skipped writing {}", path.display());
        } else {
            write_file(path, &serialize_dataset(&dataset))?;
            println!("wrote normalized dataset to {}", path.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reason

/// One line of the inference store: a single debate with its embedding.
#[derive(serde::Serialize, serde::Deserialize)]
struct InferenceRecord {
    tree_id: String,
    generation_index: usize,
    nonce: String,
    analyst: String,
    critic: Option<String>,
    empiricist: Option<String>,
    synthesis: Option<String>,
    evidence_level: EvidenceLevel,
    embedding: Vec<f64>,
}

fn cmd_reason(
    cli: &Cli,
    config: &PipelineConfig,
    dataset_path: &Path,
    n: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let mut config = config.clone();
    if let Some(n) = n {
        config.generations = n;
    }
    if config.ablation == Ablation::NoReasoner {
        return Err(CliError::Validation(
            "ablation no_reasoner disables the debate stage; nothing to reason".into(),
        ));
    }
    let dataset = parse_dataset(dataset_path, &config.label_set()).map_err(validation)?;
    let analyst_only = config.ablation == Ablation::AnalystOnly;
    let chats_per_generation = if analyst_only { 1 } else { 4 };

    if cli.dry_run {
        println!("resolved plan (reason, ablation {}):", config.ablation);
        println!("  trees: {}", dataset.trees.len());
        println!("  n={} debate generations per tree", config.generations);
        println!(
            "  chat calls: {} ({} per generation), embeddings: {}",
            dataset.trees.len() * config.generations * chats_per_generation,
            chats_per_generation,
            dataset.trees.len() * config.generations,
        );
        println!("backend calls made now: 0 (dry run)");
        return Ok(());
    }

    let backend = build_backend(&config, cli.stub).map_err(validation)?;
    let prompts = config.prompt_set().map_err(validation)?;
    let mut lines = String::new();
    let mut records = 0usize;
    for tree in &dataset.trees {
        let outcome = generate_inferences(
            backend.as_ref(),
            &prompts,
            &config,
            tree,
            config.seed,
            analyst_only,
        )
        .map_err(pipeline)?;
        for inference in outcome.inferences {
            let record = InferenceRecord {
                tree_id: tree.id.clone(),
                generation_index: inference.generation_index,
                nonce: inference.nonce,
                analyst: inference.transcript.analyst,
                critic: inference.transcript.critic,
                empiricist: inference.transcript.empiricist,
                synthesis: inference.transcript.synthesis,
                evidence_level: inference.evidence_level,
                embedding: inference.embedding.0,
            };
            lines.push_str(&serde_json::to_string(&record).map_err(pipeline)?);
            lines.push('\n');
            records += 1;
        }
        for (index, error) in outcome.failures {
            log::warn!("tree {}: generation {index} dropped: {error}", tree.id);
        }
    }
    write_file(out, &lines)?;
    println!(
        "wrote {records} inference records for {} trees to {}",
        dataset.trees.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// cluster

#[derive(serde::Serialize)]
struct RepresentativeRecord {
    cluster: usize,
    generation_index: usize,
    /// Exact cluster weight as (numerator, denominator).
    weight: (u64, u64),
}

#[derive(serde::Serialize)]
struct MediatorRecord {
    tree_id: String,
    /// Derived k-means seed, logged for auditability.
    seed: u64,
    /// Effective cluster count after clamping to distinct embeddings.
    k: usize,
    inertia: f64,
    sizes: Vec<usize>,
    representatives: Vec<RepresentativeRecord>,
    /// Cluster index per stored inference, in store order.
    assignments: Vec<usize>,
}

fn cmd_cluster(
    config: &PipelineConfig,
    inferences: &Path,
    k: Option<usize>,
    out: &Path,
    dry_run: bool,
) -> Result<(), CliError> {
    let content = fs::read_to_string(inferences)
        .map_err(|e| validation(format!("reading {}: {e}", inferences.display())))?;
    let mut order: Vec<String> = Vec::new();
    let mut by_tree: HashMap<String, Vec<InferenceRecord>> = HashMap::new();
    for (number, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: InferenceRecord = serde_json::from_str(line).map_err(|e| {
            validation(format!(
                "{} line {}: malformed inference record: {e}",
                inferences.display(),
                number + 1
            ))
        })?;
        if !by_tree.contains_key(&record.tree_id) {
            order.push(record.tree_id.clone());
        }
        by_tree.entry(record.tree_id.clone()).or_default().push(record);
    }
    if order.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: inference store is empty",
            inferences.display()
        )));
    }
    let k = k.unwrap_or(config.clusters);

    if dry_run {
        println!("resolved plan (cluster):");
        println!("  trees: {}, K={k}", order.len());
        println!("backend calls made now: 0 (clustering is local)");
        return Ok(());
    }

    let mut lines = String::new();
    for tree_id in &order {
        let records = &by_tree[tree_id];
        let mut points: Vec<Vec<f64>> = records.iter().map(|r| r.embedding.clone()).collect();
        if config.normalize_embeddings {
            riskpipe_core::mediator::l2_normalize(&mut points);
        }
        let effective_k = k.min(distinct_point_count(&points));
        let seed = derive_seed(config.seed, &format!("kmeans/{tree_id}"));
        let set = select_representatives(&points, effective_k, seed, config.kmeans_max_iters)
            .map_err(|e| validation(format!("tree {tree_id}: {e}")))?;
        let mut sizes = vec![0usize; effective_k];
        for &a in &set.assignments {
            sizes[a] += 1;
        }
        let inertia: f64 = points
            .iter()
            .zip(set.assignments.iter())
            .map(|(p, &a)| {
                p.iter()
                    .zip(set.centroids[a].iter())
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
            })
            .sum();
        let representatives = set
            .representatives
            .iter()
            .enumerate()
            .map(|(cluster, &point)| RepresentativeRecord {
                cluster,
                generation_index: records[point].generation_index,
                weight: (*set.weights[cluster].numer(), *set.weights[cluster].denom()),
            })
            .collect();
        let record = MediatorRecord {
            tree_id: tree_id.clone(),
            seed,
            k: effective_k,
            inertia,
            sizes,
            representatives,
            assignments: set.assignments,
        };
        lines.push_str(&serde_json::to_string(&record).map_err(pipeline)?);
        lines.push('\n');
    }
    write_file(out, &lines)?;
    println!("wrote {} mediator records to {}", order.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

fn cmd_predict(
    cli: &Cli,
    config: &PipelineConfig,
    dataset_path: &Path,
    pool_path: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let label_set = config.label_set();
    let dataset = parse_dataset(dataset_path, &label_set).map_err(validation)?;
    let pool_dataset = match pool_path {
        Some(path) => Some(parse_dataset(path, &label_set).map_err(validation)?),
        None => None,
    };
    if needs_pool(config.ablation) && pool_dataset.is_none() {
        return Err(CliError::Validation(format!(
            "ablation {} retrieves graded demonstrations; supply --pool",
            config.ablation
        )));
    }

    if cli.dry_run {
        let (chats, embeds) = per_tree_call_plan(config);
        println!("resolved plan (predict, ablation {}):", config.ablation);
        println!("  trees to predict: {}", dataset.trees.len());
        println!(
            "  n={} debate generations, K={} mediator clusters, T={} votes per representative",
            config.generations, config.clusters, config.votes
        );
        println!("  per tree: {chats} chat calls, {embeds} embeddings");
        if let Some(pool) = &pool_dataset {
            println!(
                "  demonstration pool: {} trees, embedded once",
                pool.trees.len()
            );
        }
        println!(
            "  total chat calls: {}",
            dataset.trees.len() * chats
        );
        println!("backend calls made now: 0 (dry run)");
        return Ok(());
    }

    let backend = build_backend(config, cli.stub).map_err(validation)?;
    let prompts = config.prompt_set().map_err(validation)?;
    let pool = match &pool_dataset {
        Some(ds) => Some(DemonstrationPool::build(backend.as_ref(), config, ds).map_err(pipeline)?),
        None => None,
    };

    let mut lines = String::new();
    let mut shown = 0usize;
    let mut correct = 0usize;
    for tree in &dataset.trees {
        let prediction = predict(
            backend.as_ref(),
            &prompts,
            config,
            tree,
            pool.as_ref(),
            config.seed,
        )
        .map_err(pipeline)?;
        if let Some(gold) = prediction.gold_index {
            shown += 1;
            if gold == prediction.label_index {
                correct += 1;
            }
        }
        println!(
            "{}\t{}\t{}",
            prediction.tree_id,
            prediction.label,
            prediction
                .gold_index
                .map(|g| label_set.name(g).to_string())
                .unwrap_or_else(|| "-".into())
        );
        lines.push_str(&serde_json::to_string(&prediction).map_err(pipeline)?);
        lines.push('\n');
    }
    write_file(out, &lines)?;
    println!(
        "wrote {} predictions to {}",
        dataset.trees.len(),
        out.display()
    );
    if shown > 0 {
        println!("labeled agreement: {correct}/{shown}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(
    cli: &Cli,
    config: &PipelineConfig,
    dataset_path: &Path,
    k: Option<usize>,
    ablations: Option<&str>,
    report_dir: Option<&Path>,
) -> Result<(), CliError> {
    let mut config = config.clone();
    if let Some(k) = k {
        config.folds = k;
    }
    let ablations: Vec<Ablation> = match ablations {
        Some(csv) => csv
            .split(',')
            .map(|s| s.trim().parse::<Ablation>().map_err(validation))
            .collect::<Result<_, _>>()?,
        None => vec![config.ablation],
    };
    let dataset = parse_dataset(dataset_path, &config.label_set()).map_err(validation)?;

    if cli.dry_run {
        println!("resolved plan (eval):");
        println!(
            "  dataset: {} trees, {} folds, ablations: {}",
            dataset.trees.len(),
            config.folds,
            ablations
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        );
        for ablation in &ablations {
            let mut variant = config.clone();
            variant.ablation = *ablation;
            let (chats, embeds) = per_tree_call_plan(&variant);
            println!(
                "  {}: per tree {} chat calls + {} embeddings, every tree predicted once",
                ablation, chats, embeds
            );
        }
        println!("backend calls made now: 0 (dry run)");
        return Ok(());
    }

    let backend = build_backend(&config, cli.stub).map_err(validation)?;
    let prompts = config.prompt_set().map_err(validation)?;

    let mut reports: Vec<ExperimentReport> = Vec::new();
    for ablation in &ablations {
        let mut variant = config.clone();
        variant.ablation = *ablation;
        let report = run_experiment(
            backend.as_ref(),
            &prompts,
            &variant,
            &dataset,
            variant.seed,
        )
        .map_err(pipeline)?;
        println!("== ablation {} ==", ablation);
        println!("{}", report.pooled);
        if !report.incomplete.is_empty() {
            println!("incomplete trees: {}", report.incomplete.len());
        }
        reports.push(report);
    }

    // Deltas against the full pipeline when it took part.
    if let Some(base) = reports.iter().find(|r| r.ablation == Ablation::Full) {
        for report in reports.iter().filter(|r| r.ablation != Ablation::Full) {
            if let Ok(delta) = compare_reports(&base.pooled, &report.pooled) {
                println!("== {} minus full ==", report.ablation);
                println!("{delta}");
            }
        }
    }

    if let Some(dir) = report_dir {
        let mut summary = String::from(
            "ablation\taccuracy\tweighted_precision\tweighted_recall\tweighted_f1\tincomplete\n",
        );
        for report in &reports {
            let sub = dir.join(report.ablation.to_string());
            fs::create_dir_all(&sub)
                .map_err(|e| pipeline(format!("creating {}: {e}", sub.display())))?;
            write_file(
                &sub.join("metrics.json"),
                &serde_json::to_string_pretty(report).map_err(pipeline)?,
            )?;
            for fold in &report.folds {
                let mut lines = String::new();
                for prediction in &fold.predictions {
                    lines.push_str(&serde_json::to_string(prediction).map_err(pipeline)?);
                    lines.push('\n');
                }
                write_file(&sub.join(format!("fold{}_predictions.jsonl", fold.fold)), &lines)?;
                write_file(
                    &sub.join(format!("fold{}_confusion.txt", fold.fold)),
                    &confusion_table(&fold.metrics.confusion, &fold.metrics.labels),
                )?;
            }
            write_file(
                &sub.join("pooled_confusion.txt"),
                &confusion_table(&report.pooled.confusion, &report.pooled.labels),
            )?;
            write_file(&sub.join("pooled_metrics.txt"), &report.pooled.to_string())?;
            let _ = writeln!(
                summary,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
                report.ablation,
                report.pooled.accuracy,
                report.pooled.weighted_precision,
                report.pooled.weighted_recall,
                report.pooled.weighted_f1,
                report.incomplete.len()
            );
        }
        write_file(&dir.join("summary.tsv"), &summary)?;
        println!("wrote report to {}", dir.display());
    }
    Ok(())
}

/// Gold-by-predicted confusion counts as an aligned text table.
fn confusion_table(counts: &[Vec<u64>], labels: &[String]) -> String {
    let width = labels
        .iter()
        .map(|l| l.len())
        .chain(std::iter::once(9))
        .max()
        .unwrap_or(9);
    let mut out = format!("{:>width$} |", "gold\\pred");
    for label in labels {
        let _ = write!(out, " {label:>width$}");
    }
    out.push('\n');
    for (gold, row) in counts.iter().enumerate() {
        let _ = write!(out, "{:>width$} |", labels[gold]);
        for &count in row {
            let _ = write!(out, " {count:>width$}");
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// scm-verify

fn cmd_scm_verify(
    cli: &Cli,
    scm_path: Option<&Path>,
    samples: usize,
    seeds: u64,
    report_path: Option<&Path>,
) -> Result<(), CliError> {
    if samples == 0 || seeds == 0 {
        return Err(CliError::Validation(
            "scm-verify needs samples >= 1 and seeds >= 1".into(),
        ));
    }
    let scm: DiscreteScm = match scm_path {
        Some(path) => parse_scm_file(path).map_err(validation)?,
        None => DiscreteScm::confounded_binary(),
    };

    if cli.dry_run {
        println!("resolved plan (scm-verify):");
        println!(
            "  {} seeds x {} samples over x in 0..{}",
            seeds,
            samples,
            scm.card_x()
        );
        println!("backend calls made now: 0 (the lab is model-free)");
        return Ok(());
    }

    let oracle: Vec<Vec<f64>> = (0..scm.card_x())
        .map(|x| scm.enumerate_interventional(x).map_err(pipeline))
        .collect::<Result<_, _>>()?;

    let mut table = String::from("seed\ttv_frontdoor\ttv_naive\tfrontdoor_ok\tnaive_biased\n");
    let mut frontdoor_ok = 0u64;
    let mut naive_biased = 0u64;
    for seed in 0..seeds {
        let set = scm.sample(samples, seed);
        let mut tv_frontdoor = 0f64;
        let mut tv_naive = 0f64;
        for (x, truth) in oracle.iter().enumerate() {
            let fd = frontdoor_estimate(&set, x).map_err(pipeline)?;
            let naive = naive_estimate(&set, x).map_err(pipeline)?;
            tv_frontdoor = tv_frontdoor.max(total_variation(&fd, truth));
            tv_naive = tv_naive.max(total_variation(&naive, truth));
        }
        let ok = tv_frontdoor <= 0.02;
        let biased = tv_naive > 0.05;
        frontdoor_ok += ok as u64;
        naive_biased += biased as u64;
        let _ = writeln!(
            table,
            "{seed}\t{tv_frontdoor:.5}\t{tv_naive:.5}\t{}\t{}",
            if ok { "yes" } else { "NO" },
            if biased { "yes" } else { "NO" }
        );
    }

    let need = seeds - seeds / 10; // >= 90% of seeds
    let passed = frontdoor_ok >= need && naive_biased >= need;
    let _ = writeln!(
        table,
        "frontdoor within 0.02 TV of the interventional oracle: {frontdoor_ok}/{seeds} seeds"
    );
    let _ = writeln!(
        table,
        "naive conditional off by more than 0.05 TV: {naive_biased}/{seeds} seeds"
    );
    let _ = writeln!(table, "verdict: {}", if passed { "PASS" } else { "FAIL" });
    print!("{table}");
    if let Some(path) = report_path {
        write_file(path, &table)?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::Pipeline(format!(
            "front-door verification failed: frontdoor ok {frontdoor_ok}/{seeds}, naive biased {naive_biased}/{seeds}, need {need}"
        )))
    }
}

// ---------------------------------------------------------------------------
// cache

fn cmd_cache(
    config: &PipelineConfig,
    action: &CacheAction,
    dry_run: bool,
) -> Result<(), CliError> {
    match action {
        CacheAction::Stats => {
            let (entries, bytes) = cache_disk_stats(&config.cache_dir).map_err(pipeline)?;
            println!(
                "cache {}: {entries} entries, {bytes} bytes",
                config.cache_dir.display()
            );
        }
        CacheAction::Clear => {
            let (entries, _) = cache_disk_stats(&config.cache_dir).map_err(pipeline)?;
            if dry_run {
                println!(
                    "dry run: would remove {entries} entries from {}",
                    config.cache_dir.display()
                );
            } else {
                let removed = cache_clear(&config.cache_dir).map_err(pipeline)?;
                println!(
                    "removed {removed} entries from {}",
                    config.cache_dir.display()
                );
            }
        }
    }
    Ok(())
}
