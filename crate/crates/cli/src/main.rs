//! Command-line front end: register models, list them, rank them on a
//! target dataset, evaluate a ranking against ground truth, and inspect one
//! candidate's cluster structure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use smselect_core::data_io::{self, TaskKind};
use smselect_core::model_db::{ModelDatabase, ModelKind, RegisterSpec};
use smselect_core::run::{
    self, InspectReport, RankPaths, RunConfig, RunReport, TruthKind,
};
use smselect_core::{Error, MetricKind};

#[derive(Parser)]
#[command(
    name = "smselect",
    version,
    about = "Rank candidate source models on a target dataset without retraining"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model artifact and add it to a database.
    Register(RegisterArgs),
    /// List the registered candidates.
    List(ListArgs),
    /// Score and rank every candidate on a target dataset.
    Rank(RankArgs),
    /// Attach ground-truth evaluation to an existing run report.
    Evaluate(EvaluateArgs),
    /// Show one candidate's cluster fits and pairwise separation table.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct RegisterArgs {
    /// Database directory (created if missing).
    #[arg(long)]
    db: PathBuf,
    /// Unique candidate id.
    #[arg(long)]
    id: String,
    /// Number of model outputs (n).
    #[arg(long)]
    output_dim: usize,
    /// Artifact kind: logits-file, affine-predictor, or mlp-predictor.
    #[arg(long)]
    kind: ModelKind,
    /// Artifact to copy into the database.
    #[arg(long)]
    path: PathBuf,
    /// Metadata entries as key=value; repeatable.
    #[arg(long = "meta", value_parser = parse_key_val)]
    meta: Vec<(String, String)>,
}

#[derive(Args)]
struct ListArgs {
    #[arg(long)]
    db: PathBuf,
    /// Emit the manifest records as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    db: PathBuf,
    /// Labels CSV (`sample_id,label`).
    #[arg(long)]
    labels: PathBuf,
    /// classification or regression.
    #[arg(long)]
    task: TaskKind,
    /// sms, isms, sms-regression, dbc, ldwc, dbi, ch, kld, or jsd.
    #[arg(long)]
    metric: MetricKind,
    /// Target feature matrix, needed for predictor-kind candidates.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Directory holding `<candidate-id>.csv` source distributions (kld/jsd).
    #[arg(long)]
    dist_dir: Option<PathBuf>,
    /// Target distribution CSV (kld/jsd).
    #[arg(long)]
    target_dist: Option<PathBuf>,
    /// Softmax temperature T.
    #[arg(long, default_value_t = 2.0)]
    temperature: f64,
    /// Number of ids kept in the report's top-k list.
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Random-projection width r (isms).
    #[arg(long, default_value_t = 25)]
    proj_dim: usize,
    /// Fraction of target rows scored, 0 < rate <= 1.
    #[arg(long, default_value_t = 1.0)]
    sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Covariance ridge.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Weight exponent p (sms-regression).
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Equal-frequency bin count for regression labels.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Report JSON path; a `.summary.csv` sibling is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run report produced by `rank`.
    #[arg(long)]
    report: PathBuf,
    /// Ground-truth CSV (`model_id,accuracy`).
    #[arg(long)]
    accuracies: PathBuf,
    /// Curve depth K; defaults to the report's top_k setting.
    #[arg(long)]
    topk: Option<usize>,
    /// auto, accuracy, or loss (auto: loss for regression tasks).
    #[arg(long, default_value = "auto")]
    truth: TruthKind,
    /// Where to write the updated report; defaults to updating in place.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    db: PathBuf,
    /// Candidate to inspect.
    #[arg(long)]
    id: String,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    task: TaskKind,
    /// Pipeline to mirror (isms applies its projection).
    #[arg(long, default_value = "sms")]
    metric: MetricKind,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    temperature: f64,
    #[arg(long, default_value_t = 25)]
    proj_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Emit the view as JSON.
    #[arg(long)]
    json: bool,
}

fn parse_key_val(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("`{s}` is not key=value"))
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Register(args) => cmd_register(args),
        Command::List(args) => cmd_list(args),
        Command::Rank(args) => cmd_rank(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn cmd_register(args: RegisterArgs) -> Result<(), Error> {
    let mut db = ModelDatabase::open_or_create(&args.db)?;
    let metadata: BTreeMap<String, String> = args.meta.into_iter().collect();
    let candidate = db.register(RegisterSpec {
        id: args.id,
        output_dim: args.output_dim,
        kind: args.kind,
        source: args.path,
        metadata,
    })?;
    println!(
        "registered `{}` ({}, output_dim={}) as {}",
        candidate.id,
        candidate.kind,
        candidate.output_dim,
        candidate.path.display()
    );
    Ok(())
}

fn cmd_list(args: ListArgs) -> Result<(), Error> {
    let db = ModelDatabase::open(&args.db)?;
    if args.json {
        println!("{}", to_pretty_json(&db.candidates()));
        return Ok(());
    }
    if db.candidates().is_empty() {
        println!("no candidates registered");
        return Ok(());
    }
    for c in db.candidates() {
        let meta = if c.metadata.is_empty() {
            String::new()
        } else {
            let pairs: Vec<String> =
                c.metadata.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("  [{}]", pairs.join(", "))
        };
        println!(
            "{}  {}  output_dim={}  {}{}",
            c.id,
            c.kind,
            c.output_dim,
            c.path.display(),
            meta
        );
    }
    Ok(())
}

fn config_from_rank_args(args: &RankArgs) -> RunConfig {
    RunConfig {
        metric: args.metric,
        temperature: args.temperature,
        top_k: args.topk,
        projection_dim: args.proj_dim,
        sample_rate: args.sample_rate,
        seed: args.seed,
        epsilon: args.epsilon,
        norm_p: args.p,
        bins: args.bins,
        threads: args.threads,
    }
}

fn cmd_rank(args: RankArgs) -> Result<(), Error> {
    let config = config_from_rank_args(&args);
    let paths = RankPaths {
        db: args.db.clone(),
        labels: args.labels.clone(),
        task: args.task,
        features: args.features.clone(),
        dist_dir: args.dist_dir.clone(),
        target_dist: args.target_dist.clone(),
    };
    let report = run::rank_from_paths(&paths, &config)?;

    write_text(&args.out, &to_pretty_json(&report))?;
    let summary_path = args.out.with_extension("summary.csv");
    write_text(&summary_path, &summary_csv(&report))?;

    println!(
        "ranked {} candidates by {} ({}) on {} target rows",
        report.candidates.len(),
        report.metric,
        report.orientation.as_str(),
        report.sample_count
    );
    for c in report.candidates.iter().take(report.top_k.len()) {
        let note = match c.projection_applied {
            Some(true) => "  [projected]",
            Some(false) => "  [projection skipped]",
            None => "",
        };
        println!(
            "  {}. {}  raw={}  normalized={}{}",
            c.rank, c.id, c.raw_metric, c.normalized_metric, note
        );
    }
    println!(
        "timing: predicting {:.3}s, other {:.3}s",
        report.timing.predicting_seconds, report.timing.other_seconds
    );
    println!(
        "report written to {}, summary to {}",
        args.out.display(),
        summary_path.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let mut report = read_report(&args.report)?;
    let accuracies = data_io::load_accuracies(&args.accuracies)?;
    let k = args.topk.unwrap_or(report.config.top_k);
    let eval = run::evaluate_report(&mut report, &accuracies, k, args.truth)?;

    let out = args.out.unwrap_or_else(|| args.report.clone());
    write_text(&out, &to_pretty_json(&report))?;
    let plot_path = out.with_extension("plot.csv");
    let mut plot = String::from("normalized_metric,accuracy\n");
    for c in &report.candidates {
        plot.push_str(&format!("{},{}\n", c.normalized_metric, accuracies[&c.id]));
    }
    write_text(&plot_path, &plot)?;

    println!("pcc: {}", eval.pcc);
    println!("trendline: slope={} intercept={}", eval.slope, eval.intercept);
    for (k, worst) in &eval.topk_curve {
        println!("  top-{k} worst: {worst}");
    }
    println!(
        "report written to {}, plot data to {}",
        out.display(),
        plot_path.display()
    );
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Error> {
    let db = ModelDatabase::open(&args.db)?;
    let labels = data_io::load_labels(&args.labels, args.task)?;
    let features = args
        .features
        .as_ref()
        .map(|p| data_io::load_matrix(p))
        .transpose()?;
    let config = RunConfig {
        metric: args.metric,
        temperature: args.temperature,
        projection_dim: args.proj_dim,
        sample_rate: args.sample_rate,
        seed: args.seed,
        epsilon: args.epsilon,
        bins: args.bins,
        ..RunConfig::default()
    };
    let view = run::inspect_candidate(&db, &args.id, &labels, features.as_ref(), &config)?;
    if args.json {
        println!("{}", to_pretty_json(&view));
        return Ok(());
    }
    print_inspect(&view);
    Ok(())
}

fn print_inspect(view: &InspectReport) {
    println!("candidate `{}`: {} cluster(s)", view.candidate, view.m);
    if let Some(warning) = &view.warning {
        println!("warning: {warning}");
    }
    for c in &view.clusters {
        println!(
            "  cluster {}: count={} mean_norm={:.6} log_det={:.6}",
            c.label, c.count, c.mean_norm, c.log_det
        );
    }
    println!("pairwise separation (rows/columns ordered as {:?}):", view.labels);
    for row in &view.sd_matrix {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("  {}", cells.join("  "));
    }
}

fn summary_csv(report: &RunReport) -> String {
    let mut out = String::from("model_id,raw_metric,normalized_metric,rank\n");
    for c in &report.candidates {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.id, c.raw_metric, c.normalized_metric, c.rank
        ));
    }
    out
}

fn read_report(path: &Path) -> Result<RunReport, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::FileUnreadable {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::ParseError {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

fn write_text(path: &Path, content: &str) -> Result<(), Error> {
    fs::write(path, content).map_err(|e| Error::FileUnreadable {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
