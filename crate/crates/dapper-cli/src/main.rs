//! Experiment runner for graph-based semi-supervised classification
//! with adaptive rebalancing and jointly tuned hyperparameters.
//!
//! Exit codes: 0 success, 1 configuration or validation error, 2
//! runtime failure. Progress streams to standard error; results go to
//! files in the output directory, each written atomically, plus a
//! `manifest.json` recording the resolved configuration, seed,
//! versions, and wall time.

mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use config::{parse_combos, parse_rates, synthetic_scaled, ExperimentFlags, Resolved};
use dapper::data::{DataError, Dataset, SynthSpec};
use dapper::forest::ForestModel;
use dapper::metrics::MetricReport;
use dapper::optimizer::write_history_csv;
use dapper::pipeline::{
    self, ExperimentConfig, PipelineError, ResultRow, Treatment, TrialProgress,
};
use dapper::report::{self, Metric};
use output::{atomically, ensure_dir, write_text, Manifest};
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

/// A classified failure: configuration problems exit 1, everything
/// else exits 2.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure::Config(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure::Runtime(message.into())
    }

    pub fn from_pipeline(e: PipelineError) -> Self {
        let config_side = matches!(
            &e,
            PipelineError::BadConfig(_)
                | PipelineError::Data(
                    DataError::BadSplitSpec | DataError::BadLabelRate | DataError::BadSynthSpec(_)
                )
        );
        if config_side {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "dapper",
    version,
    about = "Semi-supervised classification experiments: pseudo-labeling, \
             adaptive rebalancing, and a tuned random forest"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class CSV dataset
    GenData(GenDataArgs),
    /// Write the stratified train/validation/test partitions (train masked)
    Split(SplitArgs),
    /// Run one experiment cell and write its row, history, and model
    Run(RunArgs),
    /// Run a grid of treatments across label rates
    Sensitivity(SensitivityArgs),
    /// Measure pseudo-labeling class distortion per label rate
    ProbeImbalance(ProbeArgs),
    /// Render per-metric tables from a result-row CSV
    Report(ReportArgs),
    /// Score a saved model against a labeled CSV
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of rows
    #[arg(long)]
    rows: usize,
    /// Number of feature columns
    #[arg(long, default_value_t = 12)]
    features: usize,
    /// Minority class fraction, in (0, 0.5)
    #[arg(long, default_value_t = 0.25)]
    minority_frac: f64,
    /// Distance between the class cluster centers
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// Feature multiplier applied after generation
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Label rates: start:stop:step or a comma list (e.g. 0.9:0.1:-0.1)
    #[arg(long)]
    rates: Option<String>,
    /// Comma list of treatments, or `all`
    #[arg(long, default_value = "all")]
    treatments: String,
    /// Comma list of learners, or `both`
    #[arg(long, default_value = "both")]
    learners: String,
    /// Worker threads for independent grid cells
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    flags: ExperimentFlags,
    /// Label rates: start:stop:step or a comma list
    #[arg(long)]
    rates: Option<String>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Result rows CSV produced by `run` or `sensitivity`
    #[arg(long, value_name = "FILE")]
    rows: PathBuf,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Saved model (model.json)
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Labeled CSV to score
    #[arg(long, value_name = "FILE")]
    data: PathBuf,
    /// Label column name
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Label value treated as the positive class
    #[arg(long, default_value = "1")]
    positive_label: String,
    /// Optional metrics CSV path
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Split(args) => cmd_split(args),
        Command::Run(args) => cmd_run(args),
        Command::Sensitivity(args) => cmd_sensitivity(args),
        Command::ProbeImbalance(args) => cmd_probe(args),
        Command::Report(args) => cmd_report(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    }
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_else(|| "NA".to_string())
}

fn summary_line(row: &ResultRow) -> String {
    let m = &row.metrics;
    format!(
        "{} rate {}: recall {} pf {} g {} precision {} f {} auc {} (labeled {}, {} trials)",
        row.label(),
        row.label_rate,
        fmt_opt(m.recall, 1),
        fmt_opt(m.pf, 1),
        fmt_opt(m.g_measure, 1),
        fmt_opt(m.precision, 1),
        fmt_opt(m.f_measure, 1),
        fmt_opt(m.auc, 3),
        row.labeled_size,
        row.trial_count,
    )
}

fn cmd_gen_data(args: GenDataArgs) -> Result<(), Failure> {
    let spec = SynthSpec {
        rows: args.rows,
        features: args.features,
        minority_frac: args.minority_frac,
        separation: args.separation,
        seed: args.seed,
    };
    let ds = synthetic_scaled(&spec, args.scale).map_err(Failure::config)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_dir(dir)?;
        }
    }
    atomically(&args.out, |tmp| ds.write_csv(tmp).map_err(|e| e.to_string()))?;
    let counts = ds.class_counts();
    eprintln!(
        "wrote {} rows ({} features, classes {}/{}) to {}",
        ds.n_rows(),
        ds.n_features(),
        counts[0],
        counts[1],
        args.out.display()
    );
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let Resolved { dataset, cfg, snapshot, .. } = config::resolve(&args.flags)?;
    let (train, val, test) =
        pipeline::partitions(&dataset, &cfg).map_err(Failure::from_pipeline)?;
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("split", cfg.seed, snapshot);
    for (name, part) in [("train.csv", &train), ("val.csv", &val), ("test.csv", &test)] {
        let path = manifest.record(&args.out.join(name));
        atomically(&path, |tmp| part.write_csv(tmp).map_err(|e| e.to_string()))?;
    }
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    eprintln!(
        "train {} rows ({} labeled), val {} rows, test {} rows",
        train.n_rows(),
        train.labeled_indices().len(),
        val.n_rows(),
        test.n_rows()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let Resolved { dataset, cfg, snapshot, .. } = config::resolve(&args.flags)?;
    cfg.validate().map_err(Failure::from_pipeline)?;
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("run", cfg.seed, snapshot);

    let mut progress = |p: TrialProgress| {
        eprintln!("trial {}/{} loss {:.4} best {:.4}", p.index + 1, p.total, p.loss, p.best_loss);
    };
    let outcome = pipeline::run_treatment_observed(&dataset, &cfg, &mut progress)
        .map_err(Failure::from_pipeline)?;

    let rows_path = manifest.record(&args.out.join("rows.csv"));
    atomically(&rows_path, |tmp| {
        report::write_rows_csv(std::slice::from_ref(&outcome.row), tmp).map_err(|e| e.to_string())
    })?;
    if !outcome.history.is_empty() {
        let space = match cfg.treatment {
            Treatment::OptimizedSslOnly => pipeline::ssl_space(cfg.learner),
            _ => pipeline::dapper_space(cfg.learner),
        };
        let history_path = manifest.record(&args.out.join("history.csv"));
        atomically(&history_path, |tmp| {
            write_history_csv(&space, &outcome.history, tmp).map_err(|e| e.to_string())
        })?;
    }
    let model_path = manifest.record(&args.out.join("model.json"));
    atomically(&model_path, |tmp| outcome.model.save(tmp).map_err(|e| e.to_string()))?;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    println!("{}", summary_line(&outcome.row));
    Ok(())
}

fn cmd_sensitivity(args: SensitivityArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let resolved = config::resolve(&args.flags)?;
    let rates = match &args.rates {
        Some(text) => parse_rates(text)?,
        None => resolved.rates.clone().ok_or_else(|| {
            Failure::config("no label rates: pass --rates or set [experiment] rates")
        })?,
    };
    let combos = parse_combos(&args.treatments, &args.learners)?;
    if args.jobs == 0 {
        return Err(Failure::config("--jobs must be at least 1"));
    }

    let cells: Vec<ExperimentConfig> = combos
        .iter()
        .flat_map(|&(treatment, learner)| {
            rates.iter().map(move |&rate| ExperimentConfig {
                treatment,
                learner,
                label_rate: rate,
                ..resolved.cfg
            })
        })
        .collect();
    for cell in &cells {
        cell.validate().map_err(Failure::from_pipeline)?;
    }

    let done = AtomicUsize::new(0);
    let total = cells.len();
    let dataset = &resolved.dataset;
    let run_cell = |cell: &ExperimentConfig| -> Result<ResultRow, Failure> {
        let row = pipeline::run_treatment(dataset, cell).map_err(Failure::from_pipeline)?.row;
        let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!(
            "cell {}/{} {} rate {} g {}",
            finished,
            total,
            row.label(),
            row.label_rate,
            fmt_opt(row.metrics.g_measure, 1)
        );
        Ok(row)
    };
    let rows: Vec<ResultRow> = if args.jobs == 1 {
        cells.iter().map(run_cell).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_cell).collect::<Result<_, _>>())?
    };

    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("sensitivity", resolved.cfg.seed, resolved.snapshot);
    write_tables(&rows, &args.out, &mut manifest)?;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

/// Writes rows.csv, the aligned-text report, and one CSV per metric.
fn write_tables(rows: &[ResultRow], dir: &Path, manifest: &mut Manifest) -> Result<(), Failure> {
    let rows_path = manifest.record(&dir.join("rows.csv"));
    atomically(&rows_path, |tmp| report::write_rows_csv(rows, tmp).map_err(|e| e.to_string()))?;
    let text = report::render_report(rows).map_err(|e| Failure::runtime(e.to_string()))?;
    let report_path = manifest.record(&dir.join("report.txt"));
    write_text(&report_path, &text)?;
    for metric in Metric::all() {
        let table =
            report::metric_table(rows, metric).map_err(|e| Failure::runtime(e.to_string()))?;
        let path = manifest.record(&dir.join(format!("report_{}.csv", metric.name())));
        write_text(&path, &table.render_csv())?;
    }
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let resolved = config::resolve(&args.flags)?;
    let rates = match &args.rates {
        Some(text) => parse_rates(text)?,
        None => resolved.rates.clone().ok_or_else(|| {
            Failure::config("no label rates: pass --rates or set [experiment] rates")
        })?,
    };
    let rows = pipeline::imbalance_probe(&resolved.dataset, &resolved.cfg, &rates)
        .map_err(Failure::from_pipeline)?;
    for row in &rows {
        eprintln!(
            "rate {} {} minority fraction {:.4}",
            row.label_rate, row.learner, row.minority_fraction
        );
    }
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("probe-imbalance", resolved.cfg.seed, resolved.snapshot);
    let probe_path = manifest.record(&args.out.join("probe.csv"));
    atomically(&probe_path, |tmp| report::write_probe_csv(&rows, tmp).map_err(|e| e.to_string()))?;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let started = Instant::now();
    let rows = report::read_rows_csv(&args.rows)
        .map_err(|e| Failure::runtime(format!("reading {}: {e}", args.rows.display())))?;
    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new(
        "report",
        0,
        serde_json::json!({
            "rows": args.rows.display().to_string(),
        }),
    );
    write_tables(&rows, &args.out, &mut manifest)?;
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let model = ForestModel::load(&args.model)
        .map_err(|e| Failure::runtime(format!("loading {}: {e}", args.model.display())))?;
    let ds = Dataset::load_csv(&args.data, &args.label_column, &args.positive_label)
        .map_err(|e| Failure::runtime(format!("loading {}: {e}", args.data.display())))?;
    let metrics = pipeline::evaluate(&model, &ds).map_err(Failure::from_pipeline)?;
    println!("{}", metrics_line(&metrics));
    if let Some(out) = &args.out {
        atomically(out, |tmp| write_metrics_csv(&metrics, tmp).map_err(|e| e.to_string()))?;
    }
    Ok(())
}

fn metrics_line(m: &MetricReport) -> String {
    format!(
        "recall {} pf {} g {} precision {} f {} auc {}",
        fmt_opt(m.recall, 1),
        fmt_opt(m.pf, 1),
        fmt_opt(m.g_measure, 1),
        fmt_opt(m.precision, 1),
        fmt_opt(m.f_measure, 1),
        fmt_opt(m.auc, 3),
    )
}

fn write_metrics_csv(m: &MetricReport, path: &Path) -> std::io::Result<()> {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".to_string());
    let body = format!(
        "recall,pf,g_measure,precision,f_measure,auc\n{},{},{},{},{},{}\n",
        cell(m.recall),
        cell(m.pf),
        cell(m.g_measure),
        cell(m.precision),
        cell(m.f_measure),
        cell(m.auc),
    );
    std::fs::write(path, body)
}
