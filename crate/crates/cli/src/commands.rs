//! Subcommand definitions and their implementations.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mtgp_core::benchmark::{calibrate_default, format_table, run_scenario_detailed, run_study, StudyResult};
use mtgp_core::gp::FitOptions;
use mtgp_core::training::{train_gp, train_mtgp, GpTrainSpec, MtgpTrainSpec, RestartSummary, TrainReport};
use mtgp_core::verify::{run_checks, Fault};
use mtgp_core::{KernelKind, MultiTaskDataset};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{parse_correlations, parse_sizes, ModelFamily, RunConfig, StudyFile};
use crate::error::{CliError, CliResult};
use crate::model_file::{FittedModel, ModelFile};
use crate::table::{fmt_f64, parse_query, read_task_data, write_predictions};

#[derive(Debug, Parser)]
#[command(name = "mtgp", version, about = "Multi-task Gaussian process regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit hyperparameters to a task-indexed CSV and save the model.
    Train(TrainArgs),
    /// Predict mean and standard deviation at query points.
    Predict(PredictArgs),
    /// Run the single-task versus multi-task comparison study.
    Benchmark(BenchmarkArgs),
    /// Run the numerical verification suite.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV with columns x1..xP, task, y.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON run configuration. Without it: `gp` for one task, `mtgp-slfm` otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the model file (overrides `model_path`).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Where to write metrics JSON (overrides `metrics_path`); stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training seed (overrides `training.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the per-iteration trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query CSV with x1..xP and `task`; `-` reads stdin.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// JSON study configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`); without one only the table is printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated target correlations, e.g. `0.89,0.53,0.33`.
    #[arg(long)]
    pub correlations: Option<String>,
    /// Sample-size pairs `n_primary,n_auxiliary`; repeat or separate with `;`.
    #[arg(long)]
    pub sizes: Vec<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    FlipGradientSign,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Check(a) => check(a),
    }
}

/// Result of an in-process training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: FittedModel,
    pub file: ModelFile,
    pub report: TrainReport,
}

/// Trains the configured family on `dataset`.
pub fn train_model(config: &RunConfig, dataset: &MultiTaskDataset) -> CliResult<Trained> {
    config.validate()?;
    let options = FitOptions {
        standardize: config.standardize,
        jitter: config.training.jitter,
    };
    let (model, report) = match config.model.coregion() {
        None => {
            if dataset.num_tasks() != 1 {
                return Err(CliError::Validation(format!(
                    "model `gp` needs single-task data, found {} tasks",
                    dataset.num_tasks()
                )));
            }
            let spec = GpTrainSpec {
                kernel_kind: config.kernel,
                learn_mean: config.learn_mean,
                standardize: config.standardize,
            };
            let t = train_gp(&spec, dataset.inputs(0), dataset.targets(0), &config.training)?;
            (FittedModel::Gp(t.model), t.report)
        }
        Some(family) => {
            let spec = MtgpTrainSpec {
                kernel_kind: config.kernel,
                family,
                num_latent: config.num_latent,
                rank: config.rank,
                standardize: config.standardize,
            };
            let t = train_mtgp(&spec, dataset, &config.training)?;
            (FittedModel::Mtgp(t.model), t.report)
        }
    };
    let file = ModelFile::from_model(
        &model,
        config.model,
        options.standardize,
        options.jitter,
        &report.schema,
    )?;
    Ok(Trained { model, file, report })
}

pub fn load_model(path: &Path) -> CliResult<FittedModel> {
    ModelFile::read(path)?.load_model()
}

#[derive(Debug, Serialize)]
struct TrainMetrics<'a> {
    model: ModelFamily,
    kernel: KernelKind,
    num_tasks: usize,
    input_dim: usize,
    observations: usize,
    log_marginal_likelihood: f64,
    best_restart: usize,
    best_objective: f64,
    restarts: &'a [RestartSummary],
    seconds: f64,
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::write(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::write(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn train(args: TrainArgs) -> CliResult<()> {
    let dataset = read_task_data(&args.data)?;
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None if dataset.num_tasks() == 1 => RunConfig::new(ModelFamily::Gp),
        None => RunConfig::new(ModelFamily::MtgpSlfm),
    };
    if let Some(seed) = args.seed {
        config.training.seed = seed;
    }
    let model_path = args
        .model
        .or(config.model_path.clone())
        .ok_or_else(|| CliError::Validation("no output model path: pass --model or set `model_path`".into()))?;
    let metrics_path = args.out.or(config.metrics_path.clone());
    let trace_path = args.trace.or(config.trace_path.clone());
    config.training.record_trace = trace_path.is_some();

    let start = Instant::now();
    let trained = train_model(&config, &dataset)?;
    let seconds = start.elapsed().as_secs_f64();

    trained.file.write(&model_path)?;
    if let Some(p) = &trace_path {
        let mut w = create(p)?;
        for rec in &trained.report.trace {
            let line = serde_json::to_string(rec).expect("serializable");
            writeln!(w, "{line}").map_err(|e| CliError::write(p, e))?;
        }
        w.flush().map_err(|e| CliError::write(p, e))?;
    }
    let metrics = TrainMetrics {
        model: config.model,
        kernel: config.kernel,
        num_tasks: dataset.num_tasks(),
        input_dim: dataset.input_dim(),
        observations: dataset.total_len(),
        log_marginal_likelihood: trained.model.log_marginal_likelihood(),
        best_restart: trained.report.best_restart,
        best_objective: trained.report.best_objective,
        restarts: &trained.report.restarts,
        seconds,
    };
    match metrics_path {
        Some(p) => write_text(&p, &to_json(&metrics)),
        None => {
            print!("{}", to_json(&metrics));
            Ok(())
        }
    }
}

fn predict(args: PredictArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let mut text = String::new();
    if args.data.as_os_str() == "-" {
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::Validation(format!("cannot read stdin: {e}")))?;
    } else {
        text = std::fs::read_to_string(&args.data).map_err(|e| CliError::read(&args.data, e))?;
    }
    let query = parse_query(text.as_bytes(), model.input_dim(), model.num_tasks())?;
    let preds = model.predict_rows(&query.inputs, &query.tasks)?;
    match &args.out {
        Some(p) => {
            let w = create(p)?;
            write_predictions(w, &query, &preds)
        }
        None => write_predictions(std::io::stdout().lock(), &query, &preds),
    }
}

fn benchmark(args: BenchmarkArgs) -> CliResult<()> {
    let mut file = match &args.config {
        Some(p) => StudyFile::load(p)?,
        None => StudyFile::default(),
    };
    if let Some(s) = args.seed {
        file.seed = s;
    }
    if let Some(c) = &args.correlations {
        file.correlations = parse_correlations(c)?;
    }
    if !args.sizes.is_empty() {
        file.sizes = args
            .sizes
            .iter()
            .map(|s| parse_sizes(s))
            .collect::<CliResult<Vec<_>>>()?
            .concat();
    }
    if let Some(r) = args.replicates {
        file.replicates = r;
    }
    let study = file.study()?;
    let out_dir = args.out.or(file.output_dir.clone());

    let result = run_study(&study, &file.training)?;
    let table = format_table(&result.aggregates);
    print!("{table}");

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::write(&dir, e))?;
        write_text(&dir.join("table.txt"), &table)?;
        write_replicates(&dir.join("study.csv"), &result)?;
        write_text(
            &dir.join("summary.json"),
            &to_json(&serde_json::json!({
                "config": &file,
                "calibrations": &result.calibrations,
                "aggregates": &result.aggregates,
            })),
        )?;
        write_curves(&dir, &file)?;
    }
    Ok(())
}

fn write_replicates(path: &Path, result: &StudyResult) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| CliError::write(path, e);
    w.write_record([
        "target_correlation",
        "achieved_correlation",
        "n_primary",
        "n_auxiliary",
        "replicate",
        "seed",
        "gp_rmse",
        "mtgp_rmse",
        "percent_improvement",
    ])
    .map_err(err)?;
    for row in &result.replicates {
        let r = &row.result;
        w.write_record([
            fmt_f64(row.target_correlation),
            fmt_f64(r.correlation),
            r.n_primary.to_string(),
            r.n_auxiliary.to_string(),
            row.replicate.to_string(),
            r.seed.to_string(),
            fmt_f64(r.gp_rmse),
            fmt_f64(r.mtgp_rmse),
            fmt_f64(r.percent_improvement),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

/// Posterior curves and training points of replicate 0 in every cell, for
/// plotting.
fn write_curves(dir: &Path, file: &StudyFile) -> CliResult<()> {
    let study = file.study()?;
    let cells: Vec<(f64, usize)> = study
        .correlation_targets
        .iter()
        .flat_map(|&r| (0..study.size_grid.len()).map(move |s| (r, s)))
        .collect();
    let outcomes = cells
        .par_iter()
        .map(|&(r, s)| {
            let cal = calibrate_default(r)?;
            run_scenario_detailed(&study.scenario(&cal, s, 0), &file.training).map(|o| (r, o))
        })
        .collect::<mtgp_core::Result<Vec<_>>>()?;

    let path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let err = |e: csv::Error| CliError::write(&path, e);
    w.write_record([
        "target_correlation",
        "n_primary",
        "n_auxiliary",
        "x",
        "truth",
        "gp_mean",
        "gp_lower",
        "gp_upper",
        "mtgp_mean",
        "mtgp_lower",
        "mtgp_upper",
    ])
    .map_err(err)?;
    for (r, o) in &outcomes {
        let (gsd, msd) = (o.gp.stddev(), o.mtgp.stddev());
        for i in 0..o.test_x.len() {
            w.write_record([
                fmt_f64(*r),
                o.result.n_primary.to_string(),
                o.result.n_auxiliary.to_string(),
                fmt_f64(o.test_x[i]),
                fmt_f64(o.test_y[i]),
                fmt_f64(o.gp.mean[i]),
                fmt_f64(o.gp.mean[i] - 2.0 * gsd[i]),
                fmt_f64(o.gp.mean[i] + 2.0 * gsd[i]),
                fmt_f64(o.mtgp.mean[i]),
                fmt_f64(o.mtgp.mean[i] - 2.0 * msd[i]),
                fmt_f64(o.mtgp.mean[i] + 2.0 * msd[i]),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| CliError::write(&path, e))?;

    let path = dir.join("training_points.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let err = |e: csv::Error| CliError::write(&path, e);
    w.write_record(["target_correlation", "n_primary", "n_auxiliary", "task", "x", "y"])
        .map_err(err)?;
    for (r, o) in &outcomes {
        for t in 0..o.dataset.num_tasks() {
            let (x, y) = (o.dataset.inputs(t), o.dataset.targets(t));
            for i in 0..x.nrows() {
                w.write_record([
                    fmt_f64(*r),
                    o.result.n_primary.to_string(),
                    o.result.n_auxiliary.to_string(),
                    t.to_string(),
                    fmt_f64(x[(i, 0)]),
                    fmt_f64(y[i]),
                ])
                .map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::write(&path, e))
}

fn check(args: CheckArgs) -> CliResult<()> {
    let fault = args.inject_fault.map(|f| match f {
        FaultArg::FlipGradientSign => Fault::FlipGradientSign,
    });
    let outcomes = run_checks(args.seed, fault);
    for o in &outcomes {
        println!(
            "{} {:<34} error={:.3e} tolerance={:.0e} ({:.2}s){}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.metric,
            o.tolerance,
            o.seconds,
            if o.passed || o.detail.is_empty() {
                String::new()
            } else {
                format!(" {}", o.detail)
            }
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(CliError::CheckFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}
