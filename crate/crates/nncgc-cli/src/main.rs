//! Command-line front end: run full experiments from a TOML config, or
//! drive the pipeline stage by stage (generate, discover, train, evaluate,
//! report). Stages communicate through CSV, graph-text and model-snapshot
//! files, so a run is resumable.

use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use nncgc::bench::{infer_schema, load_csv, write_csv};
use nncgc::config::ExperimentConfig;
use nncgc::discovery::{ica_lingam, Discovery, DEFAULT_PRUNE_THRESHOLD};
use nncgc::graph::{mode_graph, CausalGraph};
use nncgc::metrics::SplitLabel;
use nncgc::models::{build_model, predict, train, CausalNet, Mode, ModelKind};
use nncgc::rng::derive_seed;
use nncgc::runner::{
    self, discovery_input, evaluate_split, model_seed, model_spec_for, replication_data,
    rows_to_csv, run_experiment, total_replications, ReportRow, RunnerError,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "nncgc", about = "Treatment effect estimation with causal-graph-constrained neural networks", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 = all cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write each replication's train/val/test CSVs without training.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discover a causal graph from a CSV (optionally the mode graph over
    /// repeated runs) and write it in graph-text form.
    Discover {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "t")]
        treatment: String,
        #[arg(long, default_value = "y")]
        outcome: String,
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_PRUNE_THRESHOLD)]
        prune: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on prepared train/val CSVs and export predictions.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Covariates the model predicts for, exported alongside the model.
        #[arg(long)]
        pred_data: PathBuf,
        #[arg(long, value_parser = parse_kind)]
        kind: ModelKind,
        #[arg(long)]
        constrained: bool,
        /// Graph file for the constrained variant.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Explicit model seed; defaults to the runner derivation for
        /// --rep/--model-index.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long, default_value_t = 0)]
        model_index: usize,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_pred: PathBuf,
    },
    /// Compute metric rows from predictions plus ground-truth data.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_parser = parse_split)]
        split: SplitLabel,
        #[arg(long)]
        model: String,
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 0)]
        replication: usize,
        #[arg(long, default_value = "dataset")]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        /// Append to an existing report instead of overwriting.
        #[arg(long)]
        append: bool,
    },
    /// Aggregate raw report rows into ratio and value tables.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    match s {
        "tarnet" => Ok(ModelKind::Tarnet),
        "dragonnet" => Ok(ModelKind::Dragonnet),
        "bcauss" => Ok(ModelKind::Bcauss),
        other => Err(format!("unknown model kind {other:?} (tarnet|dragonnet|bcauss)")),
    }
}

fn parse_split(s: &str) -> Result<SplitLabel, String> {
    match s {
        "train" => Ok(SplitLabel::Train),
        "test" => Ok(SplitLabel::Test),
        other => Err(format!("unknown split {other:?} (train|test)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug)]
struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn config(message: impl Into<String>) -> CliError {
        CliError { message: message.into(), code: EXIT_CONFIG }
    }

    fn runtime(message: impl Into<String>) -> CliError {
        CliError { message: message.into(), code: 1 }
    }

    fn exit_code(&self) -> u8 {
        self.code
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<RunnerError> for CliError {
    fn from(e: RunnerError) -> CliError {
        let code = match &e {
            RunnerError::Config(_) => EXIT_CONFIG,
            RunnerError::AllReplicationsFailed => EXIT_ALL_FAILED,
            _ => 1,
        };
        CliError { message: e.to_string(), code }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(path).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.run.master_seed = s;
    }
    if let Some(o) = out {
        cfg.run.out_dir = o;
    }
    if let Some(j) = jobs {
        cfg.run.jobs = j;
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config, jobs, seed, out } => {
            let cfg = load_config(&config, seed, out, jobs)?;
            let outcome = run_experiment(&cfg)?;
            println!(
                "{} replications ok, {} failed; raw report at {}",
                outcome.rows.iter().map(|r| r.replication).collect::<std::collections::BTreeSet<_>>().len(),
                outcome.failures.len(),
                outcome.raw_csv.display()
            );
            println!("tables at {}", outcome.tables_md.display());
            Ok(())
        }
        Command::Generate { config, seed, out } => {
            let cfg = load_config(&config, seed, out, None)?;
            let data_dir = cfg.run.out_dir.join("data");
            std::fs::create_dir_all(&data_dir)
                .map_err(|e| CliError::runtime(format!("create {}: {e}", data_dir.display())))?;
            for k in 0..total_replications(&cfg) {
                let rep = replication_data(&cfg, k)?;
                let rep_dir = data_dir.join(format!("rep_{k:05}"));
                std::fs::create_dir_all(&rep_dir)
                    .map_err(|e| CliError::runtime(format!("create {}: {e}", rep_dir.display())))?;
                write_csv(&rep.train, &rep_dir.join("train.csv")).map_err(RunnerError::from)?;
                write_csv(&rep.val, &rep_dir.join("val.csv")).map_err(RunnerError::from)?;
                write_csv(&rep.test, &rep_dir.join("test.csv")).map_err(RunnerError::from)?;
            }
            println!("wrote {} replication datasets under {}", total_replications(&cfg), data_dir.display());
            Ok(())
        }
        Command::Discover { data, treatment, outcome, repeat, seed, prune, out } => {
            if !data.exists() {
                return Err(CliError::runtime(format!(
                    "data file {} not found (produce it with `nncgc generate` or convert the source archive)",
                    data.display()
                )));
            }
            let schema = infer_schema(&data).map_err(RunnerError::from)?;
            let ds = load_csv(&data, &schema).map_err(RunnerError::from)?;
            let (matrix, names) = discovery_input(&ds, &treatment, &outcome);
            let mut graphs = Vec::new();
            let mut failures = 0usize;
            for i in 0..repeat.max(1) {
                match ica_lingam(&matrix, &names, &treatment, &outcome, prune, derive_seed(seed, i as u64))
                    .map_err(RunnerError::from)?
                {
                    Discovery::Graph(g) => graphs.push(g),
                    Discovery::Failure(f) => {
                        failures += 1;
                        eprintln!("run {i}: {f}");
                    }
                }
            }
            if graphs.is_empty() {
                return Err(CliError::runtime(format!(
                    "all {repeat} discovery runs failed; supply an expert graph file instead"
                )));
            }
            let graph = mode_graph(&graphs).map_err(RunnerError::from)?;
            std::fs::write(&out, graph.to_text())
                .map_err(|e| CliError::runtime(format!("write {}: {e}", out.display())))?;
            println!(
                "mode graph over {} successful runs ({failures} failed) written to {}",
                graphs.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            train: train_path,
            val,
            pred_data,
            kind,
            constrained,
            graph,
            seed,
            rep,
            model_index,
            out_model,
            out_pred,
        } => {
            let cfg = load_config(&config, None, None, None)?;
            for (p, stage) in [
                (&train_path, "nncgc generate"),
                (&val, "nncgc generate"),
                (&pred_data, "nncgc generate"),
            ] {
                if !p.exists() {
                    return Err(CliError::runtime(format!(
                        "input {} not found (run `{stage}` first)",
                        p.display()
                    )));
                }
            }
            let schema = infer_schema(&train_path).map_err(RunnerError::from)?;
            let train_ds = load_csv(&train_path, &schema).map_err(RunnerError::from)?;
            let val_ds = load_csv(&val, &schema).map_err(RunnerError::from)?;
            let pred_ds = load_csv(&pred_data, &schema).map_err(RunnerError::from)?;

            let mode = if constrained {
                let graph_path = graph.ok_or_else(|| {
                    CliError::config("--constrained needs --graph (run `nncgc discover` first)")
                })?;
                let text = std::fs::read_to_string(&graph_path).map_err(|e| {
                    CliError::runtime(format!(
                        "graph {} not readable (run `nncgc discover` first): {e}",
                        graph_path.display()
                    ))
                })?;
                let g = CausalGraph::from_text(&text).map_err(RunnerError::from)?;
                Mode::Cgc(g.build_groups().map_err(RunnerError::from)?)
            } else {
                Mode::Unconstrained
            };
            let seed = seed.unwrap_or_else(|| model_seed(cfg.run.master_seed, rep, model_index));
            let spec = model_spec_for(&cfg, kind, mode, seed);
            let mut net = build_model(&spec, &train_ds.columns).map_err(RunnerError::from)?;
            let report = train(&mut net, &train_ds, &val_ds, &spec).map_err(RunnerError::from)?;
            println!(
                "trained {} ({}) in {} epochs, best val loss {:.6}",
                kind.name(),
                spec.mode.tag(),
                report.epochs_run,
                report.best_val_loss
            );
            save_model(&net, &spec, &out_model)?;
            let preds = predict(&net, &pred_ds.x).map_err(RunnerError::from)?;
            write_predictions(&preds, &out_pred)?;
            Ok(())
        }
        Command::Evaluate { data, pred, split, model, mode, replication, dataset, out, append } => {
            if !pred.exists() {
                return Err(CliError::runtime(format!(
                    "predictions {} not found (run `nncgc train` first)",
                    pred.display()
                )));
            }
            let schema = infer_schema(&data).map_err(RunnerError::from)?;
            let ds = load_csv(&data, &schema).map_err(RunnerError::from)?;
            let preds = read_predictions(&pred)?;
            let report = evaluate_split(&ds, &preds, split).map_err(RunnerError::from)?;
            let row = ReportRow {
                model,
                mode,
                dataset,
                replication,
                split: split.to_string(),
                sqrt_pehe: report.sqrt_pehe,
                ate_error: report.ate_error,
                att_error: report.att_error,
                n_eval: report.n_eval,
            };
            let text = rows_to_csv(std::slice::from_ref(&row));
            if append && out.exists() {
                let existing = std::fs::read_to_string(&out)
                    .map_err(|e| CliError::runtime(format!("read {}: {e}", out.display())))?;
                let body = text.lines().skip(1).collect::<Vec<_>>().join("\n");
                std::fs::write(&out, format!("{existing}{body}\n"))
                    .map_err(|e| CliError::runtime(format!("write {}: {e}", out.display())))?;
            } else {
                std::fs::write(&out, text)
                    .map_err(|e| CliError::runtime(format!("write {}: {e}", out.display())))?;
            }
            Ok(())
        }
        Command::Report { dir } => {
            let raw = dir.join("raw_report.csv");
            let rows = if raw.exists() {
                let text = std::fs::read_to_string(&raw)
                    .map_err(|e| CliError::runtime(format!("read {}: {e}", raw.display())))?;
                runner::rows_from_csv(&text)?
            } else {
                // Fall back to per-replication pieces.
                let reps = dir.join("replications");
                let mut rows = Vec::new();
                if reps.is_dir() {
                    let mut files: Vec<PathBuf> = std::fs::read_dir(&reps)
                        .map_err(|e| CliError::runtime(format!("read {}: {e}", reps.display())))?
                        .filter_map(|e| e.ok())
                        .map(|e| e.path())
                        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                        .collect();
                    files.sort();
                    for f in files {
                        let text = std::fs::read_to_string(&f)
                            .map_err(|e| CliError::runtime(format!("read {}: {e}", f.display())))?;
                        rows.extend(runner::rows_from_csv(&text)?);
                    }
                }
                rows
            };
            if rows.is_empty() {
                return Err(CliError::runtime(format!(
                    "no report rows under {} (run `nncgc run` or `nncgc evaluate` first)",
                    dir.display()
                )));
            }
            let (md, ratio_csv) = runner::aggregate_tables(&rows)?;
            std::fs::write(dir.join("tables.md"), md)
                .map_err(|e| CliError::runtime(format!("write tables.md: {e}")))?;
            std::fs::write(dir.join("ratio_report.csv"), ratio_csv)
                .map_err(|e| CliError::runtime(format!("write ratio_report.csv: {e}")))?;
            println!("aggregated {} rows into {}", rows.len(), dir.join("tables.md").display());
            Ok(())
        }
    }
}

fn save_model(net: &CausalNet, spec: &nncgc::models::ModelSpec, path: &Path) -> Result<(), CliError> {
    let mut buf = Vec::new();
    net.save(&mut buf, spec).map_err(RunnerError::from)?;
    std::fs::write(path, buf)
        .map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
}

fn write_predictions(preds: &nncgc::models::Predictions, path: &Path) -> Result<(), CliError> {
    let mut out = String::from("y0_hat,y1_hat,g_hat,ite_hat\n");
    let ite = preds.ite_hat();
    for i in 0..preds.y0_hat.len() {
        let g = preds
            .g_hat
            .as_ref()
            .map(|g| g[i].to_string())
            .unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", preds.y0_hat[i], preds.y1_hat[i], g, ite[i]);
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::runtime(format!("write {}: {e}", path.display())))
}

fn read_predictions(path: &Path) -> Result<nncgc::models::Predictions, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::runtime("empty predictions file".to_string()))?;
    if header != "y0_hat,y1_hat,g_hat,ite_hat" {
        return Err(CliError::runtime(format!("unexpected predictions header {header:?}")));
    }
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    let mut g: Vec<f64> = Vec::new();
    let mut has_g = true;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(CliError::runtime(format!("predictions line {} malformed", i + 2)));
        }
        let parse = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|_| CliError::runtime(format!("bad {what} on line {}", i + 2)))
        };
        y0.push(parse(parts[0], "y0_hat")?);
        y1.push(parse(parts[1], "y1_hat")?);
        if parts[2].is_empty() {
            has_g = false;
        } else {
            g.push(parse(parts[2], "g_hat")?);
        }
    }
    Ok(nncgc::models::Predictions { y0_hat: y0, y1_hat: y1, g_hat: has_g.then_some(g) })
}
