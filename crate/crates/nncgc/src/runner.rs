//! Experiment runner: seeded replications over a data source, per-
//! replication graph resolution (discovery with a mode-graph fallback),
//! paired training of every configured model on identical splits, metric
//! rows and aggregate tables. Every replication is fully determined by
//! the config and the master seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::bench::{
    self, generate_with_noise_seed, load_csv, split, split_two, BenchError, CsvSchema, Dataset,
    SyntheticConfig,
};
use crate::config::{ConfigError, ExperimentConfig, GraphSourceKind, SourceKind};
use crate::discovery::{ica_lingam, Discovery, DiscoveryError};
use crate::graph::{groups_from_forbidden, mode_graph, CausalGraph, GraphError, VariableGrouping};
use crate::metrics::{att_error, ate_error, mean_sd_sem, ratio_report, sqrt_pehe, EvalReport, MetricsError, SplitLabel};
use crate::models::{
    build_model, predict, train, Mode, ModelError, ModelKind, ModelSpec, Predictions,
};
use crate::par::map_items;
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("every replication failed; see failures.csv in the output directory")]
    AllReplicationsFailed,
    #[error("report: {0}")]
    Report(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.display().to_string(), source }
}

// Seed streams, one tag per purpose.
const STREAM_DATA: u64 = 0x11;
const STREAM_SPLIT: u64 = 0x22;
const STREAM_DISCOVERY: u64 = 0x33;
const STREAM_MODEL: u64 = 0x44;

/// Seeds for data-split replication `split_rep`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepSeeds {
    pub data: u64,
    pub split: u64,
    pub discovery: u64,
}

pub fn replication_seeds(master: u64, split_rep: usize) -> RepSeeds {
    let base = derive_seed(master, split_rep as u64);
    RepSeeds {
        data: derive_seed(base, STREAM_DATA),
        split: derive_seed(base, STREAM_SPLIT),
        discovery: derive_seed(base, STREAM_DISCOVERY),
    }
}

pub fn model_seed(master: u64, rep: usize, model_idx: usize) -> u64 {
    let base = derive_seed(master, rep as u64);
    derive_seed(base, STREAM_MODEL + model_idx as u64)
}

/// Data for one replication: the fitting split, the early-stopping split,
/// and the evaluation split.
#[derive(Debug, Clone)]
pub struct RepData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub label: String,
    pub treatment_name: String,
    pub outcome_name: String,
}

/// Total replication count: data splits times model-seed repeats.
pub fn total_replications(cfg: &ExperimentConfig) -> usize {
    cfg.run.replications * cfg.run.seed_repeats
}

/// The data-split index behind flat replication `k`.
pub fn split_rep_of(cfg: &ExperimentConfig, k: usize) -> usize {
    k / cfg.run.seed_repeats
}

fn csv_dir_files(dir: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Builds the replication's train/val/test datasets. Synthetic sources
/// draw a fresh train+test pair and carve validation out of the train
/// part; CSV sources split one file three ways; CSV directories consume
/// one file per data-split replication.
pub fn replication_data(cfg: &ExperimentConfig, k: usize) -> Result<RepData, RunnerError> {
    let split_rep = split_rep_of(cfg, k);
    let seeds = replication_seeds(cfg.run.master_seed, split_rep);
    let (rt, rv, _) = cfg.run.split;
    match cfg.dataset.source {
        SourceKind::Synthetic => {
            let scfg = SyntheticConfig {
                scenario: cfg.dataset.scenario.expect("validated"),
                n: cfg.dataset.n.expect("validated"),
                d: cfg.dataset.d.expect("validated"),
                sigma: cfg.dataset.sigma.unwrap_or(1.0),
                seed: seeds.data,
                allow_off_grid: cfg.dataset.allow_off_grid,
            };
            let (train_full, test) = generate_with_noise_seed(&scfg, derive_seed(seeds.data, 1))?;
            let val_fraction = rv / (rt + rv);
            let (train, val) = split_two(&train_full, val_fraction, seeds.split)?;
            Ok(RepData {
                train,
                val,
                test,
                label: format!(
                    "synthetic-{}-n{}-d{}-s{}",
                    scfg.scenario, scfg.n, scfg.d, scfg.sigma
                ),
                treatment_name: "t".into(),
                outcome_name: "y".into(),
            })
        }
        SourceKind::Csv => {
            let path = cfg.dataset.path.as_ref().expect("validated");
            let schema = resolve_schema(cfg, path)?;
            let ds = load_csv(path, &schema)?;
            let (train, val, test) = split(&ds, cfg.run.split, seeds.split)?;
            Ok(RepData {
                train,
                val,
                test,
                label: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "csv".into()),
                treatment_name: schema.treatment.clone(),
                outcome_name: schema.outcome.clone(),
            })
        }
        SourceKind::CsvDir => {
            let dir = cfg.dataset.dir.as_ref().expect("validated");
            let files = csv_dir_files(dir)?;
            if files.len() < cfg.run.replications {
                return Err(RunnerError::Report(format!(
                    "csv_dir {} has {} files but the run needs {}",
                    dir.display(),
                    files.len(),
                    cfg.run.replications
                )));
            }
            let path = &files[split_rep];
            let schema = resolve_schema(cfg, path)?;
            let ds = load_csv(path, &schema)?;
            let (train, val, test) = split(&ds, cfg.run.split, seeds.split)?;
            Ok(RepData {
                train,
                val,
                test,
                label: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("file{split_rep}")),
                treatment_name: schema.treatment.clone(),
                outcome_name: schema.outcome.clone(),
            })
        }
    }
}

fn resolve_schema(cfg: &ExperimentConfig, path: &Path) -> Result<CsvSchema, RunnerError> {
    match &cfg.dataset.schema {
        Some(s) => Ok(s.clone()),
        None => Ok(bench::infer_schema(path)?),
    }
}

/// Covariates, treatment and outcome assembled into one matrix for
/// discovery, with matching names.
pub fn discovery_input(ds: &Dataset, treatment: &str, outcome: &str) -> (crate::linalg::Matrix, Vec<String>) {
    let n = ds.len();
    let d = ds.n_covariates();
    let mut m = crate::linalg::Matrix::zeros(n, d + 2);
    for r in 0..n {
        m.row_mut(r)[..d].copy_from_slice(ds.x.row(r));
        m.set(r, d, ds.t[r] as f64);
        m.set(r, d + 1, ds.y[r]);
    }
    let mut names = ds.columns.clone();
    names.push(treatment.to_string());
    names.push(outcome.to_string());
    (m, names)
}

/// Discovery for one replication's training split.
pub fn discover_graph(
    ds: &Dataset,
    treatment: &str,
    outcome: &str,
    prune_threshold: f64,
    seed: u64,
) -> Result<Discovery, DiscoveryError> {
    let (data, names) = discovery_input(ds, treatment, outcome);
    ica_lingam(&data, &names, treatment, outcome, prune_threshold, seed)
}

/// Model spec assembled from the config's overrides on top of the
/// per-kind defaults.
pub fn model_spec_for(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    mode: Mode,
    seed: u64,
) -> ModelSpec {
    let mut spec = ModelSpec::new(kind, mode);
    let t = &cfg.train;
    if let Some(v) = t.trunk_width {
        spec.trunk_width = v;
    }
    if let Some(v) = t.trunk_depth {
        spec.trunk_depth = v;
    }
    if let Some(v) = t.head_width {
        spec.head_width = v;
    }
    if let Some(v) = t.head_depth {
        spec.head_depth = v;
    }
    if let Some(v) = t.learning_rate {
        spec.learning_rate = v;
    }
    if let Some(v) = t.momentum {
        spec.momentum = v;
    }
    if let Some(v) = &t.batch_size {
        spec.batch_size = v.to_batch_size().expect("validated");
    }
    if let Some(v) = t.max_epochs {
        spec.max_epochs = v;
    }
    if let Some(v) = t.patience {
        spec.patience = v;
    }
    if let Some(v) = t.l2 {
        spec.l2 = v;
    }
    spec.seed = seed;
    spec
}

/// One metric row of the raw report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub mode: String,
    pub dataset: String,
    pub replication: usize,
    pub split: String,
    pub sqrt_pehe: Option<f64>,
    pub ate_error: Option<f64>,
    pub att_error: Option<f64>,
    pub n_eval: usize,
}

/// Metrics for one evaluation split: PEHE and ATE error when ground-truth
/// potential-outcome means exist, ATT error when experimental flags exist.
pub fn evaluate_split(
    ds: &Dataset,
    preds: &Predictions,
    split: SplitLabel,
) -> Result<EvalReport, MetricsError> {
    let ite = preds.ite_hat();
    let (pehe, ate) = match (&ds.mu0, &ds.mu1) {
        (Some(m0), Some(m1)) => (
            Some(sqrt_pehe(&ite, m1, m0)?),
            Some(ate_error(&ite, m1, m0)?),
        ),
        _ => (None, None),
    };
    let att = match &ds.exp_flag {
        Some(_) => Some(att_error(ds, &ite)?),
        None => None,
    };
    Ok(EvalReport { sqrt_pehe: pehe, ate_error: ate, att_error: att, n_eval: ds.len(), split })
}

fn report_row(
    kind: ModelKind,
    mode_tag: &str,
    dataset: &str,
    replication: usize,
    report: &EvalReport,
) -> ReportRow {
    ReportRow {
        model: kind.name().to_string(),
        mode: mode_tag.to_string(),
        dataset: dataset.to_string(),
        replication,
        split: report.split.to_string(),
        sqrt_pehe: report.sqrt_pehe,
        ate_error: report.ate_error,
        att_error: report.att_error,
        n_eval: report.n_eval,
    }
}

/// Trains one model on a replication and evaluates train and test splits.
pub fn train_and_evaluate(
    spec: &ModelSpec,
    data: &RepData,
) -> Result<(EvalReport, EvalReport), RunnerError> {
    let mut net = build_model(spec, &data.train.columns)?;
    train(&mut net, &data.train, &data.val, spec)?;
    let train_preds = predict(&net, &data.train.x)?;
    let test_preds = predict(&net, &data.test.x)?;
    let train_report = evaluate_split(&data.train, &train_preds, SplitLabel::Train)?;
    let test_report = evaluate_split(&data.test, &test_preds, SplitLabel::Test)?;
    Ok((train_report, test_report))
}

/// Grouping resolved for a replication, with the graph it came from when
/// one exists.
#[derive(Debug, Clone)]
pub struct ResolvedGrouping {
    pub grouping: VariableGrouping,
    pub graph: Option<CausalGraph>,
    pub used_fallback: bool,
}

/// Resolves groupings for all data-split replications. Discovery failures
/// fall back to the mode graph of earlier successful replications, then
/// to the configured fallback file; replications with no usable grouping
/// get an error string.
pub fn resolve_groupings(
    cfg: &ExperimentConfig,
    datas: &[Option<RepData>],
) -> Result<Vec<Result<ResolvedGrouping, String>>, RunnerError> {
    let n_splits = cfg.run.replications;
    match cfg.graph.source {
        GraphSourceKind::FullyConnected => Ok(datas
            .iter()
            .take(n_splits)
            .map(|d| match d {
                Some(d) => VariableGrouping::fully_connected(d.train.columns.clone())
                    .map(|grouping| ResolvedGrouping { grouping, graph: None, used_fallback: false })
                    .map_err(|e| e.to_string()),
                None => Err("no data".into()),
            })
            .collect()),
        GraphSourceKind::Forbidden => Ok(datas
            .iter()
            .take(n_splits)
            .map(|d| match d {
                Some(d) => groups_from_forbidden(&d.train.columns, &cfg.graph.forbidden)
                    .map(|grouping| ResolvedGrouping { grouping, graph: None, used_fallback: false })
                    .map_err(|e| e.to_string()),
                None => Err("no data".into()),
            })
            .collect()),
        GraphSourceKind::File => {
            let path = cfg.graph.file.as_ref().expect("validated");
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let graph = CausalGraph::from_text(&text)?;
            let grouping = graph.build_groups()?;
            Ok((0..n_splits)
                .map(|_| {
                    Ok(ResolvedGrouping {
                        grouping: grouping.clone(),
                        graph: Some(graph.clone()),
                        used_fallback: false,
                    })
                })
                .collect())
        }
        GraphSourceKind::Discover => {
            // Phase 1: independent discovery per data split, in parallel.
            let attempts: Vec<Result<Discovery, String>> = map_items(
                (0..n_splits).collect::<Vec<usize>>(),
                cfg.run.jobs,
                |r| match &datas[r] {
                    Some(d) => {
                        let seeds = replication_seeds(cfg.run.master_seed, r);
                        discover_graph(
                            &d.train,
                            &d.treatment_name,
                            &d.outcome_name,
                            cfg.graph.prune_threshold,
                            seeds.discovery,
                        )
                        .map_err(|e| e.to_string())
                    }
                    None => Err("no data".into()),
                },
            );
            let fallback_graph: Option<CausalGraph> = match &cfg.graph.fallback_file {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
                    Some(CausalGraph::from_text(&text)?)
                }
                None => None,
            };
            resolve_discovery_attempts(attempts, fallback_graph.as_ref())
        }
    }
}

/// Turns per-replication discovery attempts into usable groupings. A
/// usable attempt is a discovered graph whose group construction succeeds.
/// Unusable attempts fall back to the mode graph over earlier usable
/// replications, then to the supplied fallback graph. Resolution is
/// sequential so "earlier" is well-defined under any thread schedule.
pub fn resolve_discovery_attempts(
    attempts: Vec<Result<Discovery, String>>,
    fallback_graph: Option<&CausalGraph>,
) -> Result<Vec<Result<ResolvedGrouping, String>>, RunnerError> {
    let mut successes: Vec<CausalGraph> = Vec::new();
    let mut resolved = Vec::with_capacity(attempts.len());
    for attempt in attempts {
        let direct = match attempt {
            Ok(Discovery::Graph(g)) => match g.build_groups() {
                Ok(grouping) => Some((g, grouping)),
                Err(_) => None,
            },
            Ok(Discovery::Failure(_)) => None,
            Err(e) => {
                resolved.push(Err(e));
                continue;
            }
        };
        match direct {
            Some((g, grouping)) => {
                successes.push(g.clone());
                resolved.push(Ok(ResolvedGrouping {
                    grouping,
                    graph: Some(g),
                    used_fallback: false,
                }));
            }
            None => {
                let fallback = if !successes.is_empty() {
                    Some(mode_graph(&successes)?)
                } else {
                    fallback_graph.cloned()
                };
                match fallback {
                    Some(g) => match g.build_groups() {
                        Ok(grouping) => resolved.push(Ok(ResolvedGrouping {
                            grouping,
                            graph: Some(g),
                            used_fallback: true,
                        })),
                        Err(e) => resolved.push(Err(format!(
                            "discovery failed and fallback graph is unusable: {e}"
                        ))),
                    },
                    None => resolved.push(Err(
                        "discovery failed with no prior success and no fallback graph".into(),
                    )),
                }
            }
        }
    }
    Ok(resolved)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<(usize, String)>,
    pub raw_csv: PathBuf,
    pub tables_md: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "model,mode,dataset,replication,split,sqrt_pehe,ate_error,att_error,n_eval\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.model,
            r.mode,
            r.dataset,
            r.replication,
            r.split,
            fmt_opt(r.sqrt_pehe),
            fmt_opt(r.ate_error),
            fmt_opt(r.att_error),
            r.n_eval
        );
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>, RunnerError> {
    let mut rows = Vec::new();
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| RunnerError::Report("empty report csv".into()))?;
    if !header.starts_with("model,mode,dataset,replication,split") {
        return Err(RunnerError::Report(format!("unexpected report header {header:?}")));
    }
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 9 {
            return Err(RunnerError::Report(format!("report line {} malformed", i + 2)));
        }
        let opt = |s: &str| -> Option<f64> {
            if s.is_empty() {
                None
            } else {
                s.parse().ok()
            }
        };
        rows.push(ReportRow {
            model: parts[0].into(),
            mode: parts[1].into(),
            dataset: parts[2].into(),
            replication: parts[3]
                .parse()
                .map_err(|_| RunnerError::Report(format!("bad replication on line {}", i + 2)))?,
            split: parts[4].into(),
            sqrt_pehe: opt(parts[5]),
            ate_error: opt(parts[6]),
            att_error: opt(parts[7]),
            n_eval: parts[8].parse().unwrap_or(0),
        });
    }
    Ok(rows)
}

/// Aggregates raw rows into a value table (mean, sd, sem per metric) and a
/// constrained/unconstrained ratio table, rendered as Markdown.
pub fn aggregate_tables(rows: &[ReportRow]) -> Result<(String, String), RunnerError> {
    if rows.is_empty() {
        return Err(RunnerError::Report("no report rows to aggregate".into()));
    }
    type Key = (String, String, String);
    let mut by_key: BTreeMap<Key, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        by_key
            .entry((r.model.clone(), r.mode.clone(), r.split.clone()))
            .or_default()
            .push(r);
    }
    let mut values_md = String::from(
        "| model | mode | split | n | sqrt_pehe (mean ± sem, sd) | ate_error (mean ± sem, sd) | att_error (mean ± sem, sd) |\n|---|---|---|---|---|---|---|\n",
    );
    let cell = |vals: Vec<f64>| -> String {
        if vals.is_empty() {
            return "-".into();
        }
        let (m, sd, sem) = mean_sd_sem(&vals);
        format!("{m:.4} ± {sem:.4} ({sd:.4})")
    };
    for ((model, mode, split), group) in &by_key {
        let pehe: Vec<f64> = group.iter().filter_map(|r| r.sqrt_pehe).collect();
        let ate: Vec<f64> = group.iter().filter_map(|r| r.ate_error).collect();
        let att: Vec<f64> = group.iter().filter_map(|r| r.att_error).collect();
        let _ = writeln!(
            values_md,
            "| {model} | {mode} | {split} | {} | {} | {} | {} |",
            group.len(),
            cell(pehe),
            cell(ate),
            cell(att)
        );
    }

    let mut ratio_md = String::from(
        "| model | split | sqrt_pehe ratio | ate_error ratio | att_error ratio | pairs |\n|---|---|---|---|---|---|\n",
    );
    let mut ratio_csv = String::from("model,split,sqrt_pehe_ratio,ate_error_ratio,att_error_ratio,pairs\n");
    let models: Vec<String> = {
        let mut m: Vec<String> = rows.iter().map(|r| r.model.clone()).collect();
        m.sort();
        m.dedup();
        m
    };
    let splits: Vec<String> = {
        let mut s: Vec<String> = rows.iter().map(|r| r.split.clone()).collect();
        s.sort();
        s.dedup();
        s
    };
    let to_eval = |r: &ReportRow| EvalReport {
        sqrt_pehe: r.sqrt_pehe,
        ate_error: r.ate_error,
        att_error: r.att_error,
        n_eval: r.n_eval,
        split: if r.split == "train" { SplitLabel::Train } else { SplitLabel::Test },
    };
    for model in &models {
        for split in &splits {
            let constrained: Vec<EvalReport> = rows
                .iter()
                .filter(|r| &r.model == model && &r.split == split && r.mode == "cgc")
                .map(to_eval)
                .collect();
            let unconstrained: Vec<EvalReport> = rows
                .iter()
                .filter(|r| &r.model == model && &r.split == split && r.mode == "unconstrained")
                .map(to_eval)
                .collect();
            if constrained.is_empty() || unconstrained.is_empty() {
                continue;
            }
            let ratio = ratio_report(&constrained, &unconstrained)?;
            let show = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                ratio_md,
                "| {model} | {split} | {} | {} | {} | {} |",
                show(ratio.sqrt_pehe),
                show(ratio.ate_error),
                show(ratio.att_error),
                ratio.replications
            );
            let _ = writeln!(
                ratio_csv,
                "{model},{split},{},{},{},{}",
                fmt_opt(ratio.sqrt_pehe),
                fmt_opt(ratio.ate_error),
                fmt_opt(ratio.att_error),
                ratio.replications
            );
        }
    }
    let md = format!(
        "# Experiment report\n\n## Metric values\n\n{values_md}\n## Constrained / unconstrained ratios\n\nValues below 1 mean the constrained variant has the lower error.\n\n{ratio_md}"
    );
    Ok((md, ratio_csv))
}

/// Runs the full experiment described by `cfg`. Per-replication failures
/// are recorded and skipped; the error return is reserved for config-level
/// problems or a batch with zero successes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, RunnerError> {
    cfg.validate("config")?;
    let out_dir = &cfg.run.out_dir;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let graphs_dir = out_dir.join("graphs");
    std::fs::create_dir_all(&graphs_dir).map_err(io_err(&graphs_dir))?;
    let reps_dir = out_dir.join("replications");
    std::fs::create_dir_all(&reps_dir).map_err(io_err(&reps_dir))?;

    if let SourceKind::CsvDir = cfg.dataset.source {
        let dir = cfg.dataset.dir.as_ref().expect("validated");
        let files = csv_dir_files(dir)?;
        if files.len() < cfg.run.replications {
            return Err(RunnerError::Report(format!(
                "csv_dir {} has {} files but the run needs {}; produce one csv per replication first",
                dir.display(),
                files.len(),
                cfg.run.replications
            )));
        }
    }

    let total = total_replications(cfg);
    let mut failures: Vec<(usize, String)> = Vec::new();

    // Data for every data-split replication.
    let split_data: Vec<Option<RepData>> = map_items(
        (0..cfg.run.replications).collect::<Vec<usize>>(),
        cfg.run.jobs,
        |r| replication_data(cfg, r * cfg.run.seed_repeats).ok(),
    );
    // Re-run serially for error messages where data failed.
    let mut data_errors: BTreeMap<usize, String> = BTreeMap::new();
    for (r, d) in split_data.iter().enumerate() {
        if d.is_none() {
            let err = replication_data(cfg, r * cfg.run.seed_repeats)
                .err()
                .map(|e| e.to_string())
                .unwrap_or_else(|| "unknown data error".into());
            data_errors.insert(r, err);
        }
    }

    let needs_grouping = cfg.models.iter().any(|m| m.constrained);
    let groupings: Vec<Result<ResolvedGrouping, String>> = if needs_grouping {
        resolve_groupings(cfg, &split_data)?
    } else {
        (0..cfg.run.replications)
            .map(|r| match &split_data[r] {
                Some(d) => VariableGrouping::fully_connected(d.train.columns.clone())
                    .map(|grouping| ResolvedGrouping { grouping, graph: None, used_fallback: false })
                    .map_err(|e| e.to_string()),
                None => Err(data_errors.get(&r).cloned().unwrap_or_else(|| "no data".into())),
            })
            .collect()
    };

    // Save resolved graphs for provenance.
    for (r, g) in groupings.iter().enumerate() {
        if let Ok(ResolvedGrouping { graph: Some(graph), .. }) = g {
            let path = graphs_dir.join(format!("rep_{r:05}.txt"));
            write_atomic(&path, graph.to_text().as_bytes())?;
        }
    }

    // Train and evaluate every flat replication in parallel.
    let results: Vec<Result<Vec<ReportRow>, String>> = map_items(
        (0..total).collect::<Vec<usize>>(),
        cfg.run.jobs,
        |k| -> Result<Vec<ReportRow>, String> {
            let split_rep = split_rep_of(cfg, k);
            let data = match &split_data[split_rep] {
                Some(d) => d,
                None => {
                    return Err(data_errors
                        .get(&split_rep)
                        .cloned()
                        .unwrap_or_else(|| "no data".into()))
                }
            };
            let resolved = match &groupings[split_rep] {
                Ok(g) => g,
                Err(e) => return Err(e.clone()),
            };
            let mut rows = Vec::new();
            for (idx, mc) in cfg.models.iter().enumerate() {
                let mode = if mc.constrained {
                    Mode::Cgc(resolved.grouping.clone())
                } else {
                    Mode::Unconstrained
                };
                let seed = model_seed(cfg.run.master_seed, k, idx);
                let spec = model_spec_for(cfg, mc.kind, mode, seed);
                let (train_report, test_report) =
                    train_and_evaluate(&spec, data).map_err(|e| e.to_string())?;
                let tag = if mc.constrained { "cgc" } else { "unconstrained" };
                rows.push(report_row(mc.kind, tag, &data.label, k, &train_report));
                rows.push(report_row(mc.kind, tag, &data.label, k, &test_report));
            }
            Ok(rows)
        },
    );

    let mut all_rows: Vec<ReportRow> = Vec::new();
    for (k, result) in results.into_iter().enumerate() {
        match result {
            Ok(rows) => {
                let path = reps_dir.join(format!("rep_{k:05}.csv"));
                write_atomic(&path, rows_to_csv(&rows).as_bytes())?;
                all_rows.extend(rows);
            }
            Err(e) => failures.push((k, e)),
        }
    }

    if all_rows.is_empty() {
        let mut failure_csv = String::from("replication,error\n");
        for (k, e) in &failures {
            let _ = writeln!(failure_csv, "{k},{}", e.replace(',', ";"));
        }
        write_atomic(&out_dir.join("failures.csv"), failure_csv.as_bytes())?;
        return Err(RunnerError::AllReplicationsFailed);
    }

    let raw_csv = out_dir.join("raw_report.csv");
    write_atomic(&raw_csv, rows_to_csv(&all_rows).as_bytes())?;

    let mut failure_csv = String::from("replication,error\n");
    for (k, e) in &failures {
        let _ = writeln!(failure_csv, "{k},{}", e.replace(',', ";"));
    }
    write_atomic(&out_dir.join("failures.csv"), failure_csv.as_bytes())?;

    let (md, ratio_csv) = aggregate_tables(&all_rows)?;
    let tables_md = out_dir.join("tables.md");
    write_atomic(&tables_md, md.as_bytes())?;
    write_atomic(&out_dir.join("ratio_report.csv"), ratio_csv.as_bytes())?;

    Ok(RunOutcome { rows: all_rows, failures, raw_csv, tables_md })
}
