//! Runner-level integration tests: row-count contracts, staged-pipeline
//! equivalence with the one-shot runner, discovery fallback ordering, and
//! the experimental-sample (ATT) flow.

mod support;

use nncgc::bench::{write_csv, Dataset};
use nncgc::config::{
    DatasetConfig, ExperimentConfig, GraphConfig, GraphSourceKind, ModelConfig, RunConfig,
    SourceKind, TrainConfig,
};
use nncgc::bench::Scenario;
use nncgc::discovery::{Discovery, DiscoveryFailure};
use nncgc::graph::CausalGraph;
use nncgc::linalg::Matrix;
use nncgc::metrics::SplitLabel;
use nncgc::models::{build_model, predict, train, ModelKind};
use nncgc::rng::seeded_rng;
use nncgc::models::Mode;
use nncgc::runner::{
    evaluate_split, model_seed, model_spec_for, replication_data, resolve_discovery_attempts,
    run_experiment,
};
use rand::Rng;
use std::path::Path;

fn true_c_graph() -> CausalGraph {
    CausalGraph::new(
        vec!["x1", "x2", "x3", "x4", "x5", "x6", "t", "y"],
        vec![("x1", "y"), ("x2", "y"), ("x3", "y"), ("x2", "t"), ("x3", "t"), ("t", "y")],
        "t",
        "y",
    )
    .unwrap()
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        trunk_width: Some(12),
        trunk_depth: Some(2),
        head_width: Some(8),
        head_depth: Some(1),
        learning_rate: Some(0.01),
        max_epochs: Some(10),
        patience: Some(10),
        ..TrainConfig::default()
    }
}

fn synthetic_cfg(out: &Path, graph_file: &Path, replications: usize) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig {
            source: SourceKind::Synthetic,
            scenario: Some(Scenario::C),
            n: Some(200),
            d: Some(6),
            sigma: Some(0.5),
            allow_off_grid: true,
            path: None,
            dir: None,
            schema: None,
        },
        graph: GraphConfig {
            source: GraphSourceKind::File,
            file: Some(graph_file.to_path_buf()),
            ..GraphConfig::default()
        },
        models: vec![
            ModelConfig { kind: ModelKind::Dragonnet, constrained: true },
            ModelConfig { kind: ModelKind::Dragonnet, constrained: false },
        ],
        run: RunConfig {
            replications,
            seed_repeats: 1,
            split: (0.7, 0.2, 0.1),
            master_seed: 11,
            out_dir: out.to_path_buf(),
            jobs: 0,
        },
        train: tiny_train(),
    }
}

/// Five paired replications produce ten trained models and twenty report
/// rows (train and test per model).
#[test]
fn run_experiment_row_count_contract() {
    let dir = tempfile::tempdir().unwrap();
    let graph_file = dir.path().join("graph.txt");
    std::fs::write(&graph_file, true_c_graph().to_text()).unwrap();
    let cfg = synthetic_cfg(&dir.path().join("out"), &graph_file, 5);
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.failures.is_empty(), "failures: {:?}", outcome.failures);
    assert_eq!(outcome.rows.len(), 20);
    let cgc_rows = outcome.rows.iter().filter(|r| r.mode == "cgc").count();
    assert_eq!(cgc_rows, 10);
    // Output files exist.
    assert!(outcome.raw_csv.exists());
    assert!(outcome.tables_md.exists());
    assert!(dir.path().join("out/ratio_report.csv").exists());
    assert!(dir.path().join("out/replications/rep_00004.csv").exists());
}

/// With a file-sourced graph the runner never needs discovery: a sample
/// far too small for ICA convergence still runs through.
#[test]
fn file_graph_source_skips_discovery() {
    let dir = tempfile::tempdir().unwrap();
    let graph_file = dir.path().join("graph.txt");
    std::fs::write(&graph_file, true_c_graph().to_text()).unwrap();
    let mut cfg = synthetic_cfg(&dir.path().join("out"), &graph_file, 1);
    cfg.dataset.n = Some(60);
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.rows.len(), 4);
}

/// The staged path (per-replication data, explicit model specs, training,
/// evaluation) reproduces the one-shot runner's rows exactly.
#[test]
fn staged_pipeline_equals_run_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let graph_file = dir.path().join("graph.txt");
    std::fs::write(&graph_file, true_c_graph().to_text()).unwrap();
    let cfg = synthetic_cfg(&dir.path().join("out"), &graph_file, 2);
    let outcome = run_experiment(&cfg).unwrap();

    let grouping = true_c_graph().build_groups().unwrap();
    for k in 0..2usize {
        let data = replication_data(&cfg, k).unwrap();
        for (idx, mc) in cfg.models.iter().enumerate() {
            let mode = if mc.constrained {
                Mode::Cgc(grouping.clone())
            } else {
                Mode::Unconstrained
            };
            let seed = model_seed(cfg.run.master_seed, k, idx);
            let spec = model_spec_for(&cfg, mc.kind, mode, seed);
            let mut net = build_model(&spec, &data.train.columns).unwrap();
            train(&mut net, &data.train, &data.val, &spec).unwrap();
            let preds_train = predict(&net, &data.train.x).unwrap();
            let preds_test = predict(&net, &data.test.x).unwrap();
            let train_report =
                evaluate_split(&data.train, &preds_train, SplitLabel::Train).unwrap();
            let test_report = evaluate_split(&data.test, &preds_test, SplitLabel::Test).unwrap();

            let tag = if mc.constrained { "cgc" } else { "unconstrained" };
            for (split, rep) in [("train", &train_report), ("test", &test_report)] {
                let row = outcome
                    .rows
                    .iter()
                    .find(|r| {
                        r.replication == k
                            && r.mode == tag
                            && r.split == split
                            && r.model == mc.kind.name()
                    })
                    .expect("row exists");
                assert_eq!(row.sqrt_pehe, rep.sqrt_pehe);
                assert_eq!(row.ate_error, rep.ate_error);
                assert_eq!(row.att_error, rep.att_error);
            }
        }
    }
}

/// Fallback ordering: failures resolve to the mode graph of earlier
/// usable replications, the first failure with no priors uses the
/// supplied file graph, and everything fails only when neither exists.
#[test]
fn discovery_fallback_ordering() {
    let g_majority = true_c_graph();
    let g_minority = CausalGraph::new(
        vec!["x1", "x2", "x3", "x4", "x5", "x6", "t", "y"],
        vec![("x1", "y"), ("t", "y")],
        "t",
        "y",
    )
    .unwrap();
    let fallback = CausalGraph::new(
        vec!["x1", "x2", "x3", "x4", "x5", "x6", "t", "y"],
        vec![("x2", "y"), ("t", "y")],
        "t",
        "y",
    )
    .unwrap();

    // First attempt fails with no priors: the fallback file wins.
    let attempts = vec![
        Ok(Discovery::Failure(DiscoveryFailure::NotConverged)),
        Ok(Discovery::Graph(g_majority.clone())),
        Ok(Discovery::Graph(g_majority.clone())),
        Ok(Discovery::Graph(g_minority.clone())),
        Ok(Discovery::Failure(DiscoveryFailure::NotConverged)),
        Err("rank deficient".to_string()),
    ];
    let resolved = resolve_discovery_attempts(attempts, Some(&fallback)).unwrap();
    let r0 = resolved[0].as_ref().unwrap();
    assert!(r0.used_fallback);
    assert_eq!(r0.graph.as_ref().unwrap(), &fallback);
    assert!(!resolved[1].as_ref().unwrap().used_fallback);
    // Rep 4 failed with priors {majority x2, minority x1}: mode graph.
    let r4 = resolved[4].as_ref().unwrap();
    assert!(r4.used_fallback);
    assert_eq!(r4.graph.as_ref().unwrap(), &g_majority);
    // Hard errors are recorded, not substituted.
    assert!(resolved[5].is_err());

    // No fallback file and no priors: explicit error message.
    let resolved = resolve_discovery_attempts(
        vec![Ok(Discovery::Failure(DiscoveryFailure::NotConverged))],
        None,
    )
    .unwrap();
    assert!(resolved[0].as_ref().unwrap_err().contains("no fallback"));
}

/// Experimental-flag data flows through to ATT errors; PEHE and ATE stay
/// empty without ground-truth potential outcomes.
#[test]
fn jobs_style_att_flow() {
    let dir = tempfile::tempdir().unwrap();
    // Small synthetic "experimental + observational" table.
    let n = 160;
    let mut rng = seeded_rng(3);
    let mut rows = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut exp_flag = Vec::new();
    for i in 0..n {
        let x1: f64 = rng.random_range(-1.0..1.0);
        let x2: f64 = rng.random_range(-1.0..1.0);
        rows.push(vec![x1, x2]);
        let experimental = i < 100;
        let treated = if experimental { i % 2 == 0 } else { false };
        t.push(u8::from(treated));
        exp_flag.push(u8::from(experimental));
        y.push(x1 + 0.5 * x2 + if treated { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1));
    }
    let ds = Dataset {
        columns: vec!["x1".into(), "x2".into()],
        x: Matrix::from_rows(&rows).unwrap(),
        t,
        y,
        mu0: None,
        mu1: None,
        e_true: None,
        exp_flag: Some(exp_flag),
    };
    let csv_path = dir.path().join("jobs_like.csv");
    write_csv(&ds, &csv_path).unwrap();

    let graph_file = dir.path().join("graph.txt");
    let g = CausalGraph::new(
        vec!["x1", "x2", "t", "y"],
        vec![("x1", "y"), ("x2", "y"), ("t", "y")],
        "t",
        "y",
    )
    .unwrap();
    std::fs::write(&graph_file, g.to_text()).unwrap();

    let cfg = ExperimentConfig {
        dataset: DatasetConfig {
            source: SourceKind::Csv,
            scenario: None,
            n: None,
            d: None,
            sigma: None,
            allow_off_grid: false,
            path: Some(csv_path),
            dir: None,
            schema: None,
        },
        graph: GraphConfig {
            source: GraphSourceKind::File,
            file: Some(graph_file),
            ..GraphConfig::default()
        },
        models: vec![ModelConfig { kind: ModelKind::Tarnet, constrained: true }],
        run: RunConfig {
            replications: 2,
            seed_repeats: 2,
            split: (0.62, 0.18, 0.2),
            master_seed: 5,
            out_dir: dir.path().join("out"),
            jobs: 0,
        },
        train: tiny_train(),
    };
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.failures.is_empty(), "failures: {:?}", outcome.failures);
    // 2 splits x 2 seed repeats x 1 model x 2 splits-of-metrics.
    assert_eq!(outcome.rows.len(), 8);
    for row in &outcome.rows {
        assert!(row.att_error.is_some());
        assert_eq!(row.sqrt_pehe, None);
        assert_eq!(row.ate_error, None);
    }
}

/// Group construction over a discovered graph covers every covariate: the
/// variables discovery leaves disconnected land in the final leftover
/// group, so downstream models always see the full adjustment set.
#[test]
fn discovered_graph_groups_cover_all_covariates() {
    use nncgc::bench::{generate, SyntheticConfig};
    use nncgc::discovery::{ica_lingam, Discovery};
    use nncgc::runner::discovery_input;
    let cfg = SyntheticConfig {
        scenario: Scenario::C,
        n: 1000,
        d: 6,
        sigma: 0.5,
        seed: 41,
        allow_off_grid: false,
    };
    let (train, _) = generate(&cfg).unwrap();
    let (data, names) = discovery_input(&train, "t", "y");
    let mut checked = 0;
    for seed in 0..5u64 {
        if let Discovery::Graph(g) = ica_lingam(&data, &names, "t", "y", 0.3, seed).unwrap() {
            if let Ok(grouping) = g.build_groups() {
                for covariate in &train.columns {
                    assert!(
                        grouping.groups().iter().any(|grp| grp.contains(covariate)),
                        "covariate {covariate} missing from every group"
                    );
                }
                checked += 1;
            }
        }
    }
    assert!(checked > 0, "no discovery run produced usable groups");
}

/// Missing realization files surface as a configuration error before any
/// training happens.
#[test]
fn csv_dir_needs_enough_files() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("realizations");
    std::fs::create_dir_all(&data_dir).unwrap();
    let base = support::semi_synthetic_base(1);
    let ds = support::semi_synthetic_realization(&base, 2);
    write_csv(&ds, &data_dir.join("r0.csv")).unwrap();

    let cfg = ExperimentConfig {
        dataset: DatasetConfig {
            source: SourceKind::CsvDir,
            scenario: None,
            n: None,
            d: None,
            sigma: None,
            allow_off_grid: false,
            path: None,
            dir: Some(data_dir),
            schema: None,
        },
        graph: GraphConfig { source: GraphSourceKind::FullyConnected, ..GraphConfig::default() },
        models: vec![ModelConfig { kind: ModelKind::Tarnet, constrained: false }],
        run: RunConfig {
            replications: 3,
            seed_repeats: 1,
            split: (0.7, 0.2, 0.1),
            master_seed: 1,
            out_dir: dir.path().join("out"),
            jobs: 1,
        },
        train: tiny_train(),
    };
    match run_experiment(&cfg) {
        Err(e) => assert!(e.to_string().contains("has 1 files")),
        Ok(_) => panic!("expected an error about missing files"),
    }
}
