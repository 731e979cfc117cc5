// Temporary calibration harness; not part of the deliverable.
use nncgc::bench::{generate, split_two, Scenario, SyntheticConfig};
use nncgc::discovery::{ica_lingam, Discovery, DEFAULT_PRUNE_THRESHOLD};
use nncgc::graph::VariableGrouping;
use nncgc::metrics::sqrt_pehe;
use nncgc::models::{build_model, predict, train, BatchSize, Mode, ModelKind, ModelSpec};
use nncgc::runner::discovery_input;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scenario = match args.get(1).map(|s| s.as_str()).unwrap_or("C") {
        "A" => Scenario::A,
        "B" => Scenario::B,
        "D" => Scenario::D,
        _ => Scenario::C,
    };
    let kind = match args.get(2).map(|s| s.as_str()).unwrap_or("dragonnet") {
        "tarnet" => ModelKind::Tarnet,
        "bcauss" => ModelKind::Bcauss,
        _ => ModelKind::Dragonnet,
    };
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(300);
    let reps: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(3);
    let batch: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0); // 0 = full
    let width: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(200);

    println!("scenario {scenario:?} kind {kind:?} lr {lr} epochs {epochs} reps {reps} batch {batch} width {width}");
    let mut ratios = Vec::new();
    for rep in 0..reps {
        let cfg = SyntheticConfig {
            scenario,
            n: 1000,
            d: 6,
            sigma: 0.5,
            seed: 1000 + rep as u64,
            allow_off_grid: false,
        };
        let (train_full, test) = generate(&cfg).unwrap();
        let (train_ds, val_ds) = split_two(&train_full, 2.0 / 9.0, 42 + rep as u64).unwrap();

        let t0 = Instant::now();
        let prune: f64 = std::env::var("PRUNE").ok().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_PRUNE_THRESHOLD);
        let use_true_graph = std::env::var("TRUEGRAPH").is_ok();
        let (data, names) = discovery_input(&train_ds, "t", "y");
        let grouping = if std::env::var("FULLGROUP").is_ok() {
            VariableGrouping::fully_connected(train_ds.columns.clone()).unwrap()
        } else if use_true_graph {
            let g = nncgc::graph::CausalGraph::new(
                names.clone(),
                match scenario {
                    Scenario::C => vec![("x1","y"),("x2","y"),("x3","y"),("x2","t"),("x3","t"),("t","y")],
                    Scenario::B => vec![("x1","y"),("x2","y"),("x3","y"),("x4","y"),("x5","y"),("t","y")],
                    _ => vec![("x1","y"),("x2","y"),("x3","y"),("x4","y"),("x5","y"),("x1","t"),("x2","t"),("t","y")],
                }.into_iter().map(|(a,b)|(a.to_string(),b.to_string())),
                "t", "y").unwrap();
            let gr = g.build_groups().unwrap();
            if rep == 0 { println!("  true-graph groups: {:?}", gr.groups()); }
            gr
        } else { match ica_lingam(&data, &names, "t", "y", prune, 7 + rep as u64).unwrap() {
            Discovery::Graph(g) => {
                if rep == 0 {
                    println!("  discovered edges: {:?}", g.edge_names());
                }
                match g.build_groups() {
                    Ok(gr) => {
                        if rep == 0 {
                            println!("  groups: {:?}", gr.groups());
                        }
                        gr
                    }
                    Err(e) => {
                        println!("  degenerate groups ({e}); fully connected");
                        VariableGrouping::fully_connected(train_ds.columns.clone()).unwrap()
                    }
                }
            }
            Discovery::Failure(f) => {
                println!("  discovery failed: {f}");
                VariableGrouping::fully_connected(train_ds.columns.clone()).unwrap()
            }
        } };
        let t_disc = t0.elapsed();

        let mut pehes = Vec::new();
        for constrained in [true, false] {
            let mode = if constrained { Mode::Cgc(grouping.clone()) } else { Mode::Unconstrained };
            let mut spec = ModelSpec::new(kind, mode);
            spec.trunk_width = width;
            spec.head_width = width / 2;
            spec.learning_rate = lr;
            spec.max_epochs = epochs;
            spec.patience = std::env::var("PATIENCE").ok().and_then(|s| s.parse().ok()).unwrap_or(30);
            if batch > 0 {
                spec.batch_size = BatchSize::Fixed(batch);
            } else {
                spec.batch_size = BatchSize::FullSet;
            }
            spec.l2 = std::env::var("L2").ok().and_then(|s| s.parse().ok()).unwrap_or(0.0);
            spec.seed = 500 + rep as u64;
            let t1 = Instant::now();
            let mut net = build_model(&spec, &train_ds.columns).unwrap();
            let report = train(&mut net, &train_ds, &val_ds, &spec).unwrap();
            let preds = predict(&net, &test.x).unwrap();
            let pehe = sqrt_pehe(
                &preds.ite_hat(),
                test.mu1.as_ref().unwrap(),
                test.mu0.as_ref().unwrap(),
            )
            .unwrap();
            println!(
                "  rep {rep} constrained={constrained}: pehe {pehe:.4} ate {:.4} epochs {} val {:.5} train {:.5} [{:.1?}] disc [{:.1?}]",
                (preds.ate() - 1.0 * match scenario { Scenario::C => 1.0, _ => f64::NAN }).abs(),
                report.epochs_run,
                report.best_val_loss,
                report.final_train_loss,
                t1.elapsed(),
                t_disc,
            );
            pehes.push(pehe);
        }
        ratios.push((pehes[0], pehes[1]));
    }
    let mc: f64 = ratios.iter().map(|r| r.0).sum::<f64>() / ratios.len() as f64;
    let mu: f64 = ratios.iter().map(|r| r.1).sum::<f64>() / ratios.len() as f64;
    println!("mean pehe cgc {mc:.4} unconstrained {mu:.4}; ratio of means over {reps} reps: {:.4}", mc / mu);
}
