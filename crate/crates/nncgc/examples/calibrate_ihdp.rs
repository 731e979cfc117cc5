// Temporary calibration harness; not part of the deliverable.
use nncgc::bench::{split, Dataset};
use nncgc::discovery::{ica_lingam, Discovery};
use nncgc::graph::VariableGrouping;
use nncgc::linalg::Matrix;
use nncgc::metrics::sqrt_pehe;
use nncgc::models::{build_model, predict, train, Mode, ModelKind, ModelSpec};
use nncgc::rng::seeded_rng;
use nncgc::runner::discovery_input;
use rand::Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

/// Fixed covariate matrix shaped like the infant-health study: 747
/// subjects, 6 standardized continuous plus 19 binary covariates, and a
/// covariate-dependent treatment with roughly a fifth of subjects treated.
pub struct SemiSyntheticBase {
    pub x: Matrix,
    pub t: Vec<u8>,
    pub columns: Vec<String>,
}

pub const SEMI_SYNTHETIC_ROWS: usize = 747;
pub const SEMI_SYNTHETIC_COLS: usize = 25;
pub const SEMI_SYNTHETIC_CONTINUOUS: usize = 6;

pub fn semi_synthetic_base(seed: u64) -> SemiSyntheticBase {
    let n = SEMI_SYNTHETIC_ROWS;
    let d = SEMI_SYNTHETIC_COLS;
    let mut rng = seeded_rng(seed);
    let mut x = Matrix::zeros(n, d);
    // Binary covariate frequencies drawn once.
    let freqs: Vec<f64> = (SEMI_SYNTHETIC_CONTINUOUS..d)
        .map(|_| rng.random_range(0.1..0.6))
        .collect();
    let spread = 3.0f64.sqrt();
    for r in 0..n {
        // Standardized bounded continuous measurements; study covariates
        // are skewed and bounded, not Gaussian, and the non-Gaussianity is
        // what discovery keys on.
        for c in 0..SEMI_SYNTHETIC_CONTINUOUS {
            x.set(r, c, rng.random_range(-spread..spread));
        }
        for c in SEMI_SYNTHETIC_CONTINUOUS..d {
            let p = freqs[c - SEMI_SYNTHETIC_CONTINUOUS];
            x.set(r, c, f64::from(rng.random_bool(p)));
        }
    }
    // Confounded assignment: a logistic score in a few covariates,
    // shifted so roughly 19% of subjects are treated.
    let mut t = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let score = 0.6 * row[0] - 0.5 * row[1] + 0.4 * row[2] + 0.8 * row[6] - 0.6 * row[7];
        let p = 1.0 / (1.0 + (-(score - 1.6)).exp());
        t.push(u8::from(rng.random_bool(p.clamp(0.02, 0.9))));
    }
    let columns = (1..=d).map(|i| format!("x{i}")).collect();
    SemiSyntheticBase { x, t, columns }
}

/// One simulated realization over the fixed base: the control surface is
/// an exponential of a sparse linear score, the treated surface is linear
/// in the same score, offset so the true effect on the treated averages 4,
/// with unit-variance outcome noise.
pub fn semi_synthetic_realization(base: &SemiSyntheticBase, seed: u64) -> Dataset {
    let n = base.x.rows();
    let d = base.x.cols();
    let mut rng = seeded_rng(seed);
    let choices = [0.0, 0.1, 0.2, 0.3, 0.4];
    let weights = [0.6, 0.1, 0.1, 0.1, 0.1];
    let beta: Vec<f64> = (0..d)
        .map(|_| {
            let u: f64 = rng.random_range(0.0..1.0);
            let mut acc = 0.0;
            for (c, w) in choices.iter().zip(weights) {
                acc += w;
                if u < acc {
                    return *c;
                }
            }
            choices[4]
        })
        .collect();
    let score: Vec<f64> = (0..n)
        .map(|r| base.x.row(r).iter().zip(&beta).map(|(x, b)| x * b).sum())
        .collect();
    let shift: f64 = beta.iter().sum::<f64>() * 0.5;
    let mu0: Vec<f64> = score.iter().map(|s| (s + shift).exp()).collect();
    // Offset the treated surface so the effect on the treated averages 4.
    let treated: Vec<usize> = (0..n).filter(|&i| base.t[i] == 1).collect();
    let raw_gap: f64 = treated
        .iter()
        .map(|&i| score[i] - mu0[i])
        .sum::<f64>()
        / treated.len().max(1) as f64;
    let omega = raw_gap - 4.0;
    let mu1: Vec<f64> = score.iter().map(|s| s - omega).collect();
    let y: Vec<f64> = (0..n)
        .map(|r| {
            let noise: f64 = rng.sample(StandardNormal);
            if base.t[r] == 1 {
                mu1[r] + noise
            } else {
                mu0[r] + noise
            }
        })
        .collect();
    Dataset {
        columns: base.columns.clone(),
        x: base.x.clone(),
        t: base.t.clone(),
        y,
        mu0: Some(mu0),
        mu1: Some(mu1),
        e_true: None,
        exp_flag: None,
    }
}


fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let reps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let prune: f64 = std::env::var("PRUNE").ok().and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let l2: f64 = std::env::var("L2").ok().and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let patience: usize = std::env::var("PATIENCE").ok().and_then(|s| s.parse().ok()).unwrap_or(40);
    println!("ihdp-surrogate bcauss lr {lr} epochs {epochs} reps {reps} prune {prune} l2 {l2} patience {patience}");
    let base = semi_synthetic_base(777);
    println!("treated: {}", base.t.iter().map(|&t| t as usize).sum::<usize>());
    let mut mc = 0.0; let mut mu = 0.0;
    for rep in 0..reps {
        let ds = semi_synthetic_realization(&base, 9000 + rep as u64);
        let (train_ds, val_ds, test_ds) = split(&ds, (0.7, 0.2, 0.1), 100 + rep as u64).unwrap();
        let t0 = Instant::now();
        let (data, names) = discovery_input(&train_ds, "t", "y");
        let grouping = match ica_lingam(&data, &names, "t", "y", prune, 55 + rep as u64).unwrap() {
            Discovery::Graph(g) => match g.build_groups() {
                Ok(gr) => {
                    if rep == 0 { println!("  groups sizes: {:?}", gr.groups().iter().map(|g| g.len()).collect::<Vec<_>>()); }
                    gr
                }
                Err(e) => { println!("  rep {rep}: degenerate ({e}); fully connected"); VariableGrouping::fully_connected(train_ds.columns.clone()).unwrap() }
            },
            Discovery::Failure(f) => { println!("  rep {rep}: discovery failed ({f}); fully connected"); VariableGrouping::fully_connected(train_ds.columns.clone()).unwrap() }
        };
        let t_disc = t0.elapsed();
        let mut pehes = Vec::new();
        for constrained in [true, false] {
            let mode = if constrained { Mode::Cgc(grouping.clone()) } else { Mode::Unconstrained };
            let mut spec = ModelSpec::new(ModelKind::Bcauss, mode);
            spec.learning_rate = lr;
            spec.max_epochs = epochs;
            spec.patience = patience;
            spec.l2 = l2;
            spec.seed = 300 + rep as u64;
            let t1 = Instant::now();
            let mut net = build_model(&spec, &train_ds.columns).unwrap();
            let report = train(&mut net, &train_ds, &val_ds, &spec).unwrap();
            let preds = predict(&net, &test_ds.x).unwrap();
            let pehe = sqrt_pehe(&preds.ite_hat(), test_ds.mu1.as_ref().unwrap(), test_ds.mu0.as_ref().unwrap()).unwrap();
            println!("  rep {rep} constrained={constrained}: test pehe {pehe:.4} epochs {} [{:.1?}] disc [{:.1?}]", report.epochs_run, t1.elapsed(), t_disc);
            pehes.push(pehe);
        }
        mc += pehes[0]; mu += pehes[1];
    }
    mc /= reps as f64; mu /= reps as f64;
    println!("mean test pehe cgc {mc:.4} unconstrained {mu:.4}; ratio {:.4}", mc / mu);
}
