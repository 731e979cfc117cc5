// Temporary check harness; not part of the deliverable.
use nncgc::discovery::{ica_lingam, Discovery, DEFAULT_PRUNE_THRESHOLD};
use nncgc::graph::CausalGraph;
use nncgc::linalg::Matrix;
use nncgc::rng::seeded_rng;
use rand::Rng;
use std::collections::BTreeSet;
use std::time::Instant;

fn edge_f1(rec: &BTreeSet<(usize, usize)>, tru: &BTreeSet<(usize, usize)>) -> f64 {
    let tp = rec.intersection(tru).count() as f64;
    let denom = 2.0 * tp + (rec.len() as f64 - tp) + (tru.len() as f64 - tp);
    if denom == 0.0 {
        1.0
    } else {
        2.0 * tp / denom
    }
}

fn main() {
    let t0 = Instant::now();
    // Part 1: 3-variable chains, 20 seeds.
    let mut exact = 0;
    for seed in 0..20u64 {
        let n = 5000;
        let mut rng = seeded_rng(1000 + seed);
        let c1: f64 = rng.random_range(1.0..2.0);
        let c2: f64 = rng.random_range(1.0..2.0);
        let mut data = Matrix::zeros(n, 3);
        for r in 0..n {
            let x1: f64 = rng.random_range(-1.0..1.0);
            let x2 = c1 * x1 + rng.random_range(-1.0..1.0);
            let x3 = c2 * x2 + rng.random_range(-1.0..1.0);
            data.set(r, 0, x1);
            data.set(r, 1, x2);
            data.set(r, 2, x3);
        }
        let names: Vec<String> = ["x1", "x2", "x3"].iter().map(|s| s.to_string()).collect();
        match ica_lingam(&data, &names, "x1", "x3", DEFAULT_PRUNE_THRESHOLD, seed).unwrap() {
            Discovery::Graph(g) => {
                let want = vec![
                    ("x1".to_string(), "x2".to_string()),
                    ("x2".to_string(), "x3".to_string()),
                ];
                if g.edge_names() == want {
                    exact += 1;
                } else {
                    println!("seed {seed}: got {:?}", g.edge_names());
                }
            }
            Discovery::Failure(f) => println!("seed {seed}: failure {f}"),
        }
    }
    println!("chains: {exact}/20 exact [{:?}]", t0.elapsed());

    // Part 2: random 5-node DAGs, F1.
    let t1 = Instant::now();
    let mut f1s = Vec::new();
    for seed in 0..20u64 {
        let mut rng = seeded_rng(9000 + seed);
        let k = 5;
        let n = 5000;
        // Random lower-triangular SEM with coefficient magnitudes in
        // [0.8, 1.5], edge probability 0.4, uniform noise.
        let mut coeff = vec![vec![0.0f64; k]; k];
        let mut edges = BTreeSet::new();
        for child in 0..k {
            for parent in 0..child {
                if rng.random_bool(0.4) {
                    let mag: f64 = rng.random_range(0.8..1.5);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    coeff[child][parent] = sign * mag;
                    edges.insert((parent, child));
                }
            }
        }
        let mut data = Matrix::zeros(n, k);
        for r in 0..n {
            let mut vals = vec![0.0f64; k];
            for node in 0..k {
                let mut v: f64 = rng.random_range(-1.0..1.0);
                for parent in 0..node {
                    v += coeff[node][parent] * vals[parent];
                }
                vals[node] = v;
            }
            for (c, v) in vals.iter().enumerate() {
                data.set(r, c, *v);
            }
        }
        let names: Vec<String> = (0..k).map(|i| format!("v{i}")).collect();
        // Outcome = sink node (last), treatment = first.
        match ica_lingam(&data, &names, "v0", "v4", DEFAULT_PRUNE_THRESHOLD, 100 + seed).unwrap() {
            Discovery::Graph(g) => {
                let rec: BTreeSet<(usize, usize)> = g
                    .edge_names()
                    .into_iter()
                    .map(|(p, c)| {
                        (
                            p[1..].parse::<usize>().unwrap(),
                            c[1..].parse::<usize>().unwrap(),
                        )
                    })
                    .collect();
                let f1 = edge_f1(&rec, &edges);
                f1s.push(f1);
                if f1 < 0.7 {
                    println!("seed {seed}: f1 {f1:.3} rec {rec:?} tru {edges:?}");
                }
            }
            Discovery::Failure(f) => {
                println!("seed {seed}: failure {f}");
                f1s.push(0.0);
            }
        }
    }
    let mean_f1: f64 = f1s.iter().sum::<f64>() / f1s.len() as f64;
    println!("5-node DAGs: mean F1 {mean_f1:.3} [{:?}]", t1.elapsed());
    let _ = CausalGraph::new(vec!["a", "t", "y"], vec![("t", "y")], "t", "y");
}
