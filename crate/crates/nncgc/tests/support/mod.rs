//! Shared test support: brute-force oracles, random DAG generation, and a
//! semi-synthetic benchmark generator in the style of the infant-health
//! study (fixed covariates, re-simulated nonlinear/linear response
//! surfaces), used when the original distribution files are not present.

use nncgc::bench::Dataset;
use nncgc::graph::{CausalGraph, GraphError};
use nncgc::linalg::Matrix;
use nncgc::rng::seeded_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeSet;

/// Random DAG over `n_nodes` named n0..n{k-1}: edges point from lower to
/// higher index with probability `edge_prob`, then treatment and outcome
/// are drawn at random.
pub fn random_dag(rng: &mut ChaCha8Rng, n_nodes: usize, edge_prob: f64) -> CausalGraph {
    assert!(n_nodes >= 2);
    let names: Vec<String> = (0..n_nodes).map(|i| format!("n{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..n_nodes {
        for j in (i + 1)..n_nodes {
            if rng.random_bool(edge_prob) {
                edges.push((names[i].clone(), names[j].clone()));
            }
        }
    }
    let t = rng.random_range(0..n_nodes);
    let y = loop {
        let y = rng.random_range(0..n_nodes);
        if y != t {
            break y;
        }
    };
    CausalGraph::new(names.clone(), edges, &names[t], &names[y]).expect("construction is valid")
}

/// Reachability oracle: `from` reaches `to` through directed edges.
pub fn reaches(edges: &[(String, String)], from: &str, to: &str) -> bool {
    if from == to {
        return true;
    }
    edges
        .iter()
        .filter(|(p, _)| p == from)
        .any(|(_, c)| reaches(edges, c, to))
}

/// Brute-force ancestor set by path enumeration over all candidate nodes.
pub fn ancestors_oracle(g: &CausalGraph, node: &str) -> BTreeSet<String> {
    let edges = g.edge_names();
    g.nodes()
        .iter()
        .filter(|n| n.as_str() != node && reaches(&edges, n, node))
        .cloned()
        .collect()
}

/// Direct application of the grouping definition: the outcome's covariate
/// parents form one group; each such parent contributes its ancestral
/// closure with the treatment removed; empty sets are dropped, duplicate
/// sets are dropped keeping the first, uncovered covariates are appended
/// as one final group. Errors when the outcome has no covariate parent.
pub fn build_groups_oracle(g: &CausalGraph) -> Result<Vec<Vec<String>>, GraphError> {
    let edges = g.edge_names();
    let treatment = g.treatment().to_string();
    let outcome = g.outcome().to_string();
    let mut pa_y: Vec<String> = edges
        .iter()
        .filter(|(_, c)| *c == outcome)
        .map(|(p, _)| p.clone())
        .collect();
    pa_y.sort_by_key(|n| g.nodes().iter().position(|x| x == n).unwrap());
    pa_y.dedup();
    pa_y.retain(|p| *p != treatment);
    if pa_y.is_empty() {
        return Err(GraphError::DegenerateGrouping);
    }
    let order = |n: &String| g.nodes().iter().position(|x| x == n).unwrap();
    let mut groups: Vec<Vec<String>> = Vec::new();
    let push_unique = |set: BTreeSet<String>, groups: &mut Vec<Vec<String>>| {
        if set.is_empty() {
            return;
        }
        let mut v: Vec<String> = set.into_iter().collect();
        v.sort_by_key(order);
        if !groups.iter().any(|g| {
            g.iter().collect::<BTreeSet<_>>() == v.iter().collect::<BTreeSet<_>>()
        }) {
            groups.push(v);
        }
    };
    push_unique(pa_y.iter().cloned().collect(), &mut groups);
    for parent in &pa_y {
        let mut set = ancestors_oracle(g, parent);
        set.insert(parent.clone());
        set.remove(&treatment);
        push_unique(set, &mut groups);
    }
    let covered: BTreeSet<&String> = groups.iter().flatten().collect();
    let leftover: Vec<String> = g
        .nodes()
        .iter()
        .filter(|n| **n != treatment && **n != outcome && !covered.contains(n))
        .cloned()
        .collect();
    let mut groups = groups;
    if !leftover.is_empty() {
        groups.push(leftover);
    }
    Ok(groups)
}

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

/// Edge-set F1 between a recovered and a true graph.
pub fn edge_f1(recovered: &CausalGraph, truth: &CausalGraph) -> f64 {
    let rec: BTreeSet<(String, String)> = recovered.edge_names().into_iter().collect();
    let tru: BTreeSet<(String, String)> = truth.edge_names().into_iter().collect();
    let tp = rec.intersection(&tru).count() as f64;
    if rec.is_empty() && tru.is_empty() {
        return 1.0;
    }
    let denom = 2.0 * tp + (rec.len() as f64 - tp) + (tru.len() as f64 - tp);
    if denom == 0.0 {
        0.0
    } else {
        2.0 * tp / denom
    }
}
