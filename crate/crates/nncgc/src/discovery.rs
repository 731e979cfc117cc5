//! Linear non-Gaussian causal discovery: deflation FastICA, unmixing-row
//! assignment, causal-order search and coefficient pruning, producing a
//! `CausalGraph` for group construction when no expert graph is given.
//! Non-convergence is a value, not an error; the runner substitutes a
//! default graph for failed replications.

use thiserror::Error;

use crate::graph::{CausalGraph, GraphError};
use crate::linalg::{dot, eigh_symmetric, norm, LinalgError, Matrix};
use crate::rng::seeded_rng;
use rand::Rng;

// The standard fixed-point tolerance; tighter settings leave the
// deflation loop wandering on near-Gaussian components and discovery
// reports non-convergence on realistic covariate mixes.
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.1;

/// Exhaustive causal-order search is used up to this many variables;
/// beyond it a greedy row-elimination takes over.
pub const EXHAUSTIVE_ORDER_LIMIT: usize = 8;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("need more samples than variables and at least 2 variables (n={n}, k={k})")]
    BadShape { n: usize, k: usize },
    #[error("column {index} is constant (zero variance)")]
    ZeroVariance { index: usize },
    #[error("column {index} is linearly dependent on the others (rank-deficient covariance)")]
    RankDeficient { index: usize },
    #[error("variable {name} is constant (zero variance)")]
    ZeroVarianceNamed { name: String },
    #[error("variable {name} is linearly dependent on the others (rank-deficient covariance)")]
    RankDeficientNamed { name: String },
    #[error("data contains non-finite values")]
    NonFinite,
    #[error("got {got} names for {expected} data columns")]
    NamesMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Result of the ICA stage: an unmixing matrix for the standardized data
/// with unit-norm rows.
#[derive(Debug, Clone)]
pub struct MixingEstimate {
    pub unmixing: Matrix,
    pub converged: bool,
    /// Largest fixed-point iteration count over the extracted components.
    pub iterations: usize,
}

/// Discovery returns either a usable graph or a described failure.
#[derive(Debug, Clone, PartialEq)]
pub enum Discovery {
    Graph(CausalGraph),
    Failure(DiscoveryFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscoveryFailure {
    /// Some ICA component hit the iteration cap.
    NotConverged,
    /// The permuted unmixing matrix has a near-zero diagonal entry, so
    /// coefficient normalization would blow up.
    DegenerateDiagonal,
}

impl std::fmt::Display for DiscoveryFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiscoveryFailure::NotConverged => write!(f, "ICA did not converge"),
            DiscoveryFailure::DegenerateDiagonal => {
                write!(f, "unmixing diagonal is numerically degenerate")
            }
        }
    }
}

/// Column-standardizes `data` (mean 0, variance 1). Errors on constant
/// columns.
fn standardize(data: &Matrix) -> Result<Matrix, DiscoveryError> {
    let (mean, sd) = data.column_stats();
    if let Some(index) = sd.iter().position(|s| *s < 1e-12) {
        return Err(DiscoveryError::ZeroVariance { index });
    }
    let mut out = data.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[c]) / sd[c];
        }
    }
    Ok(out)
}

/// Deflation-based fixed-point ICA with a tanh contrast on whitened,
/// column-standardized data.
pub fn fast_ica(
    data: &Matrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<MixingEstimate, DiscoveryError> {
    let (n, k) = (data.rows(), data.cols());
    if n <= k || k < 2 {
        return Err(DiscoveryError::BadShape { n, k });
    }
    if !data.is_finite() {
        return Err(DiscoveryError::NonFinite);
    }
    let std_data = standardize(data)?;

    // Whitening from the eigendecomposition of the covariance.
    let cov = {
        let mut c = std_data.matmul_transa(&std_data)?;
        c.scale(1.0 / n as f64);
        c
    };
    let (eigvals, eigvecs) = eigh_symmetric(&cov)?;
    let max_eig = eigvals[0].max(0.0);
    if let Some(bad) = eigvals.iter().position(|&l| l <= 1e-10 * max_eig.max(1e-300)) {
        // Name the column loading the degenerate direction hardest.
        let mut col = 0;
        let mut best = -1.0;
        for r in 0..k {
            let w = eigvecs.get(r, bad).abs();
            if w > best {
                best = w;
                col = r;
            }
        }
        return Err(DiscoveryError::RankDeficient { index: col });
    }
    // whiten = D^(-1/2) E^T, so cov(std_data * whiten^T) = I.
    let mut whiten = Matrix::zeros(k, k);
    for r in 0..k {
        let scale = 1.0 / eigvals[r].sqrt();
        for c in 0..k {
            whiten.set(r, c, eigvecs.get(c, r) * scale);
        }
    }
    let white_data = std_data.matmul_transb(&whiten)?;

    let mut rng = seeded_rng(seed);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut converged = true;
    let mut worst_iterations = 0usize;

    for _ in 0..k {
        let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        orthonormalize(&mut w, &components);
        let mut iterations = 0usize;
        let mut this_converged = false;
        while iterations < max_iter {
            iterations += 1;
            let mut new_w = vec![0.0; k];
            let mut mean_gprime = 0.0;
            for r in 0..white_data.rows() {
                let row = white_data.row(r);
                let u = dot(&w, row);
                let t = u.tanh();
                for (nw, &z) in new_w.iter_mut().zip(row) {
                    *nw += z * t;
                }
                mean_gprime += 1.0 - t * t;
            }
            let inv_n = 1.0 / n as f64;
            mean_gprime *= inv_n;
            for (nw, &old) in new_w.iter_mut().zip(&w) {
                *nw = *nw * inv_n - mean_gprime * old;
            }
            orthonormalize(&mut new_w, &components);
            let agreement = dot(&new_w, &w).abs();
            w = new_w;
            if (agreement - 1.0).abs() < tol {
                this_converged = true;
                break;
            }
        }
        worst_iterations = worst_iterations.max(iterations);
        if !this_converged {
            converged = false;
        }
        components.push(w);
    }

    // Back to the standardized scale, rows normalized to unit length.
    let w_white = Matrix::from_rows(&components)?;
    let mut unmixing = w_white.matmul(&whiten)?;
    for r in 0..k {
        let len = norm(unmixing.row(r));
        if len > 0.0 {
            for v in unmixing.row_mut(r) {
                *v /= len;
            }
        }
    }
    Ok(MixingEstimate { unmixing, converged, iterations: worst_iterations })
}

/// Projects out the already-extracted components and renormalizes.
fn orthonormalize(w: &mut [f64], previous: &[Vec<f64>]) {
    for p in previous {
        let proj = dot(w, p);
        for (wi, pi) in w.iter_mut().zip(p) {
            *wi -= proj * pi;
        }
    }
    let len = norm(w);
    if len > 1e-12 {
        for v in w.iter_mut() {
            *v /= len;
        }
    } else {
        // Degenerate draw; fall back to a deterministic basis vector.
        let pivot = previous.len() % w.len();
        for (i, v) in w.iter_mut().enumerate() {
            *v = if i == pivot { 1.0 } else { 0.0 };
        }
        for p in previous {
            let proj = dot(w, p);
            for (wi, pi) in w.iter_mut().zip(p) {
                *wi -= proj * pi;
            }
        }
        let len = norm(w).max(1e-12);
        for v in w.iter_mut() {
            *v /= len;
        }
    }
}

/// Minimum-cost assignment (row -> column) by the O(n^3) Hungarian
/// algorithm with potentials.
pub fn hungarian(cost: &Matrix) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "hungarian needs a square cost matrix");
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Causal order minimizing the squared mass above the diagonal of the
/// permuted coefficient matrix. Exhaustive for small k, greedy
/// row-elimination beyond.
fn causal_order(coeffs: &Matrix) -> Vec<usize> {
    let k = coeffs.rows();
    if k <= EXHAUSTIVE_ORDER_LIMIT {
        let mut best_cost = f64::INFINITY;
        let mut best: Vec<usize> = (0..k).collect();
        let mut perm: Vec<usize> = (0..k).collect();
        permute_search(coeffs, &mut perm, 0, &mut best_cost, &mut best);
        best
    } else {
        let mut remaining: Vec<usize> = (0..k).collect();
        let mut order = Vec::with_capacity(k);
        while !remaining.is_empty() {
            // The most exogenous remaining variable has the smallest
            // squared coefficients on the other remaining variables.
            let (pos, _) = remaining
                .iter()
                .enumerate()
                .map(|(pos, &r)| {
                    let score: f64 = remaining
                        .iter()
                        .filter(|&&j| j != r)
                        .map(|&j| coeffs.get(r, j) * coeffs.get(r, j))
                        .sum();
                    (pos, score)
                })
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            order.push(remaining.remove(pos));
        }
        order
    }
}

fn upper_triangle_cost(coeffs: &Matrix, perm: &[usize]) -> f64 {
    let mut cost = 0.0;
    for p in 0..perm.len() {
        for q in (p + 1)..perm.len() {
            let v = coeffs.get(perm[p], perm[q]);
            cost += v * v;
        }
    }
    cost
}

fn permute_search(
    coeffs: &Matrix,
    perm: &mut Vec<usize>,
    depth: usize,
    best_cost: &mut f64,
    best: &mut Vec<usize>,
) {
    if depth == perm.len() {
        let cost = upper_triangle_cost(coeffs, perm);
        if cost < *best_cost {
            *best_cost = cost;
            best.clone_from(perm);
        }
        return;
    }
    for i in depth..perm.len() {
        perm.swap(depth, i);
        permute_search(coeffs, perm, depth + 1, best_cost, best);
        perm.swap(depth, i);
    }
}

/// Full ICA-LiNGAM pipeline on a data matrix whose columns are named. The
/// resulting graph has every edge incident to the outcome oriented into
/// the outcome.
pub fn ica_lingam(
    data: &Matrix,
    names: &[String],
    treatment: &str,
    outcome: &str,
    prune_threshold: f64,
    seed: u64,
) -> Result<Discovery, DiscoveryError> {
    let k = data.cols();
    if names.len() != k {
        return Err(DiscoveryError::NamesMismatch { expected: k, got: names.len() });
    }
    let name_error = |e: DiscoveryError| match e {
        DiscoveryError::ZeroVariance { index } => {
            DiscoveryError::ZeroVarianceNamed { name: names[index].clone() }
        }
        DiscoveryError::RankDeficient { index } => {
            DiscoveryError::RankDeficientNamed { name: names[index].clone() }
        }
        other => other,
    };
    let estimate = fast_ica(data, DEFAULT_TOL, DEFAULT_MAX_ITER, seed).map_err(name_error)?;
    if !estimate.converged {
        return Ok(Discovery::Failure(DiscoveryFailure::NotConverged));
    }

    // Row permutation maximizing the product of diagonal magnitudes.
    let mut cost = Matrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            cost.set(r, c, -(estimate.unmixing.get(r, c).abs() + 1e-300).ln());
        }
    }
    let assignment = hungarian(&cost);
    let mut permuted = Matrix::zeros(k, k);
    for (row, &col) in assignment.iter().enumerate() {
        for c in 0..k {
            permuted.set(col, c, estimate.unmixing.get(row, c));
        }
    }

    // Normalize rows by the diagonal; B = I - W.
    for r in 0..k {
        let d = permuted.get(r, r);
        if d.abs() < 1e-9 {
            return Ok(Discovery::Failure(DiscoveryFailure::DegenerateDiagonal));
        }
        for c in 0..k {
            permuted.set(r, c, permuted.get(r, c) / d);
        }
    }
    let mut coeffs = Matrix::zeros(k, k);
    for r in 0..k {
        for c in 0..k {
            let id = if r == c { 1.0 } else { 0.0 };
            coeffs.set(r, c, id - permuted.get(r, c));
        }
    }

    let order = causal_order(&coeffs);
    let mut position = vec![0usize; k];
    for (pos, &node) in order.iter().enumerate() {
        position[node] = pos;
    }

    // Keep strictly lower-triangular entries in causal order, prune small
    // coefficients, and emit parent -> child edges.
    let mut edges: Vec<(String, String)> = Vec::new();
    for child in 0..k {
        for parent in 0..k {
            if position[child] > position[parent]
                && coeffs.get(child, parent).abs() >= prune_threshold
            {
                edges.push((names[parent].clone(), names[child].clone()));
            }
        }
    }
    let graph = CausalGraph::new(names.to_vec(), edges, treatment, outcome)?;
    Ok(Discovery::Graph(graph.normalize_discovered()?))
}
