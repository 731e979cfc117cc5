//! The six estimators: TARNet, Dragonnet and BCAUSS, each in an
//! unconstrained and a graph-constrained variant. Constrained models give
//! every variable group its own pre-representation stack and make the
//! representation layer linear, so representation units cannot encode
//! cross-group interactions.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use thiserror::Error;

use crate::bench::Dataset;
use crate::graph::VariableGrouping;
use crate::linalg::Matrix;
use crate::nn::{
    backward, forward, sigmoid, Activation, DenseLayer, ForwardCache, LayerGrads, NnError,
    OptimizerState, SnapshotManifest, TensorShape,
};
use crate::rng::{derive_seed, seeded_rng};
use rand::Rng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("group references unknown column {0}")]
    UnknownColumn(String),
    #[error("input has {got} covariate columns, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("treatment values must be 0 or 1")]
    NonBinaryTreatment,
    #[error("balance term undefined: batch contains a single treatment arm; train BCAUSS full-batch")]
    SingleArmBatch,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (learning rate {learning_rate}); lower the learning rate or inspect the data")]
    NanLoss { epoch: usize, batch: usize, learning_rate: f64 },
    #[error("datasets disagree on covariate schema")]
    MismatchedSchemas,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tarnet,
    Dragonnet,
    Bcauss,
}

impl ModelKind {
    pub fn has_propensity_head(self) -> bool {
        !matches!(self, ModelKind::Tarnet)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tarnet => "tarnet",
            ModelKind::Dragonnet => "dragonnet",
            ModelKind::Bcauss => "bcauss",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Unconstrained,
    Cgc(VariableGrouping),
}

impl Mode {
    pub fn tag(&self) -> &'static str {
        match self {
            Mode::Unconstrained => "unconstrained",
            Mode::Cgc(_) => "cgc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Fixed(usize),
    FullSet,
}

/// Architecture and training configuration for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub mode: Mode,
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub head_width: usize,
    pub head_depth: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: BatchSize,
    pub max_epochs: usize,
    pub patience: usize,
    /// L2 coefficient on the post-representation (head) layers, matching
    /// where the reference estimators place weight decay. Zero disables.
    pub l2: f64,
    pub seed: u64,
}

impl ModelSpec {
    /// Reference hyperparameters: 200-wide shared layers, 100-wide outcome
    /// layers, SGD with momentum 0.9, batch 64 except BCAUSS which trains
    /// full-batch.
    pub fn new(kind: ModelKind, mode: Mode) -> ModelSpec {
        let (batch_size, max_epochs, patience) = match kind {
            ModelKind::Bcauss => (BatchSize::FullSet, 500, 40),
            _ => (BatchSize::Fixed(64), 300, 30),
        };
        ModelSpec {
            kind,
            mode,
            trunk_width: 200,
            trunk_depth: 3,
            head_width: 100,
            head_depth: 2,
            learning_rate: 1e-5,
            momentum: 0.9,
            batch_size,
            max_epochs,
            patience,
            l2: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        assert!(self.trunk_width >= 1 && self.trunk_depth >= 1);
        assert!(self.head_width >= 1 && self.head_depth >= 1);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTrunk {
    pub columns: Vec<usize>,
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trunk {
    Shared(Vec<DenseLayer>),
    Grouped(Vec<GroupTrunk>),
}

/// A built network: trunk(s), linear-or-relu representation, two outcome
/// heads, optional propensity unit, and the outcome scaler fitted on the
/// training split.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalNet {
    pub kind: ModelKind,
    trunk: Trunk,
    representation: DenseLayer,
    head_y0: Vec<DenseLayer>,
    head_y1: Vec<DenseLayer>,
    propensity: Option<DenseLayer>,
    /// (mean, sd) of training outcomes; predictions are de-standardized
    /// through this.
    pub y_scaler: (f64, f64),
    l2: f64,
    n_inputs: usize,
    columns: Vec<String>,
}

fn stack(
    in_dim: usize,
    width: usize,
    depth: usize,
    activation: Activation,
    seed: u64,
    counter: &mut u64,
) -> Vec<DenseLayer> {
    let mut layers = Vec::with_capacity(depth);
    let mut current = in_dim;
    for _ in 0..depth {
        let layer_seed = derive_seed(seed, *counter);
        *counter += 1;
        layers.push(DenseLayer::init(current, width, activation, layer_seed));
        current = width;
    }
    layers
}

fn head(
    in_dim: usize,
    width: usize,
    depth: usize,
    seed: u64,
    counter: &mut u64,
) -> Vec<DenseLayer> {
    let mut layers = stack(in_dim, width, depth, Activation::Relu, seed, counter);
    let layer_seed = derive_seed(seed, *counter);
    *counter += 1;
    layers.push(DenseLayer::init(width, 1, Activation::Linear, layer_seed));
    layers
}

/// Builds the network for `spec` over the named covariate columns.
pub fn build_model(spec: &ModelSpec, columns: &[String]) -> Result<CausalNet, ModelError> {
    spec.validate()?;
    let d = columns.len();
    let index: HashMap<&String, usize> =
        columns.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let mut counter = 0u64;
    let (trunk, rep_in, rep_activation) = match &spec.mode {
        Mode::Unconstrained => {
            let layers = stack(
                d,
                spec.trunk_width,
                spec.trunk_depth,
                Activation::Relu,
                spec.seed,
                &mut counter,
            );
            (Trunk::Shared(layers), spec.trunk_width, Activation::Relu)
        }
        Mode::Cgc(grouping) => {
            let mut trunks = Vec::with_capacity(grouping.groups().len());
            for group in grouping.groups() {
                let cols: Vec<usize> = group
                    .iter()
                    .map(|name| {
                        index
                            .get(name)
                            .copied()
                            .ok_or_else(|| ModelError::UnknownColumn(name.clone()))
                    })
                    .collect::<Result<_, _>>()?;
                let layers = stack(
                    cols.len(),
                    spec.trunk_width,
                    spec.trunk_depth,
                    Activation::Relu,
                    spec.seed,
                    &mut counter,
                );
                trunks.push(GroupTrunk { columns: cols, layers });
            }
            let width = grouping.groups().len() * spec.trunk_width;
            // A linear representation over concatenated group features
            // keeps cross-group interactions out of the representation.
            (Trunk::Grouped(trunks), width, Activation::Linear)
        }
    };
    let rep_seed = derive_seed(spec.seed, counter);
    counter += 1;
    let representation = DenseLayer::init(rep_in, spec.trunk_width, rep_activation, rep_seed);
    let head_y0 = head(spec.trunk_width, spec.head_width, spec.head_depth, spec.seed, &mut counter);
    let head_y1 = head(spec.trunk_width, spec.head_width, spec.head_depth, spec.seed, &mut counter);
    let propensity = spec.kind.has_propensity_head().then(|| {
        let seed = derive_seed(spec.seed, counter);
        DenseLayer::init(spec.trunk_width, 1, Activation::Sigmoid, seed)
    });
    Ok(CausalNet {
        kind: spec.kind,
        trunk,
        representation,
        head_y0,
        head_y1,
        propensity,
        y_scaler: (0.0, 1.0),
        l2: spec.l2,
        n_inputs: d,
        columns: columns.to_vec(),
    })
}

struct NetCache {
    trunk: Vec<ForwardCache>,
    rep: ForwardCache,
    z: Matrix,
    h0: ForwardCache,
    h1: ForwardCache,
    prop_logits: Option<Matrix>,
}

/// Standardized-scale head outputs for a batch.
pub struct NetOutput {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub g: Option<Vec<f64>>,
}

impl CausalNet {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_refs().iter().map(|l| l.parameter_count()).sum()
    }

    pub fn representation_width(&self) -> usize {
        self.representation.out_dim()
    }

    fn layer_refs(&self) -> Vec<&DenseLayer> {
        let mut v: Vec<&DenseLayer> = Vec::new();
        match &self.trunk {
            Trunk::Shared(ls) => v.extend(ls.iter()),
            Trunk::Grouped(gs) => {
                for g in gs {
                    v.extend(g.layers.iter());
                }
            }
        }
        v.push(&self.representation);
        v.extend(self.head_y0.iter());
        v.extend(self.head_y1.iter());
        if let Some(p) = &self.propensity {
            v.push(p);
        }
        v
    }

    /// Flat indices of the post-representation layers (outcome heads and
    /// propensity unit) within the layer ordering.
    fn head_layer_indices(&self) -> std::ops::Range<usize> {
        let trunk_len = match &self.trunk {
            Trunk::Shared(ls) => ls.len(),
            Trunk::Grouped(gs) => gs.iter().map(|g| g.layers.len()).sum(),
        };
        let total = self.layer_refs().len();
        (trunk_len + 1)..total
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> = Vec::new();
        match &mut self.trunk {
            Trunk::Shared(ls) => v.extend(ls.iter_mut()),
            Trunk::Grouped(gs) => {
                for g in gs {
                    v.extend(g.layers.iter_mut());
                }
            }
        }
        v.push(&mut self.representation);
        v.extend(self.head_y0.iter_mut());
        v.extend(self.head_y1.iter_mut());
        if let Some(p) = &mut self.propensity {
            v.push(p);
        }
        v
    }

    fn check_schema(&self, x: &Matrix) -> Result<(), ModelError> {
        if x.cols() != self.n_inputs {
            return Err(ModelError::SchemaMismatch { expected: self.n_inputs, got: x.cols() });
        }
        Ok(())
    }

    fn forward_net(&self, x: &Matrix) -> Result<(NetOutput, NetCache), ModelError> {
        self.check_schema(x)?;
        let (concat, trunk_caches) = match &self.trunk {
            Trunk::Shared(layers) => {
                let (out, cache) = forward(layers, x)?;
                (out, vec![cache])
            }
            Trunk::Grouped(groups) => {
                let n = x.rows();
                let width: usize = groups
                    .iter()
                    .map(|g| g.layers.last().unwrap().out_dim())
                    .sum();
                let mut concat = Matrix::zeros(n, width);
                let mut caches = Vec::with_capacity(groups.len());
                let mut offset = 0;
                for group in groups {
                    let sub = x.select_cols(&group.columns);
                    let (out, cache) = forward(&group.layers, &sub)?;
                    let w = out.cols();
                    for r in 0..n {
                        concat.row_mut(r)[offset..offset + w].copy_from_slice(out.row(r));
                    }
                    offset += w;
                    caches.push(cache);
                }
                (concat, caches)
            }
        };
        let rep_layers = std::slice::from_ref(&self.representation);
        let (z, rep_cache) = forward(rep_layers, &concat)?;
        let (out0, h0) = forward(&self.head_y0, &z)?;
        let (out1, h1) = forward(&self.head_y1, &z)?;
        let y0 = out0.column(0);
        let y1 = out1.column(0);
        let (g, prop_logits) = match &self.propensity {
            Some(layer) => {
                let mut logits = z.matmul_transb(&layer.weights)?;
                for r in 0..logits.rows() {
                    logits.row_mut(r)[0] += layer.bias[0];
                }
                let g: Vec<f64> = (0..logits.rows()).map(|r| sigmoid(logits.get(r, 0))).collect();
                (Some(g), Some(logits))
            }
            None => (None, None),
        };
        Ok((
            NetOutput { y0, y1, g },
            NetCache { trunk: trunk_caches, rep: rep_cache, z, h0, h1, prop_logits },
        ))
    }

    /// Representation-layer activations for the given covariates.
    pub fn representation_values(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        let (_, cache) = self.forward_net(x)?;
        Ok(cache.z)
    }
}

/// One training batch in standardized-outcome space.
pub struct Batch<'a> {
    pub x: &'a Matrix,
    pub t: &'a [u8],
    pub y_std: &'a [f64],
}

/// Sum over covariates of the squared difference between inverse-
/// propensity-weighted treated and control covariate means. Propensities
/// are clipped to [0.01, 0.99]; the gradient is zero through the clip.
/// Returns the value and d(value)/d(g_i).
pub fn balance_term(x: &Matrix, t: &[u8], g: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
    let n = x.rows();
    let d = x.cols();
    let clip = |v: f64| v.clamp(0.01, 0.99);
    let mut s_t = 0.0;
    let mut s_c = 0.0;
    for i in 0..n {
        let gc = clip(g[i]);
        if t[i] == 1 {
            s_t += 1.0 / gc;
        } else {
            s_c += 1.0 / (1.0 - gc);
        }
    }
    if s_t == 0.0 || s_c == 0.0 {
        return Err(ModelError::SingleArmBatch);
    }
    let mut treated_mean = vec![0.0; d];
    let mut control_mean = vec![0.0; d];
    for i in 0..n {
        let gc = clip(g[i]);
        let row = x.row(i);
        if t[i] == 1 {
            let w = 1.0 / gc;
            for (m, &v) in treated_mean.iter_mut().zip(row) {
                *m += v * w;
            }
        } else {
            let w = 1.0 / (1.0 - gc);
            for (m, &v) in control_mean.iter_mut().zip(row) {
                *m += v * w;
            }
        }
    }
    for m in &mut treated_mean {
        *m /= s_t;
    }
    for m in &mut control_mean {
        *m /= s_c;
    }
    let terms: Vec<f64> =
        treated_mean.iter().zip(&control_mean).map(|(a, b)| a - b).collect();
    let value: f64 = terms.iter().map(|t| t * t).sum();

    let mut dg = vec![0.0; n];
    for i in 0..n {
        let gi = g[i];
        if !(0.01..=0.99).contains(&gi) {
            continue;
        }
        let row = x.row(i);
        let mut acc = 0.0;
        if t[i] == 1 {
            for j in 0..d {
                acc += 2.0 * terms[j] * (-(row[j] - treated_mean[j]) / (s_t * gi * gi));
            }
        } else {
            let omg = 1.0 - gi;
            for j in 0..d {
                acc += 2.0 * terms[j] * (-(row[j] - control_mean[j]) / (s_c * omg * omg));
            }
        }
        dg[i] = acc;
    }
    Ok((value, dg))
}

/// Loss value and total gradient for one batch. The factual squared error
/// is averaged over the batch; Dragonnet adds the mean treatment
/// cross-entropy; BCAUSS adds the covariate balance term.
pub fn loss_and_grads(
    net: &CausalNet,
    batch: &Batch,
) -> Result<(f64, Vec<LayerGrads>), ModelError> {
    compute_loss(net, batch, true).map(|(v, g)| (v, g.expect("gradients requested")))
}

pub fn loss_value(net: &CausalNet, batch: &Batch) -> Result<f64, ModelError> {
    compute_loss(net, batch, false).map(|(v, _)| v)
}

fn compute_loss(
    net: &CausalNet,
    batch: &Batch,
    want_grads: bool,
) -> Result<(f64, Option<Vec<LayerGrads>>), ModelError> {
    let n = batch.x.rows();
    if n == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if batch.t.iter().any(|&t| t > 1) {
        return Err(ModelError::NonBinaryTreatment);
    }
    let (out, cache) = net.forward_net(batch.x)?;
    let nf = n as f64;

    // Factual squared error, averaged over the batch.
    let mut mse = 0.0;
    let mut d_y0 = Matrix::zeros(n, 1);
    let mut d_y1 = Matrix::zeros(n, 1);
    for i in 0..n {
        let pred = if batch.t[i] == 1 { out.y1[i] } else { out.y0[i] };
        let resid = pred - batch.y_std[i];
        mse += resid * resid / nf;
        let grad = 2.0 * resid / nf;
        if batch.t[i] == 1 {
            d_y1.set(i, 0, grad);
        } else {
            d_y0.set(i, 0, grad);
        }
    }
    let mut total = mse;

    // Propensity-head terms and their gradient on the logits.
    let mut d_logits: Option<Matrix> = None;
    if let (Some(g), Some(logits)) = (&out.g, &cache.prop_logits) {
        let mut dl = Matrix::zeros(n, 1);
        match net.kind {
            ModelKind::Dragonnet => {
                // Stable binary cross-entropy from the logits, mean over
                // the batch.
                let mut bce = 0.0;
                for i in 0..n {
                    let z = logits.get(i, 0);
                    let t = batch.t[i] as f64;
                    bce += (z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()) / nf;
                    dl.set(i, 0, (g[i] - t) / nf);
                }
                total += bce;
                d_logits = Some(dl);
            }
            ModelKind::Bcauss => {
                let (value, dg) = balance_term(batch.x, batch.t, g)?;
                total += value;
                for i in 0..n {
                    // Through the sigmoid.
                    dl.set(i, 0, dg[i] * g[i] * (1.0 - g[i]));
                }
                d_logits = Some(dl);
            }
            ModelKind::Tarnet => {}
        }
    }

    if net.l2_coeff() > 0.0 {
        let l2 = net.l2_coeff();
        let layers = net.layer_refs();
        let weight_norm: f64 = net
            .head_layer_indices()
            .map(|i| layers[i].weights.data().iter().map(|w| w * w).sum::<f64>())
            .sum();
        total += l2 * weight_norm;
    }

    if !want_grads {
        return Ok((total, None));
    }

    // Heads back to the representation.
    let (g0, dz0) = backward(&net.head_y0, &cache.h0, &d_y0)?;
    let (g1, dz1) = backward(&net.head_y1, &cache.h1, &d_y1)?;
    let mut dz = dz0;
    for (a, b) in dz.data_mut().iter_mut().zip(dz1.data()) {
        *a += b;
    }
    let mut prop_grads: Option<LayerGrads> = None;
    if let (Some(dl), Some(layer)) = (&d_logits, &net.propensity) {
        let d_weights = dl.matmul_transa(&cache.z)?;
        let d_bias = vec![dl.column(0).iter().sum::<f64>()];
        let dz_prop = dl.matmul(&layer.weights)?;
        for (a, b) in dz.data_mut().iter_mut().zip(dz_prop.data()) {
            *a += b;
        }
        prop_grads = Some(LayerGrads { d_weights, d_bias });
    }

    // Representation back to the concatenated trunk features.
    let rep_layers = std::slice::from_ref(&net.representation);
    let (rep_grads, d_concat) = backward(rep_layers, &cache.rep, &dz)?;

    // Trunks.
    let mut trunk_grads: Vec<LayerGrads> = Vec::new();
    match &net.trunk {
        Trunk::Shared(layers) => {
            let (grads, _) = backward(layers, &cache.trunk[0], &d_concat)?;
            trunk_grads.extend(grads);
        }
        Trunk::Grouped(groups) => {
            let mut offset = 0;
            for (gi, group) in groups.iter().enumerate() {
                let width = group.layers.last().unwrap().out_dim();
                let mut upstream = Matrix::zeros(n, width);
                for r in 0..n {
                    upstream
                        .row_mut(r)
                        .copy_from_slice(&d_concat.row(r)[offset..offset + width]);
                }
                offset += width;
                let (grads, _) = backward(&group.layers, &cache.trunk[gi], &upstream)?;
                trunk_grads.extend(grads);
            }
        }
    }

    let mut all = trunk_grads;
    all.extend(rep_grads);
    all.extend(g0);
    all.extend(g1);
    if let Some(p) = prop_grads {
        all.push(p);
    }

    if net.l2_coeff() > 0.0 {
        let l2 = net.l2_coeff();
        let layers = net.layer_refs();
        for i in net.head_layer_indices() {
            for (g, w) in all[i]
                .d_weights
                .data_mut()
                .iter_mut()
                .zip(layers[i].weights.data())
            {
                *g += 2.0 * l2 * w;
            }
        }
    }
    Ok((total, Some(all)))
}

impl CausalNet {
    // l2 lives on the net so loss evaluation does not need the spec.
    fn l2_coeff(&self) -> f64 {
        self.l2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub early_stopped: bool,
}

/// Standardizes outcomes by the training mean/sd, runs minibatch SGD with
/// momentum and early stopping on the validation loss, and restores the
/// best-validation parameters.
pub fn train(
    net: &mut CausalNet,
    train_ds: &Dataset,
    val_ds: &Dataset,
    spec: &ModelSpec,
) -> Result<TrainReport, ModelError> {
    if train_ds.columns != val_ds.columns {
        return Err(ModelError::MismatchedSchemas);
    }
    net.check_schema(&train_ds.x)?;
    net.l2 = spec.l2;

    let n = train_ds.len();
    let mean = train_ds.y.iter().sum::<f64>() / n as f64;
    let var = train_ds.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let sd = var.sqrt().max(1e-12);
    net.y_scaler = (mean, sd);
    let y_train: Vec<f64> = train_ds.y.iter().map(|v| (v - mean) / sd).collect();
    let y_val: Vec<f64> = val_ds.y.iter().map(|v| (v - mean) / sd).collect();

    let layer_refs = net.layer_refs();
    let mut opt = OptimizerState::new(spec.learning_rate, spec.momentum, &layer_refs);
    drop(layer_refs);

    let mut shuffle_rng = seeded_rng(derive_seed(spec.seed, 0x5f5e));
    let batch_size = match spec.batch_size {
        BatchSize::Fixed(b) => b.max(1).min(n),
        BatchSize::FullSet => n,
    };

    let snapshot = |net: &CausalNet| -> Vec<(Matrix, Vec<f64>)> {
        net.layer_refs()
            .iter()
            .map(|l| (l.weights.clone(), l.bias.clone()))
            .collect()
    };
    let val_batch_loss = |net: &CausalNet| -> Result<f64, ModelError> {
        loss_value(net, &Batch { x: &val_ds.x, t: &val_ds.t, y_std: &y_val })
    };

    let mut best_val = val_batch_loss(net)?;
    let mut best_params = snapshot(net);
    let mut bad_epochs = 0usize;
    let mut epochs_run = 0usize;
    let mut early_stopped = false;
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 0..spec.max_epochs {
        epochs_run = epoch + 1;
        if batch_size < n {
            for i in (1..n).rev() {
                let j = shuffle_rng.random_range(0..=i);
                indices.swap(i, j);
            }
        }
        let mut start = 0;
        let mut batch_no = 0;
        while start < n {
            let end = (start + batch_size).min(n);
            let (bx, bt, by);
            let batch = if batch_size == n {
                Batch { x: &train_ds.x, t: &train_ds.t, y_std: &y_train }
            } else {
                let ids = &indices[start..end];
                bx = train_ds.x.select_rows(ids);
                bt = ids.iter().map(|&i| train_ds.t[i]).collect::<Vec<u8>>();
                by = ids.iter().map(|&i| y_train[i]).collect::<Vec<f64>>();
                Batch { x: &bx, t: &bt, y_std: &by }
            };
            let (loss, grads) = loss_and_grads(net, &batch)?;
            if !loss.is_finite() {
                return Err(ModelError::NanLoss {
                    epoch,
                    batch: batch_no,
                    learning_rate: spec.learning_rate,
                });
            }
            for (idx, (layer, grad)) in net.layers_mut().into_iter().zip(&grads).enumerate() {
                opt.step(idx, layer, grad);
            }
            start = end;
            batch_no += 1;
        }

        let val_loss = val_batch_loss(net)?;
        if !val_loss.is_finite() {
            return Err(ModelError::NanLoss {
                epoch,
                batch: usize::MAX,
                learning_rate: spec.learning_rate,
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_params = snapshot(net);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > spec.patience {
                early_stopped = true;
                break;
            }
        }
    }

    for (layer, (w, b)) in net.layers_mut().into_iter().zip(best_params) {
        layer.weights = w;
        layer.bias = b;
    }
    let final_train_loss =
        loss_value(net, &Batch { x: &train_ds.x, t: &train_ds.t, y_std: &y_train })?;
    Ok(TrainReport { epochs_run, best_val_loss: best_val, final_train_loss, early_stopped })
}

/// De-standardized potential-outcome predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub y0_hat: Vec<f64>,
    pub y1_hat: Vec<f64>,
    pub g_hat: Option<Vec<f64>>,
}

impl Predictions {
    pub fn ite_hat(&self) -> Vec<f64> {
        self.y1_hat.iter().zip(&self.y0_hat).map(|(a, b)| a - b).collect()
    }

    pub fn ate(&self) -> f64 {
        let ite = self.ite_hat();
        ite.iter().sum::<f64>() / ite.len().max(1) as f64
    }
}

pub fn predict(net: &CausalNet, x: &Matrix) -> Result<Predictions, ModelError> {
    if !x.is_finite() {
        return Err(ModelError::ModelFile("input contains non-finite values".into()));
    }
    let (out, _) = net.forward_net(x)?;
    let (mean, sd) = net.y_scaler;
    Ok(Predictions {
        y0_hat: out.y0.iter().map(|v| mean + sd * v).collect(),
        y1_hat: out.y1.iter().map(|v| mean + sd * v).collect(),
        g_hat: out.g,
    })
}

// --- model snapshots -----------------------------------------------------

/// Everything needed to rebuild a `CausalNet` minus the weights, stored as
/// the text manifest of a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    kind: ModelKind,
    mode: String,
    columns: Vec<String>,
    grouping_covariates: Option<Vec<String>>,
    grouping_groups: Option<Vec<Vec<String>>>,
    trunk_width: usize,
    trunk_depth: usize,
    head_width: usize,
    head_depth: usize,
    y_mean: f64,
    y_sd: f64,
    l2: f64,
}

const MODEL_MAGIC: &[u8] = b"NNCGCMODEL1\n";

impl CausalNet {
    fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match &self.trunk {
            Trunk::Shared(ls) => {
                for i in 0..ls.len() {
                    names.push(format!("trunk.l{i}"));
                }
            }
            Trunk::Grouped(gs) => {
                for (g, t) in gs.iter().enumerate() {
                    for i in 0..t.layers.len() {
                        names.push(format!("trunk.g{g}.l{i}"));
                    }
                }
            }
        }
        names.push("representation".into());
        for i in 0..self.head_y0.len() {
            names.push(format!("head0.l{i}"));
        }
        for i in 0..self.head_y1.len() {
            names.push(format!("head1.l{i}"));
        }
        if self.propensity.is_some() {
            names.push("propensity".into());
        }
        names
    }

    pub fn save<W: Write>(&self, mut w: W, spec: &ModelSpec) -> Result<(), ModelError> {
        let (grouping_covariates, grouping_groups) = match &spec.mode {
            Mode::Unconstrained => (None, None),
            Mode::Cgc(g) => {
                (Some(g.covariates().to_vec()), Some(g.groups().to_vec()))
            }
        };
        let manifest = ModelManifest {
            kind: self.kind,
            mode: spec.mode.tag().to_string(),
            columns: self.columns.clone(),
            grouping_covariates,
            grouping_groups,
            trunk_width: spec.trunk_width,
            trunk_depth: spec.trunk_depth,
            head_width: spec.head_width,
            head_depth: spec.head_depth,
            y_mean: self.y_scaler.0,
            y_sd: self.y_scaler.1,
            l2: self.l2,
        };
        let text =
            toml::to_string(&manifest).map_err(|e| ModelError::ModelFile(e.to_string()))?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&(text.len() as u64).to_le_bytes())?;
        w.write_all(text.as_bytes())?;

        let layers = self.layer_refs();
        let tensors: Vec<TensorShape> = layers
            .iter()
            .zip(self.tensor_names())
            .flat_map(|(l, name)| {
                vec![
                    TensorShape {
                        name: format!("{name}.w"),
                        rows: l.weights.rows(),
                        cols: l.weights.cols(),
                    },
                    TensorShape { name: format!("{name}.b"), rows: 1, cols: l.bias.len() },
                ]
            })
            .collect();
        let mut values = Vec::new();
        for l in &layers {
            values.extend_from_slice(l.weights.data());
            values.extend_from_slice(&l.bias);
        }
        crate::nn::write_snapshot(&mut w, &SnapshotManifest { tensors }, &values)?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<(CausalNet, ModelSpec), ModelError> {
        let mut magic = vec![0u8; MODEL_MAGIC.len()];
        r.read_exact(&mut magic)?;
        if magic != MODEL_MAGIC {
            return Err(ModelError::ModelFile("bad magic".into()));
        }
        let mut lenb = [0u8; 8];
        r.read_exact(&mut lenb)?;
        let mut text = vec![0u8; u64::from_le_bytes(lenb) as usize];
        r.read_exact(&mut text)?;
        let manifest: ModelManifest = toml::from_str(
            &String::from_utf8(text).map_err(|e| ModelError::ModelFile(e.to_string()))?,
        )
        .map_err(|e| ModelError::ModelFile(e.to_string()))?;

        let mode = match manifest.mode.as_str() {
            "unconstrained" => Mode::Unconstrained,
            "cgc" => {
                let covariates = manifest
                    .grouping_covariates
                    .clone()
                    .ok_or_else(|| ModelError::ModelFile("cgc model without grouping".into()))?;
                let groups = manifest
                    .grouping_groups
                    .clone()
                    .ok_or_else(|| ModelError::ModelFile("cgc model without groups".into()))?;
                Mode::Cgc(
                    VariableGrouping::new(covariates, groups)
                        .map_err(|e| ModelError::ModelFile(e.to_string()))?,
                )
            }
            other => return Err(ModelError::ModelFile(format!("unknown mode {other:?}"))),
        };
        let mut spec = ModelSpec::new(manifest.kind, mode);
        spec.trunk_width = manifest.trunk_width;
        spec.trunk_depth = manifest.trunk_depth;
        spec.head_width = manifest.head_width;
        spec.head_depth = manifest.head_depth;
        spec.l2 = manifest.l2;
        let mut net = build_model(&spec, &manifest.columns)?;
        net.y_scaler = (manifest.y_mean, manifest.y_sd);
        net.l2 = manifest.l2;

        let (snap, values) = crate::nn::read_snapshot(&mut r)?;
        let mut offset = 0usize;
        let mut layers = net.layers_mut();
        if snap.tensors.len() != layers.len() * 2 {
            return Err(ModelError::ModelFile(format!(
                "expected {} tensors, file has {}",
                layers.len() * 2,
                snap.tensors.len()
            )));
        }
        for (li, layer) in layers.iter_mut().enumerate() {
            let wshape = &snap.tensors[2 * li];
            let bshape = &snap.tensors[2 * li + 1];
            if wshape.rows != layer.weights.rows()
                || wshape.cols != layer.weights.cols()
                || bshape.cols != layer.bias.len()
            {
                return Err(ModelError::ModelFile(format!(
                    "tensor {} shape mismatch",
                    wshape.name
                )));
            }
            let wlen = wshape.rows * wshape.cols;
            layer
                .weights
                .data_mut()
                .copy_from_slice(&values[offset..offset + wlen]);
            offset += wlen;
            layer.bias.copy_from_slice(&values[offset..offset + bshape.cols]);
            offset += bshape.cols;
        }
        drop(layers);
        Ok((net, spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, Scenario, SyntheticConfig};
    use crate::graph::VariableGrouping;

    fn cols(d: usize) -> Vec<String> {
        (1..=d).map(|i| format!("x{i}")).collect()
    }

    fn small_spec(kind: ModelKind, mode: Mode) -> ModelSpec {
        let mut spec = ModelSpec::new(kind, mode);
        spec.trunk_width = 8;
        spec.trunk_depth = 2;
        spec.head_width = 6;
        spec.head_depth = 1;
        spec.seed = 3;
        spec
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> (Matrix, Vec<u8>, Vec<f64>) {
        let mut rng = seeded_rng(seed);
        let mut x = Matrix::zeros(n, d);
        for v in x.data_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (x, t, y)
    }

    #[test]
    fn default_widths_match_reference() {
        let spec = ModelSpec::new(ModelKind::Dragonnet, Mode::Unconstrained);
        assert_eq!(spec.trunk_width, 200);
        assert_eq!(spec.head_width, 100);
        assert_eq!(spec.batch_size, BatchSize::Fixed(64));
        let bcauss = ModelSpec::new(ModelKind::Bcauss, Mode::Unconstrained);
        assert_eq!(bcauss.batch_size, BatchSize::FullSet);
        let net = build_model(&spec, &cols(25)).unwrap();
        assert_eq!(net.representation_width(), 200);
    }

    #[test]
    fn grouped_concat_width_counts_parameters() {
        let d = 6;
        let grouping = VariableGrouping::new(
            cols(d),
            vec![
                vec!["x1".into(), "x2".into()],
                vec!["x3".into()],
                vec!["x4".into(), "x5".into(), "x6".into()],
            ],
        )
        .unwrap();
        let mut spec = small_spec(ModelKind::Tarnet, Mode::Cgc(grouping));
        spec.trunk_width = 10;
        let net = build_model(&spec, &cols(d)).unwrap();
        // Representation consumes 3 groups x width 10.
        assert_eq!(net.representation.in_dim(), 30);
        assert_eq!(net.representation.activation, Activation::Linear);
        // Unconstrained representation keeps the nonlinear activation.
        let unet =
            build_model(&small_spec(ModelKind::Tarnet, Mode::Unconstrained), &cols(d)).unwrap();
        assert_eq!(unet.representation.activation, Activation::Relu);
    }

    #[test]
    fn degenerate_single_group_matches_unconstrained_topology() {
        let d = 4;
        let grouping = VariableGrouping::fully_connected(cols(d)).unwrap();
        let spec = small_spec(ModelKind::Tarnet, Mode::Cgc(grouping));
        let net = build_model(&spec, &cols(d)).unwrap();
        let uspec = small_spec(ModelKind::Tarnet, Mode::Unconstrained);
        let unet = build_model(&uspec, &cols(d)).unwrap();
        assert_eq!(net.parameter_count(), unet.parameter_count());
        assert_eq!(net.representation.activation, Activation::Linear);
        assert_eq!(unet.representation.activation, Activation::Relu);
    }

    #[test]
    fn unknown_group_column_is_rejected() {
        let grouping =
            VariableGrouping::new(vec!["zz".into()], vec![vec!["zz".into()]]).unwrap();
        let spec = small_spec(ModelKind::Tarnet, Mode::Cgc(grouping));
        match build_model(&spec, &cols(3)) {
            Err(ModelError::UnknownColumn(c)) => assert_eq!(c, "zz"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn perfect_predictions_give_zero_tarnet_loss() {
        let spec = small_spec(ModelKind::Tarnet, Mode::Unconstrained);
        let mut net = build_model(&spec, &cols(2)).unwrap();
        // Zero all parameters: every prediction is 0.
        for layer in net.layers_mut() {
            layer.weights.scale(0.0);
            for b in &mut layer.bias {
                *b = 0.0;
            }
        }
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let t = vec![0u8, 1u8];
        let y = vec![0.0, 0.0];
        let loss = loss_value(&net, &Batch { x: &x, t: &t, y_std: &y }).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn dragonnet_uninformative_propensity_adds_ln2() {
        let spec = small_spec(ModelKind::Dragonnet, Mode::Unconstrained);
        let mut net = build_model(&spec, &cols(2)).unwrap();
        // Zero propensity layer: logits 0, g = 0.5 everywhere.
        if let Some(p) = &mut net.propensity {
            p.weights.scale(0.0);
            p.bias[0] = 0.0;
        }
        let (x, t, y) = random_batch(8, 2, 5);
        let full = loss_value(&net, &Batch { x: &x, t: &t, y_std: &y }).unwrap();
        net.kind = ModelKind::Tarnet;
        net.propensity = None;
        let bare = loss_value(&net, &Batch { x: &x, t: &t, y_std: &y }).unwrap();
        assert!((full - bare - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bcauss_balance_matches_hand_arithmetic() {
        // 4 samples, 2 covariates, hand-set propensities.
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![2.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let t = vec![1u8, 1, 0, 0];
        let g = vec![0.5, 0.25, 0.5, 0.8];
        // Treated weights 2, 4; control weights 2, 5.
        // treated mean_j = (x0j*2 + x1j*4) / 6 -> (2/6, 8/6)
        // control mean_j = (x2j*2 + x3j*5) / 7 -> (9/7, 7/7)
        let tm = [2.0f64 / 6.0, 8.0 / 6.0];
        let cm = [9.0 / 7.0, 1.0];
        let expected = (tm[0] - cm[0]).powi(2) + (tm[1] - cm[1]).powi(2);
        let (value, _) = balance_term(&x, &t, &g).unwrap();
        assert!((value - expected).abs() < 1e-12, "value {value} expected {expected}");
    }

    #[test]
    fn bcauss_balance_gradient_matches_finite_differences() {
        let (x, t, _) = random_batch(10, 3, 11);
        let mut rng = seeded_rng(13);
        let g: Vec<f64> = (0..10).map(|_| rng.random_range(0.05..0.95)).collect();
        let (_, dg) = balance_term(&x, &t, &g).unwrap();
        let h = 1e-6;
        for i in 0..10 {
            let mut gp = g.clone();
            gp[i] += h;
            let (up, _) = balance_term(&x, &t, &gp).unwrap();
            gp[i] -= 2.0 * h;
            let (down, _) = balance_term(&x, &t, &gp).unwrap();
            let numeric = (up - down) / (2.0 * h);
            assert!(
                (numeric - dg[i]).abs() < 1e-5 * (1.0 + numeric.abs()),
                "dg[{i}] analytic {} numeric {numeric}",
                dg[i]
            );
        }
    }

    #[test]
    fn bcauss_single_arm_batch_is_an_error() {
        let spec = small_spec(ModelKind::Bcauss, Mode::Unconstrained);
        let net = build_model(&spec, &cols(2)).unwrap();
        let (x, _, y) = random_batch(4, 2, 17);
        let t = vec![1u8, 1, 1, 1];
        match loss_value(&net, &Batch { x: &x, t: &t, y_std: &y }) {
            Err(ModelError::SingleArmBatch) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    /// Finite-difference check of the full model gradient for every kind
    /// and both modes at small width.
    #[test]
    fn model_loss_gradients_match_finite_differences() {
        let d = 4;
        let grouping = VariableGrouping::new(
            cols(d),
            vec![vec!["x1".into(), "x2".into()], vec!["x3".into(), "x4".into()]],
        )
        .unwrap();
        let (x, t, y) = random_batch(12, d, 23);
        for kind in [ModelKind::Tarnet, ModelKind::Dragonnet, ModelKind::Bcauss] {
            for mode in [Mode::Unconstrained, Mode::Cgc(grouping.clone())] {
                let spec = small_spec(kind, mode);
                let mut net = build_model(&spec, &cols(d)).unwrap();
                let batch = Batch { x: &x, t: &t, y_std: &y };
                let (_, grads) = loss_and_grads(&net, &batch).unwrap();
                let n_layers = net.layer_refs().len();
                let h = 1e-6;
                let mut max_rel: f64 = 0.0;
                for li in 0..n_layers {
                    let (rows, cols) = {
                        let l = net.layer_refs()[li];
                        (l.weights.rows(), l.weights.cols())
                    };
                    // Check a deterministic subset of weights per layer.
                    for r in 0..rows.min(2) {
                        for c in 0..cols.min(3) {
                            let orig = net.layers_mut()[li].weights.get(r, c);
                            net.layers_mut()[li].weights.set(r, c, orig + h);
                            let up =
                                loss_value(&net, &Batch { x: &x, t: &t, y_std: &y }).unwrap();
                            net.layers_mut()[li].weights.set(r, c, orig - h);
                            let down =
                                loss_value(&net, &Batch { x: &x, t: &t, y_std: &y }).unwrap();
                            net.layers_mut()[li].weights.set(r, c, orig);
                            let numeric = (up - down) / (2.0 * h);
                            let analytic = grads[li].d_weights.get(r, c);
                            let rel = (numeric - analytic).abs()
                                / analytic.abs().max(numeric.abs()).max(1e-3);
                            max_rel = max_rel.max(rel);
                        }
                    }
                }
                assert!(
                    max_rel < 1e-4,
                    "{:?}: max relative gradient error {max_rel}",
                    kind
                );
            }
        }
    }

    #[test]
    fn l2_regularizes_head_layers_only() {
        let spec0 = small_spec(ModelKind::Dragonnet, Mode::Unconstrained);
        let mut spec1 = spec0.clone();
        spec1.l2 = 0.05;
        let net0 = build_model(&spec0, &cols(3)).unwrap();
        let net1 = build_model(&spec1, &cols(3)).unwrap();
        let (x, t, y) = random_batch(6, 3, 77);
        let batch = Batch { x: &x, t: &t, y_std: &y };
        let (loss0, grads0) = loss_and_grads(&net0, &batch).unwrap();
        let (loss1, grads1) = loss_and_grads(&net1, &batch).unwrap();
        assert!(loss1 > loss0);
        // Trunk and representation gradients are untouched; head gradients
        // pick up the decay term.
        let n_trunk_and_rep = spec0.trunk_depth + 1;
        let mut head_changed = false;
        for (i, (g0, g1)) in grads0.iter().zip(&grads1).enumerate() {
            if i < n_trunk_and_rep {
                assert_eq!(g0.d_weights, g1.d_weights, "layer {i} should be unregularized");
            } else if g0.d_weights != g1.d_weights {
                head_changed = true;
            }
        }
        assert!(head_changed);
    }

    fn linear_memorization_data(n: usize) -> Dataset {
        let mut rng = seeded_rng(31);
        let mut x = Matrix::zeros(n, 2);
        let mut t = Vec::new();
        let mut y = Vec::new();
        for r in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            x.set(r, 0, a);
            x.set(r, 1, b);
            let ti = (r % 2) as u8;
            t.push(ti);
            y.push(1.5 * a - 0.5 * b + ti as f64);
        }
        Dataset {
            columns: cols(2),
            x,
            t,
            y,
            mu0: None,
            mu1: None,
            e_true: None,
            exp_flag: None,
        }
    }

    #[test]
    fn memorizes_noiseless_linear_data() {
        let ds = linear_memorization_data(10);
        let mut spec = small_spec(ModelKind::Tarnet, Mode::Unconstrained);
        spec.learning_rate = 0.02;
        spec.max_epochs = 2000;
        spec.patience = 2000;
        spec.batch_size = BatchSize::FullSet;
        let mut net = build_model(&spec, &cols(2)).unwrap();
        let report = train(&mut net, &ds, &ds, &spec).unwrap();
        assert!(
            report.final_train_loss < 1e-2,
            "train loss {}",
            report.final_train_loss
        );
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let ds = linear_memorization_data(10);
        let mut spec = small_spec(ModelKind::Tarnet, Mode::Unconstrained);
        // A huge learning rate makes the validation loss bounce.
        spec.learning_rate = 10.0;
        spec.max_epochs = 200;
        spec.patience = 0;
        spec.batch_size = BatchSize::FullSet;
        let mut net = build_model(&spec, &cols(2)).unwrap();
        let report = train(&mut net, &ds, &ds, &spec).unwrap();
        assert!(report.early_stopped);
        assert!(report.epochs_run < 200);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let ds = linear_memorization_data(16);
        let mut spec = small_spec(ModelKind::Dragonnet, Mode::Unconstrained);
        spec.learning_rate = 0.01;
        spec.max_epochs = 30;
        spec.batch_size = BatchSize::Fixed(4);
        let mut net1 = build_model(&spec, &cols(2)).unwrap();
        let r1 = train(&mut net1, &ds, &ds, &spec).unwrap();
        let mut net2 = build_model(&spec, &cols(2)).unwrap();
        let r2 = train(&mut net2, &ds, &ds, &spec).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(net1, net2);
    }

    #[test]
    fn bcauss_full_batch_loss_is_row_order_invariant() {
        let c = SyntheticConfig {
            scenario: Scenario::C,
            n: 500,
            d: 6,
            sigma: 0.5,
            seed: 11,
            allow_off_grid: false,
        };
        let (ds, _) = generate(&c).unwrap();
        let spec = small_spec(ModelKind::Bcauss, Mode::Unconstrained);
        let net = build_model(&spec, &cols(6)).unwrap();
        let y_std: Vec<f64> = ds.y.clone();
        let base =
            loss_value(&net, &Batch { x: &ds.x, t: &ds.t, y_std: &y_std }).unwrap();
        let perm: Vec<usize> = (0..ds.len()).rev().collect();
        let p = ds.subset(&perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y_std[i]).collect();
        let permuted = loss_value(&net, &Batch { x: &p.x, t: &p.t, y_std: &yp }).unwrap();
        assert!((base - permuted).abs() < 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn untrained_predictions_are_finite_and_destandardized_exactly() {
        let spec = small_spec(ModelKind::Dragonnet, Mode::Unconstrained);
        let mut net = build_model(&spec, &cols(3)).unwrap();
        net.y_scaler = (10.0, 2.0);
        let (x, _, _) = random_batch(5, 3, 41);
        let preds = predict(&net, &x).unwrap();
        assert!(preds.y0_hat.iter().all(|v| v.is_finite()));
        assert!(preds.y1_hat.iter().all(|v| v.is_finite()));
        for g in preds.g_hat.as_ref().unwrap() {
            assert!(*g > 0.0 && *g < 1.0);
        }
        // Exact de-standardization round trip against raw head outputs.
        let (raw, _) = net.forward_net(&x).unwrap();
        for i in 0..5 {
            assert_eq!(preds.y0_hat[i], 10.0 + 2.0 * raw.y0[i]);
            assert_eq!(preds.y1_hat[i], 10.0 + 2.0 * raw.y1[i]);
        }
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let spec = small_spec(ModelKind::Tarnet, Mode::Unconstrained);
        let net = build_model(&spec, &cols(3)).unwrap();
        let x = Matrix::zeros(2, 5);
        match predict(&net, &x) {
            Err(ModelError::SchemaMismatch { expected: 3, got: 5 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn cgc_representation_has_no_cross_group_interactions() {
        let d = 6;
        let grouping = VariableGrouping::new(
            cols(d),
            vec![
                vec!["x1".into(), "x2".into(), "x3".into()],
                vec!["x4".into(), "x5".into(), "x6".into()],
            ],
        )
        .unwrap();
        let spec = small_spec(ModelKind::Tarnet, Mode::Cgc(grouping));
        let net = build_model(&spec, &cols(d)).unwrap();
        let mut rng = seeded_rng(47);
        let base: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let delta = 0.1;
        // x1 and x4 never share a group.
        let (i, j) = (0usize, 3usize);
        let mut rows = vec![base.clone(), base.clone(), base.clone(), base.clone()];
        rows[1][i] += delta;
        rows[2][j] += delta;
        rows[3][i] += delta;
        rows[3][j] += delta;
        let x = Matrix::from_rows(&rows).unwrap();
        let z = net.representation_values(&x).unwrap();
        for unit in 0..z.cols() {
            let mixed = z.get(3, unit) - z.get(1, unit) - z.get(2, unit) + z.get(0, unit);
            let scale = 1.0 + z.get(0, unit).abs();
            assert!(mixed.abs() <= 1e-8 * scale, "unit {unit}: mixed {mixed}");
        }
    }

    #[test]
    fn model_save_load_roundtrip_is_exact() {
        let d = 4;
        let grouping = VariableGrouping::new(
            cols(d),
            vec![vec!["x1".into(), "x2".into()], vec!["x3".into(), "x4".into()]],
        )
        .unwrap();
        let spec = small_spec(ModelKind::Bcauss, Mode::Cgc(grouping));
        let ds = {
            let mut base = linear_memorization_data(12);
            base.columns = cols(4);
            base.x = {
                let mut m = Matrix::zeros(12, 4);
                for r in 0..12 {
                    for c in 0..4 {
                        m.set(r, c, (r * 4 + c) as f64 * 0.1 - 2.0);
                    }
                }
                m
            };
            base
        };
        let mut net = build_model(&spec, &cols(d)).unwrap();
        let mut tspec = spec.clone();
        tspec.max_epochs = 5;
        tspec.learning_rate = 0.01;
        train(&mut net, &ds, &ds, &tspec).unwrap();
        let mut buf = Vec::new();
        net.save(&mut buf, &spec).unwrap();
        let (loaded, loaded_spec) = CausalNet::load(buf.as_slice()).unwrap();
        assert_eq!(loaded, net);
        assert_eq!(loaded_spec.kind, spec.kind);
        let x = Matrix::from_rows(&[vec![0.1, -0.2, 0.3, 0.4]]).unwrap();
        assert_eq!(predict(&net, &x).unwrap(), predict(&loaded, &x).unwrap());
    }
}
