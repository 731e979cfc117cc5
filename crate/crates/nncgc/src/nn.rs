//! Minimal dense network engine: sequential stacks of fully connected
//! layers with analytic gradients and heavy-ball SGD. The branching model
//! topologies are assembled from these stacks in `models`.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::rng::seeded_rng;
use rand::Rng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: input has {got} columns, expected {expected}")]
    ShapeMismatch { layer: usize, expected: usize, got: usize },
    #[error("backward cache does not match layer stack: {0}")]
    StaleCache(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("snapshot io: {0}")]
    SnapshotIo(#[from] std::io::Error),
    #[error("snapshot manifest: {0}")]
    SnapshotManifest(String),
    #[error("snapshot payload has {got} values, manifest declares {expected}")]
    SnapshotLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation value `a = f(z)`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// out_dim x in_dim.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero bias, deterministic per seed.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, seed: u64) -> DenseLayer {
        assert!(in_dim >= 1 && out_dim >= 1, "layer dims must be >= 1");
        let mut rng = seeded_rng(seed);
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for v in weights.data_mut() {
            *v = rng.random_range(-limit..limit);
        }
        DenseLayer { weights, bias: vec![0.0; out_dim], activation }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }
}

/// Per-layer activations kept for the backward pass. `post[l]` is the
/// output of layer `l`; pre-activations are recovered from outputs, so
/// only the activated values are stored.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    pub fn layer_output(&self, l: usize) -> &Matrix {
        &self.post[l]
    }
}

/// Runs `x` through the stack, returning the final activations and the
/// cache needed by `backward`.
pub fn forward(layers: &[DenseLayer], x: &Matrix) -> Result<(Matrix, ForwardCache), NnError> {
    let mut post = Vec::with_capacity(layers.len());
    let mut current = x.clone();
    for (l, layer) in layers.iter().enumerate() {
        if current.cols() != layer.in_dim() {
            return Err(NnError::ShapeMismatch {
                layer: l,
                expected: layer.in_dim(),
                got: current.cols(),
            });
        }
        let mut z = current.matmul_transb(&layer.weights)?;
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(&layer.bias) {
                *v = layer.activation.apply(*v + b);
            }
        }
        post.push(z.clone());
        current = z;
    }
    let cache = ForwardCache { input: x.clone(), post };
    Ok((current, cache))
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weights: Matrix,
    pub d_bias: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> LayerGrads {
        LayerGrads {
            d_weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            d_bias: vec![0.0; layer.out_dim()],
        }
    }

    pub fn add(&mut self, other: &LayerGrads) {
        for (a, b) in self.d_weights.data_mut().iter_mut().zip(other.d_weights.data()) {
            *a += b;
        }
        for (a, b) in self.d_bias.iter_mut().zip(&other.d_bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.d_weights.scale(s);
        for b in &mut self.d_bias {
            *b *= s;
        }
    }
}

/// Exact gradients of the composed map. `upstream` is dL/d(output);
/// returns per-layer parameter gradients and dL/d(input).
pub fn backward(
    layers: &[DenseLayer],
    cache: &ForwardCache,
    upstream: &Matrix,
) -> Result<(Vec<LayerGrads>, Matrix), NnError> {
    if cache.post.len() != layers.len() {
        return Err(NnError::StaleCache(format!(
            "cache has {} layers, stack has {}",
            cache.post.len(),
            layers.len()
        )));
    }
    let last = cache.output();
    if upstream.rows() != last.rows() || upstream.cols() != last.cols() {
        return Err(NnError::StaleCache(format!(
            "upstream is {}x{}, output is {}x{}",
            upstream.rows(),
            upstream.cols(),
            last.rows(),
            last.cols()
        )));
    }

    let mut grads: Vec<LayerGrads> = Vec::with_capacity(layers.len());
    let mut delta = upstream.clone();
    for (l, layer) in layers.iter().enumerate().rev() {
        let out = &cache.post[l];
        // delta <- dL/dz for this layer.
        for r in 0..delta.rows() {
            let drow = delta.row_mut(r);
            let orow = out.row(r);
            for (d, a) in drow.iter_mut().zip(orow) {
                *d *= layer.activation.derivative_from_output(*a);
            }
        }
        let below = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        let d_weights = delta.matmul_transa(below)?;
        let mut d_bias = vec![0.0; layer.out_dim()];
        for r in 0..delta.rows() {
            for (b, d) in d_bias.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        grads.push(LayerGrads { d_weights, d_bias });
        delta = delta.matmul(&layer.weights)?;
    }
    grads.reverse();
    Ok((grads, delta))
}

/// Heavy-ball SGD state: one velocity buffer per registered layer.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<LayerGrads>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, layers: &[&DenseLayer]) -> OptimizerState {
        OptimizerState {
            learning_rate,
            momentum,
            velocity: layers.iter().map(|l| LayerGrads::zeros_like(l)).collect(),
        }
    }

    /// v <- mu*v - lr*g; p <- p + v.
    pub fn step(&mut self, idx: usize, layer: &mut DenseLayer, grads: &LayerGrads) {
        let v = &mut self.velocity[idx];
        let mu = self.momentum;
        let lr = self.learning_rate;
        for (vel, (w, g)) in v
            .d_weights
            .data_mut()
            .iter_mut()
            .zip(layer.weights.data_mut().iter_mut().zip(grads.d_weights.data()))
        {
            *vel = mu * *vel - lr * g;
            *w += *vel;
        }
        for (vel, (b, g)) in v
            .d_bias
            .iter_mut()
            .zip(layer.bias.iter_mut().zip(&grads.d_bias))
        {
            *vel = mu * *vel - lr * g;
            *b += *vel;
        }
    }

    pub fn reset(&mut self) {
        for v in &mut self.velocity {
            v.d_weights.scale(0.0);
            for b in &mut v.d_bias {
                *b = 0.0;
            }
        }
    }
}

/// Shape manifest written ahead of the binary payload in a parameter
/// snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub tensors: Vec<TensorShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl SnapshotManifest {
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.rows * t.cols).sum()
    }
}

const SNAPSHOT_MAGIC: &[u8] = b"NNCGCPARAMS1\n";

/// Writes the manifest (TOML) followed by the flat little-endian payload.
pub fn write_snapshot<W: Write>(
    mut w: W,
    manifest: &SnapshotManifest,
    values: &[f64],
) -> Result<(), NnError> {
    if manifest.total_len() != values.len() {
        return Err(NnError::SnapshotLength { expected: manifest.total_len(), got: values.len() });
    }
    let text = toml::to_string(manifest).map_err(|e| NnError::SnapshotManifest(e.to_string()))?;
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<(SnapshotManifest, Vec<f64>), NnError> {
    let mut magic = vec![0u8; SNAPSHOT_MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != SNAPSHOT_MAGIC {
        return Err(NnError::SnapshotManifest("bad magic".into()));
    }
    let mut lenb = [0u8; 8];
    r.read_exact(&mut lenb)?;
    let len = u64::from_le_bytes(lenb) as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|e| NnError::SnapshotManifest(e.to_string()))?;
    let manifest: SnapshotManifest =
        toml::from_str(&text).map_err(|e| NnError::SnapshotManifest(e.to_string()))?;
    let mut values = Vec::with_capacity(manifest.total_len());
    let mut buf = [0u8; 8];
    for _ in 0..manifest.total_len() {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok((manifest, values))
}
