//! Feedforward classifier with a softplus evidence head and hand-written
//! backpropagation.
//!
//! Hidden layers use ReLU; the final layer emits non-negative evidence via
//! softplus, which keeps all Dirichlet parameters strictly above the prior
//! count. Forward/backward are deterministic for fixed seeds regardless of
//! thread count: all parallel loops are over independent rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: expected {expected}, got {got} ({what})")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("stale cache: built for params version {cache}, current is {params}")]
    StaleCache { cache: u64, params: u64 },
    #[error("layer_sizes needs at least input and output widths")]
    TooFewLayers,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("checkpoint payload holds {got} values, manifest expects {expected}")]
    BadCheckpoint { expected: usize, got: usize },
}

/// Architecture and augmentation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width (= number of classes).
    pub layer_sizes: Vec<usize>,
    /// Std of additive Gaussian input noise for stochastic passes.
    pub input_noise_std: f64,
    /// Seed for weight initialization.
    pub rng_seed: u64,
}

impl MlpSpec {
    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("non-empty layer_sizes")
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// `out × in`, row per output unit.
    pub weights: Mat,
    pub bias: Vec<f64>,
}

/// Student or teacher parameters. `version` increments on every optimizer
/// step so stale forward caches can be rejected.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
    pub version: u64,
}

/// Per-layer gradient blocks, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl ModelParams {
    /// Uniform fan-in initialization, seeded.
    pub fn init(spec: &MlpSpec) -> Result<Self, NetworkError> {
        if spec.layer_sizes.len() < 2 {
            return Err(NetworkError::TooFewLayers);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let mut layers = Vec::new();
        for w in spec.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut weights = Mat::zeros(fan_out, fan_in);
            for v in weights.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            layers.push(DenseLayer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self { layers, version: 0 })
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Mat::zeros(l.weights.rows, l.weights.cols),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.cols
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weights.rows
    }

    /// All parameters flattened in layer order, weights row-major then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) onto an existing shape.
    pub fn unflatten_into(&mut self, flat: &[f64]) -> Result<(), NetworkError> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.weights.data.len() + l.bias.len())
            .sum();
        if flat.len() != expected {
            return Err(NetworkError::ShapeMismatch {
                what: "flat parameter vector",
                expected,
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in self.layers.iter_mut() {
            let n = l.weights.data.len();
            l.weights.data.copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// EMA update of `self` toward `student` with decay `omega`.
    pub fn ema_from(&mut self, student: &ModelParams, omega: f64) -> Result<(), NetworkError> {
        if self.layers.len() != student.layers.len() {
            return Err(NetworkError::ShapeMismatch {
                what: "layer count",
                expected: student.layers.len(),
                got: self.layers.len(),
            });
        }
        for (t, s) in self.layers.iter_mut().zip(&student.layers) {
            crate::losses::ema_update(&mut t.weights.data, &s.weights.data, omega).map_err(
                |_| NetworkError::ShapeMismatch {
                    what: "weight block",
                    expected: s.weights.data.len(),
                    got: t.weights.data.len(),
                },
            )?;
            crate::losses::ema_update(&mut t.bias, &s.bias, omega).map_err(|_| {
                NetworkError::ShapeMismatch {
                    what: "bias block",
                    expected: s.bias.len(),
                    got: t.bias.len(),
                }
            })?;
        }
        self.version += 1;
        Ok(())
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Intermediates retained by [`forward`] for the matching [`backward`].
pub struct Cache {
    params_version: u64,
    /// Input after noise injection.
    input: Mat,
    /// Pre-activations per layer.
    pre: Vec<Mat>,
    /// Post-activations per layer; last entry is the evidence.
    post: Vec<Mat>,
}

impl Cache {
    pub fn evidence(&self) -> &Mat {
        self.post.last().unwrap()
    }

    /// Pre-activations of the hidden (ReLU) layers, in forward order.
    pub fn hidden_pre_activations(&self) -> &[Mat] {
        &self.pre[..self.pre.len() - 1]
    }
}

/// Additive Gaussian input noise for a stochastic pass.
#[derive(Debug, Clone, Copy)]
pub struct InputNoise {
    pub seed: u64,
    pub std: f64,
}

fn apply_noise(input: &Mat, noise: InputNoise) -> Mat {
    if noise.std == 0.0 {
        return input.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = input.clone();
    // Box-Muller; one pair per loop keeps the stream layout simple.
    let mut i = 0;
    let n = out.data.len();
    while i < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let mag = (-2.0 * u1.ln()).sqrt();
        out.data[i] += noise.std * mag * (std::f64::consts::TAU * u2).cos();
        if i + 1 < n {
            out.data[i + 1] += noise.std * mag * (std::f64::consts::TAU * u2).sin();
        }
        i += 2;
    }
    out
}

/// Forward pass over a batch. Evidence lives in the cache
/// (`cache.evidence()`); the same seed, params, and inputs give bit-identical
/// outputs.
pub fn forward(
    params: &ModelParams,
    inputs: &Mat,
    noise: Option<InputNoise>,
) -> Result<Cache, NetworkError> {
    if inputs.cols != params.input_width() {
        return Err(NetworkError::ShapeMismatch {
            what: "input width",
            expected: params.input_width(),
            got: inputs.cols,
        });
    }
    let input = match noise {
        Some(n) => apply_noise(inputs, n),
        None => inputs.clone(),
    };
    let n_layers = params.layers.len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post = Vec::with_capacity(n_layers);
    let mut current = &input;
    for (li, layer) in params.layers.iter().enumerate() {
        let out_w = layer.weights.rows;
        let mut z = Mat::zeros(current.rows, out_w);
        z.data
            .par_chunks_mut(out_w)
            .zip(current.data.par_chunks(current.cols))
            .for_each(|(zrow, arow)| {
                for (o, zv) in zrow.iter_mut().enumerate() {
                    let wrow = layer.weights.row(o);
                    let mut acc = layer.bias[o];
                    for (a, w) in arow.iter().zip(wrow) {
                        acc += a * w;
                    }
                    *zv = acc;
                }
            });
        let last = li == n_layers - 1;
        let mut a = z.clone();
        a.data.par_iter_mut().for_each(|v| {
            *v = if last { softplus(*v) } else { v.max(0.0) };
        });
        pre.push(z);
        post.push(a);
        current = post.last().unwrap();
    }
    Ok(Cache {
        params_version: params.version,
        input,
        pre,
        post,
    })
}

/// Backpropagate `d_evidence` (gradient of the loss w.r.t. the evidence
/// matrix) into parameter gradients. `frozen`, when given, zeroes the
/// gradient blocks of the flagged layers.
pub fn backward(
    params: &ModelParams,
    cache: &Cache,
    d_evidence: &Mat,
    frozen: Option<&[bool]>,
) -> Result<Gradients, NetworkError> {
    if cache.params_version != params.version {
        return Err(NetworkError::StaleCache {
            cache: cache.params_version,
            params: params.version,
        });
    }
    if d_evidence.rows != cache.input.rows || d_evidence.cols != params.output_width() {
        return Err(NetworkError::ShapeMismatch {
            what: "evidence gradient",
            expected: cache.input.rows * params.output_width(),
            got: d_evidence.rows * d_evidence.cols,
        });
    }
    let n_layers = params.layers.len();
    let mut grads = params.zeros_like();

    // delta for the evidence head: dL/de ⊙ softplus'(z) = dL/de ⊙ sigmoid(z).
    let mut delta = d_evidence.clone();
    {
        let z = &cache.pre[n_layers - 1];
        delta
            .data
            .par_iter_mut()
            .zip(z.data.par_iter())
            .for_each(|(d, &zv)| *d *= sigmoid(zv));
    }

    for li in (0..n_layers).rev() {
        let activation_below = if li == 0 {
            &cache.input
        } else {
            &cache.post[li - 1]
        };
        let masked = frozen.map_or(false, |m| m.get(li).copied().unwrap_or(false));
        if !masked {
            let g = &mut grads.layers[li];
            let in_w = activation_below.cols;
            g.weights
                .data
                .par_chunks_mut(in_w)
                .zip(g.bias.par_iter_mut())
                .enumerate()
                .for_each(|(o, (wrow, b))| {
                    for r in 0..delta.rows {
                        let d = delta.get(r, o);
                        *b += d;
                        let arow = activation_below.row(r);
                        for (wv, a) in wrow.iter_mut().zip(arow) {
                            *wv += d * a;
                        }
                    }
                });
        }
        if li > 0 {
            // delta_below = (delta · W) ⊙ relu'(z_below)
            let w = &params.layers[li].weights;
            let z_below = &cache.pre[li - 1];
            let in_w = w.cols;
            let mut next = Mat::zeros(delta.rows, in_w);
            next.data
                .par_chunks_mut(in_w)
                .enumerate()
                .for_each(|(r, row)| {
                    let drow = delta.row(r);
                    for (o, &d) in drow.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let wrow = w.row(o);
                        for (nv, wv) in row.iter_mut().zip(wrow) {
                            *nv += d * wv;
                        }
                    }
                    let zrow = z_below.row(r);
                    for (nv, &zv) in row.iter_mut().zip(zrow) {
                        if zv <= 0.0 {
                            *nv = 0.0;
                        }
                    }
                });
            delta = next;
        }
    }
    Ok(grads)
}

impl Gradients {
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.data.iter_mut().zip(&b.weights.data) {
                *x += scale * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// SGD with classical momentum. Velocity lives in the optimizer so the
/// update is a pure function of (params, grads, state).
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<(), NetworkError> {
        if grads.layers.len() != params.layers.len() {
            return Err(NetworkError::ShapeMismatch {
                what: "gradient layer count",
                expected: params.layers.len(),
                got: grads.layers.len(),
            });
        }
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        for ((p, g), v) in params
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(velocity.layers.iter_mut())
        {
            for ((pv, &gv), vv) in p
                .weights
                .data
                .iter_mut()
                .zip(&g.weights.data)
                .zip(v.weights.data.iter_mut())
            {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
            for ((pv, &gv), vv) in p.bias.iter_mut().zip(&g.bias).zip(v.bias.iter_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        params.version += 1;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    layer_sizes: Vec<usize>,
    count: usize,
}

/// Write parameters as a flat little-endian f64 array plus a JSON shape
/// manifest next to it.
pub fn save_checkpoint(
    params: &ModelParams,
    bin_path: &std::path::Path,
    manifest_path: &std::path::Path,
) -> Result<(), NetworkError> {
    let flat = params.flatten();
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(bin_path, bytes)?;
    let mut layer_sizes = vec![params.input_width()];
    layer_sizes.extend(params.layers.iter().map(|l| l.weights.rows));
    let manifest = CheckpointManifest {
        layer_sizes,
        count: flat.len(),
    };
    std::fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Read a checkpoint pair back into fresh parameters (version 0).
pub fn load_checkpoint(
    bin_path: &std::path::Path,
    manifest_path: &std::path::Path,
) -> Result<ModelParams, NetworkError> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&std::fs::read(manifest_path)?)?;
    let bytes = std::fs::read(bin_path)?;
    if bytes.len() != manifest.count * 8 {
        return Err(NetworkError::BadCheckpoint {
            expected: manifest.count,
            got: bytes.len() / 8,
        });
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let spec = MlpSpec {
        layer_sizes: manifest.layer_sizes,
        input_noise_std: 0.0,
        rng_seed: 0,
    };
    let mut params = ModelParams::init(&spec)?;
    params.unflatten_into(&flat)?;
    params.version = 0;
    Ok(params)
}
