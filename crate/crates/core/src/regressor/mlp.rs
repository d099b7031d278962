//! Fully connected network with CReLU hidden activations.
//!
//! Each hidden layer is an affine map to `h` units followed by CReLU, which
//! doubles the width to `2h`; the output layer is affine with two units
//! `(vx, vz)`. Dropout, when enabled, is applied to every CReLU output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Velocity2D;
use crate::{Error, Result};

pub const OUTPUT_DIM: usize = 2;

/// `[max(x, 0), max(-x, 0)]`.
pub fn crelu(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * x.len()];
    crelu_into(x, &mut out);
    out
}

fn crelu_into(x: &[f64], out: &mut [f64]) {
    let (pos, neg) = out.split_at_mut(x.len());
    for ((p, n), &v) in pos.iter_mut().zip(neg.iter_mut()).zip(x) {
        *p = v.max(0.0);
        *n = (-v).max(0.0);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Affine layer `y = W x + b` with `W` stored row-major, `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights over the layer's actual fan-in (which already
    /// counts the CReLU doubling), zero biases.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut d = Dense::zeros(in_dim, out_dim);
        for w in &mut d.weights {
            *w = rng.random_range(-limit..limit);
        }
        d
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.bias[j] + dot(self.row(j), x);
        }
    }
}

/// Architecture description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    /// Frames per input track; the input width is `4 * frames`.
    #[serde(rename = "T")]
    pub frames: usize,
    pub hidden: Vec<usize>,
    pub activation: String,
}

impl Arch {
    pub const DEFAULT_HIDDEN: [usize; 4] = [70; 4];

    pub fn new(frames: usize, hidden: Vec<usize>) -> Result<Self> {
        let arch = Arch {
            frames,
            hidden,
            activation: "crelu".into(),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn standard(frames: usize) -> Self {
        Arch::new(frames, Arch::DEFAULT_HIDDEN.to_vec()).expect("valid default architecture")
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Validation(format!("arch: T must be >= 2, got {}", self.frames)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Validation(format!("arch: bad hidden widths {:?}", self.hidden)));
        }
        if self.activation != "crelu" {
            return Err(Error::Validation(format!(
                "arch: unsupported activation {:?}",
                self.activation
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        4 * self.frames
    }

    /// `(in, out)` of every affine layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut width = self.input_dim();
        for &h in &self.hidden {
            dims.push((width, h));
            width = 2 * h;
        }
        dims.push((width, OUTPUT_DIM));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Forward-pass mode. Training mode applies inverted dropout with masks drawn
/// from `rng`.
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    revision: u64,
    /// Input to each affine layer (after dropout for hidden outputs).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Dropout scale per CReLU output; empty when dropout was off.
    masks: Vec<Vec<f64>>,
    output: [f64; OUTPUT_DIM],
}

impl Cache {
    pub fn output(&self) -> Velocity2D {
        Velocity2D::new(self.output[0], self.output[1])
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= s);
            l.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Arch,
    layers: Vec<Dense>,
    revision: u64,
}

impl Mlp {
    pub fn new_random(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Dense::glorot(i, o, &mut rng))
            .collect();
        Ok(Mlp {
            arch,
            layers,
            revision: 0,
        })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let layers = arch.layer_dims().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect();
        Ok(Mlp {
            arch,
            layers,
            revision: 0,
        })
    }

    /// Assembles a network from explicit layers, checking shapes and finiteness.
    pub fn from_layers(arch: Arch, layers: Vec<Dense>) -> Result<Self> {
        arch.validate()?;
        let dims = arch.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::Validation(format!(
                "expected {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (k, ((i, o), l)) in dims.iter().zip(&layers).enumerate() {
            if l.in_dim != *i || l.out_dim != *o || l.weights.len() != i * o || l.bias.len() != *o {
                return Err(Error::Validation(format!(
                    "layer {k}: expected {i}x{o}, got {}x{} with {} weights and {} biases",
                    l.in_dim,
                    l.out_dim,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("layer {k}: non-finite parameter")));
            }
        }
        Ok(Mlp {
            arch,
            layers,
            revision: 0,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the parameters. Invalidates existing caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.revision += 1;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|l| Dense::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<(Velocity2D, Cache)> {
        let mut cache = Cache::default();
        let v = self.forward_into(x, mode, &mut cache)?;
        Ok((v, cache))
    }

    /// Eval-mode forward pass without keeping a cache.
    pub fn eval(&self, x: &[f64]) -> Result<Velocity2D> {
        self.forward(x, Mode::Eval).map(|(v, _)| v)
    }

    /// Forward pass reusing the buffers of `cache`.
    pub fn forward_into(&self, x: &[f64], mode: Mode<'_>, cache: &mut Cache) -> Result<Velocity2D> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::Validation(format!(
                "feature length {} does not match model input {}",
                x.len(),
                self.arch.input_dim()
            )));
        }
        let n_hidden = self.layers.len() - 1;
        cache.revision = self.revision;
        cache.inputs.resize_with(self.layers.len(), Vec::new);
        cache.pre.resize_with(n_hidden, Vec::new);
        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);

        let (dropout, mut rng) = match mode {
            Mode::Eval => (0.0, None),
            Mode::Train { dropout, rng } => (dropout, Some(rng)),
        };
        let use_dropout = dropout > 0.0 && rng.is_some();
        cache
            .masks
            .resize_with(if use_dropout { n_hidden } else { 0 }, Vec::new);
        let keep_scale = 1.0 / (1.0 - dropout);

        for (k, layer) in self.layers[..n_hidden].iter().enumerate() {
            let pre = &mut cache.pre[k];
            pre.resize(layer.out_dim, 0.0);
            layer.forward_into(&cache.inputs[k], pre);
            let next = &mut cache.inputs[k + 1];
            next.resize(2 * layer.out_dim, 0.0);
            crelu_into(pre, next);
            if use_dropout {
                let rng = rng.as_deref_mut().expect("checked above");
                let mask = &mut cache.masks[k];
                mask.clear();
                mask.extend((0..next.len()).map(|_| if rng.random::<f64>() < dropout { 0.0 } else { keep_scale }));
                for (a, m) in next.iter_mut().zip(mask.iter()) {
                    *a *= m;
                }
            }
        }
        let out_layer = &self.layers[n_hidden];
        out_layer.forward_into(&cache.inputs[n_hidden], &mut cache.output);
        Ok(cache.output())
    }

    /// Accumulates the gradient of `||output - target||^2` into `grads`,
    /// scaled by `weight`.
    pub fn backward_into(&self, cache: &Cache, target: Velocity2D, weight: f64, grads: &mut Gradients) -> Result<()> {
        self.check_cache(cache)?;
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Validation("gradient buffer does not match network".into()));
        }
        let n_hidden = self.layers.len() - 1;
        let mut upstream = vec![
            2.0 * weight * (cache.output[0] - target.vx),
            2.0 * weight * (cache.output[1] - target.vz),
        ];
        for k in (0..=n_hidden).rev() {
            let layer = &self.layers[k];
            let input = &cache.inputs[k];
            let g = &mut grads.layers[k];
            for (j, &d) in upstream.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, input, &mut g.weights[j * layer.in_dim..(j + 1) * layer.in_dim]);
                    g.bias[j] += d;
                }
            }
            if k == 0 {
                break;
            }
            // Gradient w.r.t. this layer's input, i.e. the previous CReLU output.
            let mut d_input = vec![0.0; layer.in_dim];
            for (j, &d) in upstream.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, layer.row(j), &mut d_input);
                }
            }
            if let Some(mask) = cache.masks.get(k - 1) {
                for (di, m) in d_input.iter_mut().zip(mask) {
                    *di *= m;
                }
            }
            let pre = &cache.pre[k - 1];
            let half = pre.len();
            upstream = pre
                .iter()
                .enumerate()
                .map(|(j, &z)| {
                    if z > 0.0 {
                        d_input[j]
                    } else if z < 0.0 {
                        -d_input[half + j]
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        Ok(())
    }

    /// Gradients of the squared error for one cached forward pass.
    pub fn backward(&self, cache: &Cache, target: Velocity2D) -> Result<Gradients> {
        let mut g = self.gradients();
        self.backward_into(cache, target, 1.0, &mut g)?;
        Ok(g)
    }

    fn check_cache(&self, cache: &Cache) -> Result<()> {
        if cache.revision != self.revision {
            return Err(Error::Validation(
                "stale cache: parameters changed since the forward pass".into(),
            ));
        }
        let shapes_match = cache.inputs.len() == self.layers.len()
            && cache.pre.len() == self.layers.len() - 1
            && cache.inputs.iter().zip(&self.layers).all(|(x, l)| x.len() == l.in_dim);
        if !shapes_match {
            return Err(Error::Validation("cache does not match this network".into()));
        }
        Ok(())
    }

    /// Smallest absolute hidden pre-activation in a cache; a measure of how
    /// close the input is to a CReLU kink.
    pub fn min_abs_preactivation(cache: &Cache) -> f64 {
        cache.pre.iter().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}
