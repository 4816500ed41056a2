//! Small MLP feature extractor with hand-written backprop and Adam.
//!
//! Layout: `D → h_1 → … → h_L → C`, tanh on hidden layers, linear output,
//! then L2 normalization. Parameters live in one flat buffer, layer by layer,
//! each layer as a row-major `out × in` weight block followed by `out` biases.
//!
//! Arithmetic is f64 throughout but stored parameters and optimizer moments are
//! kept f32-representable, so checkpoints written as f32 are lossless.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, FeatureVector};

#[inline]
fn to_storage(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    sizes: Vec<usize>,
    params: Vec<f64>,
    version: u64,
}

/// Activations saved by [`Encoder::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer; `layer_inputs[0]` is the raw sample.
    layer_inputs: Vec<Vec<f64>>,
    pre_norm: Vec<f64>,
    output: FeatureVector,
}

impl ForwardCache {
    pub fn output(&self) -> &FeatureVector {
        &self.output
    }
}

impl Encoder {
    /// Random init: weights `N(0, 1/fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut enc = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            for p in &mut enc.params[offset..offset + fan_in * fan_out] {
                *p = to_storage(normal.sample(rng));
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(enc)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "encoder needs at least input and output sizes, all positive; got {sizes:?}"
            )));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Encoder {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
            version: 0,
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut enc = Self::zeros(sizes)?;
        if params.len() != enc.params.len() {
            return Err(Error::DimensionMismatch {
                expected: enc.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        enc.params = params;
        Ok(enc)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let n_layers = self.sizes.len() - 1;
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut current = x.to_vec();
        let mut offset = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut next: Vec<f64> = weights
                .chunks(fan_in)
                .zip(bias)
                .map(|(row, b)| dot(row, &current) + b)
                .collect();
            if l + 1 < n_layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            layer_inputs.push(std::mem::replace(&mut current, next));
            offset += fan_in * fan_out + fan_out;
        }
        let z_norm = norm(&current);
        if z_norm == 0.0 || !z_norm.is_finite() {
            return Err(Error::Degenerate(
                "encoder output is zero (or non-finite) before normalization".into(),
            ));
        }
        let output = FeatureVector::from_unit(current.iter().map(|v| v / z_norm).collect());
        Ok(ForwardCache {
            version: self.version,
            layer_inputs,
            pre_norm: current,
            output,
        })
    }

    pub fn encode(&self, x: &[f64]) -> Result<FeatureVector> {
        Ok(self.forward(x)?.output)
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut [f64]) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                params: self.version,
            });
        }
        if grad_output.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: grad_output.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        // Through the normalization: (I - f fᵀ) g / |z|.
        let f = cache.output.as_slice();
        let z_norm = norm(&cache.pre_norm);
        let along = dot(f, grad_output);
        let mut delta: Vec<f64> = grad_output
            .iter()
            .zip(f)
            .map(|(g, fi)| (g - fi * along) / z_norm)
            .collect();

        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.layer_inputs[l];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grads[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
                grads[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (row, d) in weights.chunks(fan_in).zip(&delta) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // input to layer l is tanh(previous pre-activation): tanh' = 1 - a²
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// Adam with decoupled weight decay (`p -= lr · wd · p` applied outside the
/// moment estimates).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Adam {
            config,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first_moment.len(),
                got: grads.len().min(params.len()),
            });
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = to_storage(beta1 * *m + (1.0 - beta1) * g);
            *v = to_storage(beta2 * *v + (1.0 - beta2) * g * g);
            let update = (*m / bias1) / ((*v / bias2).sqrt() + eps);
            *p = to_storage(*p - lr * (update + weight_decay * *p));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Degenerate("non-finite parameter after Adam step".into()));
        }
        Ok(())
    }
}

/// Step decay: `base_lr · decay^⌊epoch / step_epochs⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay: f64,
    pub step_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 0.00035,
            decay: 0.1,
            step_epochs: 20,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = if self.step_epochs == 0 { 0 } else { epoch / self.step_epochs };
        self.base_lr * self.decay.powi(drops as i32)
    }
}
