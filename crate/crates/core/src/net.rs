//! The noise-prediction network: a fully connected SiLU network over
//! `[x_t ; embed(t)]` with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat buffer, laid out layer by layer as
//! `W` (row-major, `out x in`) followed by `b`. The optimizer works directly on
//! that buffer and gradient vectors share its layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Silu => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            1 => Some(Activation::Silu),
            _ => None,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Architecture metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub data_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub embed_dim: usize,
    /// Number of diffusion steps the timestep embedding is scaled for.
    pub num_steps: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden_widths: vec![64, 64],
            embed_dim: 16,
            num_steps: 100,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.embed_dim == 0 || self.num_steps == 0 {
            return param("data_dim, embed_dim and num_steps must be >= 1");
        }
        if self.embed_dim % 2 != 0 {
            return param(format!("embed_dim must be even, got {}", self.embed_dim));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return param("hidden widths must be >= 1");
        }
        Ok(())
    }

    /// `(in, out)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.data_dim + self.embed_dim];
        dims.extend(&self.hidden_widths);
        dims.push(self.data_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Sinusoidal timestep embedding: `[sin(s*w_k) .. , cos(s*w_k) ..]` with
/// `s = t * 1000 / num_steps` and `w_k` geometric from 1 down to 1e-4.
pub fn timestep_embedding(t: usize, embed_dim: usize, num_steps: usize) -> Result<Vec<f64>> {
    if embed_dim % 2 != 0 || embed_dim == 0 {
        return param(format!("embed_dim must be even and positive, got {embed_dim}"));
    }
    let mut out = vec![0.0; embed_dim];
    write_embedding(t, num_steps, &mut out);
    Ok(out)
}

fn write_embedding(t: usize, num_steps: usize, out: &mut [f64]) {
    let half = out.len() / 2;
    let scaled = t as f64 * 1000.0 / num_steps as f64;
    for k in 0..half {
        let freq = if half > 1 {
            10000f64.powf(-(k as f64) / (half - 1) as f64)
        } else {
            1.0
        };
        let arg = scaled * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
}

/// Weights of the noise-prediction network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    arch: ArchConfig,
    activation: Activation,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

/// Loss plus the requested gradients for one `(x, t, eps)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub loss: f64,
    /// Gradient with respect to the clean input `x`.
    pub grad_x: Option<Vec<f64>>,
    /// Gradient with respect to every parameter, in flat layout.
    pub grad_theta: Option<Vec<f64>>,
    /// Squared gradient norm per layer (weights and bias together).
    pub per_group_sq_norms: Option<Vec<f64>>,
}

/// Scalar summaries of one step, computed without materializing the
/// parameter gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepNorms {
    pub loss: f64,
    pub grad_x_sq: f64,
    pub grad_theta_sq: f64,
}

struct Trace {
    /// Layer inputs; `inputs[0]` is `[x_t ; emb]`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer. The last one is the network output.
    pre: Vec<Vec<f64>>,
}

impl DenoiserParams {
    /// Fan-in uniform initialization, reproducible from `seed`.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        if arch.hidden_widths.is_empty() {
            return param("at least one hidden layer is required");
        }
        let mut p = Self::zeros(arch.clone())?;
        let mut r = rng::keyed(seed, &[rng::domain::INIT]);
        for (l, &(fan_in, _)) in p.shapes.clone().iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let range = p.layer_range(l);
            for w in &mut p.data[range] {
                *w = r.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    /// All-zero network of the given architecture. Zero hidden layers are
    /// allowed here (a single affine map).
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut off = 0;
        for &(i, o) in &shapes {
            offsets.push(off);
            off += i * o + o;
        }
        offsets.push(off);
        Ok(Self {
            arch,
            activation: Activation::Silu,
            shapes,
            offsets,
            data: vec![0.0; off],
        })
    }

    /// Builds a network from an explicit flat parameter vector.
    pub fn from_flat(arch: ArchConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if data.len() != p.data.len() {
            return param(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return param(format!("parameter {i} is not finite"));
        }
        p.data = data;
        Ok(p)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn data_dim(&self) -> usize {
        self.arch.data_dim
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn layer_shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Range of layer `l` (weights then bias) in the flat buffer.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let (i, o) = self.shapes[l];
        &self.data[self.offsets[l]..self.offsets[l] + i * o]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.shapes[l];
        let off = self.offsets[l];
        &mut self.data[off..off + i * o]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (i, o) = self.shapes[l];
        let start = self.offsets[l] + i * o;
        &self.data[start..start + o]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (i, o) = self.shapes[l];
        let start = self.offsets[l] + i * o;
        &mut self.data[start..start + o]
    }

    /// Digest of the architecture metadata.
    pub fn arch_hash(&self) -> String {
        crate::digest::digest_json(&(&self.arch, self.activation))
    }

    fn input_vector(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        let d = self.arch.data_dim;
        let mut input = vec![0.0; d + self.arch.embed_dim];
        input[..d].copy_from_slice(x_t);
        write_embedding(t, self.arch.num_steps, &mut input[d..]);
        input
    }

    fn forward(&self, x_t: &[f64], t: usize) -> Result<Trace> {
        if x_t.len() != self.arch.data_dim {
            return param(format!(
                "input has {} coordinates, network expects {}",
                x_t.len(),
                self.arch.data_dim
            ));
        }
        let n = self.shapes.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut a = self.input_vector(x_t, t);
        for l in 0..n {
            let (fan_in, fan_out) = self.shapes[l];
            let w = self.weight(l);
            let b = self.bias(l);
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    dot(row, &a) + b[o]
                })
                .collect();
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
            let next = if l + 1 < n {
                z.iter().map(|&v| silu(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok(Trace { inputs, pre })
    }

    /// `eps_theta(x_t, t)`
    pub fn predict_eps(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let mut trace = self.forward(x_t, t)?;
        Ok(trace.pre.pop().expect("at least one layer"))
    }

    /// Walks the network backwards from `dL/d(out)`. `on_layer(l, delta, input)`
    /// sees the pre-activation gradient and the input of each layer. Returns
    /// the gradient with respect to the network input when `want_input`.
    fn backward(
        &self,
        trace: &Trace,
        d_out: Vec<f64>,
        want_input: bool,
        mut on_layer: impl FnMut(usize, &[f64], &[f64]),
    ) -> Result<Option<Vec<f64>>> {
        let mut delta = d_out;
        for l in (0..self.shapes.len()).rev() {
            let (fan_in, fan_out) = self.shapes[l];
            on_layer(l, &delta, &trace.inputs[l]);
            if l == 0 && !want_input {
                return Ok(None);
            }
            let w = self.weight(l);
            let mut d_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (acc, wi) in d_in.iter_mut().zip(row) {
                    *acc += wi * d;
                }
            }
            if d_in.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l });
            }
            if l == 0 {
                return Ok(Some(d_in));
            }
            delta = d_in
                .iter()
                .zip(&trace.pre[l - 1])
                .map(|(g, &z)| g * silu_grad(z))
                .collect();
        }
        Ok(None)
    }

    fn residual(&self, x: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<(Trace, Vec<f64>, f64)> {
        if eps.len() != self.arch.data_dim || x.len() != self.arch.data_dim {
            return param(format!(
                "x has {} and eps has {} coordinates, network expects {}",
                x.len(),
                eps.len(),
                self.arch.data_dim
            ));
        }
        let x_t = schedule.forward_diffuse(x, t, eps)?;
        let trace = self.forward(&x_t, t)?;
        let out = trace.pre.last().expect("at least one layer");
        let r: Vec<f64> = out.iter().zip(eps).map(|(o, e)| o - e).collect();
        let loss = r.iter().map(|v| v * v).sum();
        Ok((trace, r, loss))
    }

    /// `L_t = ||eps_theta(sqrt(abar_t) x + sqrt(1-abar_t) eps, t) - eps||^2`
    /// with optional gradients. `eps` is treated as a constant.
    pub fn loss_and_grads(
        &self,
        x: &[f64],
        t: usize,
        eps: &[f64],
        schedule: &NoiseSchedule,
        want_grad_x: bool,
        want_grad_theta: bool,
    ) -> Result<GradBundle> {
        let (trace, r, loss) = self.residual(x, t, eps, schedule)?;
        if !want_grad_x && !want_grad_theta {
            return Ok(GradBundle {
                loss,
                grad_x: None,
                grad_theta: None,
                per_group_sq_norms: None,
            });
        }
        let d_out: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let mut grad_theta = want_grad_theta.then(|| vec![0.0; self.data.len()]);
        let d_input = self.backward(&trace, d_out, want_grad_x, |l, delta, input| {
            if let Some(g) = grad_theta.as_mut() {
                let (fan_in, fan_out) = self.shapes[l];
                let off = self.offsets[l];
                for o in 0..fan_out {
                    let d = delta[o];
                    let row = &mut g[off + o * fan_in..off + (o + 1) * fan_in];
                    for (gi, ai) in row.iter_mut().zip(input) {
                        *gi = d * ai;
                    }
                }
                g[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].copy_from_slice(delta);
            }
        })?;
        let grad_x = d_input.map(|d| {
            let (a, _) = schedule.signal_noise(t);
            d[..self.arch.data_dim].iter().map(|v| a * v).collect()
        });
        let per_group_sq_norms = grad_theta.as_ref().map(|g| {
            (0..self.shapes.len())
                .map(|l| g[self.layer_range(l)].iter().map(|v| v * v).sum())
                .collect()
        });
        Ok(GradBundle {
            loss,
            grad_x,
            grad_theta,
            per_group_sq_norms,
        })
    }

    /// Adds `scale * dL/dtheta` into `acc` and returns the loss. Used by the
    /// trainer to avoid a fresh gradient buffer per example.
    pub fn accumulate_grad_theta(
        &self,
        x: &[f64],
        t: usize,
        eps: &[f64],
        schedule: &NoiseSchedule,
        scale: f64,
        acc: &mut [f64],
    ) -> Result<f64> {
        if acc.len() != self.data.len() {
            return param("gradient buffer has the wrong length");
        }
        let (trace, r, loss) = self.residual(x, t, eps, schedule)?;
        let d_out: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        self.backward(&trace, d_out, false, |l, delta, input| {
            let (fan_in, fan_out) = self.shapes[l];
            let off = self.offsets[l];
            for o in 0..fan_out {
                let d = scale * delta[o];
                let row = &mut acc[off + o * fan_in..off + (o + 1) * fan_in];
                for (gi, ai) in row.iter_mut().zip(input) {
                    *gi += d * ai;
                }
            }
            for (gi, d) in acc[off + fan_in * fan_out..off + fan_in * fan_out + fan_out].iter_mut().zip(delta) {
                *gi += scale * d;
            }
        })?;
        Ok(loss)
    }

    /// Loss and squared gradient norms. The parameter-gradient norm uses
    /// `||delta a^T||^2 = ||delta||^2 ||a||^2` per layer, so no gradient
    /// vector is allocated.
    pub fn step_norms(
        &self,
        x: &[f64],
        t: usize,
        eps: &[f64],
        schedule: &NoiseSchedule,
        want_grad_x: bool,
        want_grad_theta: bool,
    ) -> Result<StepNorms> {
        let (trace, r, loss) = self.residual(x, t, eps, schedule)?;
        let mut out = StepNorms {
            loss,
            grad_x_sq: 0.0,
            grad_theta_sq: 0.0,
        };
        if !want_grad_x && !want_grad_theta {
            return Ok(out);
        }
        let d_out: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let mut theta_sq = 0.0;
        let d_input = self.backward(&trace, d_out, want_grad_x, |_, delta, input| {
            if want_grad_theta {
                let dd: f64 = delta.iter().map(|v| v * v).sum();
                let aa: f64 = input.iter().map(|v| v * v).sum();
                theta_sq += dd * (aa + 1.0);
            }
        })?;
        out.grad_theta_sq = theta_sq;
        if let Some(d) = d_input {
            let ab = schedule.alpha_bar(t);
            out.grad_x_sq = ab * d[..self.arch.data_dim].iter().map(|v| v * v).sum::<f64>();
        }
        Ok(out)
    }
}
