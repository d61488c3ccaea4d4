//! Multilayer perceptrons with optional per-layer normalization, dropout,
//! and spectral weight scaling.
//!
//! Layer order is Linear -> LayerNorm -> activation -> dropout for every
//! hidden layer; the final layer is Linear followed only by the output
//! transform. Dropout and layer norm never touch the final layer, and
//! spectral scaling applies to the penultimate layer only, with one power
//! iteration per training forward.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::matmul::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Floor for the spectral norm estimate before division.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Transform applied to the final linear output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputTransform {
    Identity,
    /// bound * tanh(x), for actors with box-constrained actions.
    TanhBounded(f64),
}

/// Optional structural regularizers. All off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Hooks {
    /// Drop probability for hidden activations, active in training forward only.
    pub dropout: Option<f64>,
    /// Layer normalization after every hidden linear layer.
    pub layer_norm: bool,
    /// Scale the penultimate weight matrix by its estimated spectral norm.
    pub spectral_norm: bool,
}

/// Which slot of a layer a parameter tensor occupies. Used to decide mask
/// eligibility (weights always; the rest only when biases are maskable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormShift,
}

#[derive(Debug, Clone)]
struct Norm {
    gain: Tensor,
    shift: Tensor,
}

#[derive(Debug, Clone)]
struct Layer {
    weight: Tensor, // [out, in]
    bias: Tensor,   // [1, out]
    norm: Option<Norm>,
}

/// Power iteration state for the spectral estimate of one weight matrix.
#[derive(Debug, Clone)]
struct PowerIter {
    u: Vec<f64>, // len = rows of W
    v: Vec<f64>, // len = cols of W
}

/// Result of taping one forward pass: the output node plus the parameter
/// leaves in the same order as [`Mlp::parameters`].
pub struct ForwardPass {
    pub output: NodeId,
    pub params: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Layer>,
    activation: Activation,
    output: OutputTransform,
    hooks: Hooks,
    spectral: Option<PowerIter>,
    in_dim: usize,
    out_dim: usize,
}

impl Mlp {
    /// `dims` is the full chain [input, hidden..., output]. Weights draw from
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
    pub fn new(
        dims: &[usize],
        activation: Activation,
        output: OutputTransform,
        hooks: Hooks,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "mlp needs at least [input, output] dims, got {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("mlp dims must be positive, got {dims:?}")));
        }
        if let Some(p) = hooks.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout rate must be in [0, 1), got {p}")));
            }
        }
        if hooks.spectral_norm && dims.len() < 3 {
            return Err(Error::Config(
                "spectral scaling targets the penultimate layer; need at least 2 layers".into(),
            ));
        }
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for li in 0..n_layers {
            let (fan_in, fan_out) = (dims[li], dims[li + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Tensor::from_fn(fan_out, fan_in, || rng.gen_range(-bound..bound));
            let bias = Tensor::zeros(1, fan_out);
            let norm = (hooks.layer_norm && li < n_layers - 1).then(|| Norm {
                gain: Tensor::new(1, fan_out, vec![1.0; fan_out]).expect("shape"),
                shift: Tensor::zeros(1, fan_out),
            });
            layers.push(Layer { weight, bias, norm });
        }
        let spectral = hooks.spectral_norm.then(|| {
            let w = &layers[n_layers - 2].weight;
            let mut unit = |n: usize| {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(SIGMA_FLOOR);
                raw.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
            };
            PowerIter { u: unit(w.rows()), v: unit(w.cols()) }
        });
        Ok(Mlp {
            layers,
            activation,
            output,
            hooks,
            spectral,
            in_dim: dims[0],
            out_dim: dims[n_layers],
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn hooks(&self) -> Hooks {
        self.hooks
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_transform(&self) -> OutputTransform {
        self.output
    }

    /// Full dimension chain [input, hidden..., output].
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim];
        dims.extend(self.layers.iter().map(|l| l.weight.rows()));
        dims
    }

    /// Power iteration vectors (u, v) when spectral scaling is on.
    pub fn spectral_state(&self) -> Option<(&[f64], &[f64])> {
        self.spectral.as_ref().map(|pi| (pi.u.as_slice(), pi.v.as_slice()))
    }

    /// Restore a saved power iteration state. Lengths must match the
    /// penultimate weight matrix.
    pub fn set_spectral_state(&mut self, u: Vec<f64>, v: Vec<f64>) -> Result<()> {
        let li = self.layers.len().checked_sub(2).ok_or_else(|| {
            Error::Usage("spectral state on a single-layer network".into())
        })?;
        let w = &self.layers[li].weight;
        if self.spectral.is_none() {
            return Err(Error::Usage("network has no spectral scaling".into()));
        }
        if u.len() != w.rows() || v.len() != w.cols() {
            return Err(Error::Dim(format!(
                "spectral state ({}, {}) does not fit a {}x{} penultimate matrix",
                u.len(),
                v.len(),
                w.rows(),
                w.cols()
            )));
        }
        self.spectral = Some(PowerIter { u, v });
        Ok(())
    }

    /// Parameter tensors in a fixed order: per layer weight, bias, then
    /// norm gain and shift when present.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gain);
                out.push(&n.shift);
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain);
                out.push(&mut n.shift);
            }
        }
        out
    }

    /// Kinds aligned with [`Mlp::parameters`].
    pub fn param_kinds(&self) -> Vec<ParamKind> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(ParamKind::Weight);
            out.push(ParamKind::Bias);
            if l.norm.is_some() {
                out.push(ParamKind::NormGain);
                out.push(ParamKind::NormShift);
            }
        }
        out
    }

    /// Index of the layer each parameter tensor belongs to, aligned with
    /// [`Mlp::parameters`].
    pub fn param_layers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (li, l) in self.layers.iter().enumerate() {
            out.push(li);
            out.push(li);
            if l.norm.is_some() {
                out.push(li);
                out.push(li);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_grad(&mut self) {
        for t in self.parameters_mut() {
            t.zero_grad();
        }
    }

    /// Pull tape gradients back into `Tensor::grad`, accumulating.
    pub fn accumulate_grads(&mut self, g: &Graph, pass: &ForwardPass) -> Result<()> {
        let mut params = self.parameters_mut();
        if params.len() != pass.params.len() {
            return Err(Error::Usage(format!(
                "forward pass has {} parameter nodes, network has {}",
                pass.params.len(),
                params.len()
            )));
        }
        for (t, &node) in params.iter_mut().zip(&pass.params) {
            let grad = g.grad(node)?;
            for (acc, &gv) in t.grad.iter_mut().zip(grad) {
                *acc += gv;
            }
        }
        Ok(())
    }

    /// theta_target <- (1 - tau) * theta_target + tau * theta_source.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        let mut mine = self.parameters_mut();
        let theirs = source.parameters();
        if mine.len() != theirs.len() {
            return Err(Error::Usage("polyak between differently shaped networks".into()));
        }
        for (t, s) in mine.iter_mut().zip(theirs) {
            if t.numel() != s.numel() {
                return Err(Error::Usage("polyak between differently shaped networks".into()));
            }
            for (tv, &sv) in t.data.iter_mut().zip(&s.data) {
                *tv = (1.0 - tau) * *tv + tau * sv;
            }
        }
        Ok(())
    }

    /// One step of power iteration on the penultimate weight matrix,
    /// refreshing the stored (u, v) pair in place.
    fn power_iterate(&mut self) {
        let li = self.layers.len() - 2;
        let w = &self.layers[li].weight;
        let (rows, cols) = (w.rows(), w.cols());
        let pi = self.spectral.as_mut().expect("spectral state");
        // v <- normalize(W^T u)
        let mut v = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                v[j] += w.data[i * cols + j] * pi.u[i];
            }
        }
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn > SIGMA_FLOOR {
            v.iter_mut().for_each(|x| *x /= vn);
            pi.v = v;
        }
        // u <- normalize(W v)
        let mut u = vec![0.0; rows];
        for i in 0..rows {
            let mut dot = 0.0;
            for j in 0..cols {
                dot += w.data[i * cols + j] * pi.v[j];
            }
            u[i] = dot;
        }
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if un > SIGMA_FLOOR {
            u.iter_mut().for_each(|x| *x /= un);
            pi.u = u;
        }
    }

    /// Current spectral norm estimate |u^T W v| from the stored pair.
    fn sigma_estimate(&self) -> f64 {
        let li = self.layers.len() - 2;
        let w = &self.layers[li].weight;
        let pi = self.spectral.as_ref().expect("spectral state");
        let mut acc = 0.0;
        for i in 0..w.rows() {
            let mut dot = 0.0;
            for j in 0..w.cols() {
                dot += w.data[i * w.cols() + j] * pi.v[j];
            }
            acc += pi.u[i] * dot;
        }
        acc.abs()
    }

    /// Taped forward in training mode: runs one power iteration when
    /// spectral scaling is on and samples fresh dropout masks from `rng`.
    pub fn forward_train(
        &mut self,
        g: &mut Graph,
        x: NodeId,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass> {
        if self.hooks.spectral_norm {
            self.power_iterate();
        }
        self.forward_tape(g, x, true, Some(rng))
    }

    /// Taped forward in evaluation mode: no dropout, no power iteration,
    /// spectral scale from the stored estimate.
    pub fn forward_eval(&self, g: &mut Graph, x: NodeId) -> Result<ForwardPass> {
        self.forward_tape(g, x, false, None)
    }

    fn forward_tape(
        &self,
        g: &mut Graph,
        x: NodeId,
        train: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardPass> {
        let (_, in_cols) = g.shape(x);
        if in_cols != self.in_dim {
            return Err(Error::Dim(format!(
                "forward: input has {in_cols} columns, network expects {}",
                self.in_dim
            )));
        }
        let last = self.layers.len() - 1;
        let spectral_layer = self.hooks.spectral_norm.then(|| last.wrapping_sub(1));
        let mut params = Vec::new();
        let mut h = x;
        for li in 0..=last {
            let wn = g.param(&self.layers[li].weight);
            let bn = g.param(&self.layers[li].bias);
            params.push(wn);
            params.push(bn);
            let w_eff = if spectral_layer == Some(li) {
                let pi = self.spectral.as_ref().expect("spectral state");
                let (u, v) = (pi.u.clone(), pi.v.clone());
                let sigma = g.bilinear(wn, &u, &v)?;
                let mag = g.abs(sigma);
                let inv = g.recip_floor(mag, SIGMA_FLOOR)?;
                g.mul_scalar_node(wn, inv)?
            } else {
                wn
            };
            h = g.affine(h, w_eff, bn)?;
            if li < last {
                if let Some(norm) = &self.layers[li].norm {
                    let gn = g.param(&norm.gain);
                    let sn = g.param(&norm.shift);
                    params.push(gn);
                    params.push(sn);
                    h = g.layer_norm(h, gn, sn)?;
                }
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
                if train {
                    if let Some(rate) = self.hooks.dropout.filter(|&r| r > 0.0) {
                        let r = rng
                            .as_deref_mut()
                            .ok_or_else(|| Error::Usage("dropout needs an rng".into()))?;
                        let keep = 1.0 - rate;
                        let (hr, hc) = g.shape(h);
                        let mask: Vec<f64> = (0..hr * hc)
                            .map(|_| if r.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                            .collect();
                        h = g.mul_const(h, &mask)?;
                    }
                }
            }
        }
        let output = match self.output {
            OutputTransform::Identity => h,
            OutputTransform::TanhBounded(bound) => {
                let t = g.tanh(h);
                g.scale(t, bound)
            }
        };
        Ok(ForwardPass { output, params })
    }

    /// Tape-free forward for inference. Matches eval-mode tape math.
    pub fn predict(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        if x.len() != rows * self.in_dim {
            return Err(Error::Dim(format!(
                "predict: {} values is not {rows} rows of {}",
                x.len(),
                self.in_dim
            )));
        }
        let last = self.layers.len() - 1;
        let spectral_layer = self.hooks.spectral_norm.then(|| last.wrapping_sub(1));
        let mut h = x.to_vec();
        let mut width = self.in_dim;
        for li in 0..=last {
            let layer = &self.layers[li];
            let (out_w, in_w) = (layer.weight.rows(), layer.weight.cols());
            debug_assert_eq!(in_w, width);
            let w_eff: Vec<f64> = if spectral_layer == Some(li) {
                let scale = 1.0 / self.sigma_estimate().max(SIGMA_FLOOR);
                layer.weight.data.iter().map(|&w| w * scale).collect()
            } else {
                layer.weight.data.clone()
            };
            let mut out = Vec::with_capacity(rows * out_w);
            for _ in 0..rows {
                out.extend_from_slice(&layer.bias.data);
            }
            gemm(rows, in_w, out_w, 1.0, &h, in_w, 1, &w_eff, 1, in_w, 1.0, &mut out, out_w, 1);
            if li < last {
                if let Some(norm) = &layer.norm {
                    for i in 0..rows {
                        let row = &mut out[i * out_w..(i + 1) * out_w];
                        let mean = row.iter().sum::<f64>() / out_w as f64;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / out_w as f64;
                        let inv_std = 1.0 / (var + super::graph::LAYER_NORM_EPS).sqrt();
                        for j in 0..out_w {
                            row[j] = norm.gain.data[j] * ((row[j] - mean) * inv_std)
                                + norm.shift.data[j];
                        }
                    }
                }
                match self.activation {
                    Activation::Relu => out.iter_mut().for_each(|v| {
                        if *v < 0.0 {
                            *v = 0.0
                        }
                    }),
                    Activation::Tanh => out.iter_mut().for_each(|v| *v = v.tanh()),
                }
            } else if let OutputTransform::TanhBounded(bound) = self.output {
                out.iter_mut().for_each(|v| *v = bound * v.tanh());
            }
            h = out;
            width = out_w;
        }
        Ok(h)
    }
}
