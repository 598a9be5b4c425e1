//! Dense feedforward networks with RePU activations.
//!
//! A network is `g = g_L ∘ … ∘ g_0` where the hidden maps are
//! `g_ℓ(x) = σ_m(A_ℓ x + b_ℓ)` and the output map is affine, optionally
//! followed by truncation to `[-M, M]`. The activation is the rectified
//! power unit `σ_m(x) = max{x, 0}^m`.
//!
//! Backpropagation is hand-derived for this fixed topology and produces
//! gradients with respect to parameters, covariates, and responses, which
//! is what the adversarial perturbation steps consume.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;

/// Rectified power unit `max{x, 0}^m`.
pub fn repu(x: f64, m: u32) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x.powi(m as i32)
    }
}

/// Derivative of [`repu`]: `m * max{x, 0}^(m-1)`, with the convention that
/// the subgradient at 0 is 0 for m = 1.
pub fn repu_prime(x: f64, m: u32) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        m as f64 * x.powi(m as i32 - 1)
    }
}

/// One dense layer, weights stored row-major with shape `(rows, cols)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn rows(&self) -> usize {
        self.bias.len()
    }

    pub fn cols(&self) -> usize {
        self.weight.len() / self.bias.len()
    }

    /// `‖(A, b)‖_∞`: max absolute row sum of the matrix with the bias
    /// appended as an extra column.
    pub fn augmented_norm(&self) -> f64 {
        let cols = self.cols();
        (0..self.rows())
            .map(|i| {
                let row_sum: f64 = self.weight[i * cols..(i + 1) * cols]
                    .iter()
                    .map(|w| w.abs())
                    .sum();
                row_sum + self.bias[i].abs()
            })
            .fold(0.0, f64::max)
    }

    /// `‖A‖_∞` of the weight matrix alone.
    pub fn weight_norm(&self) -> f64 {
        let cols = self.cols();
        (0..self.rows())
            .map(|i| {
                self.weight[i * cols..(i + 1) * cols]
                    .iter()
                    .map(|w| w.abs())
                    .sum()
            })
            .fold(0.0, f64::max)
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        let cols = self.cols();
        out.clear();
        for i in 0..self.rows() {
            let mut acc = self.bias[i];
            let row = &self.weight[i * cols..(i + 1) * cols];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(acc);
        }
    }
}

/// Gradients of a mean batch loss: parameter gradients shaped like the
/// network, plus per-sample covariate and response gradients.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub param_grads: Vec<Layer>,
    pub input_grads: Vec<Vec<f64>>,
    pub response_grads: Vec<f64>,
}

/// Norm-constrained feedforward network.
///
/// `layers[0..L]` are the hidden layers, `layers[L]` is the output layer.
/// The output bias is kept for convenience; the norm functional `κ` only
/// sees `‖A_L‖_∞` and the augmented norms of the hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub m: u32,
    pub truncation: Option<f64>,
}

/// Cached forward pass used by backpropagation: pre-activations and
/// post-activations of every hidden layer, plus the raw (untruncated)
/// output.
pub struct ForwardCache {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    raw_output: Vec<f64>,
}

impl Mlp {
    /// Builds a network with the given layer dimension chain
    /// `[d_0, d_1, …, d_{L+1}]`, weights uniform in `[-a, a]` with
    /// `a = 1/sqrt(fan_in)`, biases zero.
    pub fn random(dims: &[usize], m: u32, truncation: Option<f64>, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(m >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let a = 1.0 / (cols as f64).sqrt();
                Layer {
                    weight: (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect(),
                    bias: vec![0.0; rows],
                }
            })
            .collect();
        Mlp {
            layers,
            m,
            truncation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().rows()
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Max hidden-layer width `W`.
    pub fn width(&self) -> usize {
        self.layers[..self.depth()]
            .iter()
            .map(Layer::rows)
            .max()
            .unwrap_or(0)
    }

    /// Parameter count of the hidden part, `Σ d_{s+1}(d_s + 1)`.
    pub fn size(&self) -> usize {
        self.layers[..self.depth()]
            .iter()
            .map(|l| l.rows() * (l.cols() + 1))
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn truncate(&self, v: f64) -> f64 {
        match self.truncation {
            Some(m) => v.clamp(-m, m),
            None => v,
        }
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut post = Vec::with_capacity(depth);
        let mut h = x.to_vec();
        for layer in &self.layers[..depth] {
            let mut z = Vec::new();
            layer.affine(&h, &mut z);
            h = z.iter().map(|&v| repu(v, self.m)).collect();
            pre.push(z);
            post.push(h.clone());
        }
        let mut raw = Vec::new();
        self.layers[depth].affine(&h, &mut raw);
        let out: Vec<f64> = raw.iter().map(|&v| self.truncate(v)).collect();
        Ok((
            out,
            ForwardCache {
                pre,
                post,
                raw_output: raw,
            },
        ))
    }

    /// Forward pass for multi-output networks.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass for scalar-output networks.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        debug_assert_eq!(self.output_dim(), 1);
        Ok(self.forward_vec(x)?[0])
    }

    /// Backpropagates `out_grad` (dLoss/dOutput) through the cached pass.
    /// Truncation is straight-through inside `[-M, M]` and zero outside.
    /// When `param_grads` is given, gradients are accumulated into it.
    pub fn backprop(
        &self,
        x: &[f64],
        cache: &ForwardCache,
        out_grad: &[f64],
        mut param_grads: Option<&mut Vec<Layer>>,
    ) -> Vec<f64> {
        let depth = self.depth();
        let mut delta: Vec<f64> = out_grad
            .iter()
            .zip(&cache.raw_output)
            .map(|(&g, &raw)| match self.truncation {
                Some(m) if raw.abs() > m => 0.0,
                _ => g,
            })
            .collect();
        // Output layer.
        {
            let layer = &self.layers[depth];
            let input = if depth == 0 { x } else { &cache.post[depth - 1] };
            if let Some(grads) = param_grads.as_deref_mut() {
                accumulate(&mut grads[depth], &delta, input);
            }
            delta = matvec_transpose(layer, &delta);
        }
        // Hidden layers, last to first.
        for l in (0..depth).rev() {
            for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                *d *= repu_prime(z, self.m);
            }
            let layer = &self.layers[l];
            let input = if l == 0 { x } else { &cache.post[l - 1] };
            if let Some(grads) = param_grads.as_deref_mut() {
                accumulate(&mut grads[l], &delta, input);
            }
            delta = matvec_transpose(layer, &delta);
        }
        delta
    }

    /// Zero-valued gradient buffers shaped like the network.
    pub fn zero_grads(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer {
                weight: vec![0.0; l.weight.len()],
                bias: vec![0.0; l.bias.len()],
            })
            .collect()
    }

    /// Gradients of the mean batch loss over `(xs, ys)` with respect to
    /// parameters, covariates, and responses.
    ///
    /// For regression losses the per-sample loss is `ℓ(f(x) - y)`; for
    /// `Bce` it is the margin loss on `f(x)·y` (scalar output) or the
    /// one-vs-all mean over outputs (labels in `0..C`).
    pub fn backward(&self, xs: &[Vec<f64>], ys: &[f64], kind: LossKind) -> Result<GradientBundle> {
        assert!(!xs.is_empty(), "batch must be nonempty");
        assert_eq!(xs.len(), ys.len());
        let n = xs.len() as f64;
        let mut param_grads = self.zero_grads();
        let mut input_grads = Vec::with_capacity(xs.len());
        let mut response_grads = Vec::with_capacity(xs.len());
        for (i, (x, &y)) in xs.iter().zip(ys).enumerate() {
            let (out, cache) = self.forward_cached(x)?;
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { sample: i });
            }
            let (out_grad, resp_grad) = self.sample_output_grad(&out, y, kind);
            let scaled: Vec<f64> = out_grad.iter().map(|g| g / n).collect();
            let input_grad = self.backprop(x, &cache, &scaled, Some(&mut param_grads));
            // Per-sample covariate/response gradients are unnormalized.
            input_grads.push(input_grad.iter().map(|g| g * n).collect());
            response_grads.push(resp_grad);
        }
        Ok(GradientBundle {
            param_grads,
            input_grads,
            response_grads,
        })
    }

    /// Per-sample covariate gradients of the loss, skipping the parameter
    /// accumulation. Used by the inner maximization.
    pub fn input_gradients(
        &self,
        xs: &[Vec<f64>],
        ys: &[f64],
        kind: LossKind,
    ) -> Result<Vec<Vec<f64>>> {
        let mut grads = Vec::with_capacity(xs.len());
        for (x, &y) in xs.iter().zip(ys) {
            let (out, cache) = self.forward_cached(x)?;
            let (out_grad, _) = self.sample_output_grad(&out, y, kind);
            grads.push(self.backprop(x, &cache, &out_grad, None));
        }
        Ok(grads)
    }

    /// Mean loss of the batch.
    pub fn batch_loss(&self, xs: &[Vec<f64>], ys: &[f64], kind: LossKind) -> Result<f64> {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let out = self.forward_vec(x)?;
            total += self.sample_loss(&out, y, kind);
        }
        Ok(total / xs.len() as f64)
    }

    pub fn sample_loss(&self, out: &[f64], y: f64, kind: LossKind) -> f64 {
        match kind {
            LossKind::Bce if out.len() > 1 => {
                let label = y as usize;
                let c = out.len() as f64;
                out.iter()
                    .enumerate()
                    .map(|(j, &f)| {
                        let target = if j == label { 1.0 } else { -1.0 };
                        kind.value(f * target)
                    })
                    .sum::<f64>()
                    / c
            }
            LossKind::Bce => kind.value(out[0] * y),
            _ => kind.value(out[0] - y),
        }
    }

    /// Gradient of the per-sample loss with respect to the raw outputs,
    /// plus the response gradient `∂ℓ/∂y`.
    fn sample_output_grad(&self, out: &[f64], y: f64, kind: LossKind) -> (Vec<f64>, f64) {
        match kind {
            LossKind::Bce if out.len() > 1 => {
                let label = y as usize;
                let c = out.len() as f64;
                let grads = out
                    .iter()
                    .enumerate()
                    .map(|(j, &f)| {
                        let target = if j == label { 1.0 } else { -1.0 };
                        target * kind.deriv(f * target) / c
                    })
                    .collect();
                (grads, 0.0)
            }
            LossKind::Bce => {
                let t = out[0] * y;
                (vec![y * kind.deriv(t)], out[0] * kind.deriv(t))
            }
            _ => {
                let d = kind.deriv(out[0] - y);
                (vec![d], -d)
            }
        }
    }

    /// The norm functional
    /// `κ(θ) = m^L ‖A_L‖_∞ Π_s max{‖(A_s, b_s)‖_∞, 1}^{m^(L-s)}`.
    pub fn kappa(&self) -> f64 {
        let depth = self.depth() as i32;
        let m = self.m as f64;
        let mut k = m.powi(depth) * self.layers[self.depth()].weight_norm();
        for (s, layer) in self.layers[..self.depth()].iter().enumerate() {
            let r = layer.augmented_norm().max(1.0);
            let exponent = (self.m as f64).powi(depth - s as i32);
            k *= r.powf(exponent);
        }
        k
    }

    /// Rescales layers until `κ ≤ bound`. Hidden layers are shrunk to
    /// augmented norm at most 1, then the output layer absorbs whatever
    /// excess remains. A network already inside the constraint is
    /// returned unchanged.
    pub fn enforce_constraint(mut self, bound: f64) -> Result<Mlp> {
        if bound <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "Lipschitz bound must be positive, got {bound}"
            )));
        }
        if self.kappa() <= bound {
            return Ok(self);
        }
        let depth = self.depth();
        for layer in &mut self.layers[..depth] {
            let r = layer.augmented_norm();
            if r > 1.0 {
                let scale = 1.0 / r;
                layer.weight.iter_mut().for_each(|w| *w *= scale);
                layer.bias.iter_mut().for_each(|b| *b *= scale);
            }
        }
        let kappa = self.kappa();
        if kappa > bound {
            let scale = bound / kappa;
            let out = &mut self.layers[depth];
            out.weight.iter_mut().for_each(|w| *w *= scale);
            out.bias.iter_mut().for_each(|b| *b *= scale);
        }
        Ok(self)
    }

    /// Norm-normalizing reparameterization: hidden layers scaled to
    /// augmented norm at most 1, output weights scaled by
    /// `Π_s r_s^(m^(L-s))`, function values unchanged.
    pub fn reparameterize(&self) -> Mlp {
        let depth = self.depth();
        let m = self.m as f64;
        let mut net = self.clone();
        // Cumulative factor Π_{s<=ℓ} r_s^(m^(ℓ-s)), maintained layer by layer.
        let mut cumulative: f64 = 1.0;
        let mut scales = Vec::with_capacity(depth);
        for (l, layer) in net.layers[..depth].iter_mut().enumerate() {
            let r = layer.augmented_norm().max(1.0);
            scales.push(r);
            cumulative = cumulative.powf(m) * r;
            let inv_r = 1.0 / r;
            layer.weight.iter_mut().for_each(|w| *w *= inv_r);
            let inv_cum = 1.0 / cumulative;
            layer.bias.iter_mut().for_each(|b| *b *= inv_cum);
            let _ = l;
        }
        let mut out_scale = 1.0;
        for (s, &r) in scales.iter().enumerate() {
            out_scale *= r.powf(m.powi((depth - s) as i32));
        }
        net.layers[depth]
            .weight
            .iter_mut()
            .for_each(|w| *w *= out_scale);
        net
    }

    /// Empirical lower witness of the Lipschitz constant: max slope over
    /// sampled pairs in `[0,1]^d` under the `∞`-norm.
    pub fn lipschitz_empirical(&self, trials: usize, seed: u64) -> f64 {
        assert!(trials >= 1);
        let d = self.input_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for _ in 0..trials {
            let x1: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let x2: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
            let dist = x1
                .iter()
                .zip(&x2)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dist == 0.0 {
                continue;
            }
            let g1 = self.forward(&x1).expect("dims fixed");
            let g2 = self.forward(&x2).expect("dims fixed");
            best = best.max((g1 - g2).abs() / dist);
        }
        best
    }

    /// Uniform bound on `sup_x ‖∇²g(x)‖_∞` over `‖x‖_∞ ≤ 1`:
    /// `L m^(2L) ‖Ã_L‖_∞` for the normalized network.
    pub fn hessian_bound(&self) -> Result<f64> {
        if self.m < 2 {
            return Err(Error::HessianReluOrder);
        }
        let normalized = self.reparameterize();
        let depth = normalized.depth() as f64;
        let m = normalized.m as f64;
        Ok(depth * m.powi(2 * normalized.depth() as i32)
            * normalized.layers[normalized.depth()].weight_norm())
    }

    /// Serializes the checkpoint schema `{m, truncation, layers}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Mlp> {
        let net: Mlp = serde_json::from_str(json)?;
        Ok(net)
    }

    /// Flattened view of all parameters, used by the optimizer.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0;
        for layer in &mut self.layers {
            for w in &mut layer.weight {
                f(idx, w);
                idx += 1;
            }
            for b in &mut layer.bias {
                f(idx, b);
                idx += 1;
            }
        }
    }

    pub fn for_each_grad(grads: &[Layer], mut f: impl FnMut(usize, f64)) {
        let mut idx = 0;
        for layer in grads {
            for &w in &layer.weight {
                f(idx, w);
                idx += 1;
            }
            for &b in &layer.bias {
                f(idx, b);
                idx += 1;
            }
        }
    }
}

fn accumulate(grad: &mut Layer, delta: &[f64], input: &[f64]) {
    let cols = input.len();
    for (i, &d) in delta.iter().enumerate() {
        let row = &mut grad.weight[i * cols..(i + 1) * cols];
        for (g, &x) in row.iter_mut().zip(input) {
            *g += d * x;
        }
        grad.bias[i] += d;
    }
}

/// `Aᵀ delta` for a layer's weight matrix.
fn matvec_transpose(layer: &Layer, delta: &[f64]) -> Vec<f64> {
    let cols = layer.cols();
    let mut out = vec![0.0; cols];
    for (i, &d) in delta.iter().enumerate() {
        let row = &layer.weight[i * cols..(i + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += d * w;
        }
    }
    out
}
