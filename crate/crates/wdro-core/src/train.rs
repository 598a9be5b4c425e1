//! Dual Frank–Wolfe adversarial training: inner maximization over an
//! `∞`-ball transport budget, outer stochastic minimization over the
//! norm-constrained network, and radius selection by cross-validation.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::nn::Mlp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// How the transport budget is allocated inside a batch: `PerSample`
/// gives every point its own `δ/2` ball; `BatchMean` concentrates the
/// pooled budget on the sample with the steepest loss gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    PerSample,
    BatchMean,
}

/// How the response budget treats binary margin-loss labels. `Skip`
/// leaves labels untouched; `Soft` applies the generic ascent step
/// `y + r·sign(∂ℓ/∂y)`, yielding soft labels that model label noise
/// inside the transport budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BceResponseMode {
    Skip,
    Soft,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Wasserstein radius `δ`; `0` recovers plain empirical risk
    /// minimization with the inner loop skipped entirely.
    pub delta: f64,
    /// Frank–Wolfe iterations of the inner maximization.
    pub inner_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate factor; `1` keeps the rate
    /// constant.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Norm bound `K` enforced on `κ(θ)` after every step.
    pub k_lip: f64,
    pub budget_mode: BudgetMode,
    /// Fraction of `δ` spent on covariates; the rest perturbs responses.
    pub covariate_share: f64,
    /// Clamp perturbed covariates back into `[0,1]^d`.
    pub clip_domain: bool,
    /// Response handling for the binary margin loss.
    pub bce_responses: BceResponseMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            delta: 0.0,
            inner_steps: 10,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            optimizer: Optimizer::Adam,
            seed: 0,
            k_lip: 10.0,
            budget_mode: BudgetMode::PerSample,
            covariate_share: 0.5,
            clip_domain: true,
            bce_responses: BceResponseMode::Skip,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta < 0.0 {
            return Err(Error::InvalidParameter("delta must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.covariate_share) {
            return Err(Error::InvalidParameter(
                "covariate_share must lie in [0,1]".into(),
            ));
        }
        if self.k_lip <= 0.0 {
            return Err(Error::InvalidParameter("k_lip must be positive".into()));
        }
        if self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter(
                "batch_size and learning_rate must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidParameter(
                "lr_decay must lie in (0,1]".into(),
            ));
        }
        Ok(())
    }

    pub fn covariate_radius(&self) -> f64 {
        self.delta * self.covariate_share
    }

    pub fn response_radius(&self) -> f64 {
        self.delta * (1.0 - self.covariate_share)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub clean_loss: f64,
    pub adv_loss: f64,
    pub kappa: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: Mlp,
    pub logs: Vec<EpochLog>,
}

/// Linear maximization oracle of the `∞`-ball: the vertex
/// `radius · sign(grad)`, with `sign(0) = 0`.
pub fn lmo(grad: &[f64], radius: f64) -> Vec<f64> {
    grad.iter()
        .map(|&g| {
            if g > 0.0 {
                radius
            } else if g < 0.0 {
                -radius
            } else {
                0.0
            }
        })
        .collect()
}

/// Frank–Wolfe ascent of the batch loss over per-sample `∞`-balls of the
/// given radius centered at the original covariates. Step sizes
/// `γ_t = 2/(t+2)` keep every iterate a convex combination of ball
/// points, so the budget is respected at every step.
pub fn frank_wolfe_covariates(
    net: &Mlp,
    kind: LossKind,
    xs: &[Vec<f64>],
    ys: &[f64],
    radius: f64,
    steps: usize,
    clip_domain: bool,
) -> Result<Vec<Vec<f64>>> {
    let mut adv: Vec<Vec<f64>> = xs.to_vec();
    if radius == 0.0 || steps == 0 {
        return Ok(adv);
    }
    for t in 0..steps {
        let gamma = 2.0 / (t as f64 + 2.0);
        let grads = net.input_gradients(&adv, ys, kind)?;
        for ((a, x0), g) in adv.iter_mut().zip(xs).zip(&grads) {
            let dir = lmo(g, radius);
            for ((ai, &x0i), di) in a.iter_mut().zip(x0).zip(dir) {
                let vertex = x0i + di;
                let vertex = if clip_domain {
                    vertex.clamp(0.0, 1.0)
                } else {
                    vertex
                };
                *ai = (1.0 - gamma) * *ai + gamma * vertex;
            }
        }
    }
    Ok(adv)
}

/// Batch-mean budget variant: the pooled budget `n·radius` moves the one
/// sample whose loss gradient has the largest `ℓ₁` norm.
pub fn frank_wolfe_batch_mean(
    net: &Mlp,
    kind: LossKind,
    xs: &[Vec<f64>],
    ys: &[f64],
    radius: f64,
    steps: usize,
    clip_domain: bool,
) -> Result<Vec<Vec<f64>>> {
    let mut adv: Vec<Vec<f64>> = xs.to_vec();
    if radius == 0.0 || steps == 0 || xs.is_empty() {
        return Ok(adv);
    }
    let grads = net.input_gradients(&adv, ys, kind)?;
    let target = grads
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            let na: f64 = a.iter().map(|g| g.abs()).sum();
            let nb: f64 = b.iter().map(|g| g.abs()).sum();
            na.total_cmp(&nb)
        })
        .map(|(i, _)| i)
        .unwrap();
    let pooled = radius * xs.len() as f64;
    let single = frank_wolfe_covariates(
        net,
        kind,
        &xs[target..=target],
        &ys[target..=target],
        pooled,
        steps,
        clip_domain,
    )?;
    adv[target] = single.into_iter().next().unwrap();
    Ok(adv)
}

/// One-shot response perturbation `y + radius · sign(∂ℓ/∂y)`. Skipped
/// for the margin loss, whose labels are categorical.
pub fn perturb_responses(
    net: &Mlp,
    kind: LossKind,
    xs: &[Vec<f64>],
    ys: &[f64],
    radius: f64,
) -> Result<Vec<f64>> {
    if radius == 0.0 || matches!(kind, LossKind::Bce) {
        return Ok(ys.to_vec());
    }
    ascend_responses(net, kind, xs, ys, radius)
}

/// Response ascent step that also covers the scalar margin loss by
/// relaxing `±1` labels to soft targets ([`BceResponseMode::Soft`]).
/// Multiclass label indices are never perturbed.
pub fn perturb_responses_soft(
    net: &Mlp,
    kind: LossKind,
    xs: &[Vec<f64>],
    ys: &[f64],
    radius: f64,
) -> Result<Vec<f64>> {
    if radius == 0.0 || (matches!(kind, LossKind::Bce) && net.output_dim() > 1) {
        return Ok(ys.to_vec());
    }
    ascend_responses(net, kind, xs, ys, radius)
}

fn ascend_responses(
    net: &Mlp,
    kind: LossKind,
    xs: &[Vec<f64>],
    ys: &[f64],
    radius: f64,
) -> Result<Vec<f64>> {
    let bundle = net.backward(xs, ys, kind)?;
    Ok(ys
        .iter()
        .zip(&bundle.response_grads)
        .map(|(&y, &g)| y + lmo(&[g], radius)[0])
        .collect())
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Runs the adversarial training loop: mini-batch stochastic outer
/// descent with the inner
/// Frank–Wolfe maximization, projecting back to `κ(θ) ≤ K` after every
/// update. With `delta = 0` the inner maximization is skipped exactly,
/// so the trajectory coincides with ordinary ERM.
pub fn fit(
    mut net: Mlp,
    xs: &[Vec<f64>],
    ys: &[f64],
    kind: LossKind,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    kind.validate()?;
    assert_eq!(xs.len(), ys.len());
    assert!(!xs.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState {
        m: vec![0.0; net.param_count()],
        v: vec![0.0; net.param_count()],
        t: 0,
    };
    let mut indices: Vec<usize> = (0..xs.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);

    net = net.enforce_constraint(config.k_lip)?;
    for epoch in 0..config.epochs {
        let lr = config.learning_rate * config.lr_decay.powi(epoch as i32);
        indices.shuffle(&mut rng);
        let mut adv_total = 0.0;
        let mut batches = 0.0;
        for (step, chunk) in indices.chunks(config.batch_size).enumerate() {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let (ax, ay) = if config.delta > 0.0 {
                let ax = match config.budget_mode {
                    BudgetMode::PerSample => frank_wolfe_covariates(
                        &net,
                        kind,
                        &bx,
                        &by,
                        config.covariate_radius(),
                        config.inner_steps,
                        config.clip_domain,
                    )?,
                    BudgetMode::BatchMean => frank_wolfe_batch_mean(
                        &net,
                        kind,
                        &bx,
                        &by,
                        config.covariate_radius(),
                        config.inner_steps,
                        config.clip_domain,
                    )?,
                };
                let ay = match config.bce_responses {
                    BceResponseMode::Skip => {
                        perturb_responses(&net, kind, &ax, &by, config.response_radius())?
                    }
                    BceResponseMode::Soft => {
                        perturb_responses_soft(&net, kind, &ax, &by, config.response_radius())?
                    }
                };
                (ax, ay)
            } else {
                (bx, by)
            };
            let bundle = net.backward(&ax, &ay, kind)?;
            let batch_loss = net.batch_loss(&ax, &ay, kind)?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            adv_total += batch_loss;
            batches += 1.0;

            match config.optimizer {
                Optimizer::Sgd => {
                    let mut flat = vec![0.0; adam.m.len()];
                    Mlp::for_each_grad(&bundle.param_grads, |i, g| flat[i] = g);
                    net.for_each_param_mut(|i, p| *p -= lr * flat[i]);
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let mut flat = vec![0.0; adam.m.len()];
                    Mlp::for_each_grad(&bundle.param_grads, |i, g| flat[i] = g);
                    let bc1 = 1.0 - ADAM_BETA1.powi(adam.t as i32);
                    let bc2 = 1.0 - ADAM_BETA2.powi(adam.t as i32);
                    let (ms, vs) = (&mut adam.m, &mut adam.v);
                    net.for_each_param_mut(|i, p| {
                        ms[i] = ADAM_BETA1 * ms[i] + (1.0 - ADAM_BETA1) * flat[i];
                        vs[i] = ADAM_BETA2 * vs[i] + (1.0 - ADAM_BETA2) * flat[i] * flat[i];
                        let m_hat = ms[i] / bc1;
                        let v_hat = vs[i] / bc2;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    });
                }
            }
            net = net.enforce_constraint(config.k_lip)?;
        }
        let clean_loss = net.batch_loss(xs, ys, kind)?;
        if !clean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: 0 });
        }
        logs.push(EpochLog {
            epoch,
            clean_loss,
            adv_loss: adv_total / batches,
            kappa: net.kappa(),
        });
    }
    Ok(TrainOutcome { net, logs })
}

/// Picks the radius minimizing mean clean validation risk over a k-fold
/// split. Duplicate grid entries are collapsed; ties resolve to the
/// smaller radius.
pub fn cross_validate_delta(
    dims: &[usize],
    m: u32,
    truncation: Option<f64>,
    xs: &[Vec<f64>],
    ys: &[f64],
    kind: LossKind,
    base: &TrainConfig,
    deltas: &[f64],
    folds: usize,
) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::InvalidParameter("empty delta grid".into()));
    }
    let mut grid: Vec<f64> = deltas.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let folds = folds.max(2).min(xs.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed ^ 0x5eed_f01d);
    order.shuffle(&mut rng);

    let mut best = (f64::INFINITY, grid[0]);
    for &delta in &grid {
        let mut total = 0.0;
        for fold in 0..folds {
            let (mut tx, mut ty, mut vx, mut vy) = (vec![], vec![], vec![], vec![]);
            for (pos, &i) in order.iter().enumerate() {
                if pos % folds == fold {
                    vx.push(xs[i].clone());
                    vy.push(ys[i]);
                } else {
                    tx.push(xs[i].clone());
                    ty.push(ys[i]);
                }
            }
            let config = TrainConfig {
                delta,
                ..base.clone()
            };
            let net = Mlp::random(dims, m, truncation, base.seed.wrapping_add(fold as u64));
            let outcome = fit(net, &tx, &ty, kind, &config)?;
            total += outcome.net.batch_loss(&vx, &vy, kind)?;
        }
        let mean = total / folds as f64;
        // Strict inequality keeps the smaller radius on ties.
        if mean < best.0 - 1e-12 {
            best = (mean, delta);
        }
    }
    Ok(best.1)
}
