//! Experiment orchestration: repeated ERM-vs-robust trials with
//! cross-validated radii, lemma verification sweeps driven by the exact
//! oracle, and machine-readable report emission.

use std::path::Path;

use anyhow::{Context, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wdro_core::data::{gen_synthetic, make_test_sets, Dataset, ShiftKind, ShiftSpec, Task};
use wdro_core::loss::LossKind;
use wdro_core::nn::Mlp;
use wdro_core::train::{
    fit, frank_wolfe_covariates, perturb_responses, BceResponseMode, TrainConfig,
};

pub mod sweeps;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub losses: Vec<LossKind>,
    pub shift_probs: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub trials: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub hidden: Vec<usize>,
    pub m: u32,
    pub truncation: Option<f64>,
    pub cv_folds: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Regression,
            losses: vec![LossKind::Quadratic],
            shift_probs: vec![0.1],
            delta_grid: vec![0.05, 0.1, 0.2],
            trials: 20,
            n_train: 1000,
            n_test: 500,
            hidden: vec![32, 16, 8],
            m: 1,
            truncation: None,
            cv_folds: 3,
            seed: 0,
            train: TrainConfig {
                k_lip: 100.0,
                epochs: 200,
                learning_rate: 3e-3,
                lr_decay: 0.985,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    /// Binary-classification profile. The shift under study is label
    /// noise, so the robust arm spends its whole budget on the soft-label
    /// response adversary; the radius grid is sized for the label-noise
    /// bound `δ ≥ 2ξ` at flip probabilities up to 0.4.
    pub fn classification() -> Self {
        ExperimentConfig {
            task: Task::Binary,
            losses: vec![LossKind::Bce],
            shift_probs: vec![0.0],
            delta_grid: vec![0.2, 0.4, 0.8],
            train: TrainConfig {
                k_lip: 10.0,
                epochs: 200,
                learning_rate: 3e-3,
                lr_decay: 0.985,
                covariate_share: 0.0,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    /// CI-scale profile: fewer trials on smaller training sets.
    pub fn fast(mut self) -> Self {
        self.trials = 5;
        self.n_train = 500;
        self
    }

    pub fn validate(&self) -> Result<()> {
        anyhow::ensure!(self.trials >= 1, "trials must be >= 1");
        anyhow::ensure!(!self.delta_grid.is_empty(), "delta grid must be nonempty");
        anyhow::ensure!(!self.losses.is_empty(), "need at least one loss");
        anyhow::ensure!(!self.shift_probs.is_empty(), "need at least one shift_prob");
        self.train.validate()?;
        Ok(())
    }

    /// Base training config adjusted for the task: classification uses
    /// the soft-label response adversary from the label-noise analysis.
    pub fn train_base(&self) -> TrainConfig {
        let mut base = self.train.clone();
        if self.task != Task::Regression {
            base.bce_responses = BceResponseMode::Soft;
        }
        base
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![10];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub loss: String,
    pub test_set: String,
    pub shift_prob: f64,
    pub erm_mean: f64,
    pub erm_sd: f64,
    pub wdro_mean: f64,
    pub wdro_sd: f64,
    pub improvement_mean: f64,
    pub improvement_sd: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Mse,
    Huber { tau: f64 },
    Check { rho: f64 },
    Accuracy,
}

impl Metric {
    /// Evaluation metric matching a training loss on the given task.
    pub fn for_loss(kind: LossKind, task: Task) -> Metric {
        match task {
            Task::Regression => match kind {
                LossKind::Quadratic => Metric::Mse,
                LossKind::Huber { tau } => Metric::Huber { tau },
                LossKind::Check { rho } => Metric::Check { rho },
                LossKind::Bce => Metric::Accuracy,
            },
            _ => Metric::Accuracy,
        }
    }
}

/// Mean metric over a dataset. Accuracy is reported in percentage
/// points; regression metrics are mean residual losses.
pub fn evaluate(net: &Mlp, data: &Dataset, metric: Metric) -> Result<f64> {
    anyhow::ensure!(!data.is_empty(), "empty evaluation set");
    match (metric, data.task) {
        (Metric::Accuracy, Task::Regression) => {
            anyhow::bail!("accuracy metric on a regression dataset")
        }
        (Metric::Accuracy, _) => {}
        (_, Task::Regression) => {}
        _ => anyhow::bail!("regression metric on a classification dataset"),
    }
    let mut total = 0.0;
    for (x, &y) in data.x.iter().zip(&data.y) {
        match metric {
            Metric::Mse => {
                let r = net.forward(x)? - y;
                total += r * r;
            }
            Metric::Huber { tau } => {
                total += LossKind::Huber { tau }.value(net.forward(x)? - y);
            }
            Metric::Check { rho } => {
                total += LossKind::Check { rho }.value(net.forward(x)? - y);
            }
            Metric::Accuracy => {
                let out = net.forward_vec(x)?;
                let correct = if out.len() == 1 {
                    (out[0] >= 0.0) == (y >= 0.0)
                } else {
                    let argmax = out
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .unwrap()
                        .0;
                    argmax == y as usize
                };
                total += if correct { 100.0 } else { 0.0 };
            }
        }
    }
    Ok(total / data.len() as f64)
}

/// Two-pass mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Paired scores of one trial, per test-set name: (erm, wdro).
pub struct TrialResult {
    pub scores: Vec<(String, f64, f64)>,
    /// Cross-validated radius used by the robust arm.
    pub delta: f64,
}

fn trial_seed(base: u64, loss_idx: usize, shift_idx: usize, trial: usize) -> u64 {
    base.wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((loss_idx as u64) << 40)
        .wrapping_add((shift_idx as u64) << 20)
        .wrapping_add(trial as u64)
}

fn run_trial(
    config: &ExperimentConfig,
    kind: LossKind,
    shift_prob: f64,
    seed: u64,
) -> Result<TrialResult> {
    let shift_kind = match config.task {
        Task::Regression => ShiftKind::SyntheticRegression,
        _ => ShiftKind::SyntheticLabelFlip,
    };
    let train_data = gen_synthetic(
        config.n_train,
        &ShiftSpec {
            shift_prob,
            kind: shift_kind,
            seed,
        },
        config.task,
    );
    let with_imbalanced = config.task != Task::Regression;
    let tests = make_test_sets(
        shift_prob,
        config.task,
        config.n_test,
        seed.wrapping_add(0x7e57),
        with_imbalanced,
    )?;

    let dims = config.dims();
    let init = Mlp::random(&dims, config.m, config.truncation, seed.wrapping_add(1));

    // ERM and the robust model share initialization and data; the robust
    // arm warm-starts from the ERM solution so the paired comparison
    // isolates the effect of robustification from optimizer noise.
    let erm_config = TrainConfig {
        delta: 0.0,
        ..config.train_base()
    };
    let erm = fit(
        init.clone(),
        &train_data.x,
        &train_data.y,
        kind,
        &erm_config,
    )?;

    let delta = select_delta_warmstart(config, kind, &train_data, seed)?;
    let wdro = fit(
        erm.net.clone(),
        &train_data.x,
        &train_data.y,
        kind,
        &robustify_config(&config.train_base(), delta),
    )?;

    let metric = Metric::for_loss(kind, config.task);
    let mut scores = Vec::new();
    let mut push = |name: &str, set: &Dataset| -> Result<()> {
        scores.push((
            name.to_string(),
            evaluate(&erm.net, set, metric)?,
            evaluate(&wdro.net, set, metric)?,
        ));
        Ok(())
    };
    push("standard", &tests.standard)?;
    push("perturbed", &tests.perturbed)?;
    if let Some(imb) = &tests.imbalanced {
        push("imbalanced", imb)?;
    }
    Ok(TrialResult { scores, delta })
}

/// Fine-tuning schedule for the robust phase: half the epochs at a
/// reduced, still-decaying learning rate.
fn robustify_config(base: &TrainConfig, delta: f64) -> TrainConfig {
    TrainConfig {
        delta,
        epochs: (base.epochs / 2).max(1),
        learning_rate: base.learning_rate / 3.0,
        ..base.clone()
    }
}

/// Radius selection matching the warm-start protocol: per fold, one ERM
/// fit on the training part, then one robustification per candidate
/// radius, scored by clean validation risk. Ties resolve to the smaller
/// radius.
fn select_delta_warmstart(
    config: &ExperimentConfig,
    kind: LossKind,
    data: &Dataset,
    seed: u64,
) -> Result<f64> {
    let mut grid = config.delta_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let folds = config.cv_folds.max(2).min(data.len());
    let erm_config = TrainConfig {
        delta: 0.0,
        epochs: (config.train.epochs / 2).max(1),
        ..config.train_base()
    };
    let mut scores = vec![0.0f64; grid.len()];
    for fold in 0..folds {
        let (mut tx, mut ty, mut vx, mut vy) = (vec![], vec![], vec![], vec![]);
        for i in 0..data.len() {
            if i % folds == fold {
                vx.push(data.x[i].clone());
                vy.push(data.y[i]);
            } else {
                tx.push(data.x[i].clone());
                ty.push(data.y[i]);
            }
        }
        let base = fit(
            Mlp::random(
                &config.dims(),
                config.m,
                config.truncation,
                seed.wrapping_add(100 + fold as u64),
            ),
            &tx,
            &ty,
            kind,
            &erm_config,
        )?;
        let val = Dataset {
            shifted: vec![false; vx.len()],
            x: vx,
            y: vy,
            task: data.task,
        };
        for (gi, &delta) in grid.iter().enumerate() {
            let mut cfg = robustify_config(&config.train_base(), delta);
            cfg.epochs = (cfg.epochs / 2).max(1);
            let robust = fit(base.net.clone(), &tx, &ty, kind, &cfg)?;
            // Validation risk on the natural scale: 0-1 risk for
            // classification, the training loss for regression.
            scores[gi] += match config.task {
                Task::Regression => robust.net.batch_loss(&val.x, &val.y, kind)?,
                _ => 100.0 - evaluate(&robust.net, &val, Metric::Accuracy)?,
            };
        }
    }
    let mut best = (f64::INFINITY, grid[0]);
    for (gi, &delta) in grid.iter().enumerate() {
        if scores[gi] < best.0 - 1e-12 {
            best = (scores[gi], delta);
        }
    }
    Ok(best.1)
}

/// Per-trial improvement: relative loss reduction for regression,
/// accuracy-point gain for classification.
fn improvement(task: Task, erm: f64, wdro: f64) -> f64 {
    match task {
        Task::Regression => {
            if erm.abs() < 1e-300 {
                0.0
            } else {
                100.0 * (erm - wdro) / erm
            }
        }
        _ => wdro - erm,
    }
}

/// All trials for one (loss, shift) cell, in trial order. The loss and
/// shift indices only diversify the RNG streams across cells.
pub fn run_trials(
    config: &ExperimentConfig,
    kind: LossKind,
    shift_prob: f64,
    loss_idx: usize,
    shift_idx: usize,
) -> Result<Vec<TrialResult>> {
    (0..config.trials)
        .into_par_iter()
        .map(|t| {
            run_trial(
                config,
                kind,
                shift_prob,
                trial_seed(config.seed, loss_idx, shift_idx, t),
            )
            .with_context(|| format!("shift_prob {shift_prob}, trial {t}"))
        })
        .collect()
}

/// Runs the full protocol: for every loss and shift probability,
/// `trials` independent paired ERM/robust fits, aggregated per test set.
/// Deterministic given the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for (li, &kind) in config.losses.iter().enumerate() {
        for (si, &shift_prob) in config.shift_probs.iter().enumerate() {
            let trials = run_trials(config, kind, shift_prob, li, si)?;
            let set_names: Vec<String> =
                trials[0].scores.iter().map(|(n, _, _)| n.clone()).collect();
            for name in &set_names {
                let mut erm_vals = Vec::new();
                let mut wdro_vals = Vec::new();
                let mut imp_vals = Vec::new();
                for trial in &trials {
                    let (_, e, w) = trial
                        .scores
                        .iter()
                        .find(|(n, _, _)| n == name)
                        .expect("consistent test sets across trials");
                    erm_vals.push(*e);
                    wdro_vals.push(*w);
                    imp_vals.push(improvement(config.task, *e, *w));
                }
                let (erm_mean, erm_sd) = mean_sd(&erm_vals);
                let (wdro_mean, wdro_sd) = mean_sd(&wdro_vals);
                let (improvement_mean, improvement_sd) = mean_sd(&imp_vals);
                rows.push(ResultRow {
                    loss: kind.to_string(),
                    test_set: name.clone(),
                    shift_prob,
                    erm_mean,
                    erm_sd,
                    wdro_mean,
                    wdro_sd,
                    improvement_mean,
                    improvement_sd,
                    trials: config.trials,
                });
            }
        }
    }
    Ok(rows)
}

/// Loss on the worst batch found by the inner attack at radius `δ`
/// (split between covariates and responses). The best iterate over the
/// Frank–Wolfe trajectory is kept, so the clean batch is a lower bound.
pub fn adversarial_loss(
    net: &Mlp,
    kind: LossKind,
    xs: &[Vec<f64>],
    ys: &[f64],
    delta: f64,
    inner_steps: usize,
) -> Result<f64> {
    let clean = net.batch_loss(xs, ys, kind)?;
    if delta == 0.0 {
        return Ok(clean);
    }
    let mut best = clean;
    for steps in 1..=inner_steps {
        let ax = frank_wolfe_covariates(net, kind, xs, ys, delta / 2.0, steps, false)?;
        let ay = perturb_responses(net, kind, &ax, ys, delta / 2.0)?;
        best = best.max(net.batch_loss(&ax, &ay, kind)?);
    }
    Ok(best)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub lemma: String,
    pub instances: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl LemmaCheck {
    pub fn new(lemma: &str, instances: usize, max_violation: f64, tolerance: f64) -> Self {
        LemmaCheck {
            lemma: lemma.to_string(),
            instances,
            max_violation,
            tolerance,
            pass: max_violation <= tolerance,
        }
    }
}

/// Runs the oracle-driven verification sweeps for the duality,
/// regularization-bound, zero-radius, and first-order-expansion lemmas.
pub fn verify_lemmas(seed: u64, instance_count: usize) -> Vec<LemmaCheck> {
    assert!(instance_count >= 1);
    vec![
        sweeps::duality_sweep(seed, instance_count),
        sweeps::lipschitz_gap_sweep(seed.wrapping_add(1), instance_count),
        sweeps::zero_radius_sweep(seed.wrapping_add(2), instance_count.min(50)),
        sweeps::expansion_order_sweep(seed.wrapping_add(3)),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

const CSV_HEADER: &str = "loss,test_set,shift_prob,erm_mean,erm_sd,wdro_mean,wdro_sd,improvement_mean,improvement_sd,trials";

fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    // Round to 6 significant digits via scientific notation, then parse
    // back so the emitted decimal form is shortest.
    format!("{}", format!("{v:.5e}").parse::<f64>().unwrap())
}

/// Writes rows at 6 significant digits; CSV columns follow the
/// `ResultRow` field order.
pub fn emit_report(rows: &[ResultRow], format: ReportFormat, path: &Path) -> Result<()> {
    let content = match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    r.loss,
                    r.test_set,
                    sig6(r.shift_prob),
                    sig6(r.erm_mean),
                    sig6(r.erm_sd),
                    sig6(r.wdro_mean),
                    sig6(r.wdro_sd),
                    sig6(r.improvement_mean),
                    sig6(r.improvement_sd),
                    r.trials
                ));
            }
            out
        }
        ReportFormat::Json => {
            let rounded: Vec<ResultRow> = rows
                .iter()
                .map(|r| ResultRow {
                    shift_prob: sig6(r.shift_prob).parse().unwrap(),
                    erm_mean: sig6(r.erm_mean).parse().unwrap(),
                    erm_sd: sig6(r.erm_sd).parse().unwrap(),
                    wdro_mean: sig6(r.wdro_mean).parse().unwrap(),
                    wdro_sd: sig6(r.wdro_sd).parse().unwrap(),
                    improvement_mean: sig6(r.improvement_mean).parse().unwrap(),
                    improvement_sd: sig6(r.improvement_sd).parse().unwrap(),
                    ..r.clone()
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&rounded)?;
            s.push('\n');
            s
        }
    };
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Reads back a CSV report produced by [`emit_report`].
pub fn read_csv_report(path: &Path) -> Result<Vec<ResultRow>> {
    let content =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = content.lines();
    let header = lines.next().context("empty report")?;
    anyhow::ensure!(header == CSV_HEADER, "unexpected CSV header: {header}");
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        anyhow::ensure!(f.len() == 10, "bad CSV row: {line}");
        rows.push(ResultRow {
            loss: f[0].to_string(),
            test_set: f[1].to_string(),
            shift_prob: f[2].parse()?,
            erm_mean: f[3].parse()?,
            erm_sd: f[4].parse()?,
            wdro_mean: f[5].parse()?,
            wdro_sd: f[6].parse()?,
            improvement_mean: f[7].parse()?,
            improvement_sd: f[8].parse()?,
            trials: f[9].parse()?,
        });
    }
    Ok(rows)
}

pub const SYNTH_MNIST_CLASSES: usize = 10;

/// Synthetic 28x28 digit-like dataset: each class has a fixed bright
/// template block plus pixel noise, so a small MLP separates the classes
/// quickly. Used to exercise the IDX and training pipelines without
/// shipping the real corpus.
pub fn synthetic_mnist(n: usize, seed: u64) -> Dataset {
    use wdro_core::data::MNIST_SIDE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % SYNTH_MNIST_CLASSES;
        let (block_r, block_c) = (2 + 5 * (class / 5), 3 + 5 * (class % 5));
        let mut img = vec![0.0f64; MNIST_SIDE * MNIST_SIDE];
        for p in img.iter_mut() {
            *p = rng.gen::<f64>() * 0.2;
        }
        for r in block_r..block_r + 8 {
            for c in block_c..block_c + 4 {
                img[r * MNIST_SIDE + c] = 0.8 + 0.2 * rng.gen::<f64>();
            }
        }
        x.push(img);
        y.push(class as f64);
    }
    Dataset {
        x,
        y,
        shifted: vec![false; n],
        task: Task::Multiclass,
    }
}
