//! Acceptance suite: one test per headline criterion, each printing a
//! single pass/fail line with the measured quantity before asserting.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wdro_bench::{
    adversarial_loss, mean_sd, run_trials, sweeps, synthetic_mnist, ExperimentConfig,
};
use wdro_core::data::{
    confusion_label, load_idx, perturb_mnist, write_idx, Dataset, ShiftKind, ShiftSpec, Task,
    CORNER_SIDE, MNIST_SIDE, OCCLUSION_SIDE,
};
use wdro_core::loss::LossKind;
use wdro_core::nn::Mlp;
use wdro_core::oracle::{regularizer_gap, WorstCaseProblem};
use wdro_core::train::{fit, frank_wolfe_covariates, Optimizer, TrainConfig};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

fn line_grid(lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    (0..points)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (points - 1) as f64])
        .collect()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let ys = xs.iter().map(|x| x[0] - 0.5 * x[d - 1]).collect();
    (xs, ys)
}

/// Criterion 1: primal/dual agreement of the exact oracle on 200 random
/// guarded instances, within 1e-6 and under 60 s.
#[test]
fn duality_on_guarded_instances() {
    let start = Instant::now();
    let check = sweeps::duality_sweep(0, 200);
    let elapsed = start.elapsed();
    report(
        "strong duality",
        check.pass && elapsed < Duration::from_secs(60),
        &format!(
            "max |dual - primal| = {:.3e} over {} instances in {:.1?} (tolerance {:.0e}, budget 60 s)",
            check.max_violation, check.instances, elapsed, check.tolerance
        ),
    );
}

/// Criterion 2: the worst-case gap lies in `[0, δ·Lip·(κ+1)]` on 500
/// constrained nets, and equals `δ·slope` exactly on 1-d linear losses.
#[test]
fn lipschitz_regularization_bound() {
    let check = sweeps::lipschitz_gap_sweep(1, 500);

    let mut worst_eq = 0.0f64;
    for &(slope, delta) in &[(1.7, 0.15), (0.6, 0.1), (2.5, 0.05), (0.25, 0.2)] {
        let problem = WorstCaseProblem::new(
            vec![vec![0.05], vec![-0.1]],
            line_grid(-3.0, 3.0, 1201),
            1,
            delta,
            |z| slope * z[0],
        )
        .unwrap();
        let gap = regularizer_gap(&problem).unwrap();
        worst_eq = worst_eq.max((gap - delta * slope).abs());
    }

    report(
        "Lipschitz regularization bound",
        check.pass && worst_eq < 1e-6,
        &format!(
            "max bound violation {:.3e} over {} nets (tolerance {:.0e}); linear equality error {:.3e} (tolerance 1e-6)",
            check.max_violation, check.instances, check.tolerance, worst_eq
        ),
    );
}

/// Criterion 3: the first-order expansion residual decays at observed
/// order >= 1.8 across the halving schedule of radii.
#[test]
fn first_order_expansion_decay() {
    let raw = sweeps::expansion_residuals();
    let residuals: Vec<String> = raw.iter().map(|r| format!("{r:.3e}")).collect();
    let order = (raw.first().unwrap().max(1e-300) / raw.last().unwrap().max(1e-300)).log2()
        / (raw.len() - 1) as f64;
    report(
        "first-order expansion",
        order >= sweeps::EXPANSION_MIN_ORDER,
        &format!(
            "residuals {residuals:?} over deltas {:?}, observed order {order:.3} (required {})",
            sweeps::EXPANSION_DELTAS,
            sweeps::EXPANSION_MIN_ORDER
        ),
    );
}

/// Criterion 4: network-level bounds — empirical Lipschitz witness vs κ,
/// output-preserving reparameterization, gradient check against finite
/// differences, and the smooth-case Hessian bound.
#[test]
fn network_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let shapes: [&[usize]; 4] = [&[2, 4, 1], &[3, 6, 1], &[2, 4, 3, 1], &[4, 8, 4, 1]];

    // lipschitz_empirical <= kappa and reparameterize output preservation
    // on 1000 random nets.
    let mut worst_lip = f64::NEG_INFINITY;
    let mut worst_reparam = 0.0f64;
    for i in 0..1000 {
        let dims = shapes[i % shapes.len()];
        let m = if i % 2 == 0 { 1 } else { 2 };
        let net = Mlp::random(dims, m, None, rng.gen());
        worst_lip = worst_lip.max(net.lipschitz_empirical(100, rng.gen()) - net.kappa());
        let reparam = net.reparameterize();
        for _ in 0..5 {
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen::<f64>()).collect();
            worst_reparam =
                worst_reparam.max((net.forward(&x).unwrap() - reparam.forward(&x).unwrap()).abs());
        }
    }

    // Backward pass vs central finite differences of the batch loss.
    let mut worst_grad = 0.0f64;
    for i in 0..20 {
        let kind = [LossKind::Quadratic, LossKind::Huber { tau: 1.0 }, LossKind::Bce]
            [i % 3];
        let m = if i % 2 == 0 { 1 } else { 2 };
        let mut net = Mlp::random(&[3, 5, 1], m, None, rng.gen());
        let (xs, mut ys) = random_batch(&mut rng, 4, 3);
        if matches!(kind, LossKind::Bce) {
            for y in ys.iter_mut() {
                *y = if *y > 0.0 { 1.0 } else { -1.0 };
            }
        }
        let bundle = net.backward(&xs, &ys, kind).unwrap();
        let mut analytic = vec![0.0; net.param_count()];
        Mlp::for_each_grad(&bundle.param_grads, |j, g| analytic[j] = g);
        let h = 1e-6;
        fn nudge(net: &mut Mlp, j: usize, v: f64) {
            net.for_each_param_mut(|jj, p| {
                if jj == j {
                    *p += v;
                }
            });
        }
        for j in 0..net.param_count() {
            nudge(&mut net, j, h);
            let up = net.batch_loss(&xs, &ys, kind).unwrap();
            nudge(&mut net, j, -2.0 * h);
            let down = net.batch_loss(&xs, &ys, kind).unwrap();
            nudge(&mut net, j, h);
            let fd = (up - down) / (2.0 * h);
            let scale = analytic[j].abs().max(fd.abs()).max(1e-3);
            worst_grad = worst_grad.max((analytic[j] - fd).abs() / scale);
        }
    }

    // Finite-difference Hessian probes stay under the smooth-case bound.
    let mut worst_hess = f64::NEG_INFINITY;
    for _ in 0..50 {
        let net = Mlp::random(&[2, 4, 1], 2, None, rng.gen());
        let bound = net.hessian_bound().unwrap();
        let h = 1e-4;
        for _ in 0..10 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect();
            for d in 0..2 {
                let mut xp = x.clone();
                xp[d] += h;
                let mut xm = x.clone();
                xm[d] -= h;
                let probe = (net.forward(&xp).unwrap() - 2.0 * net.forward(&x).unwrap()
                    + net.forward(&xm).unwrap())
                    / (h * h);
                worst_hess = worst_hess.max(probe.abs() - bound);
            }
        }
    }

    report(
        "network bounds",
        worst_lip <= 1e-9 && worst_reparam <= 1e-9 && worst_grad < 1e-4 && worst_hess <= 1e-4,
        &format!(
            "max (lip - kappa) {worst_lip:.3e}, reparam error {worst_reparam:.3e}, \
             grad rel err {worst_grad:.3e}, Hessian probe excess {worst_hess:.3e}"
        ),
    );
}

/// Criterion 5: training-loop mechanics — inner budget respected, ascent on
/// smooth batches, exact ERM reduction at δ = 0, κ bounded every epoch.
#[test]
fn algorithm_mechanics() {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(50);

    // Budget: adversarial covariates stay inside the δ/2 ball.
    let mut worst_dist = f64::NEG_INFINITY;
    let radius = 0.1; // δ = 0.2, covariate share 1/2
    for _ in 0..50 {
        let net = Mlp::random(&[4, 8, 1], 2, None, rng.gen());
        let (xs, ys) = random_batch(&mut rng, 8, 4);
        for steps in [1, 5, 10] {
            let adv =
                frank_wolfe_covariates(&net, LossKind::Quadratic, &xs, &ys, radius, steps, false)
                    .unwrap();
            for (a, x) in adv.iter().zip(&xs) {
                let dist = a
                    .iter()
                    .zip(x)
                    .map(|(ai, xi)| (ai - xi).abs())
                    .fold(0.0f64, f64::max);
                worst_dist = worst_dist.max(dist - radius);
            }
        }
    }

    // Ascent on 500 random smooth batches.
    let mut ascent_failures = 0;
    for _ in 0..500 {
        let net = Mlp::random(&[3, 6, 1], 2, None, rng.gen())
            .enforce_constraint(5.0)
            .unwrap();
        let (xs, ys) = random_batch(&mut rng, 8, 3);
        let before = net.batch_loss(&xs, &ys, LossKind::Quadratic).unwrap();
        let adv = frank_wolfe_covariates(&net, LossKind::Quadratic, &xs, &ys, 0.05, 8, false)
            .unwrap();
        let after = net.batch_loss(&adv, &ys, LossKind::Quadratic).unwrap();
        if after < before - 1e-9 {
            ascent_failures += 1;
        }
    }

    // δ = 0 reduces exactly to the plain mini-batch SGD trajectory.
    let (xs, ys) = random_batch(&mut rng, 24, 3);
    let config = TrainConfig {
        delta: 0.0,
        epochs: 3,
        batch_size: 8,
        learning_rate: 0.05,
        optimizer: Optimizer::Sgd,
        seed: 9,
        k_lip: 100.0,
        ..TrainConfig::default()
    };
    let net0 = Mlp::random(&[3, 6, 1], 2, None, 1);
    let trained = fit(net0.clone(), &xs, &ys, LossKind::Quadratic, &config).unwrap();
    let mut reference = net0.enforce_constraint(config.k_lip).unwrap();
    let mut sgd_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..config.epochs {
        indices.shuffle(&mut sgd_rng);
        for chunk in indices.chunks(config.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let bundle = reference.backward(&bx, &by, LossKind::Quadratic).unwrap();
            let mut flat = vec![0.0; reference.param_count()];
            Mlp::for_each_grad(&bundle.param_grads, |i, g| flat[i] = g);
            reference.for_each_param_mut(|i, p| *p -= config.learning_rate * flat[i]);
            reference = reference.enforce_constraint(config.k_lip).unwrap();
        }
    }
    let erm_exact = trained.net == reference;

    // κ stays under the bound after every epoch of a robust fit.
    let (xs, ys) = random_batch(&mut rng, 64, 4);
    let robust = fit(
        Mlp::random(&[4, 8, 4, 1], 2, None, 3),
        &xs,
        &ys,
        LossKind::Quadratic,
        &TrainConfig {
            delta: 0.1,
            epochs: 5,
            batch_size: 16,
            k_lip: 10.0,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let kappa_ok = robust.logs.iter().all(|l| l.kappa <= 10.0 + 1e-9);
    let worst_kappa = robust.logs.iter().map(|l| l.kappa).fold(0.0f64, f64::max);

    report(
        "training mechanics",
        worst_dist <= 1e-12 && ascent_failures == 0 && erm_exact && kappa_ok,
        &format!(
            "budget excess {worst_dist:.3e}, ascent failures {ascent_failures}/500, \
             exact ERM trajectory: {erm_exact}, max per-epoch kappa {worst_kappa:.3} (bound 10)"
        ),
    );
}

/// Criterion 6: regression trend — across 20 paired trials at shift 0.1,
/// the robust model beats ERM on the perturbed test set in >= 70% of
/// trials with positive mean improvement, within the runtime budgets.
#[test]
fn regression_trend_reproduction() {
    let config = ExperimentConfig::default();
    assert_eq!(config.trials, 20);

    // Single-fit budget on the benchmark scale.
    let data = wdro_core::data::gen_synthetic(
        config.n_train,
        &ShiftSpec {
            shift_prob: 0.1,
            kind: ShiftKind::SyntheticRegression,
            seed: 7,
        },
        Task::Regression,
    );
    let fit_start = Instant::now();
    fit(
        Mlp::random(&config.dims(), config.m, config.truncation, 8),
        &data.x,
        &data.y,
        LossKind::Quadratic,
        &TrainConfig {
            delta: 0.0,
            ..config.train_base()
        },
    )
    .unwrap();
    let fit_elapsed = fit_start.elapsed();

    let start = Instant::now();
    let trials = run_trials(&config, LossKind::Quadratic, 0.1, 0, 0).unwrap();
    let elapsed = start.elapsed();

    let mut wins = 0;
    let mut improvements = Vec::new();
    for trial in &trials {
        let (_, erm, wdro) = trial
            .scores
            .iter()
            .find(|(n, _, _)| n == "perturbed")
            .unwrap();
        if wdro < erm {
            wins += 1;
        }
        improvements.push(100.0 * (erm - wdro) / erm);
    }
    let (mean_imp, sd_imp) = mean_sd(&improvements);

    report(
        "regression trend (perturbed test set)",
        wins >= 14
            && mean_imp > 0.0
            && elapsed < Duration::from_secs(30 * 60)
            && fit_elapsed < Duration::from_secs(60),
        &format!(
            "WDRO wins {wins}/20 (need >= 14), improvement {mean_imp:.2}% ± {sd_imp:.2}%, \
             20 trials in {elapsed:.1?} (budget 30 min), single fit {fit_elapsed:.1?} (budget 60 s)"
        ),
    );
}

/// Criterion 7: classification trend — on the imbalanced test set the
/// robust model's accuracy exceeds ERM's by >= 5 points over 20 trials.
#[test]
fn classification_imbalanced_trend() {
    let config = ExperimentConfig::classification();
    assert_eq!(config.trials, 20);
    let trials = run_trials(&config, LossKind::Bce, 0.0, 0, 0).unwrap();
    let gaps: Vec<f64> = trials
        .iter()
        .map(|t| {
            let (_, erm, wdro) = t
                .scores
                .iter()
                .find(|(n, _, _)| n == "imbalanced")
                .unwrap();
            wdro - erm
        })
        .collect();
    let (mean_gap, sd_gap) = mean_sd(&gaps);
    report(
        "classification trend (imbalanced test set)",
        mean_gap >= 5.0,
        &format!("accuracy gap {mean_gap:.2} ± {sd_gap:.2} points over 20 trials (need >= 5)"),
    );
}

/// Criterion 8: image pipeline — bit-exact IDX round-trip on synthetic
/// fixtures, perturbation pixel invariants on 1000 samples, and a smoke
/// training run above 80% clean accuracy on the 3000-sample subset.
#[test]
fn mnist_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("fixture-images.idx");
    let labels = dir.path().join("fixture-labels.idx");

    // Round-trip fixture with exactly representable k/255 pixel values.
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let n = 64;
    let fixture = Dataset {
        x: (0..n)
            .map(|_| {
                (0..MNIST_SIDE * MNIST_SIDE)
                    .map(|_| rng.gen_range(0u16..=255) as f64 / 255.0)
                    .collect()
            })
            .collect(),
        y: (0..n).map(|i| (i % 10) as f64).collect(),
        shifted: vec![false; n],
        task: Task::Multiclass,
    };
    write_idx(&fixture, &images, &labels).unwrap();
    let loaded = load_idx(&images, &labels, n, 0).unwrap();
    // Subsampling permutes; compare as sorted multisets of exact samples.
    let key = |x: &Vec<f64>, y: f64| {
        let mut k: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        k.push(y.to_bits());
        k
    };
    let mut original: Vec<Vec<u64>> = fixture
        .x
        .iter()
        .zip(&fixture.y)
        .map(|(x, &y)| key(x, y))
        .collect();
    let mut reread: Vec<Vec<u64>> = loaded
        .x
        .iter()
        .zip(&loaded.y)
        .map(|(x, &y)| key(x, y))
        .collect();
    original.sort();
    reread.sort();
    let roundtrip_exact = original == reread;

    // Perturbation invariants on 1000 samples per kind.
    let base = synthetic_mnist(1000, 81);
    let mut invariants_ok = true;
    for kind in [
        ShiftKind::MnistOcclusion,
        ShiftKind::MnistCorner,
        ShiftKind::MnistNoise,
    ] {
        let out = perturb_mnist(
            &base,
            &ShiftSpec {
                shift_prob: 1.0,
                kind,
                seed: 82,
            },
        )
        .unwrap();
        for i in 0..out.len() {
            invariants_ok &= out.shifted[i];
            invariants_ok &= out.y[i] == confusion_label(base.y[i] as u8) as f64;
            let img = &out.x[i];
            match kind {
                ShiftKind::MnistOcclusion => {
                    // Exactly one 12x12 all-zero block; the noisy base
                    // image has no zero pixels of its own.
                    let zeros: Vec<usize> =
                        (0..img.len()).filter(|&p| img[p] == 0.0).collect();
                    invariants_ok &= zeros.len() == OCCLUSION_SIDE * OCCLUSION_SIDE;
                    let rows: Vec<usize> = zeros.iter().map(|p| p / MNIST_SIDE).collect();
                    let cols: Vec<usize> = zeros.iter().map(|p| p % MNIST_SIDE).collect();
                    let span = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap() + 1;
                    invariants_ok &=
                        span(&rows) == OCCLUSION_SIDE && span(&cols) == OCCLUSION_SIDE;
                }
                ShiftKind::MnistCorner => {
                    for r in 0..MNIST_SIDE {
                        for c in 0..MNIST_SIDE {
                            let p = r * MNIST_SIDE + c;
                            if r < CORNER_SIDE && c < CORNER_SIDE {
                                invariants_ok &= img[p] == 1.0;
                            } else {
                                invariants_ok &= img[p] == base.x[i][p];
                            }
                        }
                    }
                }
                ShiftKind::MnistNoise => {
                    invariants_ok &= img.iter().all(|&p| (0.0..=1.0).contains(&p));
                }
                _ => unreachable!(),
            }
        }
    }

    // Smoke run: MLP on the synthetic stand-in corpus.
    let corpus = synthetic_mnist(3600, 83);
    let (train_x, test_x) = corpus.x.split_at(3000);
    let (train_y, test_y) = corpus.y.split_at(3000);
    let outcome = fit(
        Mlp::random(&[MNIST_SIDE * MNIST_SIDE, 32, 10], 1, None, 84),
        train_x,
        train_y,
        LossKind::Bce,
        &TrainConfig {
            epochs: 8,
            batch_size: 64,
            k_lip: 1e6,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let test = Dataset {
        x: test_x.to_vec(),
        y: test_y.to_vec(),
        shifted: vec![false; test_x.len()],
        task: Task::Multiclass,
    };
    let accuracy = wdro_bench::evaluate(&outcome.net, &test, wdro_bench::Metric::Accuracy).unwrap();

    report(
        "image pipeline",
        roundtrip_exact && invariants_ok && accuracy > 80.0,
        &format!(
            "IDX round-trip exact: {roundtrip_exact}, perturbation invariants: {invariants_ok}, \
             smoke accuracy {accuracy:.1}% (need > 80%)"
        ),
    );
}

/// Criterion 9: the adversarial evaluation loss of a fixed trained net is
/// nondecreasing in the radius.
#[test]
fn monotone_conservatism() {
    let data = wdro_core::data::gen_synthetic(
        300,
        &ShiftSpec {
            shift_prob: 0.0,
            kind: ShiftKind::SyntheticRegression,
            seed: 90,
        },
        Task::Regression,
    );
    let outcome = fit(
        Mlp::random(&[10, 16, 8, 1], 1, None, 91),
        &data.x,
        &data.y,
        LossKind::Quadratic,
        &TrainConfig {
            epochs: 40,
            k_lip: 100.0,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let deltas = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25];
    let losses: Vec<f64> = deltas
        .iter()
        .map(|&d| adversarial_loss(&outcome.net, LossKind::Quadratic, &data.x, &data.y, d, 10).unwrap())
        .collect();
    let monotone = losses.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    report(
        "monotone conservatism",
        monotone,
        &format!("adversarial losses over deltas {deltas:?}: {losses:.4?}"),
    );
}
