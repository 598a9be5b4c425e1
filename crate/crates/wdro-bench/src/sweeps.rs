//! Randomized verification sweeps: each sweep stresses one lemma of the
//! duality/regularization theory against the exact oracle and reports
//! the worst observed violation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wdro_core::loss::LossKind;
use wdro_core::nn::Mlp;
use wdro_core::oracle::{
    gradient_norm_regularizer, regularizer_gap, GridSpec, WorstCaseProblem,
};

use crate::LemmaCheck;

pub const DUALITY_TOL: f64 = 1e-6;
pub const GAP_BOUND_TOL: f64 = 1e-9;
pub const EXPANSION_MIN_ORDER: f64 = 1.8;

fn line_grid(lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    (0..points)
        .map(|i| vec![lo + (hi - lo) * i as f64 / (points - 1) as f64])
        .collect()
}

/// Strong duality (primal transportation LP vs dual scalar search) on
/// random guarded instances: at most 3 atoms, piecewise-linear losses,
/// `k ∈ {1,2}`, `δ ∈ {0.05, 0.1, 0.3}`.
pub fn duality_sweep(seed: u64, count: usize) -> LemmaCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..count {
        let n = rng.gen_range(1..=3);
        let atoms: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-0.4..0.4)]).collect();
        let pieces: Vec<(f64, f64)> = (0..3)
            .map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5)))
            .collect();
        let loss = |z: &[f64]| {
            pieces
                .iter()
                .map(|(a, b)| a * z[0] + b)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let k = if trial % 2 == 0 { 1 } else { 2 };
        let delta = [0.05, 0.1, 0.3][trial % 3];
        let problem =
            WorstCaseProblem::new(atoms, line_grid(-1.0, 1.0, 180), k, delta, loss).unwrap();
        let (dual, _) = problem.dual_worst_case().unwrap();
        let primal = problem.primal_bruteforce().unwrap();
        worst = worst.max((dual - primal).abs());
    }
    LemmaCheck::new("strong duality", count, worst, DUALITY_TOL)
}

fn random_constrained_net(rng: &mut ChaCha8Rng, kappa_bound: f64) -> Mlp {
    let m = if rng.gen::<bool>() { 1 } else { 2 };
    Mlp::random(&[2, 4, 1], m, None, rng.gen())
        .enforce_constraint(kappa_bound)
        .unwrap()
}

fn random_atoms(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>(), rng.gen_range(-1.0..1.0)])
        .collect()
}

/// Lipschitz regularization bound: for `k = 1` the gap
/// between worst-case and empirical risk lies in
/// `[0, δ·‖ℓ‖_Lip·(κ+1)]`. The grid under-approximates the sup, so the
/// upper bound check is conservative and the lower one exact.
pub fn lipschitz_gap_sweep(seed: u64, count: usize) -> LemmaCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..count {
        let net = random_constrained_net(&mut rng, 10.0);
        let kind = if trial % 2 == 0 {
            LossKind::Huber { tau: 1.0 }
        } else {
            LossKind::Check { rho: 0.5 }
        };
        let delta = [0.05, 0.1, 0.2][trial % 3];
        let atoms = random_atoms(&mut rng, 2);
        let spec = GridSpec {
            margin: 1.5 * delta,
            spacing: 0.04,
            max_points: 8000,
        };
        let problem = WorstCaseProblem::from_net(&net, kind, atoms, 1, delta, &spec).unwrap();
        let gap = regularizer_gap(&problem).unwrap();
        let lip = kind.lipschitz_constant().unwrap();
        let bound = delta * lip * (net.kappa() + 1.0);
        worst = worst.max(-gap).max(gap - bound);
    }
    LemmaCheck::new(
        "Lipschitz regularization bound",
        count,
        worst,
        GAP_BOUND_TOL,
    )
}

/// At radius zero the worst-case and empirical risks coincide exactly.
pub fn zero_radius_sweep(seed: u64, count: usize) -> LemmaCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..count {
        let net = random_constrained_net(&mut rng, 10.0);
        let kind = if trial % 2 == 0 {
            LossKind::Quadratic
        } else {
            LossKind::Huber { tau: 1.0 }
        };
        let atoms = random_atoms(&mut rng, 3);
        let spec = GridSpec {
            margin: 0.2,
            spacing: 0.05,
            max_points: 5000,
        };
        let problem = WorstCaseProblem::from_net(&net, kind, atoms, 1, 0.0, &spec).unwrap();
        worst = worst.max(regularizer_gap(&problem).unwrap().abs());
    }
    LemmaCheck::new("zero radius", count, worst, 0.0)
}

pub const EXPANSION_DELTAS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

/// Fixed smooth instance for the first-order expansion sweep: an `m = 2`
/// network with a quadratic loss, `k = 2`, atoms packed tightly so the
/// `δ`-proportional tensor grid stays small.
fn expansion_instance() -> (Mlp, LossKind, Vec<Vec<f64>>) {
    let net = Mlp::random(&[1, 4, 1], 2, None, 11)
        .enforce_constraint(3.0)
        .unwrap();
    let xs = [0.45, 0.5, 0.55];
    let atoms = xs
        .iter()
        .map(|&x| vec![x, net.forward(&[x]).unwrap() + 0.15 * (x - 0.5).signum().max(0.5)])
        .collect();
    (net, LossKind::Quadratic, atoms)
}

/// Residuals `|gap(δ) − δ·R(θ)|` of the first-order expansion across the
/// halving schedule. Grid spacing shrinks proportionally to `δ` so the
/// discretization error stays second order.
pub fn expansion_residuals() -> Vec<f64> {
    let (net, kind, atoms) = expansion_instance();
    let reg = gradient_norm_regularizer(&net, kind, &atoms, 2).unwrap();
    EXPANSION_DELTAS
        .iter()
        .map(|&delta| {
            let spec = GridSpec {
                margin: 2.0 * delta,
                spacing: delta / 10.0,
                max_points: 400_000,
            };
            let problem =
                WorstCaseProblem::from_net(&net, kind, atoms.clone(), 2, delta, &spec).unwrap();
            let gap = regularizer_gap(&problem).unwrap();
            (gap - delta * reg).abs()
        })
        .collect()
}

/// Observed decay order of the expansion residual, measured as the
/// log-log slope across the halving schedule.
pub fn expansion_order() -> f64 {
    let residuals = expansion_residuals();
    let first = residuals.first().unwrap().max(1e-300);
    let last = residuals.last().unwrap().max(1e-300);
    (first / last).log2() / (residuals.len() - 1) as f64
}

/// First-order expansion: the residual after subtracting the
/// gradient-norm regularizer decays at second order in `δ`.
pub fn expansion_order_sweep(_seed: u64) -> LemmaCheck {
    let order = expansion_order();
    LemmaCheck::new(
        "first-order expansion",
        EXPANSION_DELTAS.len(),
        (EXPANSION_MIN_ORDER - order).max(0.0),
        0.0,
    )
}
