//! Exact worst-case risk on finite discrete instances.
//!
//! The local worst-case risk `sup { E_Q[ℓ] : W_k(Q, P_n) ≤ δ }` is computed
//! two ways on a finite candidate grid: through the scalar dual
//! `inf_γ { γδ^k + E[φ_γ,k] }` and, on small instances, through the primal
//! transportation program solved by an independent simplex. Agreement of
//! the two routes is the numerical duality check; the gap against the
//! empirical risk feeds the regularization checks.

use crate::error::{Error, Result};
use crate::loss::{composed_gradient, LossKind};
use crate::nn::Mlp;
use crate::simplex;

/// Finite-support worst-case instance: atoms with uniform mass, a loss
/// table over a candidate grid, Wasserstein order `k` and radius `δ`.
/// The ground metric is the `∞`-norm on the concatenated `(x, y)` point.
pub struct WorstCaseProblem {
    pub atoms: Vec<Vec<f64>>,
    pub grid: Vec<Vec<f64>>,
    pub order: u32,
    pub delta: f64,
    loss_grid: Vec<f64>,
    loss_atoms: Vec<f64>,
    /// `cost[i][j] = ‖g_j - z_i‖_∞^k`.
    cost: Vec<Vec<f64>>,
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

impl WorstCaseProblem {
    /// Builds an instance from an explicit grid and a loss evaluator.
    /// Atoms missing from the grid are appended so `Q = P` stays feasible.
    pub fn new(
        atoms: Vec<Vec<f64>>,
        mut grid: Vec<Vec<f64>>,
        order: u32,
        delta: f64,
        loss: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        assert!(!atoms.is_empty(), "need at least one atom");
        assert!(delta >= 0.0 && order >= 1);
        for atom in &atoms {
            if !grid.iter().any(|g| g == atom) {
                grid.push(atom.clone());
            }
        }
        let loss_grid: Vec<f64> = grid.iter().map(|g| loss(g)).collect();
        if let Some(j) = loss_grid.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "loss not finite at grid point {j}"
            )));
        }
        let loss_atoms = atoms.iter().map(|z| loss(z)).collect();
        let cost = atoms
            .iter()
            .map(|z| {
                grid.iter()
                    .map(|g| sup_dist(g, z).powi(order as i32))
                    .collect()
            })
            .collect();
        Ok(WorstCaseProblem {
            atoms,
            grid,
            order,
            delta,
            loss_grid,
            loss_atoms,
            cost,
        })
    }

    /// Instance whose loss is `ℓ(f(x) - y)` for a network and loss kind,
    /// over a tensor grid spanned by the atoms.
    pub fn from_net(
        net: &Mlp,
        kind: LossKind,
        atoms: Vec<Vec<f64>>,
        order: u32,
        delta: f64,
        spec: &GridSpec,
    ) -> Result<Self> {
        let grid = build_tensor_grid(&atoms, spec);
        let d = atoms[0].len() - 1;
        Self::new(atoms, grid, order, delta, |z| {
            kind.value(net.forward(&z[..d]).expect("grid dims match net") - z[d])
        })
    }

    pub fn empirical_risk(&self) -> f64 {
        self.loss_atoms.iter().sum::<f64>() / self.loss_atoms.len() as f64
    }

    /// `φ_γ,k(z) = max over the grid of ℓ(z') - γ‖z' - z‖_∞^k`, with the
    /// argmax grid index.
    pub fn phi_gamma(&self, z: &[f64], gamma: f64) -> (f64, usize) {
        assert!(gamma >= 0.0);
        let k = self.order as i32;
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (j, (g, &l)) in self.grid.iter().zip(&self.loss_grid).enumerate() {
            let v = l - gamma * sup_dist(g, z).powi(k);
            if v > best {
                best = v;
                arg = j;
            }
        }
        (best, arg)
    }

    /// Mean of `φ_γ,k` over the atoms, using the precomputed cost table.
    fn mean_phi(&self, gamma: f64) -> f64 {
        let mut total = 0.0;
        for costs in &self.cost {
            let mut best = f64::NEG_INFINITY;
            for (&l, &c) in self.loss_grid.iter().zip(costs) {
                let v = l - gamma * c;
                if v > best {
                    best = v;
                }
            }
            total += best;
        }
        total / self.cost.len() as f64
    }

    fn dual_objective(&self, gamma: f64) -> f64 {
        gamma * self.delta.powi(self.order as i32) + self.mean_phi(gamma)
    }

    /// Minimizes the dual `D(γ) = γδ^k + E[φ_γ,k]` by golden-section
    /// search; returns `(value, γ*)`. `δ = 0` short-circuits to the
    /// empirical risk.
    pub fn dual_worst_case(&self) -> Result<(f64, f64)> {
        if self.delta == 0.0 {
            return Ok((self.empirical_risk(), f64::INFINITY));
        }
        let spread = self.loss_grid.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - self.loss_grid.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let gamma_max = spread / self.delta.powi(self.order as i32) + 1.0;
        let (mut lo, mut hi) = (0.0f64, gamma_max);
        let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let mut a = hi - inv_phi * (hi - lo);
        let mut b = lo + inv_phi * (hi - lo);
        let mut fa = self.dual_objective(a);
        let mut fb = self.dual_objective(b);
        for _ in 0..200 {
            if hi - lo < 1e-9 {
                break;
            }
            if fa <= fb {
                hi = b;
                b = a;
                fb = fa;
                a = hi - inv_phi * (hi - lo);
                fa = self.dual_objective(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + inv_phi * (hi - lo);
                fb = self.dual_objective(b);
            }
        }
        let gamma_star = 0.5 * (lo + hi);
        let value = self.dual_objective(gamma_star).min(fa).min(fb);
        // The dual is convex: the bracketed minimum must not sit above
        // either endpoint by more than jitter.
        let drop = value - self.dual_objective(0.0).min(self.dual_objective(gamma_max));
        if drop > 1e-7 {
            return Err(Error::DualInconsistency { drop });
        }
        Ok((value, gamma_star))
    }

    /// Exact primal value of the transportation program
    /// `max Σ π_ij ℓ(g_j)` subject to the mass and moment constraints,
    /// solved by simplex. Guarded to small instances.
    pub fn primal_bruteforce(&self) -> Result<f64> {
        let n = self.atoms.len();
        let g = self.grid.len();
        if n > 3 || g > 200 {
            return Err(Error::BruteForceGuard { atoms: n, grid: g });
        }
        if self.delta == 0.0 {
            return Ok(self.empirical_risk());
        }
        // Variables: π_ij (i-major), then one slack for the moment budget.
        let vars = n * g + 1;
        let mut c = vec![0.0; vars];
        for i in 0..n {
            for j in 0..g {
                c[i * g + j] = self.loss_grid[j];
            }
        }
        let mut rows = Vec::with_capacity(n + 1);
        let mut rhs = Vec::with_capacity(n + 1);
        for i in 0..n {
            let mut row = vec![0.0; vars];
            for j in 0..g {
                row[i * g + j] = 1.0;
            }
            rows.push(row);
            rhs.push(1.0 / n as f64);
        }
        let mut budget = vec![0.0; vars];
        for i in 0..n {
            for j in 0..g {
                budget[i * g + j] = self.cost[i][j];
            }
        }
        budget[vars - 1] = 1.0;
        rows.push(budget);
        rhs.push(self.delta.powi(self.order as i32));
        simplex::solve_max(&c, &rows, &rhs).ok_or_else(|| {
            Error::InvalidParameter("transportation program unexpectedly unsolvable".into())
        })
    }
}

/// Tensor-grid construction: bounding box of the atoms inflated by
/// `margin` per coordinate, spacing at most `spacing`, total point count
/// capped at `max_points` by coarsening uniformly.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub margin: f64,
    pub spacing: f64,
    pub max_points: usize,
}

impl GridSpec {
    /// Spacing `δ/10`, margin `2δ` as the default resolution policy.
    pub fn for_radius(delta: f64, max_points: usize) -> Self {
        GridSpec {
            margin: 2.0 * delta,
            spacing: delta / 10.0,
            max_points,
        }
    }
}

pub fn build_tensor_grid(atoms: &[Vec<f64>], spec: &GridSpec) -> Vec<Vec<f64>> {
    let dim = atoms[0].len();
    let mut lows = vec![f64::INFINITY; dim];
    let mut highs = vec![f64::NEG_INFINITY; dim];
    for atom in atoms {
        for (d, &v) in atom.iter().enumerate() {
            lows[d] = lows[d].min(v - spec.margin);
            highs[d] = highs[d].max(v + spec.margin);
        }
    }
    let mut counts: Vec<usize> = (0..dim)
        .map(|d| ((highs[d] - lows[d]) / spec.spacing).ceil() as usize + 1)
        .collect();
    // Coarsen uniformly until the tensor product fits the cap.
    loop {
        let total: usize = counts.iter().product();
        if total <= spec.max_points {
            break;
        }
        for c in counts.iter_mut() {
            if *c > 2 {
                *c = (*c + 1) / 2;
            }
        }
        if counts.iter().all(|&c| c <= 2) {
            break;
        }
    }
    let mut grid = Vec::with_capacity(counts.iter().product());
    let mut idx = vec![0usize; dim];
    loop {
        let point: Vec<f64> = (0..dim)
            .map(|d| {
                if counts[d] == 1 {
                    lows[d]
                } else {
                    lows[d] + (highs[d] - lows[d]) * idx[d] as f64 / (counts[d] - 1) as f64
                }
            })
            .collect();
        grid.push(point);
        let mut d = 0;
        loop {
            if d == dim {
                return grid;
            }
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `dual_worst_case - empirical_risk`: the price of the ambiguity ball.
pub fn regularizer_gap(problem: &WorstCaseProblem) -> Result<f64> {
    let (wc, _) = problem.dual_worst_case()?;
    Ok(wc - problem.empirical_risk())
}

/// `E[‖∇ℓ(Z;f)‖₁^k*]^(1/k*)` over the atoms, with `k* = k/(k-1)`.
/// Multiplied by `δ` this is the first-order prediction of the gap.
pub fn gradient_norm_regularizer(
    net: &Mlp,
    kind: LossKind,
    atoms: &[Vec<f64>],
    order: u32,
) -> Result<f64> {
    if order <= 1 {
        return Err(Error::InvalidParameter(
            "gradient-norm regularizer needs order k > 1".into(),
        ));
    }
    let k = order as f64;
    let k_star = k / (k - 1.0);
    let d = atoms[0].len() - 1;
    let mut total = 0.0;
    for z in atoms {
        let grad = composed_gradient(net, kind, &z[..d], z[d])?;
        let norm1: f64 = grad.iter().map(|v| v.abs()).sum();
        total += norm1.powf(k_star);
    }
    Ok((total / atoms.len() as f64).powf(1.0 / k_star))
}
