//! Minimal dense two-phase simplex for the tiny transportation programs
//! solved by the brute-force worst-case oracle. Bland's rule throughout,
//! so the method terminates on degenerate instances.

const EPS: f64 = 1e-10;

/// Maximizes `c·x` subject to `A x = b`, `x >= 0`, with `b >= 0`.
/// Returns `None` when the program is infeasible or unbounded.
pub(crate) fn solve_max(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    debug_assert!(b.iter().all(|&v| v >= 0.0));
    debug_assert!(a.iter().all(|row| row.len() == n));

    // Tableau columns: n structural vars, m artificials, rhs.
    let cols = n + m + 1;
    let mut tab: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; cols];
            row[..n].copy_from_slice(&a[i]);
            row[n + i] = 1.0;
            row[cols - 1] = b[i];
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: minimize the sum of artificials. Reduced cost row for the
    // starting basis is the negated column sum of the constraint rows.
    let mut obj = vec![0.0; cols];
    for row in &tab {
        for (o, v) in obj.iter_mut().zip(row) {
            *o -= v;
        }
    }
    for j in n..n + m {
        obj[j] = 0.0;
    }
    iterate(&mut tab, &mut obj, &mut basis, |j| j < n)?;
    if -obj[cols - 1] > 1e-7 {
        return None; // infeasible
    }

    // Phase 2: minimize -c over the structural variables; artificials are
    // barred from entering.
    let mut obj = vec![0.0; cols];
    for j in 0..n {
        obj[j] = -c[j];
    }
    // Price out the current basis.
    for (i, &bv) in basis.iter().enumerate() {
        if obj[bv].abs() > 0.0 {
            let coeff = obj[bv];
            for j in 0..cols {
                obj[j] -= coeff * tab[i][j];
            }
        }
    }
    iterate(&mut tab, &mut obj, &mut basis, |j| j < n)?;
    Some(obj[cols - 1])
}

/// Runs simplex pivots until no entering column remains. `allowed`
/// restricts which columns may enter the basis.
fn iterate(
    tab: &mut [Vec<f64>],
    obj: &mut [f64],
    basis: &mut [usize],
    allowed: impl Fn(usize) -> bool,
) -> Option<()> {
    let cols = obj.len();
    let rhs = cols - 1;
    loop {
        // Bland: smallest index with negative reduced cost.
        let entering = (0..rhs).find(|&j| allowed(j) && obj[j] < -EPS);
        let Some(e) = entering else {
            return Some(());
        };
        // Ratio test, Bland tie-break on basis index.
        let mut pivot: Option<(usize, f64)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[e] > EPS {
                let ratio = row[rhs] / row[e];
                let better = match pivot {
                    None => true,
                    Some((pi, pr)) => {
                        ratio < pr - EPS || (ratio < pr + EPS && basis[i] < basis[pi])
                    }
                };
                if better {
                    pivot = Some((i, ratio));
                }
            }
        }
        let (pi, _) = pivot?; // None: unbounded
        let scale = tab[pi][e];
        for v in tab[pi].iter_mut() {
            *v /= scale;
        }
        for i in 0..tab.len() {
            if i != pi && tab[i][e].abs() > EPS {
                let f = tab[i][e];
                let (pivot_row, row) = if i < pi {
                    let (lo, hi) = tab.split_at_mut(pi);
                    (&hi[0], &mut lo[i])
                } else {
                    let (lo, hi) = tab.split_at_mut(i);
                    (&lo[pi], &mut hi[0])
                };
                for (v, p) in row.iter_mut().zip(pivot_row) {
                    *v -= f * p;
                }
            }
        }
        if obj[e].abs() > EPS {
            let f = obj[e];
            for (v, p) in obj.iter_mut().zip(tab[pi].iter()) {
                *v -= f * p;
            }
        }
        basis[pi] = e;
    }
}
