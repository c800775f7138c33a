//! Reference computations that do not share code paths with the solvers.
//!
//! Everything here is slow and exact (or iterates to machine precision) and
//! exists to produce expected values for the fast routines.

use nalgebra::{DMatrix, DVector};

/// Exact optimum of the transportation LP `min <P,C>` over
/// `{P ≥ 0, P1 = row, Pᵀ1 = col}` by enumerating every basis of
/// `n + m - 1` cells. Returns `(optimal cost, optimal plan)`.
///
/// Exponential in the problem size; intended for instances up to 4×4.
pub fn transport_lp(cost: &DMatrix<f64>, row: &[f64], col: &[f64]) -> (f64, DMatrix<f64>) {
    let (n, m) = cost.shape();
    assert_eq!(row.len(), n);
    assert_eq!(col.len(), m);
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let basis_size = n + m - 1;
    // constraints: n row sums and the first m - 1 column sums (the last is implied)
    let rhs = DVector::from_iterator(basis_size, row.iter().copied().chain(col.iter().copied().take(m - 1)));

    let mut best = (f64::INFINITY, DMatrix::zeros(n, m));
    let mut chosen = Vec::with_capacity(basis_size);
    enumerate_subsets(cells.len(), basis_size, 0, &mut chosen, &mut |subset| {
        let a = DMatrix::from_fn(basis_size, basis_size, |r, k| {
            let (i, j) = cells[subset[k]];
            let hit = if r < n { i == r } else { j == r - n };
            if hit {
                1.0
            } else {
                0.0
            }
        });
        let Some(x) = a.lu().solve(&rhs) else {
            return;
        };
        if x.iter().any(|v| !v.is_finite() || *v < -1e-12) {
            return;
        }
        let mut plan = DMatrix::zeros(n, m);
        for (k, &c) in subset.iter().enumerate() {
            let (i, j) = cells[c];
            plan[(i, j)] = x[k].max(0.0);
        }
        // the dropped column constraint must hold as well
        let last: f64 = plan.column(m - 1).sum();
        if (last - col[m - 1]).abs() > 1e-9 {
            return;
        }
        let value = plan.component_mul(cost).sum();
        if value < best.0 {
            best = (value, plan);
        }
    });
    best
}

fn enumerate_subsets(
    total: usize,
    size: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if chosen.len() == size {
        visit(chosen);
        return;
    }
    let remaining = size - chosen.len();
    for k in start..=total - remaining {
        chosen.push(k);
        enumerate_subsets(total, size, k + 1, chosen, visit);
        chosen.pop();
    }
}

/// Minimum assignment cost over all permutations of a square cost matrix.
/// For uniform marginals `1/n` the transportation LP optimum equals this
/// value divided by `n` (Birkhoff–von Neumann).
pub fn assignment_bruteforce(cost: &DMatrix<f64>) -> f64 {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols());
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let v: f64 = p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        best = best.min(v);
    });
    best
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer of `Σ β_i · ½ (a - M_i⁻¹ f_i)ᵀ M_i (a - M_i⁻¹ f_i)` by plain
/// gradient descent. The gradient `Σ β_i (M_i a - f_i)` needs no inverse;
/// the step is `1 / L` with `L` a Gershgorin bound on `Σ β_i M_i`.
pub fn minimize_weighted_quadratic(terms: &[(DMatrix<f64>, DVector<f64>, f64)]) -> DVector<f64> {
    let dim = terms[0].1.len();
    let mut hessian = DMatrix::zeros(dim, dim);
    let mut linear = DVector::zeros(dim);
    for (m, f, beta) in terms {
        hessian += m * *beta;
        linear += f * *beta;
    }
    let lipschitz = (0..dim)
        .map(|r| hessian.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if lipschitz == 0.0 {
        return DVector::zeros(dim);
    }
    let step = 1.0 / lipschitz;
    let mut a = DVector::zeros(dim);
    for _ in 0..5_000_000 {
        let grad = &hessian * &a - &linear;
        if grad.amax() < 1e-14 {
            break;
        }
        a -= grad * step;
    }
    a
}

/// Central-difference Jacobian of `map` at `q`.
pub fn finite_difference_jacobian(
    map: impl Fn(&DVector<f64>) -> DVector<f64>,
    q: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let out_dim = map(q).len();
    let mut jac = DMatrix::zeros(out_dim, q.len());
    for k in 0..q.len() {
        let mut plus = q.clone();
        let mut minus = q.clone();
        plus[k] += step;
        minus[k] -= step;
        let diff = (map(&plus) - map(&minus)) / (2.0 * step);
        jac.set_column(k, &diff);
    }
    jac
}
