//! Entropic-regularized optimal transport.
//!
//! Two solvers share one diagonal-scaling loop:
//!
//! * [`solve_balanced`] — Sinkhorn-Knopp for `min <P,C> - λ H(P)` subject to
//!   `P 1 = n`, `Pᵀ 1 = m`.
//! * [`solve_unbalanced`] — generalized scaling for
//!   `min <P,C> - λ H(P) + λ_KL (KL̃(P 1 ‖ n) + KL̃(Pᵀ 1 ‖ m))`, where each
//!   marginal ratio is raised to `λ_KL / (λ_KL + λ)` before it is applied.
//!
//! Both run either as plain multiplicative scaling on the Gibbs kernel
//! `exp(-C/λ)` or in the log domain, where cheap multiplicative updates are
//! periodically absorbed into log potentials and any step that would under-
//! or overflow is redone with log-sum-exp. The log domain is the default; the
//! plain scaler falls back to it when the kernel under- or overflows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonnegative, finite, not-identically-zero measure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassVector(Vec<f64>);

impl MassVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidMass("empty".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidMass(format!("entry {i} = {v}")));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidMass("all entries are zero".into()));
        }
        Ok(Self(values))
    }

    /// `len` entries of `total / len`.
    pub fn uniform(len: usize, total: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidMass("empty".into()));
        }
        Self::new(vec![total / len as f64; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * k).collect())
    }

    pub fn normalized(&self) -> Self {
        let t = self.total();
        Self(self.0.iter().map(|v| v / t).collect())
    }

    /// True when every entry is strictly positive.
    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|v| *v > 0.0)
    }
}

/// Finite `n × m` cost; rows index experts, columns index agents.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix(DMatrix<f64>);

impl CostMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidCost("empty matrix".into()));
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidCost(format!("non-finite entry {v}")));
        }
        Ok(Self(entries))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidCost("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportPlan {
    pub entries: DMatrix<f64>,
    /// Elementwise log of `entries`. Stays finite when an entry underflows
    /// to zero in `entries`, so strict positivity remains checkable.
    pub log_entries: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm deviation of the plan marginals from the targets.
    pub marginal_error: f64,
}

impl TransportPlan {
    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.entries.nrows(), self.entries.row_iter().map(|r| r.sum()))
    }

    pub fn col_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.entries.ncols(), self.entries.column_iter().map(|c| c.sum()))
    }

    /// Frobenius product `<P, C>`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        self.entries.component_mul(cost.as_matrix()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Entropy weight λ.
    pub lambda_entropy: f64,
    /// Marginal KL weight λ_KL (unbalanced only).
    pub lambda_kl: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Log-domain iterations.
    pub stabilized: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_entropy: 0.05,
            lambda_kl: 1.0,
            max_iterations: 1000,
            tolerance: 1e-6,
            stabilized: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_entropy > 0.0 && self.lambda_entropy.is_finite()) {
            return Err(Error::SolverConfig(format!(
                "lambda_entropy must be positive, got {}",
                self.lambda_entropy
            )));
        }
        if !(self.lambda_kl > 0.0 && self.lambda_kl.is_finite()) {
            return Err(Error::SolverConfig(format!(
                "lambda_kl must be positive, got {}",
                self.lambda_kl
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::SolverConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::SolverConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Exponent applied to each marginal ratio in the unbalanced update.
    pub fn kl_exponent(&self) -> f64 {
        self.lambda_kl / (self.lambda_kl + self.lambda_entropy)
    }
}

/// Log dual scalings `(log u, log v)`; the plan is `diag(u) K diag(v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scalings {
    pub log_u: DVector<f64>,
    pub log_v: DVector<f64>,
}

impl Scalings {
    /// `u = v = 1`.
    pub fn ones(n: usize, m: usize) -> Self {
        Self {
            log_u: DVector::zeros(n),
            log_v: DVector::zeros(m),
        }
    }
}

/// `H(P) = -Σ p (log p - 1)` with `0 log 0 = 0`.
pub fn entropy(plan: &DMatrix<f64>) -> f64 {
    -plan
        .iter()
        .map(|&p| if p > 0.0 { p * (p.ln() - 1.0) } else { 0.0 })
        .sum::<f64>()
}

/// Generalized KL divergence `wᵀ log(w ⊘ z) - 1ᵀw + 1ᵀz` between positive
/// vectors, with `0 log 0 = 0`.
pub fn generalized_kl(w: &[f64], z: &[f64]) -> Result<f64> {
    if w.len() != z.len() {
        return Err(Error::Dimension(format!(
            "KL arguments have lengths {} and {}",
            w.len(),
            z.len()
        )));
    }
    let mut acc = 0.0;
    for (i, (&wi, &zi)) in w.iter().zip(z).enumerate() {
        if wi > 0.0 {
            if zi <= 0.0 {
                return Err(Error::KlUndefined { index: i, value: wi });
            }
            acc += wi * (wi / zi).ln();
        }
        acc += zi - wi;
    }
    Ok(acc)
}

/// Objective of the unbalanced problem at `plan`.
pub fn unbalanced_objective(
    plan: &DMatrix<f64>,
    cost: &CostMatrix,
    row_prior: &MassVector,
    col_prior: &MassVector,
    cfg: &SolverConfig,
) -> Result<f64> {
    let rows: Vec<f64> = plan.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = plan.column_iter().map(|c| c.sum()).collect();
    Ok(
        plan.component_mul(cost.as_matrix()).sum() - cfg.lambda_entropy * entropy(plan)
            + cfg.lambda_kl
                * (generalized_kl(&rows, row_prior.as_slice())? + generalized_kl(&cols, col_prior.as_slice())?),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Marginals {
    Balanced,
    Unbalanced { exponent: f64 },
}

fn check_dims(cost: &CostMatrix, row: &MassVector, col: &MassVector) -> Result<()> {
    if cost.nrows() != row.len() || cost.ncols() != col.len() {
        return Err(Error::Dimension(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            cost.nrows(),
            cost.ncols(),
            row.len(),
            col.len()
        )));
    }
    Ok(())
}

/// Balanced entropic OT by Sinkhorn-Knopp. Zero-mass rows and columns are
/// held at zero throughout.
pub fn solve_balanced(
    cost: &CostMatrix,
    row_marginal: &MassVector,
    col_marginal: &MassVector,
    cfg: &SolverConfig,
) -> Result<TransportPlan> {
    cfg.validate()?;
    check_dims(cost, row_marginal, col_marginal)?;
    let (rt, ct) = (row_marginal.total(), col_marginal.total());
    if (rt - ct).abs() > cfg.tolerance * rt.max(1.0) {
        return Err(Error::MassMismatch { row: rt, col: ct });
    }
    let init = Scalings::ones(cost.nrows(), cost.ncols());
    scale(cost, row_marginal, col_marginal, cfg, Marginals::Balanced, &init)
}

/// Unbalanced entropic OT by generalized scaling from `u = v = 1`.
pub fn solve_unbalanced(
    cost: &CostMatrix,
    row_prior: &MassVector,
    col_prior: &MassVector,
    cfg: &SolverConfig,
) -> Result<TransportPlan> {
    let init = Scalings::ones(cost.nrows(), cost.ncols());
    solve_unbalanced_from(cost, row_prior, col_prior, cfg, &init)
}

/// Unbalanced solve from caller-provided initial scalings.
pub fn solve_unbalanced_from(
    cost: &CostMatrix,
    row_prior: &MassVector,
    col_prior: &MassVector,
    cfg: &SolverConfig,
    init: &Scalings,
) -> Result<TransportPlan> {
    cfg.validate()?;
    check_dims(cost, row_prior, col_prior)?;
    if !row_prior.is_positive() || !col_prior.is_positive() {
        return Err(Error::InvalidMass("unbalanced priors must be strictly positive".into()));
    }
    if init.log_u.len() != cost.nrows() || init.log_v.len() != cost.ncols() {
        return Err(Error::Dimension("initial scalings do not match the cost".into()));
    }
    if init.log_u.iter().chain(init.log_v.iter()).any(|v| !v.is_finite()) {
        return Err(Error::SolverConfig("initial scalings must be finite".into()));
    }
    let marginals = Marginals::Unbalanced {
        exponent: cfg.kl_exponent(),
    };
    scale(cost, row_prior, col_prior, cfg, marginals, init)
}

fn scale(
    cost: &CostMatrix,
    row: &MassVector,
    col: &MassVector,
    cfg: &SolverConfig,
    marginals: Marginals,
    init: &Scalings,
) -> Result<TransportPlan> {
    if !cfg.stabilized {
        match scale_plain(cost, row, col, cfg, marginals, init) {
            Some(plan) => return Ok(plan),
            None => log::warn!("plain scaling overflowed; switching to the log-domain solver"),
        }
    }
    Ok(scale_log(cost, row, col, cfg, marginals, init))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Absolute change between finite values; infinite entries never move.
fn change(new: f64, old: f64) -> f64 {
    if new.is_finite() && old.is_finite() {
        (new - old).abs()
    } else {
        0.0
    }
}

fn max_abs_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    new.iter()
        .zip(old.iter())
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn marginal_error(entries: &DMatrix<f64>, row: &[f64], col: &[f64]) -> f64 {
    let r = entries
        .row_iter()
        .zip(row)
        .map(|(p, t)| (p.sum() - t).abs())
        .fold(0.0, f64::max);
    let c = entries
        .column_iter()
        .zip(col)
        .map(|(p, t)| (p.sum() - t).abs())
        .fold(0.0, f64::max);
    r.max(c)
}

/// `delta` is the change of the log scalings; the dual potentials are those
/// times λ, so the stopping rule is in cost units whatever λ is.
fn is_done(delta: f64, err: f64, mass: f64, cfg: &SolverConfig, marginals: Marginals) -> bool {
    let delta = delta * cfg.lambda_entropy;
    match marginals {
        // marginal error is measured relative to the transported mass so that
        // rescaling both marginals rescales the plan without changing the path
        Marginals::Balanced => delta < cfg.tolerance && err < cfg.tolerance * mass,
        Marginals::Unbalanced { .. } => delta < cfg.tolerance,
    }
}

/// Once a multiplicative correction leaves `[e^-ABSORB, e^ABSORB]` it is
/// folded into the log potentials and the kernel is rebuilt.
const ABSORB: f64 = 30.0;

/// One exact log-sum-exp sweep over rows then columns. Returns the largest
/// change of a finite potential.
fn log_sweep(
    log_k: &DMatrix<f64>,
    log_n: &[f64],
    log_m: &[f64],
    exponent: f64,
    a: &mut DVector<f64>,
    b: &mut DVector<f64>,
    buf: &mut [f64],
) -> f64 {
    let (n, m) = log_k.shape();
    let mut delta: f64 = 0.0;
    for i in 0..n {
        if log_n[i] == f64::NEG_INFINITY {
            continue;
        }
        for j in 0..m {
            buf[j] = log_k[(i, j)] + b[j];
        }
        let next = exponent * (log_n[i] - log_sum_exp(&buf[..m]));
        delta = delta.max(change(next, a[i]));
        a[i] = next;
    }
    for j in 0..m {
        if log_m[j] == f64::NEG_INFINITY {
            continue;
        }
        for i in 0..n {
            buf[i] = log_k[(i, j)] + a[i];
        }
        let next = exponent * (log_m[j] - log_sum_exp(&buf[..n]));
        delta = delta.max(change(next, b[j]));
        b[j] = next;
    }
    delta
}

/// Log-domain scaling with absorption: the plan is `exp(a + log K + b)`
/// scaled by multiplicative corrections `u`, `v` that are iterated cheaply
/// and absorbed into `a`, `b` before they can over- or underflow.
fn scale_log(
    cost: &CostMatrix,
    row: &MassVector,
    col: &MassVector,
    cfg: &SolverConfig,
    marginals: Marginals,
    init: &Scalings,
) -> TransportPlan {
    let (n, m) = (cost.nrows(), cost.ncols());
    let log_k = cost.as_matrix().map(|c| -c / cfg.lambda_entropy);
    let log_n: Vec<f64> = row.as_slice().iter().map(|v| v.ln()).collect();
    let log_m: Vec<f64> = col.as_slice().iter().map(|v| v.ln()).collect();
    let exponent = match marginals {
        Marginals::Balanced => 1.0,
        Marginals::Unbalanced { exponent } => exponent,
    };
    let mass = row.total().max(1.0);

    let mut a = init.log_u.clone();
    let mut b = init.log_v.clone();
    for i in 0..n {
        if log_n[i] == f64::NEG_INFINITY {
            a[i] = f64::NEG_INFINITY;
        }
    }
    for j in 0..m {
        if log_m[j] == f64::NEG_INFINITY {
            b[j] = f64::NEG_INFINITY;
        }
    }
    let log_plan = |a: &DVector<f64>, b: &DVector<f64>| DMatrix::from_fn(n, m, |i, j| a[i] + log_k[(i, j)] + b[j]);

    // the first sweep is exact so every live row and column carries mass
    // before the kernel is formed
    let mut buf = vec![0.0; n.max(m)];
    let delta = log_sweep(&log_k, &log_n, &log_m, exponent, &mut a, &mut b, &mut buf);
    let mut iterations = 1;
    // the exponent applies to the whole scaling `e^a u`, which leaves a
    // factor `e^{a (exponent - 1)}` on the correction `u`
    let tilt = |p: &DVector<f64>| -> Vec<f64> {
        p.iter()
            .map(|x| {
                if x.is_finite() {
                    (x * (exponent - 1.0)).exp()
                } else {
                    1.0
                }
            })
            .collect()
    };
    let mut kernel = log_plan(&a, &b).map(f64::exp);
    let (mut row_tilt, mut col_tilt) = (tilt(&a), tilt(&b));
    let (mut u, mut v) = (DVector::from_element(n, 1.0), DVector::from_element(m, 1.0));
    let (mut row_sums, mut col_sums) = (vec![0.0; n], vec![0.0; m]);
    let (row_live, col_live): (Vec<bool>, Vec<bool>) = (
        log_n.iter().map(|x| x.is_finite()).collect(),
        log_m.iter().map(|x| x.is_finite()).collect(),
    );
    let (row_mass, col_mass) = (row.as_slice(), col.as_slice());
    let power = |x: f64| if exponent == 1.0 { x } else { x.powf(exponent) };
    let (lo, hi) = ((-ABSORB).exp(), ABSORB.exp());
    // largest |ln ratio| of a sweep is ln of its widest ratio
    let mut widest = delta.exp();
    let mut converged = false;
    loop {
        // column-major: entry (i, j) sits at j * n + i
        let k = kernel.as_slice();
        row_sums.fill(0.0);
        for (j, column) in k.chunks_exact(n).enumerate() {
            for (s, kij) in row_sums.iter_mut().zip(column) {
                *s += kij * v[j];
            }
        }
        // columns are exact right after their update, so the row deviation
        // decides balanced convergence
        let mut err: f64 = 0.0;
        for i in 0..n {
            if row_live[i] {
                err = err.max((u[i] * row_sums[i] - row_mass[i]).abs());
            }
        }
        let checkable = match marginals {
            Marginals::Balanced => err < cfg.tolerance * mass,
            Marginals::Unbalanced { .. } => true,
        };
        if checkable && is_done(widest.ln(), err, mass, cfg, marginals) {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        iterations += 1;
        let (mut r_max, mut r_min) = (1.0_f64, 1.0_f64);
        let mut healthy = true;
        for i in 0..n {
            if row_live[i] {
                let next = power(row_mass[i] / row_sums[i]) * row_tilt[i];
                healthy &= next.is_finite() && next > 0.0;
                let r = next / u[i];
                (r_max, r_min) = (r_max.max(r), r_min.min(r));
                u[i] = next;
            }
        }
        if healthy {
            for (j, column) in k.chunks_exact(n).enumerate() {
                col_sums[j] = column.iter().zip(u.iter()).map(|(kij, ui)| kij * ui).sum();
            }
            for j in 0..m {
                if col_live[j] {
                    let next = power(col_mass[j] / col_sums[j]) * col_tilt[j];
                    healthy &= next.is_finite() && next > 0.0;
                    let r = next / v[j];
                    (r_max, r_min) = (r_max.max(r), r_min.min(r));
                    v[j] = next;
                }
            }
        }
        widest = r_max.max(1.0 / r_min);
        let drifted = u.iter().chain(v.iter()).any(|&x| !(lo..=hi).contains(&x));
        if !healthy || drifted {
            if healthy {
                absorb(&mut a, u.as_mut_slice());
                absorb(&mut b, v.as_mut_slice());
            } else {
                u.fill(1.0);
                v.fill(1.0);
                widest = log_sweep(&log_k, &log_n, &log_m, exponent, &mut a, &mut b, &mut buf).exp();
            }
            kernel = log_plan(&a, &b).map(f64::exp);
            (row_tilt, col_tilt) = (tilt(&a), tilt(&b));
        }
    }
    absorb(&mut a, u.as_mut_slice());
    absorb(&mut b, v.as_mut_slice());

    let log_entries = log_plan(&a, &b);
    let entries = log_entries.map(f64::exp);
    let marginal_error = marginal_error(&entries, row.as_slice(), col.as_slice());
    TransportPlan {
        entries,
        log_entries,
        converged,
        iterations,
        marginal_error,
    }
}

fn absorb(potential: &mut DVector<f64>, scaling: &mut [f64]) {
    for (p, s) in potential.iter_mut().zip(scaling.iter_mut()) {
        if p.is_finite() {
            *p += s.ln();
        }
        *s = 1.0;
    }
}

/// Multiplicative scaling on the Gibbs kernel. `None` on under/overflow.
fn scale_plain(
    cost: &CostMatrix,
    row: &MassVector,
    col: &MassVector,
    cfg: &SolverConfig,
    marginals: Marginals,
    init: &Scalings,
) -> Option<TransportPlan> {
    let kernel = cost.as_matrix().map(|c| (-c / cfg.lambda_entropy).exp());
    if kernel.iter().any(|k| !k.is_finite() || *k == 0.0) {
        return None;
    }
    let exponent = match marginals {
        Marginals::Balanced => 1.0,
        Marginals::Unbalanced { exponent } => exponent,
    };
    let n_vec = DVector::from_column_slice(row.as_slice());
    let m_vec = DVector::from_column_slice(col.as_slice());
    let mass = row.total().max(1.0);
    let mut u = init.log_u.map(f64::exp);
    let mut v = init.log_v.map(f64::exp);
    for (ui, ni) in u.iter_mut().zip(n_vec.iter()) {
        if *ni == 0.0 {
            *ui = 0.0;
        }
    }
    for (vj, mj) in v.iter_mut().zip(m_vec.iter()) {
        if *mj == 0.0 {
            *vj = 0.0;
        }
    }
    let ratio = |target: f64, s: f64| {
        if target == 0.0 {
            0.0
        } else {
            (target / s).powf(exponent)
        }
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut err = f64::INFINITY;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let (u_old, v_old) = (u.clone(), v.clone());
        let kv = &kernel * &v;
        u = n_vec.zip_map(&kv, ratio);
        let ktu = kernel.tr_mul(&u);
        v = m_vec.zip_map(&ktu, ratio);
        let finite_positive = |x: &DVector<f64>, t: &DVector<f64>| {
            x.iter()
                .zip(t.iter())
                .all(|(a, t)| a.is_finite() && (*t == 0.0 || *a > 0.0))
        };
        if !finite_positive(&u, &n_vec) || !finite_positive(&v, &m_vec) {
            return None;
        }
        let delta = max_abs_change(&u.map(f64::ln), &u_old.map(f64::ln))
            .max(max_abs_change(&v.map(f64::ln), &v_old.map(f64::ln)));
        let entries = DMatrix::from_fn(kernel.nrows(), kernel.ncols(), |i, j| u[i] * kernel[(i, j)] * v[j]);
        err = marginal_error(&entries, row.as_slice(), col.as_slice());
        if is_done(delta, err, mass, cfg, marginals) {
            converged = true;
            break;
        }
    }
    let entries = DMatrix::from_fn(kernel.nrows(), kernel.ncols(), |i, j| u[i] * kernel[(i, j)] * v[j]);
    Some(TransportPlan {
        log_entries: entries.map(f64::ln),
        entries,
        converged,
        iterations,
        marginal_error: err,
    })
}
