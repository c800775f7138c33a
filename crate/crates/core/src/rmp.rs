//! Riemannian Motion Policy algebra.
//!
//! A task-space RMP is a desired acceleration `π` together with a metric
//! `M` (symmetric PSD). Through a task map `x = φ(q)` with Jacobian `J` it
//! pulls back to the configuration-space pair
//!
//! ```text
//! f = Jᵀ M π,    M_q = Jᵀ M J
//! ```
//!
//! and a set of pulled RMPs weighted by temperatures `β_i ≥ 0` resolves to
//! the acceleration `(Σ β_i M_i)† Σ β_i f_i`, which minimizes the weighted
//! sum of quadratic energies `½ (a - M_i† f_i)ᵀ M_i (a - M_i† f_i)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::world::Context;

/// Eigenvalues below this are treated as zero by [`pseudo_inverse`].
pub const PINV_CUTOFF: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct State {
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
    pub context: Context,
}

impl State {
    pub fn new(q: DVector<f64>, q_dot: DVector<f64>, context: Context) -> Result<Self> {
        if q.len() != q_dot.len() {
            return Err(Error::Dimension(format!(
                "q has {} entries but q_dot has {}",
                q.len(),
                q_dot.len()
            )));
        }
        Ok(Self { q, q_dot, context })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

pub trait TaskMap {
    fn map(&self, q: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityMap {
    pub dim: usize,
}

impl TaskMap for IdentityMap {
    fn map(&self, q: &DVector<f64>) -> DVector<f64> {
        q.clone()
    }

    fn jacobian(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
}

/// `x = A q + b`.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl TaskMap for AffineMap {
    fn map(&self, q: &DVector<f64>) -> DVector<f64> {
        &self.matrix * q + &self.offset
    }

    fn jacobian(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// A task-space RMP evaluated at one point: desired acceleration and metric.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRmpValue {
    pub accel: DVector<f64>,
    pub metric: DMatrix<f64>,
}

pub trait TaskRmp {
    fn name(&self) -> &str;
    fn eval(&self, x: &DVector<f64>, x_dot: &DVector<f64>, context: &Context) -> TaskRmpValue;
}

/// Configuration-space force and metric of one expert.
#[derive(Clone, Debug, PartialEq)]
pub struct PulledRmp {
    pub force: DVector<f64>,
    pub metric: DMatrix<f64>,
}

impl PulledRmp {
    pub fn dim(&self) -> usize {
        self.force.len()
    }

    /// The expert's own acceleration `M† f`.
    pub fn resolve(&self) -> DVector<f64> {
        pseudo_inverse(&self.metric) * &self.force
    }
}

/// Evaluates `rmp` at `φ(q)`, `J q̇` and pulls it back through `map`.
pub fn pullback(rmp: &dyn TaskRmp, map: &dyn TaskMap, state: &State) -> Result<PulledRmp> {
    let x = map.map(&state.q);
    let jac = map.jacobian(&state.q);
    let x_dot = &jac * &state.q_dot;
    let value = rmp.eval(&x, &x_dot, &state.context);
    pullback_value(rmp.name(), &value, &jac)
}

/// `(Jᵀ M π, Jᵀ M J)` for an already evaluated task-space RMP.
pub fn pullback_value(name: &str, value: &TaskRmpValue, jacobian: &DMatrix<f64>) -> Result<PulledRmp> {
    if value.accel.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            expert: name.to_owned(),
            what: "force",
        });
    }
    if value.metric.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            expert: name.to_owned(),
            what: "metric",
        });
    }
    let (rows, cols) = jacobian.shape();
    if value.accel.len() != rows || value.metric.shape() != (rows, rows) {
        return Err(Error::Dimension(format!(
            "expert `{name}`: task values do not match a {rows}x{cols} Jacobian"
        )));
    }
    let jt_m = jacobian.transpose() * &value.metric;
    let force = &jt_m * &value.accel;
    let metric = symmetrize(&(&jt_m * jacobian));
    Ok(PulledRmp { force, metric })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix via its
/// eigendecomposition; eigenvalues below [`PINV_CUTOFF`] are dropped.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > PINV_CUTOFF {
            let v = eig.eigenvectors.column(k);
            out += v * v.transpose() / lambda;
        }
    }
    out
}

/// `(Σ β_i M_i)† Σ β_i f_i`. A zero weighted metric yields the zero
/// acceleration.
pub fn blend<'a, I>(terms: I) -> Result<DVector<f64>>
where
    I: IntoIterator<Item = (&'a PulledRmp, f64)>,
{
    let mut iter = terms.into_iter().peekable();
    let dim = iter.peek().ok_or(Error::EmptyBlend)?.0.dim();
    let mut metric = DMatrix::zeros(dim, dim);
    let mut force = DVector::zeros(dim);
    for (rmp, beta) in iter {
        if rmp.dim() != dim {
            return Err(Error::Dimension(format!(
                "blend mixes {dim}- and {}-dimensional experts",
                rmp.dim()
            )));
        }
        if beta.is_nan() || beta < 0.0 {
            return Err(Error::Dimension(format!("negative or NaN weight {beta}")));
        }
        if beta == 0.0 {
            continue;
        }
        metric += &rmp.metric * beta;
        force += &rmp.force * beta;
    }
    Ok(pseudo_inverse(&metric) * force)
}

/// `½ (a - M† f)ᵀ M (a - M† f)`.
pub fn energy(rmp: &PulledRmp, a: &DVector<f64>) -> f64 {
    let diff = a - rmp.resolve();
    0.5 * (diff.transpose() * &rmp.metric * &diff)[(0, 0)]
}

/// Direct RMPflow composition `M† Σ Jᵀ M_x π_x`, `M = Σ Jᵀ M_x J`, from
/// task-space values and their Jacobians.
pub fn compose(terms: &[(TaskRmpValue, DMatrix<f64>)]) -> DVector<f64> {
    let dim = terms[0].1.ncols();
    let mut metric = DMatrix::zeros(dim, dim);
    let mut force = DVector::zeros(dim);
    for (value, jac) in terms {
        metric += jac.transpose() * &value.metric * jac;
        force += jac.transpose() * (&value.metric * &value.accel);
    }
    pseudo_inverse(&metric) * force
}
