//! Expert RMPs for a planar point agent and the RMPflow baseline.
//!
//! All experts act through the identity task map on the 2-D position. They
//! return a desired acceleration and a metric; see [`crate::rmp`] for how
//! those are pulled back and blended.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmp::{self, IdentityMap, PulledRmp, State, TaskRmp, TaskRmpValue};
use crate::world::{Context, Obstacle, Vec2};

/// `v / (‖v‖ + ε)`: unit length far away, linear near zero.
pub fn soft_normalize(v: &Vec2, eps: f64) -> Vec2 {
    v / (v.norm() + eps)
}

/// Planar task-space RMP value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarRmp {
    pub accel: Vec2,
    pub metric: Matrix2<f64>,
}

impl PlanarRmp {
    pub fn zero() -> Self {
        Self {
            accel: Vec2::zeros(),
            metric: Matrix2::zeros(),
        }
    }

    /// Metric-weighted force `M π`.
    pub fn force(&self) -> Vec2 {
        self.metric * self.accel
    }

    pub fn to_task_value(self) -> TaskRmpValue {
        TaskRmpValue {
            accel: DVector::from_column_slice(self.accel.as_slice()),
            metric: DMatrix::from_column_slice(2, 2, self.metric.as_slice()),
        }
    }
}

/// `π = gain · s(goal - q) - damping · q̇`, `M = I`.
pub fn goal_attractor(q: &Vec2, q_dot: &Vec2, goal: &Vec2, gain: f64, damping: f64, soft_eps: f64) -> PlanarRmp {
    PlanarRmp {
        accel: soft_normalize(&(goal - q), soft_eps) * gain - q_dot * damping,
        metric: Matrix2::identity(),
    }
}

/// Radial repulsion from one obstacle. With `d` the signed distance
/// (clamped at the surface) and `u` the outward direction,
/// `π = gain · e^{-d/ℓ} u` and `M = e^{-d/ℓ} u uᵀ`.
pub fn obstacle_repulsor(q: &Vec2, obstacle: &Obstacle, gain: f64, length_scale: f64) -> PlanarRmp {
    let d = obstacle.sdf(q).max(0.0);
    let u = obstacle.sdf_gradient(q);
    let w = (-d / length_scale).exp();
    PlanarRmp {
        accel: u * (gain * w),
        metric: u * u.transpose() * w,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurlOrientation {
    Cw,
    Ccw,
}

/// `π = gain · R(±90°) · s(g)` for the net potential force `g`, `M = I`.
/// Zero when `g` vanishes.
pub fn curl_expert(potential: &Vec2, orientation: CurlOrientation, gain: f64, soft_eps: f64) -> PlanarRmp {
    let g = soft_normalize(potential, soft_eps);
    let turned = match orientation {
        CurlOrientation::Ccw => Vec2::new(-g.y, g.x),
        CurlOrientation::Cw => Vec2::new(g.y, -g.x),
    };
    PlanarRmp {
        accel: turned * gain,
        metric: Matrix2::identity(),
    }
}

/// `π = -gain · q̇`, `M = I`.
pub fn damper(q_dot: &Vec2, gain: f64) -> PlanarRmp {
    PlanarRmp {
        accel: -q_dot * gain,
        metric: Matrix2::identity(),
    }
}

/// Which potential force a curl expert turns by 90°.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurlReference {
    /// The goal attraction alone: curls orbit the goal.
    Goal,
    /// Attraction plus every repulsor: curls follow equipotential lines.
    Net,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleBinding {
    /// One obstacle by index.
    Slot(usize),
    /// Whichever obstacle is closest at evaluation time.
    Nearest,
    /// Expands to one expert per obstacle when the pool is built.
    Each,
}

fn default_attractor_gain() -> f64 {
    1.0
}
fn default_attractor_damping() -> f64 {
    0.5
}
fn default_attractor_eps() -> f64 {
    10.0
}
fn default_repulsor_gain() -> f64 {
    4.0
}
fn default_length_scale() -> f64 {
    10.0
}
fn default_binding() -> ObstacleBinding {
    ObstacleBinding::Each
}
fn default_curl_gain() -> f64 {
    3.0
}
fn default_curl_eps() -> f64 {
    0.1
}
fn default_curl_reference() -> CurlReference {
    CurlReference::Goal
}
fn default_damper_gain() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertSpec {
    GoalAttractor {
        #[serde(default = "default_attractor_gain")]
        gain: f64,
        #[serde(default = "default_attractor_damping")]
        damping: f64,
        #[serde(default = "default_attractor_eps")]
        soft_eps: f64,
    },
    ObstacleAvoid {
        #[serde(default = "default_repulsor_gain")]
        gain: f64,
        #[serde(default = "default_length_scale")]
        length_scale: f64,
        #[serde(default = "default_binding")]
        binding: ObstacleBinding,
    },
    CurlCw {
        #[serde(default = "default_curl_gain")]
        gain: f64,
        #[serde(default = "default_curl_eps")]
        soft_eps: f64,
        #[serde(default = "default_curl_reference")]
        reference: CurlReference,
    },
    CurlCcw {
        #[serde(default = "default_curl_gain")]
        gain: f64,
        #[serde(default = "default_curl_eps")]
        soft_eps: f64,
        #[serde(default = "default_curl_reference")]
        reference: CurlReference,
    },
    Damper {
        #[serde(default = "default_damper_gain")]
        gain: f64,
    },
}

impl ExpertSpec {
    pub fn goal_attractor() -> Self {
        Self::GoalAttractor {
            gain: default_attractor_gain(),
            damping: default_attractor_damping(),
            soft_eps: default_attractor_eps(),
        }
    }

    pub fn obstacle_avoid(binding: ObstacleBinding) -> Self {
        Self::ObstacleAvoid {
            gain: default_repulsor_gain(),
            length_scale: default_length_scale(),
            binding,
        }
    }

    pub fn curl(orientation: CurlOrientation) -> Self {
        let (gain, soft_eps, reference) = (default_curl_gain(), default_curl_eps(), default_curl_reference());
        match orientation {
            CurlOrientation::Cw => Self::CurlCw {
                gain,
                soft_eps,
                reference,
            },
            CurlOrientation::Ccw => Self::CurlCcw {
                gain,
                soft_eps,
                reference,
            },
        }
    }

    pub fn damper() -> Self {
        Self::Damper {
            gain: default_damper_gain(),
        }
    }

    /// Attractor, one repulsor per obstacle, both curls, damper.
    pub fn default_pool() -> Vec<Self> {
        vec![
            Self::goal_attractor(),
            Self::obstacle_avoid(ObstacleBinding::Each),
            Self::curl(CurlOrientation::Cw),
            Self::curl(CurlOrientation::Ccw),
            Self::damper(),
        ]
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::GoalAttractor { .. } => "goal_attractor",
            Self::ObstacleAvoid { .. } => "obstacle_avoid",
            Self::CurlCw { .. } => "curl_cw",
            Self::CurlCcw { .. } => "curl_ccw",
            Self::Damper { .. } => "damper",
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{} {name} must be positive, got {v}",
                    self.kind_name()
                )))
            }
        };
        match *self {
            Self::GoalAttractor {
                gain,
                damping,
                soft_eps,
            } => {
                positive("gain", gain)?;
                positive("soft_eps", soft_eps)?;
                if damping.is_nan() || damping < 0.0 {
                    return Err(Error::Config("goal_attractor damping must be nonnegative".into()));
                }
            }
            Self::ObstacleAvoid { gain, length_scale, .. } => {
                positive("gain", gain)?;
                positive("length_scale", length_scale)?;
            }
            Self::CurlCw { gain, soft_eps, .. } | Self::CurlCcw { gain, soft_eps, .. } => {
                positive("gain", gain)?;
                positive("soft_eps", soft_eps)?;
            }
            Self::Damper { gain } => positive("gain", gain)?,
        }
        Ok(())
    }
}

/// Per-agent goal override; `None` uses the world goal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default)]
    pub goal: Option<Vec2>,
}

/// Experts `i = 0..n` and agents `j = 0..m`, fixed for an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertPool {
    experts: Vec<ExpertSpec>,
    names: Vec<String>,
    agents: Vec<AgentSpec>,
}

impl ExpertPool {
    /// Expands `Each` bindings against `obstacle_count` obstacles. A pool
    /// with no agents gets a single agent that follows the world goal.
    pub fn build(specs: &[ExpertSpec], obstacle_count: usize, agents: &[AgentSpec]) -> Result<Self> {
        let mut experts = Vec::new();
        let mut names = Vec::new();
        for spec in specs {
            spec.validate()?;
            match spec {
                ExpertSpec::ObstacleAvoid {
                    gain,
                    length_scale,
                    binding: ObstacleBinding::Each,
                } => {
                    for k in 0..obstacle_count {
                        experts.push(ExpertSpec::ObstacleAvoid {
                            gain: *gain,
                            length_scale: *length_scale,
                            binding: ObstacleBinding::Slot(k),
                        });
                        names.push(format!("obstacle_avoid[{k}]"));
                    }
                }
                ExpertSpec::ObstacleAvoid {
                    binding: ObstacleBinding::Slot(k),
                    ..
                } => {
                    if *k >= obstacle_count {
                        return Err(Error::Config(format!(
                            "obstacle_avoid bound to slot {k} but the world has {obstacle_count} obstacles"
                        )));
                    }
                    experts.push(spec.clone());
                    names.push(format!("obstacle_avoid[{k}]"));
                }
                other => {
                    experts.push(other.clone());
                    names.push(other.kind_name().to_owned());
                }
            }
        }
        if experts.is_empty() {
            return Err(Error::Config("expert pool is empty".into()));
        }
        let agents = if agents.is_empty() {
            vec![AgentSpec::default()]
        } else {
            agents.to_vec()
        };
        Ok(Self { experts, names, agents })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.agents.len()
    }

    pub fn experts(&self) -> &[ExpertSpec] {
        &self.experts
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn goal(&self, agent: usize, context: &Context) -> Vec2 {
        self.agents[agent].goal.unwrap_or(context.goal)
    }

    /// Potential force at `q` that curls turn: the attractor pull without
    /// damping, plus every repulsor's metric-weighted push for
    /// [`CurlReference::Net`].
    pub fn potential_force(&self, agent: usize, q: &Vec2, context: &Context, reference: CurlReference) -> Vec2 {
        let goal = self.goal(agent, context);
        self.experts
            .iter()
            .map(|e| match *e {
                ExpertSpec::GoalAttractor { gain, soft_eps, .. } => {
                    goal_attractor(q, &Vec2::zeros(), &goal, gain, 0.0, soft_eps).force()
                }
                ExpertSpec::ObstacleAvoid { .. } if reference == CurlReference::Net => {
                    self.eval_repulsor(e, q, context).force()
                }
                _ => Vec2::zeros(),
            })
            .sum()
    }

    fn eval_repulsor(&self, spec: &ExpertSpec, q: &Vec2, context: &Context) -> PlanarRmp {
        let ExpertSpec::ObstacleAvoid {
            gain,
            length_scale,
            binding,
        } = *spec
        else {
            unreachable!("not a repulsor");
        };
        let obstacle = match binding {
            ObstacleBinding::Slot(k) => context.obstacles.get(k),
            ObstacleBinding::Nearest | ObstacleBinding::Each => {
                crate::world::nearest_obstacle(q, &context.obstacles).map(|k| &context.obstacles[k])
            }
        };
        match obstacle {
            Some(o) => obstacle_repulsor(q, o, gain, length_scale),
            None => PlanarRmp::zero(),
        }
    }

    /// Task-space value of expert `i` for agent `j` at `(q, q̇)`.
    pub fn eval(&self, i: usize, agent: usize, q: &Vec2, q_dot: &Vec2, context: &Context) -> PlanarRmp {
        let goal = self.goal(agent, context);
        match self.experts[i] {
            ExpertSpec::GoalAttractor {
                gain,
                damping,
                soft_eps,
            } => goal_attractor(q, q_dot, &goal, gain, damping, soft_eps),
            ExpertSpec::ObstacleAvoid { .. } => self.eval_repulsor(&self.experts[i], q, context),
            ExpertSpec::CurlCw {
                gain,
                soft_eps,
                reference,
            } => curl_expert(
                &self.potential_force(agent, q, context, reference),
                CurlOrientation::Cw,
                gain,
                soft_eps,
            ),
            ExpertSpec::CurlCcw {
                gain,
                soft_eps,
                reference,
            } => curl_expert(
                &self.potential_force(agent, q, context, reference),
                CurlOrientation::Ccw,
                gain,
                soft_eps,
            ),
            ExpertSpec::Damper { gain } => damper(q_dot, gain),
        }
    }

    /// Configuration-space RMP of expert `i` for agent `j`.
    pub fn pulled(&self, i: usize, agent: usize, state: &State) -> Result<PulledRmp> {
        let rmp = BoundExpert {
            pool: self,
            index: i,
            agent,
        };
        rmp::pullback(&rmp, &IdentityMap { dim: 2 }, state)
    }

    pub fn pulled_all(&self, agent: usize, state: &State) -> Result<Vec<PulledRmp>> {
        (0..self.len()).map(|i| self.pulled(i, agent, state)).collect()
    }
}

/// One pool entry seen as a [`TaskRmp`].
struct BoundExpert<'a> {
    pool: &'a ExpertPool,
    index: usize,
    agent: usize,
}

impl TaskRmp for BoundExpert<'_> {
    fn name(&self) -> &str {
        self.pool.name(self.index)
    }

    fn eval(&self, x: &DVector<f64>, x_dot: &DVector<f64>, context: &Context) -> TaskRmpValue {
        let q = Vec2::new(x[0], x[1]);
        let q_dot = Vec2::new(x_dot[0], x_dot[1]);
        self.pool
            .eval(self.index, self.agent, &q, &q_dot, context)
            .to_task_value()
    }
}

pub fn planar_state(q: &Vec2, q_dot: &Vec2, context: Context) -> State {
    State {
        q: DVector::from_column_slice(q.as_slice()),
        q_dot: DVector::from_column_slice(q_dot.as_slice()),
        context,
    }
}

/// RMPflow: every expert blended with unit weight, summed over agents.
pub fn rmpflow_baseline(state: &State, pool: &ExpertPool) -> Result<DVector<f64>> {
    let mut total = DVector::zeros(state.dim());
    for agent in 0..pool.agents() {
        let pulled = pool.pulled_all(agent, state)?;
        total += rmp::blend(pulled.iter().map(|p| (p, 1.0)))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(goal: Vec2, obstacles: Vec<Obstacle>) -> Context {
        Context { goal, obstacles }
    }

    #[test]
    fn attractor_examples() {
        let goal = Vec2::new(50.0, 50.0);
        let at_goal = goal_attractor(&goal, &Vec2::zeros(), &goal, 1.0, 2.0, 0.01);
        assert_eq!(at_goal.accel, Vec2::zeros());
        let far = goal_attractor(&(goal - Vec2::new(10.0, 0.0)), &Vec2::zeros(), &goal, 1.0, 2.0, 0.01);
        assert_relative_eq!(far.accel, Vec2::new(10.0 / 10.01, 0.0), epsilon = 1e-15);
        assert!((far.accel.x - 0.999).abs() < 1e-3);
        let damped = goal_attractor(&goal, &Vec2::new(1.0, 0.0), &goal, 1.0, 2.0, 0.01);
        assert_eq!(damped.accel, Vec2::new(-2.0, 0.0));
        assert_eq!(damped.metric, Matrix2::identity());
    }

    #[test]
    fn repulsor_examples() {
        let o = Obstacle::circle(Vec2::zeros(), 10.0);
        let far = obstacle_repulsor(&Vec2::new(1010.0, 0.0), &o, 1.0, 20.0);
        assert!(far.accel.norm() < 1e-15);
        assert!(far.metric.amax() < 1e-15);
        let surface = obstacle_repulsor(&Vec2::new(0.0, -10.0), &o, 1.0, 20.0);
        assert_relative_eq!(surface.accel, Vec2::new(0.0, -1.0), epsilon = 1e-15);
        let center = obstacle_repulsor(&Vec2::zeros(), &o, 1.0, 20.0);
        assert_relative_eq!(center.accel, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn box_repulsor_uses_face_normal() {
        let b = Obstacle::rect(Vec2::zeros(), Vec2::new(10.0, 40.0));
        let r = obstacle_repulsor(&Vec2::new(-20.0, 5.0), &b, 2.0, 10.0);
        assert_relative_eq!(r.accel.normalize(), -Vec2::x(), epsilon = 1e-15);
        assert_relative_eq!(r.accel.norm(), 2.0 * (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn curl_examples() {
        let g = Vec2::new(3.0, 0.0);
        let ccw = curl_expert(&g, CurlOrientation::Ccw, 1.0, 0.1);
        assert!(ccw.accel.y > 0.0 && ccw.accel.x == 0.0);
        let cw = curl_expert(&g, CurlOrientation::Cw, 1.0, 0.1);
        assert!(cw.accel.y < 0.0 && cw.accel.x == 0.0);
        let none = curl_expert(&Vec2::zeros(), CurlOrientation::Cw, 1.0, 0.1);
        assert_eq!(none.accel, Vec2::zeros());
    }

    #[test]
    fn pool_expands_each_binding() {
        let c = ctx(Vec2::zeros(), vec![Obstacle::circle(Vec2::zeros(), 1.0); 3]);
        let pool = ExpertPool::build(&ExpertSpec::default_pool(), c.obstacles.len(), &[]).unwrap();
        assert_eq!(pool.len(), 7);
        assert_eq!(pool.name(3), "obstacle_avoid[2]");
        assert_eq!(pool.agents(), 1);
    }

    #[test]
    fn pool_rejects_bad_specs() {
        assert!(ExpertPool::build(&[], 0, &[]).is_err());
        let bad = ExpertSpec::Damper { gain: -1.0 };
        assert!(ExpertPool::build(&[bad], 0, &[]).is_err());
        let slot = ExpertSpec::obstacle_avoid(ObstacleBinding::Slot(4));
        assert!(ExpertPool::build(&[slot], 2, &[]).is_err());
    }

    #[test]
    fn spec_parses_from_json() {
        let json = r#"[{"kind":"goal_attractor","gain":2.0},
                       {"kind":"obstacle_avoid","binding":"nearest"},
                       {"kind":"obstacle_avoid","binding":{"slot":1}},
                       {"kind":"curl_cw"},{"kind":"damper","gain":1.5}]"#;
        let specs: Vec<ExpertSpec> = serde_json::from_str(json).unwrap();
        assert_eq!(specs.len(), 5);
        assert!(matches!(specs[0], ExpertSpec::GoalAttractor { gain, .. } if gain == 2.0));
        assert!(matches!(
            specs[2],
            ExpertSpec::ObstacleAvoid {
                binding: ObstacleBinding::Slot(1),
                ..
            }
        ));
        let unknown = r#"[{"kind":"damper","gian":1.0}]"#;
        assert!(serde_json::from_str::<Vec<ExpertSpec>>(unknown).is_err());
    }

    #[test]
    fn baseline_single_attractor() {
        let goal = Vec2::new(100.0, 100.0);
        let pool = ExpertPool::build(&[ExpertSpec::goal_attractor()], 0, &[]).unwrap();
        let q = Vec2::new(40.0, 80.0);
        let s = planar_state(&q, &Vec2::zeros(), ctx(goal, vec![]));
        let a = rmpflow_baseline(&s, &pool).unwrap();
        let expected = goal_attractor(&q, &Vec2::zeros(), &goal, 1.0, 0.5, 10.0).accel;
        assert_relative_eq!(a[0], expected.x, epsilon = 1e-14);
        assert_relative_eq!(a[1], expected.y, epsilon = 1e-14);
    }

    #[test]
    fn baseline_ignores_distant_obstacle() {
        let goal = Vec2::new(100.0, 100.0);
        let far = Obstacle::circle(Vec2::new(1000.0, -900.0), 10.0);
        let with = ExpertPool::build(
            &[
                ExpertSpec::goal_attractor(),
                ExpertSpec::obstacle_avoid(ObstacleBinding::Each),
            ],
            1,
            &[],
        )
        .unwrap();
        let without = ExpertPool::build(&[ExpertSpec::goal_attractor()], 0, &[]).unwrap();
        let q = Vec2::new(30.0, 60.0);
        let s = planar_state(&q, &Vec2::new(0.5, -0.2), ctx(goal, vec![far]));
        let a = rmpflow_baseline(&s, &with).unwrap();
        let b = rmpflow_baseline(&s, &without).unwrap();
        assert!((a - b).amax() < 1e-6);
    }

    #[test]
    fn curl_is_orthogonal_to_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let obstacles = vec![
            Obstacle::circle(Vec2::new(80.0, 90.0), 12.0),
            Obstacle::rect(Vec2::new(130.0, 110.0), Vec2::new(10.0, 30.0)),
        ];
        let c = ctx(Vec2::new(180.0, 100.0), obstacles);
        for reference in [CurlReference::Goal, CurlReference::Net] {
            let specs = [
                ExpertSpec::goal_attractor(),
                ExpertSpec::obstacle_avoid(ObstacleBinding::Each),
                ExpertSpec::CurlCw {
                    gain: 1.0,
                    soft_eps: 0.1,
                    reference,
                },
            ];
            let pool = ExpertPool::build(&specs, 2, &[]).unwrap();
            for _ in 0..200 {
                let q = Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
                let g = pool.potential_force(0, &q, &c, reference);
                let f = pool.eval(3, 0, &q, &Vec2::zeros(), &c).accel;
                assert!(f.dot(&g).abs() <= 1e-12 * g.norm().max(1.0));
            }
        }
    }

    #[test]
    fn expert_forces_are_bounded_by_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let obstacles = vec![Obstacle::circle(Vec2::new(100.0, 100.0), 15.0)];
        let c = ctx(Vec2::new(180.0, 100.0), obstacles);
        let pool = ExpertPool::build(&ExpertSpec::default_pool(), 1, &[]).unwrap();
        for _ in 0..500 {
            let q = Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            let q_dot = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            for (i, spec) in pool.experts().iter().enumerate() {
                let (gain, damping) = match *spec {
                    ExpertSpec::GoalAttractor { gain, damping, .. } => (gain, damping),
                    ExpertSpec::ObstacleAvoid { gain, .. } => (gain, 0.0),
                    ExpertSpec::CurlCw { gain, .. } | ExpertSpec::CurlCcw { gain, .. } => (gain, 0.0),
                    ExpertSpec::Damper { gain } => (0.0, gain),
                };
                let f = pool.eval(i, 0, &q, &q_dot, &c).accel;
                assert!(f.norm() <= gain + damping * q_dot.norm() + 1e-12);
            }
        }
    }

    #[test]
    fn metrics_are_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obstacles = vec![
            Obstacle::circle(Vec2::new(60.0, 100.0), 10.0),
            Obstacle::rect(Vec2::new(120.0, 100.0), Vec2::new(10.0, 40.0)),
        ];
        let c = ctx(Vec2::new(180.0, 100.0), obstacles);
        let pool = ExpertPool::build(&ExpertSpec::default_pool(), 2, &[]).unwrap();
        for _ in 0..200 {
            let q = Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
            for i in 0..pool.len() {
                let m = pool.eval(i, 0, &q, &Vec2::zeros(), &c).metric;
                assert!((m - m.transpose()).amax() < 1e-15);
                let eig = m.symmetric_eigenvalues();
                assert!(eig.iter().all(|l| *l >= -1e-12));
            }
        }
    }
}
