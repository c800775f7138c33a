//! Upper-level blending: per-expert rollouts, the rollout cost matrix, the
//! unbalanced-OT temperature solve and the blended action.

use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{planar_state, ExpertPool};
use crate::ot::{self, CostMatrix, MassVector, SolverConfig};
use crate::rmp::{self, State};
use crate::world::{integrate_agent, min_sdf, ArenaParams, Context, Vec2, WorldState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostNormalization {
    None,
    /// Goal term rescaled to `[0, 1]` across the matrix.
    #[default]
    Minmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Rollout length `h` in steps.
    pub horizon: usize,
    pub w_goal: f64,
    pub w_collision: f64,
    /// Width `l` of the Gaussian collision cost, px.
    pub margin: f64,
    pub solver: SolverConfig,
    /// Expert prior; defaults to `1/n` each.
    pub row_prior: Option<Vec<f64>>,
    /// Agent prior; defaults to `1` for one agent and `1/m` otherwise.
    pub col_prior: Option<Vec<f64>>,
    pub cost_normalization: CostNormalization,
    /// Skip the solver and blend with this constant temperature.
    pub constant_beta: Option<f64>,
    /// Evaluate rollouts on the rayon pool.
    pub parallel: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            w_goal: 1.0,
            w_collision: 10.0,
            margin: 25.0,
            solver: SolverConfig::default(),
            row_prior: None,
            col_prior: None,
            cost_normalization: CostNormalization::Minmax,
            constant_beta: None,
            parallel: true,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("planner horizon must be at least 1".into()));
        }
        if !(self.w_goal >= 0.0 && self.w_collision >= 0.0) {
            return Err(Error::Config("cost weights must be nonnegative".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config("collision margin must be positive".into()));
        }
        if let Some(b) = self.constant_beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config("constant_beta must be positive".into()));
            }
        }
        self.solver.validate()
    }

    /// Default asynchronous latency `max(1, h / 5)`.
    pub fn default_latency(&self) -> usize {
        (self.horizon / 5).max(1)
    }

    fn priors(&self, n: usize, m: usize) -> Result<(MassVector, MassVector)> {
        let row = match &self.row_prior {
            Some(v) => MassVector::new(v.clone())?,
            None => MassVector::uniform(n, 1.0)?,
        };
        let col = match &self.col_prior {
            Some(v) => MassVector::new(v.clone())?,
            None if m == 1 => MassVector::uniform(1, 1.0)?,
            None => MassVector::uniform(m, 1.0)?,
        };
        if row.len() != n || col.len() != m {
            return Err(Error::Dimension(format!(
                "priors have lengths ({}, {}) but the pool is {n}×{m}",
                row.len(),
                col.len()
            )));
        }
        if !row.is_positive() || !col.is_positive() {
            return Err(Error::InvalidMass("planner priors must be strictly positive".into()));
        }
        Ok((row, col))
    }
}

/// Blending temperatures `β ∈ R₊^{n×m}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureMatrix {
    pub beta: DMatrix<f64>,
    /// `log β`; finite wherever `β` is positive even if `β` underflows.
    pub log_beta: DMatrix<f64>,
    pub solved_at: usize,
}

impl TemperatureMatrix {
    pub fn constant(n: usize, m: usize, value: f64, solved_at: usize) -> Self {
        Self {
            beta: DMatrix::from_element(n, m, value),
            log_beta: DMatrix::from_element(n, m, value.ln()),
            solved_at,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.log_beta.iter().all(|v| v.is_finite())
    }
}

/// Agent state at one rollout step plus the predicted obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub q: Vec2,
    pub q_dot: Vec2,
    pub context: Context,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTrace {
    pub expert: usize,
    pub agent: usize,
    pub horizon: usize,
    /// `s¹ … s^h`; shorter when the rollout went non-finite.
    pub states: Vec<RolloutStep>,
}

impl RolloutTrace {
    pub fn truncated(&self) -> bool {
        self.states.len() < self.horizon
    }
}

/// Shoots expert `i` alone for agent `j`: `h` steps of its own resolved
/// action `M†f` through the double integrator, obstacles moving at constant
/// velocity.
pub fn rollout_expert(
    state: &State,
    pool: &ExpertPool,
    expert: usize,
    agent: usize,
    horizon: usize,
    dt: f64,
    v_max: f64,
) -> RolloutTrace {
    let mut q = Vec2::new(state.q[0], state.q[1]);
    let mut q_dot = Vec2::new(state.q_dot[0], state.q_dot[1]);
    let mut context = state.context.clone();
    let mut states = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let s = planar_state(&q, &q_dot, context.clone());
        let Ok(pulled) = pool.pulled(expert, agent, &s) else {
            break;
        };
        let a = pulled.resolve();
        (q, q_dot) = integrate_agent(&q, &q_dot, &Vec2::new(a[0], a[1]), dt, v_max);
        context = context.advanced(dt);
        if !(q.iter().chain(q_dot.iter()).all(|v| v.is_finite())) {
            break;
        }
        states.push(RolloutStep {
            q,
            q_dot,
            context: context.clone(),
        });
    }
    RolloutTrace {
        expert,
        agent,
        horizon,
        states,
    }
}

/// Horizon averages of one trace before weighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceCost {
    pub goal: f64,
    pub collision: f64,
    pub truncated: bool,
}

/// `(1/h) Σ_t ‖q^t − goal‖` and `(1/h) Σ_t exp(−d_t² / (2l²))` where `d_t` is
/// the clearance between the agent disc and the nearest obstacle, clamped
/// at zero. No obstacles means no collision cost.
pub fn trace_cost(trace: &RolloutTrace, goal: &Vec2, margin: f64, agent_radius: f64) -> TraceCost {
    if trace.truncated() || trace.states.is_empty() {
        return TraceCost {
            goal: f64::INFINITY,
            collision: 1.0,
            truncated: true,
        };
    }
    let h = trace.horizon as f64;
    let mut goal_sum = 0.0;
    let mut collision_sum = 0.0;
    for s in &trace.states {
        goal_sum += (s.q - goal).norm();
        let d = min_sdf(&s.q, &s.context.obstacles);
        if d.is_finite() {
            let clearance = (d - agent_radius).max(0.0);
            collision_sum += (-clearance * clearance / (2.0 * margin * margin)).exp();
        }
    }
    TraceCost {
        goal: goal_sum / h,
        collision: collision_sum / h,
        truncated: false,
    }
}

/// Geometry the planner needs from the arena.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerGeometry {
    pub dt: f64,
    pub v_max: f64,
    pub agent_radius: f64,
    /// Largest meaningful goal distance, used by the truncation sentinel.
    pub max_distance: f64,
}

impl PlannerGeometry {
    pub fn from_arena(arena: &ArenaParams) -> Self {
        Self {
            dt: 1.0,
            v_max: arena.v_max,
            agent_radius: arena.agent_radius,
            max_distance: arena.diagonal(),
        }
    }
}

/// `C_ij = w_g · goal_ij + w_c · collision_ij` over every (expert, agent)
/// rollout. Truncated rollouts get `w_g · d_max + w_c` (with `d_max = 1`
/// after normalization).
pub fn build_cost_matrix(
    state: &State,
    pool: &ExpertPool,
    cfg: &PlannerConfig,
    geometry: &PlannerGeometry,
) -> Result<CostMatrix> {
    let (n, m) = (pool.len(), pool.agents());
    let entry = |k: usize| {
        let (i, j) = (k / m, k % m);
        let trace = rollout_expert(state, pool, i, j, cfg.horizon, geometry.dt, geometry.v_max);
        trace_cost(&trace, &pool.goal(j, &state.context), cfg.margin, geometry.agent_radius)
    };
    let raw: Vec<TraceCost> = if cfg.parallel {
        (0..n * m).into_par_iter().map(entry).collect()
    } else {
        (0..n * m).map(entry).collect()
    };
    assemble_costs(&raw, n, m, cfg, geometry.max_distance)
}

/// Combines per-trace averages into the weighted, optionally normalized
/// cost matrix. `raw` is row-major over `(expert, agent)`.
pub fn assemble_costs(
    raw: &[TraceCost],
    n: usize,
    m: usize,
    cfg: &PlannerConfig,
    max_distance: f64,
) -> Result<CostMatrix> {
    let (lo, hi) = raw
        .iter()
        .filter(|c| !c.truncated)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.goal), hi.max(c.goal))
        });
    let normalize = cfg.cost_normalization == CostNormalization::Minmax;
    let goal_term = |c: &TraceCost| -> f64 {
        match (c.truncated, normalize) {
            (true, true) => 1.0,
            (true, false) => max_distance,
            (false, true) if hi > lo => (c.goal - lo) / (hi - lo),
            (false, true) => 0.0,
            (false, false) => c.goal,
        }
    };
    let entries = DMatrix::from_fn(n, m, |i, j| {
        let c = &raw[i * m + j];
        cfg.w_goal * goal_term(c) + cfg.w_collision * c.collision
    });
    CostMatrix::new(entries)
}

/// Result of one temperature solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveOutcome {
    pub temperatures: TemperatureMatrix,
    pub iterations: usize,
    pub converged: bool,
}

/// `β` = entropic UOT plan of `cost` against the configured priors. On
/// non-convergence the previous `β` is kept so the loop never stalls.
pub fn solve_temperatures(
    cost: &CostMatrix,
    cfg: &PlannerConfig,
    previous: Option<&TemperatureMatrix>,
    step: usize,
) -> Result<SolveOutcome> {
    let (n, m) = (cost.nrows(), cost.ncols());
    if let Some(b) = cfg.constant_beta {
        return Ok(SolveOutcome {
            temperatures: TemperatureMatrix::constant(n, m, b, step),
            iterations: 0,
            converged: true,
        });
    }
    let (row, col) = cfg.priors(n, m)?;
    let plan = ot::solve_unbalanced(cost, &row, &col, &cfg.solver)?;
    if !plan.converged {
        if let Some(prev) = previous {
            warn!(
                "temperature solve at step {step} did not converge after {} iterations; keeping previous temperatures",
                plan.iterations
            );
            return Ok(SolveOutcome {
                temperatures: prev.clone(),
                iterations: plan.iterations,
                converged: false,
            });
        }
        warn!("temperature solve at step {step} did not converge; using the unconverged plan");
    }
    Ok(SolveOutcome {
        temperatures: TemperatureMatrix {
            beta: plan.entries,
            log_beta: plan.log_entries,
            solved_at: step,
        },
        iterations: plan.iterations,
        converged: plan.converged,
    })
}

/// `a = Σ_j blend_i(β_ij; f_ij, M_ij)`.
pub fn act(state: &State, pool: &ExpertPool, beta: &DMatrix<f64>) -> Result<DVector<f64>> {
    if beta.shape() != (pool.len(), pool.agents()) {
        return Err(Error::Dimension(format!(
            "temperatures are {:?} but the pool is {}×{}",
            beta.shape(),
            pool.len(),
            pool.agents()
        )));
    }
    let mut total = DVector::zeros(state.dim());
    for agent in 0..pool.agents() {
        let pulled = pool.pulled_all(agent, state)?;
        total += rmp::blend(pulled.iter().zip(beta.column(agent).iter()).map(|(p, b)| (p, *b)))?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExecutionMode {
    /// The world waits for every solve.
    #[default]
    Sync,
    /// A solve launched at step `t` becomes usable at `t + latency`; one
    /// solve is in flight at a time. `None` uses `max(1, h/5)`.
    Async {
        #[serde(default)]
        latency: Option<usize>,
    },
}

impl ExecutionMode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Sync => "sync",
            Self::Async { .. } => "async",
        }
    }
}

/// What happened in one planner step.
#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub accel: [f64; 2],
    /// Step whose state produced the temperatures used for this action.
    pub beta_from: usize,
    pub beta: Vec<Vec<f64>>,
    /// Present on steps where a solve was launched.
    pub cost: Option<Vec<Vec<f64>>>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub plan_ms: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Stateful blending loop over one episode.
pub struct Planner {
    pool: ExpertPool,
    cfg: PlannerConfig,
    geometry: PlannerGeometry,
    latency: Option<usize>,
    current: TemperatureMatrix,
    pending: Option<(usize, TemperatureMatrix)>,
    solves: usize,
    unconverged: usize,
    plan_ms_total: f64,
}

impl Planner {
    /// Until the first solve lands, temperatures are all ones.
    pub fn new(pool: ExpertPool, cfg: PlannerConfig, mode: ExecutionMode, geometry: PlannerGeometry) -> Result<Self> {
        cfg.validate()?;
        cfg.priors(pool.len(), pool.agents())?;
        let latency = match mode {
            ExecutionMode::Sync => None,
            ExecutionMode::Async { latency } => Some(latency.unwrap_or_else(|| cfg.default_latency())),
        };
        let current = TemperatureMatrix::constant(pool.len(), pool.agents(), 1.0, 0);
        Ok(Self {
            pool,
            cfg,
            geometry,
            latency,
            current,
            pending: None,
            solves: 0,
            unconverged: 0,
            plan_ms_total: 0.0,
        })
    }

    pub fn pool(&self) -> &ExpertPool {
        &self.pool
    }

    pub fn temperatures(&self) -> &TemperatureMatrix {
        &self.current
    }

    pub fn solves(&self) -> usize {
        self.solves
    }

    pub fn unconverged_solves(&self) -> usize {
        self.unconverged
    }

    pub fn mean_plan_ms(&self) -> f64 {
        if self.solves == 0 {
            0.0
        } else {
            self.plan_ms_total / self.solves as f64
        }
    }

    fn solve_at(&mut self, state: &State, step: usize) -> Result<(SolveOutcome, CostMatrix)> {
        let start = Instant::now();
        let cost = build_cost_matrix(state, &self.pool, &self.cfg, &self.geometry)?;
        let previous = self.pending.as_ref().map(|(_, t)| t).unwrap_or(&self.current);
        let outcome = solve_temperatures(&cost, &self.cfg, Some(previous), step)?;
        self.plan_ms_total += start.elapsed().as_secs_f64() * 1e3;
        self.solves += 1;
        if !outcome.converged {
            self.unconverged += 1;
        }
        Ok((outcome, cost))
    }

    fn collect(&mut self, t: usize) {
        if matches!(self.pending, Some((ready, _)) if ready <= t) {
            self.current = self.pending.take().expect("checked above").1;
        }
    }

    /// Computes the action for the current world state, launching and
    /// collecting temperature solves according to the execution mode.
    pub fn step(&mut self, world: &WorldState) -> Result<(Vec2, StepReport)> {
        let t = world.step;
        let state = planar_state(&world.q, &world.q_dot, world.context());
        let plan_ms_before = self.plan_ms_total;
        let mut launched = None;
        match self.latency {
            None => {
                let (outcome, cost) = self.solve_at(&state, t)?;
                self.current = outcome.temperatures.clone();
                launched = Some((outcome, cost));
            }
            Some(latency) => {
                self.collect(t);
                if self.pending.is_none() {
                    let (outcome, cost) = self.solve_at(&state, t)?;
                    self.pending = Some((t + latency, outcome.temperatures.clone()));
                    launched = Some((outcome, cost));
                }
                self.collect(t);
            }
        }
        let a = act(&state, &self.pool, &self.current.beta)?;
        let accel = Vec2::new(a[0], a[1]);
        let report = StepReport {
            step: t,
            accel: [accel.x, accel.y],
            beta_from: self.current.solved_at,
            beta: rows(&self.current.beta),
            cost: launched.as_ref().map(|(_, c)| rows(c.as_matrix())),
            iterations: launched.as_ref().map(|(o, _)| o.iterations),
            converged: launched.as_ref().map(|(o, _)| o.converged),
            plan_ms: self.plan_ms_total - plan_ms_before,
        };
        Ok((accel, report))
    }
}
