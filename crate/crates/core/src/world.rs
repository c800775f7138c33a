//! Planar Box and Maze worlds: obstacles, signed distances, a double
//! integrator agent, and seeded samplers.
//!
//! Units are pixels and simulation steps throughout.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Circle { center: Vec2, radius: f64 },
    Box { center: Vec2, half_extents: Vec2 },
}

impl Shape {
    pub fn center(&self) -> Vec2 {
        match self {
            Shape::Circle { center, .. } | Shape::Box { center, .. } => *center,
        }
    }

    fn center_mut(&mut self) -> &mut Vec2 {
        match self {
            Shape::Circle { center, .. } | Shape::Box { center, .. } => center,
        }
    }

    /// Half-size of the axis-aligned bounding box.
    pub fn extents(&self) -> Vec2 {
        match self {
            Shape::Circle { radius, .. } => Vec2::new(*radius, *radius),
            Shape::Box { half_extents, .. } => *half_extents,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub shape: Shape,
    #[serde(default = "Vec2::zeros")]
    pub velocity: Vec2,
    #[serde(default)]
    pub acceleration_noise_std: f64,
    /// Lower and upper corner of the region the center may occupy; the
    /// obstacle bounces off its edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub travel: Option<[Vec2; 2]>,
}

impl Obstacle {
    pub fn circle(center: Vec2, radius: f64) -> Self {
        Self {
            shape: Shape::Circle { center, radius },
            velocity: Vec2::zeros(),
            acceleration_noise_std: 0.0,
            travel: None,
        }
    }

    pub fn rect(center: Vec2, half_extents: Vec2) -> Self {
        Self {
            shape: Shape::Box { center, half_extents },
            velocity: Vec2::zeros(),
            acceleration_noise_std: 0.0,
            travel: None,
        }
    }

    pub fn with_velocity(mut self, velocity: Vec2) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn center(&self) -> Vec2 {
        self.shape.center()
    }

    pub fn sdf(&self, p: &Vec2) -> f64 {
        sdf(p, self)
    }

    /// Unit outward direction of the distance field at `p`. At a circle's
    /// center, or on a box's symmetry axis inside it, ties resolve to `+x`.
    pub fn sdf_gradient(&self, p: &Vec2) -> Vec2 {
        match &self.shape {
            Shape::Circle { center, .. } => {
                let d = p - center;
                let n = d.norm();
                if n > 0.0 {
                    d / n
                } else {
                    Vec2::x()
                }
            }
            Shape::Box { center, half_extents } => {
                let rel = p - center;
                let sx = if rel.x >= 0.0 { 1.0 } else { -1.0 };
                let sy = if rel.y >= 0.0 { 1.0 } else { -1.0 };
                let q = rel.abs() - half_extents;
                if q.x > 0.0 || q.y > 0.0 {
                    let out = Vec2::new(q.x.max(0.0) * sx, q.y.max(0.0) * sy);
                    out / out.norm()
                } else if q.x >= q.y {
                    Vec2::new(sx, 0.0)
                } else {
                    Vec2::new(0.0, sy)
                }
            }
        }
    }

    fn translate(&mut self, delta: Vec2) {
        *self.shape.center_mut() += delta;
    }

    /// One constant-velocity step, bouncing inside the travel region if set.
    pub fn drift(&mut self, dt: f64) {
        let v = self.velocity;
        self.translate(v * dt);
        if let Some([lo, hi]) = self.travel {
            reflect(self, &lo, &hi);
        }
    }
}

/// Signed distance from `point` to the obstacle surface, negative inside.
pub fn sdf(point: &Vec2, obstacle: &Obstacle) -> f64 {
    match &obstacle.shape {
        Shape::Circle { center, radius } => (point - center).norm() - radius,
        Shape::Box { center, half_extents } => {
            let q = (point - center).abs() - half_extents;
            let outside = Vec2::new(q.x.max(0.0), q.y.max(0.0)).norm();
            let inside = q.x.max(q.y).min(0.0);
            outside + inside
        }
    }
}

/// Minimum signed distance over `obstacles`; `+∞` when there are none.
pub fn min_sdf(point: &Vec2, obstacles: &[Obstacle]) -> f64 {
    obstacles.iter().map(|o| sdf(point, o)).fold(f64::INFINITY, f64::min)
}

/// Index of the obstacle with the smallest signed distance to `point`.
pub fn nearest_obstacle(point: &Vec2, obstacles: &[Obstacle]) -> Option<usize> {
    obstacles
        .iter()
        .enumerate()
        .map(|(k, o)| (k, sdf(point, o)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

/// What the experts and the planner see of the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub goal: Vec2,
    pub obstacles: Vec<Obstacle>,
}

impl Context {
    /// Constant-velocity prediction `dt` steps ahead, no noise, no walls.
    pub fn advanced(&self, dt: f64) -> Context {
        let mut next = self.clone();
        for o in &mut next.obstacles {
            o.drift(dt);
        }
        next
    }
}

/// Arena constants shared by every episode of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaParams {
    pub width: f64,
    pub height: f64,
    pub episode_cap: usize,
    pub goal_radius: f64,
    pub agent_radius: f64,
    pub v_max: f64,
}

impl Default for ArenaParams {
    fn default() -> Self {
        Self {
            width: 200.0,
            height: 200.0,
            episode_cap: 500,
            goal_radius: 10.0,
            agent_radius: 3.0,
            v_max: 10.0,
        }
    }
}

impl ArenaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Config("arena size must be positive".into()));
        }
        if self.episode_cap == 0 {
            return Err(Error::Config("episode_cap must be at least 1".into()));
        }
        if !(self.goal_radius > 0.0 && self.agent_radius >= 0.0 && self.v_max > 0.0) {
            return Err(Error::Config("goal_radius and v_max must be positive".into()));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arena {
    pub params: ArenaParams,
    pub start: Vec2,
    pub goal: Vec2,
}

impl Arena {
    pub fn new(params: ArenaParams, start: Vec2, goal: Vec2) -> Result<Self> {
        params.validate()?;
        if start == goal {
            return Err(Error::Config("start and goal coincide".into()));
        }
        let inside = |p: &Vec2| p.x >= 0.0 && p.y >= 0.0 && p.x <= params.width && p.y <= params.height;
        if !inside(&start) || !inside(&goal) {
            return Err(Error::Config("start and goal must lie inside the arena".into()));
        }
        Ok(Self { params, start, goal })
    }
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub arena: Arena,
    pub q: Vec2,
    pub q_dot: Vec2,
    pub obstacles: Vec<Obstacle>,
    pub step: usize,
    pub collided: bool,
    pub reached_goal: bool,
    noise_rng: Option<ChaCha8Rng>,
}

impl WorldState {
    /// Agent at rest at the arena start; events evaluated at step 0.
    pub fn new(arena: Arena, obstacles: Vec<Obstacle>) -> Self {
        let q = arena.start;
        let mut world = Self {
            arena,
            q,
            q_dot: Vec2::zeros(),
            obstacles,
            step: 0,
            collided: false,
            reached_goal: false,
            noise_rng: None,
        };
        world.update_events();
        world
    }

    pub fn context(&self) -> Context {
        Context {
            goal: self.arena.goal,
            obstacles: self.obstacles.clone(),
        }
    }

    pub fn min_sdf(&self) -> f64 {
        min_sdf(&self.q, &self.obstacles)
    }

    pub fn distance_to_goal(&self) -> f64 {
        (self.q - self.arena.goal).norm()
    }

    fn update_events(&mut self) {
        if self.min_sdf() < self.arena.params.agent_radius {
            self.collided = true;
        }
        if self.distance_to_goal() < self.arena.params.goal_radius {
            self.reached_goal = true;
        }
    }

    /// In-place form of [`step_world`].
    pub fn advance(&mut self, action: &Vec2, dt: f64) {
        self.advance_obstacles(dt);
        (self.q, self.q_dot) = integrate_agent(&self.q, &self.q_dot, action, dt, self.arena.params.v_max);
        self.step += 1;
        self.update_events();
    }

    fn advance_obstacles(&mut self, dt: f64) {
        for o in &mut self.obstacles {
            if o.acceleration_noise_std > 0.0 {
                if let Some(rng) = self.noise_rng.as_mut() {
                    let normal =
                        Normal::new(0.0, o.acceleration_noise_std * dt.sqrt()).expect("std is finite and positive");
                    o.velocity += Vec2::new(normal.sample(rng), normal.sample(rng));
                }
            }
            o.drift(dt);
        }
    }
}

/// Double-integrator update shared by the world and the planner's rollouts:
/// `q̇ += a dt`, clamped to `v_max`, then `q += q̇ dt`.
pub fn integrate_agent(q: &Vec2, q_dot: &Vec2, action: &Vec2, dt: f64, v_max: f64) -> (Vec2, Vec2) {
    let mut v = q_dot + action * dt;
    let speed = v.norm();
    if speed > v_max {
        v *= v_max / speed;
    }
    (q + v * dt, v)
}

/// Mirrors the center back inside `[lo, hi]` per axis and points the
/// velocity inward. Axes with an empty range are left alone.
fn reflect(o: &mut Obstacle, lo: &Vec2, hi: &Vec2) {
    let c = o.shape.center_mut();
    for axis in 0..2 {
        let (lo, hi) = (lo[axis], hi[axis]);
        if hi <= lo {
            continue;
        }
        if c[axis] < lo {
            c[axis] = 2.0 * lo - c[axis];
            o.velocity[axis] = o.velocity[axis].abs();
        } else if c[axis] > hi {
            c[axis] = 2.0 * hi - c[axis];
            o.velocity[axis] = -o.velocity[axis].abs();
        }
    }
}

/// One explicit-Euler step: `q̇ += a dt` (clamped to `v_max`), `q += q̇ dt`,
/// obstacles advance by their velocities. Collision and goal events latch.
pub fn step_world(world: &WorldState, action: &Vec2, dt: f64) -> WorldState {
    let mut next = world.clone();
    next.advance(action, dt);
    next
}

/// Switches on per-step Gaussian velocity increments of standard deviation
/// `std` (per unit step) for every obstacle, drawn from a stream seeded by
/// `seed`.
pub fn inject_acceleration_noise(world: &WorldState, std: f64, seed: u64) -> WorldState {
    let mut next = world.clone();
    for o in &mut next.obstacles {
        o.acceleration_noise_std = std.max(0.0);
    }
    next.noise_rng = Some(ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6521));
    next
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MazeParams {
    /// Number of circular obstacles K.
    pub obstacles: usize,
    pub velocity_level: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Obstacles lie within this lateral distance of the start-goal segment.
    pub band_half_width: f64,
    /// Free space kept around start and goal.
    pub clearance: f64,
}

impl Default for MazeParams {
    fn default() -> Self {
        Self {
            obstacles: 8,
            velocity_level: 0.0,
            radius_min: 8.0,
            radius_max: 14.0,
            band_half_width: 35.0,
            clearance: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxParams {
    pub dynamic: bool,
    pub velocity_level: f64,
    pub half_extents: Vec2,
    /// Horizontal gap between the start (or goal) and the box face.
    pub standoff_min: f64,
    pub standoff_max: f64,
    /// Start and goal heights stay this far inside the box's vertical span.
    pub inset: f64,
    /// A dynamic box slides vertically within this distance of the arena
    /// center, bouncing at both ends.
    pub travel: f64,
}

impl Default for BoxParams {
    fn default() -> Self {
        Self {
            dynamic: false,
            velocity_level: 0.0,
            half_extents: Vec2::new(10.0, 50.0),
            standoff_min: 50.0,
            standoff_max: 70.0,
            inset: 20.0,
            travel: 20.0,
        }
    }
}

const MAX_PLACEMENT_TRIES: usize = 10_000;

/// Random start/goal on opposite sides of the arena with `K` circles placed
/// in the band between them. Deterministic in `seed`.
pub fn sample_maze(seed: u64, params: &MazeParams, arena: &ArenaParams) -> Result<WorldState> {
    arena.validate()?;
    if params.radius_min <= 0.0 || params.radius_max < params.radius_min {
        return Err(Error::Config(
            "maze radii must satisfy 0 < radius_min <= radius_max".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (arena.width, arena.height);
    let margin_x = 0.1 * w;
    let mut start = Vec2::new(
        rng.random_range(0.05 * w..margin_x + 0.05 * w),
        rng.random_range(0.15 * h..0.85 * h),
    );
    let mut goal = Vec2::new(
        rng.random_range(w - margin_x - 0.05 * w..0.95 * w),
        rng.random_range(0.15 * h..0.85 * h),
    );
    if rng.random_bool(0.5) {
        std::mem::swap(&mut start, &mut goal);
    }
    let axis = goal - start;
    let normal = Vec2::new(-axis.y, axis.x) / axis.norm();

    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(params.obstacles);
    for k in 0..params.obstacles {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let r = if params.radius_max > params.radius_min {
                rng.random_range(params.radius_min..params.radius_max)
            } else {
                params.radius_min
            };
            let t = rng.random_range(0.2..0.8);
            let s = rng.random_range(-params.band_half_width..=params.band_half_width);
            let c = start + axis * t + normal * s;
            let clear_ends = (c - start).norm() > r + params.clearance && (c - goal).norm() > r + params.clearance;
            let disjoint = obstacles
                .iter()
                .all(|o| (o.center() - c).norm() > r + o.shape.extents().x);
            if clear_ends && disjoint {
                obstacles.push(Obstacle::circle(c, r));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Sampling(format!(
                "could not place obstacle {k} of {} after {MAX_PLACEMENT_TRIES} tries",
                params.obstacles
            )));
        }
    }
    if params.velocity_level > 0.0 {
        for o in &mut obstacles {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            o.velocity = Vec2::new(angle.cos(), angle.sin()) * params.velocity_level;
            let ext = o.shape.extents();
            o.travel = Some([ext, Vec2::new(w, h) - ext]);
        }
    }
    Ok(WorldState::new(Arena::new(arena.clone(), start, goal)?, obstacles))
}

/// A single box at the arena center with the start on one side and the goal
/// on the other, both at heights the box covers, so the straight path is
/// blocked. A dynamic box slides vertically at `velocity_level`.
pub fn sample_box(seed: u64, params: &BoxParams, arena: &ArenaParams) -> Result<WorldState> {
    arena.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Vec2::new(arena.width / 2.0, arena.height / 2.0);
    let ext = params.half_extents;
    let span = (ext.y - params.inset).max(0.0);
    let height = |rng: &mut ChaCha8Rng| {
        if span > 0.0 {
            center.y + rng.random_range(-span..=span)
        } else {
            center.y
        }
    };
    let standoff = |rng: &mut ChaCha8Rng| {
        if params.standoff_max > params.standoff_min {
            rng.random_range(params.standoff_min..=params.standoff_max)
        } else {
            params.standoff_min
        }
    };
    let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
    let start = Vec2::new(center.x + side * (ext.x + standoff(&mut rng)), height(&mut rng));
    let goal = Vec2::new(center.x - side * (ext.x + standoff(&mut rng)), height(&mut rng));
    let mut obstacle = Obstacle::rect(center, ext);
    if params.dynamic {
        let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        obstacle.velocity = Vec2::new(0.0, dir * params.velocity_level);
        let reach = Vec2::new(0.0, params.travel.max(0.0));
        obstacle.travel = Some([center - reach, center + reach]);
    }
    Ok(WorldState::new(Arena::new(arena.clone(), start, goal)?, vec![obstacle]))
}
