//! Scenario configs, seeded episode batches, metrics and CSV reports.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::experts::{planar_state, rmpflow_baseline, AgentSpec, ExpertPool, ExpertSpec};
use crate::planner::{ExecutionMode, Planner, PlannerConfig, PlannerGeometry, StepReport};
use crate::world::{
    inject_acceleration_noise, sample_box, sample_maze, Arena, ArenaParams, BoxParams, MazeParams, Obstacle, Vec2,
    WorldState,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Environment {
    Maze(MazeParams),
    Box(BoxParams),
    /// Hand-placed start, goal and obstacles; the seed only drives noise.
    Fixed {
        start: Vec2,
        goal: Vec2,
        #[serde(default)]
        obstacles: Vec<Obstacle>,
    },
}

impl Environment {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Maze(_) => "maze",
            Self::Box(_) => "box",
            Self::Fixed { .. } => "fixed",
        }
    }

    pub fn sample(&self, seed: u64, arena: &ArenaParams) -> Result<WorldState> {
        match self {
            Self::Maze(p) => sample_maze(seed, p, arena),
            Self::Box(p) => sample_box(seed, p, arena),
            Self::Fixed { start, goal, obstacles } => {
                let arena = Arena::new(arena.clone(), *start, *goal)?;
                Ok(WorldState::new(arena, obstacles.clone()))
            }
        }
    }

    /// Sets the obstacle speed; a box becomes dynamic for positive levels.
    pub fn set_velocity_level(&mut self, level: f64) {
        match self {
            Self::Maze(p) => p.velocity_level = level,
            Self::Box(p) => {
                p.velocity_level = level;
                p.dynamic = level > 0.0;
            }
            Self::Fixed { obstacles, .. } => {
                for o in obstacles {
                    let v = o.velocity;
                    o.velocity = if v.norm() > 0.0 { v.normalize() * level } else { v };
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rmpflow,
    #[default]
    Hipbot,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Rmpflow => "rmpflow",
            Self::Hipbot => "hipbot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { base: u64, count: u64 },
}

impl Default for Seeds {
    fn default() -> Self {
        Self::Range { base: 0, count: 100 }
    }
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Self::List(v) => v.clone(),
            Self::Range { base, count } => (*base..base + count).collect(),
        }
    }
}

fn default_experts() -> Vec<ExpertSpec> {
    ExpertSpec::default_pool()
}

/// One scenario file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub arena: ArenaParams,
    pub environment: Environment,
    #[serde(default = "default_experts")]
    pub experts: Vec<ExpertSpec>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub mode: ExecutionMode,
    #[serde(default)]
    pub seeds: Seeds,
    /// Brownian obstacle acceleration, px/step².
    #[serde(default)]
    pub noise_std: f64,
}

impl ScenarioConfig {
    pub fn new(environment: Environment, method: Method) -> Self {
        Self {
            version: CONFIG_VERSION,
            name: None,
            arena: ArenaParams::default(),
            environment,
            experts: default_experts(),
            agents: Vec::new(),
            method,
            planner: PlannerConfig::default(),
            mode: ExecutionMode::Sync,
            seeds: Seeds::default(),
            noise_std: 0.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a scenario file and applies `path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.arena.validate()?;
        self.planner.validate()?;
        if self.experts.is_empty() {
            return Err(Error::Config("expert pool is empty".into()));
        }
        if self.seeds.to_vec().is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Horizon column of the metrics table; 0 for the myopic baseline.
    pub fn horizon_label(&self) -> usize {
        match self.method {
            Method::Rmpflow => 0,
            Method::Hipbot => self.planner.horizon,
        }
    }

    pub fn mode_label(&self) -> String {
        match (self.method, self.mode) {
            (Method::Rmpflow, _) | (_, ExecutionMode::Sync) => "sync".into(),
            (_, ExecutionMode::Async { latency }) => {
                format!("async:{}", latency.unwrap_or_else(|| self.planner.default_latency()))
            }
        }
    }
}

/// Sets the dotted `path` in a JSON document to `value`, parsed as JSON when
/// possible and as a string otherwise. Missing objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (k, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Error::Config(format!("override path `{path}` has an empty segment")));
        }
        let last = k + 1 == keys.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert((*key).to_owned(), value);
                    return Ok(());
                }
                map.entry(*key).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = key
                    .parse()
                    .map_err(|_| Error::Config(format!("override segment `{key}` must index an array")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Config(format!("override index {idx} is out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("override path `{path}` runs through a scalar"))),
        };
    }
    Ok(())
}

/// One row of the trajectory dump.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub q: Vec2,
    pub q_dot: Vec2,
    pub min_sdf: f64,
    pub collided: bool,
    pub reached: bool,
    pub centers: Vec<Vec2>,
}

impl TrajectoryRow {
    fn of(world: &WorldState) -> Self {
        Self {
            step: world.step,
            q: world.q,
            q_dot: world.q_dot,
            min_sdf: world.min_sdf(),
            collided: world.collided,
            reached: world.reached_goal,
            centers: world.obstacles.iter().map(Obstacle::center).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    /// Reached the goal and never collided.
    pub success: bool,
    /// Never collided.
    pub safe: bool,
    /// Reached the goal, collisions or not.
    pub reached: bool,
    /// Arrival step on success, the episode cap otherwise.
    pub ts: usize,
    /// Final distance to the goal, px.
    pub d2g: f64,
    pub plan_ms_mean: f64,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Builds the seeded world for a scenario, noise included.
pub fn build_world(config: &ScenarioConfig, seed: u64) -> Result<WorldState> {
    let world = config.environment.sample(seed, &config.arena)?;
    Ok(if config.noise_std > 0.0 {
        inject_acceleration_noise(&world, config.noise_std, seed)
    } else {
        world
    })
}

/// Runs one episode until the goal is reached or the cap is hit. Collisions
/// are recorded but do not end the episode.
pub fn run_episode(config: &ScenarioConfig, seed: u64) -> Result<EpisodeRecord> {
    run_episode_with(config, seed, |_| {}).map_err(|e| Error::Episode {
        seed,
        source: Box::new(e),
    })
}

/// As [`run_episode`], handing every planner step report to `on_step`.
pub fn run_episode_with(
    config: &ScenarioConfig,
    seed: u64,
    mut on_step: impl FnMut(&StepReport),
) -> Result<EpisodeRecord> {
    let mut episode = Episode::new(config, seed)?;
    while !episode.is_done() {
        if let Some(report) = episode.step()? {
            on_step(&report);
        }
    }
    Ok(episode.finish())
}

/// A seeded episode advanced one control step at a time.
pub struct Episode {
    seed: u64,
    cap: usize,
    world: WorldState,
    pool: ExpertPool,
    planner: Option<Planner>,
    trajectory: Vec<TrajectoryRow>,
}

impl Episode {
    pub fn new(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let world = build_world(config, seed)?;
        let pool = ExpertPool::build(&config.experts, world.obstacles.len(), &config.agents)?;
        let planner = match config.method {
            Method::Hipbot => Some(Planner::new(
                pool.clone(),
                config.planner.clone(),
                config.mode,
                PlannerGeometry::from_arena(&config.arena),
            )?),
            Method::Rmpflow => None,
        };
        let cap = config.arena.episode_cap;
        let mut trajectory = Vec::with_capacity(cap + 1);
        trajectory.push(TrajectoryRow::of(&world));
        Ok(Self {
            seed,
            cap,
            world,
            pool,
            planner,
            trajectory,
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    /// Goal reached or step cap hit. Collisions do not end an episode.
    pub fn is_done(&self) -> bool {
        self.world.step >= self.cap || self.world.reached_goal
    }

    /// Acts once and advances the world. The report is `None` for the
    /// baseline, which has no planner. Stepping a finished episode is a no-op.
    pub fn step(&mut self) -> Result<Option<StepReport>> {
        if self.is_done() {
            return Ok(None);
        }
        let (action, report) = match self.planner.as_mut() {
            Some(p) => {
                let (a, report) = p.step(&self.world)?;
                (a, Some(report))
            }
            None => {
                let s = planar_state(&self.world.q, &self.world.q_dot, self.world.context());
                let a = rmpflow_baseline(&s, &self.pool)?;
                (Vec2::new(a[0], a[1]), None)
            }
        };
        self.world.advance(&action, 1.0);
        self.trajectory.push(TrajectoryRow::of(&self.world));
        Ok(report)
    }

    /// Scores the episode as it stands.
    pub fn finish(self) -> EpisodeRecord {
        let world = &self.world;
        let success = world.reached_goal && !world.collided;
        EpisodeRecord {
            seed: self.seed,
            success,
            safe: !world.collided,
            reached: world.reached_goal,
            ts: if success { world.step } else { self.cap },
            d2g: world.distance_to_goal(),
            plan_ms_mean: self.planner.as_ref().map_or(0.0, Planner::mean_plan_ms),
            trajectory: self.trajectory,
        }
    }
}

/// Runs every seed of the scenario in parallel; records come back sorted
/// by seed. The first failing episode aborts the batch.
pub fn run_batch_records(config: &ScenarioConfig) -> Result<Vec<EpisodeRecord>> {
    config.validate()?;
    let mut seeds = config.seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    let mut records = seeds
        .par_iter()
        .map(|&seed| run_episode(config, seed))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| r.seed);
    Ok(records)
}

pub fn run_batch(config: &ScenarioConfig) -> Result<MetricsRow> {
    let records = run_batch_records(config)?;
    Ok(MetricsRow::from_records(
        config.method.label(),
        config.horizon_label(),
        &config.mode_label(),
        config.environment.label(),
        &records,
    ))
}

/// Aggregated metrics of one batch. Standard deviations are population
/// deviations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub horizon: usize,
    pub mode: String,
    pub env: String,
    pub seeds: usize,
    #[serde(rename = "SUC")]
    pub suc: f64,
    #[serde(rename = "SAFE")]
    pub safe: f64,
    #[serde(rename = "D2G_mean")]
    pub d2g_mean: f64,
    #[serde(rename = "D2G_std")]
    pub d2g_std: f64,
    #[serde(rename = "TS_mean")]
    pub ts_mean: f64,
    #[serde(rename = "TS_std")]
    pub ts_std: f64,
    pub plan_ms_mean: f64,
    #[serde(skip)]
    pub goal_any: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fraction(records: &[EpisodeRecord], pred: impl Fn(&EpisodeRecord) -> bool) -> f64 {
    if records.is_empty() {
        0.0
    } else {
        records.iter().filter(|r| pred(r)).count() as f64 / records.len() as f64
    }
}

impl MetricsRow {
    pub fn from_records(method: &str, horizon: usize, mode: &str, env: &str, records: &[EpisodeRecord]) -> Self {
        let (d2g_mean, d2g_std) = mean_std(records.iter().map(|r| r.d2g));
        let (ts_mean, ts_std) = mean_std(records.iter().map(|r| r.ts as f64));
        let (plan_ms_mean, _) = mean_std(records.iter().map(|r| r.plan_ms_mean));
        Self {
            method: method.to_owned(),
            horizon,
            mode: mode.to_owned(),
            env: env.to_owned(),
            seeds: records.len(),
            suc: fraction(records, |r| r.success),
            safe: fraction(records, |r| r.safe),
            d2g_mean,
            d2g_std,
            ts_mean,
            ts_std,
            plan_ms_mean,
            goal_any: fraction(records, |r| r.reached),
        }
    }

    /// Copy with the wall-clock column zeroed, for byte-reproducible output.
    pub fn without_timing(&self) -> Self {
        Self {
            plan_ms_mean: 0.0,
            ..self.clone()
        }
    }
}

pub const METRICS_HEADER: [&str; 12] = [
    "method",
    "horizon",
    "mode",
    "env",
    "seeds",
    "SUC",
    "SAFE",
    "D2G_mean",
    "D2G_std",
    "TS_mean",
    "TS_std",
    "plan_ms_mean",
];

fn metrics_fields(row: &MetricsRow) -> Vec<String> {
    vec![
        row.method.clone(),
        row.horizon.to_string(),
        row.mode.clone(),
        row.env.clone(),
        row.seeds.to_string(),
        row.suc.to_string(),
        row.safe.to_string(),
        row.d2g_mean.to_string(),
        row.d2g_std.to_string(),
        row.ts_mean.to_string(),
        row.ts_std.to_string(),
        row.plan_ms_mean.to_string(),
    ]
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(metrics_fields(row))?;
    }
    w.flush()?;
    Ok(())
}

/// One cell of a stress sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct StressRow {
    pub velocity: f64,
    pub noise: f64,
    pub metrics: MetricsRow,
}

/// Runs the scenario for every (velocity, noise) pair, velocity-major.
pub fn stress_sweep(config: &ScenarioConfig, velocities: &[f64], noises: &[f64]) -> Result<Vec<StressRow>> {
    if velocities.is_empty() || noises.is_empty() {
        return Err(Error::Config(
            "stress sweep needs at least one velocity and one noise level".into(),
        ));
    }
    let mut rows = Vec::with_capacity(velocities.len() * noises.len());
    for &velocity in velocities {
        for &noise in noises {
            let mut cell = config.clone();
            cell.environment.set_velocity_level(velocity);
            cell.noise_std = noise;
            rows.push(StressRow {
                velocity,
                noise,
                metrics: run_batch(&cell)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_stress_csv<W: Write>(out: W, rows: &[StressRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["velocity", "noise"];
    header.extend(METRICS_HEADER);
    header.push("GOAL_ANY");
    w.write_record(&header)?;
    for row in rows {
        let mut fields = vec![row.velocity.to_string(), row.noise.to_string()];
        fields.extend(metrics_fields(&row.metrics));
        fields.push(row.metrics.goal_any.to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// `step,qx,qy,vx,vy,min_sdf,collided,reached,cx0,cy0,…`
pub fn write_trajectory_csv<W: Write>(out: W, trajectory: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let obstacles = trajectory.first().map_or(0, |r| r.centers.len());
    let mut header: Vec<String> = ["step", "qx", "qy", "vx", "vy", "min_sdf", "collided", "reached"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for k in 0..obstacles {
        header.push(format!("cx{k}"));
        header.push(format!("cy{k}"));
    }
    w.write_record(&header)?;
    for r in trajectory {
        let mut fields = vec![
            r.step.to_string(),
            r.q.x.to_string(),
            r.q.y.to_string(),
            r.q_dot.x.to_string(),
            r.q_dot.y.to_string(),
            r.min_sdf.to_string(),
            u8::from(r.collided).to_string(),
            u8::from(r.reached).to_string(),
        ];
        for c in &r.centers {
            fields.push(c.x.to_string());
            fields.push(c.y.to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
