//! C ABI over the `hipbot` crate.
//!
//! Every fallible call returns a [`HipbotStatus`]; on anything but
//! `HIPBOT_STATUS_OK` a message is available from [`hipbot_last_error`] on
//! the same thread until the next call. Scenarios and episodes are opaque
//! handles owned by the caller and released with their `_free` function.
//! Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hipbot::bench::{apply_override, run_batch, run_episode, Episode, EpisodeRecord, MetricsRow, ScenarioConfig};
use hipbot::ot::{self, CostMatrix, MassVector, SolverConfig, TransportPlan};
use hipbot::world::WorldState;
use hipbot::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HipbotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Solver = 5,
    Simulation = 6,
    Io = 7,
    Panic = 8,
}

/// A validated scenario configuration.
pub struct HipbotScenario {
    config: ScenarioConfig,
}

/// A running episode, advanced one control step at a time.
pub struct HipbotEpisode {
    inner: Episode,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HipbotAgentState {
    pub step: usize,
    pub qx: f64,
    pub qy: f64,
    pub vx: f64,
    pub vy: f64,
    /// Signed distance from the agent center to the nearest obstacle.
    pub min_sdf: f64,
    pub distance_to_goal: f64,
    pub collided: bool,
    pub reached: bool,
    /// Goal reached or step cap hit.
    pub done: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HipbotEpisodeResult {
    pub seed: u64,
    pub success: bool,
    pub safe: bool,
    pub reached: bool,
    pub ts: usize,
    pub d2g: f64,
    pub plan_ms_mean: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HipbotMetrics {
    pub seeds: usize,
    pub suc: f64,
    pub safe: f64,
    pub goal_any: f64,
    pub d2g_mean: f64,
    pub d2g_std: f64,
    pub ts_mean: f64,
    pub ts_std: f64,
    pub plan_ms_mean: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HipbotSolveInfo {
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm deviation of the plan marginals from the targets.
    pub marginal_error: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(HipbotStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidMass(_)
            | Error::InvalidCost(_)
            | Error::Dimension(_)
            | Error::MassMismatch { .. }
            | Error::KlUndefined { .. } => HipbotStatus::InvalidArgument,
            Error::SolverConfig(_) | Error::Overflow => HipbotStatus::Solver,
            Error::Config(_) | Error::Json(_) => HipbotStatus::Config,
            Error::Io(_) | Error::Csv(_) => HipbotStatus::Io,
            _ => HipbotStatus::Simulation,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HipbotStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `body`, turning errors and panics into a status plus a message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> HipbotStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => HipbotStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            HipbotStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(HipbotStatus::InvalidUtf8, format!("`{what}` is not UTF-8: {e}")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn doubles<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn agent_state(world: &WorldState, done: bool) -> HipbotAgentState {
    HipbotAgentState {
        step: world.step,
        qx: world.q.x,
        qy: world.q.y,
        vx: world.q_dot.x,
        vy: world.q_dot.y,
        min_sdf: world.min_sdf(),
        distance_to_goal: world.distance_to_goal(),
        collided: world.collided,
        reached: world.reached_goal,
        done,
    }
}

impl From<&EpisodeRecord> for HipbotEpisodeResult {
    fn from(r: &EpisodeRecord) -> Self {
        Self {
            seed: r.seed,
            success: r.success,
            safe: r.safe,
            reached: r.reached,
            ts: r.ts,
            d2g: r.d2g,
            plan_ms_mean: r.plan_ms_mean,
        }
    }
}

impl From<&MetricsRow> for HipbotMetrics {
    fn from(r: &MetricsRow) -> Self {
        Self {
            seeds: r.seeds,
            suc: r.suc,
            safe: r.safe,
            goal_any: r.goal_any,
            d2g_mean: r.d2g_mean,
            d2g_std: r.d2g_std,
            ts_mean: r.ts_mean,
            ts_std: r.ts_std,
            plan_ms_mean: r.plan_ms_mean,
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hipbot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn hipbot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a scenario from JSON text.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hipbot_scenario_from_json(
    json: *const c_char,
    out_scenario: *mut *mut HipbotScenario,
) -> HipbotStatus {
    guard(|| {
        let slot = out(out_scenario, "out_scenario")?;
        let config = ScenarioConfig::from_json(text(json, "json")?)?;
        *slot = Box::into_raw(Box::new(HipbotScenario { config }));
        Ok(())
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hipbot_scenario_load(
    path: *const c_char,
    out_scenario: *mut *mut HipbotScenario,
) -> HipbotStatus {
    guard(|| {
        let slot = out(out_scenario, "out_scenario")?;
        let config = ScenarioConfig::load(Path::new(text(path, "path")?), &[])?;
        *slot = Box::into_raw(Box::new(HipbotScenario { config }));
        Ok(())
    })
}

/// Applies one `path=value` override, e.g. `planner.horizon=5`. The
/// scenario is left unchanged if the result does not validate.
///
/// # Safety
/// `scenario` must come from this library; `assignment` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hipbot_scenario_set(scenario: *mut HipbotScenario, assignment: *const c_char) -> HipbotStatus {
    guard(|| {
        let scenario = out(scenario, "scenario")?;
        let mut doc = serde_json::to_value(&scenario.config).map_err(Error::from)?;
        apply_override(&mut doc, text(assignment, "assignment")?)?;
        scenario.config = ScenarioConfig::from_value(doc)?;
        Ok(())
    })
}

/// Writes the scenario as JSON into `buffer` (NUL-terminated) and its full
/// length, excluding the NUL, into `out_len`. Pass a NULL buffer to query
/// the length; a short buffer is an error and is left untouched.
///
/// # Safety
/// `buffer` must hold `capacity` bytes when non-NULL.
#[no_mangle]
pub unsafe extern "C" fn hipbot_scenario_to_json(
    scenario: *const HipbotScenario,
    buffer: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> HipbotStatus {
    guard(|| {
        let json = input(scenario, "scenario")?.config.to_json()?;
        *out(out_len, "out_len")? = json.len();
        if buffer.is_null() {
            return Ok(());
        }
        if capacity <= json.len() {
            return Err(Failure(
                HipbotStatus::InvalidArgument,
                format!("buffer holds {capacity} bytes, {} needed", json.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(json.as_ptr(), buffer.cast::<u8>(), json.len());
        *buffer.add(json.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hipbot_scenario_free(scenario: *mut HipbotScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs one full episode.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hipbot_run_episode(
    scenario: *const HipbotScenario,
    seed: u64,
    out_result: *mut HipbotEpisodeResult,
) -> HipbotStatus {
    guard(|| {
        let config = &input(scenario, "scenario")?.config;
        let slot = out(out_result, "out_result")?;
        *slot = (&run_episode(config, seed)?).into();
        Ok(())
    })
}

/// Runs every seed of the scenario and aggregates the metrics.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hipbot_run_batch(
    scenario: *const HipbotScenario,
    out_metrics: *mut HipbotMetrics,
) -> HipbotStatus {
    guard(|| {
        let config = &input(scenario, "scenario")?.config;
        let slot = out(out_metrics, "out_metrics")?;
        *slot = (&run_batch(config)?).into();
        Ok(())
    })
}

/// Starts an episode; the scenario may be freed afterwards.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hipbot_episode_new(
    scenario: *const HipbotScenario,
    seed: u64,
    out_episode: *mut *mut HipbotEpisode,
) -> HipbotStatus {
    guard(|| {
        let config = &input(scenario, "scenario")?.config;
        let slot = out(out_episode, "out_episode")?;
        let inner = Episode::new(config, seed)?;
        *slot = Box::into_raw(Box::new(HipbotEpisode { inner }));
        Ok(())
    })
}

/// Current agent state without stepping.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hipbot_episode_state(
    episode: *const HipbotEpisode,
    out_state: *mut HipbotAgentState,
) -> HipbotStatus {
    guard(|| {
        let e = &input(episode, "episode")?.inner;
        *out(out_state, "out_state")? = agent_state(e.world(), e.is_done());
        Ok(())
    })
}

/// Plans, acts and advances the world by one step, then reports the new
/// state. Stepping a finished episode leaves it unchanged.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hipbot_episode_step(
    episode: *mut HipbotEpisode,
    out_state: *mut HipbotAgentState,
) -> HipbotStatus {
    guard(|| {
        let e = &mut out(episode, "episode")?.inner;
        let slot = out(out_state, "out_state")?;
        e.step()?;
        *slot = agent_state(e.world(), e.is_done());
        Ok(())
    })
}

/// Scores the episode as it stands and frees it, whatever the status.
///
/// # Safety
/// `episode` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hipbot_episode_finish(
    episode: *mut HipbotEpisode,
    out_result: *mut HipbotEpisodeResult,
) -> HipbotStatus {
    guard(|| {
        if episode.is_null() {
            return Err(null("episode"));
        }
        let e = Box::from_raw(episode);
        let slot = out(out_result, "out_result")?;
        *slot = (&e.inner.finish()).into();
        Ok(())
    })
}

/// # Safety
/// `episode` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hipbot_episode_free(episode: *mut HipbotEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}

#[allow(clippy::too_many_arguments)]
unsafe fn solve(
    cost: *const f64,
    n: usize,
    m: usize,
    row: *const f64,
    col: *const f64,
    cfg: SolverConfig,
    out_plan: *mut f64,
    out_info: *mut HipbotSolveInfo,
    run: fn(&CostMatrix, &MassVector, &MassVector, &SolverConfig) -> hipbot::Result<TransportPlan>,
) -> HipbotStatus {
    guard(|| {
        if n == 0 || m == 0 {
            return Err(Failure(HipbotStatus::InvalidArgument, "empty cost matrix".into()));
        }
        if out_plan.is_null() {
            return Err(null("out_plan"));
        }
        let c = CostMatrix::new(DMatrix::from_row_slice(n, m, doubles(cost, n * m, "cost")?))?;
        let r = MassVector::new(doubles(row, n, "row")?.to_vec())?;
        let k = MassVector::new(doubles(col, m, "col")?.to_vec())?;
        let plan = run(&c, &r, &k, &cfg)?;
        let dest = std::slice::from_raw_parts_mut(out_plan, n * m);
        for i in 0..n {
            for j in 0..m {
                dest[i * m + j] = plan.entries[(i, j)];
            }
        }
        if let Some(info) = out_info.as_mut() {
            *info = HipbotSolveInfo {
                iterations: plan.iterations,
                converged: plan.converged,
                marginal_error: plan.marginal_error,
            };
        }
        Ok(())
    })
}

/// Balanced entropic OT. `cost` and `out_plan` are row-major `n × m`;
/// `row` has `n` entries and `col` has `m`, with equal totals. `out_info`
/// may be NULL.
///
/// # Safety
/// Arrays must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn hipbot_solve_balanced(
    cost: *const f64,
    n: usize,
    m: usize,
    row: *const f64,
    col: *const f64,
    lambda: f64,
    max_iterations: usize,
    tolerance: f64,
    out_plan: *mut f64,
    out_info: *mut HipbotSolveInfo,
) -> HipbotStatus {
    let cfg = SolverConfig {
        lambda_entropy: lambda,
        max_iterations,
        tolerance,
        ..SolverConfig::default()
    };
    solve(cost, n, m, row, col, cfg, out_plan, out_info, ot::solve_balanced)
}

/// Unbalanced entropic OT against positive priors `row` and `col`, with
/// marginal KL weight `lambda_kl`. Layout as [`hipbot_solve_balanced`].
///
/// # Safety
/// Arrays must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn hipbot_solve_unbalanced(
    cost: *const f64,
    n: usize,
    m: usize,
    row: *const f64,
    col: *const f64,
    lambda: f64,
    lambda_kl: f64,
    max_iterations: usize,
    tolerance: f64,
    out_plan: *mut f64,
    out_info: *mut HipbotSolveInfo,
) -> HipbotStatus {
    let cfg = SolverConfig {
        lambda_entropy: lambda,
        lambda_kl,
        max_iterations,
        tolerance,
        ..SolverConfig::default()
    };
    solve(cost, n, m, row, col, cfg, out_plan, out_info, ot::solve_unbalanced)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_sets_and_success_clears_last_error() {
        let status = unsafe { hipbot_scenario_from_json(ptr::null(), &mut ptr::null_mut()) };
        assert_eq!(status, HipbotStatus::NullPointer);
        assert!(!hipbot_last_error().is_null());
        let ok = guard(|| Ok(()));
        assert_eq!(ok, HipbotStatus::Ok);
        assert!(hipbot_last_error().is_null());
    }

    #[test]
    fn panics_become_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, HipbotStatus::Panic);
        let msg = unsafe { CStr::from_ptr(hipbot_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn errors_map_to_statuses() {
        let cases = [
            (Error::InvalidMass("x".into()), HipbotStatus::InvalidArgument),
            (Error::Overflow, HipbotStatus::Solver),
            (Error::Config("x".into()), HipbotStatus::Config),
            (Error::Sampling("x".into()), HipbotStatus::Simulation),
        ];
        for (e, status) in cases {
            assert_eq!(Failure::from(e).0, status);
        }
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(hipbot_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
