//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hipbot::bench::{run_batch, run_batch_records, MetricsRow, ScenarioConfig};
use hipbot::experts::{planar_state, rmpflow_baseline, AgentSpec, ExpertPool, ExpertSpec};
use hipbot::oracle;
use hipbot::ot::{self, CostMatrix, MassVector, SolverConfig};
use hipbot::planner::{build_cost_matrix, solve_temperatures, PlannerConfig, PlannerGeometry};
use hipbot::rmp::{blend, PulledRmp};
use hipbot::world::{Arena, ArenaParams, Context, Obstacle, Vec2, WorldState};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario(file: &str, overrides: &[&str]) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(file);
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ScenarioConfig::load(&path, &overrides).expect("scenario loads")
}

fn batch(file: &str, overrides: &[&str], rows: &mut Vec<MetricsRow>) -> MetricsRow {
    let row = run_batch(&scenario(file, overrides)).expect("batch runs");
    rows.push(row.clone());
    row
}

fn fmt(row: &MetricsRow) -> String {
    format!("SUC {:.2} SAFE {:.2}", row.suc, row.safe)
}

fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0))
}

fn lp_vs_entropic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = SolverConfig {
        lambda_entropy: 1e-3,
        max_iterations: 1_000_000,
        ..SolverConfig::default()
    };
    let marginal = vec![0.25; 4];
    let mass = MassVector::new(marginal.clone()).unwrap();
    // the brute-force LP is the reference, not part of the timed solver
    let mut elapsed = Duration::ZERO;
    let (mut worst_ratio, mut worst_err) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let c = random_cost(&mut rng, 4, 4);
        let (lp, _) = oracle::transport_lp(&c, &marginal, &marginal);
        let cost = CostMatrix::new(c).unwrap();
        let started = Instant::now();
        let plan = ot::solve_balanced(&cost, &mass, &mass, &cfg).unwrap();
        elapsed += started.elapsed();
        worst_ratio = worst_ratio.max(plan.transport_cost(&cost) / lp);
        worst_err = worst_err.max(plan.marginal_error);
    }
    outcome(
        worst_ratio <= 1.01 && worst_err <= 1e-6 && elapsed < Duration::from_secs(1),
        format!("max <P,C>/LP {worst_ratio:.6}, max marginal error {worst_err:.2e}, solver time {elapsed:.2?}"),
    )
}

fn stiff_kl_matches_balanced() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = SolverConfig {
        max_iterations: 100_000,
        tolerance: 1e-10,
        ..SolverConfig::default()
    };
    let stiff = SolverConfig { lambda_kl: 1e4, ..base };
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let cost = CostMatrix::new(random_cost(&mut rng, 3, 3)).unwrap();
        let row = MassVector::new((0..3).map(|_| rng.random_range(0.1..1.0)).collect())
            .unwrap()
            .normalized();
        let col = MassVector::new((0..3).map(|_| rng.random_range(0.1..1.0)).collect())
            .unwrap()
            .normalized();
        let balanced = ot::solve_balanced(&cost, &row, &col, &base).unwrap();
        let unbalanced = ot::solve_unbalanced(&cost, &row, &col, &stiff).unwrap();
        worst = worst.max((&balanced.entries - &unbalanced.entries).amax());
    }
    outcome(worst <= 1e-3, format!("max entrywise gap {worst:.2e}"))
}

fn blend_matches_numeric_minimum() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let terms: Vec<(DMatrix<f64>, DVector<f64>, f64)> = (0..n)
            .map(|_| {
                let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
                let m = &a * a.transpose() + DMatrix::identity(2, 2) * 0.1;
                let f = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                (m, f, rng.random_range(0.1..2.0))
            })
            .collect();
        let pulled: Vec<PulledRmp> = terms
            .iter()
            .map(|(m, f, _)| PulledRmp {
                force: f.clone(),
                metric: m.clone(),
            })
            .collect();
        let closed = blend(pulled.iter().zip(terms.iter().map(|t| t.2))).unwrap();
        let numeric = oracle::minimize_weighted_quadratic(&terms);
        worst = worst.max((closed - numeric).amax());
    }
    outcome(worst <= 1e-4, format!("max deviation {worst:.2e}"))
}

fn random_context(rng: &mut ChaCha8Rng) -> Context {
    let obstacles = (0..3)
        .map(|_| {
            Obstacle::circle(
                Vec2::new(rng.random_range(20.0..180.0), rng.random_range(20.0..180.0)),
                rng.random_range(5.0..15.0),
            )
        })
        .collect();
    Context {
        goal: Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)),
        obstacles,
    }
}

fn curls_cancel_in_uniform_blend() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let with_curls = ExpertPool::build(&ExpertSpec::default_pool(), 3, &[]).unwrap();
    let specs: Vec<ExpertSpec> = ExpertSpec::default_pool()
        .into_iter()
        .filter(|s| !matches!(s, ExpertSpec::CurlCw { .. } | ExpertSpec::CurlCcw { .. }))
        .collect();
    let without = ExpertPool::build(&specs, 3, &[]).unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let ctx = random_context(&mut rng);
        let q = Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let q_dot = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let s = planar_state(&q, &q_dot, ctx);
        let a = rmpflow_baseline(&s, &with_curls).unwrap();
        let b = rmpflow_baseline(&s, &without).unwrap();
        worst = worst.max((a - b).amax());
    }
    outcome(worst <= 1e-12, format!("max acceleration difference {worst:.2e}"))
}

fn baseline_converges_without_obstacles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let specs = [ExpertSpec::goal_attractor(), ExpertSpec::damper()];
    let pool = ExpertPool::build(&specs, 0, &[AgentSpec::default()]).unwrap();
    let params = ArenaParams::default();
    let mut settled = 0;
    let mut slowest = 0;
    for _ in 0..50 {
        let mut sample = || {
            Vec2::new(
                rng.random_range(0.0..params.width),
                rng.random_range(0.0..params.height),
            )
        };
        let (start, goal) = (sample(), sample());
        let mut world = WorldState::new(Arena::new(params.clone(), start, goal).unwrap(), Vec::new());
        for step in 0..2000 {
            if (world.q - goal).norm() < 1.0 && world.q_dot.norm() < 0.01 {
                settled += 1;
                slowest = slowest.max(step);
                break;
            }
            let s = planar_state(&world.q, &world.q_dot, world.context());
            let a = rmpflow_baseline(&s, &pool).unwrap();
            world.advance(&Vec2::new(a[0], a[1]), 1.0);
        }
    }
    outcome(
        settled == 50,
        format!("{settled}/50 settled, slowest after {slowest} steps"),
    )
}

fn static_box(rows: &mut Vec<MetricsRow>) -> (Outcome, MetricsRow) {
    let base = batch("box_static.json", &["method=rmpflow"], rows);
    let h10 = batch("box_static.json", &[], rows);
    let pass = base.suc == 0.0 && base.safe == 1.0 && h10.suc >= 0.8 && h10.safe == 1.0;
    (
        outcome(pass, format!("baseline {}, h=10 {}", fmt(&base), fmt(&h10))),
        h10,
    )
}

fn static_maze(rows: &mut Vec<MetricsRow>) -> Outcome {
    let base = batch("maze_static.json", &["method=rmpflow"], rows);
    let h10 = batch("maze_static.json", &[], rows);
    let pass = h10.suc >= 0.65 && h10.safe >= 0.95 && h10.suc >= base.suc;
    outcome(pass, format!("baseline {}, h=10 {}", fmt(&base), fmt(&h10)))
}

fn short_horizon_fails_box(rows: &mut Vec<MetricsRow>, h10: &MetricsRow, h10_pass: bool) -> Outcome {
    let h5 = batch("box_static.json", &["planner.horizon=5"], rows);
    outcome(
        h5.suc <= 0.10 && h10_pass,
        format!("h=5 {}, h=10 {}", fmt(&h5), fmt(h10)),
    )
}

fn dynamic_box(rows: &mut Vec<MetricsRow>) -> Outcome {
    let row = batch("box_dynamic.json", &["mode={\"kind\":\"sync\"}"], rows);
    outcome(
        row.suc >= 0.9 && row.safe == 1.0,
        format!("h=10 velocity 10 {}", fmt(&row)),
    )
}

fn async_does_not_help(rows: &mut Vec<MetricsRow>) -> Outcome {
    let sync = batch("maze_dynamic.json", &["mode={\"kind\":\"sync\"}"], rows);
    let default_latency = batch("maze_dynamic.json", &["mode={\"kind\":\"async\"}"], rows);
    let slow = batch("maze_dynamic.json", &["mode={\"kind\":\"async\",\"latency\":10}"], rows);
    let pass = default_latency.safe <= sync.safe && slow.safe <= sync.safe && slow.safe < sync.safe;
    outcome(
        pass,
        format!(
            "SAFE sync {:.2}, {} {:.2}, async:10 {:.2}",
            sync.safe, default_latency.mode, default_latency.safe, slow.safe
        ),
    )
}

/// Brute-force distance to a densely sampled boundary, signed by containment.
fn sdf_by_search(p: &Vec2, boundary: &[Vec2], inside: bool) -> f64 {
    let d = boundary.iter().map(|b| (p - b).norm()).fold(f64::INFINITY, f64::min);
    if inside {
        -d
    } else {
        d
    }
}

fn sdf_grid_check() -> (bool, f64) {
    let spacing = 0.25;
    let circle = Obstacle::circle(Vec2::new(90.0, 110.0), 23.0);
    let circle_boundary: Vec<Vec2> = {
        let k = (std::f64::consts::TAU * 23.0 / spacing).ceil() as usize;
        (0..k)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / k as f64;
                Vec2::new(90.0 + 23.0 * t.cos(), 110.0 + 23.0 * t.sin())
            })
            .collect()
    };
    let (c, h) = (Vec2::new(100.0, 100.0), Vec2::new(10.0, 50.0));
    let rect = Obstacle::rect(c, h);
    let mut rect_boundary = Vec::new();
    for corner in [
        (-1.0, -1.0, 1.0, 0.0),
        (1.0, -1.0, 0.0, 1.0),
        (1.0, 1.0, -1.0, 0.0),
        (-1.0, 1.0, 0.0, -1.0),
    ] {
        let from = c + Vec2::new(corner.0 * h.x, corner.1 * h.y);
        let dir = Vec2::new(corner.2, corner.3);
        let len = if corner.2 != 0.0 { 2.0 * h.x } else { 2.0 * h.y };
        let k = (len / spacing).ceil() as usize;
        rect_boundary.extend((0..k).map(|i| from + dir * (len * i as f64 / k as f64)));
    }
    let mut worst = 0.0_f64;
    for i in 0..400 {
        for j in 0..400 {
            let p = Vec2::new(i as f64 * 0.5, j as f64 * 0.5);
            let in_circle = (p - Vec2::new(90.0, 110.0)).norm() < 23.0;
            let in_rect = (p - c).abs().iter().zip(h.iter()).all(|(d, e)| d < e);
            worst = worst.max((circle.sdf(&p) - sdf_by_search(&p, &circle_boundary, in_circle)).abs());
            worst = worst.max((rect.sdf(&p) - sdf_by_search(&p, &rect_boundary, in_rect)).abs());
        }
    }
    (worst <= 0.5, worst)
}

fn properties(rows: &[MetricsRow]) -> Outcome {
    let mut failures = Vec::new();

    let cfg = scenario("maze_dynamic.json", &["seeds={\"base\":0,\"count\":8}"]);
    let untimed = |mut records: Vec<hipbot::bench::EpisodeRecord>| {
        records.iter_mut().for_each(|r| r.plan_ms_mean = 0.0);
        records
    };
    let a = untimed(run_batch_records(&cfg).unwrap());
    let b = untimed(run_batch_records(&cfg).unwrap());
    if a != b {
        failures.push("determinism");
    }

    if rows.iter().any(|r| r.suc > r.safe) {
        failures.push("SUC <= SAFE");
    }

    let (sdf_ok, sdf_err) = sdf_grid_check();
    if !sdf_ok {
        failures.push("SDF grid");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let planner = PlannerConfig::default();
    let mut beta_ok = true;
    for _ in 0..50 {
        let raw = DMatrix::from_fn(6, 1, |_, _| rng.random_range(0.0..1e3));
        let cost = CostMatrix::new(raw).unwrap();
        let solved = solve_temperatures(&cost, &planner, None, 0).unwrap();
        beta_ok &= solved.temperatures.is_positive();
    }
    let mut steps = 0;
    hipbot::bench::run_episode_with(&cfg, 3, |report| {
        steps += 1;
        beta_ok &= report.beta.iter().flatten().all(|&b| b > 0.0);
    })
    .unwrap();
    if !beta_ok || steps == 0 {
        failures.push("beta positivity");
    }

    let mut scale_gap = 0.0_f64;
    let pool = ExpertPool::build(&ExpertSpec::default_pool(), 3, &[]).unwrap();
    for _ in 0..50 {
        let ctx = random_context(&mut rng);
        let q = Vec2::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let s = planar_state(&q, &Vec2::new(1.0, -0.5), ctx);
        let pulled = pool.pulled_all(0, &s).unwrap();
        let beta: Vec<f64> = (0..pulled.len()).map(|_| rng.random_range(0.01..1.0)).collect();
        let a1 = blend(pulled.iter().zip(beta.iter().copied())).unwrap();
        let a7 = blend(pulled.iter().zip(beta.iter().map(|b| 7.0 * b))).unwrap();
        scale_gap = scale_gap.max((&a1 - &a7).amax() / a1.amax().max(1.0));
    }
    if scale_gap > 1e-9 {
        failures.push("blend scale invariance");
    }

    let world = hipbot::bench::build_world(&scenario("maze_dynamic.json", &[]), 5).unwrap();
    let pool = ExpertPool::build(&ExpertSpec::default_pool(), world.obstacles.len(), &[]).unwrap();
    let s = planar_state(&world.q, &Vec2::new(2.0, 1.0), world.context());
    let geometry = PlannerGeometry::from_arena(&world.arena.params);
    let par = build_cost_matrix(&s, &pool, &planner, &geometry).unwrap();
    let seq_cfg = PlannerConfig {
        parallel: false,
        ..planner.clone()
    };
    let seq = build_cost_matrix(&s, &pool, &seq_cfg, &geometry).unwrap();
    if par.as_matrix() != seq.as_matrix() {
        failures.push("parallel cost matrix");
    }

    let detail = if failures.is_empty() {
        format!("determinism, SUC<=SAFE over {} rows, SDF grid (max err {sdf_err:.3} px), beta positivity, blend scale invariance ({scale_gap:.1e}), parallel cost matrix", rows.len())
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn main() -> ExitCode {
    let mut rows = Vec::new();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 entropic OT vs transportation LP", lp_vs_entropic()),
        ("2 stiff-KL unbalanced vs balanced", stiff_kl_matches_balanced()),
        (
            "3 closed-form blend vs numeric minimum",
            blend_matches_numeric_minimum(),
        ),
        (
            "4 opposing curls cancel in uniform blend",
            curls_cancel_in_uniform_blend(),
        ),
        ("5 obstacle-free convergence", baseline_converges_without_obstacles()),
    ];
    let (box_outcome, h10) = static_box(&mut rows);
    let h10_pass = box_outcome.pass;
    results.push(("6 static box", box_outcome));
    results.push(("7 static maze", static_maze(&mut rows)));
    results.push((
        "8 short horizon on static box",
        short_horizon_fails_box(&mut rows, &h10, h10_pass),
    ));
    results.push(("9 dynamic box", dynamic_box(&mut rows)));
    results.push(("10 async latency on dynamic maze", async_does_not_help(&mut rows)));
    results.push(("11 property suites", properties(&rows)));

    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
