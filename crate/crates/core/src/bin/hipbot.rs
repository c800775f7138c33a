use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hipbot::bench::{
    run_batch, run_episode_with, stress_sweep, write_metrics_csv, write_stress_csv, write_trajectory_csv,
    ScenarioConfig,
};
use hipbot::oracle;
use hipbot::ot::{self, CostMatrix, MassVector, SolverConfig};
use hipbot::rmp::{blend, PulledRmp};
use hipbot::Result;

/// Hierarchical policy blending benchmark for planar navigation.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Scenario file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set planner.horizon=5`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and optionally dump its trajectory.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// World and noise seed
        #[arg(long)]
        seed: u64,
        /// Trajectory CSV, one row per step
        #[arg(long)]
        dump_traj: Option<PathBuf>,
        /// Per-step cost matrices and temperatures as JSON lines.
        #[arg(long)]
        debug: Option<PathBuf>,
    },
    /// Run every seed of a scenario and write the metrics row.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Metrics CSV
        #[arg(long)]
        out: PathBuf,
        /// Write 0 for planning time so output is reproducible byte for byte.
        #[arg(long)]
        no_timing: bool,
    },
    /// Sweep obstacle velocity and acceleration-noise levels.
    Stress {
        #[command(flatten)]
        config: ConfigArgs,
        /// Obstacle velocity levels, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        velocities: Vec<f64>,
        /// Std of the per-step velocity noise, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        noises: Vec<f64>,
        /// Long-format CSV, one row per cell
        #[arg(long)]
        out: PathBuf,
        /// Write 0 for planning time
        #[arg(long)]
        no_timing: bool,
    },
    /// Print reference values from the exact oracles.
    Oracle {
        /// Seed for the random oracle instances
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            dump_traj,
            debug,
        } => {
            let cfg = ScenarioConfig::load(&config.config, &config.overrides)?;
            let mut debug_out = debug.as_deref().map(create).transpose()?;
            let mut debug_err = None;
            let record = run_episode_with(&cfg, seed, |report| {
                if let Some(out) = debug_out.as_mut() {
                    let written = serde_json::to_writer(&mut *out, report)
                        .map_err(hipbot::Error::from)
                        .and_then(|()| writeln!(out).map_err(hipbot::Error::from));
                    if let Err(e) = written {
                        debug_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = debug_err {
                return Err(e);
            }
            if let Some(mut out) = debug_out {
                out.flush()?;
            }
            if let Some(path) = dump_traj {
                write_trajectory_csv(create(&path)?, &record.trajectory)?;
            }
            println!(
                "seed={} success={} safe={} reached={} TS={} D2G={:.3} plan_ms={:.3}",
                record.seed, record.success, record.safe, record.reached, record.ts, record.d2g, record.plan_ms_mean
            );
        }
        Command::Bench { config, out, no_timing } => {
            let cfg = ScenarioConfig::load(&config.config, &config.overrides)?;
            let mut row = run_batch(&cfg)?;
            if no_timing {
                row = row.without_timing();
            }
            write_metrics_csv(create(&out)?, std::slice::from_ref(&row))?;
            write_metrics_csv(io::stdout().lock(), &[row])?;
        }
        Command::Stress {
            config,
            velocities,
            noises,
            out,
            no_timing,
        } => {
            let cfg = ScenarioConfig::load(&config.config, &config.overrides)?;
            let mut rows = stress_sweep(&cfg, &velocities, &noises)?;
            if no_timing {
                for r in &mut rows {
                    r.metrics = r.metrics.without_timing();
                }
            }
            write_stress_csv(create(&out)?, &rows)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Oracle { seed } => print_oracles(seed)?,
    }
    Ok(())
}

fn print_oracles(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4;
    let cost = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0));
    let marginal = vec![1.0 / n as f64; n];
    let (lp, _) = oracle::transport_lp(&cost, &marginal, &marginal);
    let cfg = SolverConfig {
        lambda_entropy: 1e-3,
        max_iterations: 100_000,
        tolerance: 1e-9,
        ..SolverConfig::default()
    };
    let mass = MassVector::new(marginal.clone())?;
    let c = CostMatrix::new(cost.clone())?;
    let plan = ot::solve_balanced(&c, &mass, &mass, &cfg)?;
    println!("transport LP optimum (4x4, seed {seed}): {lp:.12}");
    println!(
        "assignment / n:                     {:.12}",
        oracle::assignment_bruteforce(&cost) / n as f64
    );
    println!(
        "entropic plan cost (lambda=1e-3):    {:.12} ({} iterations)",
        plan.transport_cost(&c),
        plan.iterations
    );

    let terms: Vec<(DMatrix<f64>, DVector<f64>, f64)> = (0..3)
        .map(|_| {
            let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
            let m = &a * a.transpose() + DMatrix::identity(2, 2) * 0.1;
            let f = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            (m, f, rng.random_range(0.1..2.0))
        })
        .collect();
    let numeric = oracle::minimize_weighted_quadratic(&terms);
    let pulled: Vec<PulledRmp> = terms
        .iter()
        .map(|(m, f, _)| PulledRmp {
            force: f.clone(),
            metric: m.clone(),
        })
        .collect();
    let closed = blend(pulled.iter().zip(terms.iter().map(|t| t.2)))?;
    println!(
        "blend by gradient descent:          [{:.12}, {:.12}]",
        numeric[0], numeric[1]
    );
    println!(
        "blend in closed form:               [{:.12}, {:.12}]",
        closed[0], closed[1]
    );
    Ok(())
}
