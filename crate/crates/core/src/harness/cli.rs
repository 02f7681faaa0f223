use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::bounds;
use crate::dynamics::{self, Trajectory};
use crate::error::{Result, SysIdError};
use crate::estimator;
use crate::noise;

use super::campaign;
use super::config::ExperimentConfig;
use super::sensitivity;

/// Fallback for `--threads`.
pub const THREADS_ENV: &str = "UNSTABLE_SYSID_THREADS";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";

#[derive(Debug, Parser)]
#[command(name = "unstable-sysid", version, about = "Least-squares identification of stable, explosive and mixed linear systems")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `outputs`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: UNSTABLE_SYSID_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one trajectory and write it as CSV.
    Simulate {
        #[arg(long)]
        horizon: Option<usize>,
        /// Omit the noise columns.
        #[arg(long)]
        no_noise: bool,
    },
    /// Least-squares estimate from a simulated or given trajectory.
    Estimate {
        /// Trajectory CSV to read instead of simulating.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Number of transitions used (default: all).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Print the sample-size prescription with all constants.
    Bounds,
    /// Run the Monte Carlo campaign.
    Montecarlo,
    /// Closed-loop sensitivity scan.
    Sensitivity,
    /// Compare empirical noise tails with the declared tail bound.
    CheckTails {
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| SysIdError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.outputs = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_count(cli: &Cli) -> Result<Option<usize>> {
    let n = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| SysIdError::Config(format!("{THREADS_ENV}={v:?}: {e}")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(SysIdError::Config("thread count must be at least 1".into()));
    }
    Ok(n)
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| SysIdError::Numeric(e.to_string()))?;
    writeln!(out, "{s}")?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| SysIdError::Numeric(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn simulate(cli: &Cli, horizon: Option<usize>, no_noise: bool, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let spec = cfg.system_spec()?;
    let n = match horizon {
        Some(n) => n,
        None => cfg.horizon()?,
    };
    std::fs::create_dir_all(&cfg.outputs)?;
    let traj = dynamics::simulate(&spec, n, cfg.master_seed)?;
    let path = cfg.outputs.join(TRAJECTORY_CSV);
    traj.write_csv(&path, !no_noise)?;
    print_json(
        out,
        &serde_json::json!({
            "trajectory": path,
            "horizon": traj.horizon(),
            "overflowed_at": traj.overflowed_at,
        }),
    )
}

fn estimate(cli: &Cli, input: Option<&Path>, n: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let (traj, a0, ridge) = match input {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let traj = Trajectory::from_csv(&text)?;
            let (a0, ridge) = match &cli.config {
                Some(_) => {
                    let cfg = load_config(cli)?;
                    (Some(cfg.system_spec()?.a0), cfg.ridge)
                }
                None => (None, 0.0),
            };
            (traj, a0, ridge)
        }
        None => {
            let cfg = load_config(cli)?;
            let spec = cfg.system_spec()?;
            let traj = dynamics::simulate(&spec, cfg.horizon()?, cfg.master_seed)?;
            (traj, Some(spec.a0), cfg.ridge)
        }
    };
    let n = n.unwrap_or(traj.horizon());
    let mut report = estimator::ols(&traj, n, ridge)?;
    if let Some(a0) = &a0 {
        report = report.with_truth(a0);
    }
    let record = report.record();
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("estimate.json"), &record)?;
    }
    print_json(out, &record)
}

fn bounds_cmd(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let spec = cfg.system_spec()?;
    let report = bounds::bound_report(&spec, cfg.epsilon, cfg.delta, &cfg.bounds.opts(cfg.master_seed))?;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("bounds.json"), &report)?;
    }
    print_json(out, &report)
}

fn montecarlo(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let (report, _) = campaign::run_montecarlo(&cfg)?;
    if let Some(e) = &report.fit_error {
        writeln!(err, "warning: no decay fit: {e}")?;
    }
    if let Some(e) = &report.bound_error {
        writeln!(err, "warning: no prescribed sample size: {e}")?;
    }
    print_json(out, &report.summary())
}

fn sensitivity_cmd(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let scfg = cfg
        .sensitivity
        .as_ref()
        .ok_or_else(|| SysIdError::Config("config has no `sensitivity` section".into()))?;
    let run = sensitivity::run_sensitivity(scfg, cfg.master_seed)?;
    let report = sensitivity::sensitivity_report(&run.curve, &cfg.outputs)?;
    print_json(
        out,
        &serde_json::json!({
            "candidate": run.candidate,
            "nominal_lambda_max": report.nominal_lambda_max,
            "crossing": report.crossing,
            "csv": report.csv_path,
            "plot_data": report.plot_path,
        }),
    )
}

/// Ten thresholds up to the level where the declared bound is 1e-4.
pub fn default_tail_grid(tail: &noise::TailParams) -> Vec<f64> {
    let top = match tail.bound {
        Some(b) => b,
        None => (tail.c2 * (tail.c1 * 1e4).ln()).powf(1.0 / tail.alpha),
    };
    (1..=10).map(|k| top * k as f64 / 10.0).collect()
}

fn check_tails(cli: &Cli, samples: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(cli)?;
    let spec = cfg.system_spec()?;
    let tcfg = cfg.tails.clone().unwrap_or_default();
    let m = samples.unwrap_or(tcfg.samples);
    if m == 0 {
        return Err(SysIdError::Config("samples must be at least 1".into()));
    }
    let grid = match &tcfg.grid {
        Some(g) => g.clone(),
        None => default_tail_grid(&spec.noise.tail),
    };
    let report = tail_report(&spec.noise, m, &grid, cfg.master_seed)?;
    print_json(out, &report)?;
    if !report.pass {
        return Err(SysIdError::Numeric("empirical tail exceeds the declared bound".into()));
    }
    Ok(())
}

/// Draws `m` noise vectors on the stream `(seed, 0x7a11, 0)` and checks them.
pub fn tail_report(model: &noise::NoiseModel, m: usize, grid: &[f64], seed: u64) -> Result<noise::TailReport> {
    let mut rng = noise::trial_rng(seed, 0x7a11, 0);
    let draws: Vec<_> = (0..m).map(|_| model.sample(&mut rng)).collect();
    noise::verify_tail(&draws, &model.tail, grid)
}

fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate { horizon, no_noise } => simulate(cli, *horizon, *no_noise, out),
        Command::Estimate { input, n } => estimate(cli, input.as_deref(), *n, out),
        Command::Bounds => bounds_cmd(cli, out),
        Command::Montecarlo => montecarlo(cli, out, err),
        Command::Sensitivity => sensitivity_cmd(cli, out),
        Command::CheckTails { samples } => check_tails(cli, *samples, out),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 for usage and config errors, 3 for
/// numeric and regime errors.
pub fn cli_dispatch_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let result = thread_count(&cli).and_then(|threads| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| SysIdError::Config(format!("thread pool: {e}")))?;
        // Output is buffered so the closure only captures `Send` data.
        let mut obuf = Vec::new();
        let mut ebuf = Vec::new();
        let r = pool.install(|| run(&cli, &mut obuf, &mut ebuf));
        out.write_all(&obuf)?;
        err.write_all(&ebuf)?;
        r
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    cli_dispatch_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dispatch(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = cli_dispatch_with(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _, err) = dispatch(&["unstable-sysid", "frobnicate"]);
        assert_eq!(code, 2);
        assert!(err.to_lowercase().contains("usage"), "{err}");
    }

    #[test]
    fn missing_config_is_config_error() {
        let (code, _, _) = dispatch(&["unstable-sysid", "montecarlo", "--config", "/nonexistent/missing.cfg"]);
        assert_eq!(code, 2);
        let (code, _, _) = dispatch(&["unstable-sysid", "bounds"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn default_grid_is_increasing() {
        let g = default_tail_grid(&noise::TailParams::new(2.0, 2.0, 2.0).unwrap());
        assert_eq!(g.len(), 10);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
