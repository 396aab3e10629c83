use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use irs_maxmin::bench::{
    emit_csv, emit_points, parse_config, points_path, run_experiment, run_trial, summarize, ExperimentPlan,
};
use irs_maxmin::Error;

/// Max-min rate design for multi-IRS uplink cells.
#[derive(Parser)]
#[command(name = "irs-maxmin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every point of an experiment plan and write CSV records.
    Run(RunArgs),
    /// Like `run`, with the power axis replaced by a range.
    SweepPower {
        #[command(flatten)]
        run: RunArgs,
        /// First power, dBm.
        #[arg(long)]
        from: f64,
        /// Last power, dBm (inclusive).
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 5.0)]
        step: f64,
    },
    /// Check a plan without solving anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the per-iteration trace of one trial as CSV.
    Trace {
        #[arg(long)]
        config: PathBuf,
        /// Sweep point index (see the `.points.csv` table).
        #[arg(long, default_value_t = 0)]
        point: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.path`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<ExperimentPlan, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

fn power_range(from: f64, to: f64, step: f64) -> Result<Vec<f64>, Failure> {
    if !(step > 0.0) || !(from <= to) || !from.is_finite() || !to.is_finite() {
        return Err(Failure::Config("need finite --from <= --to and --step > 0".into()));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + i as f64 * step).collect())
}

fn run(args: RunArgs, powers: Option<Vec<f64>>) -> Result<(), Failure> {
    let mut plan = load(&args.config)?;
    if let Some(t) = args.trials {
        if t == 0 {
            return Err(Failure::Config("--trials must be at least 1".into()));
        }
        plan.trials = t;
    }
    if let Some(s) = args.seed {
        plan.seed = Some(s);
    }
    if let Some(p) = powers {
        plan.sweep.tx_power_dbm = p;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("--threads: {e}")))?;
    }
    let out = args
        .out
        .or_else(|| plan.output.path.clone())
        .unwrap_or_else(|| PathBuf::from("results.csv"));

    let run = run_experiment(&plan)?;
    emit_csv(&run.records(), &out)?;
    emit_points(&run.points, &points_path(&out))?;
    print!("{}", summarize(&run));
    eprintln!("wrote {} records to {}", run.results.len(), out.display());
    for f in &run.failures {
        eprintln!("trial {} of point {} (seed {}) failed: {}", f.trial, f.point, f.seed, f.message);
    }
    if run.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Solver(format!("{} trial(s) failed", run.failures.len())))
    }
}

fn trace(config: &Path, point: usize, trial: usize, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut plan = load(config)?;
    if seed.is_some() {
        plan.seed = seed;
    }
    let points = plan.points()?;
    let p = points
        .get(point)
        .ok_or_else(|| Failure::Config(format!("point {point} out of range (plan has {})", points.len())))?;
    let (state, _) = run_trial(&plan, p, trial)?;
    let mut text = String::from("iteration,gamma_min,min_rate\n");
    for t in &state.trace {
        text.push_str(&format!("{},{},{}\n", t.iteration, t.gamma_min, t.min_rate));
    }
    match out {
        Some(path) => std::fs::write(&path, text).map_err(|e| Failure::Solver(e.to_string()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args, None),
        Command::SweepPower { run: args, from, to, step } => {
            power_range(from, to, step).and_then(|p| run(args, Some(p)))
        }
        Command::Validate { config } => load(&config).and_then(|plan| {
            let points = plan.points()?;
            println!("ok: {} point(s) x {} trial(s)", points.len(), plan.trials);
            Ok(())
        }),
        Command::Trace { config, point, trial, seed, out } => trace(&config, point, trial, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
