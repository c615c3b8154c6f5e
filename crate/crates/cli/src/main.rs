use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use klmc::config::{Config, ScheduleKind};
use klmc::harness::{self, Suite, SuiteReport};
use klmc::metrics::{joint_w2, x_marginal_w2};
use klmc::planner::{initial_distance_bound, kinetic_energy_bound};
use klmc::report::config_hash;
use klmc::sampler::Schedule;
use klmc::{run, Error, NoisyGradientOracle, Trace};
use serde_json::json;

/// Underdamped Langevin MCMC: planning, sampling and verification.
#[derive(Parser)]
#[command(name = "klmc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON config with sections {problem, target, run, experiment}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (plan: output file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "KL_THREADS")]
    threads: Option<usize>,
    /// Snapshot every K steps; overrides run.stride.
    #[arg(long, global = true)]
    stride: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the step size and iteration count for the config's problem.
    Plan,
    /// Run the ensemble sampler and write the trace.
    Sample,
    /// Run a verification suite: kernel, contraction, discretization or kinetic.
    Verify { suite: String },
    /// Underdamped vs overdamped iteration scaling in d and eps.
    Compare,
}

const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_ASSERTION: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Planning(_) => EXIT_USAGE,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => 1,
    }
}

fn execute(cli: Cli) -> Result<u8, Error> {
    let c = &cli.common;
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Internal(e.to_string()))?;
    }
    let mut config = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = c.seed {
        config.run.seed = seed;
    }
    if let Some(stride) = c.stride {
        config.run.stride = Some(stride);
    }
    let hash = config_hash(&config)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::Plan => cmd_plan(&config, c.out.as_deref()),
        Command::Sample => cmd_sample(&config, &out, &hash),
        Command::Verify { suite } => {
            let suite: Suite = suite.parse()?;
            finish(harness::verify(suite, &config)?, &out, &hash)
        }
        Command::Compare => finish(harness::compare(&config)?, &out, &hash),
    }
}

fn cmd_plan(config: &Config, out: Option<&Path>) -> Result<u8, Error> {
    let p = config.problem()?;
    let schedule = match config.run.schedule {
        ScheduleKind::Manual => return Err(Error::Usage("plan needs run.schedule = \"plan\" or \"epochs\"".into())),
        _ => config.schedule()?,
    };
    let plan = match &schedule {
        Schedule::Fixed(s) => json!({"kind": "fixed", "plan": s}),
        Schedule::Epochs(e) => json!({"kind": "epochs", "schedule": e, "total_iterations": e.total_iterations()}),
    };
    let doc = json!({
        "problem": p,
        "kappa": p.kappa(),
        "kinetic_energy_bound": kinetic_energy_bound(&p),
        "initial_distance_bound": initial_distance_bound(&p),
        "schedule": plan,
    });
    let text = serde_json::to_string_pretty(&doc)?;
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text + "\n")?;
        }
        None => println!("{text}"),
    }
    Ok(0)
}

fn cmd_sample(config: &Config, out: &Path, hash: &str) -> Result<u8, Error> {
    let target = config.target()?;
    let mut run_config = config.run_config(&target)?;
    if run_config.stride.is_none() {
        // Keeps the CSV dump to about a hundred snapshots.
        let total = run_config.schedule.total_iterations();
        run_config.stride = Some(run_config.effective_stride(target.dim()).max(total.div_ceil(100)).max(1));
    }
    let sigma2 = config.sigma2();
    let trace = if sigma2 > 0.0 {
        run(&NoisyGradientOracle::new(target.clone(), sigma2)?, &run_config)?
    } else {
        run(&target, &run_config)?
    };
    fs::create_dir_all(out)?;
    write_trace(&trace, out, hash)?;

    let last = trace.final_snapshot();
    let w2 = x_marginal_w2(last, &target)?;
    let joint = joint_w2(last, &target)?;
    let eps = config.problem.map(|p| p.eps);
    let summary = json!({
        "config_hash": hash,
        "chains": last.chains(),
        "iterations": last.iteration,
        "snapshots": trace.snapshots.len(),
        "max_mean_kinetic": trace.max_kinetic(),
        "x_marginal_w2": w2,
        "joint_w2": joint,
        "eps": eps,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("iterations: {}  chains: {}", last.iteration, last.chains());
    match (w2, eps) {
        (Some(w), Some(e)) => println!("x-marginal W2 to target: {w:.6} (eps = {e})"),
        (Some(w), None) => println!("x-marginal W2 to target: {w:.6}"),
        (None, _) => println!("target has no closed-form stationary law; W2 not reported"),
    }
    Ok(0)
}

fn write_trace(trace: &Trace, out: &Path, hash: &str) -> Result<(), Error> {
    let mut json = BufWriter::new(File::create(out.join("trace.json"))?);
    trace.write_json(&mut json)?;
    json.flush()?;
    let mut csv = BufWriter::new(File::create(out.join("trace.csv"))?);
    trace.write_csv(&mut csv, hash)?;
    csv.flush()?;
    Ok(())
}

fn finish(report: SuiteReport, out: &Path, hash: &str) -> Result<u8, Error> {
    report.write(out, hash)?;
    for c in &report.checks {
        println!("{c}");
    }
    if report.passed() {
        Ok(0)
    } else {
        Ok(EXIT_ASSERTION)
    }
}
