mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lingp_mpc::argp::ArState;
use lingp_mpc::bench::{
    benchmark, generate_training_data_with, oracle_solve, plant_ar_spec, run_closed_loop,
    train_model, BenchOptions, DataConfig,
};
use lingp_mpc::gp::{read_training_csv, write_training_csv, GpModel, ModelDocument};
use lingp_mpc::par::Execution;
use lingp_mpc::scp::{scp_solve, MpcProblem, TrackingMpcSpec};
use serde_json::json;

use config::{parse_grid, MpcConfig};

/// GP-based tracking MPC with a linearized-GP sequential convex solver.
#[derive(Parser)]
#[command(name = "lingp", version)]
struct Cli {
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the benchmark plant under a random input signal.
    GenData(GenData),
    /// Fit GP hyperparameters to a training CSV.
    Train(Train),
    /// Closed-loop MPC run on the noisy plant.
    Run(Run),
    /// Timing sweep over training-set sizes.
    Bench(Bench),
    /// Compare the SCP solution of one MPC problem against a multi-start search.
    Oracle(Oracle),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Steps each random input level is held.
    #[arg(long, default_value_t = 3)]
    hold: usize,
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seed for the random restarts of the hyperparameter search.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON with any tracking-problem and solver fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-step solver reports as JSON.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct Bench {
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, value_parser = |s: &str| parse_grid(s).map(Grid), default_value = "100:1500:100")]
    n_grid: Grid,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Store and reuse trained models here.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Write per-size statistics as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone)]
struct Grid(Vec<usize>);

#[derive(Args)]
struct Oracle {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 6)]
    horizon: usize,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Last measured output.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    y0: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    previous_input: f64,
    #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
    reference: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn load_model(path: &Path, exec: Execution) -> Result<GpModel> {
    let doc = ModelDocument::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(doc.into_model_with(exec)?)
}

fn gen_data(a: GenData) -> Result<()> {
    if a.n == 0 {
        bail!("--n must be positive");
    }
    let cfg = DataConfig {
        hold: a.hold,
        noise: !a.noiseless,
        ..Default::default()
    };
    let (x, y) = generate_training_data_with(a.n, a.seed, &cfg);
    write_training_csv(create(&a.out)?, &x, &y)?;
    log::info!("wrote {} rows to {}", a.n, a.out.display());
    Ok(())
}

fn train(a: Train, exec: Execution) -> Result<()> {
    let f = File::open(&a.data).with_context(|| format!("opening {}", a.data.display()))?;
    let (x, y) = read_training_csv(f)?;
    let model = train_model(&x, &y, a.seed, exec)?;
    let h = model.hyper();
    println!(
        "N = {}, signal variance {:.4e}, noise variance {:.4e}, lengthscales {:?}",
        model.len(),
        h.signal_variance,
        h.noise_variance,
        h.lengthscales
    );
    ModelDocument::from_model(&model).save(&a.out)?;
    Ok(())
}

fn run(a: Run, exec: Execution) -> Result<()> {
    let mut cfg = MpcConfig::load(a.config.as_deref())?;
    cfg.scp.execution = exec;
    let model = load_model(&a.model, exec)?;
    let log = run_closed_loop(&model, &cfg.spec, &cfg.scp, a.steps, a.seed)?;
    log.write_csv(create(&a.out)?)?;
    if let Some(path) = &a.trace {
        let mut w = create(path)?;
        serde_json::to_writer(&mut w, &log.reports)?;
        w.flush()?;
    }
    let failed = log.steps.iter().filter(|s| s.failed).count();
    let converged = log.steps.iter().filter(|s| s.converged).count();
    println!("{} steps, {converged} converged, {failed} failed", log.steps.len());
    Ok(())
}

fn bench(a: Bench, exec: Execution) -> Result<bool> {
    let mut cfg = MpcConfig::load(a.config.as_deref())?;
    cfg.scp.execution = exec;
    let options = BenchOptions {
        steps: a.steps,
        seed: a.seed,
        spec: cfg.spec,
        scp: cfg.scp,
        execution: exec,
        cache_dir: a.cache_dir,
    };
    let result = benchmark(&a.n_grid.0, &options)?;
    result.write_csv(create(&a.out)?)?;
    let summary = result.summary();
    println!("{:>6} {:>12} {:>12} {:>14} {:>8}", "N", "median [s]", "mean [s]", "sub median [s]", "iters");
    for s in &summary.sizes {
        println!(
            "{:>6} {:>12.5} {:>12.5} {:>14.5} {:>8.2}",
            s.n, s.median_total, s.mean_total, s.median_subproblem, s.mean_iterations
        );
    }
    println!(
        "subproblem time CV {:.3}, total time ratio largest/smallest N {:.2}",
        summary.subproblem_cv, summary.total_ratio
    );
    if let Some(path) = &a.summary {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &summary)?;
        w.flush()?;
    }
    for (n, why) in &result.failures {
        eprintln!("N = {n} failed: {why}");
    }
    Ok(result.failures.is_empty())
}

fn oracle(a: Oracle, exec: Execution) -> Result<()> {
    let mut cfg = MpcConfig::load(a.config.as_deref())?;
    cfg.scp.execution = exec;
    let spec = TrackingMpcSpec {
        horizon: a.horizon,
        reference: a.reference,
        ..cfg.spec
    };
    let model = load_model(&a.model, exec)?;
    let ar = plant_ar_spec();
    let init = ArState::new(&ar, vec![a.y0], Vec::new())?;
    let prev = [a.previous_input];
    let problem = MpcProblem {
        model: &model,
        spec: &spec,
        arspec: &ar,
        init: &init,
        previous_input: &prev,
    };
    // hold the previous input as the initial plan
    let report = scp_solve(&problem, &vec![prev.to_vec(); a.horizon], &cfg.scp)?;
    let best = oracle_solve(&problem, report.lambda, a.restarts, a.seed, exec)?;
    let out = json!({
        "lambda": report.lambda,
        "scp": {
            "cost": report.phi,
            "inputs": report.inputs,
            "iterations": report.iterations.len(),
            "converged": report.converged,
        },
        "oracle": {
            "cost": best.cost,
            "inputs": best.inputs,
            "evaluations": best.evaluations,
        },
        "ratio": report.phi / best.cost,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a).map(|_| true),
        Command::Train(a) => train(a, exec).map(|_| true),
        Command::Run(a) => run(a, exec).map(|_| true),
        Command::Bench(a) => bench(a, exec),
        Command::Oracle(a) => oracle(a, exec).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
