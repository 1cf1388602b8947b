//! Command-line front end: train, evaluate, sweep, and trace controllers
//! for the goal-oriented downlink tracking task.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use goaltrack::agents::{train, GreedyPolicy, PidPolicy, Policy};
use goaltrack::harness::{
    evaluate, sweep_threshold, trace_episode, write_metrics_csv, write_sweep_csv,
    write_trace_csv, write_train_log_csv, ExperimentConfig,
};
use goaltrack::neuralnet::{load_checkpoint, save_checkpoint};
use goaltrack::{Error, Result};

#[derive(Parser)]
#[command(name = "goaltrack", version, about = "Goal-oriented downlink control: \
train and evaluate DQN and PID controllers for UAV target tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// JSON experiment config; built-in defaults apply when omitted
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the master seed and the training seed (beats GOALTRACK_SEED)
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory (overrides the config's output_dir)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DQN controller; writes qnet.ckpt and train_log.csv
    Train {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Roll a controller out over seeded episodes; writes metrics.csv
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        /// Trained model to evaluate; the PID baseline runs when omitted
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Overrides the number of evaluation runs
        #[arg(long, value_name = "INT")]
        runs: Option<usize>,
    },
    /// Compare the PID and DQN variants across success thresholds;
    /// writes sweep.csv plus both checkpoints and training logs
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Overrides the number of evaluation runs
        #[arg(long, value_name = "INT")]
        runs: Option<usize>,
    },
    /// Record one seeded episode's per-TTI telemetry; writes trace.csv
    Trace {
        #[command(flatten)]
        common: CommonOpts,
        /// Trained model to trace; the PID baseline runs when omitted
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { common } => run_train(load_experiment(&common)?),
        Command::Eval {
            common,
            checkpoint,
            runs,
        } => run_eval(load_experiment(&common)?, checkpoint.as_deref(), runs),
        Command::Sweep { common, runs } => run_sweep(load_experiment(&common)?, runs),
        Command::Trace { common, checkpoint } => {
            run_trace(load_experiment(&common)?, checkpoint.as_deref())
        }
    }
}

/// Resolves the effective config: file (or defaults), then the seed
/// override (`--seed` wins over `GOALTRACK_SEED`), then `--out`.
fn load_experiment(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let env_seed = match std::env::var("GOALTRACK_SEED") {
        Ok(v) => Some(v.parse::<u64>().map_err(|_| {
            Error::InvalidConfig(format!(
                "GOALTRACK_SEED must be an unsigned integer, got {v:?}"
            ))
        })?),
        Err(_) => None,
    };
    if let Some(seed) = common.seed.or(env_seed) {
        cfg.master_seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(&cfg.output_dir)
}

fn make_policy(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<Box<dyn Policy>> {
    match checkpoint {
        Some(path) => {
            let (qnet, _) = load_checkpoint(path)?;
            let n_actions = cfg.env.action_space().len();
            if qnet.output_dim() != n_actions {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint has {} outputs but the configured action space has {}",
                    qnet.output_dim(),
                    n_actions
                )));
            }
            Ok(Box::new(GreedyPolicy::new(qnet)))
        }
        None => Ok(Box::new(PidPolicy {
            cfg: cfg.pid,
            tti_len_s: cfg.env.tti_len_s,
        })),
    }
}

fn run_train(cfg: ExperimentConfig) -> Result<()> {
    let out = ensure_output_dir(&cfg)?;
    let result = train(&cfg.env, &cfg.train)?;
    let ckpt = out.join("qnet.ckpt");
    let log = out.join("train_log.csv");
    save_checkpoint(&ckpt, &result.qnet, &result.optim)?;
    write_train_log_csv(&log, &result.log)?;
    let tail = result.log.len().div_ceil(10);
    let tail_mean = result.log[result.log.len() - tail..]
        .iter()
        .map(|l| l.episode_return)
        .sum::<f64>()
        / tail as f64;
    println!("trained {} episodes (seed {})", result.log.len(), cfg.train.seed);
    println!("mean return over final {tail} episodes: {tail_mean:.3}");
    println!("checkpoint: {}", ckpt.display());
    println!("train log:  {}", log.display());
    Ok(())
}

fn run_eval(
    cfg: ExperimentConfig,
    checkpoint: Option<&Path>,
    runs: Option<usize>,
) -> Result<()> {
    let out = ensure_output_dir(&cfg)?;
    let n_runs = runs.unwrap_or(cfg.n_eval_runs);
    let policy = make_policy(&cfg, checkpoint)?;
    let data = evaluate(policy.as_ref(), &cfg.env, n_runs, cfg.master_seed)?;
    let metrics = data.metrics(cfg.env.value.d_th);
    let path = out.join("metrics.csv");
    write_metrics_csv(&path, &metrics)?;
    println!(
        "{} over {} runs (master seed {}):",
        if checkpoint.is_some() { "checkpoint" } else { "pid baseline" },
        n_runs,
        cfg.master_seed
    );
    println!("p_success (d_th = {}): {:.4}", cfg.env.value.d_th, metrics.p_success);
    println!("mean distance: {:.4} m", metrics.mean_distance);
    println!("mean episode return: {:.4}", metrics.mean_episode_return);
    println!("metrics: {}", path.display());
    Ok(())
}

fn run_sweep(mut cfg: ExperimentConfig, runs: Option<usize>) -> Result<()> {
    if let Some(n) = runs {
        cfg.n_eval_runs = n;
    }
    cfg.validate()?;
    let out = ensure_output_dir(&cfg)?;
    let result = sweep_threshold(&cfg)?;
    let path = out.join("sweep.csv");
    write_sweep_csv(&path, &result.rows)?;
    save_checkpoint(&out.join("qnet_kopt.ckpt"), &result.trained_kopt.qnet, &result.trained_kopt.optim)?;
    save_checkpoint(&out.join("qnet_k1.ckpt"), &result.trained_k1.qnet, &result.trained_k1.optim)?;
    write_train_log_csv(&out.join("train_log_kopt.csv"), &result.trained_kopt.log)?;
    write_train_log_csv(&out.join("train_log_k1.csv"), &result.trained_k1.log)?;
    println!("pid_kbest uses k_max = {}", result.k_best);
    for row in &result.rows {
        println!(
            "{:<12} d_th = {}: p_success = {:.4}, mean distance = {:.3} m",
            row.variant, row.d_th, row.p_success, row.mean_distance
        );
    }
    println!("sweep: {}", path.display());
    Ok(())
}

fn run_trace(cfg: ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let out = ensure_output_dir(&cfg)?;
    let policy = make_policy(&cfg, checkpoint)?;
    let rows = trace_episode(policy.as_ref(), &cfg.env, cfg.master_seed)?;
    let path = out.join("trace.csv");
    write_trace_csv(&path, &rows)?;
    let decoded = rows.iter().filter(|r| r.decoded).count();
    println!(
        "traced {} TTIs (seed {}): {} decoded, final distance {:.3} m",
        rows.len(),
        cfg.master_seed,
        decoded,
        rows.last().map_or(f64::NAN, |r| r.d_n)
    );
    println!("trace: {}", path.display());
    Ok(())
}
