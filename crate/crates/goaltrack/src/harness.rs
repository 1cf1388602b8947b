//! Experiment orchestration: seeded evaluation runs, the threshold sweep
//! over controller variants, and the CSV outputs.
//!
//! Evaluation is strictly separated from training: a frozen [`Policy`] is
//! rolled out over `n_eval_runs` episodes seeded `master_seed + run`, and the
//! recorded distance trajectories are thresholded after the fact. Because
//! trajectories do not depend on the success threshold, a single evaluation
//! pass serves every `d_th` in the sweep.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{
    train, EpisodeLog, GreedyPolicy, PidConfig, PidPolicy, Policy, TrainConfig, TrainResult,
};
use crate::env::{EnvConfig, UavEnv};
use crate::world::Position3;
use crate::{Error, Result};

/// Top-level configuration for the training/evaluation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub pid: PidConfig,
    /// Evaluation episodes per variant.
    pub n_eval_runs: usize,
    /// Success thresholds (metres) the sweep reports on.
    pub d_th_sweep: Vec<f64>,
    pub output_dir: PathBuf,
    /// Base seed for evaluation episodes (run `i` uses `master_seed + i`).
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            pid: PidConfig::default(),
            n_eval_runs: 1000,
            d_th_sweep: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            output_dir: PathBuf::from("out"),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a JSON config; any missing field falls back to
    /// its default, unknown fields are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let wrap = |message: String| Error::ConfigFile {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| wrap(e.to_string()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| wrap(e.to_string()))?;
        cfg.validate().map_err(|e| wrap(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        self.pid.validate()?;
        if self.n_eval_runs == 0 {
            return Err(Error::InvalidConfig("n_eval_runs must be at least 1".into()));
        }
        if self.d_th_sweep.is_empty() {
            return Err(Error::InvalidConfig("d_th_sweep must not be empty".into()));
        }
        for &d in &self.d_th_sweep {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "d_th_sweep entries must be positive, got {d}"
                )));
            }
        }
        if !self.env.k_max_choices.contains(&self.pid.k_max) {
            return Err(Error::InvalidConfig(format!(
                "pid.k_max = {} is not among env.k_max_choices",
                self.pid.k_max
            )));
        }
        Ok(())
    }
}

/// Per-episode evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub run: usize,
    pub seed: u64,
    pub p_success: f64,
    pub mean_distance: f64,
    pub episode_return: f64,
}

/// Aggregate evaluation summary at a fixed success threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Fraction of TTIs whose end-of-TTI distance is within the threshold,
    /// pooled over all runs.
    pub p_success: f64,
    pub mean_distance: f64,
    pub mean_episode_return: f64,
    pub per_run: Vec<RunMetrics>,
}

/// Raw distance trajectories from an evaluation pass, thresholded on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalData {
    /// End-of-TTI distances, indexed `[run][tti]`.
    pub distances: Vec<Vec<f64>>,
    /// Episode returns under the environment's own value parameters.
    pub returns: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl EvalData {
    /// Pooled success fraction at threshold `d_th`.
    pub fn p_success(&self, d_th: f64) -> f64 {
        let (hits, total) = self.distances.iter().flatten().fold((0usize, 0usize), |(h, t), &d| {
            (h + usize::from(d <= d_th), t + 1)
        });
        hits as f64 / total as f64
    }

    pub fn mean_distance(&self) -> f64 {
        let (sum, total) = self
            .distances
            .iter()
            .flatten()
            .fold((0.0f64, 0usize), |(s, t), &d| (s + d, t + 1));
        sum / total as f64
    }

    /// Full per-run and aggregate metrics at threshold `d_th`.
    pub fn metrics(&self, d_th: f64) -> Metrics {
        let per_run: Vec<RunMetrics> = self
            .distances
            .iter()
            .zip(&self.returns)
            .zip(&self.seeds)
            .enumerate()
            .map(|(run, ((ds, &ret), &seed))| {
                let hits = ds.iter().filter(|&&d| d <= d_th).count();
                RunMetrics {
                    run,
                    seed,
                    p_success: hits as f64 / ds.len() as f64,
                    mean_distance: ds.iter().sum::<f64>() / ds.len() as f64,
                    episode_return: ret,
                }
            })
            .collect();
        Metrics {
            p_success: self.p_success(d_th),
            mean_distance: self.mean_distance(),
            mean_episode_return: self.returns.iter().sum::<f64>() / self.returns.len() as f64,
            per_run,
        }
    }
}

/// Rolls a frozen policy out over `n_runs` seeded episodes.
pub fn evaluate(
    policy: &dyn Policy,
    env_cfg: &EnvConfig,
    n_runs: usize,
    master_seed: u64,
) -> Result<EvalData> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("n_runs must be at least 1".into()));
    }
    let (mut env, _) = UavEnv::reset(env_cfg.clone(), master_seed)?;
    let mut data = EvalData {
        distances: Vec::with_capacity(n_runs),
        returns: Vec::with_capacity(n_runs),
        seeds: Vec::with_capacity(n_runs),
    };
    for run in 0..n_runs {
        let seed = master_seed + run as u64;
        let mut state = env.restart(seed);
        let mut distances = Vec::with_capacity(env_cfg.n_ttis);
        let mut episode_return = 0.0;
        while !env.done() {
            let index = policy.select(&state, env.action_space())?;
            let action = env.action_space().action(index).ok_or_else(|| {
                Error::ShapeMismatch(format!("policy chose out-of-range action {index}"))
            })?;
            let step = env.step(&action)?;
            distances.push(step.info.d_n);
            episode_return += step.reward;
            state = step.next_state;
        }
        data.distances.push(distances);
        data.returns.push(episode_return);
        data.seeds.push(seed);
    }
    Ok(data)
}

/// One row of the sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: String,
    pub d_th: f64,
    pub p_success: f64,
    pub mean_distance: f64,
}

/// Everything produced by a threshold sweep.
#[derive(Debug)]
pub struct SweepResult {
    /// Rows in variant-major order, thresholds ascending within a variant.
    pub rows: Vec<SweepRow>,
    /// Repetition factor the best fixed-k PID used.
    pub k_best: u32,
    pub trained_kopt: TrainResult,
    pub trained_k1: TrainResult,
}

impl SweepResult {
    pub fn p_success(&self, variant: &str, d_th: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.d_th == d_th)
            .map(|r| r.p_success)
    }
}

pub const VARIANT_PID_K1: &str = "pid_k1";
pub const VARIANT_PID_KBEST: &str = "pid_kbest";
pub const VARIANT_DEEPP_K1: &str = "deepp_k1";
pub const VARIANT_DEEPP_KOPT: &str = "deepp_kopt";

/// Environment restricted to a single repetition factor.
fn k1_env(cfg: &EnvConfig) -> EnvConfig {
    EnvConfig {
        k_max_choices: vec![1],
        ..cfg.clone()
    }
}

/// Trains both learned variants and compares all four controllers across
/// the configured success thresholds on shared evaluation seeds.
///
/// The learned controllers are trained once — trajectories do not depend on
/// the reporting threshold — and `pid_kbest` picks the fixed repetition
/// factor with the best pooled success at the environment's own threshold
/// (ties to the smaller factor).
pub fn sweep_threshold(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if !cfg.env.k_max_choices.contains(&1) {
        return Err(Error::InvalidConfig(
            "the sweep's k=1 variants need 1 among env.k_max_choices".into(),
        ));
    }

    let env_k1 = k1_env(&cfg.env);
    let (trained_kopt, trained_k1) = std::thread::scope(|scope| {
        let kopt = scope.spawn(|| train(&cfg.env, &cfg.train));
        let k1 = scope.spawn(|| train(&env_k1, &cfg.train));
        (
            kopt.join().expect("training thread panicked"),
            k1.join().expect("training thread panicked"),
        )
    });
    let trained_kopt = trained_kopt?;
    let trained_k1 = trained_k1?;

    let pid_at = |k_max: u32| PidPolicy {
        cfg: PidConfig { k_max, ..cfg.pid },
        tti_len_s: cfg.env.tti_len_s,
    };

    // pick the PID repetition factor at the environment's own threshold
    let mut k_best = cfg.env.k_max_choices[0];
    let mut best_eval: Option<EvalData> = None;
    let mut best_p = f64::NEG_INFINITY;
    let mut sorted_k = cfg.env.k_max_choices.clone();
    sorted_k.sort_unstable();
    for &k in &sorted_k {
        let data = evaluate(&pid_at(k), &cfg.env, cfg.n_eval_runs, cfg.master_seed)?;
        let p = data.p_success(cfg.env.value.d_th);
        if p > best_p {
            best_p = p;
            k_best = k;
            best_eval = Some(data);
        }
    }
    let eval_pid_kbest = best_eval.expect("k_max_choices is non-empty");

    let eval_pid_k1 = evaluate(&pid_at(1), &cfg.env, cfg.n_eval_runs, cfg.master_seed)?;
    let eval_deepp_kopt = evaluate(
        &GreedyPolicy::new(trained_kopt.qnet.clone()),
        &cfg.env,
        cfg.n_eval_runs,
        cfg.master_seed,
    )?;
    let eval_deepp_k1 = evaluate(
        &GreedyPolicy::new(trained_k1.qnet.clone()),
        &env_k1,
        cfg.n_eval_runs,
        cfg.master_seed,
    )?;

    let mut rows = Vec::with_capacity(4 * cfg.d_th_sweep.len());
    for (variant, data) in [
        (VARIANT_PID_K1, &eval_pid_k1),
        (VARIANT_PID_KBEST, &eval_pid_kbest),
        (VARIANT_DEEPP_K1, &eval_deepp_k1),
        (VARIANT_DEEPP_KOPT, &eval_deepp_kopt),
    ] {
        for &d_th in &cfg.d_th_sweep {
            rows.push(SweepRow {
                variant: variant.to_string(),
                d_th,
                p_success: data.p_success(d_th),
                mean_distance: data.mean_distance(),
            });
        }
    }

    Ok(SweepResult {
        rows,
        k_best,
        trained_kopt,
        trained_k1,
    })
}

/// One TTI of a traced evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 1-based TTI index.
    pub n: usize,
    /// Repetition attempts consumed.
    pub j_used: u32,
    pub decoded: bool,
    pub d_n: f64,
    pub reward: f64,
    pub uav: Position3,
    pub target: Position3,
}

/// Runs a single seeded episode and records its per-TTI telemetry.
pub fn trace_episode(
    policy: &dyn Policy,
    env_cfg: &EnvConfig,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    let (mut env, mut state) = UavEnv::reset(env_cfg.clone(), seed)?;
    let mut rows = Vec::with_capacity(env_cfg.n_ttis);
    while !env.done() {
        let index = policy.select(&state, env.action_space())?;
        let action = env.action_space().action(index).ok_or_else(|| {
            Error::ShapeMismatch(format!("policy chose out-of-range action {index}"))
        })?;
        let step = env.step(&action)?;
        rows.push(TraceRow {
            n: env.tti_index(),
            j_used: step.info.outcome.attempts_used,
            decoded: step.info.outcome.decoded,
            d_n: step.info.d_n,
            reward: step.reward,
            uav: env.uav_position(),
            target: env.target_position(),
        });
        state = step.next_state;
    }
    Ok(rows)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// `variant,d_th,p_success,mean_distance`
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    writeln!(w, "variant,d_th,p_success,mean_distance")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.variant, r.d_th, r.p_success, r.mean_distance)?;
    }
    w.flush()?;
    Ok(())
}

/// `episode,epsilon,return,loss`
pub fn write_train_log_csv(path: &Path, log: &[EpisodeLog]) -> Result<()> {
    let mut w = csv_writer(path)?;
    writeln!(w, "episode,epsilon,return,loss")?;
    for r in log {
        writeln!(w, "{},{},{},{}", r.episode, r.epsilon, r.episode_return, r.loss_ma)?;
    }
    w.flush()?;
    Ok(())
}

/// `run,seed,p_success,mean_distance,episode_return`
pub fn write_metrics_csv(path: &Path, metrics: &Metrics) -> Result<()> {
    let mut w = csv_writer(path)?;
    writeln!(w, "run,seed,p_success,mean_distance,episode_return")?;
    for r in &metrics.per_run {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.run, r.seed, r.p_success, r.mean_distance, r.episode_return
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `n,j_used,decoded,d_n,reward,uav_x,uav_y,uav_z,target_x,target_y,target_z`
pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    writeln!(w, "n,j_used,decoded,d_n,reward,uav_x,uav_y,uav_z,target_x,target_y,target_z")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.j_used,
            u8::from(r.decoded),
            r.d_n,
            r.reward,
            r.uav.x,
            r.uav.y,
            r.uav.z,
            r.target.x,
            r.target.y,
            r.target.z
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionSpace, Action, StateVec};

    /// Channel that decodes instantly on every attempt.
    fn lossless_channel_cfg() -> EnvConfig {
        let mut cfg = EnvConfig::default();
        cfg.channel.snr_threshold_db = -300.0;
        cfg.channel.bandwidth_hz = 1e15;
        cfg
    }

    fn stationary_target_cfg() -> EnvConfig {
        let mut cfg = lossless_channel_cfg();
        cfg.target_speed_m_s = 0.0;
        cfg.target_max_turn_rad = 0.0;
        cfg
    }

    struct HoverPolicy;

    impl Policy for HoverPolicy {
        fn select(&self, _state: &StateVec, space: &ActionSpace) -> Result<usize> {
            let action = Action {
                vx: 0.0,
                vy: 0.0,
                vz: 0.0,
                k_max: 1,
            };
            Ok(space.index_of(&action).expect("hover action on grid"))
        }
    }

    #[test]
    fn pid_on_stationary_target_succeeds_every_tti() {
        let cfg = stationary_target_cfg();
        let policy = PidPolicy {
            cfg: PidConfig::default(),
            tti_len_s: cfg.tti_len_s,
        };
        let data = evaluate(&policy, &cfg, 3, 42).unwrap();
        let m = data.metrics(cfg.value.d_th);
        // kp = 0.5 halves the 1 m offset every TTI, so the distance is
        // always within the 2 m threshold and every reward is 1
        assert_eq!(m.p_success, 1.0);
        assert_eq!(m.mean_episode_return, cfg.n_ttis as f64);
        assert!(m.mean_distance < 1.0);
        for r in &m.per_run {
            assert_eq!(r.p_success, 1.0);
        }
    }

    #[test]
    fn hover_against_straight_target_matches_closed_form() {
        let mut cfg = lossless_channel_cfg();
        // 1 m per TTI straight along +x, away from the UAV
        cfg.target_speed_m_s = 1.0 / cfg.tti_len_s;
        cfg.target_max_turn_rad = 0.0;
        cfg.target_initial_heading_rad = 0.0;
        let data = evaluate(&HoverPolicy, &cfg, 2, 0).unwrap();
        // starting 1 m apart, the gap after TTI n is exactly 1 + n metres
        for ds in &data.distances {
            for (i, &d) in ds.iter().enumerate() {
                let expect = 1.0 + (i + 1) as f64;
                assert!((d - expect).abs() < 1e-9, "tti {}: {d} vs {expect}", i + 1);
            }
        }
        // only n = 1 lands within 2 m, so exactly 1 success in 100 TTIs
        assert!((data.p_success(2.0) - 0.01).abs() < 1e-12);
        assert!((data.mean_distance() - 51.5).abs() < 1e-9);
    }

    #[test]
    fn aggregate_metrics_match_per_run_means() {
        let cfg = EnvConfig::default();
        let policy = PidPolicy {
            cfg: PidConfig::default(),
            tti_len_s: cfg.tti_len_s,
        };
        let data = evaluate(&policy, &cfg, 20, 7).unwrap();
        let m = data.metrics(3.0);
        assert_eq!(m.per_run.len(), 20);
        let mean = |f: fn(&RunMetrics) -> f64| {
            m.per_run.iter().map(f).sum::<f64>() / m.per_run.len() as f64
        };
        // every run has the same TTI count, so pooled == mean of per-run
        assert!((m.p_success - mean(|r| r.p_success)).abs() < 1e-12);
        assert!((m.mean_distance - mean(|r| r.mean_distance)).abs() < 1e-12);
        assert!((m.mean_episode_return - mean(|r| r.episode_return)).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_deterministic_and_threshold_monotone() {
        let cfg = EnvConfig::default();
        let policy = PidPolicy {
            cfg: PidConfig::default(),
            tti_len_s: cfg.tti_len_s,
        };
        let a = evaluate(&policy, &cfg, 10, 3).unwrap();
        let b = evaluate(&policy, &cfg, 10, 3).unwrap();
        assert_eq!(a, b);
        let mut last = 0.0;
        for d_th in [1.0, 2.0, 3.0, 4.0, 5.0] {
            let p = a.p_success(d_th);
            assert!(p >= last, "p_success must be nondecreasing in d_th");
            last = p;
        }
    }

    #[test]
    fn trace_covers_every_tti_in_order() {
        let cfg = stationary_target_cfg();
        let policy = PidPolicy {
            cfg: PidConfig::default(),
            tti_len_s: cfg.tti_len_s,
        };
        let rows = trace_episode(&policy, &cfg, 9).unwrap();
        assert_eq!(rows.len(), cfg.n_ttis);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.n, i + 1);
            assert!(r.decoded);
            assert_eq!(r.j_used, 1);
            assert_eq!(r.target, cfg.target_start);
        }
        // the controller closes in on the stationary target
        assert!(rows.last().unwrap().d_n < 1e-3);
    }

    #[test]
    fn csv_outputs_are_byte_identical_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EnvConfig::default();
        let policy = PidPolicy {
            cfg: PidConfig::default(),
            tti_len_s: cfg.tti_len_s,
        };
        let data = evaluate(&policy, &cfg, 5, 1).unwrap();
        let m = data.metrics(2.0);

        let p1 = dir.path().join("m1.csv");
        let p2 = dir.path().join("m2.csv");
        write_metrics_csv(&p1, &m).unwrap();
        write_metrics_csv(&p2, &m).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert!(!b1.is_empty());
        assert_eq!(b1, b2);

        // every numeric field must survive a parse round trip exactly
        let text = String::from_utf8(b1).unwrap();
        let mut rows = 0;
        for (line, r) in text.lines().skip(1).zip(&m.per_run) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 5);
            assert_eq!(fields[2].parse::<f64>().unwrap(), r.p_success);
            assert_eq!(fields[3].parse::<f64>().unwrap(), r.mean_distance);
            assert_eq!(fields[4].parse::<f64>().unwrap(), r.episode_return);
            rows += 1;
        }
        assert_eq!(rows, 5);
    }

    #[test]
    fn trace_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = stationary_target_cfg();
        let rows = trace_episode(&HoverPolicy, &cfg, 4).unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), cfg.n_ttis + 1);
        assert_eq!(
            lines[0],
            "n,j_used,decoded,d_n,reward,uav_x,uav_y,uav_z,target_x,target_y,target_z"
        );
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0], "1");
        assert_eq!(first[2], "1");
        assert_eq!(first[3].parse::<f64>().unwrap(), rows[0].d_n);
    }

    #[test]
    fn config_load_applies_defaults_and_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");

        std::fs::write(&path, r#"{"n_eval_runs": 7, "master_seed": 99}"#).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.n_eval_runs, 7);
        assert_eq!(cfg.master_seed, 99);
        assert_eq!(cfg.env, EnvConfig::default());
        assert_eq!(cfg.d_th_sweep, vec![1.0, 2.0, 3.0, 4.0, 5.0]);

        std::fs::write(&path, r#"{"n_eval_rnus": 7}"#).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.json"), "error must name the file: {msg}");
        assert!(msg.contains("n_eval_rnus"), "error must name the key: {msg}");

        let missing = dir.path().join("nope.json");
        let err = ExperimentConfig::load(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.json"));
    }

    #[test]
    fn config_validation_rejects_inconsistent_pid_k() {
        let cfg = ExperimentConfig {
            pid: PidConfig { kp: 0.5, k_max: 99 },
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("k_max"));
    }
}
