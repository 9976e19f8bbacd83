//! Training/evaluation loops, multi-trial orchestration, aggregation, and
//! result persistence.
//!
//! A trial trains one agent from seed `base_seed + trial_index`, freezes
//! the weights, and evaluates them with learning disabled. Trials share
//! nothing mutable, so results are identical no matter how many worker
//! threads run them. Results persist as a CSV of per-episode rows plus a
//! JSON fingerprint of the full configuration.

pub mod stats;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Hyperparams, LinearQ, Transition, DEFAULT_TRACE_FLOOR};
use crate::env::{make_env, splitmix64, standard_stack, Environment};
use crate::features::{Extractor, FeatureSet};
use crate::screen::{BackgroundAccumulator, BackgroundModel};
use crate::{Error, Result};

const BACKGROUND_SALT: u64 = 0x6261_636b_6772_6e64; // "backgrnd"
const TRIAL_SALT: u64 = 0x7472_6961_6c72_6e67; // "trialrng"

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSet {
    Minimal,
    Full,
}

impl std::fmt::Display for ActionSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ActionSet::Minimal => "minimal",
            ActionSet::Full => "full",
        })
    }
}

impl std::str::FromStr for ActionSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimal" => Ok(ActionSet::Minimal),
            "full" => Ok(ActionSet::Full),
            other => Err(Error::Config {
                detail: format!("unknown action set {other:?}, expected minimal or full"),
            }),
        }
    }
}

/// How long to train: a count of episodes, or of raw frames (checked at
/// episode boundaries, so the last episode may overshoot).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainBudget {
    Episodes(u32),
    Frames(u64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub feature_set: FeatureSet,
    /// Environment name or wire address (see `env::make_env`).
    pub env: String,
    pub trials: u32,
    pub budget: TrainBudget,
    pub eval_episodes: u32,
    pub eval_epsilon: f64,
    pub hyper: Hyperparams,
    pub frame_skip: u32,
    pub episode_cap: u32,
    pub max_noops: u32,
    pub action_set: ActionSet,
    pub base_seed: u64,
    pub bias: bool,
    pub trace_floor: f64,
    pub blob_tolerance: u32,
    pub background_samples: u32,
    /// Worker threads for trials; 0 picks one per available core.
    pub workers: u32,
}

impl ExperimentConfig {
    pub fn new(feature_set: FeatureSet, env: &str, budget: TrainBudget) -> Self {
        ExperimentConfig {
            feature_set,
            env: env.to_string(),
            trials: 24,
            budget,
            eval_episodes: 499,
            eval_epsilon: 0.01,
            hyper: Hyperparams::default(),
            frame_skip: 5,
            episode_cap: 18_000,
            max_noops: 30,
            action_set: ActionSet::Minimal,
            base_seed: 0,
            bias: true,
            trace_floor: DEFAULT_TRACE_FLOOR,
            blob_tolerance: 6,
            background_samples: 18_000,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Config { detail });
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        if self.eval_episodes == 0 {
            return bad("eval episodes must be positive".into());
        }
        if self.frame_skip == 0 || self.episode_cap == 0 || self.max_noops == 0 {
            return bad("frame skip, episode cap and max no-ops must be positive".into());
        }
        if self.background_samples == 0 {
            return bad("background samples must be positive".into());
        }
        if self.blob_tolerance == 0 {
            return bad("blob tolerance must be positive".into());
        }
        let h = self.hyper;
        if !(h.alpha.is_finite() && h.alpha > 0.0) {
            return bad(format!("step size {} out of range", h.alpha));
        }
        if !(0.0..1.0).contains(&h.gamma) {
            return bad(format!("discount {} outside [0, 1)", h.gamma));
        }
        if !(0.0..=1.0).contains(&h.lambda) {
            return bad(format!("trace decay {} outside [0, 1]", h.lambda));
        }
        if !(0.0..=1.0).contains(&h.epsilon) {
            return bad(format!("exploration rate {} outside [0, 1]", h.epsilon));
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad(format!("eval exploration rate {} outside [0, 1]", self.eval_epsilon));
        }
        if !(self.trace_floor.is_finite() && self.trace_floor > 0.0) {
            return bad(format!("trace floor {} out of range", self.trace_floor));
        }
        Ok(())
    }

    fn trial_seed(&self, trial_index: u32) -> u64 {
        self.base_seed.wrapping_add(trial_index as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "eval" => Ok(Phase::Eval),
            other => Err(Error::Config {
                detail: format!("unknown phase {other:?}"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeScore {
    pub score: f64,
    pub frames: u64,
}

/// One row of the results CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub trial: u32,
    pub phase: Phase,
    pub episode: u32,
    pub score: f64,
    pub frames: u64,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: u32,
    pub seed: u64,
    pub train: Vec<EpisodeScore>,
    pub eval: Vec<EpisodeScore>,
    pub weights_path: Option<PathBuf>,
    pub decisions: u64,
    pub decisions_per_sec: f64,
}

impl TrialResult {
    pub fn eval_mean(&self) -> f64 {
        stats::mean(&self.eval.iter().map(|e| e.score).collect::<Vec<_>>())
    }
}

/// Cross-trial summary of per-trial evaluation means.
#[derive(Clone, Copy, Debug)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub best: f64,
    /// The ceil(n/2)-th best trial mean (the median for odd n).
    pub middle: f64,
}

pub fn aggregate(results: &[TrialResult]) -> Result<Aggregate> {
    if results.is_empty() || results.iter().any(|r| r.eval.is_empty()) {
        return Err(Error::EmptySamples);
    }
    let means: Vec<f64> = results.iter().map(TrialResult::eval_mean).collect();
    let mut ranked = means.clone();
    ranked.sort_by(|a, b| b.partial_cmp(a).expect("scores are never NaN"));
    let middle_rank = ranked.len().div_ceil(2);
    Ok(Aggregate {
        mean: stats::mean(&means),
        std: stats::sample_std(&means),
        best: ranked[0],
        middle: ranked[middle_rank - 1],
    })
}

fn action_table(env: &impl Environment, set: ActionSet) -> Vec<u8> {
    match set {
        ActionSet::Minimal => env.minimal_actions().to_vec(),
        ActionSet::Full => (0..env.full_action_count() as u8).collect(),
    }
}

/// Everything one worker needs to run episodes.
struct Runtime {
    env: crate::env::EpisodeCap<crate::env::FrameSkip<crate::env::NoopStart<Box<dyn Environment + Send>>>>,
    extractor: Extractor,
    table: Vec<u8>,
    rng: ChaCha8Rng,
}

fn build_runtime(
    config: &ExperimentConfig,
    seed: u64,
    background: Option<&BackgroundModel>,
) -> Result<Runtime> {
    let raw = make_env(&config.env)?;
    let table = action_table(&raw, config.action_set);
    let env = standard_stack(raw, config.max_noops, config.frame_skip, config.episode_cap);
    let extractor = Extractor::new(
        config.feature_set,
        background.cloned(),
        config.blob_tolerance,
    )?;
    Ok(Runtime {
        env,
        extractor,
        table,
        rng: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ TRIAL_SALT)),
    })
}

/// Play one episode. With `learn` set, runs the full control update after
/// every decision and clears traces at the end.
fn run_episode(
    rt: &mut Runtime,
    agent: &mut LinearQ,
    learn: bool,
    decisions: &mut u64,
) -> Result<EpisodeScore> {
    let episode_seed = rt.rng.gen();
    let first = rt.env.reset(episode_seed)?;
    rt.extractor.begin_episode();
    let mut state = rt.extractor.extract_next(&first);
    let mut action = agent.select_action(&state, &mut rt.rng);
    let mut score = 0.0;
    let mut frames = 0u64;
    loop {
        let out = rt.env.step(rt.table[action])?;
        *decisions += 1;
        score += out.reward;
        frames += out.frames_elapsed as u64;
        let next_state = rt.extractor.extract_next(&out.frame);
        let next_action = if out.terminal {
            0
        } else {
            agent.select_action(&next_state, &mut rt.rng)
        };
        if learn {
            agent.sarsa_update(&Transition {
                state: &state,
                action,
                reward: out.reward,
                next_state: &next_state,
                next_action,
                terminal: out.terminal,
            });
        }
        if out.terminal {
            if learn {
                agent.reset_traces();
            }
            return Ok(EpisodeScore { score, frames });
        }
        state = next_state;
        action = next_action;
    }
}

/// Collect background samples by following a uniform-random policy. Derived
/// only from the base seed, so every trial of an experiment shares one
/// background.
pub fn compute_background_for(config: &ExperimentConfig) -> Result<BackgroundModel> {
    let raw = make_env(&config.env)?;
    let table = action_table(&raw, config.action_set);
    let mut env = standard_stack(raw, config.max_noops, config.frame_skip, config.episode_cap);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.base_seed ^ BACKGROUND_SALT));
    let mut acc = BackgroundAccumulator::new();
    let target = config.background_samples as u64;
    while acc.samples() < target {
        let frame = env.reset(rng.gen())?;
        acc.add(&frame);
        while acc.samples() < target {
            let out = env.step(table[rng.gen_range(0..table.len())])?;
            acc.add(&out.frame);
            if out.terminal {
                break;
            }
        }
    }
    acc.finish()
}

/// Train and evaluate one agent. `background` can share a precomputed
/// model across trials; when the feature set needs one and none is given,
/// it is computed here (same derivation, same result). With `out_dir` set,
/// the frozen weights are written to `trial_NN.weights` inside it.
pub fn run_trial(
    config: &ExperimentConfig,
    trial_index: u32,
    background: Option<&BackgroundModel>,
    out_dir: Option<&Path>,
) -> Result<TrialResult> {
    config.validate()?;
    let own_background = if background.is_none() && config.feature_set.requires_background() {
        Some(compute_background_for(config)?)
    } else {
        None
    };
    let background = background.or(own_background.as_ref());

    let seed = config.trial_seed(trial_index);
    let mut rt = build_runtime(config, seed, background)?;
    let mut agent = LinearQ::new(
        rt.table.len(),
        config.hyper,
        config.bias,
        config.trace_floor,
    );

    let started = Instant::now();
    let mut decisions = 0u64;
    let mut train = Vec::new();
    let mut total_frames = 0u64;
    loop {
        let done = match config.budget {
            TrainBudget::Episodes(n) => train.len() as u32 >= n,
            TrainBudget::Frames(n) => total_frames >= n,
        };
        if done {
            break;
        }
        let episode = run_episode(&mut rt, &mut agent, true, &mut decisions)?;
        total_frames += episode.frames;
        train.push(episode);
    }

    let weights_path = match out_dir {
        Some(dir) => {
            let path = dir.join(format!("trial_{trial_index:02}.weights"));
            agent.save(&path)?;
            Some(path)
        }
        None => None,
    };

    agent.set_epsilon(config.eval_epsilon);
    let mut eval = Vec::with_capacity(config.eval_episodes as usize);
    for _ in 0..config.eval_episodes {
        eval.push(run_episode(&mut rt, &mut agent, false, &mut decisions)?);
    }

    let elapsed = started.elapsed().as_secs_f64();
    Ok(TrialResult {
        trial: trial_index,
        seed,
        train,
        eval,
        weights_path,
        decisions,
        decisions_per_sec: decisions as f64 / elapsed.max(1e-9),
    })
}

/// Evaluate an already-trained agent (no learning, no slot growth).
pub fn evaluate_agent(
    config: &ExperimentConfig,
    agent: &mut LinearQ,
    background: Option<&BackgroundModel>,
    trial_index: u32,
) -> Result<Vec<EpisodeScore>> {
    config.validate()?;
    let own_background = if background.is_none() && config.feature_set.requires_background() {
        Some(compute_background_for(config)?)
    } else {
        None
    };
    let background = background.or(own_background.as_ref());
    let mut rt = build_runtime(config, config.trial_seed(trial_index), background)?;
    if rt.table.len() != agent.action_count() {
        return Err(Error::Config {
            detail: format!(
                "snapshot has {} actions but the {} action set of {} has {}",
                agent.action_count(),
                config.action_set,
                config.env,
                rt.table.len()
            ),
        });
    }
    agent.set_epsilon(config.eval_epsilon);
    let mut decisions = 0u64;
    let mut eval = Vec::with_capacity(config.eval_episodes as usize);
    for _ in 0..config.eval_episodes {
        eval.push(run_episode(&mut rt, agent, false, &mut decisions)?);
    }
    Ok(eval)
}

pub struct ExperimentResult {
    pub trials: Vec<TrialResult>,
    pub aggregate: Aggregate,
}

/// Run every trial (in parallel workers when configured), aggregate, and
/// persist results under `out_dir` when given: `results.csv`,
/// `config.json`, per-trial weight snapshots, and the background model (for
/// feature sets that subtract one). Worker scheduling never changes any
/// output byte.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    config.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let background = if config.feature_set.requires_background() {
        let model = compute_background_for(config)?;
        if let Some(dir) = out_dir {
            crate::screen::save_background(&model, &dir.join("background.bin"))?;
        }
        Some(model)
    } else {
        None
    };

    let default_workers = std::thread::available_parallelism()
        .map(|n| n.get() as u32)
        .unwrap_or(1);
    let workers = if config.workers == 0 {
        default_workers
    } else {
        config.workers
    }
    .min(config.trials)
    .max(1);

    let mut outcomes: Vec<(u32, Result<TrialResult>)> = if workers == 1 {
        (0..config.trials)
            .map(|i| (i, run_trial(config, i, background.as_ref(), out_dir)))
            .collect()
    } else {
        let next = AtomicU32::new(0);
        let collected = Mutex::new(Vec::with_capacity(config.trials as usize));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= config.trials {
                        break;
                    }
                    let result = run_trial(config, i, background.as_ref(), out_dir);
                    collected.lock().unwrap().push((i, result));
                });
            }
        });
        collected.into_inner().unwrap()
    };
    outcomes.sort_by_key(|(i, _)| *i);

    let mut trials = Vec::with_capacity(outcomes.len());
    for (_, outcome) in outcomes {
        trials.push(outcome?);
    }

    let aggregate = aggregate(&trials)?;
    if let Some(dir) = out_dir {
        write_results_csv(&dir.join("results.csv"), &trials)?;
        write_config_json(&dir.join("config.json"), config)?;
    }
    Ok(ExperimentResult { trials, aggregate })
}

pub const RESULTS_HEADER: &str = "trial,phase,episode,score,frames";

pub fn write_results_csv(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{RESULTS_HEADER}")?;
    for trial in trials {
        for (phase, episodes) in [(Phase::Train, &trial.train), (Phase::Eval, &trial.eval)] {
            for (i, e) in episodes.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    trial.trial,
                    phase.as_str(),
                    i,
                    e.score,
                    e.frames
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let display = path.display().to_string();
    let fail = |line: usize, detail: String| Error::ResultsParse {
        path: display.clone(),
        line,
        detail,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut lines = reader.lines();
    match lines.next() {
        Some(Ok(header)) if header == RESULTS_HEADER => {}
        Some(Ok(header)) => {
            return Err(fail(1, format!("unexpected header {header:?}")));
        }
        Some(Err(e)) => return Err(Error::Io(e)),
        None => return Err(fail(1, "empty file".to_string())),
    }
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(Error::Io)?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(fail(line_no, format!("{} fields, expected 5", fields.len())));
        }
        let parse = |what: &str, value: &str, detail: String| fail(line_no, format!("{what} {value:?}: {detail}"));
        records.push(EpisodeRecord {
            trial: fields[0]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse("trial", fields[0], e.to_string()))?,
            phase: fields[1]
                .parse()
                .map_err(|e: Error| parse("phase", fields[1], e.to_string()))?,
            episode: fields[2]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse("episode", fields[2], e.to_string()))?,
            score: fields[3]
                .parse()
                .map_err(|e: std::num::ParseFloatError| parse("score", fields[3], e.to_string()))?,
            frames: fields[4]
                .parse()
                .map_err(|e: std::num::ParseIntError| parse("frames", fields[4], e.to_string()))?,
        });
    }
    Ok(records)
}

/// Per-trial evaluation means, in trial order — the samples Welch's test
/// compares between two result files.
pub fn eval_means_by_trial(records: &[EpisodeRecord]) -> Vec<f64> {
    let mut by_trial: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.phase == Phase::Eval {
            by_trial.entry(r.trial).or_default().push(r.score);
        }
    }
    by_trial.values().map(|scores| stats::mean(scores)).collect()
}

#[derive(Serialize)]
struct ConfigFingerprint<'a> {
    artifact_version: &'static str,
    config: &'a ExperimentConfig,
}

pub fn write_config_json(path: &Path, config: &ExperimentConfig) -> Result<()> {
    let fingerprint = ConfigFingerprint {
        artifact_version: env!("CARGO_PKG_VERSION"),
        config,
    };
    let mut w = BufWriter::new(File::create(path)?);
    let json = serde_json::to_string_pretty(&fingerprint).map_err(|e| Error::Config {
        detail: format!("serializing config: {e}"),
    })?;
    writeln!(w, "{json}")?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct ThroughputReport {
    pub decisions: u64,
    pub frames: u64,
    pub elapsed_secs: f64,
    pub decisions_per_sec: f64,
    pub frames_per_sec: f64,
    pub mean_active_features: f64,
    pub max_active_features: usize,
    pub slot_count: usize,
}

/// Run the full act-extract-update loop against the configured environment
/// for roughly `seconds` of wall-clock time and report the decision rate.
pub fn benchmark_throughput(config: &ExperimentConfig, seconds: f64) -> Result<ThroughputReport> {
    config.validate()?;
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::Config {
            detail: format!("benchmark duration {seconds} out of range"),
        });
    }
    let background = if config.feature_set.requires_background() {
        Some(compute_background_for(config)?)
    } else {
        None
    };
    let mut rt = build_runtime(config, config.trial_seed(0), background.as_ref())?;
    let mut agent = LinearQ::new(
        rt.table.len(),
        config.hyper,
        config.bias,
        config.trace_floor,
    );

    let bias_extra = usize::from(config.bias);
    let started = Instant::now();
    let mut decisions = 0u64;
    let mut frames = 0u64;
    let mut active_sum = 0u64;
    let mut active_max = 0usize;

    'outer: loop {
        let episode_seed = rt.rng.gen();
        let first = rt.env.reset(episode_seed)?;
        rt.extractor.begin_episode();
        let mut state = rt.extractor.extract_next(&first);
        let mut action = agent.select_action(&state, &mut rt.rng);
        loop {
            let out = rt.env.step(rt.table[action])?;
            decisions += 1;
            frames += out.frames_elapsed as u64;
            let next_state = rt.extractor.extract_next(&out.frame);
            let next_action = if out.terminal {
                0
            } else {
                agent.select_action(&next_state, &mut rt.rng)
            };
            agent.sarsa_update(&Transition {
                state: &state,
                action,
                reward: out.reward,
                next_state: &next_state,
                next_action,
                terminal: out.terminal,
            });
            let active = state.len() + bias_extra;
            active_sum += active as u64;
            active_max = active_max.max(active);
            if started.elapsed().as_secs_f64() >= seconds {
                break 'outer;
            }
            if out.terminal {
                agent.reset_traces();
                break;
            }
            state = next_state;
            action = next_action;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    Ok(ThroughputReport {
        decisions,
        frames,
        elapsed_secs: elapsed,
        decisions_per_sec: decisions as f64 / elapsed.max(1e-9),
        frames_per_sec: frames as f64 / elapsed.max(1e-9),
        mean_active_features: active_sum as f64 / decisions.max(1) as f64,
        max_active_features: active_max,
        slot_count: agent.slot_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result_with_eval(trial: u32, scores: &[f64]) -> TrialResult {
        TrialResult {
            trial,
            seed: trial as u64,
            train: vec![EpisodeScore {
                score: 0.5,
                frames: 100,
            }],
            eval: scores
                .iter()
                .map(|&score| EpisodeScore { score, frames: 50 })
                .collect(),
            weights_path: None,
            decisions: 30,
            decisions_per_sec: 100.0,
        }
    }

    fn quick_config(budget: TrainBudget) -> ExperimentConfig {
        let mut config =
            ExperimentConfig::new(FeatureSet::BlobProst, "minicatch", budget);
        config.trials = 1;
        config.eval_episodes = 2;
        config.workers = 1;
        config
    }

    #[test]
    fn aggregate_of_three_simple_trials() {
        let results = vec![
            result_with_eval(0, &[1.0]),
            result_with_eval(1, &[2.0]),
            result_with_eval(2, &[3.0]),
        ];
        let agg = aggregate(&results).unwrap();
        assert_eq!(agg.mean, 2.0);
        assert_eq!(agg.best, 3.0);
        assert_eq!(agg.middle, 2.0);
        assert!((agg.std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_of_equal_trials_has_no_spread() {
        let results: Vec<TrialResult> =
            (0..24).map(|i| result_with_eval(i, &[7.0, 7.0])).collect();
        let agg = aggregate(&results).unwrap();
        assert_eq!(agg.mean, 7.0);
        assert_eq!(agg.std, 0.0);
        assert_eq!(agg.best, 7.0);
        assert_eq!(agg.middle, 7.0);
    }

    #[test]
    fn middle_is_the_twelfth_best_of_twenty_four() {
        // Eval means 1..=24 in scrambled trial order.
        let results: Vec<TrialResult> = (0..24u32)
            .map(|i| result_with_eval(i, &[((i * 7) % 24 + 1) as f64]))
            .collect();
        let agg = aggregate(&results).unwrap();
        assert_eq!(agg.best, 24.0);
        // Ranked best-first 24,23,...; the 12th best is 13.
        assert_eq!(agg.middle, 13.0);
    }

    #[test]
    fn middle_of_odd_counts_is_the_median() {
        let results: Vec<TrialResult> = [5.0, 1.0, 9.0, 3.0, 7.0]
            .iter()
            .enumerate()
            .map(|(i, &m)| result_with_eval(i as u32, &[m]))
            .collect();
        let agg = aggregate(&results).unwrap();
        assert_eq!(agg.middle, 5.0);
    }

    #[test]
    fn aggregate_matches_textbook_formulas() {
        let means: Vec<f64> = (0..24).map(|i| ((i * 37) % 100) as f64 / 7.0).collect();
        let results: Vec<TrialResult> = means
            .iter()
            .enumerate()
            .map(|(i, &m)| result_with_eval(i as u32, &[m]))
            .collect();
        let agg = aggregate(&results).unwrap();
        let m = means.iter().sum::<f64>() / 24.0;
        let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 23.0;
        assert!((agg.mean - m).abs() < 1e-12);
        assert!((agg.std - v.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aggregate_requires_results() {
        assert!(matches!(aggregate(&[]), Err(Error::EmptySamples)));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let trials = vec![
            result_with_eval(0, &[1.5, -2.25]),
            result_with_eval(1, &[0.1, 1e-9]),
        ];
        write_results_csv(&path, &trials).unwrap();
        let records = read_results_csv(&path).unwrap();
        assert_eq!(records.len(), 2 * 3);
        assert_eq!(records[0].phase, Phase::Train);
        assert_eq!(records[1].phase, Phase::Eval);
        assert_eq!(records[1].score, 1.5);
        assert_eq!(records[2].score, -2.25);
        assert_eq!(records[5].score, 1e-9, "scores survive the round trip");
        assert_eq!(eval_means_by_trial(&records), vec![-0.375, 0.05 + 5e-10]);
    }

    #[test]
    fn csv_reader_reports_the_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "trial,phase,episode,score,frames\n0,train,0,1.0,50\n0,banana,1,1.0,50\n").unwrap();
        match read_results_csv(&path) {
            Err(Error::ResultsParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {:?}", other.err()),
        }
        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(
            read_results_csv(&path),
            Err(Error::ResultsParse { line: 1, .. })
        ));
    }

    #[test]
    fn trials_are_deterministic() {
        let config = quick_config(TrainBudget::Episodes(2));
        let a = run_trial(&config, 0, None, None).unwrap();
        let b = run_trial(&config, 0, None, None).unwrap();
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.decisions, b.decisions);

        let c = run_trial(&config, 1, None, None).unwrap();
        assert_ne!(a.train, c.train, "different trials explore differently");
    }

    #[test]
    fn zero_budget_trains_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let config = quick_config(TrainBudget::Episodes(0));
        let result = run_trial(&config, 0, None, Some(dir.path())).unwrap();
        assert!(result.train.is_empty());
        assert_eq!(result.eval.len(), 2);

        let agent = LinearQ::load(result.weights_path.as_deref().unwrap()).unwrap();
        assert_eq!(agent.slot_count(), 1, "only the bias slot exists");
        let empty = crate::features::ActiveFeatureSet::empty();
        for a in 0..agent.action_count() {
            assert_eq!(agent.q_value(&empty, a), 0.0, "weights stay zero");
        }
    }

    #[test]
    fn frame_budget_stops_at_an_episode_boundary() {
        let config = quick_config(TrainBudget::Frames(1_500));
        let result = run_trial(&config, 0, None, None).unwrap();
        // MiniCatch episodes run ~1019 raw frames; two cover the budget.
        assert_eq!(result.train.len(), 2);
        let total: u64 = result.train.iter().map(|e| e.frames).sum();
        assert!(total >= 1_500);
    }

    #[test]
    fn experiment_writes_consistent_artifacts() {
        let run = |dir: &Path| {
            let mut config = quick_config(TrainBudget::Episodes(1));
            config.trials = 2;
            config.feature_set = FeatureSet::Basic;
            config.background_samples = 60;
            run_experiment(&config, Some(dir)).unwrap();
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run(dir_a.path());
        run(dir_b.path());
        for file in ["results.csv", "config.json", "background.bin", "trial_00.weights", "trial_01.weights"] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
            assert!(!a.is_empty());
        }
        let json = std::fs::read_to_string(dir_a.path().join("config.json")).unwrap();
        assert!(json.contains("artifact_version"));
        assert!(json.contains("\"basic\""));
        let records = read_results_csv(&dir_a.path().join("results.csv")).unwrap();
        assert_eq!(records.len(), 2 * (1 + 2));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut config = quick_config(TrainBudget::Episodes(1));
        config.trials = 3;
        let sequential = run_experiment(&config, None).unwrap();
        config.workers = 3;
        let parallel = run_experiment(&config, None).unwrap();
        for (a, b) in sequential.trials.iter().zip(&parallel.trials) {
            assert_eq!(a.trial, b.trial);
            assert_eq!(a.train, b.train);
            assert_eq!(a.eval, b.eval);
        }
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let ok = quick_config(TrainBudget::Episodes(1));
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.hyper.gamma = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let mut c = ok.clone();
        c.hyper.lambda = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let mut c = ok.clone();
        c.trials = 0;
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let mut c = ok.clone();
        c.hyper.epsilon = -0.1;
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let mut c = ok;
        c.frame_skip = 0;
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn unreachable_wire_addresses_fail_with_the_address() {
        let config = {
            let mut c = quick_config(TrainBudget::Episodes(1));
            c.env = "tcp:127.0.0.1:9".to_string();
            c
        };
        match run_trial(&config, 0, None, None) {
            Err(Error::Handshake { detail }) => {
                assert!(detail.contains("tcp:127.0.0.1:9"), "detail: {detail}");
            }
            other => panic!("expected handshake failure, got {:?}", other.err()),
        }
    }

    #[test]
    fn throughput_reports_activity() {
        let config = quick_config(TrainBudget::Episodes(1));
        let report = benchmark_throughput(&config, 0.2).unwrap();
        assert!(report.decisions > 0);
        assert!(report.frames >= report.decisions);
        assert!(report.decisions_per_sec > 0.0);
        assert!(report.mean_active_features >= 1.0);
        assert!(report.max_active_features >= 1);
        assert!(report.slot_count >= 1);
    }

    #[test]
    fn evaluate_agent_runs_without_learning() {
        let config = quick_config(TrainBudget::Episodes(1));
        let trained = run_trial(&config, 0, None, None).unwrap();
        let mut agent = LinearQ::new(3, config.hyper, config.bias, config.trace_floor);
        let slots_before = agent.slot_count();
        let eval = evaluate_agent(&config, &mut agent, None, 0).unwrap();
        assert_eq!(eval.len(), 2);
        assert_eq!(agent.slot_count(), slots_before, "evaluation adds no slots");
        drop(trained);
    }

    #[test]
    fn evaluate_agent_checks_the_action_count() {
        let config = quick_config(TrainBudget::Episodes(1));
        let mut agent = LinearQ::new(7, config.hyper, true, config.trace_floor);
        assert!(matches!(
            evaluate_agent(&config, &mut agent, None, 0),
            Err(Error::Config { .. })
        ));
    }
}
