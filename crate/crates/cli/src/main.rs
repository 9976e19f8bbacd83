//! `sparsa` — train, evaluate, and inspect sparse-feature agents on the
//! built-in toy games or an external screen server.
//!
//! Exit codes: 0 success, 1 usage or configuration problem, 2 runtime
//! failure, 3 wire-protocol failure.

use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sparsa::agent::LinearQ;
use sparsa::env::{make_env, serve_connection, standard_stack, Environment};
use sparsa::features::{Extractor, FeatureSet};
use sparsa::harness::{
    self, stats, ActionSet, ExperimentConfig, ThroughputReport, TrainBudget,
};
use sparsa::screen::{load_background, save_background, BackgroundModel};

#[derive(Parser)]
#[command(
    name = "sparsa",
    version,
    about = "Sparse-feature Sarsa agents for screen-based games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a per-pixel background model from random play.
    Background(BackgroundArgs),
    /// Print the active feature ids (or detected blobs) per decision frame.
    Extract(ExtractArgs),
    /// Train agents over several trials and write results + weights.
    Train(TrainArgs),
    /// Evaluate a saved weight snapshot with learning disabled.
    Eval(EvalArgs),
    /// Measure end-to-end decisions per second.
    Bench(BenchArgs),
    /// Welch's t-test between the eval phases of two results files.
    Compare(CompareArgs),
    /// Expose a built-in game over the wire protocol.
    Serve(ServeArgs),
}

fn parse_feature_set(s: &str) -> Result<FeatureSet, String> {
    s.parse().map_err(|e: sparsa::Error| e.to_string())
}

fn parse_action_set(s: &str) -> Result<ActionSet, String> {
    s.parse().map_err(|e: sparsa::Error| e.to_string())
}

/// Flags shared by every subcommand that steps an environment.
#[derive(Args)]
struct EnvArgs {
    /// minipong, minicatch, tcp:HOST:PORT, or exec:COMMAND
    #[arg(long)]
    env: String,
    /// basic, bpros, bprost, or blob-prost
    #[arg(long, default_value = "blob-prost", value_parser = parse_feature_set)]
    features: FeatureSet,
    /// Decisions repeat for this many raw frames.
    #[arg(long, default_value_t = 5)]
    frame_skip: u32,
    /// Raw-frame cap per episode.
    #[arg(long, default_value_t = 18_000)]
    max_frames_per_episode: u32,
    /// Episodes start with 1..=N wasted no-ops.
    #[arg(long, default_value_t = 30)]
    max_noops: u32,
    /// minimal (the game's own set) or full (all 18 actions).
    #[arg(long, default_value = "minimal", value_parser = parse_action_set)]
    action_set: ActionSet,
    /// Vertical merge tolerance of the blob detector.
    #[arg(long, default_value_t = 6)]
    blob_tolerance: u32,
    /// Frames sampled when a background model must be built.
    #[arg(long, default_value_t = 18_000)]
    background_samples: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl EnvArgs {
    fn config(&self, budget: TrainBudget) -> ExperimentConfig {
        let mut config = ExperimentConfig::new(self.features, &self.env, budget);
        config.frame_skip = self.frame_skip;
        config.episode_cap = self.max_frames_per_episode;
        config.max_noops = self.max_noops;
        config.action_set = self.action_set;
        config.blob_tolerance = self.blob_tolerance;
        config.background_samples = self.background_samples;
        config.base_seed = self.seed;
        config
    }
}

#[derive(Args)]
struct HyperArgs {
    /// Step size, divided by the active feature count per update.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Discount factor.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    /// Eligibility-trace decay.
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    /// Exploration rate while training.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Drop the always-on bias feature.
    #[arg(long)]
    no_bias: bool,
    /// Traces smaller than this are pruned.
    #[arg(long, default_value_t = 1e-4)]
    trace_floor: f64,
}

#[derive(Args)]
struct BackgroundArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Destination file for the model.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Decision frames to print.
    #[arg(long, default_value_t = 10)]
    frames: u32,
    /// Reuse a saved background model instead of building one.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Print detected blobs as color,x_min,x_max,y_min,y_max instead of ids.
    #[arg(long)]
    dump_blobs: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = 24)]
    trials: u32,
    /// Training episodes per trial (exclusive with --train-frames).
    #[arg(long, conflicts_with = "train_frames")]
    episodes: Option<u32>,
    /// Training raw-frame budget per trial.
    #[arg(long)]
    train_frames: Option<u64>,
    #[arg(long, default_value_t = 499)]
    eval_episodes: u32,
    /// Exploration rate during the evaluation phase.
    #[arg(long, default_value_t = 0.01)]
    eval_epsilon: f64,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: u32,
    /// Output directory for results.csv, config.json and weights.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Weight snapshot produced by train.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 499)]
    episodes: u32,
    #[arg(long, default_value_t = 0.01)]
    eval_epsilon: f64,
    /// Reuse a saved background model instead of building one.
    #[arg(long)]
    background: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    env: EnvArgs,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = 10.0)]
    seconds: f64,
}

#[derive(Args)]
struct CompareArgs {
    /// results.csv of the first run.
    #[arg(long)]
    a: PathBuf,
    /// results.csv of the second run.
    #[arg(long)]
    b: PathBuf,
    /// Significance level for the verdict line.
    #[arg(long, default_value_t = 0.05)]
    alpha_level: f64,
}

#[derive(Args)]
struct ServeArgs {
    /// Game to expose (any environment name works).
    #[arg(long)]
    env: String,
    /// Speak the protocol on stdin/stdout.
    #[arg(long, conflicts_with = "listen")]
    stdio: bool,
    /// Bind this address and serve exactly one connection.
    #[arg(long)]
    listen: Option<String>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(classify(&err));
        }
    }
}

fn classify(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<sparsa::Error>() {
        Some(e) if e.is_protocol() => 3,
        Some(
            sparsa::Error::Config { .. }
            | sparsa::Error::UnknownFeatureSet(_)
            | sparsa::Error::UnknownEnv(_),
        ) => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Background(args) => background(args),
        Command::Extract(args) => extract(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Bench(args) => bench(args),
        Command::Compare(args) => compare(args),
        Command::Serve(args) => serve(args),
    }
}

fn background(args: BackgroundArgs) -> anyhow::Result<()> {
    let config = args.env.config(TrainBudget::Episodes(0));
    let model = harness::compute_background_for(&config)
        .with_context(|| format!("sampling background from {}", config.env))?;
    save_background(&model, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "background model from {} frames of {} written to {}",
        config.background_samples,
        config.env,
        args.out.display()
    );
    Ok(())
}

/// Load the named model, or build one when the feature set needs it.
fn background_for(
    config: &ExperimentConfig,
    file: &Option<PathBuf>,
) -> anyhow::Result<Option<BackgroundModel>> {
    if let Some(path) = file {
        let model =
            load_background(path).with_context(|| format!("reading {}", path.display()))?;
        return Ok(Some(model));
    }
    if !config.feature_set.requires_background() {
        return Ok(None);
    }
    eprintln!(
        "note: building a background model from {} frames (reuse one via --background)",
        config.background_samples
    );
    Ok(Some(harness::compute_background_for(config)?))
}

fn extract(args: ExtractArgs) -> anyhow::Result<()> {
    let config = args.env.config(TrainBudget::Episodes(0));
    config.validate()?;
    let background = background_for(&config, &args.background)?;
    let raw = make_env(&config.env)?;
    let table: Vec<u8> = match config.action_set {
        ActionSet::Minimal => raw.minimal_actions().to_vec(),
        ActionSet::Full => (0..raw.full_action_count() as u8).collect(),
    };
    let mut env = standard_stack(raw, config.max_noops, config.frame_skip, config.episode_cap);
    let mut extractor = Extractor::new(config.feature_set, background, config.blob_tolerance)?;

    use rand::Rng;
    let mut rng = rand_chacha_rng(config.base_seed);
    let mut frame = env.reset(rng.gen())?;
    extractor.begin_episode();
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    use std::io::Write;
    for i in 0..args.frames {
        if args.dump_blobs {
            if i > 0 {
                writeln!(out)?;
            }
            for blob in sparsa::blobs::detect_blobs(&frame, config.blob_tolerance) {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    blob.color, blob.x_min, blob.x_max, blob.y_min, blob.y_max
                )?;
            }
        } else {
            let active = extractor.extract_next(&frame);
            let line: Vec<String> = active.as_slice().iter().map(u64::to_string).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        let outcome = env.step(table[rng.gen_range(0..table.len())])?;
        frame = outcome.frame;
        if outcome.terminal && i + 1 < args.frames {
            frame = env.reset(rng.gen())?;
            extractor.begin_episode();
        }
    }
    out.flush()?;
    Ok(())
}

fn rand_chacha_rng(seed: u64) -> impl rand::Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let budget = match (args.episodes, args.train_frames) {
        (Some(n), None) => TrainBudget::Episodes(n),
        (None, Some(n)) => TrainBudget::Frames(n),
        (None, None) => anyhow::bail!(sparsa::Error::Config {
            detail: "pass a training budget: --episodes N or --train-frames N".to_string(),
        }),
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    let mut config = args.env.config(budget);
    config.trials = args.trials;
    config.eval_episodes = args.eval_episodes;
    config.eval_epsilon = args.eval_epsilon;
    config.workers = args.workers;
    config.hyper.alpha = args.hyper.alpha;
    config.hyper.gamma = args.hyper.gamma;
    config.hyper.lambda = args.hyper.lambda;
    config.hyper.epsilon = args.hyper.epsilon;
    config.bias = !args.hyper.no_bias;
    config.trace_floor = args.hyper.trace_floor;
    config.validate()?;

    if config.feature_set.requires_background() {
        eprintln!(
            "note: building a shared background model from {} frames",
            config.background_samples
        );
    }
    let result = harness::run_experiment(&config, Some(&args.out))?;
    for trial in &result.trials {
        println!(
            "trial {:02}  seed {:<6}  eval mean {:>10.3}  ({} train episodes, {} decisions, {:.0}/s)",
            trial.trial,
            trial.seed,
            trial.eval_mean(),
            trial.train.len(),
            trial.decisions,
            trial.decisions_per_sec
        );
    }
    let agg = result.aggregate;
    println!(
        "{} trials on {}: mean {:.3}  std {:.3}  best {:.3}  middle {:.3}",
        result.trials.len(),
        config.env,
        agg.mean,
        agg.std,
        agg.best,
        agg.middle
    );
    println!("results written to {}", args.out.display());
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let mut config = args.env.config(TrainBudget::Episodes(0));
    config.eval_episodes = args.episodes;
    config.eval_epsilon = args.eval_epsilon;
    config.validate()?;
    let background = background_for(&config, &args.background)?;
    let mut agent = LinearQ::load(&args.weights)
        .with_context(|| format!("reading {}", args.weights.display()))?;
    let episodes = harness::evaluate_agent(&config, &mut agent, background.as_ref(), 0)?;
    let scores: Vec<f64> = episodes.iter().map(|e| e.score).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let worst = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "{} episodes on {}: mean {:.3}  std {:.3}  best {:.3}  worst {:.3}",
        scores.len(),
        config.env,
        stats::mean(&scores),
        stats::sample_std(&scores),
        best,
        worst
    );
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let mut config = args.env.config(TrainBudget::Episodes(0));
    config.hyper.alpha = args.hyper.alpha;
    config.hyper.gamma = args.hyper.gamma;
    config.hyper.lambda = args.hyper.lambda;
    config.hyper.epsilon = args.hyper.epsilon;
    config.bias = !args.hyper.no_bias;
    config.trace_floor = args.hyper.trace_floor;
    let report: ThroughputReport = harness::benchmark_throughput(&config, args.seconds)?;
    println!(
        "{} decisions ({} raw frames) in {:.2}s",
        report.decisions, report.frames, report.elapsed_secs
    );
    println!(
        "throughput: {:.1} decisions/sec, {:.1} frames/sec",
        report.decisions_per_sec, report.frames_per_sec
    );
    println!(
        "active features per decision: mean {:.1}, max {}",
        report.mean_active_features, report.max_active_features
    );
    println!("weight slots allocated: {}", report.slot_count);
    Ok(())
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    if !(args.alpha_level > 0.0 && args.alpha_level < 1.0) {
        anyhow::bail!(sparsa::Error::Config {
            detail: format!("significance level {} outside (0, 1)", args.alpha_level),
        });
    }
    let load = |path: &Path| -> anyhow::Result<Vec<f64>> {
        let records = harness::read_results_csv(path)?;
        Ok(harness::eval_means_by_trial(&records))
    };
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    let test = stats::welch_t_test(&a, &b)?;
    println!(
        "a: {} trials, mean {:.4}   b: {} trials, mean {:.4}",
        a.len(),
        stats::mean(&a),
        b.len(),
        stats::mean(&b)
    );
    println!("welch t = {:.4}, df = {:.2}, two-sided p = {:.6}", test.t, test.df, test.p);
    if test.p < args.alpha_level {
        let higher = if stats::mean(&a) > stats::mean(&b) { "a" } else { "b" };
        println!(
            "significant difference at level {} ({} scored higher)",
            args.alpha_level, higher
        );
    } else {
        println!("no significant difference at level {}", args.alpha_level);
    }
    Ok(())
}

fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let mut env = make_env(&args.env)?;
    if args.stdio {
        let stdin = std::io::stdin();
        let stdout = std::io::stdout();
        serve_connection(&mut env, &mut stdin.lock(), &mut stdout.lock())?;
        return Ok(());
    }
    let addr = args.listen.ok_or_else(|| sparsa::Error::Config {
        detail: "pass --stdio or --listen ADDR".to_string(),
    })?;
    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("serving {} on {}", args.env, listener.local_addr()?);
    let (stream, peer) = listener.accept()?;
    eprintln!("client connected from {peer}");
    stream.set_nodelay(true)?;
    let mut reader = stream.try_clone()?;
    let mut writer = stream;
    serve_connection(&mut env, &mut reader, &mut writer)?;
    Ok(())
}
