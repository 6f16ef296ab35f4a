//! Command-line harness: dataset generation, evaluation, training,
//! fine-tuning, replay verification and fixture fitting.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use binpack_core::config::ExperimentConfig;
use binpack_core::data::{self, Dataset, RealworldBounds};
use binpack_core::env::{run_batch, run_episode, TrajectorySource};
use binpack_core::learn::{self, finetune, prepare_steps, pretrain_update, Critic, FinetuneConfig};
use binpack_core::metrics::{compute_metrics, emit_report, report_text};
use binpack_core::policy::{
    BestFitPolicy, DblfPolicy, MaxContactPolicy, PackPolicy, SoftmaxPolicy,
};
use binpack_core::randomizer::{fit_kde, silverman_bandwidth, ParamTable};

#[derive(Parser)]
#[command(name = "binpack", version, about = "Online 3D bin packing engine")]
struct Cli {
    /// Experiment config file (flat key = value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for batch evaluation.
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Output path or stem.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file (plus ground truth for cut datasets).
    GenDataset(GenDatasetArgs),
    /// Evaluate a policy on a dataset and write a metrics report.
    Eval(EvalArgs),
    /// Pre-train in the static (rule-gated, unrandomized) environment.
    Pretrain(TrainArgs),
    /// Train in the domain-randomized environment.
    Simtrain(TrainArgs),
    /// Fine-tune a policy on recorded trajectories.
    Finetune(FinetuneArgs),
    /// Re-run a trajectory log and verify bit-exact reproduction.
    Replay(ReplayArgs),
    /// Fit sampling distributions from a measurement fixture.
    FitParams(FitParamsArgs),
}

#[derive(Args)]
struct GenDatasetArgs {
    /// cut | realworld-like
    #[arg(long)]
    kind: String,
    /// Container dimensions, e.g. 50x50x50 (cm).
    #[arg(long, default_value = "50x50x50")]
    container: String,
    #[arg(long, default_value_t = 10.0)]
    min_side: f64,
    #[arg(long, default_value_t = 25.0)]
    max_side: f64,
    /// Item count for realworld-like streams.
    #[arg(long, default_value_t = 150)]
    count: usize,
    #[arg(long, default_value_t = 10.0)]
    max_mass: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// dblf | best-fit | max-contact | softmax
    #[arg(long)]
    policy: String,
    /// Dataset file from gen-dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Softmax policy checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Override config randomization: on | off.
    #[arg(long)]
    randomization: Option<String>,
    /// Measurement fixture for KDE-based physics sampling.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Pick-set file; an empty one makes every placement infeasible.
    #[arg(long)]
    picks: Option<PathBuf>,
    /// Also write the evaluated episodes as a trajectory log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Tag episodes written via --log as real-phase1 collection data.
    #[arg(long, default_value_t = false)]
    phase1: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Number of policy updates.
    #[arg(long, default_value_t = 200)]
    updates: usize,
    /// Steps per update batch.
    #[arg(long, default_value_t = 80)]
    batch: usize,
    /// Parallel episodes collected per round.
    #[arg(long, default_value_t = 16)]
    rollout_envs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out_critic: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Trajectory log(s) with the collected episodes.
    #[arg(long, required = true)]
    log: Vec<PathBuf>,
    /// Starting policy checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    critic: Option<PathBuf>,
    /// Overrides for the config file's finetune_* block.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Use the critic's Q in the policy gradient instead of returns.
    #[arg(long)]
    critic_q: Option<bool>,
    #[arg(long)]
    out_critic: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trajectory log to verify.
    log: PathBuf,
}

#[derive(Args)]
struct FitParamsArgs {
    #[arg(long)]
    fixture: PathBuf,
}

fn parse_dims(raw: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = raw.split(['x', ','].as_ref()).collect();
    if parts.len() != 3 {
        bail!("expected three container dimensions, e.g. 50x50x50");
    }
    let mut dims = [0.0; 3];
    for (i, p) in parts.iter().enumerate() {
        dims[i] = p
            .trim()
            .parse::<f64>()
            .with_context(|| format!("bad container dimension {p:?}"))?;
        if dims[i] <= 0.0 {
            bail!("container dimensions must be positive");
        }
    }
    Ok(dims)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading config {path:?}"))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn build_policy(name: &str, checkpoint: Option<&Path>) -> Result<Box<dyn PackPolicy + Sync>> {
    match name {
        "dblf" => Ok(Box::new(DblfPolicy)),
        "best-fit" => Ok(Box::new(BestFitPolicy)),
        "max-contact" => Ok(Box::new(MaxContactPolicy)),
        "softmax" => {
            let policy = match checkpoint {
                Some(path) => SoftmaxPolicy::load_checkpoint(path)
                    .with_context(|| format!("loading checkpoint {path:?}"))?,
                None => SoftmaxPolicy::uniform(),
            };
            Ok(Box::new(policy))
        }
        other => bail!("unknown policy {other:?} (dblf, best-fit, max-contact, softmax)"),
    }
}

fn param_table(fixture: Option<&Path>) -> Result<ParamTable> {
    match fixture {
        Some(path) => {
            let samples = data::read_measurement_fixture(path)
                .with_context(|| format!("reading fixture {path:?}"))?;
            Ok(ParamTable::from_fixture(&samples)?)
        }
        None => Ok(ParamTable::defaults()),
    }
}

fn cmd_gen_dataset(cli: &Cli, args: &GenDatasetArgs) -> Result<()> {
    let dims = parse_dims(&args.container)?;
    let out = cli
        .out
        .clone()
        .ok_or_else(|| anyhow!("gen-dataset requires --out"))?;
    let dataset = match args.kind.as_str() {
        "cut" => {
            let ds = Dataset::cut(dims, args.min_side, args.max_side, cli.seed)?;
            let gt = data::gen_cut_dataset(dims, args.min_side, args.max_side, cli.seed)?;
            let gt_path = out.with_extension("gt");
            data::write_ground_truth(&gt_path, &gt.ground_truth)?;
            println!("ground truth: {}", gt_path.display());
            ds
        }
        "realworld-like" => Dataset::realworld_like(
            dims,
            RealworldBounds {
                min_side_cm: args.min_side.max(5.0),
                max_side_cm: args.max_side.max(args.min_side).min(40.0),
                max_mass_kg: args.max_mass.min(10.0),
            },
            args.count,
            cli.seed,
        ),
        other => bail!("unknown dataset kind {other:?} (cut, realworld-like)"),
    };
    data::write_dataset(&out, &dataset)?;
    println!(
        "wrote {} ({} items, kind {})",
        out.display(),
        dataset.items.len(),
        args.kind
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let mut cfg = load_config(cli)?;
    if let Some(flag) = &args.randomization {
        cfg.randomization = match flag.as_str() {
            "on" => true,
            "off" => false,
            other => bail!("--randomization expects on/off, got {other:?}"),
        };
    }
    if let Some(picks) = &args.picks {
        let poses = data::read_pick_set(picks)?;
        cfg.picks_available = !poses.is_empty();
    }
    let dataset = data::read_dataset(&args.dataset)
        .with_context(|| format!("reading dataset {:?}", args.dataset))?;
    cfg.dims_cm = dataset.container_cm;
    let policy = build_policy(&args.policy, args.checkpoint.as_deref())?;
    let table = param_table(args.fixture.as_deref())?;
    let episodes = args.episodes.unwrap_or(cfg.episodes);
    let parallel = cli.parallel.unwrap_or(cfg.parallel);
    let seeds: Vec<u64> = (0..episodes as u64)
        .map(|i| cli.seed.wrapping_add(i))
        .collect();
    let stream_for = |seed: u64| dataset.stream_for(seed);
    let results = run_batch(policy.as_ref(), &stream_for, &cfg, &table, parallel, &seeds)?;
    let dataset_name = args
        .dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let report = compute_metrics(&results, policy.name(), &dataset_name, cfg.hash())?;
    print!("{}", report_text(&report));
    if let Some(stem) = &cli.out {
        emit_report(&report, stem)?;
        println!("report: {}.csv, {}.txt", stem.display(), stem.display());
    }
    if let Some(log_path) = &args.log {
        let mut log = data::log_from_results(&cfg, &results);
        if args.phase1 {
            for ep in &mut log.episodes {
                ep.record.source = TrajectorySource::RealPhase1;
            }
        }
        data::write_log(log_path, &log)?;
        println!("log: {}", log_path.display());
    }
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs, randomized: bool) -> Result<()> {
    let mut cfg = load_config(cli)?;
    cfg.randomization = randomized;
    cfg.static_stable_gate = !randomized;
    let dataset = data::read_dataset(&args.dataset)?;
    cfg.dims_cm = dataset.container_cm;
    let table = ParamTable::defaults();
    let mut policy = match &args.checkpoint {
        Some(p) => SoftmaxPolicy::load_checkpoint(p)?,
        None => SoftmaxPolicy::uniform(),
    };
    let mut critic = Critic::new(10);
    let mut episode_counter: u64 = 0;
    for update in 0..args.updates {
        let mut steps = Vec::new();
        let mut returns = Vec::new();
        while steps.len() < args.batch {
            for i in 0..args.rollout_envs as u64 {
                let seed = binpack_core::env::derive_seed(cli.seed, episode_counter + i, 0x7ea1);
                let stream = dataset.stream_for(seed);
                let result = run_episode(
                    &policy,
                    &stream,
                    &cfg,
                    &table,
                    seed,
                    TrajectorySource::Simulated,
                )?;
                returns.push(result.episode_return);
                steps.extend(prepare_steps(&result.trajectory, &cfg)?);
            }
            episode_counter += args.rollout_envs as u64;
            if returns.len() > 10_000 {
                bail!("training collected no usable steps; check the dataset");
            }
        }
        for batch in steps.chunks(args.batch) {
            let (p, c) = pretrain_update(batch, &policy, &critic, args.lr)?;
            policy = p;
            critic = c;
        }
        if update % 10 == 0 || update + 1 == args.updates {
            let mean_return = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
            println!(
                "update {update}: episodes {} mean_return {mean_return:.1}",
                returns.len()
            );
        }
    }
    let out = cli
        .out
        .clone()
        .ok_or_else(|| anyhow!("training requires --out for the policy checkpoint"))?;
    policy.save_checkpoint(&out)?;
    println!("policy checkpoint: {}", out.display());
    if let Some(cpath) = &args.out_critic {
        critic.save_checkpoint(cpath)?;
        println!("critic checkpoint: {}", cpath.display());
    }
    Ok(())
}

fn cmd_finetune(cli: &Cli, args: &FinetuneArgs) -> Result<()> {
    let mut records = Vec::new();
    let mut cfg: Option<ExperimentConfig> = None;
    for path in &args.log {
        let log = data::read_log(path).with_context(|| format!("reading log {path:?}"))?;
        match &cfg {
            None => cfg = Some(log.config.clone()),
            Some(existing) => {
                if existing.hash() != log.config.hash() {
                    bail!("logs were recorded under different configs");
                }
            }
        }
        records.extend(log.episodes.into_iter().map(|e| e.record));
    }
    let cfg = cfg.ok_or_else(|| anyhow!("no logs supplied"))?;
    let policy = SoftmaxPolicy::load_checkpoint(&args.checkpoint)?;
    let critic = match &args.critic {
        Some(p) => Critic::load_checkpoint(p)?,
        None => Critic::new(10),
    };
    let mut settings = cfg.finetune;
    if let Some(v) = args.alpha {
        settings.alpha = v;
    }
    if let Some(v) = args.epsilon {
        settings.epsilon = v;
    }
    if let Some(v) = args.beta {
        settings.beta = v;
    }
    if let Some(v) = args.lr {
        settings.learning_rate = v;
    }
    if let Some(v) = args.epochs {
        settings.epochs = v.max(1);
    }
    if let Some(v) = args.batch {
        settings.batch_size = v.max(1);
    }
    if let Some(v) = args.critic_q {
        settings.use_critic_q = v;
    }
    let fcfg = FinetuneConfig::from_settings(&settings);
    let (new_policy, new_critic, report) = finetune(&records, &policy, &critic, &cfg, &fcfg)?;
    println!(
        "trajectories: {} kept {} steps {} updates {} final_kl {:.6}",
        report.trajectories_in,
        report.trajectories_kept,
        report.steps_trained,
        report.updates,
        report.final_kl
    );
    let out = cli
        .out
        .clone()
        .ok_or_else(|| anyhow!("finetune requires --out for the policy checkpoint"))?;
    new_policy.save_checkpoint(&out)?;
    println!("policy checkpoint: {}", out.display());
    if let Some(cpath) = &args.out_critic {
        new_critic.save_checkpoint(cpath)?;
        println!("critic checkpoint: {}", cpath.display());
    }
    Ok(())
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let log = data::read_log(&args.log)?;
    let mut mismatches = 0usize;
    for (i, ep) in log.episodes.iter().enumerate() {
        match learn::replay_matches(&ep.record, &log.config)? {
            None => println!("episode {i} (seed {}): MATCH", ep.record.episode_seed),
            Some(reason) => {
                mismatches += 1;
                println!(
                    "episode {i} (seed {}): MISMATCH {reason}",
                    ep.record.episode_seed
                );
            }
        }
    }
    if mismatches == 0 {
        println!("MATCH");
        Ok(())
    } else {
        bail!("{mismatches} episode(s) failed replay verification");
    }
}

fn cmd_fit_params(cli: &Cli, args: &FitParamsArgs) -> Result<()> {
    let samples = data::read_measurement_fixture(&args.fixture)?;
    let mut out = String::new();
    out.push_str("parameter,n,bandwidth,lo,hi,mean\n");
    for (name, values) in &samples {
        let bw = silverman_bandwidth(values);
        let kde = fit_kde(values, bw)?;
        let (lo, hi) = kde.support();
        out.push_str(&format!(
            "{name},{},{bw},{lo},{hi},{}\n",
            values.len(),
            kde.mean()
        ));
    }
    print!("{out}");
    if let Some(path) = &cli.out {
        std::fs::write(path, out)?;
        println!("fitted summary: {}", path.display());
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenDataset(args) => cmd_gen_dataset(&cli, args),
        Command::Eval(args) => cmd_eval(&cli, args),
        Command::Pretrain(args) => cmd_train(&cli, args, false),
        Command::Simtrain(args) => cmd_train(&cli, args, true),
        Command::Finetune(args) => cmd_finetune(&cli, args),
        Command::Replay(args) => cmd_replay(args),
        Command::FitParams(args) => cmd_fit_params(&cli, args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
