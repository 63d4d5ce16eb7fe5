use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rcac_cli::aggregate::{aggregate, AggregateOptions};
use rcac_cli::compare::{compare, DiversityOptions};
use rcac_cli::orchestrate::{execute, run_one, workers_from_env, RUN_ONE_VERB};
use rcac_cli::{parse_config, Overrides};
use rcac_core::diffcompute::checkpoint::Container;
use rcac_core::envs::{EnvConfig, EnvId};
use rcac_core::rcac::{evaluate_policy, load_policy, random_policy_return, Mode};

#[derive(Parser)]
#[command(name = "rcac", version, about = "Curiosity-driven SAC from pixels: training, evaluation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (mode, seed) combination of an experiment.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or the uniform random policy.
    Evaluate(EvaluateArgs),
    /// Reduce completed runs to summary.csv and curves.svg per environment.
    Aggregate(AggregateArgs),
    /// Compare visited-state diversity of two modes seed by seed.
    Diversity(DiversityArgs),
    #[command(name = RUN_ONE_VERB, hide = true)]
    RunOne {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated list: rcac, baseline, mixed.
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated seeds or inclusive ranges, e.g. `0-4`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    /// Probability of acting with the curious policy (rcac mode).
    #[arg(long = "pc")]
    p_c: Option<f64>,
    #[arg(long)]
    obs_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config key, repeatable: `--set batch_size=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overwrite completed runs.
    #[arg(long)]
    force: bool,
    /// Skip aggregation after training.
    #[arg(long)]
    no_aggregate: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trainer checkpoint (checkpoint_final.bin or checkpoint_latest.bin).
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    checkpoint: Option<PathBuf>,
    /// Evaluate uniform random actions instead of a checkpoint.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value = "pendulum_swingup")]
    env: String,
    #[arg(long)]
    obs_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Evaluation seed; defaults to the run seed of the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    no_plot: bool,
    /// Skip computing random-policy returns.
    #[arg(long)]
    no_random: bool,
}

#[derive(Args)]
struct DiversityArgs {
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "point_reacher_sparse")]
    env: String,
    #[arg(long, default_value = "baseline")]
    reference: String,
    #[arg(long, default_value = "rcac")]
    candidate: String,
    /// Neighbour rank of the entropy estimator.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Cells per axis of the coverage grid.
    #[arg(long, default_value_t = 20)]
    resolution: usize,
}

fn train(args: TrainArgs) -> anyhow::Result<()> {
    let text = match &args.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let overrides = Overrides {
        env: args.env,
        modes: args.mode,
        seeds: args.seeds,
        steps: args.steps,
        p_c: args.p_c,
        obs_size: args.obs_size,
        out: args.out,
        set: args.set,
        force: args.force,
    };
    let spec = parse_config(&text, &overrides)?;
    let workers = workers_from_env()?;
    let exe = std::env::current_exe().ok();
    eprintln!("{} runs into {} with {workers} worker(s)", spec.runs.len(), spec.out.display());
    execute(&spec, workers, exe.as_deref())?;
    if !args.no_aggregate {
        for path in aggregate(&spec.out, &AggregateOptions { plot: spec.plot, random_baseline: true })? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    if args.random {
        let mut env = EnvConfig::new(args.env.parse::<EnvId>()?);
        if let Some(s) = args.obs_size {
            env.obs_size = s;
        }
        env.validate()?;
        let seed = args.seed.unwrap_or(0);
        let ret = random_policy_return(&env, seed, args.episodes)?;
        println!("env={} policy=random seed={seed} episodes={} mean_return={ret}", env.id.as_str(), args.episodes);
        return Ok(());
    }
    let path = args.checkpoint.expect("clap enforces --checkpoint or --random");
    let container = Container::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let (cfg, rae, task) = load_policy(&container)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let returns = evaluate_policy(&rae, &task, &cfg.env, seed, args.episodes)?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let per: Vec<String> = returns.iter().map(|r| r.to_string()).collect();
    println!(
        "env={} mode={} seed={seed} episodes={} mean_return={mean} returns={}",
        cfg.env.id.as_str(),
        cfg.mode,
        args.episodes,
        per.join(";")
    );
    Ok(())
}

fn diversity(args: DiversityArgs) -> anyhow::Result<()> {
    let opts = DiversityOptions {
        env: args.env.parse()?,
        reference: args.reference.parse::<Mode>()?,
        candidate: args.candidate.parse::<Mode>()?,
        k: args.k,
        resolution: args.resolution,
    };
    let s = compare(&args.out, opts)?;
    for (seed, r) in s.seeds.iter().zip(&s.reports) {
        println!(
            "seed {seed}: entropy {} {:.4} vs {} {:.4} coverage {:.4} vs {:.4}",
            opts.reference, r.entropy_a.value, opts.candidate, r.entropy_b.value, r.coverage_a, r.coverage_b
        );
    }
    println!(
        "{} higher entropy in {}/{} seeds; mean coverage {} {:.4} vs {} {:.4}",
        opts.candidate,
        s.candidate_wins,
        s.seeds.len(),
        opts.reference,
        s.mean_coverage_reference,
        opts.candidate,
        s.mean_coverage_candidate
    );
    println!("{}", s.report_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Aggregate(a) => aggregate(&a.out, &AggregateOptions { plot: !a.no_plot, random_baseline: !a.no_random })
            .map(|paths| paths.iter().for_each(|p| println!("{}", p.display())))
            .map_err(Into::into),
        Command::Diversity(a) => diversity(a),
        Command::RunOne { dir } => {
            let name = dir.display().to_string();
            // one write per line so lines from parallel workers do not interleave
            let log = |e: &rcac_core::rcac::EvalResult| {
                let line = format!("{name} step {} mean_return {:.3}\n", e.step, e.mean);
                let _ = std::io::Write::write_all(&mut std::io::stderr().lock(), line.as_bytes());
            };
            run_one(&dir, log).map(|_| ()).map_err(Into::into)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
