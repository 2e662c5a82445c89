//! `hlc` — train, evaluate, and plot hierarchical lead-critic agents.
//!
//! Exit codes: 0 success; 2 usage errors (unknown flags, bad config values,
//! unknown env/algo names); 1 operational failures (I/O, training errors).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hlc_core::env::{make_env, ENV_NAMES};
use hlc_core::error::CoreError;
use hlc_core::harness::{
    evaluate, group_and_aggregate, load_trained, run_training, write_plot_data, write_svg,
    PartialRunConfig, RunConfig,
};
use hlc_core::seedstream::{substream, tags};
use hlc_core::trainer::{VariantSpec, VARIANT_NAMES};

#[derive(Parser)]
#[command(
    name = "hlc",
    about = "Multi-agent soft actor-critic training with hierarchical lead critics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Environment name (see `list-envs`); may come from --config instead.
    #[arg(long)]
    env: Option<String>,
    /// Algorithm preset (see `list-algos`); may come from --config instead.
    #[arg(long)]
    algo: Option<String>,
    /// Master seed; fixes every random draw of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML config file; flags and --override take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single-field override, repeatable: --override key=value.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact directory (default runs/{env}_{algo}_seed{seed}).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Artifact directory holding config.toml and checkpoints/.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Episodes to run (default: the run's eval_episodes).
    #[arg(long)]
    episodes: Option<usize>,
    /// Checkpoint name inside checkpoints/ (default ckpt_final).
    #[arg(long)]
    name: Option<String>,
    /// Evaluation seed (default: the run's seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directories; runs differing only by seed are folded into one
    /// curve with a 95% confidence band.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Output SVG path; plot data is written next to it as CSV.
    #[arg(long)]
    out: PathBuf,
    /// Plot title (default: the environment name).
    #[arg(long)]
    title: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and fill an artifact directory.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint with deterministic actions.
    Eval(EvalArgs),
    /// Render learning curves from one or more artifact directories.
    Plot(PlotArgs),
    /// List the available environments.
    ListEnvs,
    /// List the available algorithm presets.
    ListAlgos,
}

fn train(args: TrainArgs) -> Result<(), CoreError> {
    let file = match &args.config {
        Some(path) => Some(PartialRunConfig::from_file(path)?),
        None => None,
    };
    let mut cfg = RunConfig::resolve(
        args.env.as_deref(),
        args.algo.as_deref(),
        args.seed,
        file,
        &args.overrides,
    )?;
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.to_string_lossy().into_owned());
    }
    let dir = cfg.resolved_out_dir();
    println!(
        "training {} / {} / seed {} for {} env steps -> {}",
        cfg.env,
        cfg.algo,
        cfg.seed,
        cfg.total_env_steps,
        dir.display()
    );
    let outcome = run_training(&cfg)?;
    println!(
        "done: {} env steps, {} train steps, {} eval rows, {:.1}s",
        outcome.env_steps, outcome.train_steps, outcome.eval_rows, outcome.wall_seconds
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CoreError> {
    let (mut cfg, trainer) = load_trained(&args.checkpoint, args.name.as_deref())?;
    if let Some(n) = args.episodes {
        if n == 0 {
            return Err(CoreError::Config("--episodes must be positive".into()));
        }
        cfg.eval_episodes = n;
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    // A fixed post-training stream point, distinct from every in-training
    // evaluation (those use the env-step grid).
    let summary = evaluate(&trainer, &cfg, substream(seed, tags::EVAL), u64::MAX)?;
    println!(
        "{} / {} / seed {}: {} episodes",
        cfg.env, cfg.algo, cfg.seed, cfg.eval_episodes
    );
    println!(
        "team return {:.3} +/- {:.3}, episode length {:.1} +/- {:.1}",
        summary.return_mean, summary.return_std, summary.len_mean, summary.len_std
    );
    for (i, r) in summary.agent_returns.iter().enumerate() {
        println!("agent {i} return {r:.3}");
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<(), CoreError> {
    let curves = group_and_aggregate(&args.runs)?;
    let title = match args.title {
        Some(t) => t,
        None => RunConfig::from_snapshot(&args.runs[0].join("config.toml"))?.env,
    };
    write_svg(&args.out, &curves, &title)?;
    let data_path = args.out.with_extension("csv");
    write_plot_data(&data_path, &curves)?;
    println!("wrote {} and {}", args.out.display(), data_path.display());
    Ok(())
}

fn list_envs() -> Result<(), CoreError> {
    for name in ENV_NAMES {
        let env = make_env(name)?;
        let s = env.space();
        println!(
            "{name:<18} {} agents, obs {:?}, act {:?}, max {} steps",
            s.n_agents,
            s.obs_dims,
            s.act_dims,
            env.max_steps()
        );
    }
    Ok(())
}

fn list_algos() -> Result<(), CoreError> {
    for name in VARIANT_NAMES {
        let v = VariantSpec::preset(name)?;
        println!("{name:<24} {}", v.describe());
    }
    Ok(())
}

/// Usage-class errors (bad values, unknown names) exit 2 like flag misuse;
/// everything else is an operational failure (exit 1).
fn exit_code(err: &CoreError) -> u8 {
    match err {
        CoreError::Config(_) | CoreError::UnknownName { .. } | CoreError::Dimension(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Plot(args) => plot(args),
        Command::ListEnvs => list_envs(),
        Command::ListAlgos => list_algos(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
