// Negated comparisons are how NaN gets rejected in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use terradapt_cli::experiment::{self, ORACLE_GAP_LIMIT, SUMMARY_SCHEMA};
use terradapt_cli::{config::CONFIG_SCHEMA, ExitStatus, ExperimentConfig};
use terradapt_core::io;
use terradapt_core::simulator::ControlMode;
use terradapt_core::solver::WeightInit;

/// Terrain-adaptive behavior learning experiments
#[derive(Parser, Debug)]
#[command(name = "terradapt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate expert demonstrations and write a dataset
    Generate(GenerateArgs),
    /// Fit models on a dataset, one per (lambda1, lambda2) pair
    Train(TrainArgs),
    /// Drive a trained model through the simulator and summarize the runs
    Eval(EvalArgs),
    /// Print a JSON schema
    Schema {
        #[arg(value_enum)]
        which: SchemaKind,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SchemaKind {
    Config,
    Summary,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON); flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct World {
    /// History window c
    #[arg(long)]
    c: Option<usize>,
    /// Terrain preset name
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    world: World,
    /// Seed of the first training episode
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory written by `generate`
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated lambda1 values
    #[arg(long, value_delimiter = ',')]
    lambda1: Option<Vec<f64>>,
    /// Comma-separated lambda2 values
    #[arg(long, value_delimiter = ',')]
    lambda2: Option<Vec<f64>>,
    /// Start from seeded random weights instead of zeros
    #[arg(long)]
    seed: Option<u64>,
    /// Cross-check every fit against the independent solver
    #[arg(long)]
    verify_oracle: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    world: World,
    /// Model file written by `train`
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated control modes
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<ControlMode>>,
    /// Number of runs per mode
    #[arg(long)]
    runs: Option<usize>,
    /// Seed of the first run
    #[arg(long)]
    seed: Option<u64>,
}

fn load_config(common: &Common, world: Option<&World>) -> terradapt_core::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(world) = world {
        if let Some(c) = world.c {
            config.sim.history = c;
        }
        if let Some(p) = &world.preset {
            config.terrain.preset = p.clone();
            config.terrain.profile = None;
        }
    }
    Ok(config)
}

fn out_dir(common: &Common, config: &ExperimentConfig, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| config.out.join(default))
}

fn generate(args: GenerateArgs) -> terradapt_core::Result<ExitStatus> {
    let mut config = load_config(&args.common, Some(&args.world))?;
    if let Some(s) = args.seed {
        config.train.seed = s;
    }
    let dir = out_dir(&args.common, &config, "dataset");
    let manifest = experiment::generate(&config, &dir)?;
    println!(
        "wrote {} instances from {} episodes on {:?} to {}",
        manifest.instances,
        manifest.seeds.len(),
        manifest.preset,
        dir.display()
    );
    Ok(ExitStatus::Success)
}

fn train(args: TrainArgs) -> terradapt_core::Result<ExitStatus> {
    let config = load_config(&args.common, None)?;
    let (_, data) = io::read_dataset(&args.dataset)?;
    let mut base = config.fit_options();
    if let Some(s) = args.seed {
        base.init = WeightInit::Seeded(s);
    }
    let l1 = args.lambda1.unwrap_or_else(|| vec![config.lambda1]);
    let l2 = args.lambda2.unwrap_or_else(|| vec![config.lambda2]);
    let dir = out_dir(&args.common, &config, "model");
    let report = experiment::train(&data, &base, &l1, &l2, args.verify_oracle, &dir)?;
    for m in &report.models {
        let gap = m.oracle_gap.map_or_else(String::new, |g| format!(", oracle gap {g:.3e}"));
        println!(
            "lambda1={} lambda2={}: objective {:.6e} after {} iterations{}{gap} -> {}",
            m.lambda1,
            m.lambda2,
            m.objective,
            m.iterations,
            if m.converged { "" } else { " (not converged)" },
            dir.join(&m.model).display()
        );
    }
    match report.worst_gap() {
        Some(g) if !(g <= ORACLE_GAP_LIMIT) => {
            eprintln!("oracle verification failed: relative gap {g:.3e} exceeds {ORACLE_GAP_LIMIT:e}");
            Ok(ExitStatus::Verification)
        }
        _ => Ok(ExitStatus::Success),
    }
}

fn eval(args: EvalArgs) -> terradapt_core::Result<ExitStatus> {
    let mut config = load_config(&args.common, Some(&args.world))?;
    if let Some(m) = args.modes {
        config.eval.modes = m;
    }
    if let Some(r) = args.runs {
        config.eval.runs = r;
    }
    if let Some(s) = args.seed {
        config.eval.seed = s;
    }
    let dir = out_dir(&args.common, &config, "eval");
    let report = experiment::eval_model(&config, &args.model, &dir)?;
    print!("{}", report.table());
    println!("summary written to {}", dir.join("summary.json").display());
    Ok(ExitStatus::Success)
}

fn run(cli: Cli) -> terradapt_core::Result<ExitStatus> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Schema { which } => {
            print!("{}", match which {
                SchemaKind::Config => CONFIG_SCHEMA,
                SchemaKind::Summary => SUMMARY_SCHEMA,
            });
            Ok(ExitStatus::Success)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() { ExitStatus::Usage } else { ExitStatus::Success };
            let _ = e.print();
            return ExitCode::from(status.code());
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitStatus::for_error(&e).code())
        }
    }
}

