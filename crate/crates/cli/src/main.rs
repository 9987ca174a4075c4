use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use dyntomo::approximant::Provenance;
use dyntomo::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(name = "dyntomo", version, about = "Layered phase-object tomography with a recurrent reconstructor")]
struct Cli {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the effective configuration here before running.
    #[arg(long, global = true)]
    save_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate objects and intensity patterns.
    GenData {
        #[arg(long)]
        train_count: Option<usize>,
        #[arg(long)]
        val_count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Compute windowed approximant sequences for every object.
    Approximants {
        #[arg(long, value_enum, default_value_t = Mode::Train)]
        mode: Mode,
    },
    /// Train the reconstructor on training approximants.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        approximants: Option<Mode>,
    },
    /// Train and compare the base network against its ablations.
    Ablate {
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Test,
}

impl From<Mode> for Provenance {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Train => Provenance::Train,
            Mode::Test => Provenance::Test,
        }
    }
}

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NAN: u8 = 3;

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.data_dir {
        cfg.paths.data_dir = d.clone();
    }
    if let Some(d) = &cli.out_dir {
        cfg.paths.out_dir = d.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    match &cli.command {
        Command::GenData {
            train_count,
            val_count,
            seed,
            noise_sigma,
        } => {
            cfg.data.train_count = train_count.unwrap_or(cfg.data.train_count);
            cfg.data.val_count = val_count.unwrap_or(cfg.data.val_count);
            cfg.data.seed = seed.unwrap_or(cfg.data.seed);
            cfg.data.noise_sigma = noise_sigma.unwrap_or(cfg.data.noise_sigma);
        }
        Command::Train {
            epochs,
            batch_size,
            learning_rate,
            seed,
            max_steps,
        } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cfg.train.learning_rate = learning_rate.unwrap_or(cfg.train.learning_rate);
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            if max_steps.is_some() {
                cfg.train.max_steps = *max_steps;
            }
        }
        Command::Eval { approximants, .. } => {
            if let Some(m) = approximants {
                cfg.eval.approximants = (*m).into();
            }
        }
        Command::Ablate { epochs } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
        }
        Command::Approximants { .. } => {}
    }
    cfg.validate()?;
    if let Some(p) = &cli.save_config {
        std::fs::write(p, cfg.to_toml()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = build_config(cli)?;
    pipeline::configure_threads(&cfg);
    match &cli.command {
        Command::GenData { .. } => {
            let s = pipeline::gen_data(&cfg)?;
            println!("{} objects generated, {} reused in {}", s.generated, s.reused, cfg.paths.data_dir.display());
        }
        Command::Approximants { mode } => {
            let s = pipeline::approximants(&cfg, (*mode).into())?;
            println!("{} sequences computed, {} reused", s.generated, s.reused);
        }
        Command::Train { .. } => {
            let s = pipeline::cmd_train(&cfg)?;
            println!(
                "{} epochs, {} steps ({:?}); best validation NPCC {:.4}; {} parameters",
                s.epochs, s.steps, s.stop, s.best_val, s.param_count
            );
            println!("best checkpoint: {}", s.best_checkpoint.display());
            if let Some(r) = s.validation {
                print!("{}", r.to_csv());
            }
        }
        Command::Eval { checkpoint, .. } => {
            let s = pipeline::cmd_eval(&cfg, checkpoint)?;
            print!("{}", s.report.to_csv());
            println!("outputs in {}", s.out.display());
        }
        Command::Ablate { .. } => {
            let rows = pipeline::cmd_ablate(&cfg)?;
            print!("{}", pipeline::ablation_csv(&rows));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<dyntomo::Error>() {
        Some(dyntomo::Error::NonFiniteLoss { .. }) => EXIT_NAN,
        Some(e) if e.is_validation() => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
