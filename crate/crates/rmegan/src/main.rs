use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rmegan::commands::{cmd_estimate, cmd_eval, cmd_gen, cmd_pipeline, cmd_sample, cmd_train, RunDirs};
use rmegan::{ExperimentConfig, Result};

/// Radio-map estimation workbench.
#[derive(Parser, Debug)]
#[command(name = "rmegan", version)]
struct Cli {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run directory; overrides `run.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic regions into <out>/dataset.
    Gen,
    /// Draw observations for every region into <out>/samples.
    Sample {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the generative estimator into <out>/train.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Run the configured estimators on the test split into <out>/estimates.
    Estimate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score stored estimates into <out>/eval.
    Eval {
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// gen, sample, train (if needed), estimate and eval in one go.
    Pipeline,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    cfg.validate()?;
    let d = RunDirs::new(&cfg.out);
    let or = |p: Option<PathBuf>, default: PathBuf| p.unwrap_or(default);
    match cli.command {
        Command::Gen => {
            cmd_gen(&cfg, &d.dataset())?;
        }
        Command::Sample { dataset } => cmd_sample(&cfg, &or(dataset, d.dataset()), &d.samples())?,
        Command::Train { dataset, samples } => {
            cmd_train(&cfg, &or(dataset, d.dataset()), &or(samples, d.samples()), &d.train())?;
        }
        Command::Estimate { dataset, samples, checkpoint } => cmd_estimate(
            &cfg,
            &or(dataset, d.dataset()),
            &or(samples, d.samples()),
            &or(checkpoint, d.checkpoint()),
            &d.estimates(),
        )?,
        Command::Eval { estimates, dataset, samples, checkpoint } => {
            let reports = cmd_eval(
                &cfg,
                &or(estimates, d.estimates()),
                &or(dataset, d.dataset()),
                &or(samples, d.samples()),
                &or(checkpoint, d.checkpoint()),
                &d.eval(),
            )?;
            for r in reports {
                print!("{}", r.summary());
            }
        }
        Command::Pipeline => {
            for r in cmd_pipeline(&cfg)? {
                print!("{}", r.summary());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}
