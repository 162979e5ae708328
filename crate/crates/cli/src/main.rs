use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latent_refine::analysis::render;
use latent_refine::commands::{cmd_compare, cmd_eval, cmd_sweep, cmd_train};
use latent_refine::config::{RunConfig, Seeds};
use latent_refine::error::{CliError, Result};
use latent_refine_core::ii::Objective;

#[derive(Parser)]
#[command(name = "latent-refine", version, about = "Decision-time latent state refinement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seeds: Option<Seeds>,
    #[arg(long)]
    deterministic: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a world model and actor, writing checkpoints and a loss CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a saved trainer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate one arm from a checkpoint over the seed list.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
        #[arg(long)]
        rollout_len: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Compare a baseline results CSV against a refined one.
    Compare {
        baseline: PathBuf,
        ii: PathBuf,
        /// Comma-separated baseline-score thresholds; `inf` for all episodes.
        #[arg(long, default_value = "inf")]
        thresholds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the objective × rollout length × checkpoint grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    Objective::parse(s).ok_or_else(|| format!("unknown objective {s:?}"))
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = &common.seeds {
        cfg.eval.seeds = s.clone();
    }
    if let Some(d) = common.deterministic {
        cfg.eval.deterministic = d;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad threshold {t:?}"))))
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, steps, resume } => {
            let mut cfg = load(&common)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let out = cmd_train(&cfg, resume.as_deref())?;
            println!("trained to step {}; {} checkpoints in {}", out.env_steps, out.checkpoints.len(), cfg.out.display());
        }
        Command::Eval { common, checkpoint, objective, rollout_len, alpha } => {
            let cfg = load(&common)?;
            let mut arm = cfg.ii;
            if let Some(o) = objective {
                arm.objective = o;
            }
            if let Some(l) = rollout_len {
                arm.rollout_len = l;
            }
            if let Some(a) = alpha {
                arm.alpha = a;
            }
            let (path, records) = cmd_eval(&cfg, &checkpoint, &arm, &cfg.out)?;
            let mean = records.iter().map(|r| r.score).sum::<f64>() / records.len() as f64;
            println!("{} episodes, mean score {mean:.4} -> {}", records.len(), path.display());
        }
        Command::Compare { baseline, ii, thresholds, out } => {
            let summary = cmd_compare(&baseline, &ii, &parse_thresholds(&thresholds)?, out.as_deref())?;
            print!("{}", render(&summary));
        }
        Command::Sweep { common } => {
            let cfg = load(&common)?;
            let report = cmd_sweep(&cfg)?;
            println!(
                "{} cells, {} calibration passes, {} failures",
                report.cells.len(),
                report.calibrations.len(),
                report.failures.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
