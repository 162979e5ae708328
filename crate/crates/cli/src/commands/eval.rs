use std::path::{Path, PathBuf};

use latent_refine_core::env::Task;
use latent_refine_core::episode::{run_episode_salted, EpisodeRecord};
use latent_refine_core::ii::{IIConfig, Objective};
use rayon::prelude::*;

use super::ensure_dir;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::csv_io::{save_results, Meta};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub seeds: Vec<u64>,
    pub max_steps: Option<usize>,
    /// Mixed into every rollout seed; zero in deterministic mode.
    pub salt: u64,
    pub threads: Option<usize>,
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        let salt = if cfg.eval.deterministic {
            0
        } else {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(1, |d| d.as_nanos() as u64)
        };
        EvalOptions { seeds: cfg.eval.seeds.0.clone(), max_steps: cfg.eval.max_steps, salt, threads: cfg.eval.threads }
    }
}

/// Runs one episode per seed on a worker pool; results come back in seed
/// list order regardless of the worker count.
pub fn evaluate(ckpt: &Checkpoint, task: Task, arm: &IIConfig, opts: &EvalOptions) -> Result<Vec<EpisodeRecord>> {
    let run = || {
        opts.seeds
            .par_iter()
            .map(|&seed| {
                let mut env = task.make(seed, true);
                run_episode_salted(&ckpt.wm, &ckpt.actor, env.as_mut(), arm, seed, opts.salt, opts.max_steps)
            })
            .collect()
    };
    match opts.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

pub fn eval_file_name(arm: &IIConfig) -> String {
    match arm.objective {
        Objective::None => "eval_none.csv".into(),
        o => format!("eval_{}_lam{}_a{}.csv", o.name(), arm.rollout_len, arm.alpha),
    }
}

pub(crate) fn arm_meta(cfg: &RunConfig, ckpt: &Checkpoint, arm: &IIConfig, opts: &EvalOptions) -> Meta {
    Meta::new(cfg.hash())
        .with("task", cfg.task.name())
        .with("checkpoint_step", ckpt.header.step)
        .with("objective", arm.objective.name())
        .with("n", arm.iterations)
        .with("s", arm.samples)
        .with("lambda", arm.rollout_len)
        .with("alpha", arm.alpha)
        .with("objective_scale", arm.objective_scale)
        .with("deterministic", opts.salt == 0)
}

/// Evaluates `arm` from `checkpoint` over the configured seeds and writes a
/// results file into `out`, returning its path and the records.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, arm: &IIConfig, out: &Path) -> Result<(PathBuf, Vec<EpisodeRecord>)> {
    arm.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let ckpt = Checkpoint::load(checkpoint)?;
    ckpt.check(cfg.task, &cfg.world_model())?;
    ensure_dir(out)?;
    let opts = EvalOptions::from_config(cfg);
    let records = evaluate(&ckpt, cfg.task, arm, &opts)?;
    let path = out.join(eval_file_name(arm));
    save_results(&path, &arm_meta(cfg, &ckpt, arm, &opts), &records)?;
    Ok((path, records))
}
