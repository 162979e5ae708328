use std::io::Write;
use std::path::{Path, PathBuf};

use latent_refine_core::trainer::{LossRecord, Trainer, TrainerState};

use super::ensure_dir;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::csv_io::Meta;
use crate::error::{CliError, Result};

pub const LOSS_FILE: &str = "train_loss.csv";
pub const STATE_FILE: &str = "trainer_state.bin";

const LOSS_COLUMNS: &str =
    "update,env_step,loss,recon,reward,cont,kl,ensemble,actor,critic,policy_entropy,imagined_return";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoints: Vec<PathBuf>,
    pub loss_csv: PathBuf,
    pub state: PathBuf,
    pub env_steps: u64,
    pub trace: Vec<LossRecord>,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:08}.wmck")
}

fn loss_row(r: &LossRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.update,
        r.env_step,
        r.loss,
        r.recon,
        r.reward,
        r.cont,
        r.kl,
        r.ensemble,
        r.actor,
        r.critic,
        r.policy_entropy,
        r.imagined_return
    )
}

fn load_state(path: &Path) -> Result<TrainerState> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    bincode::deserialize(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Trains up to `cfg.train.steps` environment steps, writing a checkpoint at
/// step 0 (fresh runs), at every multiple of the cadence and at the end.
/// With `resume`, training continues from a saved trainer state.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let out = &cfg.out;
    ensure_dir(out)?;
    let mut trainer = match resume {
        Some(path) => {
            let state = load_state(path)?;
            if state.task != cfg.task || state.wm_config != cfg.world_model() {
                return Err(CliError::Data(format!(
                    "resume state dims {:?} do not match config {:?}",
                    state.wm_config,
                    cfg.world_model()
                )));
            }
            Trainer::restore(state)?
        }
        None => Trainer::new(cfg.task, cfg.world_model(), cfg.train.hyper, cfg.seed)?,
    };

    let loss_csv = out.join(LOSS_FILE);
    let mut loss = if resume.is_some() && loss_csv.exists() {
        std::fs::OpenOptions::new().append(true).open(&loss_csv).map_err(CliError::io(&loss_csv))?
    } else {
        let mut f = std::fs::File::create(&loss_csv).map_err(CliError::io(&loss_csv))?;
        let meta = Meta::new(cfg.hash()).with("kind", "loss");
        writeln!(f, "{}\n{LOSS_COLUMNS}", meta.line()).map_err(CliError::io(&loss_csv))?;
        f
    };

    let mut checkpoints = Vec::new();
    let mut save = |t: &Trainer| -> Result<()> {
        let path = out.join(checkpoint_name(t.env_steps()));
        Checkpoint::from_trainer(t).save(&path)?;
        log::info!("wrote {}", path.display());
        checkpoints.push(path);
        Ok(())
    };
    if resume.is_none() {
        save(&trainer)?;
    }
    let every = cfg.train.checkpoint_every;
    let mut written = trainer.trace.len();
    while trainer.env_steps() < cfg.train.steps {
        let now = trainer.env_steps();
        let next = if every == 0 { cfg.train.steps } else { ((now / every) + 1) * every };
        trainer.train(next.min(cfg.train.steps) - now)?;
        for r in &trainer.trace[written..] {
            writeln!(loss, "{}", loss_row(r)).map_err(CliError::io(&loss_csv))?;
        }
        written = trainer.trace.len();
        let last = trainer.trace.last();
        log::info!(
            "step {} updates {} recon {:.3} kl {:.3}",
            trainer.env_steps(),
            trainer.updates(),
            last.map_or(f64::NAN, |r| r.recon),
            last.map_or(f64::NAN, |r| r.kl)
        );
        save(&trainer)?;
    }

    let state = out.join(STATE_FILE);
    let bytes = bincode::serialize(&trainer.state()).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&state, bytes).map_err(CliError::io(&state))?;
    Ok(TrainOutcome { checkpoints, loss_csv, state, env_steps: trainer.env_steps(), trace: trainer.trace })
}
