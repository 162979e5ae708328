mod compare;
mod eval;
mod sweep;
mod train;

pub use compare::{cmd_compare, save_summary};
pub use eval::{cmd_eval, eval_file_name, evaluate, EvalOptions};
pub use sweep::{cmd_sweep, CellResult, SweepReport};
pub use train::{checkpoint_name, cmd_train, TrainOutcome, LOSS_FILE, STATE_FILE};

use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}
