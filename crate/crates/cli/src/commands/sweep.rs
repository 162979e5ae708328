use std::io::Write;
use std::path::{Path, PathBuf};

use latent_refine_core::calibrate::{calibrate, Calibration, ALPHA_GRID};
use latent_refine_core::ii::{IIConfig, Objective};

use super::compare::save_summary;
use super::ensure_dir;
use super::eval::{arm_meta, eval_file_name, evaluate, EvalOptions};
use crate::analysis::{best_lambda, compare, ComparisonSummary, Metric};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::csv_io::{save_results, EpisodeSummary, Meta};
use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub struct CellResult {
    pub checkpoint: PathBuf,
    pub arm: IIConfig,
    pub results: PathBuf,
    pub summary: ComparisonSummary,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    /// One per (checkpoint, objective) when calibration is on.
    pub calibrations: Vec<(PathBuf, Objective, Calibration)>,
    pub failures: Vec<String>,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned())
}

fn save_calibration(path: &Path, meta: &Meta, cal: &Calibration) -> Result<()> {
    let mut text = format!("{}\nalpha,obj_iter0,obj_itern,accepted,chosen\n", meta.line());
    for c in &cal.candidates {
        text.push_str(&format!("{},{},{},{},{}\n", c.alpha, c.obj_iter0, c.obj_itern, c.accepted, c.alpha == cal.alpha));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(CliError::io(path))
}

/// Runs the grid objectives × rollout lengths × checkpoints. Each
/// checkpoint gets one baseline run and, per objective, a calibration pass
/// at the first rollout length. A failing cell is logged and skipped.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    let sw = &cfg.sweep;
    let objectives: Vec<Objective> = sw.objectives.iter().copied().filter(|o| *o != Objective::None).collect();
    let mut report = SweepReport::default();
    if objectives.is_empty() || sw.rollout_lens.is_empty() || sw.checkpoints.is_empty() {
        log::warn!("empty sweep grid; nothing to do");
        return Ok(report);
    }
    let root = cfg.out.join("sweep");
    ensure_dir(&root)?;
    let opts = EvalOptions::from_config(cfg);

    for path in &sw.checkpoints {
        let dir = root.join(stem(path));
        let loaded = Checkpoint::load(path).and_then(|c| c.check(cfg.task, &cfg.world_model()).map(|_| c));
        let ckpt = match loaded.and_then(|c| ensure_dir(&dir).map(|_| c)) {
            Ok(c) => c,
            Err(e) => {
                log::error!("{}: {e}", path.display());
                report.failures.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        let base_arm = IIConfig::baseline();
        let baseline = evaluate(&ckpt, cfg.task, &base_arm, &opts)?;
        save_results(&dir.join(eval_file_name(&base_arm)), &arm_meta(cfg, &ckpt, &base_arm, &opts), &baseline)?;
        let base: Vec<EpisodeSummary> = baseline.iter().map(EpisodeSummary::from_record).collect();

        for &objective in &objectives {
            let mut template = IIConfig { objective, rollout_len: sw.rollout_lens[0], ..cfg.ii };
            if sw.calibrate {
                let cal = calibrate(
                    &ckpt.wm,
                    &ckpt.actor,
                    cfg.task,
                    &template,
                    &ALPHA_GRID,
                    sw.calibration_episodes,
                    sw.calibration_max_steps,
                );
                if cal.fallback {
                    log::warn!("{}: no step size kept the {} objective from rising", path.display(), objective.name());
                }
                let meta = Meta::new(cfg.hash()).with("kind", "calibration").with("objective", objective.name());
                save_calibration(&dir.join(format!("calibration_{}.csv", objective.name())), &meta, &cal)?;
                template = cal.apply(&template);
                report.calibrations.push((path.clone(), objective, cal));
            }
            let mut cells = Vec::new();
            for &lambda in &sw.rollout_lens {
                let arm = IIConfig { rollout_len: lambda, ..template };
                let cell = || -> Result<CellResult> {
                    arm.validate().map_err(|e| CliError::Config(e.to_string()))?;
                    let records = evaluate(&ckpt, cfg.task, &arm, &opts)?;
                    let results = dir.join(eval_file_name(&arm));
                    save_results(&results, &arm_meta(cfg, &ckpt, &arm, &opts), &records)?;
                    let ii: Vec<EpisodeSummary> = records.iter().map(EpisodeSummary::from_record).collect();
                    let summary = compare(&base, &ii, &cfg.eval.thresholds);
                    let meta = Meta::new(cfg.hash()).with("kind", "summary").with("objective", objective.name()).with("lambda", lambda);
                    save_summary(&dir.join(format!("summary_{}_lam{lambda}.csv", objective.name())), &meta, &summary)?;
                    Ok(CellResult { checkpoint: path.clone(), arm, results, summary })
                };
                match cell() {
                    Ok(c) => cells.push(c),
                    Err(e) => {
                        log::error!("cell {} λ={lambda} on {}: {e}", objective.name(), path.display());
                        report.failures.push(format!("{} {} {lambda}: {e}", path.display(), objective.name()));
                    }
                }
            }
            let pairs: Vec<(usize, &ComparisonSummary)> = cells.iter().map(|c| (c.arm.rollout_len, &c.summary)).collect();
            for m in [Metric::Score, Metric::Mse] {
                if let Some(best) = best_lambda(&pairs, m) {
                    log::info!(
                        "{} {} best λ for {}: {} ({})",
                        stem(path),
                        objective.name(),
                        m.name(),
                        best.lambda.map_or("baseline".into(), |l| l.to_string()),
                        best.value
                    );
                }
            }
            report.cells.extend(cells);
        }
    }
    Ok(report)
}
