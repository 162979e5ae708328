//! Per-checkpoint objective scale and step-size selection.

use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::env::Task;
use crate::episode::run_episode;
use crate::ii::IIConfig;
use crate::policy::Actor;
use crate::world_model::WorldModel;

pub const ALPHA_GRID: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
pub const CALIBRATION_EPISODES: usize = 5;

/// Seeds used for calibration episodes, disjoint from evaluation seeds by
/// construction (high bit set).
pub fn calibration_seed(i: usize) -> u64 {
    (1u64 << 63) | i as u64
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AlphaCandidate {
    pub alpha: f64,
    pub obj_iter0: f64,
    pub obj_itern: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Calibration {
    pub objective_scale: f64,
    pub alpha: f64,
    pub candidates: Vec<AlphaCandidate>,
    /// No candidate passed; `alpha` is the smallest grid value.
    pub fallback: bool,
}

impl Calibration {
    pub fn apply(&self, cfg: &IIConfig) -> IIConfig {
        IIConfig { alpha: self.alpha, objective_scale: self.objective_scale, ..*cfg }
    }
}

/// Inverse of the mean raw objective at the unrefined state over one
/// episode, so the scaled objective sits near one nat like the regulariser.
pub fn objective_scale(wm: &WorldModel, actor: &Actor, task: Task, cfg: &IIConfig, max_steps: Option<usize>) -> f64 {
    let probe = IIConfig { iterations: 0, alpha: 0.0, objective_scale: 1.0, ..*cfg };
    let seed = calibration_seed(0);
    let mut env = task.make(seed, true);
    let rec = run_episode(wm, actor, env.as_mut(), &probe, seed, max_steps);
    match rec.mean_objective() {
        Some((m, _)) if m.is_finite() && m > 1e-8 => 1.0 / m,
        _ => 1.0,
    }
}

/// Mean objective at iteration 0 and iteration n over `episodes` calibration
/// episodes.
pub fn mean_descent(
    wm: &WorldModel,
    actor: &Actor,
    task: Task,
    cfg: &IIConfig,
    episodes: usize,
    max_steps: Option<usize>,
) -> (f64, f64) {
    let (mut first, mut last, mut count) = (0.0, 0.0, 0usize);
    for i in 0..episodes {
        let seed = calibration_seed(i);
        let mut env = task.make(seed, true);
        let rec = run_episode(wm, actor, env.as_mut(), cfg, seed, max_steps);
        for s in &rec.steps {
            if let (Some(a), Some(b)) = (s.obj_iter0, s.obj_itern) {
                first += a;
                last += b;
                count += 1;
            }
        }
    }
    if count == 0 {
        return (f64::NAN, f64::NAN);
    }
    (first / count as f64, last / count as f64)
}

/// Measures the objective scale, then picks the largest α in `grid` whose
/// mean objective does not increase across refinement.
pub fn calibrate(
    wm: &WorldModel,
    actor: &Actor,
    task: Task,
    cfg: &IIConfig,
    grid: &[f64],
    episodes: usize,
    max_steps: Option<usize>,
) -> Calibration {
    let objective_scale = objective_scale(wm, actor, task, cfg, max_steps);
    let mut candidates = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let arm = IIConfig { alpha, objective_scale, ..*cfg };
        let (obj_iter0, obj_itern) = mean_descent(wm, actor, task, &arm, episodes, max_steps);
        let accepted = obj_itern <= obj_iter0;
        log::info!("calibration alpha={alpha:e}: {obj_iter0:.5} -> {obj_itern:.5} accepted={accepted}");
        candidates.push(AlphaCandidate { alpha, obj_iter0, obj_itern, accepted });
    }
    let best = candidates.iter().filter(|c| c.accepted).map(|c| c.alpha).fold(None, |m: Option<f64>, a| {
        Some(m.map_or(a, |m| m.max(a)))
    });
    let smallest = grid.iter().copied().fold(f64::INFINITY, f64::min);
    Calibration {
        objective_scale,
        alpha: best.unwrap_or(smallest),
        candidates,
        fallback: best.is_none(),
    }
}
