//! Baseline and refined episode execution with per-step reconstruction
//! metrics.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::env::Environment;
use crate::error::ModelError;
use crate::ii::{refine, IIConfig, Objective};
use crate::metrics::{quality, Quality};
use crate::policy::Actor;
use crate::world_model::{ModelState, WorldModel};

/// Observations are binary, so the dynamic range is 1.
pub const RANGE: f64 = 1.0;

pub const FLAG_NON_FINITE: u32 = 1;
pub const FLAG_TRUNCATED: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Mode {
    Baseline,
    Refined,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StepRecord {
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub pre: Quality,
    /// Present only for refined episodes.
    pub post: Option<Quality>,
    pub obj_iter0: Option<f64>,
    pub obj_itern: Option<f64>,
    pub grad_norm_mean: Option<f64>,
    pub flags: u32,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpisodeRecord {
    pub seed: u64,
    pub mode: Mode,
    pub steps: Vec<StepRecord>,
    pub score: f64,
    pub length: usize,
    pub flags: u32,
    pub error: Option<String>,
}

impl EpisodeRecord {
    /// Equality of everything the agent did and saw: actions, rewards,
    /// pre-refinement metrics, score and length.
    pub fn outcome_eq(&self, other: &EpisodeRecord) -> bool {
        self.seed == other.seed
            && self.score == other.score
            && self.length == other.length
            && self.steps.len() == other.steps.len()
            && self
                .steps
                .iter()
                .zip(&other.steps)
                .all(|(a, b)| a.action == b.action && a.reward == b.reward && a.pre == b.pre)
    }

    fn mean(&self, f: impl Fn(&StepRecord) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.steps.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_mse_pre(&self) -> Option<f64> {
        self.mean(|s| Some(s.pre.mse))
    }

    /// Mean reconstruction error of the state the agent acted from.
    pub fn mean_mse_acted(&self) -> Option<f64> {
        self.mean(|s| Some(s.post.unwrap_or(s.pre).mse))
    }

    pub fn mean_psnr_acted(&self) -> Option<f64> {
        self.mean(|s| Some(s.post.unwrap_or(s.pre).psnr))
    }

    pub fn mean_ssim_acted(&self) -> Option<f64> {
        self.mean(|s| Some(s.post.unwrap_or(s.pre).ssim))
    }

    /// Mean of `post.mse − pre.mse` over refined steps.
    pub fn immediate_mse(&self) -> Option<f64> {
        self.mean(|s| s.post.map(|p| p.mse - s.pre.mse))
    }

    pub fn mean_objective(&self) -> Option<(f64, f64)> {
        Some((self.mean(|s| s.obj_iter0)?, self.mean(|s| s.obj_itern)?))
    }
}

fn action_input(action: Option<usize>, count: usize) -> DenseArray {
    let mut v = alloc::vec![0.0; count];
    if let Some(a) = action {
        v[a] = 1.0;
    }
    DenseArray::new(1, count, v)
}

/// Seed of the refinement rollout stream for an episode.
pub fn rollout_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Plays one episode with greedy action selection, refining the state at
/// every step unless the objective is `None`. `max_steps` cuts the episode
/// short (flagged as truncated).
pub fn run_episode(
    wm: &WorldModel,
    actor: &Actor,
    env: &mut dyn Environment,
    ii: &IIConfig,
    seed: u64,
    max_steps: Option<usize>,
) -> EpisodeRecord {
    run_episode_salted(wm, actor, env, ii, seed, 0, max_steps)
}

/// As [`run_episode`], with `salt` mixed into the rollout stream seed.
pub fn run_episode_salted(
    wm: &WorldModel,
    actor: &Actor,
    env: &mut dyn Environment,
    ii: &IIConfig,
    seed: u64,
    salt: u64,
    max_steps: Option<usize>,
) -> EpisodeRecord {
    let mode = if ii.objective == Objective::None { Mode::Baseline } else { Mode::Refined };
    let mut rec = EpisodeRecord { seed, mode, steps: Vec::new(), score: 0.0, length: 0, flags: 0, error: None };
    if let Err(e) = play(wm, actor, env, ii, rollout_seed(seed) ^ salt, max_steps, &mut rec) {
        log::warn!("episode {seed} truncated: {e}");
        rec.flags |= FLAG_TRUNCATED;
        rec.error = Some(e.to_string());
    }
    rec.length = rec.steps.len();
    rec.score = rec.steps.iter().map(|s| s.reward).sum();
    rec
}

fn play(
    wm: &WorldModel,
    actor: &Actor,
    env: &mut dyn Environment,
    ii: &IIConfig,
    stream: u64,
    max_steps: Option<usize>,
    rec: &mut EpisodeRecord,
) -> Result<(), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let shape = env.image_shape();
    let actions = env.actions();
    let mut state = ModelState::initial(&wm.config, 1);
    let mut prev = None;
    let mut obs = env.observe();
    while !env.done() {
        if max_steps.is_some_and(|m| rec.steps.len() >= m) {
            rec.flags |= FLAG_TRUNCATED;
            break;
        }
        let x = DenseArray::row_vector(&obs);
        let h = wm.advance(&state, &action_input(prev, actions))?;
        let refined = refine(wm, actor, &h, &x, ii, &mut rng)?;
        let pre = quality(&obs, wm.decode(&refined.initial)?.data(), shape, RANGE)?;
        let post = match rec.mode {
            Mode::Refined => Some(quality(&obs, wm.decode(&refined.state)?.data(), shape, RANGE)?),
            Mode::Baseline => None,
        };
        let step = env.step(refined.action).map_err(|e| ModelError::Layout(e.to_string()))?;
        let flags = if refined.trace.non_finite { FLAG_NON_FINITE } else { 0 };
        rec.flags |= flags;
        rec.steps.push(StepRecord {
            step: rec.steps.len(),
            action: refined.action,
            reward: step.reward,
            pre,
            post,
            obj_iter0: refined.trace.first_objective(),
            obj_itern: refined.trace.last_objective(),
            grad_norm_mean: refined.trace.mean_grad_norm(),
            flags,
        });
        state = refined.state;
        prev = Some(refined.action);
        obs = step.obs;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Task, NUM_ACTIONS};
    use crate::world_model::WorldModelConfig;

    fn agent(task: Task) -> (WorldModel, Actor) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = WorldModelConfig::new(task.obs_dim(), NUM_ACTIONS);
        cfg.hidden = 8;
        cfg.groups = 2;
        cfg.classes = 3;
        cfg.width = 12;
        cfg.ensemble = 2;
        let wm = WorldModel::new(cfg, &mut rng).unwrap();
        let mut actor = Actor::new(cfg.state_dim(), 12, NUM_ACTIONS, &mut rng);
        // non-zero output layer so the greedy action depends on the state
        for b in actor.params.blocks_mut() {
            for (i, v) in b.data.iter_mut().enumerate() {
                *v = ((i * 37 % 11) as f32 - 5.0) * 0.1;
            }
        }
        (wm, actor)
    }

    fn play_seed(task: Task, ii: &IIConfig, seed: u64, cap: usize) -> EpisodeRecord {
        let (wm, actor) = agent(task);
        let mut env = task.make(seed, true);
        run_episode(&wm, &actor, env.as_mut(), ii, seed, Some(cap))
    }

    #[test]
    fn no_op_arms_match_baseline() {
        let base = play_seed(Task::YMazePo, &IIConfig::baseline(), 3, 40);
        assert_eq!(base.mode, Mode::Baseline);
        assert!(base.steps.iter().all(|s| s.post.is_none()));
        let arms = [
            IIConfig { alpha: 0.0, ..IIConfig::default() },
            IIConfig { iterations: 0, ..IIConfig::default() },
        ];
        for arm in arms {
            let r = play_seed(Task::YMazePo, &arm, 3, 40);
            assert!(r.outcome_eq(&base));
            assert!(r.steps.iter().all(|s| s.post == Some(s.pre)));
        }
    }

    #[test]
    fn record_length_matches_environment() {
        let (wm, actor) = agent(Task::Collect);
        let mut env = Task::Collect.make(5, true);
        let rec = run_episode(&wm, &actor, env.as_mut(), &IIConfig::baseline(), 5, None);
        assert_eq!(rec.length, env.t());
        assert!(env.done());
        assert_eq!(rec.flags, 0);
    }

    #[test]
    fn first_step_pre_metrics_coincide_across_arms() {
        let base = play_seed(Task::YMazePo, &IIConfig::baseline(), 8, 5);
        let ii = play_seed(Task::YMazePo, &IIConfig { alpha: 0.5, rollout_len: 2, ..IIConfig::default() }, 8, 5);
        assert_eq!(base.steps[0].pre, ii.steps[0].pre);
        assert!(ii.steps.iter().all(|s| s.post.is_some() && s.obj_iter0.is_some()));
    }

    #[test]
    fn cap_truncates_and_flags() {
        let rec = play_seed(Task::YMazePo, &IIConfig::baseline(), 1, 3);
        assert_eq!(rec.length, 3);
        assert_ne!(rec.flags & FLAG_TRUNCATED, 0);
    }
}
