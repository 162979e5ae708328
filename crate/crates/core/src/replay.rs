//! Episode ring buffer with fixed-length subsequence sampling.
//!
//! Step `t` of an episode stores the action that led to observation `t`
//! (none for the first step), the observation, and the reward and continue
//! flag received on arrival.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::TrainError;

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpisodeData {
    pub obs: Vec<Vec<f32>>,
    pub actions: Vec<Option<usize>>,
    pub rewards: Vec<f32>,
    pub conts: Vec<bool>,
    pub finished: bool,
}

impl EpisodeData {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Time-major batch: entry `t` of each vector holds all rows at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Vec<DenseArray>,
    pub actions: Vec<DenseArray>,
    pub rewards: Vec<DenseArray>,
    pub conts: Vec<DenseArray>,
    /// 1 for real steps, 0 for padding past an episode's end.
    pub mask: Vec<DenseArray>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.obs[0].rows()
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ReplayBuffer {
    episodes: VecDeque<EpisodeData>,
    capacity: usize,
    steps: usize,
    /// Steps ever added, including evicted ones.
    total: u64,
}

impl ReplayBuffer {
    /// `capacity` is in steps; whole episodes are evicted oldest first.
    pub fn new(capacity: usize) -> Self {
        Self { episodes: VecDeque::new(), capacity: capacity.max(1), steps: 0, total: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn total_steps(&self) -> u64 {
        self.total
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeData> {
        self.episodes.iter()
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn finished_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| e.finished).count()
    }

    /// Opens a new episode with its first observation.
    pub fn begin(&mut self, obs: &[f64]) {
        self.episodes.push_back(EpisodeData::default());
        self.push_raw(None, obs, 0.0, true);
    }

    /// Appends a step to the open episode; `cont = false` closes it.
    pub fn push(&mut self, action: usize, obs: &[f64], reward: f64, cont: bool) {
        assert!(self.episodes.back().is_some_and(|e| !e.finished), "no open episode");
        self.push_raw(Some(action), obs, reward, cont);
        if !cont {
            self.episodes.back_mut().expect("open").finished = true;
        }
    }

    /// Marks the open episode finished without a terminal flag (time limit).
    pub fn close(&mut self) {
        if let Some(e) = self.episodes.back_mut() {
            e.finished = true;
        }
    }

    fn push_raw(&mut self, action: Option<usize>, obs: &[f64], reward: f64, cont: bool) {
        let ep = self.episodes.back_mut().expect("open episode");
        ep.obs.push(obs.iter().map(|&v| v as f32).collect());
        ep.actions.push(action);
        ep.rewards.push(reward as f32);
        ep.conts.push(cont);
        self.steps += 1;
        self.total += 1;
        while self.steps > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.steps -= old.len();
        }
    }

    /// Samples `rows` subsequences of `len` steps. Each lies inside one
    /// episode; episodes shorter than `len` are padded and masked.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rows: usize,
        len: usize,
        actions: usize,
        rng: &mut R,
    ) -> Result<Batch, TrainError> {
        if self.steps == 0 || len == 0 || rows == 0 {
            return Err(TrainError::EmptyBuffer);
        }
        let obs_dim = self.episodes.iter().find(|e| !e.is_empty()).map(|e| e.obs[0].len()).unwrap_or(0);
        let mut obs = vec![vec![0.0; rows * obs_dim]; len];
        let mut act = vec![vec![0.0; rows * actions]; len];
        let mut rew = vec![vec![0.0; rows]; len];
        let mut con = vec![vec![0.0; rows]; len];
        let mut mask = vec![vec![0.0; rows]; len];
        for r in 0..rows {
            // episode chosen in proportion to its length
            let mut pick = rng.gen_range(0..self.steps);
            let ep = self
                .episodes
                .iter()
                .find(|e| {
                    if pick < e.len() {
                        true
                    } else {
                        pick -= e.len();
                        false
                    }
                })
                .expect("pick below total steps");
            let start = if ep.len() > len { rng.gen_range(0..=ep.len() - len) } else { 0 };
            for t in 0..len.min(ep.len() - start) {
                let s = start + t;
                for (d, &v) in obs[t][r * obs_dim..(r + 1) * obs_dim].iter_mut().zip(&ep.obs[s]) {
                    *d = v as f64;
                }
                if let Some(a) = ep.actions[s] {
                    act[t][r * actions + a] = 1.0;
                }
                rew[t][r] = ep.rewards[s] as f64;
                con[t][r] = ep.conts[s] as u8 as f64;
                mask[t][r] = 1.0;
            }
        }
        let to = |v: Vec<Vec<f64>>, cols: usize| v.into_iter().map(|d| DenseArray::new(rows, cols, d)).collect();
        Ok(Batch {
            obs: to(obs, obs_dim),
            actions: to(act, actions),
            rewards: to(rew, 1),
            conts: to(con, 1),
            mask: to(mask, 1),
        })
    }
}
