//! World-model and actor-critic training on collected experience.
//!
//! World-model loss per step, summed over the sequence and averaged over
//! real (unmasked) rows:
//!
//! ```text
//! BCE(decoder(h, z), x) + ½ (r̂ − r)² + BCE(ĉ, c)
//!   + β · ( w_dyn · max(fb, KL(sg q ‖ p)) + (1 − w_dyn) · max(fb, KL(q ‖ sg p)) )
//! ```
//!
//! The actor is trained by REINFORCE with the critic as baseline on
//! imagined rollouts started from posterior states of the last batch.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::dist::{sample_index, softmax_groups};
use crate::env::{Environment, Task};
use crate::error::{ModelError, TrainError};
use crate::graph::Graph;
use crate::nn::{Bound, ParamSet};
use crate::optim::{Adam, AdamConfig};
use crate::policy::{Actor, Critic};
use crate::replay::{Batch, ReplayBuffer};
use crate::world_model::{ModelState, Select, WorldModel, WorldModelConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub batch: usize,
    pub seq_len: usize,
    pub wm_lr: f64,
    pub ensemble_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub kl_scale: f64,
    /// Floor on each row's summed KL.
    pub free_bits: f64,
    /// Share of the KL weight on the prior side.
    pub dyn_weight: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub return_lambda: f64,
    pub entropy: f64,
    /// Imagination start states per update.
    pub ac_starts: usize,
    /// Rows drawn with replacement per ensemble member and update.
    pub ensemble_rows: usize,
    pub train_every: usize,
    pub prefill: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_steps: usize,
    pub capacity: usize,
    pub actor_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            seq_len: 24,
            wm_lr: 1e-3,
            ensemble_lr: 1e-3,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            kl_scale: 1.0,
            free_bits: 1.0,
            dyn_weight: 0.8,
            horizon: 12,
            gamma: 0.97,
            return_lambda: 0.95,
            entropy: 3e-3,
            ac_starts: 64,
            ensemble_rows: 64,
            train_every: 4,
            prefill: 1000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_steps: 5000,
            capacity: 200_000,
            actor_width: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [self.batch, self.seq_len, self.horizon, self.ac_starts, self.ensemble_rows, self.train_every, self.capacity, self.actor_width];
        if positive.contains(&0) {
            return Err(ModelError::Dims("batch, lengths, counts and widths must be positive".into()));
        }
        let rates = [self.wm_lr, self.ensemble_lr, self.actor_lr, self.critic_lr, self.kl_scale, self.gamma];
        if rates.iter().any(|r| !(*r > 0.0)) || !(self.free_bits >= 0.0) {
            return Err(ModelError::Dims("rates and scales must be positive, free bits non-negative".into()));
        }
        Ok(())
    }
}

/// Per-update diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LossRecord {
    pub update: u64,
    pub env_step: u64,
    pub loss: f64,
    pub recon: f64,
    pub reward: f64,
    pub cont: f64,
    /// Mean unclamped `KL(q ‖ p)` per step.
    pub kl: f64,
    pub ensemble: f64,
    pub actor: f64,
    pub critic: f64,
    pub policy_entropy: f64,
    pub imagined_return: f64,
}

/// Detached posterior rows collected during a world-model update.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRows {
    pub h: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
struct Collector {
    next_episode: u64,
    seed: u64,
    actions: Vec<usize>,
    state: ModelState,
    prev_action: Option<usize>,
    pending_obs: Vec<f64>,
    episode_return: f64,
    active: bool,
}

/// Everything needed to resume training bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainerState {
    pub task: Task,
    pub wm_config: WorldModelConfig,
    pub config: TrainConfig,
    pub seed: u64,
    pub wm_params: ParamSet,
    pub ensemble_params: ParamSet,
    pub actor_params: ParamSet,
    pub critic_params: ParamSet,
    opts: [Adam; 4],
    buffer: ReplayBuffer,
    rngs: [ChaCha8Rng; 3],
    collector: Collector,
    env_steps: u64,
    updates: u64,
    returns: Vec<f64>,
    trace: Vec<LossRecord>,
}

pub struct Trainer {
    pub task: Task,
    pub config: TrainConfig,
    pub seed: u64,
    pub wm: WorldModel,
    pub actor: Actor,
    pub critic: Critic,
    wm_opt: Adam,
    ens_opt: Adam,
    actor_opt: Adam,
    critic_opt: Adam,
    pub buffer: ReplayBuffer,
    /// Batch sampling, latent sampling and imagination.
    rng: ChaCha8Rng,
    /// Ensemble bootstrap draws only.
    ens_rng: ChaCha8Rng,
    /// Environment interaction.
    act_rng: ChaCha8Rng,
    collector: Collector,
    env: Option<Box<dyn Environment>>,
    env_steps: u64,
    updates: u64,
    /// Undiscounted returns of finished training episodes.
    pub returns: Vec<f64>,
    pub trace: Vec<LossRecord>,
    /// Hashes of the last update's per-member bootstrap draws.
    pub last_member_hashes: Vec<u64>,
}

fn episode_seed(base: u64, episode: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(base);
    h.write_u64(episode);
    h.finish()
}

fn action_input(action: Option<usize>, count: usize) -> DenseArray {
    let mut v = vec![0.0; count];
    if let Some(a) = action {
        v[a] = 1.0;
    }
    DenseArray::new(1, count, v)
}

impl Trainer {
    pub fn new(task: Task, wm_config: WorldModelConfig, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        let wm = WorldModel::new(wm_config, &mut init)?;
        let actor = Actor::new(wm_config.state_dim(), config.actor_width, wm_config.actions, &mut init);
        let critic = Critic::new(wm_config.state_dim(), config.actor_width, &mut init);
        let opt = |p: &ParamSet, lr: f64| Adam::new(p, AdamConfig::with_lr(lr));
        Ok(Self {
            task,
            config,
            seed,
            wm_opt: opt(&wm.params, config.wm_lr),
            ens_opt: opt(&wm.ensemble_params, config.ensemble_lr),
            actor_opt: opt(&actor.params, config.actor_lr),
            critic_opt: opt(&critic.params, config.critic_lr),
            collector: Collector {
                next_episode: 0,
                seed: 0,
                actions: Vec::new(),
                state: ModelState::initial(&wm_config, 1),
                prev_action: None,
                pending_obs: Vec::new(),
                episode_return: 0.0,
                active: false,
            },
            wm,
            actor,
            critic,
            buffer: ReplayBuffer::new(config.capacity),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001),
            ens_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002),
            act_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003),
            env: None,
            env_steps: 0,
            updates: 0,
            returns: Vec::new(),
            trace: Vec::new(),
            last_member_hashes: Vec::new(),
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Reseeds the ensemble's bootstrap stream, leaving every other stream alone.
    pub fn reseed_ensemble(&mut self, seed: u64) {
        self.ens_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        let frac = 1.0 - (self.env_steps as f64 / c.eps_steps.max(1) as f64).min(1.0);
        c.eps_end + (c.eps_start - c.eps_end) * frac
    }

    fn start_episode(&mut self) {
        let c = &mut self.collector;
        c.seed = episode_seed(self.seed, c.next_episode);
        c.next_episode += 1;
        c.actions.clear();
        c.state = ModelState::initial(&self.wm.config, 1);
        c.prev_action = None;
        c.episode_return = 0.0;
        c.active = true;
        let env = self.task.make(c.seed, false);
        c.pending_obs = env.observe();
        self.buffer.begin(&c.pending_obs);
        self.env = Some(env);
    }

    /// One environment step with the exploration policy.
    pub fn env_step(&mut self) -> Result<(), TrainError> {
        if !self.collector.active {
            self.start_episode();
        }
        let actions = self.wm.config.actions;
        let obs = DenseArray::row_vector(&self.collector.pending_obs);
        let a_in = action_input(self.collector.prev_action, actions);
        let (state, _) = self.wm.filter(&self.collector.state, &a_in, &obs, Select::Sample(&mut self.act_rng))?;
        let action = if self.act_rng.gen::<f64>() < self.epsilon() {
            self.act_rng.gen_range(0..actions)
        } else {
            let probs = self.actor.probs(&state).map_err(ModelError::from)?;
            sample_index(&probs, &mut self.act_rng)
        };
        let env = self.env.as_mut().expect("episode started");
        let result = env.step(action)?;
        let done = env.done();
        self.buffer.push(action, &result.obs, result.reward, result.cont);
        let c = &mut self.collector;
        c.actions.push(action);
        c.state = state;
        c.prev_action = Some(action);
        c.pending_obs = result.obs;
        c.episode_return += result.reward;
        self.env_steps += 1;
        if done {
            if result.cont {
                self.buffer.close();
            }
            self.returns.push(c.episode_return);
            c.active = false;
        }
        Ok(())
    }

    /// Collects `steps` environment steps without training.
    pub fn collect_experience(&mut self, steps: u64) -> Result<(), TrainError> {
        for _ in 0..steps {
            self.env_step()?;
        }
        Ok(())
    }

    /// Runs `steps` environment steps, updating every `train_every` steps
    /// once the buffer holds `prefill` steps.
    pub fn train(&mut self, steps: u64) -> Result<(), TrainError> {
        for _ in 0..steps {
            self.env_step()?;
            if self.buffer.steps() >= self.config.prefill && self.env_steps % self.config.train_every as u64 == 0 {
                self.update()?;
            }
        }
        Ok(())
    }

    /// One world-model, ensemble and actor-critic update.
    pub fn update(&mut self) -> Result<LossRecord, TrainError> {
        let c = self.config;
        let batch = self.buffer.sample(c.batch, c.seq_len, self.wm.config.actions, &mut self.rng)?;
        let (mut record, rows) = self.world_model_step(&batch)?;
        record.ensemble = self.ensemble_step(&rows)?;
        self.actor_critic_step(&rows, &mut record)?;
        record.update = self.updates;
        record.env_step = self.env_steps;
        self.updates += 1;
        self.trace.push(record);
        Ok(record)
    }

    /// `steps` world-model-only updates (ensemble included).
    pub fn train_world_model(&mut self, steps: u64) -> Result<Vec<LossRecord>, TrainError> {
        let c = self.config;
        let mut out = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let batch = self.buffer.sample(c.batch, c.seq_len, self.wm.config.actions, &mut self.rng)?;
            let (mut record, rows) = self.world_model_step(&batch)?;
            record.ensemble = self.ensemble_step(&rows)?;
            record.update = self.updates;
            record.env_step = self.env_steps;
            self.updates += 1;
            self.trace.push(record);
            out.push(record);
        }
        Ok(out)
    }

    /// `steps` actor-critic-only updates.
    pub fn train_actor_critic(&mut self, steps: u64) -> Result<Vec<LossRecord>, TrainError> {
        let c = self.config;
        let mut out = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let batch = self.buffer.sample(c.batch, c.seq_len, self.wm.config.actions, &mut self.rng)?;
            let rows = self.posterior_rows(&batch)?;
            let mut record = LossRecord::default();
            self.actor_critic_step(&rows, &mut record)?;
            out.push(record);
        }
        Ok(out)
    }

    /// Negative ELBO plus reward and continue losses on `batch`, as a
    /// graph; returns the graph, loss node and per-term means.
    pub fn elbo_loss(&mut self, batch: &Batch) -> Result<(LossRecord, PosteriorRows), TrainError> {
        self.world_model_pass(batch, false)
    }

    fn world_model_step(&mut self, batch: &Batch) -> Result<(LossRecord, PosteriorRows), TrainError> {
        self.world_model_pass(batch, true)
    }

    fn posterior_rows(&mut self, batch: &Batch) -> Result<PosteriorRows, TrainError> {
        Ok(self.world_model_pass(batch, false)?.1)
    }

    fn world_model_pass(&mut self, batch: &Batch, apply: bool) -> Result<(LossRecord, PosteriorRows), TrainError> {
        let cfg = self.wm.config;
        let c = self.config;
        let rows = batch.rows();
        let mut g = Graph::new();
        let mut p = Bound::new(&self.wm.params, apply);
        let mut h = g.constant(DenseArray::zeros(rows, cfg.hidden));
        let mut z = g.constant(DenseArray::zeros(rows, cfg.latent_dim()));
        let mut acc = None;
        let mut rec = LossRecord::default();
        let mut post_rows = PosteriorRows { h: Vec::new(), z: Vec::new(), logits: Vec::new() };
        let mut real = 0.0;
        for t in 0..batch.len() {
            let mask = &batch.mask[t];
            let a = g.constant(batch.actions[t].clone());
            h = self.wm.seq_step(&mut g, &mut p, h, z, a)?;
            let x = g.constant(batch.obs[t].clone());
            let prior = self.wm.prior_logits(&mut g, &mut p, h)?;
            let post = self.wm.posterior_logits(&mut g, &mut p, h, x)?;
            z = g.sample_st(post, cfg.groups, &mut self.rng)?;

            let dec = self.wm.decoder_logits(&mut g, &mut p, h, z)?;
            let recon = g.bce_with_logits(dec, &batch.obs[t])?;
            let feat = g.concat(&[h, z])?;
            let r_hat = self.wm.reward_var(&mut g, &mut p, feat)?;
            let r_tgt = g.constant(batch.rewards[t].clone());
            let r_err = g.sub(r_hat, r_tgt)?;
            let r_sq = g.square(r_err);
            let r_loss = g.scale(r_sq, 0.5);
            let c_logit = self.wm.continue_logit_var(&mut g, &mut p, feat)?;
            let c_loss = g.bce_with_logits(c_logit, &batch.conts[t])?;

            let post_sg = g.detach(post);
            let prior_sg = g.detach(prior);
            let kl_dyn = g.kl_categorical(post_sg, prior, cfg.groups)?;
            let kl_rep = g.kl_categorical(post, prior_sg, cfg.groups)?;
            let dyn_c = g.clamp_min(kl_dyn, c.free_bits);
            let rep_c = g.clamp_min(kl_rep, c.free_bits);
            let dyn_w = g.scale(dyn_c, c.kl_scale * c.dyn_weight);
            let rep_w = g.scale(rep_c, c.kl_scale * (1.0 - c.dyn_weight));
            let kl = g.add(dyn_w, rep_w)?;

            let row = g.add(recon, r_loss)?;
            let row = g.add(row, c_loss)?;
            let row = g.add(row, kl)?;
            let masked = g.mul_const(row, mask)?;
            acc = Some(match acc {
                None => masked,
                Some(s) => g.add(s, masked)?,
            });

            let dot = |v: &DenseArray| v.data().iter().zip(mask.data()).map(|(a, m)| a * m).sum::<f64>();
            rec.recon += dot(g.value(recon));
            rec.reward += dot(g.value(r_loss));
            rec.cont += dot(g.value(c_loss));
            rec.kl += dot(g.value(kl_dyn));
            real += mask.data().iter().sum::<f64>();
            for r in 0..rows {
                if mask.get(r, 0) == 1.0 {
                    post_rows.h.push(g.value(h).row(r).to_vec());
                    post_rows.z.push(g.value(z).row(r).to_vec());
                    post_rows.logits.push(g.value(post).row(r).to_vec());
                }
            }
        }
        let real = real.max(1.0);
        let total = g.sum(acc.expect("non-empty batch"));
        let loss = g.scale(total, 1.0 / real);
        rec.loss = g.value(loss).item();
        rec.recon /= real;
        rec.reward /= real;
        rec.cont /= real;
        rec.kl /= real;
        if !rec.loss.is_finite() {
            log::error!("non-finite world-model loss on batch {}", self.updates);
            return Err(TrainError::NonFiniteLoss { batch_id: self.updates });
        }
        if apply {
            g.backward(loss)?;
            let grads = p.grads(&g);
            drop(p);
            self.wm_opt.update(&mut self.wm.params, &grads);
        }
        Ok((rec, post_rows))
    }

    /// Each member regresses posterior probabilities from `h` on its own
    /// bootstrap draw of the rows.
    fn ensemble_step(&mut self, rows: &PosteriorRows) -> Result<f64, TrainError> {
        let n = rows.h.len();
        if n == 0 {
            return Ok(0.0);
        }
        let cfg = self.wm.config;
        let m = self.config.ensemble_rows;
        let mut g = Graph::new();
        let mut e = Bound::new(&self.wm.ensemble_params, true);
        let mut total = None;
        self.last_member_hashes.clear();
        for k in 0..self.wm.members.len() {
            let picks: Vec<usize> = (0..m).map(|_| self.ens_rng.gen_range(0..n)).collect();
            let mut hasher = FnvHasher::default();
            picks.iter().for_each(|&i| hasher.write_usize(i));
            self.last_member_hashes.push(hasher.finish());
            let h = DenseArray::from_rows(&picks.iter().map(|&i| &rows.h[i][..]).collect::<Vec<_>>());
            let target = DenseArray::from_rows(&picks.iter().map(|&i| &rows.logits[i][..]).collect::<Vec<_>>());
            let hv = g.constant(h);
            let tv = g.constant(target);
            let logits = self.wm.members[k].forward(&mut g, &mut e, hv)?;
            let kl = g.kl_categorical(tv, logits, cfg.groups)?;
            let mean = g.mean(kl);
            total = Some(match total {
                None => mean,
                Some(t) => g.add(t, mean)?,
            });
        }
        let total = total.expect("at least two members");
        let value = g.value(total).item() / self.wm.members.len() as f64;
        log::trace!("ensemble bootstrap hashes {:x?}", self.last_member_hashes);
        g.backward(total)?;
        let grads = e.grads(&g);
        drop(e);
        self.ens_opt.update(&mut self.wm.ensemble_params, &grads);
        Ok(value)
    }

    fn actor_critic_step(&mut self, rows: &PosteriorRows, rec: &mut LossRecord) -> Result<(), TrainError> {
        let n_rows = rows.h.len();
        if n_rows == 0 {
            return Ok(());
        }
        let c = self.config;
        let cfg = self.wm.config;
        let n = c.ac_starts;
        let na = cfg.actions;
        let picks: Vec<usize> = (0..n).map(|_| self.rng.gen_range(0..n_rows)).collect();
        let h0 = DenseArray::from_rows(&picks.iter().map(|&i| &rows.h[i][..]).collect::<Vec<_>>());
        let z0 = DenseArray::from_rows(&picks.iter().map(|&i| &rows.z[i][..]).collect::<Vec<_>>());

        // Imagination with frozen world model and actor.
        let mut g = Graph::new();
        let mut p = Bound::new(&self.wm.params, false);
        let mut pa = Bound::new(&self.actor.params, false);
        let mut h = g.constant(h0);
        let mut z = g.constant(z0);
        let mut feats = Vec::with_capacity(c.horizon + 1);
        let mut actions = Vec::with_capacity(c.horizon);
        for _ in 0..c.horizon {
            let feat = g.concat(&[h, z])?;
            feats.push(feat);
            let logits = self.actor.logits_var(&mut g, &mut pa, feat)?;
            let mut probs = vec![0.0; n * na];
            softmax_groups(g.value(logits).data(), na, &mut probs);
            let mut onehot = vec![0.0; n * na];
            for r in 0..n {
                let a = sample_index(&probs[r * na..(r + 1) * na], &mut self.rng);
                onehot[r * na + a] = 1.0;
            }
            let a = g.constant(DenseArray::new(n, na, onehot));
            actions.push(a);
            h = self.wm.seq_step(&mut g, &mut p, h, z, a)?;
            let prior = self.wm.prior_logits(&mut g, &mut p, h)?;
            z = g.sample_st(prior, cfg.groups, &mut self.rng)?;
        }
        let last = g.concat(&[h, z])?;
        feats.push(last);
        let all = g.concat_rows(&feats)?;
        let r_hat = self.wm.reward_var(&mut g, &mut p, all)?;
        let c_logit = self.wm.continue_logit_var(&mut g, &mut p, all)?;
        let c_prob = g.sigmoid(c_logit);
        let rewards = g.value(r_hat).data().to_vec();
        let conts = g.value(c_prob).data().to_vec();
        let feat_all = g.value(all).clone();
        let onehots: Vec<DenseArray> = actions.iter().map(|&a| g.value(a).clone()).collect();
        drop(p);
        drop(pa);
        let values = {
            let mut gv = Graph::new();
            let mut pc = Bound::new(&self.critic.params, false);
            let f = gv.constant(feat_all.clone());
            let v = self.critic.value_var(&mut gv, &mut pc, f)?;
            gv.value(v).data().to_vec()
        };

        // λ-returns, indexed [j * n + r]; reward and continue at j+1 follow action j.
        let hz = c.horizon;
        let mut returns = vec![0.0; hz * n];
        let mut weights = vec![0.0; hz * n];
        for r in 0..n {
            let mut next = values[hz * n + r];
            for j in (0..hz).rev() {
                let k1 = (j + 1) * n + r;
                let disc = c.gamma * conts[k1];
                next = rewards[k1] + disc * ((1.0 - c.return_lambda) * values[k1] + c.return_lambda * next);
                returns[j * n + r] = next;
            }
            let mut w = 1.0;
            for j in 0..hz {
                weights[j * n + r] = w;
                w *= conts[(j + 1) * n + r];
            }
        }
        if returns.iter().any(|v| !v.is_finite()) {
            log::warn!("non-finite imagined return; actor-critic step skipped");
            return Ok(());
        }
        let m = hz * n;
        let feats_head = DenseArray::new(m, feat_all.cols(), feat_all.data()[..m * feat_all.cols()].to_vec());
        let adv: Vec<f64> = (0..m).map(|k| (returns[k] - values[k]) * weights[k]).collect();
        let act = DenseArray::new(
            m,
            na,
            onehots.iter().flat_map(|a| a.data().iter().copied()).collect(),
        );

        // Actor.
        let mut ga = Graph::new();
        let mut pa = Bound::new(&self.actor.params, true);
        let f = ga.constant(feats_head.clone());
        let logits = self.actor.logits_var(&mut ga, &mut pa, f)?;
        let logp = ga.log_softmax(logits, 1)?;
        let chosen = ga.mul_const(logp, &act)?;
        let chosen = ga.sum_cols(chosen);
        let pg = ga.mul_const(chosen, &DenseArray::new(m, 1, adv))?;
        let ent = ga.entropy_categorical(logits, 1)?;
        let ent_w = ga.mul_const(ent, &DenseArray::new(m, 1, weights.clone()))?;
        let pg_sum = ga.sum(pg);
        let ent_sum = ga.sum(ent_w);
        let ent_term = ga.scale(ent_sum, c.entropy);
        let obj = ga.add(pg_sum, ent_term)?;
        let actor_loss = ga.scale(obj, -1.0 / m as f64);
        rec.actor = ga.value(actor_loss).item();
        rec.policy_entropy = ga.value(ent).data().iter().sum::<f64>() / m as f64;
        ga.backward(actor_loss)?;
        let grads = pa.grads(&ga);
        drop(pa);
        self.actor_opt.update(&mut self.actor.params, &grads);

        // Critic.
        let mut gc = Graph::new();
        let mut pc = Bound::new(&self.critic.params, true);
        let f = gc.constant(feats_head);
        let v = self.critic.value_var(&mut gc, &mut pc, f)?;
        let tgt = gc.constant(DenseArray::new(m, 1, returns.clone()));
        let err = gc.sub(v, tgt)?;
        let sq = gc.square(err);
        let sq = gc.mul_const(sq, &DenseArray::new(m, 1, weights))?;
        let s = gc.sum(sq);
        let critic_loss = gc.scale(s, 0.5 / m as f64);
        rec.critic = gc.value(critic_loss).item();
        gc.backward(critic_loss)?;
        let grads = pc.grads(&gc);
        drop(pc);
        self.critic_opt.update(&mut self.critic.params, &grads);

        rec.imagined_return = (0..n).map(|r| returns[r]).sum::<f64>() / n as f64;
        Ok(())
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            task: self.task,
            wm_config: self.wm.config,
            config: self.config,
            seed: self.seed,
            wm_params: self.wm.params.clone(),
            ensemble_params: self.wm.ensemble_params.clone(),
            actor_params: self.actor.params.clone(),
            critic_params: self.critic.params.clone(),
            opts: [self.wm_opt.clone(), self.ens_opt.clone(), self.actor_opt.clone(), self.critic_opt.clone()],
            buffer: self.buffer.clone(),
            rngs: [self.rng.clone(), self.ens_rng.clone(), self.act_rng.clone()],
            collector: self.collector.clone(),
            env_steps: self.env_steps,
            updates: self.updates,
            returns: self.returns.clone(),
            trace: self.trace.clone(),
        }
    }

    /// Rebuilds a trainer; the open episode is restored by replaying its actions.
    pub fn restore(state: TrainerState) -> Result<Self, TrainError> {
        let mut t = Self::new(state.task, state.wm_config, state.config, state.seed)?;
        t.wm.params.assign(&state.wm_params)?;
        t.wm.ensemble_params.assign(&state.ensemble_params)?;
        t.actor.params.assign(&state.actor_params)?;
        t.critic.params.assign(&state.critic_params)?;
        let [a, b, c, d] = state.opts;
        t.wm_opt = a;
        t.ens_opt = b;
        t.actor_opt = c;
        t.critic_opt = d;
        t.buffer = state.buffer;
        let [r0, r1, r2] = state.rngs;
        t.rng = r0;
        t.ens_rng = r1;
        t.act_rng = r2;
        t.collector = state.collector;
        t.env_steps = state.env_steps;
        t.updates = state.updates;
        t.returns = state.returns;
        t.trace = state.trace;
        if t.collector.active {
            let mut env = t.task.make(t.collector.seed, false);
            for &a in &t.collector.actions {
                env.step(a)?;
            }
            t.env = Some(env);
        }
        Ok(t)
    }
}
