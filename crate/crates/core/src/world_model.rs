//! Recurrent latent world model.
//!
//! ```text
//! h_t = f(h_{t-1}, z_{t-1}, a_{t-1})      sequence model (GRU)
//! z_t ~ q(z | h_t, x_t)                   encoder
//! ẑ_t ~ p(ẑ | h_t)                        dynamics predictor
//! r̂_t, ĉ_t, x̂_t = heads(h_t, z_t)         reward, continue, decoder
//! ```
//!
//! Latents are `G` groups of `C`-way categoricals. The `K` ensemble members
//! each map `h` to their own predicted latent probabilities and live in a
//! separate [`ParamSet`] so they can be optimised independently.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::dist::Categorical;
use crate::error::{GraphError, ModelError};
use crate::graph::{Graph, Var};
use crate::nn::{Bound, Gru, Init, Mlp, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct WorldModelConfig {
    pub obs_dim: usize,
    pub actions: usize,
    pub hidden: usize,
    pub groups: usize,
    pub classes: usize,
    pub width: usize,
    pub ensemble: usize,
}

impl WorldModelConfig {
    pub fn new(obs_dim: usize, actions: usize) -> Self {
        Self { obs_dim, actions, hidden: 128, groups: 8, classes: 8, width: 128, ensemble: 8 }
    }

    pub fn latent_dim(&self) -> usize {
        self.groups * self.classes
    }

    /// Width of the `[h, z]` feature vector consumed by every head.
    pub fn state_dim(&self) -> usize {
        self.hidden + self.latent_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::Dims(msg.into()));
        if self.obs_dim == 0 || self.actions == 0 || self.hidden == 0 || self.width == 0 {
            return bad("observation, action, hidden and width sizes must be positive");
        }
        if self.groups == 0 || self.classes < 2 {
            return bad("latent needs at least one group of two classes");
        }
        if self.ensemble < 2 {
            return bad("ensemble needs at least two members");
        }
        Ok(())
    }
}

/// Recurrent state `h` and categorical latent `z`, one row per batch entry.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ModelState {
    pub h: DenseArray,
    pub z: DenseArray,
}

impl ModelState {
    /// The all-zero state that precedes the first observation.
    pub fn initial(config: &WorldModelConfig, rows: usize) -> Self {
        Self {
            h: DenseArray::zeros(rows, config.hidden),
            z: DenseArray::zeros(rows, config.latent_dim()),
        }
    }

    /// `[h, z]` as one row-major array.
    pub fn features(&self) -> DenseArray {
        let rows = self.h.rows();
        let mut data = Vec::with_capacity(rows * (self.h.cols() + self.z.cols()));
        for r in 0..rows {
            data.extend_from_slice(self.h.row(r));
            data.extend_from_slice(self.z.row(r));
        }
        DenseArray::new(rows, self.h.cols() + self.z.cols(), data)
    }
}

/// Result of filtering one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub state: ModelState,
    pub prior: Categorical,
    pub posterior: Categorical,
}

/// How the latent is chosen from a distribution.
pub enum Select<'r, R: Rng + ?Sized> {
    Mode,
    Sample(&'r mut R),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    pub params: ParamSet,
    pub ensemble_params: ParamSet,
    pub sequence: Gru,
    pub prior: Mlp,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub reward: Mlp,
    pub cont: Mlp,
    pub members: Vec<Mlp>,
}

impl WorldModel {
    pub fn new<R: Rng + ?Sized>(config: WorldModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        let mut params = ParamSet::new();
        let sequence = Gru::new(&mut params, "seq", c.latent_dim() + c.actions, c.hidden, rng);
        let small = Init::Glorot(0.1);
        let prior = Mlp::new(&mut params, "prior", c.hidden, c.width, c.latent_dim(), small, rng);
        let encoder =
            Mlp::new(&mut params, "enc", c.hidden + c.obs_dim, c.width, c.latent_dim(), small, rng);
        let decoder =
            Mlp::new(&mut params, "dec", c.state_dim(), c.width, c.obs_dim, Init::Glorot(1.0), rng);
        let reward = Mlp::new(&mut params, "rew", c.state_dim(), c.width, 1, Init::Zeros, rng);
        let cont = Mlp::new(&mut params, "cont", c.state_dim(), c.width, 1, Init::Zeros, rng);

        let mut ensemble_params = ParamSet::new();
        let members = (0..c.ensemble)
            .map(|k| {
                let name = format!("ens{k}");
                Mlp::new(&mut ensemble_params, &name, c.hidden, c.width, c.latent_dim(), small, rng)
            })
            .collect();
        log::debug!(
            "world model: {} parameters, ensemble: {}",
            params.num_params(),
            ensemble_params.num_params()
        );
        Ok(Self { config, params, ensemble_params, sequence, prior, encoder, decoder, reward, cont, members })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params() + self.ensemble_params.num_params()
    }

    // Graph-level pieces. `p` binds `self.params`, `e` binds `self.ensemble_params`.

    pub fn seq_step(&self, g: &mut Graph, p: &mut Bound, h: Var, z: Var, a: Var) -> Result<Var, GraphError> {
        let input = g.concat(&[z, a])?;
        self.sequence.forward(g, p, h, input)
    }

    pub fn prior_logits(&self, g: &mut Graph, p: &mut Bound, h: Var) -> Result<Var, GraphError> {
        self.prior.forward(g, p, h)
    }

    pub fn posterior_logits(&self, g: &mut Graph, p: &mut Bound, h: Var, x: Var) -> Result<Var, GraphError> {
        let input = g.concat(&[h, x])?;
        self.encoder.forward(g, p, input)
    }

    pub fn decoder_logits(&self, g: &mut Graph, p: &mut Bound, h: Var, z: Var) -> Result<Var, GraphError> {
        let input = g.concat(&[h, z])?;
        self.decoder.forward(g, p, input)
    }

    /// Reconstruction in `[0, 1]`.
    pub fn decode_var(&self, g: &mut Graph, p: &mut Bound, h: Var, z: Var) -> Result<Var, GraphError> {
        let logits = self.decoder_logits(g, p, h, z)?;
        Ok(g.sigmoid(logits))
    }

    pub fn reward_var(&self, g: &mut Graph, p: &mut Bound, feat: Var) -> Result<Var, GraphError> {
        self.reward.forward(g, p, feat)
    }

    pub fn continue_logit_var(&self, g: &mut Graph, p: &mut Bound, feat: Var) -> Result<Var, GraphError> {
        self.cont.forward(g, p, feat)
    }

    /// Member `k`'s predicted latent probabilities at `h`.
    pub fn member_probs(&self, g: &mut Graph, e: &mut Bound, k: usize, h: Var) -> Result<Var, GraphError> {
        let logits = self.members[k].forward(g, e, h)?;
        g.softmax(logits, self.config.groups)
    }

    // Array-level conveniences, each on a fresh constant graph.

    fn check_obs(&self, obs: &DenseArray) -> Result<(), ModelError> {
        if obs.cols() != self.config.obs_dim {
            return Err(ModelError::ObservationSize { expected: self.config.obs_dim, got: obs.cols() });
        }
        if !obs.is_finite() {
            return Err(ModelError::NonFiniteObservation);
        }
        Ok(())
    }

    fn categorical(&self, logits: DenseArray) -> Categorical {
        Categorical::new(logits, self.config.groups).expect("validated latent layout")
    }

    /// Advances `h` from the previous state and action.
    pub fn advance(&self, prev: &ModelState, action: &DenseArray) -> Result<DenseArray, ModelError> {
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let h = g.constant(prev.h.clone());
        let z = g.constant(prev.z.clone());
        let a = g.constant(action.clone());
        let out = self.seq_step(&mut g, &mut p, h, z, a)?;
        Ok(g.value(out).clone())
    }

    pub fn prior_dist(&self, h: &DenseArray) -> Result<Categorical, ModelError> {
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let hv = g.constant(h.clone());
        let out = self.prior_logits(&mut g, &mut p, hv)?;
        Ok(self.categorical(g.value(out).clone()))
    }

    pub fn posterior_dist(&self, h: &DenseArray, obs: &DenseArray) -> Result<Categorical, ModelError> {
        self.check_obs(obs)?;
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let hv = g.constant(h.clone());
        let xv = g.constant(obs.clone());
        let out = self.posterior_logits(&mut g, &mut p, hv, xv)?;
        Ok(self.categorical(g.value(out).clone()))
    }

    /// Filters one observation: advance `h`, then select `z` from the posterior.
    pub fn observe_step<R: Rng + ?Sized>(
        &self,
        prev: &ModelState,
        action: &DenseArray,
        obs: &DenseArray,
        select: Select<'_, R>,
    ) -> Result<Observed, ModelError> {
        self.check_obs(obs)?;
        let h = self.advance(prev, action)?;
        let prior = self.prior_dist(&h)?;
        let posterior = self.posterior_dist(&h, obs)?;
        let z = match select {
            Select::Mode => posterior.mode(),
            Select::Sample(rng) => posterior.sample(rng),
        };
        Ok(Observed { state: ModelState { h, z }, prior, posterior })
    }

    /// Like [`observe_step`](Self::observe_step) but skips the prior.
    pub fn filter<R: Rng + ?Sized>(
        &self,
        prev: &ModelState,
        action: &DenseArray,
        obs: &DenseArray,
        select: Select<'_, R>,
    ) -> Result<(ModelState, Categorical), ModelError> {
        self.check_obs(obs)?;
        let h = self.advance(prev, action)?;
        let posterior = self.posterior_dist(&h, obs)?;
        let z = match select {
            Select::Mode => posterior.mode(),
            Select::Sample(rng) => posterior.sample(rng),
        };
        Ok((ModelState { h, z }, posterior))
    }

    /// One imagined transition with `z` drawn from the prior.
    pub fn imagine_step<R: Rng + ?Sized>(
        &self,
        state: &ModelState,
        action: &DenseArray,
        rng: &mut R,
    ) -> Result<ModelState, ModelError> {
        let h = self.advance(state, action)?;
        let z = self.prior_dist(&h)?.sample(rng);
        Ok(ModelState { h, z })
    }

    pub fn decode(&self, state: &ModelState) -> Result<DenseArray, ModelError> {
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let h = g.constant(state.h.clone());
        let z = g.constant(state.z.clone());
        let out = self.decode_var(&mut g, &mut p, h, z)?;
        Ok(g.value(out).clone())
    }

    /// Predicted reward, one value per row.
    pub fn predict_reward(&self, state: &ModelState) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let f = g.constant(state.features());
        let out = self.reward_var(&mut g, &mut p, f)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Predicted continue probability, one value per row.
    pub fn predict_continue(&self, state: &ModelState) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let f = g.constant(state.features());
        let logit = self.continue_logit_var(&mut g, &mut p, f)?;
        let out = g.sigmoid(logit);
        Ok(g.value(out).data().to_vec())
    }

    /// Every member's predicted latent probabilities at `h`.
    pub fn ensemble_predict(&self, h: &DenseArray) -> Result<Vec<DenseArray>, ModelError> {
        let mut g = Graph::new();
        let mut e = Bound::new(&self.ensemble_params, false);
        let hv = g.constant(h.clone());
        (0..self.members.len())
            .map(|k| {
                let out = self.member_probs(&mut g, &mut e, k, hv)?;
                Ok(g.value(out).clone())
            })
            .collect()
    }
}

/// One-hot row for `action` out of `count`.
pub fn one_hot(action: usize, count: usize) -> DenseArray {
    let mut v = vec![0.0; count];
    v[action] = 1.0;
    DenseArray::new(1, count, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> WorldModelConfig {
        WorldModelConfig { obs_dim: 6, actions: 3, hidden: 5, groups: 2, classes: 3, width: 7, ensemble: 3 }
    }

    fn model(seed: u64) -> WorldModel {
        WorldModel::new(small(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn obs() -> DenseArray {
        DenseArray::row_vector(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn zero_params_give_uniform_prior_and_posterior() {
        let mut wm = model(0);
        wm.params.zero_all();
        let start = ModelState::initial(&wm.config, 1);
        let out = wm
            .observe_step::<ChaCha8Rng>(&start, &one_hot(1, 3), &obs(), Select::Mode)
            .unwrap();
        for p in out.prior.probs().data().iter().chain(out.posterior.probs().data()) {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(wm.predict_reward(&out.state).unwrap(), vec![0.0]);
        assert_eq!(wm.predict_continue(&out.state).unwrap(), vec![0.5]);
        assert!(wm.decode(&out.state).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn observe_is_deterministic_and_one_hot() {
        let wm = model(1);
        let start = ModelState::initial(&wm.config, 1);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            wm.observe_step(&start, &one_hot(0, 3), &obs(), Select::Sample(&mut rng)).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        for group in a.state.z.data().chunks(3) {
            assert_eq!(group.iter().sum::<f64>(), 1.0);
            assert!(group.iter().all(|&v| v == 0.0 || v == 1.0));
        }
        assert!(a.state.h.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn rejects_bad_observations() {
        let wm = model(2);
        let start = ModelState::initial(&wm.config, 1);
        let short = DenseArray::row_vector(&[0.0; 4]);
        let nan = DenseArray::row_vector(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for x in [short, nan] {
            assert!(wm.observe_step::<ChaCha8Rng>(&start, &one_hot(0, 3), &x, Select::Mode).is_err());
        }
    }

    #[test]
    fn ensemble_rows_sum_to_group_count() {
        let wm = model(3);
        let h = DenseArray::row_vector(&[0.2, -0.4, 0.1, 0.9, -0.3]);
        let preds = wm.ensemble_predict(&h).unwrap();
        assert_eq!(preds.len(), 3);
        for p in &preds {
            assert!((p.data().iter().sum::<f64>() - 2.0).abs() < 1e-12);
        }
        assert_ne!(preds[0], preds[1]);
    }

    #[test]
    fn saturated_prior_makes_imagination_deterministic() {
        let mut wm = model(4);
        // force the prior's output bias to a huge value on class 1 of each group
        let bias = wm.prior.out.bias;
        let block = wm.params.block_mut(bias);
        block.data = vec![0.0, 1e6, 0.0, 0.0, 1e6, 0.0];
        let w = wm.prior.out.weight;
        wm.params.block_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
        let start = ModelState::initial(&wm.config, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let s = wm.imagine_step(&start, &one_hot(2, 3), &mut rng).unwrap();
            assert_eq!(s.z.data(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn hand_sized_model_matches_scalar_evaluation() {
        // H=2, G=1, C=2: check the prior head against hand arithmetic
        let cfg = WorldModelConfig { obs_dim: 1, actions: 1, hidden: 2, groups: 1, classes: 2, width: 1, ensemble: 2 };
        let mut wm = WorldModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        wm.params.block_mut(wm.prior.hidden.weight).data = vec![0.5, -1.0];
        wm.params.block_mut(wm.prior.hidden.bias).data = vec![0.25];
        wm.params.block_mut(wm.prior.out.weight).data = vec![2.0, -1.0];
        wm.params.block_mut(wm.prior.out.bias).data = vec![0.0, 0.5];
        let h = [0.4f64, 0.3];
        let pre = 0.5 * h[0] - 1.0 * h[1] + 0.25;
        let act = pre / (1.0 + (-pre).exp());
        let (l0, l1) = (2.0 * act, -act + 0.5);
        let p0 = l0.exp() / (l0.exp() + l1.exp());
        let prior = wm.prior_dist(&DenseArray::row_vector(&h)).unwrap();
        assert!((prior.probs().data()[0] - p0).abs() < 1e-6);
    }
}
