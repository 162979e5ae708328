//! Decision-time refinement of the recurrent state.
//!
//! ```text
//! z⁰ = mode q(z | h⁰, x)
//! for i in 0..n:
//!     L   = scale_obj · mean_s objective(rollouts from (hⁱ, zⁱ))
//!         + scale_reg · max(fb, KL(q(z⁰) ‖ q(zⁱ)))
//!     hⁱ⁺¹ = hⁱ − α ∂L/∂hⁱ
//!     zⁱ⁺¹ = mode q(z | hⁱ⁺¹, x)
//! a = mode actor(hⁿ, zⁿ)
//! ```
//!
//! Latents chosen by mode are constants in the graph; gradients reach `hⁱ`
//! through the rollout chain and through `q(zⁱ)` in the regulariser.

mod rollout;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub use rollout::{
    ent_step, objective_estimate, objective_rows, pig_at, repeat_rows, rollout, rollout_graph, sig_step,
    Bindings, Objective, RolloutTrajectory, RolloutVars,
};

use crate::array::DenseArray;
use crate::error::{GraphError, ModelError};
use crate::graph::{Graph, Var};
use crate::policy::Actor;
use crate::world_model::{ModelState, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct IIConfig {
    pub objective: Objective,
    pub iterations: usize,
    pub samples: usize,
    pub rollout_len: usize,
    pub alpha: f64,
    pub reg_free_bits: f64,
    pub reg_scale: f64,
    pub objective_scale: f64,
    /// Reuse one rollout seed across all iterations of a step.
    pub common_random_numbers: bool,
}

impl Default for IIConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Sig,
            iterations: 10,
            samples: 3,
            rollout_len: 1,
            alpha: 1e-2,
            reg_free_bits: 1.0,
            reg_scale: 1.0,
            objective_scale: 1.0,
            common_random_numbers: false,
        }
    }
}

impl IIConfig {
    pub fn baseline() -> Self {
        Self { objective: Objective::None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Dims(m.into()));
        if self.samples == 0 {
            return bad("sample count must be at least 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("step size must be finite and non-negative");
        }
        if !(self.reg_free_bits >= 0.0) || !(self.reg_scale >= 0.0) || !(self.objective_scale >= 0.0) {
            return bad("regulariser and objective scales must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TraceEntry {
    /// Unscaled objective estimate at this iterate.
    pub objective: f64,
    /// Unscaled `max(fb, KL)`.
    pub regularizer: f64,
    /// `‖∂L/∂h‖`; zero for the final forward-only entry.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RefinementTrace {
    /// `n + 1` entries unless a non-finite gradient stopped the loop; empty
    /// when the objective is `None`.
    pub entries: Vec<TraceEntry>,
    pub non_finite: bool,
}

impl RefinementTrace {
    pub fn first_objective(&self) -> Option<f64> {
        self.entries.first().map(|e| e.objective)
    }

    pub fn last_objective(&self) -> Option<f64> {
        self.entries.last().map(|e| e.objective)
    }

    /// Mean gradient norm over the update iterations.
    pub fn mean_grad_norm(&self) -> Option<f64> {
        let n = self.entries.len().checked_sub(1)?;
        if n == 0 {
            return None;
        }
        Some(self.entries[..n].iter().map(|e| e.grad_norm).sum::<f64>() / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    /// `(h⁰, z⁰)` before any update.
    pub initial: ModelState,
    pub state: ModelState,
    pub action: usize,
    pub trace: RefinementTrace,
}

/// `max(free_bits, KL(q0 ‖ qi))` over logit nodes, as `1 × 1`.
pub fn reg_term(g: &mut Graph, q0: Var, qi: Var, groups: usize, free_bits: f64) -> Result<Var, GraphError> {
    let kl = g.kl_categorical(q0, qi, groups)?;
    let kl = g.sum(kl);
    Ok(g.clamp_min(kl, free_bits))
}

struct Evaluation {
    objective: f64,
    regularizer: f64,
    grad: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate<R: Rng + ?Sized>(
    wm: &WorldModel,
    actor: &Actor,
    h: &DenseArray,
    z: &DenseArray,
    x: &DenseArray,
    q0: &DenseArray,
    cfg: &IIConfig,
    rng: &mut R,
    with_grad: bool,
) -> Result<Evaluation, GraphError> {
    let mut g = Graph::new();
    let mut b = Bindings::frozen(wm, actor);
    let hv = if with_grad { g.input(h.clone()) } else { g.constant(h.clone()) };
    let zv = g.constant(z.clone());
    let hs = repeat_rows(&mut g, hv, cfg.samples)?;
    let zs = repeat_rows(&mut g, zv, cfg.samples)?;
    let r = rollout_graph(wm, actor, &mut g, &mut b, hs, zs, cfg.rollout_len, rng)?;
    let rows = objective_rows(wm, cfg.objective, &mut g, &mut b, &r)?.expect("objective is not None");
    let obj = g.mean(rows);

    let xv = g.constant(x.clone());
    let qi = wm.posterior_logits(&mut g, &mut b.wm, hv, xv)?;
    let q0v = g.constant(q0.clone());
    let reg = reg_term(&mut g, q0v, qi, wm.config.groups, cfg.reg_free_bits)?;

    let objective = g.value(obj).item();
    let regularizer = g.value(reg).item();
    let grad = if with_grad {
        let a = g.scale(obj, cfg.objective_scale);
        let c = g.scale(reg, cfg.reg_scale);
        let loss = g.add(a, c)?;
        g.backward(loss)?;
        Some(g.grad(hv).map_or_else(|| alloc::vec![0.0; h.len()], |s| s.to_vec()))
    } else {
        None
    };
    Ok(Evaluation { objective, regularizer, grad })
}

/// Refines `h0` against observation `x`, returning the refined state, the
/// greedy action there and the per-iteration trace.
pub fn refine<R: Rng + ?Sized>(
    wm: &WorldModel,
    actor: &Actor,
    h0: &DenseArray,
    x: &DenseArray,
    cfg: &IIConfig,
    rng: &mut R,
) -> Result<Refined, ModelError> {
    cfg.validate()?;
    let q0 = wm.posterior_dist(h0, x)?;
    let z0 = q0.mode();
    let mut trace = RefinementTrace::default();

    if cfg.objective == Objective::None {
        let state = ModelState { h: h0.clone(), z: z0 };
        let action = actor.mode(&state)?;
        return Ok(Refined { initial: state.clone(), state, action, trace });
    }

    let crn_seed = cfg.common_random_numbers.then(|| rng.next_u64());
    let mut crn_rng = crn_seed.map(ChaCha8Rng::seed_from_u64);
    let initial = ModelState { h: h0.clone(), z: z0.clone() };
    let mut h = h0.clone();
    let mut z = z0;
    for _ in 0..cfg.iterations {
        if let Some(seed) = crn_seed {
            crn_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        }
        let eval = match crn_rng.as_mut() {
            Some(r) => evaluate(wm, actor, &h, &z, x, q0.logits(), cfg, r, true)?,
            None => evaluate(wm, actor, &h, &z, x, q0.logits(), cfg, rng, true)?,
        };
        let grad = eval.grad.expect("requested");
        let norm = libm::sqrt(grad.iter().map(|v| v * v).sum::<f64>());
        trace.entries.push(TraceEntry { objective: eval.objective, regularizer: eval.regularizer, grad_norm: norm });
        if !norm.is_finite() || !eval.objective.is_finite() {
            log::warn!("non-finite refinement gradient; keeping last finite state");
            trace.non_finite = true;
            break;
        }
        let stepped: Vec<f64> = h.data().iter().zip(&grad).map(|(v, d)| v - cfg.alpha * d).collect();
        h = DenseArray::new(h.rows(), h.cols(), stepped);
        z = wm.posterior_dist(&h, x)?.mode();
    }
    if !trace.non_finite {
        if let Some(seed) = crn_seed {
            crn_rng = Some(ChaCha8Rng::seed_from_u64(seed));
        }
        let eval = match crn_rng.as_mut() {
            Some(r) => evaluate(wm, actor, &h, &z, x, q0.logits(), cfg, r, false)?,
            None => evaluate(wm, actor, &h, &z, x, q0.logits(), cfg, rng, false)?,
        };
        trace.entries.push(TraceEntry { objective: eval.objective, regularizer: eval.regularizer, grad_norm: 0.0 });
    }

    let state = ModelState { h, z };
    let action = actor.mode(&state)?;
    Ok(Refined { initial, state, action, trace })
}

#[cfg(test)]
mod tests;
