//! Imagined rollouts and the surrogate objectives evaluated along them.
//!
//! A rollout of length `λ` starts from the current state (index 0) and
//! alternates actor sampling, the sequence model and prior sampling. All
//! `s` Monte-Carlo rollouts run as rows of one batch, and every sample is
//! straight-through so the whole chain is differentiable in the start `h`.
//!
//! Each objective sums a per-step term over `j = 0..=λ` and divides by
//! `max(λ, 1)`:
//!
//! ```text
//! SIG_j = KL( q(z | h_j, decode(h_j, ẑ_j)) ‖ p(ẑ | h_j) )
//! PIG_j = mean_c Var_k( member_k(h_j)_c )
//! ENT_j = H( p(ẑ | h_j) )
//! ```

use alloc::vec::Vec;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::GraphError;
use crate::graph::{Graph, Var};
use crate::nn::Bound;
use crate::policy::Actor;
use crate::world_model::{ModelState, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Objective {
    Sig,
    Pig,
    Ent,
    None,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Sig => "sig",
            Objective::Pig => "pig",
            Objective::Ent => "ent",
            Objective::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sig" => Some(Objective::Sig),
            "pig" => Some(Objective::Pig),
            "ent" => Some(Objective::Ent),
            "none" => Some(Objective::None),
            _ => None,
        }
    }
}

/// Graph handles of a batched rollout; `h`, `z` and `prior` have `λ + 1`
/// entries, `a` has `λ`.
pub struct RolloutVars {
    pub h: Vec<Var>,
    pub z: Vec<Var>,
    pub a: Vec<Var>,
    pub prior: Vec<Var>,
}

/// Parameter bindings for the three networks a rollout touches.
pub struct Bindings<'a> {
    pub wm: Bound<'a>,
    pub ensemble: Bound<'a>,
    pub actor: Bound<'a>,
}

impl<'a> Bindings<'a> {
    /// All parameters as constants.
    pub fn frozen(wm: &'a WorldModel, actor: &'a Actor) -> Self {
        Self {
            wm: Bound::new(&wm.params, false),
            ensemble: Bound::new(&wm.ensemble_params, false),
            actor: Bound::new(&actor.params, false),
        }
    }
}

/// Repeats a `1 × n` node into `rows × n` (gradient sums back over rows).
pub fn repeat_rows(g: &mut Graph, v: Var, rows: usize) -> Result<Var, GraphError> {
    if rows == 1 {
        return Ok(v);
    }
    let ones = g.constant(DenseArray::filled(rows, 1, 1.0));
    g.matmul(ones, v)
}

#[allow(clippy::too_many_arguments)]
pub fn rollout_graph<R: Rng + ?Sized>(
    wm: &WorldModel,
    actor: &Actor,
    g: &mut Graph,
    b: &mut Bindings,
    h0: Var,
    z0: Var,
    lambda: usize,
    rng: &mut R,
) -> Result<RolloutVars, GraphError> {
    let groups = wm.config.groups;
    let prior0 = wm.prior_logits(g, &mut b.wm, h0)?;
    let mut vars = RolloutVars {
        h: Vec::with_capacity(lambda + 1),
        z: Vec::with_capacity(lambda + 1),
        a: Vec::with_capacity(lambda),
        prior: Vec::with_capacity(lambda + 1),
    };
    vars.h.push(h0);
    vars.z.push(z0);
    vars.prior.push(prior0);
    let (mut h, mut z) = (h0, z0);
    for _ in 0..lambda {
        let feat = g.concat(&[h, z])?;
        let logits = actor.logits_var(g, &mut b.actor, feat)?;
        let a = g.sample_st(logits, 1, rng)?;
        h = wm.seq_step(g, &mut b.wm, h, z, a)?;
        let prior = wm.prior_logits(g, &mut b.wm, h)?;
        z = g.sample_st(prior, groups, rng)?;
        vars.h.push(h);
        vars.z.push(z);
        vars.a.push(a);
        vars.prior.push(prior);
    }
    Ok(vars)
}

/// Per-row SIG term at step `j` (`rows × 1`).
pub fn sig_step(wm: &WorldModel, g: &mut Graph, b: &mut Bindings, r: &RolloutVars, j: usize) -> Result<Var, GraphError> {
    let recon = wm.decode_var(g, &mut b.wm, r.h[j], r.z[j])?;
    let post = wm.posterior_logits(g, &mut b.wm, r.h[j], recon)?;
    g.kl_categorical(post, r.prior[j], wm.config.groups)
}

/// Mean across components of the population variance over members (`rows × 1`).
pub fn pig_at(wm: &WorldModel, g: &mut Graph, ensemble: &mut Bound, h: Var) -> Result<Var, GraphError> {
    let k = wm.members.len();
    let probs: Vec<Var> = (0..k).map(|m| wm.member_probs(g, ensemble, m, h)).collect::<Result<_, _>>()?;
    let mut total = probs[0];
    for &p in &probs[1..] {
        total = g.add(total, p)?;
    }
    let mean = g.scale(total, 1.0 / k as f64);
    let mut spread = None;
    for &p in &probs {
        let d = g.sub(p, mean)?;
        let sq = g.square(d);
        spread = Some(match spread {
            None => sq,
            Some(acc) => g.add(acc, sq)?,
        });
    }
    let var = g.scale(spread.expect("at least two members"), 1.0 / k as f64);
    let per_row = g.sum_cols(var);
    Ok(g.scale(per_row, 1.0 / wm.config.latent_dim() as f64))
}

/// Per-row entropy of the prior at step `j` (`rows × 1`).
pub fn ent_step(wm: &WorldModel, g: &mut Graph, r: &RolloutVars, j: usize) -> Result<Var, GraphError> {
    g.entropy_categorical(r.prior[j], wm.config.groups)
}

/// `(1 / max(λ, 1)) Σ_{j=0..λ} term_j`, one value per rollout row.
pub fn objective_rows(
    wm: &WorldModel,
    objective: Objective,
    g: &mut Graph,
    b: &mut Bindings,
    r: &RolloutVars,
) -> Result<Option<Var>, GraphError> {
    let lambda = r.a.len();
    let mut acc: Option<Var> = None;
    for j in 0..=lambda {
        let term = match objective {
            Objective::Sig => sig_step(wm, g, b, r, j)?,
            Objective::Pig => pig_at(wm, g, &mut b.ensemble, r.h[j])?,
            Objective::Ent => ent_step(wm, g, r, j)?,
            Objective::None => return Ok(None),
        };
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    let total = acc.expect("j = 0 always contributes");
    Ok(Some(g.scale(total, 1.0 / lambda.max(1) as f64)))
}

/// Array-level rollout record.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutTrajectory {
    pub states: Vec<ModelState>,
    pub actions: Vec<DenseArray>,
    /// Per-step objective term (row mean), `λ + 1` entries.
    pub contributions: Vec<f64>,
}

/// Runs `samples` rollouts of length `lambda` from `start` without
/// gradients and records states and per-step objective terms.
pub fn rollout<R: Rng + ?Sized>(
    wm: &WorldModel,
    actor: &Actor,
    start: &ModelState,
    objective: Objective,
    lambda: usize,
    rng: &mut R,
) -> Result<RolloutTrajectory, GraphError> {
    let mut g = Graph::new();
    let mut b = Bindings::frozen(wm, actor);
    let h0 = g.constant(start.h.clone());
    let z0 = g.constant(start.z.clone());
    let r = rollout_graph(wm, actor, &mut g, &mut b, h0, z0, lambda, rng)?;
    let mut contributions = Vec::with_capacity(lambda + 1);
    for j in 0..=lambda {
        let term = match objective {
            Objective::Sig => Some(sig_step(wm, &mut g, &mut b, &r, j)?),
            Objective::Pig => Some(pig_at(wm, &mut g, &mut b.ensemble, r.h[j])?),
            Objective::Ent => Some(ent_step(wm, &mut g, &r, j)?),
            Objective::None => None,
        };
        contributions.push(term.map_or(0.0, |t| {
            let v = g.value(t);
            v.data().iter().sum::<f64>() / v.len() as f64
        }));
    }
    let states = r
        .h
        .iter()
        .zip(&r.z)
        .map(|(&h, &z)| ModelState { h: g.value(h).clone(), z: g.value(z).clone() })
        .collect();
    let actions = r.a.iter().map(|&a| g.value(a).clone()).collect();
    Ok(RolloutTrajectory { states, actions, contributions })
}

/// Monte-Carlo estimate of the objective at `state` from `samples` rollouts.
pub fn objective_estimate<R: Rng + ?Sized>(
    wm: &WorldModel,
    actor: &Actor,
    state: &ModelState,
    objective: Objective,
    samples: usize,
    lambda: usize,
    rng: &mut R,
) -> Result<f64, GraphError> {
    let mut g = Graph::new();
    let mut b = Bindings::frozen(wm, actor);
    let h = g.constant(state.h.clone());
    let z = g.constant(state.z.clone());
    let h = repeat_rows(&mut g, h, samples)?;
    let z = repeat_rows(&mut g, z, samples)?;
    let r = rollout_graph(wm, actor, &mut g, &mut b, h, z, lambda, rng)?;
    Ok(match objective_rows(wm, objective, &mut g, &mut b, &r)? {
        Some(rows) => {
            let m = g.mean(rows);
            g.value(m).item()
        }
        None => 0.0,
    })
}
