//! Actor and critic over the `[h, z]` model state.

use alloc::vec::Vec;

use rand::Rng;

use crate::array::DenseArray;
use crate::dist::{mode_groups, softmax_groups};
use crate::error::GraphError;
use crate::graph::{Graph, Var};
use crate::nn::{Bound, Init, Mlp, ParamSet};
use crate::world_model::ModelState;

/// State → action logits. The output layer starts at zero, so an untrained
/// actor is exactly uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub params: ParamSet,
    pub net: Mlp,
    pub actions: usize,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, width: usize, actions: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let net = Mlp::new(&mut params, "actor", state_dim, width, actions, Init::Zeros, rng);
        Self { params, net, actions }
    }

    pub fn logits_var(&self, g: &mut Graph, p: &mut Bound, feat: Var) -> Result<Var, GraphError> {
        self.net.forward(g, p, feat)
    }

    pub fn logits(&self, state: &ModelState) -> Result<DenseArray, GraphError> {
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let f = g.constant(state.features());
        let out = self.logits_var(&mut g, &mut p, f)?;
        Ok(g.value(out).clone())
    }

    pub fn probs(&self, state: &ModelState) -> Result<Vec<f64>, GraphError> {
        let logits = self.logits(state)?;
        let mut out = alloc::vec![0.0; logits.len()];
        softmax_groups(logits.data(), self.actions, &mut out);
        Ok(out)
    }

    /// Greedy action for a single-row state.
    pub fn mode(&self, state: &ModelState) -> Result<usize, GraphError> {
        let logits = self.logits(state)?;
        let onehot = mode_groups(logits.row(0), self.actions);
        Ok(onehot.iter().position(|&v| v == 1.0).unwrap_or(0))
    }
}

/// State → scalar value.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub params: ParamSet,
    pub net: Mlp,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, width: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let net = Mlp::new(&mut params, "critic", state_dim, width, 1, Init::Zeros, rng);
        Self { params, net }
    }

    pub fn value_var(&self, g: &mut Graph, p: &mut Bound, feat: Var) -> Result<Var, GraphError> {
        self.net.forward(g, p, feat)
    }

    pub fn values(&self, state: &ModelState) -> Result<Vec<f64>, GraphError> {
        let mut g = Graph::new();
        let mut p = Bound::new(&self.params, false);
        let f = g.constant(state.features());
        let out = self.value_var(&mut g, &mut p, f)?;
        Ok(g.value(out).data().to_vec())
    }
}
