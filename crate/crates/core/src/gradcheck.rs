//! Random composite graphs and a central finite-difference gradient check.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::error::GraphError;
use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Tanh,
    Sigmoid,
    Silu,
    Square,
    Gate,
    ClampMin,
    ConcatSlice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Kl,
    Entropy,
    Bce,
    SquaredRows,
    WeightedLogSoftmax,
}

/// A randomly drawn graph over a fixed list of parameter arrays.
#[derive(Debug, Clone)]
pub struct RandomGraph {
    pub params: Vec<DenseArray>,
    input: DenseArray,
    target: DenseArray,
    weights: DenseArray,
    acts: Vec<Act>,
    head: Head,
    groups: usize,
}

impl RandomGraph {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = rng.gen_range(1..=4);
        let din = rng.gen_range(2..=8);
        let groups = rng.gen_range(1..=3);
        let classes = rng.gen_range(2..=4);
        let width = groups * classes;
        let layers = rng.gen_range(1..=3);
        let all = [Act::Tanh, Act::Sigmoid, Act::Silu, Act::Square, Act::Gate, Act::ClampMin, Act::ConcatSlice];
        let acts: Vec<Act> = (0..layers).map(|_| all[rng.gen_range(0..all.len())]).collect();
        let heads = [Head::Kl, Head::Entropy, Head::Bce, Head::SquaredRows, Head::WeightedLogSoftmax];
        let head = heads[rng.gen_range(0..heads.len())];

        let mut rand_array = |r: usize, c: usize, scale: f64| {
            DenseArray::new(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect())
        };
        let mut params = Vec::new();
        let mut prev = din;
        for _ in 0..layers {
            params.push(rand_array(prev, width, 1.0));
            params.push(rand_array(1, width, 0.5));
            prev = width;
        }
        // second branch for the two-input heads
        params.push(rand_array(prev, width, 1.0));
        let input = rand_array(batch, din, 1.0);
        let target = DenseArray::new(
            batch,
            width,
            (0..batch * width).map(|i| if (seed as usize + i) % 3 == 0 { 1.0 } else { 0.0 }).collect(),
        );
        let weights = rand_array(batch, width, 1.0);
        RandomGraph { params, input, target, weights, acts, head, groups }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(DenseArray::len).sum()
    }

    fn build(&self, g: &mut Graph, values: &[DenseArray]) -> Result<(Vec<Var>, Var), GraphError> {
        let leaves: Vec<Var> = values.iter().map(|v| g.input(v.clone())).collect();
        let mut h = g.constant(self.input.clone());
        for (i, act) in self.acts.iter().enumerate() {
            let z = g.affine(h, leaves[2 * i], leaves[2 * i + 1])?;
            h = match act {
                Act::Tanh => g.tanh(z),
                Act::Sigmoid => g.sigmoid(z),
                Act::Silu => g.silu(z),
                Act::Square => {
                    let s = g.square(z);
                    g.scale(s, 0.25)
                }
                Act::Gate => {
                    let s = g.sigmoid(z);
                    g.mul(z, s)?
                }
                Act::ClampMin => g.clamp_min(z, -0.3),
                Act::ConcatSlice => {
                    let t = g.tanh(z);
                    let w = g.shape(z).1;
                    let c = g.concat(&[z, t])?;
                    g.slice(c, w / 2, w)?
                }
            };
        }
        let a = h;
        let b = g.matmul(h, leaves[leaves.len() - 1])?;
        let rows = match self.head {
            Head::Kl => g.kl_categorical(a, b, self.groups)?,
            Head::Entropy => g.entropy_categorical(b, self.groups)?,
            Head::Bce => g.bce_with_logits(b, &self.target)?,
            Head::SquaredRows => {
                let d = g.sub(a, b)?;
                let s = g.square(d);
                g.sum_cols(s)
            }
            Head::WeightedLogSoftmax => {
                let l = g.log_softmax(b, self.groups)?;
                let w = g.mul_const(l, &self.weights)?;
                let m = g.mean_rows(w);
                g.sum_cols(m)
            }
        };
        Ok((leaves, g.mean(rows)))
    }

    pub fn loss(&self, values: &[DenseArray]) -> Result<f64, GraphError> {
        let mut g = Graph::new();
        let (_, loss) = self.build(&mut g, values)?;
        Ok(g.value(loss).item())
    }

    pub fn gradients(&self) -> Result<Vec<Vec<f64>>, GraphError> {
        let mut g = Graph::new();
        let (leaves, loss) = self.build(&mut g, &self.params)?;
        g.backward(loss)?;
        Ok(leaves
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.grad(v).map_or_else(|| alloc::vec![0.0; p.len()], <[f64]>::to_vec))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub params: usize,
    /// Entries with |grad| above the floor.
    pub compared: usize,
    pub max_rel_error: f64,
}

/// Compares analytic gradients against central differences with step `eps`
/// on every parameter entry whose analytic or numeric gradient exceeds
/// `floor` in magnitude.
pub fn check(graph: &RandomGraph, eps: f64, floor: f64) -> Result<GradCheck, GraphError> {
    let analytic = graph.gradients()?;
    let mut values = graph.params.clone();
    let mut out = GradCheck { params: graph.num_params(), compared: 0, max_rel_error: 0.0 };
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = values[k].data()[i];
            values[k].data_mut()[i] = orig + eps;
            let up = graph.loss(&values)?;
            values[k].data_mut()[i] = orig - eps;
            let down = graph.loss(&values)?;
            values[k].data_mut()[i] = orig;
            let n = (up - down) / (2.0 * eps);
            if a.abs().max(n.abs()) <= floor {
                continue;
            }
            out.compared += 1;
            let rel = (a - n).abs() / a.abs().max(n.abs());
            out.max_rel_error = out.max_rel_error.max(rel);
        }
    }
    Ok(out)
}
