//! Parameter storage and the layers built on it.
//!
//! Parameters are held as `f32` blocks (the checkpoint precision) and are
//! lifted into a [`Graph`] as `f64` leaves on demand through a [`Bound`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{GraphError, ModelError};
use crate::graph::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParamBlock {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl ParamBlock {
    pub fn to_array(&self) -> DenseArray {
        DenseArray::from_f32(self.rows, self.cols, &self.data)
    }
}

/// Ordered collection of named parameter arrays.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ParamSet {
    blocks: Vec<ParamBlock>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Glorot-uniform scaled by the given gain.
    Glorot(f64),
    Zeros,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>) -> ParamId {
        assert_eq!(data.len(), rows * cols);
        self.blocks.push(ParamBlock { name: name.into(), rows, cols, data });
        ParamId(self.blocks.len() - 1)
    }

    pub fn init<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let data = match init {
            Init::Zeros => vec![0.0; rows * cols],
            Init::Glorot(gain) => {
                let bound = gain * libm::sqrt(6.0 / (rows + cols) as f64);
                (0..rows * cols).map(|_| rng.gen_range(-bound..bound) as f32).collect()
            }
        };
        self.push(name, rows, cols, data)
    }

    pub fn block(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn block_mut(&mut self, id: ParamId) -> &mut ParamBlock {
        &mut self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn zero_all(&mut self) {
        for b in &mut self.blocks {
            b.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// FNV-1a digest over names, shapes and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        for b in &self.blocks {
            h.write(b.name.as_bytes());
            h.write_usize(b.rows);
            h.write_usize(b.cols);
            for v in &b.data {
                h.write_u32(v.to_bits());
            }
        }
        h.finish()
    }

    /// Copies values from `other`, which must have the identical layout.
    pub fn assign(&mut self, other: &ParamSet) -> Result<(), ModelError> {
        if self.blocks.len() != other.blocks.len() {
            return Err(ModelError::Layout(format!(
                "{} blocks expected, found {}",
                self.blocks.len(),
                other.blocks.len()
            )));
        }
        for (mine, theirs) in self.blocks.iter().zip(&other.blocks) {
            if mine.name != theirs.name || mine.rows != theirs.rows || mine.cols != theirs.cols {
                return Err(ModelError::Layout(format!(
                    "block {} {}x{} does not match {} {}x{}",
                    mine.name, mine.rows, mine.cols, theirs.name, theirs.rows, theirs.cols
                )));
            }
        }
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            mine.data.copy_from_slice(&theirs.data);
        }
        Ok(())
    }
}

/// Lazily materialises the blocks of a [`ParamSet`] as graph leaves.
pub struct Bound<'a> {
    set: &'a ParamSet,
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl<'a> Bound<'a> {
    /// `trainable` decides whether the leaves collect gradients.
    pub fn new(set: &'a ParamSet, trainable: bool) -> Self {
        Self { set, vars: vec![None; set.len()], trainable }
    }

    pub fn set(&self) -> &'a ParamSet {
        self.set
    }

    pub fn var(&mut self, g: &mut Graph, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let value = self.set.block(id).to_array();
        let v = if self.trainable { g.input(value) } else { g.constant(value) };
        self.vars[id.0] = Some(v);
        v
    }

    /// Per-block gradients after `g.backward`; `None` for blocks never used.
    pub fn grads(&self, g: &Graph) -> Vec<Option<Vec<f64>>> {
        self.vars
            .iter()
            .map(|v| v.and_then(|v| g.grad(v)).map(|s| s.to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        set: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = set.init(format!("{name}.w"), input, output, init, rng);
        let bias = set.init(format!("{name}.b"), 1, output, Init::Zeros, rng);
        Self { weight, bias, input, output }
    }

    pub fn forward(&self, g: &mut Graph, p: &mut Bound, x: Var) -> Result<Var, GraphError> {
        let w = p.var(g, self.weight);
        let b = p.var(g, self.bias);
        g.affine(x, w, b)
    }
}

/// Two-layer perceptron with a SiLU hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        set: &mut ParamSet,
        name: &str,
        input: usize,
        width: usize,
        output: usize,
        out_init: Init,
        rng: &mut R,
    ) -> Self {
        let hidden = Linear::new(set, &format!("{name}.l1"), input, width, Init::Glorot(1.0), rng);
        let out = Linear::new(set, &format!("{name}.l2"), width, output, out_init, rng);
        Self { hidden, out }
    }

    pub fn forward(&self, g: &mut Graph, p: &mut Bound, x: Var) -> Result<Var, GraphError> {
        let a = self.hidden.forward(g, p, x)?;
        let a = g.silu(a);
        self.out.forward(g, p, a)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// r  = σ(x Wxr + h Whr + br)
/// u  = σ(x Wxu + h Whu + bu)
/// c  = tanh(x Wxc + r ⊙ (h Whc) + bc)
/// h' = h + u ⊙ (c − h)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        set: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_input = set.init(format!("{name}.wx"), input, 3 * hidden, Init::Glorot(1.0), rng);
        let w_hidden = set.init(format!("{name}.wh"), hidden, 3 * hidden, Init::Glorot(1.0), rng);
        let bias = set.init(format!("{name}.b"), 1, 3 * hidden, Init::Zeros, rng);
        Self { w_input, w_hidden, bias, input, hidden }
    }

    pub fn forward(&self, g: &mut Graph, p: &mut Bound, h: Var, x: Var) -> Result<Var, GraphError> {
        let n = self.hidden;
        if g.shape(h).1 != n {
            return Err(GraphError::ShapeMismatch {
                op: "gru hidden",
                lhs: g.shape(h),
                rhs: (g.shape(h).0, n),
            });
        }
        let wx = p.var(g, self.w_input);
        let wh = p.var(g, self.w_hidden);
        let b = p.var(g, self.bias);
        let gx = g.affine(x, wx, b)?;
        let gh = g.matmul(h, wh)?;

        let xr = g.slice(gx, 0, n)?;
        let hr = g.slice(gh, 0, n)?;
        let reset = g.add(xr, hr)?;
        let reset = g.sigmoid(reset);

        let xu = g.slice(gx, n, n)?;
        let hu = g.slice(gh, n, n)?;
        let update = g.add(xu, hu)?;
        let update = g.sigmoid(update);

        let xc = g.slice(gx, 2 * n, n)?;
        let hc = g.slice(gh, 2 * n, n)?;
        let gated = g.mul(reset, hc)?;
        let cand = g.add(xc, gated)?;
        let cand = g.tanh(cand);

        let delta = g.sub(cand, h)?;
        let step = g.mul(update, delta)?;
        g.add(h, step)
    }
}
