//! Decision-time iterative inference for latent world-model agents.
//!
//! The crate is `no_std` (with `alloc`) and holds all numerical work: a
//! small reverse-mode autodiff engine, the recurrent categorical world
//! model and its training loop, the refinement engine that adjusts the
//! agent's recurrent state against imagined rollouts, the grid tasks, and
//! the per-episode evaluation runner. File formats, statistics and the CLI
//! live in the companion `latent-refine` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod array;
pub mod calibrate;
pub mod dist;
pub mod env;
pub mod episode;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ii;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod policy;
pub mod replay;
pub mod trainer;
pub mod world_model;

pub use array::DenseArray;
pub use dist::Categorical;
pub use error::{EnvError, GraphError, ModelError, TrainError};
pub use graph::{Graph, Var};
