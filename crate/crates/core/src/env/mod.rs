//! Grid environments with egocentric (partial) or whole-grid (full) views.
//!
//! Every environment is a pure function of its seed and the action
//! sequence; no randomness is drawn after reset.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::EnvError;

mod collect;
mod grid;
mod ymaze;

pub use collect::{Collect, Combo, Split, COLLECT_HORIZON, HELD_OUT};
pub use grid::{Heading, Pos};
pub use ymaze::{checkpoint_reward, Arm, YMaze, YMAZE_HORIZON};

pub const FORWARD: usize = 0;
pub const TURN_LEFT: usize = 1;
pub const TURN_RIGHT: usize = 2;
pub const NUM_ACTIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Observability {
    Partial,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Contact {
    #[default]
    None,
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    /// Index (0, 1, 2) of the checkpoint granted on this step.
    pub checkpoint: Option<u8>,
    pub contact: Contact,
    /// `Some(true)` for a good pickup, `Some(false)` for a bad one.
    pub pickup: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// `false` exactly on the terminating step.
    pub cont: bool,
    pub info: StepInfo,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn actions(&self) -> usize {
        NUM_ACTIONS
    }
    fn observability(&self) -> Observability;
    /// Only permitted before the first step.
    fn set_observability(&mut self, mode: Observability) -> Result<(), EnvError>;
    fn observe(&self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<StepResult, EnvError>;
    /// Steps taken so far.
    fn t(&self) -> usize;
    fn horizon(&self) -> usize;
    fn done(&self) -> bool;
    /// Inclusive per-step reward range.
    fn reward_bounds(&self) -> (f64, f64);
    /// Layout of the flattened observation.
    fn image_shape(&self) -> crate::metrics::ImageShape;
    /// Plain-text dump of the current layout.
    fn render(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Task {
    #[cfg_attr(feature = "serde", serde(rename = "ymaze-po"))]
    YMazePo,
    #[cfg_attr(feature = "serde", serde(rename = "ymaze-fo"))]
    YMazeFo,
    #[cfg_attr(feature = "serde", serde(rename = "collect"))]
    Collect,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::YMazePo => "ymaze-po",
            Task::YMazeFo => "ymaze-fo",
            Task::Collect => "collect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ymaze-po" => Some(Task::YMazePo),
            "ymaze-fo" => Some(Task::YMazeFo),
            "collect" => Some(Task::Collect),
            _ => None,
        }
    }

    /// Fresh environment for `seed`. `eval` selects the held-out split where
    /// the task has one.
    pub fn make(self, seed: u64, eval: bool) -> Box<dyn Environment> {
        match self {
            Task::YMazePo => Box::new(YMaze::reset(seed)),
            Task::YMazeFo => {
                let mut env = YMaze::reset(seed);
                env.set_observability(Observability::Full).expect("fresh episode");
                Box::new(env)
            }
            Task::Collect => {
                let split = if eval { Split::Eval } else { Split::Train };
                Box::new(Collect::reset(seed, split))
            }
        }
    }

    pub fn obs_dim(self) -> usize {
        self.make(0, false).obs_dim()
    }
}
