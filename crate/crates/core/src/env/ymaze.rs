//! Three-armed maze with thirds-based checkpoint rewards.
//!
//! ```text
//! #################
//! #WWWWWWhhhEEEEEE#      W/E/S: arm cells, h: hub
//! #WWWWWWhhhEEEEEE#      arm depth 1..6 counts outward from the hub
//! #WWWWWWhhhEEEEEE#
//! #######SSS#######      anterior third: depth 1-2, 0-3 static obstacles
//! #######SSS#######      middle third:   depth 3-4, one patrolling obstacle
//! #######SSS#######      posterior third: depth 5-6, target (one arm only)
//! #######SSS#######
//! #######SSS#######
//! #######SSS#######
//! #################
//! ```

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{bfs, for_each_window_cell, Heading, Pos};
use super::{Contact, Environment, Observability, StepInfo, StepResult, FORWARD, NUM_ACTIONS, TURN_LEFT};
use crate::error::EnvError;
use crate::metrics::ImageShape;

pub const YMAZE_HORIZON: usize = 400;
pub const ROWS: usize = 11;
pub const COLS: usize = 17;
const ARM_DEPTH: i32 = 6;
const ARM_WIDTH: i32 = 3;
const START: Pos = Pos::new(2, 8);
const STATIC_PENALTY: f64 = -0.05;
const DYNAMIC_PENALTY: f64 = -0.1;

const PO_CHANNELS: usize = 5; // wall, static, dynamic, target, out of bounds
const FO_CHANNELS: usize = 6; // wall, static, dynamic, target, agent, facing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    West,
    East,
    South,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::West, Arm::East, Arm::South];

    /// Cell at `depth` (1..=6) from the hub and `lateral` (0..3) across.
    pub fn cell(self, depth: i32, lateral: i32) -> Pos {
        match self {
            Arm::West => Pos::new(1 + lateral, 7 - depth),
            Arm::East => Pos::new(1 + lateral, 9 + depth),
            Arm::South => Pos::new(3 + depth, 7 + lateral),
        }
    }
}

/// `⅓ · (1 − 0.2 · t / T)`.
pub fn checkpoint_reward(t: usize, horizon: usize) -> f64 {
    (1.0 - 0.2 * t as f64 / horizon as f64) / 3.0
}

#[derive(Debug, Clone, PartialEq)]
struct Patrol {
    arm: Arm,
    depth: i32,
    phase: usize,
}

impl Patrol {
    /// Lateral position after `t` steps on the bounce cycle 0,1,2,1.
    fn lateral(&self, t: usize) -> i32 {
        [0, 1, 2, 1][(self.phase + t) % 4]
    }

    fn cell(&self, t: usize) -> Pos {
        self.arm.cell(self.depth, self.lateral(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YMaze {
    walls: Vec<bool>,
    statics: Vec<bool>,
    patrols: Vec<Patrol>,
    static_counts: [usize; 3],
    target: Pos,
    target_arm: Arm,
    /// Distance to target over walls and static obstacles.
    dist: Vec<u32>,
    initial_distance: u32,
    agent: Pos,
    heading: Heading,
    t: usize,
    horizon: usize,
    next_checkpoint: usize,
    done: bool,
    mode: Observability,
}

fn idx(p: Pos) -> usize {
    p.row as usize * COLS + p.col as usize
}

fn inside(p: Pos) -> bool {
    p.row >= 0 && p.col >= 0 && (p.row as usize) < ROWS && (p.col as usize) < COLS
}

fn base_walls() -> Vec<bool> {
    let mut walls = vec![true; ROWS * COLS];
    for r in 1..=3 {
        for c in 1..=15 {
            walls[idx(Pos::new(r, c))] = false;
        }
    }
    for r in 4..=9 {
        for c in 7..=9 {
            walls[idx(Pos::new(r, c))] = false;
        }
    }
    walls
}

impl YMaze {
    pub fn reset(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let walls = base_walls();
        let heading = Heading::ALL[rng.gen_range(0..4)];
        let target_arm = Arm::ALL[rng.gen_range(0..3)];
        let target = target_arm.cell(rng.gen_range(5..=ARM_DEPTH), rng.gen_range(0..ARM_WIDTH));

        let mut statics = vec![false; ROWS * COLS];
        let mut static_counts = [0; 3];
        let mut patrols = Vec::with_capacity(3);
        for (a, arm) in Arm::ALL.into_iter().enumerate() {
            let count = rng.gen_range(0..=3usize);
            let mut anterior: Vec<Pos> =
                (1..=2).flat_map(|d| (0..ARM_WIDTH).map(move |l| arm.cell(d, l))).collect();
            anterior.shuffle(&mut rng);
            // Drop candidates that would cut the arm off from the hub.
            for &cell in &anterior {
                if static_counts[a] == count {
                    break;
                }
                statics[idx(cell)] = true;
                if Self::arm_reachable(&walls, &statics, arm) {
                    static_counts[a] += 1;
                } else {
                    statics[idx(cell)] = false;
                }
            }
            patrols.push(Patrol { arm, depth: rng.gen_range(3..=4), phase: rng.gen_range(0..4) });
        }

        let dist_opt = bfs(ROWS, COLS, target, |p| !walls[idx(p)] && !statics[idx(p)]);
        let dist: Vec<u32> = dist_opt.iter().map(|d| d.unwrap_or(u32::MAX)).collect();
        let initial_distance = dist[idx(START)];
        debug_assert!(initial_distance != u32::MAX);

        Self {
            walls,
            statics,
            patrols,
            static_counts,
            target,
            target_arm,
            dist,
            initial_distance,
            agent: START,
            heading,
            t: 0,
            horizon: YMAZE_HORIZON,
            next_checkpoint: 0,
            done: false,
            mode: Observability::Partial,
        }
    }

    fn arm_reachable(walls: &[bool], statics: &[bool], arm: Arm) -> bool {
        let d = bfs(ROWS, COLS, START, |p| !walls[idx(p)] && !statics[idx(p)]);
        (0..ARM_WIDTH).all(|l| d[idx(arm.cell(ARM_DEPTH, l))].is_some())
    }

    pub fn target_arm(&self) -> Arm {
        self.target_arm
    }

    pub fn target(&self) -> Pos {
        self.target
    }

    pub fn static_counts(&self) -> [usize; 3] {
        self.static_counts
    }

    pub fn agent(&self) -> (Pos, Heading) {
        (self.agent, self.heading)
    }

    pub fn initial_distance(&self) -> u32 {
        self.initial_distance
    }

    pub fn distance(&self) -> u32 {
        self.dist[idx(self.agent)]
    }

    /// Checkpoint thresholds `⅔D, ⅓D, 0`.
    pub fn thresholds(&self) -> [f64; 3] {
        let d = self.initial_distance as f64;
        [2.0 * d / 3.0, d / 3.0, 0.0]
    }

    /// Dynamic obstacle cells at the current time.
    pub fn dynamic_cells(&self) -> Vec<Pos> {
        self.patrols.iter().map(|p| p.cell(self.t)).collect()
    }

    fn is_wall(&self, p: Pos) -> bool {
        !inside(p) || self.walls[idx(p)]
    }

    fn is_static(&self, p: Pos) -> bool {
        inside(p) && self.statics[idx(p)]
    }

    fn is_dynamic_at(&self, p: Pos, t: usize) -> bool {
        self.patrols.iter().any(|q| q.cell(t) == p)
    }

    fn po_obs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(25 * PO_CHANNELS);
        for_each_window_cell(self.agent, self.heading, |p| {
            let mut ch = [0.0; PO_CHANNELS];
            if !inside(p) {
                ch[4] = 1.0;
            } else {
                ch[0] = self.is_wall(p) as u8 as f64;
                ch[1] = self.is_static(p) as u8 as f64;
                ch[2] = self.is_dynamic_at(p, self.t) as u8 as f64;
                ch[3] = (p == self.target) as u8 as f64;
            }
            out.extend_from_slice(&ch);
        });
        out
    }

    fn fo_obs(&self) -> Vec<f64> {
        let (dr, dc) = self.heading.delta();
        let facing = self.agent.offset(dr, dc);
        let mut out = Vec::with_capacity(ROWS * COLS * FO_CHANNELS);
        for r in 0..ROWS as i32 {
            for c in 0..COLS as i32 {
                let p = Pos::new(r, c);
                out.extend_from_slice(&[
                    self.is_wall(p) as u8 as f64,
                    self.is_static(p) as u8 as f64,
                    self.is_dynamic_at(p, self.t) as u8 as f64,
                    (p == self.target) as u8 as f64,
                    (p == self.agent) as u8 as f64,
                    (p == facing) as u8 as f64,
                ]);
            }
        }
        out
    }
}

impl Environment for YMaze {
    fn obs_dim(&self) -> usize {
        match self.mode {
            Observability::Partial => 25 * PO_CHANNELS,
            Observability::Full => ROWS * COLS * FO_CHANNELS,
        }
    }

    fn observability(&self) -> Observability {
        self.mode
    }

    fn set_observability(&mut self, mode: Observability) -> Result<(), EnvError> {
        if self.t > 0 {
            return Err(EnvError::ObservabilityLocked);
        }
        self.mode = mode;
        Ok(())
    }

    fn observe(&self) -> Vec<f64> {
        match self.mode {
            Observability::Partial => self.po_obs(),
            Observability::Full => self.fo_obs(),
        }
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= NUM_ACTIONS {
            return Err(EnvError::BadAction { action, count: NUM_ACTIONS });
        }
        let t = self.t;
        let mut contact = Contact::None;
        if action == FORWARD {
            let (dr, dc) = self.heading.delta();
            let next = self.agent.offset(dr, dc);
            if self.is_wall(next) {
                // bump, no penalty
            } else if self.is_static(next) {
                contact = Contact::Static;
            } else if self.is_dynamic_at(next, t) {
                contact = Contact::Dynamic;
            } else {
                self.agent = next;
            }
        } else if action == TURN_LEFT {
            self.heading = self.heading.left();
        } else {
            self.heading = self.heading.right();
        }
        // Obstacles advance after the agent; one landing on the agent is a touch.
        if self.is_dynamic_at(self.agent, t + 1) {
            contact = Contact::Dynamic;
        }
        let mut reward = match contact {
            Contact::None => 0.0,
            Contact::Static => STATIC_PENALTY,
            Contact::Dynamic => DYNAMIC_PENALTY,
        };

        let mut checkpoint = None;
        let d = self.distance() as f64;
        if self.next_checkpoint < 3 && d <= self.thresholds()[self.next_checkpoint] {
            reward += checkpoint_reward(t, self.horizon);
            checkpoint = Some(self.next_checkpoint as u8);
            self.next_checkpoint += 1;
        }

        self.t += 1;
        self.done = self.agent == self.target || self.t >= self.horizon;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            cont: !self.done,
            info: StepInfo { checkpoint, contact, pickup: None },
        })
    }

    fn t(&self) -> usize {
        self.t
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn done(&self) -> bool {
        self.done
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (DYNAMIC_PENALTY, 1.0 / 3.0)
    }

    fn image_shape(&self) -> ImageShape {
        match self.mode {
            Observability::Partial => ImageShape { height: 5, width: 5, channels: PO_CHANNELS },
            Observability::Full => ImageShape { height: ROWS, width: COLS, channels: FO_CHANNELS },
        }
    }

    fn render(&self) -> String {
        let dynamic = self.dynamic_cells();
        let mut s = String::with_capacity(ROWS * (COLS + 1));
        for r in 0..ROWS as i32 {
            for c in 0..COLS as i32 {
                let p = Pos::new(r, c);
                let ch = if p == self.agent {
                    self.heading.glyph()
                } else if self.is_wall(p) {
                    '#'
                } else if self.is_static(p) {
                    'o'
                } else if dynamic.contains(&p) {
                    'x'
                } else if p == self.target {
                    'T'
                } else {
                    '.'
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}
