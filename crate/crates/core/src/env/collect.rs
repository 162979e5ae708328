//! Seek-avoid collection in an open walled arena.
//!
//! Each episode fixes a room type and one good and one bad object kind.
//! Two of the eight (room, good, bad) combinations never appear in training
//! and make up the evaluation split.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::{for_each_window_cell, Heading, Pos};
use super::{Environment, Observability, StepInfo, StepResult, FORWARD, NUM_ACTIONS, TURN_LEFT};
use crate::error::EnvError;
use crate::metrics::ImageShape;

pub const COLLECT_HORIZON: usize = 300;
const SIZE: usize = 11;
const PER_KIND: usize = 10;
const PICKUP_LIMIT: usize = 10;
const PO_CHANNELS: usize = 7; // wall (room 0), wall (room 1), kinds 0-3, out of bounds
const FO_CHANNELS: usize = 8; // as above without out of bounds, plus agent and facing

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Combo {
    pub room: u8,
    /// 0 or 1.
    pub good: u8,
    /// 2 or 3.
    pub bad: u8,
}

impl Combo {
    pub fn all() -> Vec<Combo> {
        let mut v = Vec::with_capacity(8);
        for room in 0..2 {
            for good in 0..2 {
                for bad in 2..4 {
                    v.push(Combo { room, good, bad });
                }
            }
        }
        v
    }
}

/// Combinations reserved for evaluation.
pub const HELD_OUT: [Combo; 2] = [Combo { room: 0, good: 1, bad: 3 }, Combo { room: 1, good: 0, bad: 2 }];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn combos(self) -> Vec<Combo> {
        Combo::all().into_iter().filter(|c| HELD_OUT.contains(c) == (self == Split::Eval)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collect {
    combo: Combo,
    /// Object kind per cell.
    objects: Vec<Option<u8>>,
    agent: Pos,
    heading: Heading,
    t: usize,
    pickups: usize,
    score: f64,
    done: bool,
    mode: Observability,
}

fn idx(p: Pos) -> usize {
    p.row as usize * SIZE + p.col as usize
}

fn inside(p: Pos) -> bool {
    p.row >= 0 && p.col >= 0 && (p.row as usize) < SIZE && (p.col as usize) < SIZE
}

fn is_wall(p: Pos) -> bool {
    !inside(p) || p.row == 0 || p.col == 0 || p.row as usize == SIZE - 1 || p.col as usize == SIZE - 1
}

impl Collect {
    pub fn reset(seed: u64, split: Split) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let combos = split.combos();
        let combo = combos[rng.gen_range(0..combos.len())];
        let centre = Pos::new(SIZE as i32 / 2, SIZE as i32 / 2);
        let mut free: Vec<Pos> = (1..SIZE as i32 - 1)
            .flat_map(|r| (1..SIZE as i32 - 1).map(move |c| Pos::new(r, c)))
            .filter(|&p| p != centre)
            .collect();
        free.shuffle(&mut rng);
        let mut objects = vec![None; SIZE * SIZE];
        for (i, &p) in free.iter().take(2 * PER_KIND).enumerate() {
            objects[idx(p)] = Some(if i < PER_KIND { combo.good } else { combo.bad });
        }
        let heading = Heading::ALL[rng.gen_range(0..4)];
        Self {
            combo,
            objects,
            agent: centre,
            heading,
            t: 0,
            pickups: 0,
            score: 0.0,
            done: false,
            mode: Observability::Partial,
        }
    }

    pub fn combo(&self) -> Combo {
        self.combo
    }

    pub fn pickups(&self) -> usize {
        self.pickups
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn agent(&self) -> (Pos, Heading) {
        (self.agent, self.heading)
    }

    /// Cells that still hold an object of `kind`.
    pub fn cells_of(&self, kind: u8) -> Vec<Pos> {
        (0..SIZE * SIZE)
            .filter(|&i| self.objects[i] == Some(kind))
            .map(|i| Pos::new((i / SIZE) as i32, (i % SIZE) as i32))
            .collect()
    }

    fn cell_channels(&self, p: Pos, out: &mut [f64]) {
        if is_wall(p) {
            out[self.combo.room as usize] = 1.0;
        } else if let Some(kind) = self.objects[idx(p)] {
            out[2 + kind as usize] = 1.0;
        }
    }
}

impl Environment for Collect {
    fn obs_dim(&self) -> usize {
        match self.mode {
            Observability::Partial => 25 * PO_CHANNELS,
            Observability::Full => SIZE * SIZE * FO_CHANNELS,
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
            Observability::Partial => {
                let mut out = Vec::with_capacity(25 * PO_CHANNELS);
                for_each_window_cell(self.agent, self.heading, |p| {
                    let mut ch = [0.0; PO_CHANNELS];
                    if inside(p) {
                        self.cell_channels(p, &mut ch);
                    } else {
                        ch[6] = 1.0;
                    }
                    out.extend_from_slice(&ch);
                });
                out
            }
            Observability::Full => {
                let (dr, dc) = self.heading.delta();
                let facing = self.agent.offset(dr, dc);
                let mut out = Vec::with_capacity(SIZE * SIZE * FO_CHANNELS);
                for r in 0..SIZE as i32 {
                    for c in 0..SIZE as i32 {
                        let p = Pos::new(r, c);
                        let mut ch = [0.0; FO_CHANNELS];
                        self.cell_channels(p, &mut ch);
                        ch[6] = (p == self.agent) as u8 as f64;
                        ch[7] = (p == facing) as u8 as f64;
                        out.extend_from_slice(&ch);
                    }
                }
                out
            }
        }
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= NUM_ACTIONS {
            return Err(EnvError::BadAction { action, count: NUM_ACTIONS });
        }
        let mut reward = 0.0;
        let mut pickup = None;
        if action == FORWARD {
            let (dr, dc) = self.heading.delta();
            let next = self.agent.offset(dr, dc);
            if !is_wall(next) {
                self.agent = next;
                if let Some(kind) = self.objects[idx(next)].take() {
                    let good = kind == self.combo.good;
                    reward = if good { 1.0 } else { -1.0 };
                    pickup = Some(good);
                    self.pickups += 1;
                }
            }
        } else if action == TURN_LEFT {
            self.heading = self.heading.left();
        } else {
            self.heading = self.heading.right();
        }
        self.t += 1;
        self.score += reward;
        self.done = self.pickups >= PICKUP_LIMIT || self.t >= COLLECT_HORIZON;
        Ok(StepResult {
            obs: self.observe(),
            reward,
            cont: !self.done,
            info: StepInfo { pickup, ..StepInfo::default() },
        })
    }

    fn t(&self) -> usize {
        self.t
    }

    fn horizon(&self) -> usize {
        COLLECT_HORIZON
    }

    fn done(&self) -> bool {
        self.done
    }

    fn reward_bounds(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn image_shape(&self) -> ImageShape {
        match self.mode {
            Observability::Partial => ImageShape { height: 5, width: 5, channels: PO_CHANNELS },
            Observability::Full => ImageShape { height: SIZE, width: SIZE, channels: FO_CHANNELS },
        }
    }

    fn render(&self) -> String {
        let mut s = String::with_capacity(SIZE * (SIZE + 1));
        for r in 0..SIZE as i32 {
            for c in 0..SIZE as i32 {
                let p = Pos::new(r, c);
                let ch = if p == self.agent {
                    self.heading.glyph()
                } else if is_wall(p) {
                    '#'
                } else {
                    match self.objects[idx(p)] {
                        Some(k) if k == self.combo.good => '+',
                        Some(_) => '-',
                        None => '.',
                    }
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TURN_RIGHT;

    /// Walks to the nearest remaining object of `kind` (Manhattan, turning as needed).
    fn seek(env: &Collect, kind: u8) -> usize {
        let (pos, heading) = env.agent();
        let goal = env
            .cells_of(kind)
            .into_iter()
            .min_by_key(|p| (p.row - pos.row).abs() + (p.col - pos.col).abs())
            .expect("objects remain");
        let want = if goal.row < pos.row {
            Heading::North
        } else if goal.row > pos.row {
            Heading::South
        } else if goal.col > pos.col {
            Heading::East
        } else {
            Heading::West
        };
        if want == heading {
            FORWARD
        } else if want == heading.left() {
            TURN_LEFT
        } else {
            TURN_RIGHT
        }
    }

    #[test]
    fn splits_partition_combinations() {
        let train = Split::Train.combos();
        let eval = Split::Eval.combos();
        assert_eq!(train.len() + eval.len(), 8);
        assert!(eval.iter().all(|c| !train.contains(c)));
        for seed in 0..200 {
            assert!(HELD_OUT.contains(&Collect::reset(seed, Split::Eval).combo()));
            assert!(!HELD_OUT.contains(&Collect::reset(seed, Split::Train).combo()));
        }
    }

    #[test]
    fn ten_good_pickups_end_with_score_ten() {
        let mut env = Collect::reset(7, Split::Train);
        let good = env.combo().good;
        let mut last = None;
        while !env.done() {
            let r = env.step(seek(&env, good)).unwrap();
            assert!([-1.0, 0.0, 1.0].contains(&r.reward));
            last = Some(r);
        }
        let last = last.unwrap();
        assert_eq!(env.pickups(), 10);
        assert!(!last.cont);
        // the straight-line walk may cross bad objects on the way
        assert!(env.score() <= 10.0);
        assert!(env.t() < COLLECT_HORIZON);
    }

    #[test]
    fn idle_episode_hits_step_cap() {
        let mut env = Collect::reset(1, Split::Eval);
        let mut steps = 0;
        while !env.done() {
            env.step(TURN_LEFT).unwrap();
            steps += 1;
        }
        assert_eq!(steps, COLLECT_HORIZON);
        assert_eq!(env.score(), 0.0);
    }

    #[test]
    fn observation_shapes() {
        let mut env = Collect::reset(2, Split::Train);
        assert_eq!(env.observe().len(), 175);
        env.set_observability(Observability::Full).unwrap();
        assert_eq!(env.observe().len(), 968);
        assert!(env.render().contains('+'));
    }
}
