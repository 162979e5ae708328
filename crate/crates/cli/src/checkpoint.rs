//! `WMCK` checkpoint files: a fixed little-endian header, named raw `f32`
//! parameter blocks and a trailing CRC-32.
//!
//! ```text
//! magic "WMCK" | version u32 | step u64 | task u8
//! obs_dim actions hidden groups classes width ensemble actor_width : u32
//! block_count u32
//! { name_len u16 | name | rows u32 | cols u32 | rows*cols f32 }*
//! crc32 u32   (over every preceding byte)
//! ```

use std::path::Path;

use latent_refine_core::env::Task;
use latent_refine_core::nn::ParamSet;
use latent_refine_core::policy::{Actor, Critic};
use latent_refine_core::trainer::Trainer;
use latent_refine_core::world_model::{WorldModel, WorldModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"WMCK";
pub const VERSION: u32 = 1;

const SETS: [&str; 4] = ["wm", "ens", "actor", "critic"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub step: u64,
    pub task: Task,
    pub model: WorldModelConfig,
    pub actor_width: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: Header,
    pub wm: WorldModel,
    pub actor: Actor,
    pub critic: Critic,
}

fn task_tag(task: Task) -> u8 {
    match task {
        Task::YMazePo => 0,
        Task::YMazeFo => 1,
        Task::Collect => 2,
    }
}

fn tag_task(tag: u8) -> Option<Task> {
    [Task::YMazePo, Task::YMazeFo, Task::Collect].get(tag as usize).copied()
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Checkpoint {
            header: Header {
                step: t.env_steps(),
                task: t.task,
                model: t.wm.config,
                actor_width: t.config.actor_width,
            },
            wm: t.wm.clone(),
            actor: t.actor.clone(),
            critic: t.critic.clone(),
        }
    }

    fn sets(&self) -> [&ParamSet; 4] {
        [&self.wm.params, &self.wm.ensemble_params, &self.actor.params, &self.critic.params]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let m = &h.model;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.step.to_le_bytes());
        out.push(task_tag(h.task));
        for d in [m.obs_dim, m.actions, m.hidden, m.groups, m.classes, m.width, m.ensemble, h.actor_width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let sets = self.sets();
        let count: usize = sets.iter().map(|s| s.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, set) in SETS.iter().zip(sets) {
            for b in set.blocks() {
                let name = format!("{prefix}.{}", b.name);
                out.extend_from_slice(&(name.len() as u16).to_le_bytes());
                out.extend_from_slice(name.as_bytes());
                out.extend_from_slice(&(b.rows as u32).to_le_bytes());
                out.extend_from_slice(&(b.cols as u32).to_le_bytes());
                for v in &b.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(CliError::Data("checkpoint truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(CliError::Data("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CliError::Data("not a WMCK checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Data(format!("unsupported checkpoint version {version}")));
        }
        let step = r.u64()?;
        let task = tag_task(r.take(1)?[0]).ok_or_else(|| CliError::Data("unknown task tag".into()))?;
        let mut dims = [0usize; 8];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [obs_dim, actions, hidden, groups, classes, width, ensemble, actor_width] = dims;
        let model = WorldModelConfig { obs_dim, actions, hidden, groups, classes, width, ensemble };
        model.validate()?;

        let mut loaded: [ParamSet; 4] = Default::default();
        let count = r.u32()?;
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CliError::Data("block name is not utf-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let (prefix, rest) = name
                .split_once('.')
                .ok_or_else(|| CliError::Data(format!("block {name:?} has no set prefix")))?;
            let slot = SETS
                .iter()
                .position(|s| *s == prefix)
                .ok_or_else(|| CliError::Data(format!("unknown parameter set {prefix:?}")))?;
            loaded[slot].push(rest, rows, cols, data);
        }
        if r.pos != body.len() {
            return Err(CliError::Data("trailing bytes in checkpoint".into()));
        }

        // Build the architecture, then overwrite every block.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wm = WorldModel::new(model, &mut rng)?;
        let mut actor = Actor::new(model.state_dim(), actor_width, actions, &mut rng);
        let mut critic = Critic::new(model.state_dim(), actor_width, &mut rng);
        let [w, e, a, c] = loaded;
        wm.params.assign(&w)?;
        wm.ensemble_params.assign(&e)?;
        actor.params.assign(&a)?;
        critic.params.assign(&c)?;
        Ok(Checkpoint { header: Header { step, task, model, actor_width }, wm, actor, critic })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(CliError::io(path))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rejects a checkpoint whose task or dimensions differ from `expected`.
    pub fn check(&self, task: Task, expected: &WorldModelConfig) -> Result<()> {
        if self.header.task != task || self.header.model != *expected {
            return Err(CliError::Data(format!(
                "checkpoint was written for {} {:?}, config wants {} {:?}",
                self.header.task.name(),
                self.header.model,
                task.name(),
                expected
            )));
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CliError::Data("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
