//! TOML run configuration.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use latent_refine_core::env::{Task, NUM_ACTIONS};
use latent_refine_core::ii::{IIConfig, Objective};
use latent_refine_core::trainer::TrainConfig;
use latent_refine_core::world_model::WorldModelConfig;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, Result};

/// Seed list written as `"a..b"` (half-open) or `"1,5,9"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

impl Seeds {
    pub fn range(r: Range<u64>) -> Self {
        Seeds(r.collect())
    }
}

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = |_| format!("bad seed list {s:?}");
        if let Some((a, b)) = s.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
            return Ok(Seeds((a..b).collect()));
        }
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse().map_err(bad))
            .collect::<Result<Vec<_>, _>>()
            .map(Seeds)
    }
}

impl fmt::Display for Seeds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.0;
        let contiguous = v.len() > 1 && v.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous {
            write!(f, "{}..{}", v[0], v[v.len() - 1] + 1)
        } else {
            let parts: Vec<String> = v.iter().map(u64::to_string).collect();
            f.write_str(&parts.join(","))
        }
    }
}

impl Serialize for Seeds {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Seeds {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub hidden: usize,
    pub groups: usize,
    pub classes: usize,
    pub width: usize,
    pub ensemble: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        let d = WorldModelConfig::new(1, 1);
        ModelDims { hidden: d.hidden, groups: d.groups, classes: d.classes, width: d.width, ensemble: d.ensemble }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub steps: u64,
    pub checkpoint_every: u64,
    #[serde(flatten)]
    pub hyper: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { steps: 20_000, checkpoint_every: 5_000, hyper: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub seeds: Seeds,
    pub deterministic: bool,
    pub max_steps: Option<usize>,
    pub threads: Option<usize>,
    pub thresholds: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            seeds: Seeds::range(0..100),
            deterministic: true,
            max_steps: None,
            threads: None,
            thresholds: vec![f64::INFINITY],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub objectives: Vec<Objective>,
    pub rollout_lens: Vec<usize>,
    pub checkpoints: Vec<PathBuf>,
    pub calibrate: bool,
    pub calibration_episodes: usize,
    pub calibration_max_steps: Option<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            objectives: vec![Objective::Sig, Objective::Pig],
            rollout_lens: vec![1, 3, 8, 16],
            checkpoints: Vec::new(),
            calibrate: true,
            calibration_episodes: 5,
            calibration_max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub model: ModelDims,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ii: IIConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        RunConfig {
            task,
            seed: 0,
            out: default_out(),
            model: ModelDims::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            ii: IIConfig::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval.seeds.0.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        self.world_model().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.hyper.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.ii.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn world_model(&self) -> WorldModelConfig {
        let mut c = WorldModelConfig::new(self.task.obs_dim(), NUM_ACTIONS);
        c.hidden = self.model.hidden;
        c.groups = self.model.groups;
        c.classes = self.model.classes;
        c.width = self.model.width;
        c.ensemble = self.model.ensemble;
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short hash of the canonical serialization minus the output
    /// directory, embedded in every output.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        format!("{:08x}", crc32fast::hash(c.to_toml().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!("0..3".parse::<Seeds>().unwrap().0, vec![0, 1, 2]);
        assert_eq!("4, 9".parse::<Seeds>().unwrap().0, vec![4, 9]);
        assert!("a..3".parse::<Seeds>().is_err());
        assert_eq!(Seeds(vec![3, 4, 5]).to_string(), "3..6");
        assert_eq!(Seeds(vec![3, 7]).to_string(), "3,7");
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("task = \"ymaze-po\"\n").unwrap();
        assert_eq!(cfg.ii.iterations, 10);
        assert_eq!(cfg.ii.samples, 3);
        assert_eq!(cfg.sweep.rollout_lens, vec![1, 3, 8, 16]);
        assert_eq!(cfg.eval.seeds.0.len(), 100);
        assert_eq!(cfg.model.hidden, 128);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
task = "collect"
seed = 4
[model]
hidden = 16
[train]
steps = 100
batch = 4
[eval]
seeds = "10..12"
[ii]
objective = "pig"
rollout_len = 8
alpha = 0.003
"#;
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.task, Task::Collect);
        assert_eq!(cfg.train.hyper.batch, 4);
        assert_eq!(cfg.ii.objective, Objective::Pig);
        assert_eq!(cfg.eval.seeds.0, vec![10, 11]);
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::parse("task = \"maze\"").is_err());
        assert!(RunConfig::parse("task = \"collect\"\n[eval]\nseeds = \"3..3\"").is_err());
        assert!(RunConfig::parse("task = \"collect\"\n[ii]\nsamples = 0").is_err());
        assert!(RunConfig::parse("task = \"collect\"\nbogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::new(Task::YMazePo);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.ii.rollout_len = 3;
        assert_ne!(a.hash(), b.hash());
    }
}
