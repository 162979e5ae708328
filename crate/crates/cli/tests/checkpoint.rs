use latent_refine::checkpoint::Checkpoint;
use latent_refine::error::CliError;
use latent_refine_core::env::{Task, NUM_ACTIONS};
use latent_refine_core::trainer::{TrainConfig, Trainer};
use latent_refine_core::world_model::WorldModelConfig;

fn small() -> WorldModelConfig {
    let mut c = WorldModelConfig::new(Task::YMazePo.obs_dim(), NUM_ACTIONS);
    c.hidden = 8;
    c.groups = 2;
    c.classes = 4;
    c.width = 16;
    c.ensemble = 2;
    c
}

fn trained() -> Trainer {
    let cfg = TrainConfig { prefill: 20, batch: 2, seq_len: 6, ac_starts: 4, ensemble_rows: 8, actor_width: 8, ..TrainConfig::default() };
    let mut t = Trainer::new(Task::YMazePo, small(), cfg, 3).unwrap();
    t.train(40).unwrap();
    t
}

#[test]
fn save_load_save_is_byte_identical() {
    let t = trained();
    let first = Checkpoint::from_trainer(&t).to_bytes();
    let loaded = Checkpoint::from_bytes(&first).unwrap();
    assert_eq!(loaded.to_bytes(), first);
    assert_eq!(loaded.header.step, 40);
    assert_eq!(loaded.wm.params, t.wm.params);
    assert_eq!(loaded.actor.params, t.actor.params);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wmck");
    loaded.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn corruption_is_detected() {
    let mut bytes = Checkpoint::from_trainer(&trained()).to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CliError::Data(m)) if m.contains("checksum")));
    assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
}

#[test]
fn header_layout() {
    let bytes = Checkpoint::from_trainer(&trained()).to_bytes();
    assert_eq!(&bytes[..4], b"WMCK");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 40);
    assert_eq!(bytes[16], 0);
    let tail = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    assert_eq!(tail, crc32fast::hash(&bytes[..bytes.len() - 4]));
}

#[test]
fn dimension_mismatch_rejected() {
    let ck = Checkpoint::from_trainer(&trained());
    let mut other = small();
    other.hidden = 16;
    assert!(ck.check(Task::YMazePo, &small()).is_ok());
    assert!(matches!(ck.check(Task::YMazePo, &other), Err(CliError::Data(_))));
    assert!(ck.check(Task::YMazeFo, &small()).is_err());
}
