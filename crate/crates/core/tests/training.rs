use latent_refine_core::env::{Task, NUM_ACTIONS};
use latent_refine_core::replay::ReplayBuffer;
use latent_refine_core::trainer::{TrainConfig, Trainer};
use latent_refine_core::world_model::WorldModelConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> WorldModelConfig {
    let mut c = WorldModelConfig::new(Task::YMazePo.obs_dim(), NUM_ACTIONS);
    c.hidden = 16;
    c.groups = 4;
    c.classes = 4;
    c.width = 32;
    c.ensemble = 3;
    c
}

fn config() -> TrainConfig {
    TrainConfig { batch: 4, seq_len: 8, prefill: 64, ac_starts: 8, ensemble_rows: 16, actor_width: 16, ..TrainConfig::default() }
}

fn tail_kl(t: &mut Trainer, updates: u64) -> f64 {
    let recs = t.train_world_model(updates).unwrap();
    let tail = &recs[recs.len() - 30..];
    tail.iter().map(|r| r.kl).sum::<f64>() / tail.len() as f64
}

#[test]
fn larger_kl_weight_never_raises_converged_divergence() {
    let mut kls = Vec::new();
    for beta in [0.1, 1.0, 10.0] {
        let cfg = TrainConfig { kl_scale: beta, free_bits: 0.0, ..config() };
        let mut t = Trainer::new(Task::YMazePo, small(), cfg, 5).unwrap();
        t.collect_experience(400).unwrap();
        kls.push(tail_kl(&mut t, 300));
    }
    assert!(kls[0] >= kls[1] && kls[1] >= kls[2], "{kls:?}");
}

#[test]
fn divergence_stays_finite_and_falls_early() {
    let mut t = Trainer::new(Task::YMazePo, small(), config(), 2).unwrap();
    t.collect_experience(400).unwrap();
    let recs = t.train_world_model(200).unwrap();
    assert!(recs.iter().all(|r| r.kl.is_finite() && r.loss.is_finite()));
    let mean = |r: &[latent_refine_core::trainer::LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    assert!(mean(&recs[150..]) < mean(&recs[..20]));
}

#[test]
fn members_draw_distinct_batches() {
    let mut t = Trainer::new(Task::YMazePo, small(), config(), 8).unwrap();
    t.collect_experience(200).unwrap();
    t.train_world_model(3).unwrap();
    let hashes = t.last_member_hashes.clone();
    assert_eq!(hashes.len(), 3);
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            assert_ne!(hashes[i], hashes[j]);
        }
    }
}

#[test]
fn ensemble_stream_leaves_dynamics_updates_alone() {
    let run = |ens_seed: u64| {
        let mut t = Trainer::new(Task::YMazePo, small(), config(), 4).unwrap();
        t.collect_experience(200).unwrap();
        t.reseed_ensemble(ens_seed);
        t.train_world_model(10).unwrap();
        (t.wm.params.fingerprint(), t.wm.ensemble_params.fingerprint())
    };
    let (wm_a, ens_a) = run(1);
    let (wm_b, ens_b) = run(2);
    assert_eq!(wm_a, wm_b);
    assert_ne!(ens_a, ens_b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn replay_batches_are_well_formed(lens in prop::collection::vec(1usize..30, 1..8), rows in 1usize..6, len in 1usize..12, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(10_000);
        for (e, &n) in lens.iter().enumerate() {
            buf.begin(&[e as f64, 0.0]);
            for i in 0..n {
                buf.push(i % 3, &[e as f64, i as f64 + 1.0], 0.5, i + 1 < n);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = buf.sample(rows, len, 3, &mut rng).unwrap();
        prop_assert_eq!(b.obs.len(), len);
        prop_assert_eq!(b.mask.len(), len);
        for t in 0..len {
            prop_assert_eq!(b.obs[t].rows(), rows);
            for r in 0..rows {
                let m = b.mask[t].get(r, 0);
                prop_assert!(m == 0.0 || m == 1.0);
                if t > 0 && b.mask[t - 1].get(r, 0) == 0.0 {
                    prop_assert_eq!(m, 0.0);
                }
            }
        }
        prop_assert!((0..rows).all(|r| b.mask[0].get(r, 0) == 1.0));
    }
}
