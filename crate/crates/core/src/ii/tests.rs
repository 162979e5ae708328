use super::*;
use crate::world_model::WorldModelConfig;
use alloc::vec;
use rand_chacha::ChaCha8Rng;

fn cfg(groups: usize, classes: usize) -> WorldModelConfig {
    WorldModelConfig { obs_dim: 4, actions: 3, hidden: 3, groups, classes, width: 5, ensemble: 2 }
}

fn setup(groups: usize, classes: usize, seed: u64) -> (WorldModel, Actor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wm = WorldModel::new(cfg(groups, classes), &mut rng).unwrap();
    let actor = Actor::new(wm.config.state_dim(), 5, 3, &mut rng);
    (wm, actor)
}

fn randomise(set: &mut crate::nn::ParamSet, seed: u64, scale: f32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in set.blocks_mut() {
        for v in b.data.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Makes `mlp` output the constant `logits`.
fn constant_head(set: &mut crate::nn::ParamSet, mlp: crate::nn::Mlp, logits: &[f32]) {
    set.block_mut(mlp.out.weight).data.iter_mut().for_each(|v| *v = 0.0);
    set.block_mut(mlp.out.bias).data = logits.to_vec();
}

fn state(wm: &WorldModel) -> ModelState {
    let h = DenseArray::row_vector(&[0.2, -0.5, 0.4]);
    let z = crate::dist::mode_groups(&vec![0.0; wm.config.latent_dim()], wm.config.classes);
    ModelState { h, z: DenseArray::row_vector(&z) }
}

fn obs() -> DenseArray {
    DenseArray::row_vector(&[1.0, 0.0, 1.0, 0.0])
}

#[test]
fn reg_term_at_start_is_free_bits_without_gradient() {
    let mut g = Graph::new();
    let q = DenseArray::row_vector(&[0.3, -1.0, 2.0, 0.1]);
    let q0 = g.constant(q.clone());
    let qi = g.input(q);
    let reg = reg_term(&mut g, q0, qi, 2, 1.0).unwrap();
    assert_eq!(g.value(reg).item(), 1.0);
    g.backward(reg).unwrap();
    assert!(g.grad(qi).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn reg_term_above_floor_is_the_divergence() {
    // q0 = [0.9, 0.1] vs qi = softmax([0, t]); solve for KL = 2.5 by bisection
    let q0 = [libm::log(9.0), 0.0];
    let kl = |t: f64| {
        let a = crate::dist::Categorical::new(DenseArray::row_vector(&q0), 1).unwrap();
        let b = crate::dist::Categorical::new(DenseArray::row_vector(&[0.0, t]), 1).unwrap();
        a.kl(&b).unwrap()[0]
    };
    let (mut lo, mut hi) = (0.0, 20.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kl(mid) < 2.5 { lo = mid } else { hi = mid }
    }
    let mut g = Graph::new();
    let a = g.constant(DenseArray::row_vector(&q0));
    let b = g.input(DenseArray::row_vector(&[0.0, lo]));
    let reg = reg_term(&mut g, a, b, 1, 1.0).unwrap();
    assert!((g.value(reg).item() - 2.5).abs() < 1e-9);
}

#[test]
fn reg_term_gradient_vanishes_below_floor() {
    let q0 = [0.2, 0.1, -0.3];
    let qi = [0.25, 0.05, -0.3];
    let value = |x: &[f64]| {
        let mut g = Graph::new();
        let a = g.constant(DenseArray::row_vector(&q0));
        let b = g.constant(DenseArray::row_vector(x));
        let r = reg_term(&mut g, a, b, 1, 1.0).unwrap();
        g.value(r).item()
    };
    for k in 0..3 {
        let (mut p, mut m) = (qi, qi);
        p[k] += 1e-4;
        m[k] -= 1e-4;
        assert_eq!((value(&p) - value(&m)) / 2e-4, 0.0);
    }
}

#[test]
fn identical_members_give_zero_pig() {
    let (mut wm, actor) = setup(2, 3, 0);
    let first: Vec<f32> = wm.ensemble_params.blocks()[..4].iter().flat_map(|b| b.data.clone()).collect();
    let mut off = 0;
    for b in wm.ensemble_params.blocks_mut()[4..].iter_mut() {
        let n = b.data.len();
        b.data.copy_from_slice(&first[off..off + n]);
        off += n;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = objective_estimate(&wm, &actor, &state(&wm), Objective::Pig, 3, 2, &mut rng).unwrap();
    assert!(v.abs() < 1e-15);
}

#[test]
fn two_point_member_variance() {
    let (mut wm, actor) = setup(1, 2, 0);
    let p = libm::log(3.0) as f32;
    let m0 = wm.members[0];
    let m1 = wm.members[1];
    constant_head(&mut wm.ensemble_params, m0, &[p, 0.0]);
    constant_head(&mut wm.ensemble_params, m1, &[0.0, p]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = objective_estimate(&wm, &actor, &state(&wm), Objective::Pig, 1, 0, &mut rng).unwrap();
    assert!((v - 0.0625).abs() < 1e-6, "{v}");

    // ordering of members does not matter
    wm.members.swap(0, 1);
    let w = objective_estimate(&wm, &actor, &state(&wm), Objective::Pig, 1, 0, &mut rng).unwrap();
    assert!((v - w).abs() < 1e-15);
}

#[test]
fn uniform_prior_entropy_is_maximal() {
    let (mut wm, actor) = setup(8, 8, 0);
    let prior = wm.prior;
    constant_head(&mut wm.params, prior, &[0.0; 64]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = objective_estimate(&wm, &actor, &state(&wm), Objective::Ent, 2, 3, &mut rng).unwrap();
    // λ + 1 terms over a divisor of λ
    let expected = 8.0 * libm::log(8.0) * 4.0 / 3.0;
    assert!((v - expected).abs() < 1e-9);
    let v0 = objective_estimate(&wm, &actor, &state(&wm), Objective::Ent, 1, 0, &mut rng).unwrap();
    assert!((v0 - 16.635532).abs() < 1e-6);
}

#[test]
fn saturated_prior_entropy_is_zero() {
    let (mut wm, actor) = setup(1, 3, 0);
    let prior = wm.prior;
    constant_head(&mut wm.params, prior, &[1e6, 0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = objective_estimate(&wm, &actor, &state(&wm), Objective::Ent, 3, 2, &mut rng).unwrap();
    assert!(v.abs() <= 1e-6);
}

#[test]
fn sig_vanishes_when_encoder_matches_prior() {
    let (mut wm, actor) = setup(2, 3, 5);
    randomise(&mut wm.params, 6, 0.5);
    let (enc, pri) = (wm.encoder, wm.prior);
    // encoder input is [h, x]; copy the prior's h rows and zero the x rows
    let hidden = wm.config.hidden;
    let width = wm.config.width;
    let prior_w = wm.params.block(pri.hidden.weight).data.clone();
    let enc_w = &mut wm.params.block_mut(enc.hidden.weight).data;
    for (i, v) in enc_w.iter_mut().enumerate() {
        *v = if i < hidden * width { prior_w[i] } else { 0.0 };
    }
    for (src, dst) in [(pri.hidden.bias, enc.hidden.bias), (pri.out.weight, enc.out.weight), (pri.out.bias, enc.out.bias)] {
        let data = wm.params.block(src).data.clone();
        wm.params.block_mut(dst).data = data;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = objective_estimate(&wm, &actor, &state(&wm), Objective::Sig, 3, 4, &mut rng).unwrap();
    assert!(v.abs() < 1e-12, "{v}");
}

#[test]
fn sig_matches_explicit_two_class_divergence() {
    let (mut wm, actor) = setup(1, 2, 0);
    let (enc, pri) = (wm.encoder, wm.prior);
    constant_head(&mut wm.params, enc, &[libm::log(3.0) as f32, 0.0]);
    constant_head(&mut wm.params, pri, &[0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = objective_estimate(&wm, &actor, &state(&wm), Objective::Sig, 1, 0, &mut rng).unwrap();
    // KL([0.75, 0.25] ‖ [0.5, 0.5]); f32 storage of ln 3 limits precision
    assert!((v - 0.130812).abs() < 1e-6, "{v}");
}

#[test]
fn objectives_are_non_negative() {
    let (mut wm, actor) = setup(2, 3, 9);
    randomise(&mut wm.params, 10, 1.0);
    randomise(&mut wm.ensemble_params, 11, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..100 {
        let h: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = ModelState { h: DenseArray::row_vector(&h), z: state(&wm).z };
        for obj in [Objective::Sig, Objective::Pig, Objective::Ent] {
            let v = objective_estimate(&wm, &actor, &s, obj, 2, k % 3, &mut rng).unwrap();
            assert!(v >= 0.0, "{obj:?} {v}");
        }
    }
}

#[test]
fn rollout_has_lambda_transitions_and_repeats() {
    let (wm, actor) = setup(2, 3, 1);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rollout(&wm, &actor, &state(&wm), Objective::Sig, 1, &mut rng).unwrap()
    };
    let t = run(4);
    assert_eq!(t.states.len(), 2);
    assert_eq!(t.actions.len(), 1);
    assert_eq!(t.contributions.len(), 2);
    assert_eq!(t, run(4));
}

#[test]
fn rollout_objective_depends_on_start_state() {
    let (mut wm, actor) = setup(2, 3, 1);
    randomise(&mut wm.params, 2, 0.8);
    let s = state(&wm);
    let est = |h: &[f64]| {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let st = ModelState { h: DenseArray::row_vector(h), z: s.z.clone() };
        objective_estimate(&wm, &actor, &st, Objective::Ent, 1, 2, &mut rng).unwrap()
    };
    let base = s.h.data().to_vec();
    let mut moved = base.clone();
    moved[0] += 1e-3;
    assert!((est(&moved) - est(&base)).abs() > 1e-9);
}

fn refine_with(wm: &WorldModel, actor: &Actor, cfg: &IIConfig, seed: u64) -> Refined {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h0 = DenseArray::row_vector(&[0.1, 0.3, -0.2]);
    refine(wm, actor, &h0, &obs(), cfg, &mut rng).unwrap()
}

fn trained_like() -> (WorldModel, Actor) {
    let (mut wm, mut actor) = setup(2, 3, 3);
    randomise(&mut wm.params, 4, 0.8);
    randomise(&mut wm.ensemble_params, 5, 0.8);
    randomise(&mut actor.params, 6, 0.8);
    (wm, actor)
}

#[test]
fn zero_step_and_zero_iterations_match_baseline() {
    let (wm, actor) = trained_like();
    let base = refine_with(&wm, &actor, &IIConfig::baseline(), 1);
    assert!(base.trace.entries.is_empty());
    let zero_alpha = refine_with(&wm, &actor, &IIConfig { alpha: 0.0, ..IIConfig::default() }, 1);
    let zero_n = refine_with(&wm, &actor, &IIConfig { iterations: 0, ..IIConfig::default() }, 1);
    for r in [&zero_alpha, &zero_n] {
        assert_eq!(r.state, base.state);
        assert_eq!(r.action, base.action);
    }
    assert_eq!(zero_alpha.trace.entries.len(), 11);
    assert_eq!(zero_n.trace.entries.len(), 1);
}

#[test]
fn refine_leaves_parameters_untouched() {
    let (wm, actor) = trained_like();
    let before = (wm.params.fingerprint(), wm.ensemble_params.fingerprint(), actor.params.fingerprint());
    for objective in [Objective::Sig, Objective::Pig, Objective::Ent] {
        let cfg = IIConfig { objective, rollout_len: 3, alpha: 0.1, ..IIConfig::default() };
        let r = refine_with(&wm, &actor, &cfg, 2);
        assert_eq!(r.trace.entries.len(), cfg.iterations + 1);
        assert!(r.trace.entries[..cfg.iterations].iter().all(|e| e.grad_norm > 0.0));
    }
    let after = (wm.params.fingerprint(), wm.ensemble_params.fingerprint(), actor.params.fingerprint());
    assert_eq!(before, after);
}

#[test]
fn first_regulariser_entry_is_free_bits() {
    let (wm, actor) = trained_like();
    let r = refine_with(&wm, &actor, &IIConfig { reg_free_bits: 0.7, ..IIConfig::default() }, 3);
    assert_eq!(r.trace.entries[0].regularizer, 0.7);
}

#[test]
fn refine_is_deterministic() {
    let (wm, actor) = trained_like();
    let cfg = IIConfig { rollout_len: 3, alpha: 0.05, ..IIConfig::default() };
    assert_eq!(refine_with(&wm, &actor, &cfg, 7), refine_with(&wm, &actor, &cfg, 7));
    let crn = IIConfig { common_random_numbers: true, ..cfg };
    assert_eq!(refine_with(&wm, &actor, &crn, 7), refine_with(&wm, &actor, &crn, 7));
}

/// One step on a tiny model with a uniform (zero-weight) actor, so the
/// sampled action carries no gradient and finite differences of the loss
/// with the same rollout seed give the exact update direction.
#[test]
fn single_update_matches_finite_difference_gradient() {
    let (mut wm, actor) = setup(1, 2, 12);
    randomise(&mut wm.params, 13, 0.9);
    let cfg = IIConfig {
        objective: Objective::Ent,
        iterations: 1,
        samples: 1,
        rollout_len: 1,
        alpha: 0.05,
        reg_free_bits: 0.0,
        reg_scale: 0.5,
        objective_scale: 2.0,
        common_random_numbers: false,
    };
    let x = obs();
    let h0 = [0.1, 0.3, -0.2];
    let q0 = wm.posterior_dist(&DenseArray::row_vector(&h0), &x).unwrap();
    let z0 = q0.mode();
    let loss = |h: &[f64]| {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = evaluate(&wm, &actor, &DenseArray::row_vector(h), &z0, &x, q0.logits(), &cfg, &mut rng, false).unwrap();
        cfg.objective_scale * e.objective + cfg.reg_scale * e.regularizer
    };
    let eps = 1e-6;
    let fd: Vec<f64> = (0..3)
        .map(|k| {
            let (mut p, mut m) = (h0, h0);
            p[k] += eps;
            m[k] -= eps;
            (loss(&p) - loss(&m)) / (2.0 * eps)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let r = refine(&wm, &actor, &DenseArray::row_vector(&h0), &x, &cfg, &mut rng).unwrap();
    for k in 0..3 {
        let expected = h0[k] - cfg.alpha * fd[k];
        assert!((r.state.h.data()[k] - expected).abs() < 1e-8, "{k}: {} vs {expected}", r.state.h.data()[k]);
    }
}

#[test]
fn non_finite_gradient_stops_refinement() {
    let (mut wm, actor) = trained_like();
    let w = wm.prior.hidden.weight;
    wm.params.block_mut(w).data[0] = f32::INFINITY;
    let cfg = IIConfig { objective: Objective::Ent, ..IIConfig::default() };
    let r = refine_with(&wm, &actor, &cfg, 1);
    assert!(r.trace.non_finite);
    assert_eq!(r.trace.entries.len(), 1);
    assert_eq!(r.state.h.data(), &[0.1, 0.3, -0.2]);
}

#[test]
fn none_objective_uses_mode_selection() {
    let (wm, actor) = trained_like();
    let r = refine_with(&wm, &actor, &IIConfig::baseline(), 0);
    let q = wm.posterior_dist(&r.state.h, &obs()).unwrap();
    assert_eq!(r.state.z, q.mode());
    assert_eq!(r.action, actor.mode(&r.state).unwrap());
}
