//! End-to-end acceptance run. Trains one ymaze-po agent and checks every
//! criterion against it, printing one PASS/FAIL line each. Exits non-zero if
//! any criterion fails.

use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use latent_refine::analysis::{compare, immediate, match_seeds, mean, median_baseline, median_split, one_sample, Metric};
use latent_refine::checkpoint::Checkpoint;
use latent_refine::commands::{cmd_eval, cmd_train, evaluate, EvalOptions};
use latent_refine::config::{ModelDims, RunConfig, Seeds};
use latent_refine::csv_io::EpisodeSummary;
use latent_refine_core::array::DenseArray;
use latent_refine_core::calibrate::{calibrate, Calibration, ALPHA_GRID, CALIBRATION_EPISODES};
use latent_refine_core::dist::Categorical;
use latent_refine_core::env::{Task, NUM_ACTIONS};
use latent_refine_core::episode::{run_episode, EpisodeRecord};
use latent_refine_core::gradcheck::{check, RandomGraph};
use latent_refine_core::graph::Graph;
use latent_refine_core::ii::{objective_estimate, reg_term, IIConfig, Objective};
use latent_refine_core::metrics::{mse, ssim};
use latent_refine_core::nn::Mlp;
use latent_refine_core::policy::Actor;
use latent_refine_core::world_model::{ModelState, Select, WorldModel, WorldModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TASK: Task = Task::YMazePo;
const TRAIN_STEPS: u64 = 20_000;
const CADENCE: u64 = 1_000;
const TRAIN_SEED: u64 = 7;

struct Report {
    results: Vec<bool>,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push(pass);
    }
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn std_err(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

fn eval(ckpt: &Checkpoint, arm: &IIConfig, seeds: Range<u64>) -> Vec<EpisodeSummary> {
    let opts = EvalOptions { seeds: seeds.collect(), max_steps: None, salt: 0, threads: None };
    evaluate(ckpt, TASK, arm, &opts).expect("evaluation").iter().map(EpisodeSummary::from_record).collect()
}

fn calibrated(ckpt: &Checkpoint, arm: &IIConfig) -> (IIConfig, Calibration) {
    let c = calibrate(&ckpt.wm, &ckpt.actor, TASK, arm, &ALPHA_GRID, CALIBRATION_EPISODES, None);
    (c.apply(arm), c)
}

fn arm(objective: Objective, lambda: usize) -> IIConfig {
    IIConfig { objective, rollout_len: lambda, ..IIConfig::default() }
}

/// Mean objective at iteration 0 and iteration n over every refined step.
fn descent(rows: &[EpisodeSummary]) -> (f64, f64) {
    let (a, b): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|e| e.obj_iter0.zip(e.obj_itern)).unzip();
    (mean(&a), mean(&b))
}

fn autodiff(report: &mut Report) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    let mut compared = 0;
    let mut ok = true;
    for seed in 0..20 {
        let graph = RandomGraph::new(1000 + seed);
        match check(&graph, 1e-4, 1e-6) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error);
                largest = largest.max(r.params);
                compared += r.compared;
            }
            Err(_) => ok = false,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = ok && worst < 1e-3 && largest <= 10_000 && compared > 0 && secs < 120.0;
    report.record(
        1,
        "autodiff soundness",
        pass,
        format!("20 graphs, {compared} entries, max rel error {worst:.2e}, max params {largest}, {secs:.1} s"),
    );
}

fn small_agent(seed: u64) -> (WorldModel, Actor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = WorldModelConfig::new(TASK.obs_dim(), NUM_ACTIONS);
    cfg.hidden = 8;
    cfg.groups = 2;
    cfg.classes = 4;
    cfg.width = 16;
    cfg.ensemble = 3;
    let wm = WorldModel::new(cfg, &mut rng).unwrap();
    let actor = Actor::new(cfg.state_dim(), 16, NUM_ACTIONS, &mut rng);
    (wm, actor)
}

fn some_state(wm: &WorldModel) -> ModelState {
    let x = DenseArray::row_vector(&TASK.make(3, true).observe());
    let a = DenseArray::zeros(1, NUM_ACTIONS);
    let init = ModelState::initial(&wm.config, 1);
    wm.filter(&init, &a, &x, Select::<ChaCha8Rng>::Mode).unwrap().0
}

fn trivial_values(report: &mut Report) {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits: Vec<f64> = (0..32).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let q = Categorical::new(DenseArray::new(1, 32, logits), 4).unwrap();
    let kl: f64 = q.kl(&q).unwrap().iter().sum();
    pass &= kl.abs() <= 1e-9;
    notes.push(format!("KL(q|q)={kl:.1e}"));

    let (mut wm, actor) = small_agent(2);
    let state = some_state(&wm);
    let ids = |m: Mlp| [m.hidden.weight, m.hidden.bias, m.out.weight, m.out.bias];
    let first: Vec<Vec<f32>> = ids(wm.members[0]).iter().map(|&id| wm.ensemble_params.block(id).data.clone()).collect();
    for k in 1..wm.members.len() {
        for (id, data) in ids(wm.members[k]).into_iter().zip(&first) {
            wm.ensemble_params.block_mut(id).data.clone_from(data);
        }
    }
    let pig = objective_estimate(&wm, &actor, &state, Objective::Pig, 3, 2, &mut rng).unwrap();
    pass &= pig.abs() <= 1e-15;
    notes.push(format!("PIG={pig:.1e}"));

    let prior = wm.prior;
    let mut saturated = vec![0.0f32; wm.config.latent_dim()];
    for g in 0..wm.config.groups {
        saturated[g * wm.config.classes] = 40.0;
    }
    wm.params.block_mut(prior.out.weight).data.iter_mut().for_each(|v| *v = 0.0);
    wm.params.block_mut(prior.out.bias).data = saturated;
    let ent = objective_estimate(&wm, &actor, &state, Objective::Ent, 2, 3, &mut rng).unwrap();
    pass &= ent <= 1e-6;
    notes.push(format!("ENT={ent:.1e}"));

    let mut g = Graph::new();
    let logits = DenseArray::row_vector(&[0.5, -1.0, 0.2, 1.5, 0.0, 0.3]);
    let q0 = g.constant(logits.clone());
    let qi = g.input(logits);
    let reg = reg_term(&mut g, q0, qi, 2, 1.0).unwrap();
    let value = g.value(reg).item();
    g.backward(reg).unwrap();
    let grad_zero = g.grad(qi).is_none_or(|gr| gr.iter().all(|&v| v == 0.0));
    pass &= value == 1.0 && grad_zero;
    notes.push(format!("reg0={value} zero-grad={grad_zero}"));

    let env = TASK.make(11, true);
    let x = env.observe();
    let s = ssim(&x, &x, env.image_shape(), 1.0).unwrap();
    let m = mse(&x, &x).unwrap();
    pass &= (s - 1.0).abs() <= 1e-9 && m == 0.0;
    notes.push(format!("ssim(x,x)={s} mse(x,x)={m}"));

    report.record(2, "exact trivial values", pass, notes.join(", "));
}

fn no_ops(report: &mut Report, ckpt: &Checkpoint) {
    let run = |cfg: &IIConfig, seed: u64| {
        let mut env = TASK.make(seed, true);
        run_episode(&ckpt.wm, &ckpt.actor, env.as_mut(), cfg, seed, None)
    };
    let arms = [
        ("alpha=0", IIConfig { alpha: 0.0, ..IIConfig::default() }),
        ("n=0", IIConfig { iterations: 0, ..IIConfig::default() }),
        ("NONE", IIConfig { objective: Objective::None, ..IIConfig::default() }),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, cfg) in &arms {
        let same = (0..5).all(|seed| {
            let base: EpisodeRecord = run(&IIConfig::baseline(), seed);
            run(cfg, seed).outcome_eq(&base)
        });
        pass &= same;
        notes.push(format!("{name} {}", if same { "identical" } else { "differs" }));
    }
    report.record(3, "no-op equivalences", pass, format!("{} over 5 matched seeds", notes.join(", ")));
}

fn random_scores(seeds: Range<u64>) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    seeds
        .map(|seed| {
            let mut env = TASK.make(seed, true);
            let mut score = 0.0;
            while !env.done() {
                score += env.step(rng.gen_range(0..NUM_ACTIONS)).unwrap().reward;
            }
            score
        })
        .collect()
}

fn training(report: &mut Report, initial: &Checkpoint, trained: &Checkpoint, secs: f64) {
    let base = IIConfig::baseline();
    let before = eval(initial, &base, 0..100);
    let after = eval(trained, &base, 0..100);
    let mse_of = |rows: &[EpisodeSummary]| mean(&rows.iter().map(|e| e.mse_pre).collect::<Vec<_>>());
    let (m0, m1) = (mse_of(&before), mse_of(&after));
    let drop = 1.0 - m1 / m0;
    let greedy: Vec<f64> = after.iter().map(|e| e.score).collect();
    let random = random_scores(0..100);
    let se = (std_err(&greedy).powi(2) + std_err(&random).powi(2)).sqrt();
    let margin = (mean(&greedy) - mean(&random)) / se;
    let pass = drop >= 0.5 && margin >= 3.0 && secs <= 1800.0;
    report.record(
        4,
        "training efficacy",
        pass,
        format!(
            "held-out mse {m0:.4} -> {m1:.4} ({:.1}% drop), greedy {:.3} vs random {:.3} ({margin:.1} SE), {secs:.0} s",
            100.0 * drop,
            mean(&greedy),
            mean(&random)
        ),
    );
}

fn main() {
    let mut report = Report { results: Vec::new() };
    let total = Instant::now();

    autodiff(&mut report);
    trivial_values(&mut report);

    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = RunConfig::new(TASK);
    cfg.seed = TRAIN_SEED;
    cfg.out = dir.path().join("train");
    cfg.model = ModelDims { hidden: 32, groups: 4, classes: 8, width: 64, ensemble: 4 };
    cfg.train.steps = TRAIN_STEPS;
    cfg.train.checkpoint_every = CADENCE;
    let start = Instant::now();
    let outcome = cmd_train(&cfg, None).expect("training");
    let train_secs = start.elapsed().as_secs_f64();
    let load = |step: u64| {
        let path = outcome.checkpoints.iter().find(|p| p.ends_with(latent_refine::commands::checkpoint_name(step)));
        Checkpoint::load(path.expect("checkpoint written")).expect("checkpoint loads")
    };
    let initial = load(0);
    let trained = load(TRAIN_STEPS);

    no_ops(&mut report, &trained);
    training(&mut report, &initial, &trained, train_secs);

    // Early checkpoint: the first one in the first half of training whose
    // greedy baseline scores are not all equal, so a median split exists.
    let mut early = None;
    for step in (CADENCE..=TRAIN_STEPS / 2).step_by(CADENCE as usize) {
        let ckpt = load(step);
        let base = eval(&ckpt, &IIConfig::baseline(), 0..100);
        let spread = std_err(&base.iter().map(|e| e.score).collect::<Vec<_>>());
        println!("       baseline score spread at step {step}: se {spread:.4}");
        if spread > 0.0 {
            early = Some((step, ckpt, base));
            break;
        }
    }
    let (early_step, early, early_base) = early.unwrap_or_else(|| {
        let ckpt = load(CADENCE);
        let base = eval(&ckpt, &IIConfig::baseline(), 0..100);
        (CADENCE, ckpt, base)
    });

    let (sig1, sig_cal) = calibrated(&early, &arm(Objective::Sig, 1));
    let (sig1_final, sig_cal_final) = calibrated(&trained, &arm(Objective::Sig, 1));
    let sig100 = eval(&early, &sig1, 0..100);
    let sig_final = eval(&trained, &sig1_final, 0..30);
    let base30: Vec<EpisodeSummary> = early_base.iter().filter(|e| e.seed < 30).cloned().collect();
    let sig30: Vec<EpisodeSummary> = sig100.iter().filter(|e| e.seed < 30).cloned().collect();

    let gate = |c: &Calibration, rows: &[EpisodeSummary]| {
        let (i0, i_n) = descent(rows);
        (!c.fallback && i_n <= i0, format!("alpha {:e} scale {:.3}: {i0:.5} -> {i_n:.5}", c.alpha, c.objective_scale))
    };
    let (g_early, d_early) = gate(&sig_cal, &sig100);
    let (g_final, d_final) = gate(&sig_cal_final, &sig_final);
    report.record(
        5,
        "tuned-alpha descent",
        g_early && g_final,
        format!("step {early_step} {d_early}; step {TRAIN_STEPS} {d_final}"),
    );

    let (pig1, _) = calibrated(&early, &arm(Objective::Pig, 1));
    let pig30 = eval(&early, &pig1, 0..30);
    let sig_imm = immediate(&sig30).expect("refined steps");
    let pig_imm = immediate(&pig30).expect("refined steps");
    let final_imm = immediate(&sig_final).expect("refined steps");
    let p_of = |i: &latent_refine::analysis::Immediate| i.test.map_or(1.0, |t| t.p);
    let pig_improves = pig_imm.mean < 0.0 && p_of(&pig_imm) < 0.05;
    report.record(
        6,
        "immediate impact",
        sig_imm.mean < 0.0 && p_of(&sig_imm) < 0.05 && !pig_improves,
        format!(
            "step {early_step}: SIG mean {:.3e} p={:.3} over {} steps, PIG mean {:.3e} p={:.3}; (step {TRAIN_STEPS} SIG mean {:.3e} p={:.3})",
            sig_imm.mean,
            p_of(&sig_imm),
            sig_imm.steps,
            pig_imm.mean,
            p_of(&pig_imm),
            final_imm.mean,
            p_of(&final_imm)
        ),
    );

    let sig8 = eval(&early, &IIConfig { rollout_len: 8, ..sig1 }, 0..30);
    let recon_gain = |ii: &[EpisodeSummary]| {
        let pairs = match_seeds(&base30, ii);
        mean(&pairs.iter().map(|(b, i)| b.mse() - i.mse()).collect::<Vec<_>>())
    };
    let (gain1, gain8) = (recon_gain(&sig30), recon_gain(&sig8));
    let imm1 = -sig_imm.mean;
    let imm8 = -immediate(&sig8).expect("refined steps").mean;
    report.record(
        7,
        "rollout-length contrast",
        gain8 > gain1 && imm1 > imm8,
        format!(
            "step {early_step}: episode mse gain lambda=8 {gain8:.3e} vs lambda=1 {gain1:.3e}; immediate gain lambda=1 {imm1:.3e} vs lambda=8 {imm8:.3e}"
        ),
    );

    let pairs = match_seeds(&early_base, &sig100);
    let (below, above) = median_split(&pairs);
    let (mb, ma) = (mean(&below), mean(&above));
    let below_p = one_sample(&below).map_or(1.0, |t| t.p);
    report.record(
        8,
        "median-split pattern",
        !below.is_empty() && !above.is_empty() && mb > ma && mb > 0.0 && below_p < 0.05,
        format!(
            "step {early_step}, {} pairs, median {:.3}: below {} pairs {mb:.3} (p={below_p:.3}), above {} pairs {ma:.3}",
            pairs.len(),
            median_baseline(&pairs),
            below.len(),
            above.len()
        ),
    );

    let (ent1, _) = calibrated(&early, &arm(Objective::Ent, 1));
    let ent100 = eval(&early, &ent1, 0..100);
    let summary = compare(&early_base, &ent100, &[]);
    let improved: Vec<&str> =
        Metric::ALL.iter().filter(|&&m| summary.row(m).significant_improvement()).map(|m| m.name()).collect();
    let ps: Vec<String> = Metric::ALL
        .iter()
        .map(|&m| format!("{} {:+.3e} p={:.3}", m.name(), summary.row(m).diff(), summary.row(m).p().unwrap_or(1.0)))
        .collect();
    report.record(
        9,
        "entropy objective null",
        improved.is_empty(),
        format!("step {early_step}, 100 matched seeds, {}; significant improvements: {:?}", ps.join(", "), improved),
    );

    let state = some_state(&trained.wm);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut var = |s: usize| {
        let xs: Vec<f64> = (0..200)
            .map(|_| objective_estimate(&trained.wm, &trained.actor, &state, Objective::Sig, s, 3, &mut rng).unwrap())
            .collect();
        variance(&xs)
    };
    let (v1, v4, v16) = (var(1), var(4), var(16));
    let ratio = v1 / v16;
    report.record(
        10,
        "Monte-Carlo scaling",
        v1 > v4 && v4 > v16 && (8.0..=32.0).contains(&ratio),
        format!("var(1)={v1:.3e} var(4)={v4:.3e} var(16)={v16:.3e}, var(1)/var(16)={ratio:.2}"),
    );

    persistence(&mut report, &cfg, &trained, &outcome.checkpoints, dir.path());

    let passed = report.results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed in {:.0} s", report.results.len(), total.elapsed().as_secs_f64());
    if passed != report.results.len() {
        std::process::exit(1);
    }
}

fn persistence(report: &mut Report, cfg: &RunConfig, trained: &Checkpoint, checkpoints: &[std::path::PathBuf], dir: &Path) {
    let round_trip = checkpoints.iter().all(|p| {
        let bytes = std::fs::read(p).expect("checkpoint file");
        Checkpoint::from_bytes(&bytes).map(|c| c.to_bytes() == bytes).unwrap_or(false)
    });
    let mut eval_cfg = cfg.clone();
    eval_cfg.eval.seeds = Seeds::range(0..3);
    eval_cfg.eval.max_steps = Some(60);
    eval_cfg.eval.deterministic = true;
    let path = checkpoints.last().expect("checkpoints");
    let sig = IIConfig { rollout_len: 2, ..IIConfig::default() };
    let run = |name: &str| {
        let (out, _) = cmd_eval(&eval_cfg, path, &sig, &dir.join(name)).expect("eval");
        std::fs::read(out).expect("results file")
    };
    let (a, b) = (run("eval_a"), run("eval_b"));
    let same_csv = a == b;
    let from_trained = trained.to_bytes() == std::fs::read(path).expect("checkpoint file");
    report.record(
        11,
        "determinism and persistence",
        round_trip && same_csv && from_trained,
        format!(
            "{} checkpoints round-trip {round_trip}, reload matches {from_trained}, repeated eval csv identical {same_csv} ({} bytes)",
            checkpoints.len(),
            a.len()
        ),
    );
}
