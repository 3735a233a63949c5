use std::sync::Arc;

use super::*;
use crate::envs::{enumerate_tasks, EnvFamily};
use crate::nn::heads::softmax;
use crate::nn::mlp::Activation;
use crate::objective::Schedule;

pub(crate) fn tiny_arch(obs: usize, actions: usize, m: usize) -> ArchConfig {
    ArchConfig {
        obs_dim: obs,
        action_count: actions,
        option_count: m,
        encoder_hidden: vec![16, 8],
        option_embed_dim: 4,
        activation: Activation::Tanh,
        head_gain: 0.01,
        primitive_options: false,
    }
}

pub(crate) fn tiny_cfg(seed: u64, frames: u64) -> TrainerConfig {
    TrainerConfig {
        seed,
        envs_per_task: 3,
        segment_len: 5,
        total_frames_per_task: frames,
        learning_rate: 0.003,
        optimizer: OptimKind::Adam,
        max_grad_norm: Some(0.5),
        beta: Schedule::constant(0.1),
        lambda_h: Schedule::constant(0.05),
        reset_period: None,
        checkpoint_every_frac: None,
        checkpoint_dir: None,
        return_window: 10,
        eval_every_updates: None,
        eval_episodes_per_task: 4,
    }
}

fn bandits_trainer(seed: u64, tasks: usize, frames: u64) -> Trainer {
    let specs: Vec<TaskSpec> = {
        let base = enumerate_tasks(EnvFamily::MovingBandits, None).unwrap();
        (0..tasks).map(|i| base[i % 2].clone()).collect()
    };
    Trainer::fresh(
        specs,
        None,
        tiny_arch(6, 4, 2),
        0.95,
        false,
        PolicyMode::training(),
        ObjectiveConfig::default(),
        tiny_cfg(seed, frames),
    )
    .unwrap()
}

fn taxi_trainer(seed: u64, frames: u64) -> Trainer {
    let layout = Arc::new(GridLayout::builtin("taxi30").unwrap());
    let tasks = enumerate_tasks(EnvFamily::Taxi, Some(&layout)).unwrap();
    Trainer::fresh(
        tasks,
        Some(layout),
        tiny_arch(60, 6, 4),
        0.95,
        false,
        PolicyMode::training(),
        ObjectiveConfig::default(),
        tiny_cfg(seed, frames),
    )
    .unwrap()
}

#[test]
fn ten_tasks_three_envs_collect_150_frames() {
    let mut t = bandits_trainer(3, 10, 300);
    let before = t.total_env_steps();
    let batch = t.collect_segment().unwrap();
    assert_eq!(batch.len(), 30, "one trajectory per env instance");
    let frames: usize = batch.iter().map(|b| b.len()).sum();
    assert_eq!(frames, 150);
    assert_eq!(t.total_env_steps() - before, 150);
    // batch size of 15 per task
    for task in 0..10 {
        let per_task: usize = batch
            .iter()
            .filter(|b| b.task_index == task)
            .map(|b| b.len())
            .sum();
        assert_eq!(per_task, 15);
    }
}

#[test]
fn same_seed_collects_bit_identical_segments() {
    let mut a = bandits_trainer(7, 4, 300);
    let mut b = bandits_trainer(7, 4, 300);
    let ja = serde_json::to_string(&a.collect_segment().unwrap()).unwrap();
    let jb = serde_json::to_string(&b.collect_segment().unwrap()).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn metrics_are_byte_identical_across_runs() {
    let run = || {
        let mut t = bandits_trainer(11, 3, 450);
        let outcome = t.train().unwrap();
        serde_json::to_string(&outcome.metrics).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn frame_accounting_matches_env_steps() {
    let mut t = bandits_trainer(13, 4, 600);
    let outcome = t.train().unwrap();
    assert_eq!(outcome.frames_per_task, 600);
    assert_eq!(t.total_env_steps(), 600 * 4);
    assert_eq!(t.frames_per_task(), 600);
}

#[test]
fn trajectories_chain_options_across_steps() {
    let mut t = taxi_trainer(17, 300);
    for _ in 0..5 {
        let batch = t.collect_segment().unwrap();
        for traj in &batch {
            assert!(traj.check_chaining());
        }
    }
}

#[test]
fn task_reset_restores_prior_and_leaves_others_untouched() {
    let mut t = taxi_trainer(19, 600);
    // a few updates so posteriors drift away from the prior
    for _ in 0..8 {
        t.step().unwrap();
    }
    let other_master = t.store.data(t.store.id("task3.master.l0.w").unwrap()).to_vec();
    let other_intra = t.store.data(t.store.id("task3.intra.l0.w").unwrap()).to_vec();
    let reset_intra_before = t.store.data(t.store.id("task0.intra.l0.w").unwrap()).to_vec();
    let prior_intra = t.store.data(t.store.id("prior.intra.l0.w").unwrap()).to_vec();
    assert_ne!(reset_intra_before, prior_intra, "training must have moved the posterior");

    t.task_reset(0).unwrap();

    // reset task: option heads equal the prior bit for bit (zero KL)
    let reset_intra = t.store.data(t.store.id("task0.intra.l0.w").unwrap());
    assert_eq!(reset_intra, t.store.data(t.store.id("prior.intra.l0.w").unwrap()));
    let reset_term = t.store.data(t.store.id("task0.term.l0.b").unwrap());
    assert_eq!(reset_term, t.store.data(t.store.id("prior.term.l0.b").unwrap()));

    // sampled-state KL check
    let mut rng = stream_rng(0, 99);
    for _ in 0..5 {
        let mut env = TaskEnv::new(t.tasks()[0].clone(), t.layout().cloned(), false).unwrap();
        let obs = env.reset(ResetMode::Test, &mut rng);
        let mut fc = Features::new(&t.enc, &t.store, &obs).unwrap();
        for z in 0..4 {
            let latent = fc.latent(z).unwrap().to_vec();
            let q = softmax(&t.posteriors[0].intra.forward(&t.store, &latent).unwrap());
            let p = softmax(&t.prior.intra.forward(&t.store, &latent).unwrap());
            let kl: f64 = q
                .iter()
                .zip(p.iter())
                .map(|(qi, pi)| qi * (qi / pi).ln())
                .sum();
            assert!(kl.abs() < 1e-9, "KL after reset {kl}");
        }
    }

    // untouched task: bit identical
    assert_eq!(
        other_master,
        t.store.data(t.store.id("task3.master.l0.w").unwrap())
    );
    assert_eq!(
        other_intra,
        t.store.data(t.store.id("task3.intra.l0.w").unwrap())
    );
}

#[test]
fn disabled_reset_period_never_fires() {
    let mut t = bandits_trainer(23, 2, 300);
    assert!(t.cfg.reset_period.is_none());
    for _ in 0..20 {
        t.step().unwrap();
    }
    // option heads must have drifted away from the prior (no reset re-copy)
    let intra = t.store.data(t.store.id("task0.intra.l0.w").unwrap());
    let prior_intra = t.store.data(t.store.id("prior.intra.l0.w").unwrap());
    assert_ne!(intra, prior_intra);
}

#[test]
fn staggered_resets_fire_at_the_configured_period() {
    let mut cfg = tiny_cfg(29, 1500);
    cfg.reset_period = Some(10);
    let layout = Arc::new(GridLayout::builtin("taxi30").unwrap());
    let tasks: Vec<TaskSpec> = enumerate_tasks(EnvFamily::Taxi, Some(&layout))
        .unwrap()
        .into_iter()
        .take(2)
        .collect();
    let mut t = Trainer::fresh(
        tasks,
        Some(layout),
        tiny_arch(60, 6, 4),
        0.95,
        false,
        PolicyMode::training(),
        ObjectiveConfig::default(),
        cfg,
    )
    .unwrap();
    // run to the first reset and confirm task0's option heads equal the
    // (still moving) prior exactly at that update
    for _ in 0..10 {
        t.step().unwrap();
    }
    let intra = t.store.data(t.store.id("task0.intra.l0.w").unwrap());
    let prior_intra = t.store.data(t.store.id("prior.intra.l0.w").unwrap());
    assert_eq!(intra, prior_intra, "reset at update 10 copies the prior");
}

#[test]
fn checkpoints_are_written_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_cfg(31, 150);
    cfg.checkpoint_dir = Some(dir.path().to_path_buf());
    cfg.checkpoint_every_frac = Some(0.5);
    let base = enumerate_tasks(EnvFamily::MovingBandits, None).unwrap();
    let mut t = Trainer::fresh(
        vec![base[0].clone(), base[1].clone()],
        None,
        tiny_arch(6, 4, 2),
        0.95,
        false,
        PolicyMode::training(),
        ObjectiveConfig::default(),
        cfg,
    )
    .unwrap();
    let outcome = t.train().unwrap();
    let final_path = outcome.final_checkpoint.unwrap();
    let ckpt = Checkpoint::load(&final_path).unwrap();
    assert_eq!(ckpt.meta["heads"]["option_count"], 2);
    assert!(ckpt.tensors.contains_key("prior.intra.l0.w"));
    assert!(ckpt.tensors.contains_key("enc.emb.w"));
}

#[test]
fn degenerate_mode_has_zero_master_and_termination_ratios() {
    let base = enumerate_tasks(EnvFamily::MovingBandits, None).unwrap();
    let mode = PolicyMode {
        term_prior: crate::policy::TermPrior::FixedBernoulli,
        distral: true,
    };
    let mut t = Trainer::fresh(
        vec![base[0].clone()],
        None,
        tiny_arch(6, 4, 1),
        0.95,
        false,
        mode,
        ObjectiveConfig::default(),
        tiny_cfg(41, 300),
    )
    .unwrap();
    for _ in 0..5 {
        let rec = t.step().unwrap();
        assert_eq!(rec.losses.mean_term_master, 0.0);
        assert_eq!(rec.losses.mean_term_termination, 0.0);
    }
}

#[test]
fn metrics_jsonl_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let mut t = bandits_trainer(43, 2, 150);
    let outcome = t.train().unwrap();
    write_jsonl(&outcome.metrics, &path).unwrap();
    let back = read_jsonl(&path).unwrap();
    assert_eq!(back.len(), outcome.metrics.len());
    assert_eq!(
        serde_json::to_string(&back).unwrap(),
        serde_json::to_string(&outcome.metrics).unwrap()
    );
}
