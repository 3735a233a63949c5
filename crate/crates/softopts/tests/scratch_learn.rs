use std::time::Instant;

use softopts::envs::{enumerate_tasks, EnvFamily};
use softopts::nn::mlp::Activation;
use softopts::nn::optim::OptimKind;
use softopts::objective::{ObjectiveConfig, Schedule};
use softopts::policy::{ArchConfig, PolicyMode};
use softopts::trainer::{stream_rng, Trainer, TrainerConfig};
use softopts::transfer::bandits_option_diversity;

fn run_msol(tag: &str, seed: u64, frames: u64, lr: f64, beta: Schedule, lh: Schedule, reset: Option<u64>) {
    let base = enumerate_tasks(EnvFamily::MovingBandits, None).unwrap();
    let tasks: Vec<_> = (0..10).map(|i| base[i % 2].clone()).collect();
    let arch = ArchConfig {
        obs_dim: 6,
        action_count: 4,
        option_count: 2,
        encoder_hidden: vec![64, 64],
        option_embed_dim: 128,
        activation: Activation::Tanh,
        head_gain: 0.01,
        primitive_options: false,
    };
    let cfg = TrainerConfig {
        seed,
        envs_per_task: 3,
        segment_len: 5,
        total_frames_per_task: frames,
        learning_rate: lr,
        optimizer: OptimKind::Adam,
        max_grad_norm: Some(0.5),
        beta,
        lambda_h: lh,
        reset_period: reset,
        checkpoint_every_frac: None,
        checkpoint_dir: None,
        return_window: 30,
        eval_every_updates: None,
        eval_episodes_per_task: 10,
    };
    let mut t = Trainer::fresh(
        tasks, None, arch, 0.95, false,
        PolicyMode::training(), ObjectiveConfig::default(), cfg,
    ).unwrap();
    let start = Instant::now();
    t.train().unwrap();
    let (r, s) = t.evaluate().unwrap();
    let mut rng = stream_rng(seed, 77);
    let rep = bandits_option_diversity(&t.store, &t.enc, &t.prior, 100, 0.9, &mut rng).unwrap();
    println!(
        "{tag} seed={seed}: {:.0?} eval {r:.2}/{s:.2} div {:?} bij {}",
        start.elapsed(), rep.majorities, rep.bijective
    );
}

#[test]
fn msol_diversity_matrix() {
    let frames = 200_000u64;
    let ramp = |a: f64, b: f64| Schedule { start_value: a, end_value: b, start_step: 0, end_step: frames };
    for seed in [1, 2] {
        run_msol("lh-anneal      ", seed, frames, 0.001, Schedule::constant(0.2), ramp(0.05, 0.01), None);
        run_msol("beta04+anneal  ", seed, frames, 0.001, Schedule::constant(0.4), ramp(0.05, 0.01), None);
        run_msol("anneal+reset4k ", seed, frames, 0.001, Schedule::constant(0.2), ramp(0.05, 0.01), Some(4000));
    }
}
