//! Multitask actor-critic training: parallel per-task rollout collection,
//! combined updates, periodic task resets, and annealing.
//!
//! Collection is sequential over one logical worker per environment instance,
//! each with its own RNG stream split deterministically from the root seed;
//! a fixed seed therefore reproduces runs bit for bit.

pub mod metrics;
pub mod rollout;

use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{GridLayout, ResetMode, TaskEnv, TaskSpec};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::optim::{OptimKind, Optimizer};
use crate::nn::store::ParamStore;
use crate::objective::{combined_update, ObjectiveConfig, Schedule};
use crate::policy::{
    act, init_posterior_from_prior, ArchConfig, Encoder, Features, PolicyMode, PosteriorPolicy,
    SharedPrior,
};
use crate::{Error, Result};
pub use metrics::{read_jsonl, write_jsonl, MetricsRecord};
pub use rollout::{TrajStep, Trajectory};

/// Deterministic RNG stream derived from a root seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_UPDATE: u64 = 1;
const STREAM_RESET: u64 = 2;
pub const STREAM_EVAL: u64 = 3;
const STREAM_WORKER_BASE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub seed: u64,
    pub envs_per_task: usize,
    /// Rollout segment length n_s.
    pub segment_len: usize,
    pub total_frames_per_task: u64,
    pub learning_rate: f64,
    pub optimizer: OptimKind,
    pub max_grad_norm: Option<f64>,
    /// Schedules are evaluated on frames-per-task.
    pub beta: Schedule,
    pub lambda_h: Schedule,
    /// Updates between resets of any single task; `None` disables resets.
    pub reset_period: Option<u64>,
    /// Fraction of total frames between checkpoints (requires a directory).
    pub checkpoint_every_frac: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Episode window for the running per-task return.
    pub return_window: usize,
    /// Greedy test-mode evaluation cadence in updates; `None` disables.
    pub eval_every_updates: Option<u64>,
    pub eval_episodes_per_task: usize,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.envs_per_task == 0 || self.segment_len == 0 {
            return Err(Error::config("envs_per_task and segment_len must be >= 1"));
        }
        if self.total_frames_per_task == 0 {
            return Err(Error::config("total_frames_per_task must be >= 1"));
        }
        if self.reset_period == Some(0) {
            return Err(Error::config("reset_period must be >= 1 when set"));
        }
        Ok(())
    }

    pub fn frames_per_update(&self) -> u64 {
        (self.envs_per_task * self.segment_len) as u64
    }

    pub fn total_updates(&self) -> u64 {
        self.total_frames_per_task.div_ceil(self.frames_per_update())
    }
}

struct Worker {
    env: TaskEnv,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    z_prev: Option<usize>,
    episode_return: f64,
    steps_taken: u64,
}

/// The training outcome: in-memory metrics plus checkpoint locations.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRecord>,
    pub final_checkpoint: Option<PathBuf>,
    pub frames_per_task: u64,
}

pub struct Trainer {
    pub store: ParamStore,
    pub enc: Encoder,
    pub prior: SharedPrior,
    pub posteriors: Vec<PosteriorPolicy>,
    pub mode: PolicyMode,
    pub objective: ObjectiveConfig,
    pub cfg: TrainerConfig,
    tasks: Vec<TaskSpec>,
    layout: Option<Arc<GridLayout>>,
    plus_action: bool,
    workers: Vec<Vec<Worker>>,
    optim: Optimizer,
    update_idx: u64,
    returns: Vec<VecDeque<f64>>,
    next_reset: Vec<u64>,
    update_rng: ChaCha8Rng,
    reset_rng: ChaCha8Rng,
    last_checkpoint: Option<PathBuf>,
}

impl Trainer {
    /// Builds a fresh trainer: new parameters, posteriors initialized from
    /// the fresh prior.
    #[allow(clippy::too_many_arguments)]
    pub fn fresh(
        tasks: Vec<TaskSpec>,
        layout: Option<Arc<GridLayout>>,
        arch: ArchConfig,
        alpha: f64,
        plus_action: bool,
        mode: PolicyMode,
        objective: ObjectiveConfig,
        cfg: TrainerConfig,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(cfg.seed, STREAM_INIT);
        let enc = Encoder::register(&mut store, &arch, &mut rng)?;
        let prior = SharedPrior::register(&mut store, &arch, alpha, &mut rng)?;
        let mut posteriors = Vec::with_capacity(tasks.len());
        for i in 0..tasks.len() {
            let post = PosteriorPolicy::register(&mut store, &arch, i, &mut rng)?;
            init_posterior_from_prior(&mut store, &arch, &prior, &post, &mut rng)?;
            posteriors.push(post);
        }
        Self::from_parts(
            store, enc, prior, posteriors, tasks, layout, plus_action, mode, objective, cfg,
        )
    }

    /// Builds a trainer over an existing parameter store (transfer phases
    /// load and freeze shared tensors before calling this).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        store: ParamStore,
        enc: Encoder,
        prior: SharedPrior,
        posteriors: Vec<PosteriorPolicy>,
        tasks: Vec<TaskSpec>,
        layout: Option<Arc<GridLayout>>,
        plus_action: bool,
        mode: PolicyMode,
        objective: ObjectiveConfig,
        cfg: TrainerConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        mode.validate(enc.arch())?;
        if tasks.len() != posteriors.len() {
            return Err(Error::config(format!(
                "{} tasks but {} posteriors",
                tasks.len(),
                posteriors.len()
            )));
        }
        let mut workers = Vec::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            let mut task_workers = Vec::with_capacity(cfg.envs_per_task);
            for e in 0..cfg.envs_per_task {
                let mut env = TaskEnv::new(task.clone(), layout.clone(), plus_action)?;
                let stream = STREAM_WORKER_BASE + (i * cfg.envs_per_task + e) as u64;
                let mut rng = stream_rng(cfg.seed, stream);
                let obs = env.reset(ResetMode::Train, &mut rng);
                if obs.len() != enc.arch().obs_dim {
                    return Err(Error::config(format!(
                        "environment produces {}-dim observations, architecture expects {}",
                        obs.len(),
                        enc.arch().obs_dim
                    )));
                }
                task_workers.push(Worker {
                    env,
                    rng,
                    obs,
                    z_prev: None,
                    episode_return: 0.0,
                    steps_taken: 0,
                });
            }
            workers.push(task_workers);
        }
        let optim = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.max_grad_norm);
        let n = tasks.len().max(1) as u64;
        let next_reset: Vec<u64> = match cfg.reset_period {
            Some(period) => (0..tasks.len() as u64)
                .map(|i| period + (i * period) / n)
                .collect(),
            None => vec![u64::MAX; tasks.len()],
        };
        let returns = vec![VecDeque::new(); tasks.len()];
        Ok(Trainer {
            update_rng: stream_rng(cfg.seed, STREAM_UPDATE),
            reset_rng: stream_rng(cfg.seed, STREAM_RESET),
            store,
            enc,
            prior,
            posteriors,
            mode,
            objective,
            cfg,
            tasks,
            layout,
            plus_action,
            workers,
            optim,
            update_idx: 0,
            returns,
            next_reset,
            last_checkpoint: None,
        })
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn layout(&self) -> Option<&Arc<GridLayout>> {
        self.layout.as_ref()
    }

    pub fn frames_per_task(&self) -> u64 {
        self.update_idx * self.cfg.frames_per_update()
    }

    /// Total environment steps executed across all workers of all tasks.
    pub fn total_env_steps(&self) -> u64 {
        self.workers
            .iter()
            .flat_map(|ws| ws.iter().map(|w| w.steps_taken))
            .sum()
    }

    fn bootstrap_value(&self, task: usize, obs: &[f64], z_prev: Option<usize>) -> Result<f64> {
        let arch = self.enc.arch();
        let cond = z_prev.unwrap_or_else(|| arch.sentinel());
        let mut fc = Features::new(&self.enc, &self.store, obs)?;
        Ok(self.posteriors[task].value.forward(&self.store, fc.latent(cond)?)?[0])
    }

    /// Collects one on-policy segment from every worker of every task.
    pub fn collect_segment(&mut self) -> Result<Vec<Trajectory>> {
        let n_s = self.cfg.segment_len;
        let mut batch = Vec::with_capacity(self.tasks.len() * self.cfg.envs_per_task);
        for task in 0..self.tasks.len() {
            for env_idx in 0..self.cfg.envs_per_task {
                let mut steps = Vec::with_capacity(n_s);
                {
                    let worker = &mut self.workers[task][env_idx];
                    for _ in 0..n_s {
                        let decision = act(
                            &self.store,
                            &self.enc,
                            &self.posteriors[task],
                            &self.prior,
                            self.mode,
                            &worker.obs,
                            worker.z_prev,
                            worker.z_prev.is_none(),
                            &mut worker.rng,
                        )?;
                        let (next_obs, reward, done) = worker.env.step(decision.action)?;
                        worker.steps_taken += 1;
                        worker.episode_return += reward;
                        steps.push(TrajStep {
                            obs: std::mem::take(&mut worker.obs),
                            decision,
                            reward,
                            done,
                        });
                        if done {
                            self.returns[task].push_back(worker.episode_return);
                            if self.returns[task].len() > self.cfg.return_window {
                                self.returns[task].pop_front();
                            }
                            worker.episode_return = 0.0;
                            worker.obs = worker.env.reset(ResetMode::Train, &mut worker.rng);
                            worker.z_prev = None;
                        } else {
                            worker.obs = next_obs;
                            worker.z_prev = Some(decision.option);
                        }
                    }
                }
                let (obs, z_prev, ended) = {
                    let w = &self.workers[task][env_idx];
                    (w.obs.clone(), w.z_prev, steps.last().unwrap().done)
                };
                let bootstrap_value = if ended {
                    0.0
                } else {
                    self.bootstrap_value(task, &obs, z_prev)?
                };
                let traj = Trajectory {
                    task_index: task,
                    steps,
                    bootstrap_value,
                };
                debug_assert!(traj.check_chaining());
                batch.push(traj);
            }
        }
        // every worker must contribute exactly n_s fresh frames
        if batch.iter().any(|t| t.len() != n_s) {
            return Err(Error::numeric("worker desync: segment lengths differ"));
        }
        Ok(batch)
    }

    /// Re-initializes one task's posterior from the current prior, restarts
    /// its episodes and clears its optimizer moments.
    pub fn task_reset(&mut self, task: usize) -> Result<()> {
        let arch = self.enc.arch().clone();
        init_posterior_from_prior(
            &mut self.store,
            &arch,
            &self.prior,
            &self.posteriors[task],
            &mut self.reset_rng,
        )?;
        for id in self.posteriors[task].tensor_ids() {
            self.optim.reset_tensor(id);
        }
        for worker in self.workers[task].iter_mut() {
            worker.obs = worker.env.reset(ResetMode::Train, &mut worker.rng);
            worker.z_prev = None;
            worker.episode_return = 0.0;
        }
        self.returns[task].clear();
        Ok(())
    }

    fn windowed_returns(&self) -> (Vec<Option<f64>>, Option<f64>) {
        let per_task: Vec<Option<f64>> = self
            .returns
            .iter()
            .map(|w| {
                if w.is_empty() {
                    None
                } else {
                    Some(w.iter().sum::<f64>() / w.len() as f64)
                }
            })
            .collect();
        let known: Vec<f64> = per_task.iter().flatten().copied().collect();
        let mean = if known.is_empty() {
            None
        } else {
            Some(known.iter().sum::<f64>() / known.len() as f64)
        };
        (per_task, mean)
    }

    fn write_checkpoint(&mut self, tag: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = self.cfg.checkpoint_dir.clone() else {
            return Ok(None);
        };
        let path = dir.join(format!("checkpoint_{tag}.json"));
        let meta = checkpoint_meta(self.enc.arch(), self.prior.alpha, self.tasks.len());
        Checkpoint::capture(&self.store, meta)?.save(&path)?;
        self.last_checkpoint = Some(path.clone());
        Ok(Some(path))
    }

    /// One collect + update cycle. Returns the metrics record.
    pub fn step(&mut self) -> Result<MetricsRecord> {
        let frames = self.frames_per_task();
        let beta = self.cfg.beta.eval(frames);
        let lambda_h = self.cfg.lambda_h.eval(frames);
        let batch = self.collect_segment()?;
        let losses = combined_update(
            &mut self.store,
            &self.enc,
            &self.prior,
            &self.posteriors,
            self.mode,
            &self.objective,
            beta,
            lambda_h,
            &batch,
            &mut self.optim,
            &mut self.update_rng,
        )?;
        self.update_idx += 1;

        if let Some(period) = self.cfg.reset_period {
            for task in 0..self.tasks.len() {
                if self.update_idx >= self.next_reset[task] {
                    self.task_reset(task)?;
                    self.next_reset[task] += period;
                }
            }
        }

        let (task_returns, mean_return) = self.windowed_returns();
        Ok(MetricsRecord {
            update: self.update_idx,
            frames_per_task: self.frames_per_task(),
            beta,
            lambda_h,
            losses,
            task_returns,
            mean_return,
            eval_return: None,
            eval_success: None,
        })
    }

    /// Runs the full loop until the frame budget is reached. On a numeric
    /// failure the error names the last checkpoint that was retained.
    pub fn train(&mut self) -> Result<TrainOutcome> {
        let total_updates = self.cfg.total_updates();
        let ckpt_every = self
            .cfg
            .checkpoint_every_frac
            .map(|f| ((total_updates as f64 * f).ceil() as u64).max(1));
        let mut records = Vec::with_capacity(total_updates as usize);
        while self.update_idx < total_updates {
            let mut record = match self.step() {
                Ok(r) => r,
                Err(Error::Numeric(msg)) => {
                    let kept = self
                        .last_checkpoint
                        .as_ref()
                        .map(|p| format!("; last good checkpoint: {}", p.display()))
                        .unwrap_or_default();
                    return Err(Error::numeric(format!("{msg}{kept}")));
                }
                Err(e) => return Err(e),
            };
            if let Some(every) = self.cfg.eval_every_updates {
                if self.update_idx % every == 0 || self.update_idx == total_updates {
                    let (ret, success) = self.evaluate()?;
                    record.eval_return = Some(ret);
                    record.eval_success = Some(success);
                }
            }
            if let Some(every) = ckpt_every {
                if self.update_idx % every == 0 {
                    self.write_checkpoint(&format!("{:09}", self.frames_per_task()))?;
                }
            }
            records.push(record);
        }
        let final_checkpoint = self.write_checkpoint("final")?;
        Ok(TrainOutcome {
            metrics: records,
            final_checkpoint,
            frames_per_task: self.frames_per_task(),
        })
    }

    /// Greedy test-mode evaluation over all tasks; returns (mean return,
    /// success rate).
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let mut rng = stream_rng(self.cfg.seed, STREAM_EVAL + 10 + self.update_idx);
        let stats = crate::transfer::evaluate_all_tasks(
            &self.store,
            &self.enc,
            &self.posteriors,
            &self.tasks,
            self.layout.clone(),
            self.plus_action,
            self.mode,
            self.cfg.eval_episodes_per_task,
            true,
            &mut rng,
        )?;
        Ok((stats.mean_return, stats.success_rate))
    }
}

pub fn checkpoint_meta(arch: &ArchConfig, alpha: f64, task_count: usize) -> serde_json::Value {
    serde_json::json!({
        "kind": "soft-options-policy",
        "arch": arch,
        "alpha": alpha,
        "task_count": task_count,
        "heads": {
            "shared": ["enc.trunk", "enc.emb", "enc.fuse", "prior.intra", "prior.term"],
            "per_task": ["master", "intra", "term", "value"],
            "option_count": arch.option_count,
        },
    })
}

#[cfg(test)]
pub(crate) mod tests;
