//! Test-time protocols: freeze a trained prior, train fresh posteriors on
//! held-out or changed tasks, and run the comparison matrix of variants.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{bandits, enumerate_tasks, EnvFamily, GridLayout, ResetMode, TaskEnv, TaskSpec};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::store::ParamStore;
use crate::objective::ObjectiveConfig;
use crate::policy::{
    act_greedy, init_posterior_from_prior, is_shared_tensor, prior_option_action,
    shared_tensor_names, ArchConfig, Encoder, Features, PolicyMode, PosteriorPolicy, SharedPrior,
    TermPrior,
};
use crate::trainer::{stream_rng, MetricsRecord, TrainOutcome, Trainer, TrainerConfig};
use crate::{Error, Result};

/// Transfer variants compared throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// All posterior heads trainable, regularized towards the frozen prior.
    Msol,
    /// Intra-option and termination heads pinned to the prior; only the
    /// master and value heads train.
    MsolFrozen,
    /// One-option degenerate hierarchy with a distilled action prior.
    Distral,
    /// Same, with the last primitive action appended to the observation.
    DistralPlusAction,
    /// Single-level policy trained from scratch, no prior, beta = 0.
    Flat,
    /// Frozen options plus each primitive action as an always-terminating
    /// extra choice for the master.
    HardWithPrimitives,
}

impl Variant {
    pub fn needs_prior(self) -> bool {
        !matches!(self, Variant::Flat)
    }

    pub fn distral_mode(self) -> bool {
        matches!(
            self,
            Variant::Distral | Variant::DistralPlusAction | Variant::Flat
        )
    }

    pub fn plus_action(self) -> bool {
        matches!(self, Variant::DistralPlusAction)
    }

    /// Option heads pinned to the prior at transfer time.
    pub fn freezes_option_heads(self) -> bool {
        matches!(self, Variant::MsolFrozen | Variant::HardWithPrimitives)
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "msol" => Ok(Variant::Msol),
            "msol-frozen" => Ok(Variant::MsolFrozen),
            "distral" => Ok(Variant::Distral),
            "distral-plus-action" => Ok(Variant::DistralPlusAction),
            "flat" => Ok(Variant::Flat),
            "hard-with-primitives" => Ok(Variant::HardWithPrimitives),
            other => Err(Error::config(format!(
                "unknown variant `{other}` (known: msol, msol-frozen, distral, \
                 distral-plus-action, flat, hard-with-primitives)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Msol => "msol",
            Variant::MsolFrozen => "msol-frozen",
            Variant::Distral => "distral",
            Variant::DistralPlusAction => "distral-plus-action",
            Variant::Flat => "flat",
            Variant::HardWithPrimitives => "hard-with-primitives",
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_return: f64,
    pub success_rate: f64,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateEval {
    pub mean_return: f64,
    pub success_rate: f64,
    pub per_task: Vec<EvalStats>,
}

/// Samples one hierarchy step from the posterior alone (evaluation path).
#[allow(clippy::too_many_arguments)]
fn sample_step(
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    mode: PolicyMode,
    obs: &[f64],
    z_prev: Option<usize>,
    episode_start: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    use crate::nn::heads::{sample_bernoulli, sample_categorical, sigmoid};
    let arch = enc.arch();
    let cond_prev = z_prev.unwrap_or_else(|| arch.sentinel());
    let mut fc = Features::new(enc, store, obs)?;
    let forced = episode_start || arch.is_primitive(cond_prev);
    let terminate = if mode.distral {
        episode_start
    } else if forced {
        true
    } else {
        let tl = posterior.term.forward(store, fc.latent(cond_prev)?)?[0];
        sample_bernoulli(sigmoid(tl), rng)
    };
    let option = if mode.distral {
        0
    } else if terminate {
        let logits = posterior.master.forward(store, fc.latent(arch.sentinel())?)?;
        sample_categorical(&logits, rng)
    } else {
        cond_prev
    };
    let action = if arch.is_primitive(option) {
        option - arch.option_count
    } else {
        let logits = posterior.intra.forward(store, fc.latent(option)?)?;
        sample_categorical(&logits, rng)
    };
    Ok((option, action))
}

/// Rolls out full test-mode episodes with no learning. Success means a
/// delivery for the taxi families and at least one reward for Moving Bandits.
/// Zero episodes yield an empty result.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy(
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    task: &TaskSpec,
    layout: Option<Arc<GridLayout>>,
    plus_action: bool,
    mode: PolicyMode,
    episodes: usize,
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EvalStats> {
    let mut env = TaskEnv::new(task.clone(), layout, plus_action)?;
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for _ in 0..episodes {
        let mut obs = env.reset(ResetMode::Test, rng);
        let mut z_prev: Option<usize> = None;
        let mut total = 0.0;
        let mut success = false;
        loop {
            let (option, action) = if greedy {
                let (_b, z, a) =
                    act_greedy(store, enc, posterior, mode, &obs, z_prev, z_prev.is_none())?;
                (z, a)
            } else {
                sample_step(store, enc, posterior, mode, &obs, z_prev, z_prev.is_none(), rng)?
            };
            let (next_obs, reward, done) = env.step(action)?;
            total += reward;
            match task.family {
                EnvFamily::MovingBandits => {
                    if total >= 1.0 {
                        success = true;
                    }
                }
                _ => {
                    if reward > 1.0 {
                        success = true;
                    }
                }
            }
            if done {
                break;
            }
            obs = next_obs;
            z_prev = Some(option);
        }
        returns.push(total);
        if success {
            successes += 1;
        }
    }
    let mean_return = if returns.is_empty() {
        0.0
    } else {
        returns.iter().sum::<f64>() / returns.len() as f64
    };
    let success_rate = if returns.is_empty() {
        0.0
    } else {
        successes as f64 / returns.len() as f64
    };
    Ok(EvalStats {
        mean_return,
        success_rate,
        returns,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_all_tasks(
    store: &ParamStore,
    enc: &Encoder,
    posteriors: &[PosteriorPolicy],
    tasks: &[TaskSpec],
    layout: Option<Arc<GridLayout>>,
    plus_action: bool,
    mode: PolicyMode,
    episodes_per_task: usize,
    greedy: bool,
    rng: &mut ChaCha8Rng,
) -> Result<AggregateEval> {
    let mut per_task = Vec::with_capacity(tasks.len());
    for (task, posterior) in tasks.iter().zip(posteriors.iter()) {
        per_task.push(evaluate_policy(
            store,
            enc,
            posterior,
            task,
            layout.clone(),
            plus_action,
            mode,
            episodes_per_task,
            greedy,
            rng,
        )?);
    }
    let all: Vec<f64> = per_task
        .iter()
        .flat_map(|s| s.returns.iter().copied())
        .collect();
    let mean_return = if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };
    let success_rate = if per_task.is_empty() {
        0.0
    } else {
        per_task.iter().map(|s| s.success_rate).sum::<f64>() / per_task.len() as f64
    };
    Ok(AggregateEval {
        mean_return,
        success_rate,
        per_task,
    })
}

// ---------------------------------------------------------------------------
// Transfer training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub frames: u64,
    pub mean_return: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub variant: Variant,
    pub curve: Vec<CurvePoint>,
    pub outcome: TrainOutcome,
    /// Digest of the shared (prior + encoder) tensors before/after training;
    /// equal for every prior-carrying variant.
    pub prior_digest_before: u64,
    pub prior_digest_after: u64,
    pub final_eval: AggregateEval,
}

fn arch_from_meta(meta: &serde_json::Value) -> Result<ArchConfig> {
    serde_json::from_value(meta["arch"].clone())
        .map_err(|e| Error::config(format!("checkpoint carries no usable architecture: {e}")))
}

fn alpha_from_meta(meta: &serde_json::Value) -> Result<f64> {
    meta["alpha"]
        .as_f64()
        .ok_or_else(|| Error::config("checkpoint carries no alpha"))
}

/// Extends a trained embedding table with rows for primitive pseudo-options:
/// learned option rows keep their values, the trained sentinel row moves to
/// the new sentinel index, and the primitive rows keep fresh fixed features.
fn adapt_embedding_for_primitives(
    ckpt: &Checkpoint,
    old_arch: &ArchConfig,
    new_arch: &ArchConfig,
    store: &mut ParamStore,
) -> Result<()> {
    let rec = ckpt
        .tensors
        .get("enc.emb.w")
        .ok_or_else(|| Error::config("checkpoint is missing enc.emb.w"))?;
    let dim = new_arch.option_embed_dim;
    let id = store.id("enc.emb.w")?;
    let m = old_arch.option_count;
    let t = store.tensor_mut(id);
    t.data[..m * dim].copy_from_slice(&rec.data[..m * dim]);
    let new_sentinel = new_arch.sentinel();
    t.data[new_sentinel * dim..(new_sentinel + 1) * dim]
        .copy_from_slice(&rec.data[m * dim..(m + 1) * dim]);
    Ok(())
}

/// Builds fresh posteriors on top of a frozen prior checkpoint and trains
/// them on the given tasks. The shared parameters never move: the prior loss
/// is masked and the shared tensors are excluded from the optimizer.
#[allow(clippy::too_many_arguments)]
pub fn transfer_train(
    checkpoint: Option<&Checkpoint>,
    variant: Variant,
    tasks: Vec<TaskSpec>,
    layout: Option<Arc<GridLayout>>,
    fallback_arch: &ArchConfig,
    fallback_alpha: f64,
    mut objective: ObjectiveConfig,
    mut cfg: TrainerConfig,
) -> Result<TransferResult> {
    if variant.needs_prior() && checkpoint.is_none() {
        return Err(Error::usage(format!(
            "variant `{}` transfers a trained prior but no checkpoint was given",
            variant.name()
        )));
    }

    let (mut arch, alpha) = match checkpoint {
        Some(ck) => (arch_from_meta(&ck.meta)?, alpha_from_meta(&ck.meta)?),
        None => (fallback_arch.clone(), fallback_alpha),
    };
    let old_arch = arch.clone();
    if variant == Variant::HardWithPrimitives {
        arch.primitive_options = true;
    }
    if variant.distral_mode() && arch.option_count != 1 {
        return Err(Error::config(format!(
            "variant `{}` needs a one-option prior, checkpoint has {} options",
            variant.name(),
            arch.option_count
        )));
    }
    if variant == Variant::Flat {
        cfg.beta = crate::objective::Schedule::constant(0.0);
    }
    objective.lambda_p = 0.0;

    let mode = PolicyMode {
        term_prior: TermPrior::Learned,
        distral: variant.distral_mode(),
    };

    // fresh store; shared tensors loaded from the checkpoint and frozen
    let mut store = ParamStore::new();
    let mut rng = stream_rng(cfg.seed, 4);
    let enc = Encoder::register(&mut store, &arch, &mut rng)?;
    let prior = SharedPrior::register(&mut store, &arch, alpha, &mut rng)?;
    if let Some(ck) = checkpoint {
        if variant == Variant::HardWithPrimitives {
            ck.install(&mut store, |name| {
                is_shared_tensor(name) && name != "enc.emb.w"
            })?;
            adapt_embedding_for_primitives(ck, &old_arch, &arch, &mut store)?;
        } else {
            ck.install(&mut store, is_shared_tensor)?;
        }
        for id in store.ids().collect::<Vec<_>>() {
            if is_shared_tensor(store.tensor(id).name()) {
                store.tensor_mut(id).trainable = false;
            }
        }
    }

    let mut posteriors = Vec::with_capacity(tasks.len());
    for i in 0..tasks.len() {
        let post = PosteriorPolicy::register(&mut store, &arch, i, &mut rng)?;
        init_posterior_from_prior(&mut store, &arch, &prior, &post, &mut rng)?;
        if variant.freezes_option_heads() {
            for id in post.intra.tensor_ids().chain(post.term.tensor_ids()) {
                store.tensor_mut(id).trainable = false;
            }
        }
        posteriors.push(post);
    }

    let shared_names = shared_tensor_names(&store);
    let prior_digest_before = store.digest(&shared_names);

    let plus_action = variant.plus_action();
    let mut trainer = Trainer::from_parts(
        store, enc, prior, posteriors, tasks, layout, plus_action, mode, objective, cfg,
    )?;
    let outcome = trainer.train()?;
    let prior_digest_after = trainer.store.digest(&shared_names);

    let curve = curve_from_metrics(&outcome.metrics);
    let mut eval_rng = stream_rng(trainer.cfg.seed, crate::trainer::STREAM_EVAL);
    let final_eval = evaluate_all_tasks(
        &trainer.store,
        &trainer.enc,
        &trainer.posteriors,
        trainer.tasks(),
        trainer.layout().cloned(),
        plus_action,
        mode,
        trainer.cfg.eval_episodes_per_task.max(10),
        true,
        &mut eval_rng,
    )?;
    Ok(TransferResult {
        variant,
        curve,
        outcome,
        prior_digest_before,
        prior_digest_after,
        final_eval,
    })
}

pub fn curve_from_metrics(metrics: &[MetricsRecord]) -> Vec<CurvePoint> {
    metrics
        .iter()
        .filter_map(|m| {
            m.eval_return.map(|ret| CurvePoint {
                frames: m.frames_per_task,
                mean_return: ret,
                success_rate: m.eval_success.unwrap_or(0.0),
            })
        })
        .collect()
}

/// Trapezoidal area under a learning curve, in return x frames.
pub fn area_under_curve(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let dx = (w[1].frames - w[0].frames) as f64;
            0.5 * (w[0].mean_return + w[1].mean_return) * dx
        })
        .sum()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Option diversity (Moving Bandits)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiversityReport {
    /// Per option: (majority goal slot if any rollout reached one, fraction
    /// of rollouts ending at that slot).
    pub majorities: Vec<(Option<usize>, f64)>,
    /// Distinct majority slots, each with at least the required fraction.
    pub bijective: bool,
}

/// Greedily rolls out each option prior on fresh Moving Bandits episodes and
/// reports which goal slot each option reaches. Diverse options yield a
/// bijection between options and goal slots.
pub fn bandits_option_diversity(
    store: &ParamStore,
    enc: &Encoder,
    prior: &SharedPrior,
    rollouts: usize,
    majority_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DiversityReport> {
    let m = enc.arch().option_count;
    let task = TaskSpec {
        family: EnvFamily::MovingBandits,
        layout_id: String::new(),
        detail: crate::envs::TaskDetail::Bandits(bandits::BanditsTask { goal_index: 0 }),
    };
    let mut majorities = Vec::with_capacity(m);
    for option in 0..m {
        let mut reached: Vec<Option<usize>> = Vec::with_capacity(rollouts);
        for _ in 0..rollouts {
            let mut env = TaskEnv::new(task.clone(), None, false)?;
            let mut obs = env.reset(ResetMode::Test, rng);
            let mut slot: Option<usize> = None;
            loop {
                let action = prior_option_action(store, enc, prior, &obs, option)?;
                let (next_obs, _r, done) = env.step(action)?;
                let state = env.bandits_state().unwrap();
                for (i, goal) in state.goals.iter().enumerate() {
                    let d = ((state.agent.0 - goal.0).powi(2)
                        + (state.agent.1 - goal.1).powi(2))
                    .sqrt();
                    if d < bandits::PROXIMITY_THRESHOLD {
                        slot = Some(i);
                    }
                }
                if slot.is_some() || done {
                    break;
                }
                obs = next_obs;
            }
            reached.push(slot);
        }
        let mut counts = BTreeMap::new();
        for s in reached.iter().flatten() {
            *counts.entry(*s).or_insert(0usize) += 1;
        }
        match counts.iter().max_by_key(|(_, &c)| c) {
            Some((&slot, &c)) => majorities.push((Some(slot), c as f64 / rollouts as f64)),
            None => majorities.push((None, 0.0)),
        }
    }
    let slots: Vec<usize> = majorities.iter().filter_map(|(s, _)| *s).collect();
    let distinct = {
        let mut sorted = slots.clone();
        sorted.sort_unstable();
        sorted.dedup();
        sorted.len() == m
    };
    let bijective = slots.len() == m
        && distinct
        && majorities.iter().all(|(_, frac)| *frac >= majority_threshold);
    Ok(DiversityReport {
        majorities,
        bijective,
    })
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    BanditsTransfer,
    TaxiTransfer,
    DirTaxiTransfer,
    TaxiGeneralization,
    TaxiAdaptation,
    TaxiAdaptation8x8,
    TaxiAdaptation10x10,
}

impl Protocol {
    pub fn parse(s: &str) -> Result<Protocol> {
        match s {
            "bandits-transfer" => Ok(Protocol::BanditsTransfer),
            "taxi-transfer" => Ok(Protocol::TaxiTransfer),
            "dir-taxi-transfer" => Ok(Protocol::DirTaxiTransfer),
            "taxi-generalization" => Ok(Protocol::TaxiGeneralization),
            "taxi-adaptation" => Ok(Protocol::TaxiAdaptation),
            "taxi-adaptation-8x8" => Ok(Protocol::TaxiAdaptation8x8),
            "taxi-adaptation-10x10" => Ok(Protocol::TaxiAdaptation10x10),
            other => Err(Error::config(format!(
                "unknown protocol `{other}` (known: bandits-transfer, taxi-transfer, \
                 dir-taxi-transfer, taxi-generalization, taxi-adaptation, \
                 taxi-adaptation-8x8, taxi-adaptation-10x10)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::BanditsTransfer => "bandits-transfer",
            Protocol::TaxiTransfer => "taxi-transfer",
            Protocol::DirTaxiTransfer => "dir-taxi-transfer",
            Protocol::TaxiGeneralization => "taxi-generalization",
            Protocol::TaxiAdaptation => "taxi-adaptation",
            Protocol::TaxiAdaptation8x8 => "taxi-adaptation-8x8",
            Protocol::TaxiAdaptation10x10 => "taxi-adaptation-10x10",
        }
    }

    pub fn family(self) -> EnvFamily {
        match self {
            Protocol::BanditsTransfer => EnvFamily::MovingBandits,
            Protocol::DirTaxiTransfer => EnvFamily::DirectionalTaxi,
            _ => EnvFamily::Taxi,
        }
    }

    pub fn default_layout_id(self) -> Option<&'static str> {
        match self {
            Protocol::BanditsTransfer => None,
            Protocol::TaxiAdaptation8x8 => Some("open8x8"),
            Protocol::TaxiAdaptation10x10 => Some("open10x10"),
            _ => Some("taxi30"),
        }
    }
}

/// Fully resolved task sets for one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolTasks {
    pub train_tasks: Vec<TaskSpec>,
    pub train_layout: Option<Arc<GridLayout>>,
    pub transfer_tasks: Vec<TaskSpec>,
    pub transfer_layout: Option<Arc<GridLayout>>,
}

/// Resolves a protocol's train/transfer task split.
///
/// - transfer protocols train on the full task set and transfer to fresh
///   instances of it;
/// - generalization holds out four tasks covering every special cell;
/// - adaptation transfers to the layout with every special cell moved by one.
pub fn protocol_tasks(
    protocol: Protocol,
    layout_ref: Option<&str>,
    bandits_train_tasks: usize,
    bandits_transfer_tasks: usize,
) -> Result<ProtocolTasks> {
    let resolve_layout = |fallback: &str| -> Result<Arc<GridLayout>> {
        Ok(Arc::new(GridLayout::resolve(layout_ref.unwrap_or(fallback))?))
    };
    match protocol {
        Protocol::BanditsTransfer => {
            let base = enumerate_tasks(EnvFamily::MovingBandits, None)?;
            let cycle = |n: usize| -> Vec<TaskSpec> {
                (0..n).map(|i| base[i % base.len()].clone()).collect()
            };
            Ok(ProtocolTasks {
                train_tasks: cycle(bandits_train_tasks),
                train_layout: None,
                transfer_tasks: cycle(bandits_transfer_tasks),
                transfer_layout: None,
            })
        }
        Protocol::TaxiTransfer | Protocol::DirTaxiTransfer => {
            let layout = resolve_layout(protocol.default_layout_id().unwrap())?;
            let tasks = enumerate_tasks(protocol.family(), Some(&layout))?;
            Ok(ProtocolTasks {
                train_tasks: tasks.clone(),
                train_layout: Some(layout.clone()),
                transfer_tasks: tasks,
                transfer_layout: Some(layout),
            })
        }
        Protocol::TaxiGeneralization => {
            let layout = resolve_layout(protocol.default_layout_id().unwrap())?;
            let tasks = enumerate_tasks(EnvFamily::Taxi, Some(&layout))?;
            // four held-out tasks covering every special cell once
            let held_out = [(0usize, 1usize), (1, 2), (2, 3), (3, 0)];
            let is_held_out = |t: &TaskSpec| match &t.detail {
                crate::envs::TaskDetail::Taxi(tt) => held_out.contains(&(tt.pickup, tt.dropoff)),
                _ => false,
            };
            let train_tasks: Vec<TaskSpec> =
                tasks.iter().filter(|t| !is_held_out(t)).cloned().collect();
            let transfer_tasks: Vec<TaskSpec> =
                tasks.iter().filter(|t| is_held_out(t)).cloned().collect();
            Ok(ProtocolTasks {
                train_tasks,
                train_layout: Some(layout.clone()),
                transfer_tasks,
                transfer_layout: Some(layout),
            })
        }
        Protocol::TaxiAdaptation | Protocol::TaxiAdaptation8x8 | Protocol::TaxiAdaptation10x10 => {
            let layout = resolve_layout(protocol.default_layout_id().unwrap())?;
            let shifted = Arc::new(layout.shifted()?);
            let train_tasks = enumerate_tasks(EnvFamily::Taxi, Some(&layout))?;
            let transfer_tasks = enumerate_tasks(EnvFamily::Taxi, Some(&shifted))?;
            Ok(ProtocolTasks {
                train_tasks,
                train_layout: Some(layout),
                transfer_tasks,
                transfer_layout: Some(shifted),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

/// One full protocol run: training phases (shared where possible) and
/// transfer phases per variant and seed.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub protocol: Protocol,
    pub tasks: ProtocolTasks,
    /// Architecture with placeholder observation/action dimensions; resolved
    /// per phase from a probe environment.
    pub arch_template: ArchConfig,
    pub alpha: f64,
    pub train_objective: ObjectiveConfig,
    pub train_cfg: TrainerConfig,
    pub transfer_objective: ObjectiveConfig,
    pub transfer_cfg: TrainerConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantCurves {
    pub variant: String,
    pub protocol: String,
    pub frames: Vec<u64>,
    /// One learning curve per seed, aligned with `frames`.
    pub per_seed: Vec<Vec<f64>>,
    pub median: Vec<f64>,
    pub std: Vec<f64>,
}

impl VariantCurves {
    pub fn from_curves(protocol: &str, variant: &str, curves: &[Vec<CurvePoint>]) -> Self {
        let frames: Vec<u64> = curves
            .first()
            .map(|c| c.iter().map(|p| p.frames).collect())
            .unwrap_or_default();
        let per_seed: Vec<Vec<f64>> = curves
            .iter()
            .map(|c| c.iter().map(|p| p.mean_return).collect())
            .collect();
        let mut medians = Vec::with_capacity(frames.len());
        let mut stds = Vec::with_capacity(frames.len());
        for i in 0..frames.len() {
            let mut column: Vec<f64> =
                per_seed.iter().filter_map(|c| c.get(i).copied()).collect();
            let n = column.len() as f64;
            let mean = column.iter().sum::<f64>() / n.max(1.0);
            let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1.0);
            stds.push(var.sqrt());
            medians.push(median(&mut column));
        }
        VariantCurves {
            variant: variant.to_string(),
            protocol: protocol.to_string(),
            frames,
            per_seed,
            median: medians,
            std: stds,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("curve serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("invalid curve file {}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub protocol: Protocol,
    pub curves: Vec<VariantCurves>,
    /// Per variant, per seed transfer results.
    pub runs: Vec<(Variant, Vec<TransferResult>)>,
    /// Per seed diversity reports after the soft-option training phase
    /// (Moving Bandits only).
    pub diversity: Vec<DiversityReport>,
    /// Per seed soft-option prior checkpoints from the training phase.
    pub priors: Vec<Checkpoint>,
}

/// Runs the full comparison matrix for one protocol: for each seed, trains
/// the priors each variant family needs, then transfer-trains every variant
/// on the evaluation tasks.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    let mut runs: Vec<(Variant, Vec<TransferResult>)> =
        plan.variants.iter().map(|&v| (v, Vec::new())).collect();
    let mut diversity = Vec::new();
    let mut priors = Vec::new();

    let needs_soft_prior = plan
        .variants
        .iter()
        .any(|v| v.needs_prior() && !v.distral_mode());
    let distral_prior_kinds: Vec<bool> = [false, true]
        .into_iter()
        .filter(|&plus| {
            plan.variants
                .iter()
                .any(|v| v.needs_prior() && v.distral_mode() && v.plus_action() == plus)
        })
        .collect();

    for (i, &seed) in plan.seeds.iter().enumerate() {
        log::info!(
            "protocol {} seed {seed} ({} of {})",
            plan.protocol.name(),
            i + 1,
            plan.seeds.len()
        );
        let soft_prior: Option<Checkpoint> = if needs_soft_prior {
            let mut cfg = plan.train_cfg.clone();
            cfg.seed = seed;
            let mut trainer = Trainer::fresh(
                plan.tasks.train_tasks.clone(),
                plan.tasks.train_layout.clone(),
                resolve_arch(&plan.arch_template, &plan.tasks, false)?,
                plan.alpha,
                false,
                PolicyMode::training(),
                plan.train_objective,
                cfg,
            )?;
            trainer.train()?;
            if plan.protocol == Protocol::BanditsTransfer {
                let mut rng = stream_rng(seed, 77);
                diversity.push(bandits_option_diversity(
                    &trainer.store,
                    &trainer.enc,
                    &trainer.prior,
                    100,
                    0.9,
                    &mut rng,
                )?);
            }
            let meta = crate::trainer::checkpoint_meta(
                trainer.enc.arch(),
                plan.alpha,
                plan.tasks.train_tasks.len(),
            );
            let ckpt = Checkpoint::capture(&trainer.store, meta)?;
            priors.push(ckpt.clone());
            Some(ckpt)
        } else {
            None
        };

        let mut distral_priors: BTreeMap<bool, Checkpoint> = BTreeMap::new();
        for &plus in &distral_prior_kinds {
            let mut cfg = plan.train_cfg.clone();
            cfg.seed = seed;
            let mut arch = resolve_arch(&plan.arch_template, &plan.tasks, plus)?;
            arch.option_count = 1;
            let mode = PolicyMode {
                term_prior: TermPrior::FixedBernoulli,
                distral: true,
            };
            let mut trainer = Trainer::fresh(
                plan.tasks.train_tasks.clone(),
                plan.tasks.train_layout.clone(),
                arch,
                plan.alpha,
                plus,
                mode,
                plan.train_objective,
                cfg,
            )?;
            trainer.train()?;
            let meta = crate::trainer::checkpoint_meta(
                trainer.enc.arch(),
                plan.alpha,
                plan.tasks.train_tasks.len(),
            );
            distral_priors.insert(plus, Checkpoint::capture(&trainer.store, meta)?);
        }

        for (variant, results) in runs.iter_mut() {
            let ckpt = if !variant.needs_prior() {
                None
            } else if variant.distral_mode() {
                distral_priors.get(&variant.plus_action())
            } else {
                soft_prior.as_ref()
            };
            let mut cfg = plan.transfer_cfg.clone();
            cfg.seed = seed ^ 0x5f5f_5f5f;
            let mut flat_arch =
                resolve_arch(&plan.arch_template, &plan.tasks, variant.plus_action())?;
            if variant.distral_mode() {
                flat_arch.option_count = 1;
            }
            let result = transfer_train(
                ckpt,
                *variant,
                plan.tasks.transfer_tasks.clone(),
                plan.tasks.transfer_layout.clone(),
                &flat_arch,
                plan.alpha,
                plan.transfer_objective,
                cfg,
            )?;
            results.push(result);
        }
    }

    let curves = runs
        .iter()
        .map(|(variant, results)| {
            let per_seed: Vec<Vec<CurvePoint>> = results.iter().map(|r| r.curve.clone()).collect();
            VariantCurves::from_curves(plan.protocol.name(), variant.name(), &per_seed)
        })
        .collect();

    Ok(ExperimentResult {
        protocol: plan.protocol,
        curves,
        runs,
        diversity,
        priors,
    })
}

/// Fills the observation and action dimensions of an architecture template
/// from a probe environment of the protocol's training tasks.
pub fn resolve_arch(
    template: &ArchConfig,
    tasks: &ProtocolTasks,
    plus_action: bool,
) -> Result<ArchConfig> {
    let probe_task = tasks
        .train_tasks
        .first()
        .ok_or_else(|| Error::config("protocol has no training tasks"))?;
    let env = TaskEnv::new(probe_task.clone(), tasks.train_layout.clone(), plus_action)?;
    let mut arch = template.clone();
    arch.obs_dim = env.obs_dim();
    arch.action_count = env.action_count();
    arch.validate()?;
    Ok(arch)
}

#[cfg(test)]
mod tests;
