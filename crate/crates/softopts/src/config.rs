//! Run configuration: one TOML file fully determines a run.
//!
//! Every key has a per-protocol default; a config file overrides any subset
//! and the fully resolved configuration can be dumped back out for audit.
//! Unknown keys are hard errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::EnvFamily;
use crate::nn::mlp::Activation;
use crate::nn::optim::OptimKind;
use crate::objective::{ObjectiveConfig, Schedule, TermDistill};
use crate::policy::ArchConfig;
use crate::trainer::TrainerConfig;
use crate::transfer::{protocol_tasks, ExperimentPlan, Protocol, ProtocolTasks, Variant};
use crate::{Error, Result};

/// A constant or a linear ramp; ramps default to the full frame budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Constant(f64),
    Ramp {
        start: f64,
        end: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start_step: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        end_step: Option<u64>,
    },
}

impl ScheduleSpec {
    pub fn resolve(&self, total_frames: u64) -> Schedule {
        match *self {
            ScheduleSpec::Constant(v) => Schedule::constant(v),
            ScheduleSpec::Ramp {
                start,
                end,
                start_step,
                end_step,
            } => Schedule {
                start_value: start,
                end_value: end,
                start_step: start_step.unwrap_or(0),
                end_step: end_step.unwrap_or(total_frames),
            },
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    /// Seeds for multi-seed experiment runs.
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    /// Builtin layout id or path to a layout file.
    pub layout: Option<String>,
    /// Number of training task slots for Moving Bandits.
    pub bandits_train_tasks: Option<usize>,
    pub bandits_transfer_tasks: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    pub encoder_hidden: Option<Vec<usize>>,
    pub option_embed_dim: Option<usize>,
    pub option_count: Option<usize>,
    pub activation: Option<Activation>,
    pub head_gain: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub gamma: Option<f64>,
    pub lambda_v: Option<f64>,
    pub lambda_p: Option<f64>,
    pub term1_enabled: Option<bool>,
    pub term_distill: Option<TermDistill>,
    /// Fixed Bernoulli termination prior parameter.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    pub envs_per_task: Option<usize>,
    pub segment_len: Option<usize>,
    pub total_frames_per_task: Option<u64>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<OptimKind>,
    pub max_grad_norm: Option<f64>,
    pub beta: Option<ScheduleSpec>,
    pub lambda_h: Option<ScheduleSpec>,
    /// Updates between resets of a single task; 0 disables resets.
    pub reset_period: Option<u64>,
    pub checkpoint_every_frac: Option<f64>,
    pub return_window: Option<usize>,
    pub eval_every_updates: Option<u64>,
    pub eval_episodes_per_task: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub variants: Option<Vec<String>>,
    pub total_frames_per_task: Option<u64>,
    pub learning_rate: Option<f64>,
    pub beta: Option<f64>,
    pub lambda_h: Option<f64>,
    pub eval_every_updates: Option<u64>,
    pub eval_episodes_per_task: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Option<String>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub transfer: TransferSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::format(format!("config serialization failed: {e}")))
    }

    /// The per-protocol defaults, every field populated.
    pub fn defaults(protocol: Protocol) -> RunConfig {
        let family = protocol.family();
        let bandits = family == EnvFamily::MovingBandits;
        let train_frames: u64 = match protocol {
            Protocol::BanditsTransfer => 600_000,
            Protocol::DirTaxiTransfer => 4_000_000,
            _ => 1_400_000,
        };
        let beta = if bandits {
            ScheduleSpec::Constant(0.2)
        } else {
            ScheduleSpec::Ramp {
                start: 0.02,
                end: 0.1,
                start_step: None,
                end_step: None,
            }
        };
        let lambda_h = if bandits {
            ScheduleSpec::Constant(0.05)
        } else {
            ScheduleSpec::Ramp {
                start: 0.1,
                end: 0.05,
                start_step: None,
                end_step: None,
            }
        };
        RunConfig {
            protocol: Some(protocol.name().to_string()),
            run: RunSection {
                seed: Some(1),
                seeds: Some(vec![1, 2, 3, 4, 5]),
                out_dir: Some(PathBuf::from("runs").join(protocol.name())),
            },
            env: EnvSection {
                layout: protocol.default_layout_id().map(|s| s.to_string()),
                bandits_train_tasks: Some(10),
                bandits_transfer_tasks: Some(4),
            },
            arch: ArchSection {
                encoder_hidden: Some(if bandits {
                    vec![64, 64]
                } else {
                    vec![512, 256, 512]
                }),
                option_embed_dim: Some(128),
                option_count: Some(if bandits { 2 } else { 4 }),
                activation: Some(Activation::Tanh),
                head_gain: Some(0.01),
            },
            objective: ObjectiveSection {
                gamma: Some(0.95),
                lambda_v: Some(0.5),
                lambda_p: Some(1.0),
                term1_enabled: Some(false),
                term_distill: Some(TermDistill::ExactExpected),
                alpha: Some(0.95),
            },
            trainer: TrainerSection {
                envs_per_task: Some(3),
                segment_len: Some(5),
                total_frames_per_task: Some(train_frames),
                learning_rate: Some(if bandits { 0.01 } else { 0.001 }),
                optimizer: Some(OptimKind::Adam),
                max_grad_norm: Some(0.5),
                beta: Some(beta),
                lambda_h: Some(lambda_h),
                reset_period: Some(200),
                checkpoint_every_frac: Some(0.1),
                return_window: Some(20),
                eval_every_updates: Some(0),
                eval_episodes_per_task: Some(10),
            },
            transfer: TransferSection {
                variants: Some(vec![
                    "msol".to_string(),
                    "msol-frozen".to_string(),
                    "flat".to_string(),
                ]),
                total_frames_per_task: Some(if bandits { 100_000 } else { 200_000 }),
                learning_rate: Some(if bandits { 0.01 } else { 0.001 }),
                beta: Some(if bandits { 0.2 } else { 0.1 }),
                lambda_h: Some(0.05),
                eval_every_updates: Some(50),
                eval_episodes_per_task: Some(10),
            },
        }
    }

    /// File values merged over the protocol defaults.
    pub fn merged_with_defaults(&self, protocol: Protocol) -> Result<RunConfig> {
        let defaults = serde_json::to_value(Self::defaults(protocol))
            .map_err(|e| Error::format(e.to_string()))?;
        let overrides = serde_json::to_value(self).map_err(|e| Error::format(e.to_string()))?;
        let merged = merge_values(defaults, overrides);
        serde_json::from_value(merged).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    fn protocol(&self) -> Result<Protocol> {
        let name = self
            .protocol
            .as_deref()
            .ok_or_else(|| Error::config("config must set `protocol`"))?;
        Protocol::parse(name)
    }

    /// Resolves a complete experiment plan (task sets, architecture template,
    /// both phase configurations).
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let protocol = self.protocol()?;
        let cfg = self.merged_with_defaults(protocol)?;
        let tasks = protocol_tasks(
            protocol,
            cfg.env.layout.as_deref(),
            cfg.env.bandits_train_tasks.unwrap(),
            cfg.env.bandits_transfer_tasks.unwrap(),
        )?;

        // observation/action widths are filled per phase by the runner
        let arch_template = ArchConfig {
            obs_dim: 1,
            action_count: 1,
            option_count: cfg.arch.option_count.unwrap(),
            encoder_hidden: cfg.arch.encoder_hidden.clone().unwrap(),
            option_embed_dim: cfg.arch.option_embed_dim.unwrap(),
            activation: cfg.arch.activation.unwrap(),
            head_gain: cfg.arch.head_gain.unwrap(),
            primitive_options: false,
        };

        let objective = ObjectiveConfig {
            gamma: cfg.objective.gamma.unwrap(),
            lambda_v: cfg.objective.lambda_v.unwrap(),
            lambda_p: cfg.objective.lambda_p.unwrap(),
            term1_enabled: cfg.objective.term1_enabled.unwrap(),
            term_distill: cfg.objective.term_distill.unwrap(),
        };
        let alpha = cfg.objective.alpha.unwrap();

        let train_frames = cfg.trainer.total_frames_per_task.unwrap();
        let seed = cfg.run.seed.unwrap();
        let t = &cfg.trainer;
        let train_cfg = TrainerConfig {
            seed,
            envs_per_task: t.envs_per_task.unwrap(),
            segment_len: t.segment_len.unwrap(),
            total_frames_per_task: train_frames,
            learning_rate: t.learning_rate.unwrap(),
            optimizer: t.optimizer.unwrap(),
            max_grad_norm: t.max_grad_norm,
            beta: t.beta.unwrap().resolve(train_frames),
            lambda_h: t.lambda_h.unwrap().resolve(train_frames),
            reset_period: match t.reset_period.unwrap() {
                0 => None,
                p => Some(p),
            },
            checkpoint_every_frac: t.checkpoint_every_frac,
            checkpoint_dir: None,
            return_window: t.return_window.unwrap(),
            eval_every_updates: match t.eval_every_updates.unwrap() {
                0 => None,
                e => Some(e),
            },
            eval_episodes_per_task: t.eval_episodes_per_task.unwrap(),
        };

        let x = &cfg.transfer;
        let transfer_frames = x.total_frames_per_task.unwrap();
        let transfer_cfg = TrainerConfig {
            seed,
            envs_per_task: t.envs_per_task.unwrap(),
            segment_len: t.segment_len.unwrap(),
            total_frames_per_task: transfer_frames,
            learning_rate: x.learning_rate.unwrap(),
            optimizer: t.optimizer.unwrap(),
            max_grad_norm: t.max_grad_norm,
            beta: Schedule::constant(x.beta.unwrap()),
            lambda_h: Schedule::constant(x.lambda_h.unwrap()),
            reset_period: None,
            checkpoint_every_frac: None,
            checkpoint_dir: None,
            return_window: t.return_window.unwrap(),
            eval_every_updates: match x.eval_every_updates.unwrap() {
                0 => None,
                e => Some(e),
            },
            eval_episodes_per_task: x.eval_episodes_per_task.unwrap(),
        };

        let variants = cfg
            .transfer
            .variants
            .as_deref()
            .unwrap()
            .iter()
            .map(|s| Variant::parse(s))
            .collect::<Result<Vec<_>>>()?;

        Ok(ResolvedConfig {
            resolved: cfg.clone(),
            protocol,
            out_dir: cfg.run.out_dir.clone().unwrap(),
            seed,
            plan: ExperimentPlan {
                protocol,
                tasks,
                arch_template,
                alpha,
                train_objective: objective,
                train_cfg,
                transfer_objective: objective,
                transfer_cfg,
                variants,
                seeds: cfg.run.seeds.clone().unwrap(),
            },
        })
    }
}

fn merge_values(base: serde_json::Value, over: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match (base, over) {
        (Value::Object(mut b), Value::Object(o)) => {
            for (k, v) in o {
                if v.is_null() {
                    continue;
                }
                let slot = b.remove(&k).unwrap_or(Value::Null);
                b.insert(k, merge_values(slot, v));
            }
            Value::Object(b)
        }
        (b, Value::Null) => b,
        (_, o) => o,
    }
}

/// A fully resolved run: the merged config for audit plus the executable
/// experiment plan.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub resolved: RunConfig,
    pub protocol: Protocol,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub plan: ExperimentPlan,
}

impl ResolvedConfig {
    pub fn tasks(&self) -> &ProtocolTasks {
        &self.plan.tasks
    }
}
