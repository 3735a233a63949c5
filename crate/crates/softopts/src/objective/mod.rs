//! The regularized reward, every loss term, termination distillation, and
//! annealing schedules.
//!
//! The regularized reward subtracts beta-weighted posterior/prior log-ratios
//! from the environment reward at each hierarchy level. It is computed from
//! the log-probabilities cached while acting and treated as plain reward
//! data: no gradient flows through it. Distillation targets are likewise
//! resolved to constants before any loss is built; the losses that do carry
//! gradients re-evaluate their log-probabilities on the tape.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::optim::Optimizer;
use crate::nn::store::ParamStore;
use crate::nn::tape::{NodeId, Tape};
use crate::policy::{
    master_probabilities, step_nodes, Encoder, PolicyMode, PosteriorPolicy, SharedPrior,
    StepDecision, LOG_ZERO,
};
use crate::trainer::Trajectory;
use crate::{Error, Result};

/// Linear annealing between two values; clamped outside the step window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub start_value: f64,
    pub end_value: f64,
    pub start_step: u64,
    pub end_step: u64,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Schedule {
            start_value: value,
            end_value: value,
            start_step: 0,
            end_step: 0,
        }
    }

    pub fn eval(&self, step: u64) -> f64 {
        if step <= self.start_step || self.end_step <= self.start_step {
            return self.start_value;
        }
        if step >= self.end_step {
            return self.end_value;
        }
        let frac = (step - self.start_step) as f64 / (self.end_step - self.start_step) as f64;
        self.start_value + frac * (self.end_value - self.start_value)
    }
}

/// How the termination prior is distilled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermDistill {
    /// Cross-entropy of p^T against the exact switch probability
    /// 1 - q^H(z_prev | s). Default.
    ExactExpected,
    /// Sampled variant: draw z' from the master and distill towards the
    /// indicator of re-picking the previous option.
    SampledSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub gamma: f64,
    /// Weight on the value loss (the policy-gradient loss has weight 1).
    pub lambda_v: f64,
    /// Weight on the prior-distillation loss; 0 masks it entirely.
    pub lambda_p: f64,
    /// Include the master log-ratio in the regularized reward. Off by
    /// default: the entropy loss already carries the master exploration
    /// pressure, so the reward keeps only the intra-option and termination
    /// ratios.
    pub term1_enabled: bool,
    pub term_distill: TermDistill,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            gamma: 0.95,
            lambda_v: 0.5,
            lambda_p: 1.0,
            term1_enabled: false,
            term_distill: TermDistill::ExactExpected,
        }
    }
}

/// The regularized reward of one step, with its three log-ratio terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegRewardBreakdown {
    pub env_reward: f64,
    /// Master log-ratio (zero while continuing an option).
    pub term_master: f64,
    /// Intra-option log-ratio.
    pub term_action: f64,
    /// Termination log-ratio.
    pub term_termination: f64,
    pub beta: f64,
    pub total: f64,
}

/// Computes the regularized reward from the log-probabilities cached in a
/// decision. Pure data: gradients never flow through this value.
pub fn regularized_reward(
    decision: &StepDecision,
    env_reward: f64,
    beta: f64,
    term1_enabled: bool,
) -> Result<RegRewardBreakdown> {
    let logs = [
        decision.log_q_term,
        decision.log_q_master,
        decision.log_q_action,
        decision.log_p_term,
        decision.log_p_master,
        decision.log_p_action,
    ];
    for l in logs {
        if !l.is_finite() && l != LOG_ZERO {
            return Err(Error::numeric(format!(
                "non-finite log-probability {l} in step decision"
            )));
        }
    }
    let term_master = decision.log_q_master - decision.log_p_master;
    let term_action = decision.log_q_action - decision.log_p_action;
    let term_termination = decision.log_q_term - decision.log_p_term;
    let gated_master = if term1_enabled { term_master } else { 0.0 };
    let total = env_reward - beta * (gated_master + term_action + term_termination);
    Ok(RegRewardBreakdown {
        env_reward,
        term_master,
        term_action,
        term_termination,
        beta,
        total,
    })
}

/// Per-step reward/advantage data derived from one trajectory. Everything
/// here is constant with respect to the parameters.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub reg: RegRewardBreakdown,
    /// Bootstrapped k-step target for the value function.
    pub target: f64,
    /// target - V(s_t, z_prev); a constant in every loss.
    pub advantage: f64,
    /// Termination-distillation target: the probability mass the prior's
    /// termination head is pulled towards. `None` where distillation does
    /// not apply (episode starts, primitive pseudo-options, one-option mode).
    pub distill_target: Option<f64>,
}

/// Regularized rewards, k-step targets and advantages for a whole segment.
/// k runs to the end of the segment, truncated at episode boundaries, where
/// the bootstrap is zero.
pub fn evaluate_trajectory(
    traj: &Trajectory,
    gamma: f64,
    beta: f64,
    term1_enabled: bool,
) -> Result<Vec<StepEval>> {
    let n = traj.len();
    let mut evals = Vec::with_capacity(n);
    for step in &traj.steps {
        let reg = regularized_reward(&step.decision, step.reward, beta, term1_enabled)?;
        evals.push(StepEval {
            reg,
            target: 0.0,
            advantage: 0.0,
            distill_target: None,
        });
    }
    let mut carry = traj.bootstrap_value;
    for t in (0..n).rev() {
        let tail = if traj.steps[t].done { 0.0 } else { carry };
        evals[t].target = evals[t].reg.total + gamma * tail;
        evals[t].advantage = evals[t].target - traj.steps[t].decision.value;
        carry = evals[t].target;
    }
    Ok(evals)
}

/// The k-step advantage at one index of a segment, with k the distance to the
/// segment end (or episode boundary).
pub fn k_step_advantage(
    traj: &Trajectory,
    t: usize,
    gamma: f64,
    beta: f64,
    term1_enabled: bool,
) -> Result<f64> {
    if t >= traj.len() {
        return Err(Error::usage(format!(
            "step {t} beyond segment of length {}",
            traj.len()
        )));
    }
    Ok(evaluate_trajectory(traj, gamma, beta, term1_enabled)?[t].advantage)
}

/// Exact switch probability distilled into the termination prior:
/// the chance the master would pick something other than the previous option
/// if it had the opportunity.
pub fn termination_distill_target(master_probs: &[f64], z_prev: usize) -> f64 {
    1.0 - master_probs[z_prev]
}

/// Resolves the per-step termination-distillation targets to constants, using
/// the current master. The exact variant uses 1 - q^H(z_prev | s); the
/// sampled variant draws z' from the master and uses the indicator of
/// re-picking the previous option.
#[allow(clippy::too_many_arguments)]
pub fn attach_distill_targets(
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    mode: PolicyMode,
    term_distill: TermDistill,
    traj: &Trajectory,
    evals: &mut [StepEval],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if mode.distral {
        return Ok(());
    }
    let arch = enc.arch();
    for (step, eval) in traj.steps.iter().zip(evals.iter_mut()) {
        let Some(z_prev) = step.decision.prev_option else {
            continue;
        };
        if arch.is_primitive(z_prev) {
            continue;
        }
        let probs = master_probabilities(store, enc, posterior, &step.obs)?;
        eval.distill_target = Some(match term_distill {
            TermDistill::ExactExpected => termination_distill_target(&probs, z_prev),
            TermDistill::SampledSwitch => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut z_new = probs.len() - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        z_new = i;
                        break;
                    }
                }
                if z_new == z_prev {
                    1.0
                } else {
                    0.0
                }
            }
        });
    }
    Ok(())
}

/// All loss terms of one update, plus reward statistics for the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub policy: f64,
    pub value: f64,
    pub prior: f64,
    pub entropy: f64,
    pub lambda_v: f64,
    pub lambda_p: f64,
    pub lambda_h: f64,
    pub combined: f64,
    pub mean_reg_reward: f64,
    pub mean_env_reward: f64,
    pub mean_term_master: f64,
    pub mean_term_action: f64,
    pub mean_term_termination: f64,
}

/// Scalar loss nodes for one task's batch of trajectories.
pub struct TaskLossNodes {
    pub policy: NodeId,
    pub value: NodeId,
    pub prior: Option<NodeId>,
    pub entropy: NodeId,
}

/// Builds all four losses for one task on the tape.
///
/// - policy: -sum_t A_t * log q(a_t, z_t, b_t | s_t, z_prev), advantages
///   constant, so gradient descent raises the probability of
///   positive-advantage decisions;
/// - value: sum_t (target_t - V(s_t, z_prev))^2, targets constant;
/// - prior: -sum_t [log p^L(a_t|s_t,z_t) + termination distillation],
///   gradients reach only shared parameters;
/// - entropy: sum_t log q over all sampled hierarchy levels (minimizing this
///   maximizes entropy).
#[allow(clippy::too_many_arguments)]
pub fn task_losses(
    tape: &mut Tape,
    store: &ParamStore,
    enc: &Encoder,
    posterior: &PosteriorPolicy,
    prior: &SharedPrior,
    mode: PolicyMode,
    cfg: &ObjectiveConfig,
    trajectories: &[&Trajectory],
    evals: &[Vec<StepEval>],
) -> Result<TaskLossNodes> {
    let mut policy_terms = Vec::new();
    let mut value_terms = Vec::new();
    let mut prior_terms = Vec::new();
    let mut entropy_terms = Vec::new();

    for (traj, traj_evals) in trajectories.iter().zip(evals.iter()) {
        for (step, eval) in traj.steps.iter().zip(traj_evals.iter()) {
            let nodes = step_nodes(
                tape,
                store,
                enc,
                posterior,
                prior,
                mode,
                &step.obs,
                &step.decision,
            )?;

            // log q(a, z, b | s, z_prev): absent factors are forced events
            // with log-probability zero.
            let mut logq_parts = Vec::new();
            if let Some(n) = nodes.log_q_term {
                logq_parts.push(n);
            }
            if let Some(n) = nodes.log_q_master {
                logq_parts.push(n);
            }
            if let Some(n) = nodes.log_q_action {
                logq_parts.push(n);
            }
            if !logq_parts.is_empty() {
                let logq = tape.sum_list(logq_parts);
                policy_terms.push(tape.scale(logq, -eval.advantage));
                entropy_terms.push(logq);
            }

            // (target - V)^2 with the target constant.
            let target = tape.constant_scalar(eval.target);
            let diff = tape.sub(target, nodes.value);
            value_terms.push(tape.square(diff));

            if cfg.lambda_p > 0.0 {
                if let Some(lp_action) = nodes.log_p_action {
                    prior_terms.push(lp_action);
                }
                if let (Some(lp_true), Some(lp_false), Some(target)) = (
                    nodes.log_p_term_true,
                    nodes.log_p_term_false,
                    eval.distill_target,
                ) {
                    let a = tape.scale(lp_true, target);
                    let b = tape.scale(lp_false, 1.0 - target);
                    prior_terms.push(tape.sum_list(vec![a, b]));
                }
            }
        }
    }

    let policy = tape.sum_list(policy_terms);
    let value = tape.sum_list(value_terms);
    let entropy = tape.sum_list(entropy_terms);
    let prior_node = if cfg.lambda_p > 0.0 {
        let s = tape.sum_list(prior_terms);
        Some(tape.scale(s, -1.0))
    } else {
        None
    };
    Ok(TaskLossNodes {
        policy,
        value,
        prior: prior_node,
        entropy,
    })
}

/// One combined update over all tasks: builds every loss on a single tape,
/// backpropagates their weighted sum, and applies one optimizer step to the
/// task posteriors and shared parameters jointly.
#[allow(clippy::too_many_arguments)]
pub fn combined_update(
    store: &mut ParamStore,
    enc: &Encoder,
    prior: &SharedPrior,
    posteriors: &[PosteriorPolicy],
    mode: PolicyMode,
    cfg: &ObjectiveConfig,
    beta: f64,
    lambda_h: f64,
    batch: &[Trajectory],
    optim: &mut Optimizer,
    rng: &mut ChaCha8Rng,
) -> Result<LossBundle> {
    let mut tape = Tape::new();
    let mut weighted = Vec::new();
    let (mut l_a, mut l_v, mut l_p, mut l_h) = (0.0, 0.0, 0.0, 0.0);
    let mut reg_sums = [0.0; 5];
    let mut step_count = 0usize;

    for traj in batch {
        if traj.task_index >= posteriors.len() {
            return Err(Error::usage(format!(
                "trajectory references task {} of {}",
                traj.task_index,
                posteriors.len()
            )));
        }
        let posterior = &posteriors[traj.task_index];
        let mut evals = evaluate_trajectory(traj, cfg.gamma, beta, cfg.term1_enabled)?;
        if cfg.lambda_p > 0.0 {
            attach_distill_targets(
                store,
                enc,
                posterior,
                mode,
                cfg.term_distill,
                traj,
                &mut evals,
                rng,
            )?;
        }
        for e in &evals {
            reg_sums[0] += e.reg.total;
            reg_sums[1] += e.reg.env_reward;
            reg_sums[2] += e.reg.term_master;
            reg_sums[3] += e.reg.term_action;
            reg_sums[4] += e.reg.term_termination;
        }
        step_count += traj.len();

        let nodes = task_losses(
            &mut tape,
            store,
            enc,
            posterior,
            prior,
            mode,
            cfg,
            &[traj],
            &[evals],
        )?;
        l_a += tape.scalar(nodes.policy);
        l_v += tape.scalar(nodes.value);
        l_h += tape.scalar(nodes.entropy);
        weighted.push(nodes.policy);
        weighted.push(tape.scale(nodes.value, cfg.lambda_v));
        if let Some(p) = nodes.prior {
            l_p += tape.scalar(p);
            weighted.push(tape.scale(p, cfg.lambda_p));
        }
        weighted.push(tape.scale(nodes.entropy, lambda_h));
    }

    let combined = tape.sum_list(weighted);
    let combined_value = tape.scalar(combined);

    for (name, v) in [
        ("policy", l_a),
        ("value", l_v),
        ("prior", l_p),
        ("entropy", l_h),
        ("combined", combined_value),
    ] {
        if !v.is_finite() {
            return Err(Error::numeric(format!("{name} loss is {v}")));
        }
    }

    tape.backward(combined, store)?;
    optim.step(store)?;

    let steps = step_count.max(1) as f64;
    Ok(LossBundle {
        policy: l_a,
        value: l_v,
        prior: l_p,
        entropy: l_h,
        lambda_v: cfg.lambda_v,
        lambda_p: cfg.lambda_p,
        lambda_h,
        combined: combined_value,
        mean_reg_reward: reg_sums[0] / steps,
        mean_env_reward: reg_sums[1] / steps,
        mean_term_master: reg_sums[2] / steps,
        mean_term_action: reg_sums[3] / steps,
        mean_term_termination: reg_sums[4] / steps,
    })
}
