//! Rollout segments: the unit of data consumed by every loss.

use serde::{Deserialize, Serialize};

use crate::policy::StepDecision;

/// One recorded environment transition plus the hierarchy decision that
/// produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajStep {
    pub obs: Vec<f64>,
    pub decision: StepDecision,
    pub reward: f64,
    pub done: bool,
}

/// A fixed-length on-policy segment from one environment stream of one task.
/// Option choices chain across steps; after a `done` the next step carries
/// episode-start semantics (forced termination, sentinel previous option).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_index: usize,
    pub steps: Vec<TrajStep>,
    /// V(s_end, z_end) estimated at collection time; 0 when the segment ended
    /// an episode.
    pub bootstrap_value: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the chaining invariants: the first step after a `done` is an
    /// episode start, and continuation steps keep the previous option.
    pub fn check_chaining(&self) -> bool {
        let mut prev_done = None::<bool>;
        let mut prev_option = None::<usize>;
        for step in &self.steps {
            if let Some(done) = prev_done {
                if done != step.decision.episode_start {
                    return false;
                }
                if !done && step.decision.prev_option != prev_option {
                    return false;
                }
            }
            if !step.decision.terminate
                && step.decision.prev_option != Some(step.decision.option)
            {
                return false;
            }
            prev_done = Some(step.done);
            prev_option = Some(step.decision.option);
        }
        true
    }
}
