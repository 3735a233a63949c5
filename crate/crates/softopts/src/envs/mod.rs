//! Task distributions and environments: Moving Bandits, Taxi (30 locations),
//! Directional Taxi, and the shifted/resized layouts used for adaptation.

pub mod bandits;
pub mod layout;
pub mod taxi;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};
pub use bandits::{BanditsState, BanditsTask, BANDITS_ACTIONS, BANDITS_OBS_DIM};
pub use layout::{Cell, Direction, GridLayout};
pub use taxi::{ResetMode, TaxiOracle, TaxiState, TaxiTask, DIR_TAXI_ACTIONS, TAXI_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvFamily {
    MovingBandits,
    Taxi,
    DirectionalTaxi,
}

impl EnvFamily {
    pub fn uses_layout(self) -> bool {
        !matches!(self, EnvFamily::MovingBandits)
    }
}

/// One environment instance drawn from a task distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: EnvFamily,
    pub layout_id: String,
    pub detail: TaskDetail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskDetail {
    Bandits(BanditsTask),
    Taxi(TaxiTask),
}

/// All tasks of a family on one layout: 12 ordered pickup/drop-off pairs for
/// the taxi variants, the 2 goal indices for Moving Bandits.
pub fn enumerate_tasks(family: EnvFamily, layout: Option<&GridLayout>) -> Result<Vec<TaskSpec>> {
    match family {
        EnvFamily::MovingBandits => Ok((0..2)
            .map(|goal_index| TaskSpec {
                family,
                layout_id: String::new(),
                detail: TaskDetail::Bandits(BanditsTask { goal_index }),
            })
            .collect()),
        EnvFamily::Taxi | EnvFamily::DirectionalTaxi => {
            let layout =
                layout.ok_or_else(|| Error::config("taxi task enumeration needs a layout"))?;
            Ok(taxi::enumerate_taxi_tasks()
                .into_iter()
                .map(|t| TaskSpec {
                    family,
                    layout_id: layout.id.clone(),
                    detail: TaskDetail::Taxi(t),
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum EnvState {
    Taxi(TaxiState),
    Bandits(BanditsState),
}

/// A stateful environment instance for one task. Many instances run
/// concurrently, each with its own RNG stream; stepping is pure given the
/// underlying state, randomness only enters through `reset`.
#[derive(Debug, Clone)]
pub struct TaskEnv {
    pub task: TaskSpec,
    layout: Option<Arc<GridLayout>>,
    state: Option<EnvState>,
    /// Appends a one-hot of the last primitive action to the observation.
    plus_last_action: bool,
    last_action: Option<usize>,
}

impl TaskEnv {
    pub fn new(task: TaskSpec, layout: Option<Arc<GridLayout>>, plus_last_action: bool) -> Result<Self> {
        if task.family.uses_layout() {
            let l = layout
                .as_ref()
                .ok_or_else(|| Error::config("taxi environments need a layout"))?;
            if l.id != task.layout_id {
                return Err(Error::config(format!(
                    "task expects layout `{}`, got `{}`",
                    task.layout_id, l.id
                )));
            }
        }
        Ok(TaskEnv {
            task,
            layout,
            state: None,
            plus_last_action,
            last_action: None,
        })
    }

    pub fn action_count(&self) -> usize {
        match self.task.family {
            EnvFamily::MovingBandits => BANDITS_ACTIONS,
            EnvFamily::Taxi => TAXI_ACTIONS,
            EnvFamily::DirectionalTaxi => DIR_TAXI_ACTIONS,
        }
    }

    pub fn obs_dim(&self) -> usize {
        let base = match self.task.family {
            EnvFamily::MovingBandits => BANDITS_OBS_DIM,
            EnvFamily::Taxi => taxi::taxi_obs_dim(self.layout.as_ref().unwrap(), false),
            EnvFamily::DirectionalTaxi => taxi::taxi_obs_dim(self.layout.as_ref().unwrap(), true),
        };
        base + if self.plus_last_action { self.action_count() } else { 0 }
    }

    pub fn reset(&mut self, mode: ResetMode, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state = Some(match self.task.family {
            EnvFamily::MovingBandits => EnvState::Bandits(bandits::reset_bandits(rng)),
            EnvFamily::Taxi | EnvFamily::DirectionalTaxi => {
                EnvState::Taxi(taxi::reset_taxi(self.layout.as_ref().unwrap(), mode, rng))
            }
        });
        self.last_action = None;
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::usage("step before reset"))?;
        let (next, reward, done) = match (state, &self.task.detail) {
            (EnvState::Taxi(s), TaskDetail::Taxi(t)) => {
                let layout = self.layout.as_ref().unwrap();
                let (s2, r, d) = if self.task.family == EnvFamily::DirectionalTaxi {
                    taxi::step_directional_taxi(layout, *t, s, action)?
                } else {
                    taxi::step_taxi(layout, *t, s, action)?
                };
                (EnvState::Taxi(s2), r, d)
            }
            (EnvState::Bandits(s), TaskDetail::Bandits(t)) => {
                let (s2, r, d) = bandits::step_bandits(*t, s, action)?;
                (EnvState::Bandits(s2), r, d)
            }
            _ => return Err(Error::config("task detail does not match state")),
        };
        self.state = Some(next);
        self.last_action = Some(action);
        Ok((self.observation(), reward, done))
    }

    pub fn observation(&self) -> Vec<f64> {
        let state = self.state.as_ref().expect("observation before reset");
        let mut obs = match state {
            EnvState::Taxi(s) => taxi::taxi_observation(
                self.layout.as_ref().unwrap(),
                s,
                self.task.family == EnvFamily::DirectionalTaxi,
            ),
            EnvState::Bandits(s) => bandits::bandits_observation(s),
        };
        if self.plus_last_action {
            let mut one_hot = vec![0.0; self.action_count()];
            if let Some(a) = self.last_action {
                one_hot[a] = 1.0;
            }
            obs.extend_from_slice(&one_hot);
        }
        obs
    }

    pub fn taxi_state(&self) -> Option<&TaxiState> {
        match &self.state {
            Some(EnvState::Taxi(s)) => Some(s),
            _ => None,
        }
    }

    pub fn bandits_state(&self) -> Option<&BanditsState> {
        match &self.state {
            Some(EnvState::Bandits(s)) => Some(s),
            _ => None,
        }
    }

    pub fn layout(&self) -> Option<&GridLayout> {
        self.layout.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn taxi_has_twelve_tasks() {
        let layout = GridLayout::builtin("taxi30").unwrap();
        let tasks = enumerate_tasks(EnvFamily::Taxi, Some(&layout)).unwrap();
        assert_eq!(tasks.len(), 12);
    }

    #[test]
    fn bandits_has_two_tasks() {
        let tasks = enumerate_tasks(EnvFamily::MovingBandits, None).unwrap();
        assert_eq!(tasks.len(), 2);
    }

    #[test]
    fn replaying_an_action_log_reproduces_the_trajectory() {
        let layout = Arc::new(GridLayout::builtin("taxi30").unwrap());
        let tasks = enumerate_tasks(EnvFamily::Taxi, Some(&layout)).unwrap();
        let mut env = TaskEnv::new(tasks[3].clone(), Some(layout.clone()), false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs0 = env.reset(ResetMode::Train, &mut rng);
        let actions = [0usize, 1, 5, 2, 3, 4, 1, 1, 5, 0];
        let first: Vec<_> = actions.iter().map(|&a| env.step(a).unwrap()).collect();

        let mut env2 = TaskEnv::new(tasks[3].clone(), Some(layout), false).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        let obs0b = env2.reset(ResetMode::Train, &mut rng2);
        assert_eq!(obs0, obs0b);
        for (&a, (obs, r, d)) in actions.iter().zip(first.iter()) {
            let (obs2, r2, d2) = env2.step(a).unwrap();
            assert_eq!(*obs, obs2);
            assert_eq!(*r, r2);
            assert_eq!(*d, d2);
        }
    }

    #[test]
    fn plus_action_mode_extends_the_observation() {
        let layout = Arc::new(GridLayout::builtin("taxi30").unwrap());
        let tasks = enumerate_tasks(EnvFamily::Taxi, Some(&layout)).unwrap();
        let mut env = TaskEnv::new(tasks[0].clone(), Some(layout), true).unwrap();
        assert_eq!(env.obs_dim(), 60 + 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = env.reset(ResetMode::Test, &mut rng);
        assert_eq!(obs.len(), 66);
        assert!(obs[60..].iter().all(|&v| v == 0.0), "no last action after reset");
        let (obs, _, _) = env.step(2).unwrap();
        assert_eq!(obs[60 + 2], 1.0);
    }

    #[test]
    fn step_before_reset_is_usage_error() {
        let layout = Arc::new(GridLayout::builtin("taxi30").unwrap());
        let tasks = enumerate_tasks(EnvFamily::Taxi, Some(&layout)).unwrap();
        let mut env = TaskEnv::new(tasks[0].clone(), Some(layout), false).unwrap();
        assert!(env.step(0).is_err());
    }
}
