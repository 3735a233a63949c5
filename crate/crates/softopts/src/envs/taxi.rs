//! Taxi and Directional Taxi: pick a passenger up at one special cell, drop
//! them off at another. Reward 2 for delivery, -0.1 per step, 50-step
//! episodes. Includes the exhaustive BFS oracle used for acceptance checks.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::layout::{neighbor, Cell, Direction, GridLayout};
use crate::{Error, Result};

pub const MAX_STEPS: u32 = 50;
pub const STEP_PENALTY: f64 = -0.1;
pub const DELIVERY_REWARD: f64 = 2.0;

/// Actions in the standard variant.
pub const TAXI_ACTIONS: usize = 6; // N, E, S, W, no-op, pickup/drop-off
/// Actions in the directional variant.
pub const DIR_TAXI_ACTIONS: usize = 5; // forward, rotate-cw, rotate-ccw, no-op, pickup/drop-off

/// One pickup/drop-off combination; indices into the layout's special cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TaxiTask {
    pub pickup: usize,
    pub dropoff: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaxiState {
    pub loc: Cell,
    /// Used by the directional variant only.
    pub facing: Direction,
    pub has_passenger: bool,
    pub steps: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// Any valid state: passenger may already be on board.
    Train,
    /// Passenger never on board at the start.
    Test,
}

pub fn reset_taxi(
    layout: &GridLayout,
    mode: ResetMode,
    rng: &mut ChaCha8Rng,
) -> TaxiState {
    let locs = layout.locations();
    let loc = locs[rng.gen_range(0..locs.len())];
    let facing = Direction::from_index(rng.gen_range(0..4));
    let has_passenger = match mode {
        ResetMode::Train => rng.gen::<bool>(),
        ResetMode::Test => false,
    };
    TaxiState {
        loc,
        facing,
        has_passenger,
        steps: 0,
    }
}

fn apply_special(layout: &GridLayout, task: TaxiTask, state: &mut TaxiState) -> (f64, bool) {
    if !state.has_passenger && state.loc == layout.special_cells[task.pickup] {
        state.has_passenger = true;
    } else if state.has_passenger && state.loc == layout.special_cells[task.dropoff] {
        // Delivery: terminal step pays the bonus plus the step penalty.
        return (DELIVERY_REWARD + STEP_PENALTY, true);
    }
    // Wrong cell: no state change beyond the step itself.
    (STEP_PENALTY, false)
}

/// Standard variant. Actions: 0..4 move N/E/S/W, 4 no-op, 5 pickup/drop-off.
/// Pure in (state, action).
pub fn step_taxi(
    layout: &GridLayout,
    task: TaxiTask,
    state: &TaxiState,
    action: usize,
) -> Result<(TaxiState, f64, bool)> {
    if action >= TAXI_ACTIONS {
        return Err(Error::usage(format!("taxi action {action} out of range")));
    }
    let mut next = *state;
    next.steps += 1;
    let (mut reward, mut done) = (STEP_PENALTY, false);
    match action {
        0..=3 => {
            let dir = Direction::from_index(action);
            if !layout.blocked(next.loc, dir) {
                next.loc = neighbor(next.loc, dir);
            }
        }
        4 => {}
        5 => {
            let (r, d) = apply_special(layout, task, &mut next);
            reward = r;
            done = d;
        }
        _ => unreachable!(),
    }
    if next.steps >= MAX_STEPS {
        done = true;
    }
    Ok((next, reward, done))
}

/// Directional variant. Actions: 0 forward, 1 rotate-cw, 2 rotate-ccw,
/// 3 no-op, 4 pickup/drop-off.
pub fn step_directional_taxi(
    layout: &GridLayout,
    task: TaxiTask,
    state: &TaxiState,
    action: usize,
) -> Result<(TaxiState, f64, bool)> {
    if action >= DIR_TAXI_ACTIONS {
        return Err(Error::usage(format!(
            "directional taxi action {action} out of range"
        )));
    }
    let mut next = *state;
    next.steps += 1;
    let (mut reward, mut done) = (STEP_PENALTY, false);
    match action {
        0 => {
            if !layout.blocked(next.loc, next.facing) {
                next.loc = neighbor(next.loc, next.facing);
            }
        }
        1 => next.facing = next.facing.clockwise(),
        2 => next.facing = next.facing.counter_clockwise(),
        3 => {}
        4 => {
            let (r, d) = apply_special(layout, task, &mut next);
            reward = r;
            done = d;
        }
        _ => unreachable!(),
    }
    if next.steps >= MAX_STEPS {
        done = true;
    }
    Ok((next, reward, done))
}

/// One-hot observation. Standard: index = loc + L*flag over 2L entries.
/// Directional: index = loc + L*(facing + 4*flag) over 8L entries.
/// Pickup and drop-off identity never appear in the observation.
pub fn taxi_observation(layout: &GridLayout, state: &TaxiState, directional: bool) -> Vec<f64> {
    let l = layout.location_count();
    let loc = layout
        .location_index(state.loc)
        .expect("taxi state on unreachable cell");
    let flag = usize::from(state.has_passenger);
    let (dim, index) = if directional {
        (8 * l, loc + l * (state.facing.index() + 4 * flag))
    } else {
        (2 * l, loc + l * flag)
    };
    let mut obs = vec![0.0; dim];
    obs[index] = 1.0;
    obs
}

pub fn taxi_obs_dim(layout: &GridLayout, directional: bool) -> usize {
    layout.location_count() * if directional { 8 } else { 2 }
}

/// All 12 ordered pickup/drop-off pairs.
pub fn enumerate_taxi_tasks() -> Vec<TaxiTask> {
    let mut tasks = Vec::new();
    for pickup in 0..4 {
        for dropoff in 0..4 {
            if pickup != dropoff {
                tasks.push(TaxiTask { pickup, dropoff });
            }
        }
    }
    tasks
}

// ---------------------------------------------------------------------------
// BFS oracle
// ---------------------------------------------------------------------------

type OracleKey = (Cell, Direction, bool);

/// Per-task shortest-path data over one layout, from exhaustive BFS.
#[derive(Debug, Clone)]
pub struct TaxiOracle {
    pub task: TaxiTask,
    /// Cost-to-go (number of steps to delivery, counting the pickup and
    /// drop-off actions) from every non-terminal state. Keyed by
    /// (loc, facing, passenger); facing is `N` in the standard variant.
    cost_to_go: HashMap<OracleKey, u32>,
    /// Worst cost-to-go over test-mode (passenger not on board) starts.
    pub max_steps: u32,
    /// Mean of 2 - 0.1*L over all test-mode start states.
    pub mean_optimal_return: f64,
}

impl TaxiOracle {
    fn key(&self, state: &TaxiState, directional: bool) -> OracleKey {
        let facing = if directional { state.facing } else { Direction::N };
        (state.loc, facing, state.has_passenger)
    }

    pub fn optimal_steps(&self, state: &TaxiState, directional: bool) -> Option<u32> {
        self.cost_to_go.get(&self.key(state, directional)).copied()
    }

    pub fn optimal_return(&self, state: &TaxiState, directional: bool) -> Option<f64> {
        self.optimal_steps(state, directional)
            .map(|l| DELIVERY_REWARD + STEP_PENALTY * l as f64)
    }
}

/// Exhaustive BFS for one task: expands every (loc, facing, passenger) state
/// through the real step function, so the oracle exercises the same dynamics
/// the agent sees. Backward search from the delivery state yields cost-to-go
/// for every state at once.
pub fn taxi_oracle(layout: &GridLayout, task: TaxiTask, directional: bool) -> Result<TaxiOracle> {
    let action_count = if directional { DIR_TAXI_ACTIONS } else { TAXI_ACTIONS };
    let facings: &[Direction] = if directional {
        &Direction::ALL
    } else {
        &[Direction::N]
    };

    // Forward expansion of every state to build the predecessor relation,
    // then multi-source backward BFS from all states that deliver in one step.
    let mut states: Vec<TaxiState> = Vec::new();
    for &loc in layout.locations() {
        for &facing in facings {
            for has_passenger in [false, true] {
                states.push(TaxiState {
                    loc,
                    facing,
                    has_passenger,
                    steps: 0,
                });
            }
        }
    }
    let key = |s: &TaxiState| -> OracleKey {
        let facing = if directional { s.facing } else { Direction::N };
        (s.loc, facing, s.has_passenger)
    };
    let mut predecessors: HashMap<OracleKey, Vec<OracleKey>> = HashMap::new();
    let mut cost_to_go: HashMap<OracleKey, u32> = HashMap::new();
    let mut frontier = VecDeque::new();
    for s in &states {
        for action in 0..action_count {
            let (next, _r, done) = if directional {
                step_directional_taxi(layout, task, s, action)?
            } else {
                step_taxi(layout, task, s, action)?
            };
            if done {
                // `steps` was 0, so `done` can only mean delivery here.
                if !cost_to_go.contains_key(&key(s)) {
                    cost_to_go.insert(key(s), 1);
                    frontier.push_back(key(s));
                }
            } else {
                predecessors.entry(key(&next)).or_default().push(key(s));
            }
        }
    }
    while let Some(k) = frontier.pop_front() {
        let d = cost_to_go[&k];
        if let Some(preds) = predecessors.get(&k) {
            for p in preds.clone() {
                if !cost_to_go.contains_key(&p) {
                    cost_to_go.insert(p, d + 1);
                    frontier.push_back(p);
                }
            }
        }
    }

    let mut max_steps = 0;
    let mut total_return = 0.0;
    let mut count = 0usize;
    for s in &states {
        let k = key(s);
        let Some(&l) = cost_to_go.get(&k) else {
            return Err(Error::config(format!(
                "task {task:?} unsolvable from {:?} on `{}`",
                s.loc, layout.id
            )));
        };
        if !s.has_passenger {
            if l > MAX_STEPS {
                return Err(Error::config(format!(
                    "task {task:?} on `{}` needs {l} steps from {:?}, over the {MAX_STEPS}-step limit",
                    layout.id, s.loc
                )));
            }
            max_steps = max_steps.max(l);
            total_return += DELIVERY_REWARD + STEP_PENALTY * l as f64;
            count += 1;
        }
    }
    Ok(TaxiOracle {
        task,
        cost_to_go,
        max_steps,
        mean_optimal_return: total_return / count as f64,
    })
}

/// Runs the oracle for all 12 tasks; fails if any is unsolvable within the
/// episode limit from any test-mode start.
pub fn certify_layout(layout: &GridLayout, directional: bool) -> Result<Vec<TaxiOracle>> {
    enumerate_taxi_tasks()
        .into_iter()
        .map(|task| taxi_oracle(layout, task, directional))
        .collect()
}
