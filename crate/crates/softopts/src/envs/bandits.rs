//! Moving Bandits: two marked positions in a continuous arena, one of which
//! (not signaled in the observation) pays reward 1 per step while the agent
//! is close enough. Episodes last 50 steps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const MAX_STEPS: u32 = 50;
pub const ARENA_SIZE: f64 = 10.0;
pub const MOVE_STEP: f64 = 0.5;
pub const PROXIMITY_THRESHOLD: f64 = 1.0;
/// Goals are resampled until at least this far apart, so the proximity balls
/// never overlap and "which goal was reached" stays well defined.
pub const MIN_GOAL_SEPARATION: f64 = 2.5;

pub const BANDITS_ACTIONS: usize = 4; // N, E, S, W

/// Which of the two marked positions pays reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BanditsTask {
    pub goal_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditsState {
    pub agent: (f64, f64),
    pub goals: [(f64, f64); 2],
    pub steps: u32,
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Fresh episode: two well-separated goal positions, agent at the arena
/// center.
pub fn reset_bandits(rng: &mut ChaCha8Rng) -> BanditsState {
    let sample = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        (rng.gen_range(0.0..ARENA_SIZE), rng.gen_range(0.0..ARENA_SIZE))
    };
    let g0 = sample(rng);
    let mut g1 = sample(rng);
    while distance(g0, g1) < MIN_GOAL_SEPARATION {
        g1 = sample(rng);
    }
    BanditsState {
        agent: (ARENA_SIZE / 2.0, ARENA_SIZE / 2.0),
        goals: [g0, g1],
        steps: 0,
    }
}

/// Moves the agent one step in a cardinal direction (clipped to the arena);
/// pays 1 iff the agent is within the threshold of the rewarded goal.
pub fn step_bandits(
    task: BanditsTask,
    state: &BanditsState,
    action: usize,
) -> Result<(BanditsState, f64, bool)> {
    if action >= BANDITS_ACTIONS {
        return Err(Error::usage(format!("bandits action {action} out of range")));
    }
    let mut next = *state;
    next.steps += 1;
    let (dx, dy) = match action {
        0 => (0.0, MOVE_STEP),
        1 => (MOVE_STEP, 0.0),
        2 => (0.0, -MOVE_STEP),
        3 => (-MOVE_STEP, 0.0),
        _ => unreachable!(),
    };
    next.agent.0 = (next.agent.0 + dx).clamp(0.0, ARENA_SIZE);
    next.agent.1 = (next.agent.1 + dy).clamp(0.0, ARENA_SIZE);
    let reward = if distance(next.agent, next.goals[task.goal_index]) < PROXIMITY_THRESHOLD {
        1.0
    } else {
        0.0
    };
    Ok((next, reward, next.steps >= MAX_STEPS))
}

/// Agent position plus both goal positions, scaled to [0, 1]. Which goal pays
/// is never observable.
pub fn bandits_observation(state: &BanditsState) -> Vec<f64> {
    vec![
        state.agent.0 / ARENA_SIZE,
        state.agent.1 / ARENA_SIZE,
        state.goals[0].0 / ARENA_SIZE,
        state.goals[0].1 / ARENA_SIZE,
        state.goals[1].0 / ARENA_SIZE,
        state.goals[1].1 / ARENA_SIZE,
    ]
}

pub const BANDITS_OBS_DIM: usize = 6;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn on_goal_pays_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = reset_bandits(&mut rng);
        state.agent = state.goals[1];
        let (_, r, _) = step_bandits(BanditsTask { goal_index: 1 }, &state, 0).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn far_from_both_goals_pays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = reset_bandits(&mut rng);
        state.goals = [(0.0, 0.0), (10.0, 10.0)];
        state.agent = (5.0, 5.0);
        let (_, r, _) = step_bandits(BanditsTask { goal_index: 0 }, &state, 0).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn wrong_goal_pays_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = reset_bandits(&mut rng);
        state.agent = state.goals[0];
        let (_, r, _) = step_bandits(BanditsTask { goal_index: 1 }, &state, 3).unwrap();
        assert_eq!(r, 0.0, "only the rewarded goal pays");
    }

    #[test]
    fn goals_are_distinct_and_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = reset_bandits(&mut rng);
            assert!(distance(s.goals[0], s.goals[1]) >= MIN_GOAL_SEPARATION);
        }
    }

    #[test]
    fn movement_is_clipped_to_arena() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = reset_bandits(&mut rng);
        state.agent = (0.2, 9.9);
        let (next, _, _) = step_bandits(BanditsTask { goal_index: 0 }, &state, 3).unwrap();
        assert_eq!(next.agent.0, 0.0);
        let (next, _, _) = step_bandits(BanditsTask { goal_index: 0 }, &state, 0).unwrap();
        assert_eq!(next.agent.1, ARENA_SIZE);
    }

    #[test]
    fn episode_ends_at_fifty_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = reset_bandits(&mut rng);
        state.steps = 49;
        let (_, _, done) = step_bandits(BanditsTask { goal_index: 0 }, &state, 0).unwrap();
        assert!(done);
    }

    #[test]
    fn observation_is_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let state = reset_bandits(&mut rng);
        let obs = bandits_observation(&state);
        assert_eq!(obs.len(), BANDITS_OBS_DIM);
        assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(obs[0], 0.5);
        assert_eq!(obs[1], 0.5);
    }
}
