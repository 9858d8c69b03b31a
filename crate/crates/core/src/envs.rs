//! The two experimental environments: a two-armed dependent bandit and a
//! one-dimensional corridor with a goal at either end.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pomdp::{ObservationEncoding, Task, TaskSet, TaskTables};

pub const BANDIT_EPISODES: usize = 10;
pub const BANDIT_DISCOUNT: f64 = 0.80;
pub const CORRIDOR_EPISODES: usize = 2;
pub const CORRIDOR_DISCOUNT: f64 = 0.90;
pub const CORRIDOR_GOAL_REWARD: f64 = 10.0;

pub const DEFAULT_CORRIDOR_LENGTH: usize = 11;
pub const DEFAULT_CORRIDOR_START: usize = 5;
pub const DEFAULT_CORRIDOR_STEP_CAP: usize = 50;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Bandit,
    Corridor,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bandit" => Ok(EnvKind::Bandit),
            "corridor" => Ok(EnvKind::Corridor),
            other => Err(Error::Config(format!(
                "unknown env `{other}` (expected bandit or corridor)"
            ))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvKind::Bandit => "bandit",
            EnvKind::Corridor => "corridor",
        })
    }
}

/// Two-armed bandit where task `i` pays +1 deterministically on arm `i`.
/// Every pull is one episode; a trial is ten pulls.
pub fn make_bandit() -> TaskSet {
    make_bandit_with(BANDIT_EPISODES, BANDIT_DISCOUNT).expect("default bandit is valid")
}

pub fn make_bandit_with(episodes_per_trial: usize, discount: f64) -> Result<TaskSet> {
    // state 0: ready to pull, state 1: pulled (terminal)
    let tasks = (0..2)
        .map(|id| {
            let mut reward = vec![0.0; 2 * 2 * 2];
            // reward[(s * A + a) * S + s']
            reward[id * 2 + 1] = 1.0;
            Task::new(
                id,
                TaskTables {
                    state_count: 2,
                    action_count: 2,
                    observation_count: 1,
                    transition: vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
                    reward,
                    initial_dist: vec![1.0, 0.0],
                    observation: vec![1.0; 4],
                    terminal: vec![false, true],
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSet::new(
        tasks,
        episodes_per_trial,
        discount,
        None,
        ObservationEncoding::RewardOnly,
    )
}

/// Corridor of `length` cells; the agent spawns at `start` and the goal is
/// cell 0 for task 0 and cell `length - 1` for task 1. Moves are deterministic
/// and clamp at the walls. Entering the goal pays +10 and ends the episode.
pub fn make_corridor(length: usize, start: usize, step_cap: usize) -> Result<TaskSet> {
    make_corridor_with(length, start, step_cap, CORRIDOR_EPISODES, CORRIDOR_DISCOUNT)
}

pub fn make_corridor_with(
    length: usize,
    start: usize,
    step_cap: usize,
    episodes_per_trial: usize,
    discount: f64,
) -> Result<TaskSet> {
    if length < 3 || start == 0 || start >= length - 1 {
        return Err(Error::Config(format!(
            "corridor start {start} must lie strictly between the goals of a corridor of length {length}"
        )));
    }
    if step_cap == 0 {
        return Err(Error::Config("corridor step cap must be positive".into()));
    }
    let n = length;
    let tasks = [0, n - 1]
        .into_iter()
        .enumerate()
        .map(|(id, goal)| {
            let mut transition = vec![0.0; n * 2 * n];
            let mut reward = vec![0.0; n * 2 * n];
            for s in 0..n {
                for a in [LEFT, RIGHT] {
                    let next = match a {
                        LEFT => s.saturating_sub(1),
                        _ => (s + 1).min(n - 1),
                    };
                    transition[(s * 2 + a) * n + next] = 1.0;
                    if next == goal && s != goal {
                        reward[(s * 2 + a) * n + next] = CORRIDOR_GOAL_REWARD;
                    }
                }
            }
            let mut initial_dist = vec![0.0; n];
            initial_dist[start] = 1.0;
            let mut observation = vec![0.0; 2 * n * n];
            for a in 0..2 {
                for s in 0..n {
                    observation[(a * n + s) * n + s] = 1.0;
                }
            }
            let mut terminal = vec![false; n];
            terminal[goal] = true;
            Task::new(
                id,
                TaskTables {
                    state_count: n,
                    action_count: 2,
                    observation_count: n,
                    transition,
                    reward,
                    initial_dist,
                    observation,
                    terminal,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSet::new(
        tasks,
        episodes_per_trial,
        discount,
        Some(step_cap),
        ObservationEncoding::OneHot { len: n },
    )
}

/// Agent-facing observation: location one-hot (empty for the bandit)
/// followed by the last reward, unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector(pub Vec<f64>);

impl ObservationVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reward(&self) -> f64 {
        *self.0.last().expect("observation vectors carry a reward")
    }
}

pub fn observation_dim(encoding: ObservationEncoding) -> usize {
    encoding.location_dim() + 1
}

pub fn encode_observation(
    encoding: ObservationEncoding,
    location: usize,
    reward: f64,
) -> ObservationVector {
    let mut v = vec![0.0; observation_dim(encoding)];
    if let ObservationEncoding::OneHot { len } = encoding {
        assert!(location < len, "location {location} outside one-hot of length {len}");
        v[location] = 1.0;
    }
    *v.last_mut().unwrap() = reward;
    ObservationVector(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{bayes_optimal_return, known_task_optimum, step_trial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn bandit_reward_identity() {
        let ts = make_bandit();
        let mut rng = rng();
        for task in 0..2 {
            for arm in 0..2 {
                let st = ts.start_trial(task, &mut rng);
                let out = step_trial(&ts, &st, arm, &mut rng).unwrap();
                assert_eq!(out.reward, if arm == task { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn bandit_trial_is_ten_pulls() {
        let ts = make_bandit();
        let mut rng = rng();
        let mut st = ts.start_trial(0, &mut rng);
        let mut pulls = 0;
        while !st.trial_done {
            let out = step_trial(&ts, &st, pulls % 2, &mut rng).unwrap();
            assert!(out.episode_done);
            st = out.state;
            pulls += 1;
        }
        assert_eq!(pulls, 10);
    }

    #[test]
    fn corridor_moves() {
        let ts = make_corridor(11, 5, 50).unwrap();
        let mut rng = rng();
        let st = ts.start_trial(0, &mut rng);
        let out = step_trial(&ts, &st, RIGHT, &mut rng).unwrap();
        assert_eq!((out.state.env_state, out.reward, out.episode_done), (6, 0.0, false));
    }

    #[test]
    fn corridor_reachability() {
        let ts = make_corridor(11, 5, 50).unwrap();
        for (task, action) in [(0, LEFT), (1, RIGHT)] {
            let mut rng = rng();
            let mut st = ts.start_trial(task, &mut rng);
            for step in 1..=5 {
                let out = step_trial(&ts, &st, action, &mut rng).unwrap();
                assert_eq!(out.episode_done, step == 5);
                st = out.state;
            }
            assert_eq!(st.episode_index, 1);
        }
    }

    #[test]
    fn corridor_step_cap_forces_reset() {
        let ts = make_corridor(11, 5, 50).unwrap();
        let mut rng = rng();
        let mut st = ts.start_trial(0, &mut rng);
        for step in 1..=50 {
            // bounce against the right wall, never reaching the left goal
            let out = step_trial(&ts, &st, RIGHT, &mut rng).unwrap();
            assert_eq!(out.reward, 0.0);
            assert_eq!(out.episode_done, step == 50);
            if step == 50 {
                assert!(out.capped);
            }
            st = out.state;
        }
        assert_eq!(st.episode_index, 1);
        assert_eq!(st.env_state, 5);
    }

    #[test]
    fn corridor_geometry_validation() {
        assert!(matches!(make_corridor(11, 0, 50), Err(Error::Config(_))));
        assert!(matches!(make_corridor(11, 10, 50), Err(Error::Config(_))));
        assert!(matches!(make_corridor(2, 1, 50), Err(Error::Config(_))));
        assert!(matches!(make_corridor(11, 5, 0), Err(Error::Config(_))));
    }

    #[test]
    fn mirrored_corridor_has_mirrored_statistics() {
        let left = make_corridor(11, 3, 50).unwrap();
        let right = make_corridor(11, 7, 50).unwrap();
        let (a, b) = (
            bayes_optimal_return(&left).unwrap(),
            bayes_optimal_return(&right).unwrap(),
        );
        assert!((a.expected_timesteps - b.expected_timesteps).abs() < 1e-12);
        let (ka, kb) = (known_task_optimum(&left).unwrap(), known_task_optimum(&right).unwrap());
        assert_eq!(ka.per_task[0], kb.per_task[1]);
        assert_eq!(ka.per_task[1], kb.per_task[0]);
    }

    #[test]
    fn observation_encoding() {
        let enc = ObservationEncoding::OneHot { len: 11 };
        let v = encode_observation(enc, 4, 0.0);
        let mut want = vec![0.0; 12];
        want[4] = 1.0;
        assert_eq!(v.0, want);
        let v = encode_observation(enc, 0, 10.0);
        assert_eq!(v.reward(), 10.0);
        assert_eq!(v.0.iter().filter(|&&x| x == 1.0).count(), 1);
        let v = encode_observation(ObservationEncoding::RewardOnly, 0, 1.0);
        assert_eq!(v.0, vec![1.0]);
    }

    #[test]
    fn observation_shape_is_constant_over_a_trial() {
        let ts = make_corridor(11, 5, 50).unwrap();
        let mut rng = rng();
        let mut st = ts.start_trial(1, &mut rng);
        let mut dims = vec![];
        while !st.trial_done {
            let out = step_trial(&ts, &st, RIGHT, &mut rng).unwrap();
            dims.push(encode_observation(ts.encoding(), out.agent_observation, out.reward).len());
            st = out.state;
        }
        assert!(dims.iter().all(|&d| d == 12));
    }
}
