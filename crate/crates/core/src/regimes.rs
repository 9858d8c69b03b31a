//! RL² and RL¹ training regimes: what the network sees and what it remembers.
//!
//! RL² keeps the LSTM state across the episodes of a trial and never sees the
//! task identity. RL¹ wipes the LSTM state at every episode boundary and, from
//! the second episode on, appends a one-hot task identity to every input.

use serde::Serialize;

use crate::envs::ObservationVector;
use crate::error::{Error, Result};
use crate::net::AgentState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    Rl2,
    Rl1,
}

impl std::str::FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl2" => Ok(RegimeKind::Rl2),
            "rl1" => Ok(RegimeKind::Rl1),
            other => Err(Error::Config(format!(
                "unknown regime `{other}` (expected rl2 or rl1)"
            ))),
        }
    }
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegimeKind::Rl2 => "rl2",
            RegimeKind::Rl1 => "rl1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegimeConfig {
    pub kind: RegimeKind,
    pub action_count: usize,
    /// Length of the observation vector (location one-hot plus reward).
    pub observation_dim: usize,
    pub task_count: usize,
}

impl RegimeConfig {
    pub fn input_dim(&self) -> usize {
        let base = self.observation_dim + self.action_count;
        match self.kind {
            RegimeKind::Rl2 => base,
            RegimeKind::Rl1 => base + self.task_count,
        }
    }

    /// Whether episode boundaries sever the agent's memory.
    pub fn resets_between_episodes(&self) -> bool {
        self.kind == RegimeKind::Rl1
    }
}

/// Concatenate `[observation ++ onehot(prev_action) (++ identity slot)]`.
///
/// The observation vector already ends with the previous reward. The RL¹
/// identity slot is all zeros during episode 0 and `onehot(task_id)` after.
pub fn build_agent_input(
    rc: &RegimeConfig,
    obs: &ObservationVector,
    prev_action: Option<usize>,
    task_id: usize,
    episode_index: usize,
) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(rc.input_dim());
    build_agent_input_into(rc, obs, prev_action, task_id, episode_index, &mut x)?;
    Ok(x)
}

pub(crate) fn build_agent_input_into(
    rc: &RegimeConfig,
    obs: &ObservationVector,
    prev_action: Option<usize>,
    task_id: usize,
    episode_index: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    if obs.len() != rc.observation_dim {
        return Err(Error::shape("observation vector", rc.observation_dim, obs.len()));
    }
    if let Some(a) = prev_action {
        if a >= rc.action_count {
            return Err(Error::shape("previous action", rc.action_count, a));
        }
    }
    out.extend_from_slice(obs.as_slice());
    out.extend((0..rc.action_count).map(|a| if prev_action == Some(a) { 1.0 } else { 0.0 }));
    if rc.kind == RegimeKind::Rl1 {
        if task_id >= rc.task_count {
            return Err(Error::shape("task id", rc.task_count, task_id));
        }
        let revealed = episode_index >= 1;
        out.extend(
            (0..rc.task_count).map(|i| if revealed && i == task_id { 1.0 } else { 0.0 }),
        );
    }
    Ok(())
}

/// Hidden-state handling when an episode ends but the trial continues.
pub fn on_episode_boundary(rc: &RegimeConfig, s: AgentState) -> AgentState {
    match rc.kind {
        RegimeKind::Rl2 => s,
        RegimeKind::Rl1 => AgentState::zeros(s.h.len()),
    }
}

/// Hidden state at the start of every trial, in both regimes.
pub fn on_trial_start(hidden: usize) -> AgentState {
    AgentState::zeros(hidden)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::encode_observation;
    use crate::pomdp::ObservationEncoding;

    fn bandit_rc(kind: RegimeKind) -> RegimeConfig {
        RegimeConfig {
            kind,
            action_count: 2,
            observation_dim: 1,
            task_count: 2,
        }
    }

    fn corridor_rc(kind: RegimeKind) -> RegimeConfig {
        RegimeConfig {
            kind,
            action_count: 2,
            observation_dim: 12,
            task_count: 2,
        }
    }

    #[test]
    fn rl2_bandit_first_input() {
        let rc = bandit_rc(RegimeKind::Rl2);
        let obs = encode_observation(ObservationEncoding::RewardOnly, 0, 0.0);
        let x = build_agent_input(&rc, &obs, None, 1, 0).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 0.0]);
        let obs = encode_observation(ObservationEncoding::RewardOnly, 0, 1.0);
        let x = build_agent_input(&rc, &obs, Some(1), 1, 1).unwrap();
        assert_eq!(x, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn rl1_identity_slot_revealed_after_first_episode() {
        let rc = corridor_rc(RegimeKind::Rl1);
        let obs = encode_observation(ObservationEncoding::OneHot { len: 11 }, 5, 0.0);
        let x = build_agent_input(&rc, &obs, None, 0, 0).unwrap();
        assert_eq!(x.len(), 16);
        assert_eq!(&x[14..], &[0.0, 0.0]);
        let x = build_agent_input(&rc, &obs, None, 0, 1).unwrap();
        assert_eq!(&x[14..], &[1.0, 0.0]);
    }

    #[test]
    fn rl1_input_is_rl2_plus_task_count() {
        for (a, b) in [
            (bandit_rc(RegimeKind::Rl1), bandit_rc(RegimeKind::Rl2)),
            (corridor_rc(RegimeKind::Rl1), corridor_rc(RegimeKind::Rl2)),
        ] {
            assert_eq!(a.input_dim(), b.input_dim() + 2);
        }
    }

    #[test]
    fn mismatched_observation_is_shape_error() {
        let rc = corridor_rc(RegimeKind::Rl2);
        let obs = encode_observation(ObservationEncoding::RewardOnly, 0, 0.0);
        assert!(matches!(
            build_agent_input(&rc, &obs, None, 0, 0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn boundary_handling() {
        let s = AgentState {
            h: vec![0.3; 4],
            c: vec![-0.7; 4],
        };
        assert_eq!(on_episode_boundary(&bandit_rc(RegimeKind::Rl2), s.clone()), s);
        assert_eq!(
            on_episode_boundary(&bandit_rc(RegimeKind::Rl1), s),
            AgentState::zeros(4)
        );
        assert_eq!(on_trial_start(4), AgentState::zeros(4));
    }
}
