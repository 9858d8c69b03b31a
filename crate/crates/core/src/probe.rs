//! Linear decoding of exact task beliefs from agent hidden states.
//!
//! Hidden vectors are the LSTM output the policy acts on at each step; the
//! paired target is the exact Bayes belief given everything the agent had
//! observed at that point. Trials, not timesteps, are split between fitting
//! and held-out evaluation.

use std::collections::{BTreeSet, HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::config::Setup;
use crate::error::{Error, Result};
use crate::harness::{run_trial, trajectory_beliefs, ActionMode};
use crate::net::AgentParams;
use crate::pomdp::{belief_update, condition_on_reset, Belief, TaskSet};

pub const RIDGE_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct StateBeliefPairs {
    pub hidden_dim: usize,
    pub task_count: usize,
    /// `rows × hidden_dim`
    pub hidden: Vec<f64>,
    /// `rows × task_count`
    pub beliefs: Vec<f64>,
    /// Trial index of every row.
    pub trial: Vec<usize>,
    /// Row belongs to a held-out trial.
    pub heldout: Vec<bool>,
}

impl StateBeliefPairs {
    pub fn rows(&self) -> usize {
        self.trial.len()
    }

    pub fn hidden_row(&self, i: usize) -> &[f64] {
        &self.hidden[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    pub fn belief_row(&self, i: usize) -> &[f64] {
        &self.beliefs[i * self.task_count..(i + 1) * self.task_count]
    }

    /// Distinct belief vectors present, sorted.
    pub fn distinct_beliefs(&self) -> Vec<Vec<f64>> {
        let set: BTreeSet<Vec<u64>> = (0..self.rows())
            .map(|i| self.belief_row(i).iter().map(|p| p.to_bits()).collect())
            .collect();
        set.into_iter()
            .map(|b| b.into_iter().map(f64::from_bits).collect())
            .collect()
    }

    /// Build from explicit rows; trials at or after `first_heldout` are held out.
    pub fn from_rows(
        hidden_dim: usize,
        task_count: usize,
        hidden: Vec<f64>,
        beliefs: Vec<f64>,
        trial: Vec<usize>,
        first_heldout: usize,
    ) -> Result<Self> {
        let n = trial.len();
        if hidden.len() != n * hidden_dim {
            return Err(Error::shape("hidden rows", n * hidden_dim, hidden.len()));
        }
        if beliefs.len() != n * task_count {
            return Err(Error::shape("belief rows", n * task_count, beliefs.len()));
        }
        let heldout = trial.iter().map(|&t| t >= first_heldout).collect();
        Ok(StateBeliefPairs {
            hidden_dim,
            task_count,
            hidden,
            beliefs,
            trial,
            heldout,
        })
    }
}

/// Roll out `n_trials` (tasks alternate so both are equally represented) and
/// record `(hidden state, exact belief)` at every step.
pub fn collect_pairs<R: Rng + ?Sized>(
    p: &AgentParams,
    setup: &Setup,
    n_trials: usize,
    holdout: f64,
    rng: &mut R,
) -> Result<StateBeliefPairs> {
    let ts = &setup.task_set;
    let hd = p.dims.hidden;
    let (mut hidden, mut beliefs, mut trial) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n_trials {
        let task = i % ts.task_count();
        let r = run_trial(p, setup, task, ActionMode::Sample, true, rng)?;
        let h = r.hidden.expect("hidden states recorded");
        let bs = trajectory_beliefs(ts, &r.traj)?;
        debug_assert_eq!(h.len(), bs.len() * hd);
        hidden.extend_from_slice(&h);
        for b in &bs {
            beliefs.extend_from_slice(b.probs());
        }
        trial.extend(std::iter::repeat_n(i, bs.len()));
    }
    let n_heldout = ((n_trials as f64 * holdout).round() as usize).clamp(1, n_trials.max(1));
    StateBeliefPairs::from_rows(
        hd,
        ts.task_count(),
        hidden,
        beliefs,
        trial,
        n_trials.saturating_sub(n_heldout),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecoderFit {
    /// One weight per hidden unit.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub r2_train: f64,
    pub r2_heldout: f64,
    pub train_rows: usize,
    pub heldout_rows: usize,
}

impl DecoderFit {
    pub fn predict(&self, h: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
    }
}

fn r_squared(pred: &[f64], target: &[f64], what: &str) -> Result<f64> {
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot <= 1e-12 * n {
        return Err(Error::DegenerateTarget(format!("{what} belief targets are constant")));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Ridge-regularized least squares from hidden state to the first belief
/// coordinate, fit on training trials and scored on held-out trials.
pub fn fit_linear_decoder(pairs: &StateBeliefPairs) -> Result<DecoderFit> {
    let hd = pairs.hidden_dim;
    let rows = pairs.rows();
    if rows < 10 * hd {
        return Err(Error::Usage(format!(
            "decoder needs at least {} rows for {hd} hidden units, got {rows}",
            10 * hd
        )));
    }
    let (train, test): (Vec<usize>, Vec<usize>) = (0..rows).partition(|&i| !pairs.heldout[i]);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Usage("both training and held-out rows are required".into()));
    }
    let design = |idx: &[usize]| {
        DMatrix::from_fn(idx.len(), hd + 1, |r, c| {
            if c < hd {
                pairs.hidden_row(idx[r])[c]
            } else {
                1.0
            }
        })
    };
    let target = |idx: &[usize]| DVector::from_iterator(idx.len(), idx.iter().map(|&i| pairs.belief_row(i)[0]));

    let (x, y) = (design(&train), target(&train));
    let mut gram = x.transpose() * &x;
    for d in 0..=hd {
        gram[(d, d)] += RIDGE_LAMBDA;
    }
    let rhs = x.transpose() * &y;
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::DegenerateTarget("normal equations are not positive definite".into()))?
        .solve(&rhs);

    let r2_train = r_squared((&x * &w).as_slice(), y.as_slice(), "training")?;
    let (xt, yt) = (design(&test), target(&test));
    let r2_heldout = r_squared((&xt * &w).as_slice(), yt.as_slice(), "held-out")?;
    Ok(DecoderFit {
        weights: w.as_slice()[..hd].to_vec(),
        bias: w[hd],
        r2_train,
        r2_heldout,
        train_rows: train.len(),
        heldout_rows: test.len(),
    })
}

/// Every belief the exact filter can produce within one trial, by breadth-first
/// search over `(belief, state, episode, step)` nodes reachable under any actions.
pub fn reachable_beliefs(ts: &TaskSet) -> Result<Vec<Vec<f64>>> {
    const CAP: usize = 1_000_000;
    let prior = Belief::uniform(ts.task_count());
    let mut seen_nodes = HashSet::new();
    let mut beliefs = BTreeSet::new();
    let mut queue = VecDeque::new();
    for (s0, _) in ts.task(0).initial_dist().iter().enumerate().filter(|(_, &p)| p > 0.0) {
        queue.push_back((condition_on_reset(&prior, ts, s0)?, s0, 0usize, 0usize));
    }
    let key = |b: &Belief| b.probs().iter().map(|p| p.to_bits()).collect::<Vec<u64>>();
    while let Some((b, s, episode, step)) = queue.pop_front() {
        if !seen_nodes.insert((key(&b), s, episode, step)) {
            continue;
        }
        if seen_nodes.len() > CAP {
            return Err(Error::SearchSpace {
                visited: seen_nodes.len(),
                cap: CAP,
            });
        }
        beliefs.insert(key(&b));
        for a in 0..ts.action_count() {
            for (task, &p) in ts.tasks().iter().zip(b.probs()) {
                if p == 0.0 {
                    continue;
                }
                for (next, &pt) in task.transition_row(s, a).iter().enumerate() {
                    if pt == 0.0 {
                        continue;
                    }
                    let r = task.reward(s, a, next);
                    for (o, &po) in task.observation_row(a, next).iter().enumerate() {
                        if po == 0.0 {
                            continue;
                        }
                        let post = belief_update(&b, a, o, r, ts, s, next)?;
                        let ended = task.is_terminal(next)
                            || ts.step_cap().is_some_and(|cap| step + 1 >= cap);
                        if !ended {
                            queue.push_back((post, next, episode, step + 1));
                        } else if episode + 1 < ts.episodes_per_trial() {
                            for (s0, &d) in task.initial_dist().iter().enumerate() {
                                if d > 0.0 {
                                    let b0 = condition_on_reset(&post, ts, s0)?;
                                    queue.push_back((b0, s0, episode + 1, 0));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(beliefs
        .into_iter()
        .map(|b| b.into_iter().map(f64::from_bits).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_bandit, make_corridor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synthetic(hd: usize, trials: usize, steps: usize, noise_only: bool) -> StateBeliefPairs {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let map: Vec<f64> = (0..hd * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut h, mut b, mut tr) = (vec![], vec![], vec![]);
        for t in 0..trials {
            for _ in 0..steps {
                let p0: f64 = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
                let belief = [p0, 1.0 - p0];
                for k in 0..hd {
                    h.push(if noise_only {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        map[2 * k] * belief[0] + map[2 * k + 1] * belief[1]
                    });
                }
                b.extend_from_slice(&belief);
                tr.push(t);
            }
        }
        StateBeliefPairs::from_rows(hd, 2, h, b, tr, trials * 3 / 4).unwrap()
    }

    #[test]
    fn exact_linear_embedding_is_recovered() {
        let fit = fit_linear_decoder(&synthetic(8, 40, 10, false)).unwrap();
        assert!((fit.r2_heldout - 1.0).abs() <= 1e-6, "{}", fit.r2_heldout);
    }

    #[test]
    fn independent_noise_is_not_decodable() {
        let pairs = synthetic(48, 200, 10, true);
        let fit = fit_linear_decoder(&pairs).unwrap();
        assert!(fit.r2_heldout <= 0.05, "{}", fit.r2_heldout);
        assert!(fit.r2_train >= fit.r2_heldout - 1e-9);
    }

    #[test]
    fn too_few_rows() {
        let pairs = synthetic(48, 4, 10, true);
        assert!(matches!(fit_linear_decoder(&pairs), Err(Error::Usage(_))));
    }

    #[test]
    fn constant_targets_are_flagged() {
        let hd = 2;
        let n = 40;
        let pairs = StateBeliefPairs::from_rows(
            hd,
            2,
            (0..n * hd).map(|i| (i as f64).sin()).collect(),
            [0.5, 0.5].repeat(n),
            (0..n).map(|i| i / 4).collect(),
            8,
        )
        .unwrap();
        assert!(matches!(fit_linear_decoder(&pairs), Err(Error::DegenerateTarget(_))));
    }

    #[test]
    fn bandit_reachable_beliefs() {
        let got = reachable_beliefs(&make_bandit()).unwrap();
        assert_eq!(got, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
    }

    #[test]
    fn corridor_reachable_beliefs() {
        let got = reachable_beliefs(&make_corridor(11, 5, 50).unwrap()).unwrap();
        assert_eq!(got.len(), 3);
    }
}
