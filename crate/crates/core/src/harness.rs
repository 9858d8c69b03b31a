//! Rollouts, training runs, evaluation and run aggregation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::a2c::{clip_global_norm, Adam, EnvStep, Trajectory};
use crate::config::{ExperimentConfig, Setup};
use crate::envs::{encode_observation, EnvKind};
use crate::error::{Error, Result};
use crate::net::{
    bptt_from_forward, heads_into, init_params, log_softmax, lstm_step_into, policy_greedy,
    policy_sample, AgentParams, ForwardPass, GradientBundle,
};
use crate::pomdp::{
    belief_update, condition_on_reset, sample_task, step_trial, BayesOracle, Belief, TaskSet,
};
use crate::regimes::build_agent_input_into;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// One played trial plus, optionally, the hidden vector after every step.
pub struct Rollout {
    pub traj: Trajectory,
    /// `len × hidden`, the state the policy acted on at each step.
    pub hidden: Option<Vec<f64>>,
    /// The same, before the step's input was consumed (after any reset).
    pub hidden_in: Option<Vec<f64>>,
    /// Activations of every step, ready for [`bptt_from_forward`].
    pub forward: ForwardPass,
}

/// Play one full trial of `task_id` with the agent.
pub fn run_trial<R: Rng + ?Sized>(
    p: &AgentParams,
    setup: &Setup,
    task_id: usize,
    mode: ActionMode,
    record_hidden: bool,
    rng: &mut R,
) -> Result<Rollout> {
    let ts = &setup.task_set;
    let rc = &setup.regime;
    if p.dims != setup.dims {
        return Err(Error::shape("parameter input dim", setup.dims.input, p.dims.input));
    }
    let hd = p.dims.hidden;
    let na = p.dims.actions;
    let mut traj = Trajectory::new(rc.input_dim(), task_id);
    let mut hidden = record_hidden.then(Vec::new);
    let mut hidden_in = record_hidden.then(Vec::new);

    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut h_next = vec![0.0; hd];
    let mut c_next = vec![0.0; hd];
    let mut tanh_c = vec![0.0; hd];
    let mut gates = vec![0.0; 4 * hd];
    let mut logits = vec![0.0; na];
    let mut x = Vec::with_capacity(rc.input_dim());
    let mut forward = ForwardPass::empty(hd, na);

    let mut st = ts.start_trial(task_id, rng);
    let mut obs = encode_observation(ts.encoding(), st.env_state, 0.0);
    let mut prev_action = None;
    let mut reset = true;
    loop {
        x.clear();
        build_agent_input_into(rc, &obs, prev_action, task_id, st.episode_index, &mut x)?;
        if let Some(hs) = hidden_in.as_mut() {
            hs.extend_from_slice(&h);
        }
        lstm_step_into(p, &x, &h, &c, &mut gates, &mut c_next, &mut tanh_c, &mut h_next);
        std::mem::swap(&mut h, &mut h_next);
        std::mem::swap(&mut c, &mut c_next);
        let value = heads_into(p, &h, &mut logits);
        forward.push(&gates, &c, &tanh_c, &h, &logits, value);
        let (action, log_prob) = match mode {
            ActionMode::Sample => policy_sample(&logits, rng),
            ActionMode::Greedy => policy_greedy(&logits),
        };
        let entropy = -log_softmax(&logits).iter().map(|l| l.exp() * l).sum::<f64>();
        if let Some(hs) = hidden.as_mut() {
            hs.extend_from_slice(&h);
        }

        let state_before = st.env_state;
        let out = step_trial(ts, &st, action, rng)?;
        traj.inputs.extend_from_slice(&x);
        traj.resets.push(reset);
        traj.actions.push(action);
        traj.log_probs.push(log_prob);
        traj.values.push(value);
        traj.entropies.push(entropy);
        traj.rewards.push(out.reward);
        traj.episode_index.push(st.episode_index);
        traj.env.push(EnvStep {
            state_before,
            landing_state: out.landing_state,
            observation: out.observation,
            state_after: out.state.env_state,
            episode_done: out.episode_done,
        });
        st = out.state;
        if out.trial_done {
            break;
        }
        reset = false;
        prev_action = Some(action);
        let mut reward_in = out.reward;
        if out.episode_done && rc.resets_between_episodes() {
            // RL¹: nothing from the finished episode reaches the next one
            h.iter_mut().chain(c.iter_mut()).for_each(|v| *v = 0.0);
            prev_action = None;
            reward_in = 0.0;
            reset = true;
        }
        obs = encode_observation(ts.encoding(), out.agent_observation, reward_in);
    }
    Ok(Rollout {
        traj,
        hidden,
        hidden_in,
        forward,
    })
}

/// Exact task beliefs aligned with the steps of a trajectory: entry `t` is the
/// posterior given everything the agent had seen when it acted at step `t`.
pub fn trajectory_beliefs(ts: &TaskSet, traj: &Trajectory) -> Result<Vec<Belief>> {
    let mut b = Belief::uniform(ts.task_count());
    if let Some(first) = traj.env.first() {
        b = condition_on_reset(&b, ts, first.state_before)?;
    }
    let mut out = Vec::with_capacity(traj.len());
    for (t, e) in traj.env.iter().enumerate() {
        out.push(b.clone());
        b = belief_update(
            &b,
            traj.actions[t],
            e.observation,
            traj.rewards[t],
            ts,
            e.state_before,
            e.landing_state,
        )?;
        if e.episode_done && t + 1 < traj.len() {
            b = condition_on_reset(&b, ts, e.state_after)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEval {
    pub task_id: usize,
    pub trials: usize,
    pub mean_return: f64,
    pub mean_timesteps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub rollouts: usize,
    pub mean_return: f64,
    pub mean_timesteps: f64,
    /// Standard error of `mean_return`.
    pub return_std_error: f64,
    pub per_task: Vec<TaskEval>,
}

fn summarize(ts: &TaskSet, trials: &[(usize, f64, usize)]) -> EvalResult {
    let n = trials.len() as f64;
    let mean_return = trials.iter().map(|t| t.1).sum::<f64>() / n;
    let mean_timesteps = trials.iter().map(|t| t.2 as f64).sum::<f64>() / n;
    let var = trials.iter().map(|t| (t.1 - mean_return).powi(2)).sum::<f64>() / n;
    let per_task = (0..ts.task_count())
        .map(|id| {
            let mine: Vec<_> = trials.iter().filter(|t| t.0 == id).collect();
            let k = mine.len().max(1) as f64;
            TaskEval {
                task_id: id,
                trials: mine.len(),
                mean_return: mine.iter().map(|t| t.1).sum::<f64>() / k,
                mean_timesteps: mine.iter().map(|t| t.2 as f64).sum::<f64>() / k,
            }
        })
        .collect();
    EvalResult {
        rollouts: trials.len(),
        mean_return,
        mean_timesteps,
        return_std_error: (var / n).sqrt(),
        per_task,
    }
}

/// Average undiscounted return and length over `n_rollouts` trials with
/// uniformly drawn tasks. Parameters are only read.
pub fn evaluate<R: Rng + ?Sized>(
    p: &AgentParams,
    setup: &Setup,
    n_rollouts: usize,
    mode: ActionMode,
    rng: &mut R,
) -> Result<EvalResult> {
    let mut trials = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let task = sample_task(rng, &setup.task_set);
        let r = run_trial(p, setup, task, mode, false, rng)?;
        trials.push((task, r.traj.total_reward(), r.traj.len()));
    }
    Ok(summarize(&setup.task_set, &trials))
}

/// Evaluate the exact belief-conditioned optimal policy, or with
/// `known_task` the policy that is told the task up front.
pub fn evaluate_oracle_policy<R: Rng + ?Sized>(
    ts: &TaskSet,
    n_rollouts: usize,
    known_task: bool,
    rng: &mut R,
) -> Result<EvalResult> {
    let mut oracle = BayesOracle::new(ts);
    let mut trials = Vec::with_capacity(n_rollouts);
    for _ in 0..n_rollouts {
        let task = sample_task(rng, ts);
        let mut st = ts.start_trial(task, rng);
        let mut b = if known_task {
            Belief::certain(ts.task_count(), task)
        } else {
            condition_on_reset(&Belief::uniform(ts.task_count()), ts, st.env_state)?
        };
        let (mut ret, mut steps) = (0.0, 0);
        while !st.trial_done {
            let a = oracle.best_action(&b, st.env_state, st.episode_index, st.step_in_episode)?;
            let out = step_trial(ts, &st, a, rng)?;
            b = belief_update(&b, a, out.observation, out.reward, ts, st.env_state, out.landing_state)?;
            if out.episode_done && !out.trial_done {
                b = condition_on_reset(&b, ts, out.state.env_state)?;
            }
            ret += out.reward;
            steps += 1;
            st = out.state;
        }
        trials.push((task, ret, steps));
    }
    Ok(summarize(ts, &trials))
}

/// How often the agent behaves like the known-task optimum once the first
/// episode is over.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualitativeStats {
    pub trials: usize,
    /// Fraction of steps in episodes ≥ 1 whose action is known-task optimal.
    pub later_optimal_action_rate: f64,
    /// Fraction of trials in which every step of episodes ≥ 1 is known-task optimal
    /// (for deterministic tasks: the shortest path every time).
    pub later_optimal_trial_rate: f64,
    /// Fraction of steps in episode 0 that are known-task optimal.
    pub first_episode_optimal_action_rate: f64,
}

pub fn qualitative_stats<R: Rng + ?Sized>(
    p: &AgentParams,
    setup: &Setup,
    n_trials: usize,
    mode: ActionMode,
    rng: &mut R,
) -> Result<QualitativeStats> {
    let ts = &setup.task_set;
    let mut oracle = BayesOracle::new(ts);
    let (mut later_steps, mut later_good, mut good_trials) = (0usize, 0usize, 0usize);
    let (mut first_steps, mut first_good) = (0usize, 0usize);
    for _ in 0..n_trials {
        let task = sample_task(rng, ts);
        let r = run_trial(p, setup, task, mode, false, rng)?;
        let certain = Belief::certain(ts.task_count(), task);
        let mut all_good = true;
        let mut step_in_episode = 0;
        for (t, e) in r.traj.env.iter().enumerate() {
            let episode = r.traj.episode_index[t];
            let best = oracle.best_action(&certain, e.state_before, episode, step_in_episode)?;
            let good = best == r.traj.actions[t];
            if episode == 0 {
                first_steps += 1;
                first_good += good as usize;
            } else {
                later_steps += 1;
                later_good += good as usize;
                all_good &= good;
            }
            step_in_episode = if e.episode_done { 0 } else { step_in_episode + 1 };
        }
        good_trials += all_good as usize;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(QualitativeStats {
        trials: n_trials,
        later_optimal_action_rate: ratio(later_good, later_steps),
        later_optimal_trial_rate: ratio(good_trials, n_trials),
        first_episode_optimal_action_rate: ratio(first_good, first_steps),
    })
}

/// Training metrics of one optimizer update (means over the batch of trials).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateRow {
    pub update: usize,
    pub mean_return: f64,
    pub mean_timesteps: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

pub const CSV_HEADER: &str = "update,mean_return,mean_timesteps,policy_loss,value_loss,entropy,grad_norm";

impl UpdateRow {
    /// CSV line matching [`CSV_HEADER`]; floats use shortest round-trip formatting.
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.update,
            self.mean_return,
            self.mean_timesteps,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.grad_norm
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSnapshot {
    /// Number of updates applied when the snapshot was taken.
    pub update: usize,
    pub trials_consumed: usize,
    pub mean_return: f64,
    pub mean_timesteps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub fingerprint: String,
    pub rows: Vec<UpdateRow>,
    pub snapshots: Vec<EvalSnapshot>,
    pub final_eval: EvalResult,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }
}

pub struct RunOutput {
    pub record: RunRecord,
    pub params: AgentParams,
}

/// Independent deterministic streams derived from a run seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const TRAIN_STREAM: u64 = 0;
const SNAPSHOT_STREAM: u64 = 1;
const FINAL_EVAL_STREAM: u64 = 2;

/// Collect one batch, backpropagate every trial, average, clip and step Adam.
pub fn train_update<R: Rng + ?Sized>(
    params: &mut AgentParams,
    opt: &mut Adam,
    cfg: &ExperimentConfig,
    setup: &Setup,
    update: usize,
    rng: &mut R,
) -> Result<UpdateRow> {
    let hp = &cfg.hyper;
    let spec = hp.loss_spec();
    let mut grad = GradientBundle::zeros(setup.dims);
    let mut row = UpdateRow {
        update,
        mean_return: 0.0,
        mean_timesteps: 0.0,
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        grad_norm: 0.0,
    };
    for _ in 0..hp.trials_per_update {
        let task = sample_task(rng, &setup.task_set);
        let r = run_trial(params, setup, task, ActionMode::Sample, false, rng)?;
        let loss = crate::a2c::a2c_loss(&r.traj, hp);
        row.mean_return += r.traj.total_reward();
        row.mean_timesteps += r.traj.len() as f64;
        row.policy_loss += loss.policy_loss;
        row.value_loss += loss.value_loss;
        row.entropy += loss.entropy;
        grad.add_assign(&bptt_from_forward(params, &r.traj, &r.forward, &spec)?)?;
    }
    let k = 1.0 / hp.trials_per_update as f64;
    grad.scale(k);
    row.mean_return *= k;
    row.mean_timesteps *= k;
    row.policy_loss *= k;
    row.value_loss *= k;
    row.entropy *= k;
    row.grad_norm = clip_global_norm(&mut grad, hp.grad_clip);
    opt.step(params, &grad)?;
    Ok(row)
}

/// Train one seed from scratch, snapshotting evaluation every `eval.every` updates.
pub fn train_run(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    train_run_with(cfg, seed, |_| {})
}

/// [`train_run`] with a callback after each evaluation snapshot.
pub fn train_run_with(
    cfg: &ExperimentConfig,
    seed: u64,
    mut on_snapshot: impl FnMut(&EvalSnapshot),
) -> Result<RunOutput> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let mode = if cfg.eval.greedy {
        ActionMode::Greedy
    } else {
        ActionMode::Sample
    };
    let mut rng = seeded_rng(seed, TRAIN_STREAM);
    let mut eval_rng = seeded_rng(seed, SNAPSHOT_STREAM);
    let mut params = init_params(setup.dims, cfg.init, &mut rng);
    let mut opt = Adam::new(&params, cfg.hyper.learning_rate, cfg.hyper.adam);
    let mut rows = Vec::with_capacity(cfg.hyper.total_updates);
    let mut snapshots = Vec::new();
    for update in 0..cfg.hyper.total_updates {
        rows.push(train_update(&mut params, &mut opt, cfg, &setup, update, &mut rng)?);
        let done = update + 1;
        if cfg.eval.every > 0 && done % cfg.eval.every == 0 {
            let e = evaluate(&params, &setup, cfg.eval.rollouts, mode, &mut eval_rng)?;
            let snap = EvalSnapshot {
                update: done,
                trials_consumed: done * cfg.hyper.trials_per_update,
                mean_return: e.mean_return,
                mean_timesteps: e.mean_timesteps,
            };
            on_snapshot(&snap);
            snapshots.push(snap);
        }
    }
    let final_eval = evaluate(
        &params,
        &setup,
        cfg.eval.rollouts,
        mode,
        &mut seeded_rng(seed, FINAL_EVAL_STREAM),
    )?;
    Ok(RunOutput {
        record: RunRecord {
            seed,
            fingerprint: cfg.fingerprint(),
            rows,
            snapshots,
            final_eval,
        },
        params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    /// Population statistics of a non-empty sample.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        Stat {
            mean,
            std,
            median,
            min: sorted[0],
            max: sorted[m - 1],
        }
    }
}

/// Pointwise mean ± std across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub updates: Vec<usize>,
    pub trials_consumed: Vec<usize>,
    pub mean_return: Vec<f64>,
    pub std_return: Vec<f64>,
    pub mean_timesteps: Vec<f64>,
    pub std_timesteps: Vec<f64>,
    pub final_return: Stat,
    pub final_timesteps: Stat,
}

pub fn aggregate_runs(records: &[RunRecord]) -> Result<Curve> {
    let first = records
        .first()
        .ok_or_else(|| Error::Usage("no runs to aggregate".into()))?;
    for r in records {
        if r.fingerprint != first.fingerprint {
            return Err(Error::Config(format!(
                "run with seed {} was trained with a different config",
                r.seed
            )));
        }
        if r.snapshots.len() != first.snapshots.len() {
            return Err(Error::Usage("runs have different snapshot counts".into()));
        }
    }
    let n = first.snapshots.len();
    let mut curve = Curve {
        updates: first.snapshots.iter().map(|s| s.update).collect(),
        trials_consumed: first.snapshots.iter().map(|s| s.trials_consumed).collect(),
        mean_return: Vec::with_capacity(n),
        std_return: Vec::with_capacity(n),
        mean_timesteps: Vec::with_capacity(n),
        std_timesteps: Vec::with_capacity(n),
        final_return: Stat::of(&records.iter().map(|r| r.final_eval.mean_return).collect::<Vec<_>>()),
        final_timesteps: Stat::of(
            &records.iter().map(|r| r.final_eval.mean_timesteps).collect::<Vec<_>>(),
        ),
    };
    for i in 0..n {
        let ret = Stat::of(&records.iter().map(|r| r.snapshots[i].mean_return).collect::<Vec<_>>());
        let len = Stat::of(&records.iter().map(|r| r.snapshots[i].mean_timesteps).collect::<Vec<_>>());
        curve.mean_return.push(ret.mean);
        curve.std_return.push(ret.std);
        curve.mean_timesteps.push(len.mean);
        curve.std_timesteps.push(len.std);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    pub episode: usize,
    /// Corridor cell (bandit: always 0) before the action.
    pub state: usize,
    pub action: usize,
    pub action_prob: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorTrace {
    pub env: EnvKind,
    pub task_id: usize,
    pub rows: Vec<TraceRow>,
}

impl BehaviorTrace {
    /// Actions taken in one episode.
    pub fn episode_actions(&self, episode: usize) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.episode == episode)
            .map(|r| r.action)
            .collect()
    }
}

impl fmt::Display for BehaviorTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# {} task {}", self.env, self.task_id)?;
        let mut current = usize::MAX;
        for r in &self.rows {
            if r.episode != current {
                current = r.episode;
                writeln!(f, "episode {}", r.episode)?;
            }
            let action = match (self.env, r.action) {
                (EnvKind::Bandit, a) => format!("arm {a}"),
                (EnvKind::Corridor, 0) => "left".to_string(),
                (EnvKind::Corridor, _) => "right".to_string(),
            };
            let place = match self.env {
                EnvKind::Bandit => String::new(),
                EnvKind::Corridor => format!("cell {:>2}  ", r.state),
            };
            writeln!(
                f,
                "  t={:<3} {place}{action:<6} p={:.3}  r={}",
                r.t, r.action_prob, r.reward
            )?;
        }
        Ok(())
    }
}

/// Play one trial of `task_id` and record what the agent did at every step.
pub fn behavior_trace<R: Rng + ?Sized>(
    p: &AgentParams,
    setup: &Setup,
    task_id: usize,
    mode: ActionMode,
    rng: &mut R,
) -> Result<BehaviorTrace> {
    if task_id >= setup.task_set.task_count() {
        return Err(Error::Usage(format!("task {task_id} does not exist")));
    }
    let r = run_trial(p, setup, task_id, mode, false, rng)?;
    let rows = (0..r.traj.len())
        .map(|t| TraceRow {
            t,
            episode: r.traj.episode_index[t],
            state: r.traj.env[t].state_before,
            action: r.traj.actions[t],
            action_prob: r.traj.log_probs[t].exp(),
            reward: r.traj.rewards[t],
        })
        .collect();
    Ok(BehaviorTrace {
        env: setup.env,
        task_id,
        rows,
    })
}
