//! Multi-task episodic POMDPs with trial/episode reset semantics.
//!
//! A [`TaskSet`] is a finite set of tabular POMDP tasks that share an action
//! set and a discount. The environment picks one task uniformly at the start
//! of a trial and keeps it fixed. Each task episode ends when a terminal state
//! is entered (or the optional step cap fires); the first `K - 1` terminal
//! events reset the task to its initial distribution, the `K`th ends the trial.
//!
//! In every environment built here the observation reveals the within-task
//! state, so the exact belief over environment states factorizes into the
//! known state times a distribution over task identities. [`Belief`] holds
//! that task distribution and [`belief_update`] is Bayes' rule conditioned on
//! the transition, the observation and the emitted reward.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const DIST_TOL: f64 = 1e-9;

/// Draw an index from a discrete distribution.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    // deterministic rows are the common case; avoid consuming randomness for them
    if let Some(i) = probs.iter().position(|&p| p == 1.0) {
        return i;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn check_dist(what: &str, probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Config(format!("{what}: negative or non-finite entry")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::Config(format!("{what}: sums to {sum}, not 1")));
    }
    Ok(())
}

/// Raw tables of one task. Layouts are row-major:
/// `transition[s][a][s']`, `reward[s][a][s']`, `observation[a][s'][o]`.
#[derive(Debug, Clone)]
pub struct TaskTables {
    pub state_count: usize,
    pub action_count: usize,
    pub observation_count: usize,
    pub transition: Vec<f64>,
    pub reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
    pub observation: Vec<f64>,
    pub terminal: Vec<bool>,
}

/// One tabular episodic POMDP.
#[derive(Debug, Clone)]
pub struct Task {
    id: usize,
    t: TaskTables,
}

impl Task {
    pub fn new(id: usize, tables: TaskTables) -> Result<Self> {
        let (ns, na, no) = (
            tables.state_count,
            tables.action_count,
            tables.observation_count,
        );
        if ns == 0 || na == 0 || no == 0 {
            return Err(Error::Config(format!(
                "task {id}: state, action and observation counts must be positive"
            )));
        }
        let expect = |what: &'static str, len: usize, want: usize| {
            if len == want {
                Ok(())
            } else {
                Err(Error::shape(what, want, len))
            }
        };
        expect("transition table", tables.transition.len(), ns * na * ns)?;
        expect("reward table", tables.reward.len(), ns * na * ns)?;
        expect("initial distribution", tables.initial_dist.len(), ns)?;
        expect("observation table", tables.observation.len(), na * ns * no)?;
        expect("terminal set", tables.terminal.len(), ns)?;

        for s in 0..ns {
            for a in 0..na {
                let row = &tables.transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                check_dist(&format!("task {id} transition ({s},{a})"), row)?;
            }
        }
        for a in 0..na {
            for s in 0..ns {
                let row = &tables.observation[(a * ns + s) * no..(a * ns + s + 1) * no];
                check_dist(&format!("task {id} observation ({a},{s})"), row)?;
            }
        }
        check_dist(&format!("task {id} initial distribution"), &tables.initial_dist)?;
        if tables.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config(format!("task {id}: non-finite reward")));
        }
        if !tables.terminal.iter().any(|&t| t) {
            return Err(Error::Config(format!("task {id}: empty terminal set")));
        }
        Ok(Task { id, t: tables })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn state_count(&self) -> usize {
        self.t.state_count
    }

    pub fn action_count(&self) -> usize {
        self.t.action_count
    }

    pub fn observation_count(&self) -> usize {
        self.t.observation_count
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.t.state_count;
        let i = (s * self.t.action_count + a) * ns;
        &self.t.transition[i..i + ns]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        let ns = self.t.state_count;
        self.t.reward[(s * self.t.action_count + a) * ns + next]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.t.initial_dist
    }

    pub fn observation_row(&self, a: usize, next: usize) -> &[f64] {
        let no = self.t.observation_count;
        let i = (a * self.t.state_count + next) * no;
        &self.t.observation[i..i + no]
    }

    pub fn observation(&self, a: usize, next: usize, o: usize) -> f64 {
        self.observation_row(a, next)[o]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.t.terminal[s]
    }
}

/// How a task observation index is presented to an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ObservationEncoding {
    /// The observation carries no information beyond the reward.
    RewardOnly,
    /// The observation index is a location, shown one-hot.
    OneHot { len: usize },
}

impl ObservationEncoding {
    pub fn location_dim(&self) -> usize {
        match *self {
            ObservationEncoding::RewardOnly => 0,
            ObservationEncoding::OneHot { len } => len,
        }
    }
}

/// A finite set of tasks sharing actions and discount, with `K` episodes per trial.
#[derive(Debug, Clone)]
pub struct TaskSet {
    tasks: Vec<Task>,
    episodes_per_trial: usize,
    discount: f64,
    step_cap: Option<usize>,
    encoding: ObservationEncoding,
}

impl TaskSet {
    pub fn new(
        tasks: Vec<Task>,
        episodes_per_trial: usize,
        discount: f64,
        step_cap: Option<usize>,
        encoding: ObservationEncoding,
    ) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::Config("task set is empty".into()))?;
        // K = 1 is a plain episodic POMDP; it is accepted as a degenerate case.
        if episodes_per_trial == 0 {
            return Err(Error::Config("episodes_per_trial must be positive".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Config(format!("discount {discount} not in [0, 1)")));
        }
        if step_cap == Some(0) {
            return Err(Error::Config("step cap must be positive".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if t.id != i {
                return Err(Error::Config(format!("task at index {i} has id {}", t.id)));
            }
            if t.action_count() != first.action_count() {
                return Err(Error::Config("tasks disagree on action count".into()));
            }
            if t.observation_count() != first.observation_count() {
                return Err(Error::Config("tasks disagree on observation count".into()));
            }
            if let ObservationEncoding::OneHot { len } = encoding {
                if len != t.observation_count() {
                    return Err(Error::shape("one-hot length", t.observation_count(), len));
                }
            }
        }
        Ok(TaskSet {
            tasks,
            episodes_per_trial,
            discount,
            step_cap,
            encoding,
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: usize) -> &Task {
        &self.tasks[id]
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn action_count(&self) -> usize {
        self.tasks[0].action_count()
    }

    pub fn episodes_per_trial(&self) -> usize {
        self.episodes_per_trial
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn step_cap(&self) -> Option<usize> {
        self.step_cap
    }

    pub fn encoding(&self) -> ObservationEncoding {
        self.encoding
    }

    /// Same tasks with a different trial length.
    pub fn with_episodes_per_trial(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("episodes_per_trial must be positive".into()));
        }
        self.episodes_per_trial = k;
        Ok(self)
    }

    /// Begin a trial of `task_id`, drawing the start state from its initial distribution.
    pub fn start_trial<R: Rng + ?Sized>(&self, task_id: usize, rng: &mut R) -> TrialState {
        let env_state = sample_index(self.tasks[task_id].initial_dist(), rng);
        TrialState {
            task_id,
            episode_index: 0,
            env_state,
            trial_done: false,
            step_in_episode: 0,
        }
    }
}

/// Uniform draw of a task index.
pub fn sample_task<R: Rng + ?Sized>(rng: &mut R, ts: &TaskSet) -> usize {
    if ts.task_count() == 1 {
        0
    } else {
        rng.gen_range(0..ts.task_count())
    }
}

/// Environment-side progress through one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialState {
    pub task_id: usize,
    pub episode_index: usize,
    pub env_state: usize,
    pub trial_done: bool,
    pub step_in_episode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// State the transition landed in, before any reset.
    pub landing_state: usize,
    /// Observation emitted for the landing state.
    pub observation: usize,
    pub reward: f64,
    pub episode_done: bool,
    pub trial_done: bool,
    /// The episode ended because of the step cap rather than a terminal state.
    pub capped: bool,
    /// Observation of the state the agent now occupies (post-reset if an episode ended).
    pub agent_observation: usize,
    pub state: TrialState,
}

/// Apply one action to a running trial.
pub fn step_trial<R: Rng + ?Sized>(
    ts: &TaskSet,
    st: &TrialState,
    action: usize,
    rng: &mut R,
) -> Result<StepOutcome> {
    if st.trial_done {
        return Err(Error::Usage("step_trial called on a finished trial".into()));
    }
    if action >= ts.action_count() {
        return Err(Error::Usage(format!(
            "action {action} out of range for {} actions",
            ts.action_count()
        )));
    }
    let task = ts.task(st.task_id);
    let s = st.env_state;
    let landing = sample_index(task.transition_row(s, action), rng);
    let reward = task.reward(s, action, landing);
    let observation = sample_index(task.observation_row(action, landing), rng);

    let steps = st.step_in_episode + 1;
    let terminal = task.is_terminal(landing);
    let capped = !terminal && ts.step_cap.is_some_and(|cap| steps >= cap);
    let mut next = *st;
    let mut agent_observation = observation;
    let episode_done = terminal || capped;
    let mut trial_done = false;
    if episode_done {
        if st.episode_index + 1 >= ts.episodes_per_trial {
            trial_done = true;
            next.trial_done = true;
            next.env_state = landing;
            next.step_in_episode = steps;
        } else {
            next.episode_index += 1;
            next.step_in_episode = 0;
            next.env_state = sample_index(task.initial_dist(), rng);
            agent_observation = sample_index(task.observation_row(action, next.env_state), rng);
        }
    } else {
        next.env_state = landing;
        next.step_in_episode = steps;
    }
    Ok(StepOutcome {
        landing_state: landing,
        observation,
        reward,
        episode_done,
        trial_done,
        capped,
        agent_observation,
        state: next,
    })
}

/// Probability vector over task identities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Belief {
    probs: Vec<f64>,
}

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("belief over zero tasks".into()));
        }
        check_dist("belief", &probs)?;
        Ok(Belief { probs })
    }

    pub fn uniform(task_count: usize) -> Self {
        Belief {
            probs: vec![1.0 / task_count as f64; task_count],
        }
    }

    /// Point mass on one task.
    pub fn certain(task_count: usize, task_id: usize) -> Self {
        let mut probs = vec![0.0; task_count];
        probs[task_id] = 1.0;
        Belief { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn from_weights(weights: Vec<f64>, what: impl FnOnce() -> String) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Inconsistent(what()));
        }
        Ok(Belief {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    fn key(&self) -> Vec<u64> {
        self.probs.iter().map(|p| p.to_bits()).collect()
    }
}

/// Bayes update of the task belief after observing `(action, observation, reward)`
/// together with the known pre- and post-transition states.
///
/// `posterior[i] ∝ b[i] · P_i(before, action, after) · O_i(action, after, obs) · 1[R_i(before, action, after) = reward]`
pub fn belief_update(
    b: &Belief,
    action: usize,
    observation: usize,
    reward: f64,
    ts: &TaskSet,
    state_before: usize,
    state_after: usize,
) -> Result<Belief> {
    if b.len() != ts.task_count() {
        return Err(Error::shape("belief length", ts.task_count(), b.len()));
    }
    let weights = ts
        .tasks()
        .iter()
        .zip(&b.probs)
        .map(|(task, &p)| {
            if p == 0.0 || task.reward(state_before, action, state_after) != reward {
                return 0.0;
            }
            p * task.transition(state_before, action, state_after)
                * task.observation(action, state_after, observation)
        })
        .collect();
    Belief::from_weights(weights, || {
        format!(
            "no task explains action {action} from state {state_before} to {state_after} \
             with observation {observation} and reward {reward}"
        )
    })
}

/// Condition the belief on the start state drawn after an episode reset.
pub fn condition_on_reset(b: &Belief, ts: &TaskSet, start_state: usize) -> Result<Belief> {
    let weights = ts
        .tasks()
        .iter()
        .zip(&b.probs)
        .map(|(task, &p)| p * task.initial_dist()[start_state])
        .collect();
    Belief::from_weights(weights, || {
        format!("no task can reset into state {start_state}")
    })
}

/// Expected undiscounted trial return and trial length under some policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValue {
    pub expected_return: f64,
    pub expected_timesteps: f64,
}

impl OracleValue {
    const ZERO: OracleValue = OracleValue {
        expected_return: 0.0,
        expected_timesteps: 0.0,
    };

    /// Higher return first, then fewer timesteps.
    fn better_than(&self, other: &OracleValue) -> bool {
        const TOL: f64 = 1e-9;
        if self.expected_return > other.expected_return + TOL {
            return true;
        }
        if self.expected_return < other.expected_return - TOL {
            return false;
        }
        self.expected_timesteps < other.expected_timesteps - TOL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnownTaskOptimum {
    pub per_task: Vec<OracleValue>,
    pub mean: OracleValue,
}

#[derive(Hash, PartialEq, Eq)]
struct NodeKey {
    belief: Vec<u64>,
    state: usize,
    episode: usize,
    step: usize,
}

/// Backward induction over reachable `(belief, known state, episode, step)` nodes.
///
/// The objective is lexicographic: maximize expected undiscounted trial return,
/// break ties by minimizing expected trial length.
pub struct BayesOracle<'a> {
    ts: &'a TaskSet,
    memo: HashMap<NodeKey, (OracleValue, usize)>,
    cap: usize,
    max_episode_len: usize,
}

/// Default bound on memoized nodes.
pub const DEFAULT_ORACLE_CAP: usize = 2_000_000;

impl<'a> BayesOracle<'a> {
    pub fn new(ts: &'a TaskSet) -> Self {
        Self::with_cap(ts, DEFAULT_ORACLE_CAP)
    }

    pub fn with_cap(ts: &'a TaskSet, cap: usize) -> Self {
        BayesOracle {
            ts,
            memo: HashMap::new(),
            cap,
            max_episode_len: ts.step_cap().unwrap_or(1_000),
        }
    }

    pub fn visited(&self) -> usize {
        self.memo.len()
    }

    /// Value of a trial that starts with `prior`, averaged over start states.
    pub fn trial_value(&mut self, prior: &Belief) -> Result<OracleValue> {
        let mut total = OracleValue::ZERO;
        for (start, mass, post) in self.reset_outcomes(prior)? {
            let v = self.value(&post, start, 0, 0)?;
            total.expected_return += mass * v.expected_return;
            total.expected_timesteps += mass * v.expected_timesteps;
        }
        Ok(total)
    }

    /// Optimal action at a node (lowest index among equally good actions).
    pub fn best_action(
        &mut self,
        belief: &Belief,
        state: usize,
        episode: usize,
        step: usize,
    ) -> Result<usize> {
        let mut best: Option<(usize, OracleValue)> = None;
        for a in 0..self.ts.action_count() {
            let q = self.action_value(belief, state, episode, step, a)?;
            if best.as_ref().is_none_or(|(_, v)| q.better_than(v)) {
                best = Some((a, q));
            }
        }
        Ok(best.expect("at least one action").0)
    }

    fn reset_outcomes(&self, belief: &Belief) -> Result<Vec<(usize, f64, Belief)>> {
        let ns = self.ts.task(0).state_count();
        let mut out = Vec::new();
        for s0 in 0..ns {
            let mass: f64 = self
                .ts
                .tasks()
                .iter()
                .zip(belief.probs())
                .filter(|(t, _)| s0 < t.state_count())
                .map(|(t, &p)| p * t.initial_dist()[s0])
                .sum();
            if mass > 0.0 {
                out.push((s0, mass, condition_on_reset(belief, self.ts, s0)?));
            }
        }
        Ok(out)
    }

    fn value(
        &mut self,
        belief: &Belief,
        state: usize,
        episode: usize,
        step: usize,
    ) -> Result<OracleValue> {
        let key = NodeKey {
            belief: belief.key(),
            state,
            episode,
            step,
        };
        if let Some(&(v, _)) = self.memo.get(&key) {
            return Ok(v);
        }
        if step > self.max_episode_len {
            return Err(Error::SearchSpace {
                visited: self.memo.len(),
                cap: self.cap,
            });
        }
        let mut best: Option<(usize, OracleValue)> = None;
        for a in 0..self.ts.action_count() {
            let q = self.action_value(belief, state, episode, step, a)?;
            if best.as_ref().is_none_or(|(_, v)| q.better_than(v)) {
                best = Some((a, q));
            }
        }
        let (a, v) = best.expect("at least one action");
        if self.memo.len() >= self.cap {
            return Err(Error::SearchSpace {
                visited: self.memo.len(),
                cap: self.cap,
            });
        }
        self.memo.insert(key, (v, a));
        Ok(v)
    }

    fn action_value(
        &mut self,
        belief: &Belief,
        state: usize,
        episode: usize,
        step: usize,
        action: usize,
    ) -> Result<OracleValue> {
        let ts = self.ts;
        // Group task-level outcomes by what the agent can tell apart.
        let mut outcomes: Vec<(usize, usize, f64, f64)> = Vec::new();
        for (task, &p) in ts.tasks().iter().zip(belief.probs()) {
            if p == 0.0 {
                continue;
            }
            for (next, &pt) in task.transition_row(state, action).iter().enumerate() {
                if pt == 0.0 {
                    continue;
                }
                let r = task.reward(state, action, next);
                for (o, &po) in task.observation_row(action, next).iter().enumerate() {
                    if po == 0.0 {
                        continue;
                    }
                    let w = p * pt * po;
                    match outcomes
                        .iter_mut()
                        .find(|(n, oo, rr, _)| *n == next && *oo == o && *rr == r)
                    {
                        Some(entry) => entry.3 += w,
                        None => outcomes.push((next, o, r, w)),
                    }
                }
            }
        }

        let mut total = OracleValue::ZERO;
        for (next, o, r, mass) in outcomes {
            let post = belief_update(belief, action, o, r, ts, state, next)?;
            let mut terminal = None;
            for (task, &p) in ts.tasks().iter().zip(post.probs()) {
                if p > 0.0 {
                    let t = task.is_terminal(next);
                    if terminal.is_some_and(|prev| prev != t) {
                        return Err(Error::Inconsistent(format!(
                            "tasks consistent with the evidence disagree on whether state {next} is terminal"
                        )));
                    }
                    terminal = Some(t);
                }
            }
            let terminal = terminal.unwrap_or(false);
            let capped = ts.step_cap().is_some_and(|cap| step + 1 >= cap);
            let cont = if terminal || capped {
                if episode + 1 >= ts.episodes_per_trial() {
                    OracleValue::ZERO
                } else {
                    let mut acc = OracleValue::ZERO;
                    for (s0, m, b0) in self.reset_outcomes(&post)? {
                        let v = self.value(&b0, s0, episode + 1, 0)?;
                        acc.expected_return += m * v.expected_return;
                        acc.expected_timesteps += m * v.expected_timesteps;
                    }
                    acc
                }
            } else {
                self.value(&post, next, episode, step + 1)?
            };
            total.expected_return += mass * (r + cont.expected_return);
            total.expected_timesteps += mass * (1.0 + cont.expected_timesteps);
        }
        Ok(total)
    }
}

/// Best expected trial return (and its trial length) for a policy that
/// conditions on the exact task belief, starting from the uniform prior.
pub fn bayes_optimal_return(ts: &TaskSet) -> Result<OracleValue> {
    BayesOracle::new(ts).trial_value(&Belief::uniform(ts.task_count()))
}

/// Optimal trial value per task when the task identity is given up front,
/// and the uniform average over tasks.
pub fn known_task_optimum(ts: &TaskSet) -> Result<KnownTaskOptimum> {
    let n = ts.task_count();
    let mut oracle = BayesOracle::new(ts);
    let per_task = (0..n)
        .map(|i| oracle.trial_value(&Belief::certain(n, i)))
        .collect::<Result<Vec<_>>>()?;
    let mean = OracleValue {
        expected_return: per_task.iter().map(|v| v.expected_return).sum::<f64>() / n as f64,
        expected_timesteps: per_task.iter().map(|v| v.expected_timesteps).sum::<f64>() / n as f64,
    };
    Ok(KnownTaskOptimum { per_task, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_bandit, make_corridor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sample_task_is_uniform() {
        let ts = make_bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zeros = (0..10_000).filter(|_| sample_task(&mut rng, &ts) == 0).count();
        let freq = zeros as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn sample_task_single_task_is_zero() {
        let two = make_bandit();
        let one = TaskSet::new(
            vec![two.task(0).clone()],
            10,
            0.8,
            None,
            ObservationEncoding::RewardOnly,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| sample_task(&mut rng, &one) == 0));
    }

    #[test]
    fn sample_task_is_deterministic_per_seed() {
        let ts = make_bandit();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..64).map(|_| sample_task(&mut rng, &ts)).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
    }

    #[test]
    fn bandit_episode_boundaries() {
        let ts = make_bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = ts.start_trial(1, &mut rng);
        st.episode_index = 8;
        let out = step_trial(&ts, &st, 0, &mut rng).unwrap();
        assert!(out.episode_done && !out.trial_done);
        assert_eq!(out.state.episode_index, 9);
        let out = step_trial(&ts, &out.state, 1, &mut rng).unwrap();
        assert!(out.trial_done);
        assert_eq!(out.reward, 1.0);
    }

    #[test]
    fn stepping_finished_trial_is_usage_error() {
        let ts = make_bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = ts.start_trial(0, &mut rng);
        st.trial_done = true;
        assert!(matches!(
            step_trial(&ts, &st, 0, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn out_of_range_action_is_usage_error() {
        let ts = make_bandit();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = ts.start_trial(0, &mut rng);
        assert!(matches!(
            step_trial(&ts, &st, 2, &mut rng),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn corridor_goal_entry_ends_episode() {
        let ts = make_corridor(11, 5, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = ts.start_trial(0, &mut rng);
        st.env_state = 1;
        let out = step_trial(&ts, &st, 0, &mut rng).unwrap();
        assert_eq!(out.reward, 10.0);
        assert!(out.episode_done && !out.trial_done);
        assert_eq!(out.landing_state, 0);
        assert_eq!(out.state.env_state, 5);
        assert_eq!(out.agent_observation, 5);
    }

    #[test]
    fn bandit_beliefs_collapse_on_first_pull() {
        let ts = make_bandit();
        let prior = Belief::uniform(2);
        let hit = belief_update(&prior, 0, 0, 1.0, &ts, 0, 1).unwrap();
        assert_eq!(hit.probs(), &[1.0, 0.0]);
        let miss = belief_update(&prior, 0, 0, 0.0, &ts, 0, 1).unwrap();
        assert_eq!(miss.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn corridor_empty_left_end_means_goal_is_right() {
        let ts = make_corridor(11, 5, 50).unwrap();
        let b = belief_update(&Belief::uniform(2), 0, 0, 0.0, &ts, 1, 0).unwrap();
        assert_eq!(b.probs(), &[0.0, 1.0]);
    }

    #[test]
    fn impossible_evidence_is_an_error() {
        let ts = make_bandit();
        let certain = Belief::certain(2, 0);
        // task 0 always pays on arm 0
        let err = belief_update(&certain, 0, 0, 0.0, &ts, 0, 1).unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
        let err = belief_update(&Belief::uniform(2), 0, 0, 0.5, &ts, 0, 1).unwrap_err();
        assert!(matches!(err, Error::Inconsistent(_)));
    }

    #[test]
    fn oracle_values_bandit() {
        let ts = make_bandit();
        let v = bayes_optimal_return(&ts).unwrap();
        assert_eq!(v.expected_return, 9.5);
        assert_eq!(v.expected_timesteps, 10.0);
        let k = known_task_optimum(&ts).unwrap();
        assert_eq!(k.mean.expected_return, 10.0);
        assert!(k.per_task.iter().all(|v| v.expected_return == 10.0));
    }

    #[test]
    fn oracle_values_corridor() {
        let ts = make_corridor(11, 5, 50).unwrap();
        let v = bayes_optimal_return(&ts).unwrap();
        assert_eq!(v.expected_return, 20.0);
        assert!((v.expected_timesteps - 15.0).abs() < 1e-12);
        let k = known_task_optimum(&ts).unwrap();
        assert!((k.mean.expected_timesteps - 10.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_degenerate_cases() {
        let two = make_bandit();
        let single = TaskSet::new(
            vec![two.task(0).clone()],
            10,
            0.8,
            None,
            ObservationEncoding::RewardOnly,
        )
        .unwrap();
        assert_eq!(bayes_optimal_return(&single).unwrap().expected_return, 10.0);

        let k1 = make_bandit().with_episodes_per_trial(1).unwrap();
        assert_eq!(known_task_optimum(&k1).unwrap().mean.expected_return, 1.0);
    }

    #[test]
    fn oracle_cap_is_enforced() {
        let ts = make_corridor(11, 5, 50).unwrap();
        let err = BayesOracle::with_cap(&ts, 10)
            .trial_value(&Belief::uniform(2))
            .unwrap_err();
        assert!(matches!(err, Error::SearchSpace { cap: 10, .. }));
    }

    #[test]
    fn oracle_picks_optimal_bandit_arm_once_certain() {
        let ts = make_bandit();
        let mut oracle = BayesOracle::new(&ts);
        assert_eq!(oracle.best_action(&Belief::certain(2, 1), 0, 3, 0).unwrap(), 1);
        assert_eq!(oracle.best_action(&Belief::certain(2, 0), 0, 3, 0).unwrap(), 0);
    }

    #[test]
    fn invalid_tables_are_rejected() {
        let tables = TaskTables {
            state_count: 1,
            action_count: 1,
            observation_count: 1,
            transition: vec![0.5],
            reward: vec![0.0],
            initial_dist: vec![1.0],
            observation: vec![1.0],
            terminal: vec![true],
        };
        assert!(matches!(Task::new(0, tables), Err(Error::Config(_))));
    }
}
