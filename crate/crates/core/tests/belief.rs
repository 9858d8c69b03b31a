use metapomdp::envs::{make_bandit, make_corridor, make_corridor_with};
use metapomdp::harness::seeded_rng;
use metapomdp::pomdp::{
    belief_update, condition_on_reset, known_task_optimum, step_trial, Belief, BayesOracle,
    ObservationEncoding, Task, TaskSet, TaskTables,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What the agent sees after one step: (landing, observation, reward, state it now occupies).
type Seen = (usize, usize, u64, usize);

fn simulate(ts: &TaskSet, task: usize, actions: &[usize]) -> Vec<Seen> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut st = ts.start_trial(task, &mut rng);
    let mut out = Vec::new();
    for &a in actions {
        if st.trial_done {
            break;
        }
        let o = step_trial(ts, &st, a, &mut rng).unwrap();
        out.push((o.landing_state, o.observation, o.reward.to_bits(), o.state.env_state));
        st = o.state;
    }
    out
}

fn filter(ts: &TaskSet, task: usize, actions: &[usize]) -> Belief {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut st = ts.start_trial(task, &mut rng);
    let mut b = condition_on_reset(&Belief::uniform(ts.task_count()), ts, st.env_state).unwrap();
    for &a in actions {
        if st.trial_done {
            break;
        }
        let o = step_trial(ts, &st, a, &mut rng).unwrap();
        b = belief_update(&b, a, o.observation, o.reward, ts, st.env_state, o.landing_state).unwrap();
        if o.episode_done && !o.trial_done {
            b = condition_on_reset(&b, ts, o.state.env_state).unwrap();
        }
        st = o.state;
    }
    b
}

fn action_sequences(actions: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for a in 0..actions {
                let mut s: Vec<usize> = seq.clone();
                s.push(a);
                next.push(s);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// For deterministic tasks the exact posterior is uniform over the tasks that
/// reproduce what was seen.
fn check_against_enumeration(ts: &TaskSet, max_len: usize) {
    for seq in action_sequences(ts.action_count(), max_len) {
        for truth in 0..ts.task_count() {
            let seen = simulate(ts, truth, &seq);
            let consistent: Vec<usize> = (0..ts.task_count())
                .filter(|&j| simulate(ts, j, &seq[..seen.len()]) == seen)
                .collect();
            let b = filter(ts, truth, &seq);
            for j in 0..ts.task_count() {
                let want = if consistent.contains(&j) {
                    1.0 / consistent.len() as f64
                } else {
                    0.0
                };
                assert!(
                    (b.probs()[j] - want).abs() < 1e-12,
                    "actions {seq:?} truth {truth}: {:?} vs task {j} want {want}",
                    b.probs()
                );
            }
        }
    }
}

#[test]
fn bandit_filter_matches_enumeration() {
    check_against_enumeration(&make_bandit(), 3);
}

#[test]
fn corridor_filter_matches_enumeration() {
    check_against_enumeration(&make_corridor(11, 5, 50).unwrap(), 3);
    // short corridor so that length-3 histories cross an episode boundary
    check_against_enumeration(&make_corridor_with(3, 1, 4, 3, 0.9).unwrap(), 3);
}

#[test]
fn bandit_belief_sequence() {
    let ts = make_bandit();
    // arm 0 pays in task 0
    assert_eq!(filter(&ts, 0, &[]).probs(), &[0.5, 0.5]);
    assert_eq!(filter(&ts, 0, &[0]).probs(), &[1.0, 0.0]);
    assert_eq!(filter(&ts, 1, &[0]).probs(), &[0.0, 1.0]);
    assert_eq!(filter(&ts, 1, &[1, 1, 0]).probs(), &[0.0, 1.0]);
}

#[test]
fn corridor_belief_only_moves_at_the_ends() {
    let ts = make_corridor(11, 5, 50).unwrap();
    assert_eq!(filter(&ts, 1, &[0, 0, 0, 0]).probs(), &[0.5, 0.5]);
    assert_eq!(filter(&ts, 1, &[0, 0, 0, 0, 0]).probs(), &[0.0, 1.0]);
    assert_eq!(filter(&ts, 0, &[0, 0, 0, 0, 0]).probs(), &[1.0, 0.0]);
    assert_eq!(filter(&ts, 0, &[1, 1, 1, 1, 1]).probs(), &[1.0, 0.0]);
}

/// Two tasks whose only state emits a noisy cue; the filter should agree with
/// the batch posterior over the whole cue sequence.
fn noisy_cue(p0: f64, p1: f64, k: usize) -> TaskSet {
    let task = |id, p: f64| {
        Task::new(
            id,
            TaskTables {
                state_count: 2,
                action_count: 1,
                observation_count: 2,
                transition: vec![0.0, 1.0, 0.0, 1.0],
                reward: vec![0.0; 4],
                initial_dist: vec![1.0, 0.0],
                observation: vec![0.5, 0.5, p, 1.0 - p],
                terminal: vec![false, true],
            },
        )
        .unwrap()
    };
    TaskSet::new(
        vec![task(0, p0), task(1, p1)],
        k,
        0.9,
        None,
        ObservationEncoding::OneHot { len: 2 },
    )
    .unwrap()
}

proptest! {
    #[test]
    fn sequential_update_equals_batch_posterior(
        p0 in 0.05f64..0.95, p1 in 0.05f64..0.95, cues in prop::collection::vec(0usize..2, 1..12)
    ) {
        let ts = noisy_cue(p0, p1, cues.len());
        let mut b = Belief::uniform(2);
        let (mut l0, mut l1) = (1.0, 1.0);
        for (i, &o) in cues.iter().enumerate() {
            b = belief_update(&b, 0, o, 0.0, &ts, 0, 1).unwrap();
            if i + 1 < cues.len() {
                b = condition_on_reset(&b, &ts, 0).unwrap();
            }
            l0 *= if o == 0 { p0 } else { 1.0 - p0 };
            l1 *= if o == 0 { p1 } else { 1.0 - p1 };
            let sum: f64 = b.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(b.probs().iter().all(|&q| (0.0..=1.0).contains(&q)));
        }
        prop_assert!((b.probs()[0] - l0 / (l0 + l1)).abs() < 1e-9);
    }

    #[test]
    fn certainty_is_absorbing(task in 0usize..2, actions in prop::collection::vec(0usize..2, 0..30)) {
        let ts = make_corridor(11, 5, 50).unwrap();
        let mut rng = seeded_rng(1, 0);
        let mut st = ts.start_trial(task, &mut rng);
        let mut b = Belief::certain(2, task);
        for a in actions {
            if st.trial_done { break; }
            let o = step_trial(&ts, &st, a, &mut rng).unwrap();
            b = belief_update(&b, a, o.observation, o.reward, &ts, st.env_state, o.landing_state).unwrap();
            prop_assert_eq!(&b, &Belief::certain(2, task));
            st = o.state;
        }
    }

    #[test]
    fn trial_has_exactly_k_episodes(seed in any::<u64>(), task in 0usize..2) {
        let ts = make_corridor_with(5, 2, 8, 3, 0.9).unwrap();
        let mut rng = seeded_rng(seed, 0);
        let mut st = ts.start_trial(task, &mut rng);
        let mut episodes = 0;
        let mut steps = 0;
        while !st.trial_done {
            let o = step_trial(&ts, &st, (seed as usize + steps) % 2, &mut rng).unwrap();
            episodes += o.episode_done as usize;
            steps += 1;
            prop_assert!(o.state.step_in_episode <= 8);
            st = o.state;
        }
        prop_assert_eq!(episodes, 3);
        prop_assert!(step_trial(&ts, &st, 0, &mut rng).is_err());
    }
}

#[test]
fn contradictory_observation_is_reported() {
    let ts = make_bandit();
    // arm 0 paying 0 rules out task 0; a certain belief in task 0 cannot explain it
    let err = belief_update(&Belief::certain(2, 0), 0, 0, 0.0, &ts, 0, 1);
    assert!(err.is_err());
}

/// The hand-written strategies these values come from: bandit, pull arm 0 and
/// stick with whichever arm paid; corridor, walk left, and if the left end is
/// empty walk right, then head straight for the known goal.
#[test]
fn oracle_values_match_hand_policies() {
    let bandit = make_bandit();
    let v = BayesOracle::new(&bandit).trial_value(&Belief::uniform(2)).unwrap();
    let hand = 0.5 * 10.0 + 0.5 * 9.0;
    assert!((v.expected_return - hand).abs() < 1e-9);
    assert!((v.expected_timesteps - 10.0).abs() < 1e-9);

    let corridor = make_corridor(11, 5, 50).unwrap();
    let v = BayesOracle::new(&corridor).trial_value(&Belief::uniform(2)).unwrap();
    assert!((v.expected_return - 20.0).abs() < 1e-9);
    let steps = 0.5 * (5.0 + 5.0) + 0.5 * (5.0 + 10.0 + 5.0);
    assert!((v.expected_timesteps - steps).abs() < 1e-9);

    let known = known_task_optimum(&corridor).unwrap();
    assert!((known.mean.expected_timesteps - 10.0).abs() < 1e-9);
}
