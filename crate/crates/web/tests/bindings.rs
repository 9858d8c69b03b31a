use metapomdp_web::{oracle_value, CorridorWalk, Trainer};

#[test]
fn oracle_values_for_both_envs() {
    let v = oracle_value("env = bandit").unwrap();
    assert_eq!(v["bayes_optimal"]["expected_return"], 9.5);
    assert_eq!(v["known_task"]["mean"]["expected_return"], 10.0);
    let v = oracle_value("env = corridor\n").unwrap();
    assert_eq!(v["bayes_optimal"]["expected_timesteps"], 15.0);
    assert!(oracle_value("env = corridor\ncorridor.start = 0").is_err());
    assert!(oracle_value("learning_rat = 1").is_err());
}

#[test]
fn walking_to_a_goal_settles_the_belief() {
    let mut w = CorridorWalk::create(5, 2, 1, 0).unwrap();
    assert_eq!(w.view()["belief"], serde_json::json!([0.5, 0.5]));
    let v = w.apply(0).unwrap();
    assert_eq!(v["cell"], 1);
    assert_eq!(v["belief"], serde_json::json!([0.5, 0.5]));
    let v = w.apply(0).unwrap();
    assert_eq!(v["last_reward"], 0.0);
    assert_eq!(v["belief"], serde_json::json!([0.0, 1.0]));
    assert!(v["task"].is_null());
}

#[test]
fn oracle_steps_finish_the_default_corridor_in_fifteen() {
    for task in 0..2 {
        let mut w = CorridorWalk::create(11, 5, task, 3).unwrap();
        let mut v = w.view();
        while v["done"] == false {
            let a = w.oracle_action().unwrap();
            v = w.apply(a).unwrap();
        }
        assert_eq!(v["total_reward"], 20.0);
        assert_eq!(v["task"], task);
        let steps = v["timesteps"].as_u64().unwrap();
        assert_eq!(steps, if task == 0 { 10 } else { 20 });
        assert!(w.oracle_action().is_err());
    }
}

#[test]
fn trainer_runs_and_is_deterministic() {
    let cfg = "env = bandit\nhidden_size = 8";
    let mut a = Trainer::create(cfg, 4).unwrap();
    let mut b = Trainer::create(cfg, 4).unwrap();
    let ra = a.run(5).unwrap();
    assert_eq!(ra["update"], 5);
    assert_eq!(ra["rows"].as_array().unwrap().len(), 5);
    assert_eq!(ra, b.run(5).unwrap());
    let e = a.eval_value(10).unwrap();
    assert_eq!(e["mean_timesteps"], 10.0);
    assert!(a.trace_text(1).unwrap().starts_with("# bandit task 1"));
    assert!(a.trace_text(2).is_err());
}
