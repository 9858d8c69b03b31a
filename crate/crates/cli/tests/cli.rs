use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_metapomdp"));
    c.env_remove("METAPOMDP_OUT");
    c
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

const SMALL: &[&str] = &["--total_updates", "30", "--eval.every", "10", "--eval.rollouts", "20"];

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    run_in(dir, &args)
}

#[test]
fn oracle_values() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run_in(d.path(), &["oracle", "--env", "bandit"]));
    assert_eq!(v["bayes_optimal"]["expected_return"], 9.5);
    assert_eq!(v["known_task"]["mean"]["expected_return"], 10.0);
    assert_eq!(v["config"]["env"], "bandit");

    let v = json(&run_in(d.path(), &["oracle", "--env", "corridor"]));
    assert_eq!(v["bayes_optimal"]["expected_timesteps"], 15.0);
    assert_eq!(v["known_task"]["mean"]["expected_timesteps"], 10.0);
}

#[test]
fn invalid_geometry_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run_in(d.path(), &["oracle", "--env", "corridor", "--corridor.start", "11"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_key_in_config_file_is_named() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("run.cfg"), "env = bandit\nlearning_rat = 0.1\n").unwrap();
    let o = run_in(d.path(), &["train", "--config", "run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run_in(d.path(), &["train", "--learning-rate", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_are_io_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run_in(d.path(), &["train", "--config", "nope.cfg"]).status.code(), Some(3));
    assert_eq!(run_in(d.path(), &["eval", "--checkpoint", "nope.bin"]).status.code(), Some(3));
}

#[test]
fn config_file_then_flags() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("run.cfg"),
        "# corridor defaults except the learning rate\nenv = corridor\nlearning_rate = 0.01\n",
    )
    .unwrap();
    let v = json(&run_in(d.path(), &["oracle", "--config", "run.cfg", "--learning_rate=0.02"]));
    assert_eq!(v["config"]["learning_rate"], "0.02");
    assert_eq!(v["config"]["discount"], "0.9");
    assert_eq!(v["config"]["grad_clip"], "5");
}

#[test]
fn corridor_rl1_uses_gridworld_defaults() {
    let d = tempfile::tempdir().unwrap();
    let v = json(&run_in(d.path(), &["oracle", "--env", "corridor", "--regime", "rl1"]));
    assert_eq!(v["config"]["learning_rate"], "0.0001");
    assert_eq!(v["config"]["discount"], "0.9");
}

#[test]
fn train_writes_the_documented_layout() {
    let d = tempfile::tempdir().unwrap();
    let o = train_small(d.path(), &["--seeds", "0..2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let suite = d.path().join("out/bandit-rl2");
    for seed in 0..=2 {
        let csv = std::fs::read_to_string(suite.join(format!("{seed}/metrics.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "update,mean_return,mean_timesteps,policy_loss,value_loss,entropy,grad_norm"
        );
        assert_eq!(lines.count(), 30);
        assert!(suite.join(format!("{seed}/checkpoint.bin")).is_file());
        let eval = std::fs::read_to_string(suite.join(format!("{seed}/eval.csv"))).unwrap();
        assert_eq!(eval.lines().count(), 4);
    }
    let s: Value = serde_json::from_str(&std::fs::read_to_string(suite.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["seeds"], serde_json::json!([0, 1, 2]));
    assert_eq!(s["trials_per_update"], 16);
    assert_eq!(s["oracle"]["bayes_optimal"]["expected_return"], 9.5);
    assert_eq!(s["oracle"]["known_task"]["expected_return"], 10.0);
    assert_eq!(s["runs"].as_array().unwrap().len(), 3);
    assert_eq!(s["curve"]["updates"].as_array().unwrap().len(), 3);
    assert_eq!(s["config"]["total_updates"], "30");
    assert!(s["final"]["mean_return"]["median"].is_number());
    assert!(suite.join("config.txt").is_file());
}

#[test]
fn out_env_var_overrides_the_output_root() {
    let d = tempfile::tempdir().unwrap();
    let o = bin()
        .current_dir(d.path())
        .env("METAPOMDP_OUT", "elsewhere")
        .args(["train", "--total_updates", "2", "--eval.every", "0", "--suite", "tiny"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("elsewhere/tiny/0/metrics.csv").is_file());
    assert!(!d.path().join("out").exists());
}

#[test]
fn parallel_seeds_match_sequential() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(train_small(a.path(), &["--seeds", "3,4"]).status.success());
    assert!(train_small(b.path(), &["--seeds", "3,4", "--jobs", "2"]).status.success());
    for seed in [3, 4] {
        let rel = format!("out/bandit-rl2/{seed}/metrics.csv");
        assert_eq!(
            std::fs::read(a.path().join(&rel)).unwrap(),
            std::fs::read(b.path().join(&rel)).unwrap()
        );
    }
}

#[test]
fn eval_probe_and_trace_read_a_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    assert!(train_small(d.path(), &["--probe.trials", "60"]).status.success());
    let ck = "out/bandit-rl2/0/checkpoint.bin";
    let cfg = "out/bandit-rl2/config.txt";

    let v = json(&run_in(d.path(), &["eval", "--config", cfg, "--checkpoint", ck]));
    assert_eq!(v["evaluation"]["rollouts"], 20);
    assert_eq!(v["evaluation"]["mean_timesteps"], 10.0);
    assert!(v["qualitative"]["later_optimal_action_rate"].is_number());

    let v = json(&run_in(d.path(), &["probe", "--config", cfg, "--checkpoint", ck]));
    assert_eq!(v["n_rows"], 600);
    assert!(v["r2_trained"].is_number() && v["r2_untrained"].is_number());
    assert_eq!(v["reachable_beliefs"].as_array().unwrap().len(), 3);

    let o = run_in(d.path(), &["trace", "--config", cfg, "--checkpoint", ck, "--task", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# bandit task 1"));
    assert_eq!(text.matches("arm ").count(), 10);

    // a corridor config cannot load a bandit network
    let o = run_in(d.path(), &["eval", "--env", "corridor", "--checkpoint", ck]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let o = run_in(d.path(), &["gradcheck", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 4);
    let o = run_in(d.path(), &["gradcheck", "--mutate"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn help_exits_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let o = run_in(d.path(), &["--help"]);
    assert!(o.status.success());
    let o = run_in(d.path(), &["train", "--help"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("--corridor.step_cap"));
    assert_eq!(run_in(d.path(), &[]).status.code(), Some(2));
}
