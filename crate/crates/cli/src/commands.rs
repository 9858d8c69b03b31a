//! Subcommand bodies, usable without going through argument parsing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use metapomdp::checkpoint;
use metapomdp::config::ExperimentConfig;
use metapomdp::envs::EnvKind;
use metapomdp::harness::{
    aggregate_runs, behavior_trace, evaluate, qualitative_stats, run_trial, seeded_rng, train_run,
    ActionMode, BehaviorTrace, RunOutput, RunRecord,
};
use metapomdp::net::{
    bptt_backward, finite_diff_check_against, init_params, AgentParams, FdOptions, InitScheme,
    WEIGHT_MATRICES,
};
use metapomdp::pomdp::{bayes_optimal_return, known_task_optimum};
use metapomdp::probe::{collect_pairs, fit_linear_decoder, reachable_beliefs};
use metapomdp::regimes::RegimeKind;

use crate::{config_echo, io_at, CliError};

// rng streams beyond the ones training uses (0 train, 1 snapshots, 2 final eval)
const QUALITATIVE_STREAM: u64 = 3;
const PROBE_STREAM: u64 = 4;
const TRACE_STREAM: u64 = 5;
const GRADCHECK_STREAM: u64 = 6;
const EVAL_STREAM: u64 = 2;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const MUTATION_THRESHOLD: f64 = 1e-1;

fn mode(cfg: &ExperimentConfig) -> ActionMode {
    if cfg.eval.greedy {
        ActionMode::Greedy
    } else {
        ActionMode::Sample
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_at(path))
}

pub struct SuiteOutput {
    pub dir: PathBuf,
    pub runs: Vec<RunOutput>,
    pub summary: Value,
}

impl SuiteOutput {
    pub fn records(&self) -> Vec<RunRecord> {
        self.runs.iter().map(|r| r.record.clone()).collect()
    }
}

fn snapshots_csv(r: &RunRecord) -> String {
    let mut s = String::from("update,trials_consumed,mean_return,mean_timesteps\n");
    for e in &r.snapshots {
        let _ = writeln!(
            s,
            "{},{},{:?},{:?}",
            e.update, e.trials_consumed, e.mean_return, e.mean_timesteps
        );
    }
    s
}

/// Train every configured seed (`jobs` at a time) and write
/// `<out>/<suite>/<seed>/{metrics.csv, eval.csv, checkpoint.bin}`,
/// `<out>/<suite>/config.txt` and `<out>/<suite>/summary.json`.
pub fn train_suite(cfg: &ExperimentConfig, log: &mut dyn FnMut(String)) -> Result<SuiteOutput, CliError> {
    cfg.validate()?;
    let dir = Path::new(&cfg.out).join(cfg.suite_name());
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let oracle = oracle_report(cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    let started = Instant::now();
    let results: Vec<_> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let t = Instant::now();
                train_run(cfg, seed).map(|r| (r, t.elapsed().as_secs_f64()))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(results.len());
    for res in results {
        let (run, secs) = res?;
        let seed_dir = dir.join(run.record.seed.to_string());
        std::fs::create_dir_all(&seed_dir).map_err(io_at(&seed_dir))?;
        write_file(&seed_dir.join("metrics.csv"), run.record.to_csv())?;
        write_file(&seed_dir.join("eval.csv"), snapshots_csv(&run.record))?;
        let ck = seed_dir.join("checkpoint.bin");
        checkpoint::save(&ck, &run.params).map_err(|e| CliError::Io(format!("{}: {e}", ck.display())))?;
        let f = &run.record.final_eval;
        log(format!(
            "seed {:>3}: final mean return {:.3}, mean timesteps {:.2} ({secs:.1}s)",
            run.record.seed, f.mean_return, f.mean_timesteps
        ));
        runs.push(run);
    }

    let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let curve = aggregate_runs(&records)?;
    let summary = json!({
        "suite": cfg.suite_name(),
        "env": cfg.env.to_string(),
        "regime": cfg.regime.to_string(),
        "seeds": cfg.seeds,
        "trials_per_update": cfg.hyper.trials_per_update,
        "total_updates": cfg.hyper.total_updates,
        "eval": to_json(&cfg.eval),
        "final": {
            "mean_return": to_json(&curve.final_return),
            "mean_timesteps": to_json(&curve.final_timesteps),
        },
        "oracle": {
            "bayes_optimal": oracle["bayes_optimal"].clone(),
            "known_task": oracle["known_task"]["mean"].clone(),
        },
        "runs": records.iter().map(|r| json!({
            "seed": r.seed,
            "metrics": format!("{}/metrics.csv", r.seed),
            "eval": format!("{}/eval.csv", r.seed),
            "checkpoint": format!("{}/checkpoint.bin", r.seed),
            "final_eval": to_json(&r.final_eval),
        })).collect::<Vec<_>>(),
        "curve": to_json(&curve),
        "wall_seconds": started.elapsed().as_secs_f64(),
        "config": config_echo(cfg),
    });
    write_file(&dir.join("config.txt"), cfg.to_text())?;
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    write_file(&dir.join("summary.json"), text + "\n")?;
    log(format!(
        "{}: median final return {:.3}, median final timesteps {:.2} over {} seeds",
        cfg.suite_name(),
        curve.final_return.median,
        curve.final_timesteps.median,
        records.len()
    ));
    Ok(SuiteOutput { dir, runs, summary })
}

pub fn oracle_report(cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let ts = cfg.task_set()?;
    let bayes = bayes_optimal_return(&ts)?;
    let known = known_task_optimum(&ts)?;
    Ok(json!({
        "env": cfg.env.to_string(),
        "episodes_per_trial": ts.episodes_per_trial(),
        "bayes_optimal": to_json(&bayes),
        "known_task": to_json(&known),
        "config": config_echo(cfg),
    }))
}

/// Load a checkpoint and make sure it fits the configured network.
pub fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<AgentParams, CliError> {
    let p = checkpoint::load(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let dims = cfg.setup()?.dims;
    if p.dims != dims {
        return Err(CliError::Config(format!(
            "checkpoint {} has dims {:?} but the config needs {:?}",
            path.display(),
            p.dims,
            dims
        )));
    }
    Ok(p)
}

pub fn eval_report(cfg: &ExperimentConfig, path: &Path, seed: u64) -> Result<Value, CliError> {
    let p = load_checkpoint(cfg, path)?;
    let setup = cfg.setup()?;
    let n = cfg.eval.rollouts;
    let e = evaluate(&p, &setup, n, mode(cfg), &mut seeded_rng(seed, EVAL_STREAM))?;
    let q = qualitative_stats(&p, &setup, n, mode(cfg), &mut seeded_rng(seed, QUALITATIVE_STREAM))?;
    let oracle = oracle_report(cfg)?;
    Ok(json!({
        "checkpoint": path.display().to_string(),
        "seed": seed,
        "greedy": cfg.eval.greedy,
        "evaluation": to_json(&e),
        "qualitative": to_json(&q),
        "bayes_optimal": oracle["bayes_optimal"].clone(),
        "known_task": oracle["known_task"]["mean"].clone(),
        "config": config_echo(cfg),
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    /// Held-out R² of the decoder fit on the given parameters.
    pub r2_trained: f64,
    /// Held-out R² of the same pipeline on the seed's initial parameters.
    pub r2_untrained: f64,
    pub r2_train_rows_trained: f64,
    pub r2_train_rows_untrained: f64,
    pub n_rows: usize,
    pub heldout_rows: usize,
    /// Beliefs the exact filter can reach within a trial.
    pub reachable_beliefs: Vec<Vec<f64>>,
    /// Distinct beliefs that occurred in the collected rows.
    pub observed_beliefs: Vec<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
}

/// Fit the linear belief decoder on `params` and on the untrained network
/// the same seed starts from, with identical rollout streams.
pub fn probe_report(cfg: &ExperimentConfig, params: &AgentParams, seed: u64) -> Result<ProbeReport, CliError> {
    let setup = cfg.setup()?;
    // same draw train_run makes first on its stream
    let untrained = init_params(setup.dims, cfg.init, &mut seeded_rng(seed, 0));
    let n = cfg.probe.trials;
    let h = cfg.probe.holdout;
    let trained_pairs = collect_pairs(params, &setup, n, h, &mut seeded_rng(seed, PROBE_STREAM))?;
    let untrained_pairs = collect_pairs(&untrained, &setup, n, h, &mut seeded_rng(seed, PROBE_STREAM))?;
    let fit_t = fit_linear_decoder(&trained_pairs)?;
    let fit_u = fit_linear_decoder(&untrained_pairs)?;
    Ok(ProbeReport {
        r2_trained: fit_t.r2_heldout,
        r2_untrained: fit_u.r2_heldout,
        r2_train_rows_trained: fit_t.r2_train,
        r2_train_rows_untrained: fit_u.r2_train,
        n_rows: trained_pairs.rows(),
        heldout_rows: fit_t.heldout_rows,
        reachable_beliefs: reachable_beliefs(&setup.task_set)?,
        observed_beliefs: trained_pairs.distinct_beliefs(),
        trials: n,
        seed,
    })
}

pub fn trace(cfg: &ExperimentConfig, path: &Path, task: usize, seed: u64) -> Result<BehaviorTrace, CliError> {
    let p = load_checkpoint(cfg, path)?;
    let setup = cfg.setup()?;
    Ok(behavior_trace(&p, &setup, task, mode(cfg), &mut seeded_rng(seed, TRACE_STREAM))?)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckCase {
    pub env: EnvKind,
    pub regime: RegimeKind,
    pub steps: usize,
    pub coordinates: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<GradcheckCase>,
    /// Every single-matrix sign flip was caught.
    pub mutation_detected: bool,
    pub mutation_min_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.mutation_detected && self.cases.iter().all(|c| c.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }
}

/// Finite-difference check of BPTT on a random trial for each environment and
/// regime. With `mutate`, the analytic gradient has one matrix sign-flipped.
pub fn gradcheck(cfg: &ExperimentConfig, seed: u64, mutate: bool) -> Result<GradcheckReport, CliError> {
    let mut cases = Vec::new();
    let mut mutation_min = f64::INFINITY;
    for env in [EnvKind::Bandit, EnvKind::Corridor] {
        for regime in [RegimeKind::Rl2, RegimeKind::Rl1] {
            let mut c = ExperimentConfig::defaults(env);
            c.regime = regime;
            c.hidden_size = cfg.hidden_size;
            if env == cfg.env {
                c.corridor = cfg.corridor;
                c.hyper = cfg.hyper.clone();
            }
            let setup = c.setup()?;
            let spec = c.hyper.loss_spec();
            let mut rng = seeded_rng(seed, GRADCHECK_STREAM);
            let mut p = init_params(setup.dims, InitScheme::SmallUniform(0.3), &mut rng);
            for b in p.b_gates.iter_mut().chain(&mut p.b_policy).chain(&mut p.b_value) {
                *b = rng.gen_range(-0.3..0.3);
            }
            let task = (seed % setup.task_set.task_count() as u64) as usize;
            let traj = run_trial(&p, &setup, task, ActionMode::Sample, false, &mut rng)?.traj;
            let opts = FdOptions {
                seed,
                ..FdOptions::default()
            };
            let analytic = bptt_backward(&p, &traj, &spec)?;

            for &m in &WEIGHT_MATRICES {
                if analytic.slices()[m].iter().all(|&v| v == 0.0) {
                    continue;
                }
                let mut flipped = analytic.clone();
                flipped.0.slices_mut()[m].iter_mut().for_each(|v| *v = -*v);
                let r = finite_diff_check_against(&p, &traj, &spec, &flipped, &opts)?;
                mutation_min = mutation_min.min(r.max_relative_error);
            }

            let checked = if mutate {
                let mut g = analytic.clone();
                let m = WEIGHT_MATRICES
                    .iter()
                    .copied()
                    .find(|&m| g.slices()[m].iter().any(|&v| v != 0.0))
                    .unwrap_or(WEIGHT_MATRICES[0]);
                g.0.slices_mut()[m].iter_mut().for_each(|v| *v = -*v);
                g
            } else {
                analytic
            };
            let r = finite_diff_check_against(&p, &traj, &spec, &checked, &opts)?;
            cases.push(GradcheckCase {
                env,
                regime,
                steps: traj.len(),
                coordinates: r.coordinates_checked,
                max_relative_error: r.max_relative_error,
                passed: r.max_relative_error <= GRADCHECK_TOLERANCE,
            });
        }
    }
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOLERANCE,
        cases,
        mutation_detected: mutation_min >= MUTATION_THRESHOLD,
        mutation_min_error: mutation_min,
    })
}
