//! Browser bindings for the `metapomdp` demo page.
//!
//! * [`oracle_summary`]: Bayes-optimal and known-task values for a config.
//! * [`CorridorWalk`]: play the corridor by hand and watch the exact task belief.
//! * [`Trainer`]: train an LSTM agent a few updates at a time.
//!
//! The exported methods return JSON strings. Each one wraps a plain Rust
//! method returning [`serde_json::Value`], which is what the native tests call.

use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use metapomdp::a2c::Adam;
use metapomdp::config::{ExperimentConfig, Setup};
use metapomdp::envs::{make_corridor, LEFT, RIGHT};
use metapomdp::harness::{behavior_trace, evaluate, seeded_rng, train_update, ActionMode};
use metapomdp::net::{init_params, AgentParams};
use metapomdp::pomdp::{
    belief_update, bayes_optimal_return, condition_on_reset, known_task_optimum, step_trial,
    BayesOracle, Belief, TaskSet, TrialState,
};
use metapomdp::Result;

fn js(r: Result<Value>) -> std::result::Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

/// Parse `key = value` lines into a config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_text(text, &[])
}

/// Oracle values for the environment described by `config_text`.
pub fn oracle_value(config_text: &str) -> Result<Value> {
    let cfg = parse_config(config_text)?;
    let ts = cfg.task_set()?;
    let bayes = bayes_optimal_return(&ts)?;
    let known = known_task_optimum(&ts)?;
    Ok(json!({
        "env": cfg.env.to_string(),
        "episodes_per_trial": ts.episodes_per_trial(),
        "bayes_optimal": bayes,
        "known_task": known,
    }))
}

#[wasm_bindgen]
pub fn oracle_summary(config_text: &str) -> std::result::Result<String, JsError> {
    js(oracle_value(config_text))
}

/// A corridor trial driven by the page, with the exact belief over goals.
#[wasm_bindgen]
pub struct CorridorWalk {
    ts: TaskSet,
    length: usize,
    state: TrialState,
    belief: Belief,
    rng: ChaCha8Rng,
    total_reward: f64,
    timesteps: usize,
    last_reward: f64,
}

impl CorridorWalk {
    pub fn create(length: usize, start: usize, task: usize, seed: u64) -> Result<Self> {
        let ts = make_corridor(length, start, metapomdp::envs::DEFAULT_CORRIDOR_STEP_CAP)?;
        if task >= ts.task_count() {
            return Err(metapomdp::Error::Usage(format!("task {task} does not exist")));
        }
        let mut rng = seeded_rng(seed, 0);
        let state = ts.start_trial(task, &mut rng);
        let belief = condition_on_reset(&Belief::uniform(ts.task_count()), &ts, state.env_state)?;
        Ok(CorridorWalk {
            ts,
            length,
            state,
            belief,
            rng,
            total_reward: 0.0,
            timesteps: 0,
            last_reward: 0.0,
        })
    }

    pub fn view(&self) -> Value {
        json!({
            "length": self.length,
            "cell": self.state.env_state,
            "episode": self.state.episode_index,
            "episodes_per_trial": self.ts.episodes_per_trial(),
            "step_in_episode": self.state.step_in_episode,
            "belief": self.belief.probs(),
            "last_reward": self.last_reward,
            "total_reward": self.total_reward,
            "timesteps": self.timesteps,
            "done": self.state.trial_done,
            "task": self.state.trial_done.then_some(self.state.task_id),
        })
    }

    pub fn apply(&mut self, action: usize) -> Result<Value> {
        let before = self.state.env_state;
        let out = step_trial(&self.ts, &self.state, action, &mut self.rng)?;
        let mut b = belief_update(
            &self.belief,
            action,
            out.observation,
            out.reward,
            &self.ts,
            before,
            out.landing_state,
        )?;
        if out.episode_done && !out.trial_done {
            b = condition_on_reset(&b, &self.ts, out.state.env_state)?;
        }
        self.belief = b;
        self.state = out.state;
        self.total_reward += out.reward;
        self.timesteps += 1;
        self.last_reward = out.reward;
        Ok(self.view())
    }

    /// Action the Bayes-optimal policy takes from here.
    pub fn oracle_action(&self) -> Result<usize> {
        if self.state.trial_done {
            return Err(metapomdp::Error::Usage("the trial is over".into()));
        }
        BayesOracle::new(&self.ts).best_action(
            &self.belief,
            self.state.env_state,
            self.state.episode_index,
            self.state.step_in_episode,
        )
    }
}

#[wasm_bindgen]
impl CorridorWalk {
    #[wasm_bindgen(constructor)]
    pub fn new(length: usize, start: usize, task: usize, seed: u32) -> std::result::Result<CorridorWalk, JsError> {
        Self::create(length, start, task, seed.into()).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn state(&self) -> String {
        self.view().to_string()
    }

    pub fn left(&mut self) -> std::result::Result<String, JsError> {
        js(self.apply(LEFT))
    }

    pub fn right(&mut self) -> std::result::Result<String, JsError> {
        js(self.apply(RIGHT))
    }

    /// Take the Bayes-optimal action.
    pub fn oracle_step(&mut self) -> std::result::Result<String, JsError> {
        js(self.oracle_action().and_then(|a| self.apply(a)))
    }
}

/// An agent being trained with A2C, one batch per update.
#[wasm_bindgen]
pub struct Trainer {
    cfg: ExperimentConfig,
    setup: Setup,
    params: AgentParams,
    opt: Adam,
    rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    update: usize,
}

impl Trainer {
    pub fn create(config_text: &str, seed: u64) -> Result<Self> {
        let cfg = parse_config(config_text)?;
        let setup = cfg.setup()?;
        let mut rng = seeded_rng(seed, 0);
        let params = init_params(setup.dims, cfg.init, &mut rng);
        let opt = Adam::new(&params, cfg.hyper.learning_rate, cfg.hyper.adam);
        Ok(Trainer {
            cfg,
            setup,
            params,
            opt,
            rng,
            eval_rng: seeded_rng(seed, 1),
            update: 0,
        })
    }

    /// Run `n` updates; returns the per-update batch means.
    pub fn run(&mut self, n: usize) -> Result<Value> {
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let row = train_update(
                &mut self.params,
                &mut self.opt,
                &self.cfg,
                &self.setup,
                self.update,
                &mut self.rng,
            )?;
            self.update += 1;
            rows.push(json!([row.update, row.mean_return, row.mean_timesteps, row.entropy]));
        }
        Ok(json!({ "update": self.update, "rows": rows }))
    }

    pub fn eval_value(&mut self, rollouts: usize) -> Result<Value> {
        let r = evaluate(&self.params, &self.setup, rollouts, ActionMode::Sample, &mut self.eval_rng)?;
        Ok(json!({
            "update": self.update,
            "mean_return": r.mean_return,
            "mean_timesteps": r.mean_timesteps,
            "return_std_error": r.return_std_error,
        }))
    }

    pub fn trace_text(&mut self, task: usize) -> Result<String> {
        let t = behavior_trace(&self.params, &self.setup, task, ActionMode::Sample, &mut self.eval_rng)?;
        Ok(t.to_string())
    }
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(config_text: &str, seed: u32) -> std::result::Result<Trainer, JsError> {
        Self::create(config_text, seed.into()).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn train(&mut self, updates: usize) -> std::result::Result<String, JsError> {
        js(self.run(updates))
    }

    pub fn evaluate(&mut self, rollouts: usize) -> std::result::Result<String, JsError> {
        js(self.eval_value(rollouts))
    }

    pub fn trace(&mut self, task: usize) -> std::result::Result<String, JsError> {
        self.trace_text(task).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn updates(&self) -> usize {
        self.update
    }

    pub fn total_updates(&self) -> usize {
        self.cfg.hyper.total_updates
    }
}
