//! Advantage actor-critic: Monte Carlo returns over whole trials, the
//! policy/value/entropy loss, global-norm gradient clipping and Adam.

use serde::Serialize;

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::net::{AgentParams, GradientBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub discount: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    pub episodes_per_trial: usize,
    pub value_coef: f64,
    pub trials_per_update: usize,
    pub total_updates: usize,
    pub adam: AdamSettings,
}

impl Hyperparams {
    /// Defaults for an environment: bandit and gridworld columns of the
    /// original hyperparameter table, plus batch and budget choices.
    pub fn for_env(env: EnvKind) -> Self {
        match env {
            EnvKind::Bandit => Hyperparams {
                learning_rate: 1e-3,
                discount: 0.80,
                entropy_coef: 0.001,
                grad_clip: 1.0,
                episodes_per_trial: 10,
                value_coef: 0.05,
                trials_per_update: 16,
                total_updates: 5_000,
                adam: AdamSettings::default(),
            },
            EnvKind::Corridor => Hyperparams {
                learning_rate: 1e-4,
                discount: 0.90,
                entropy_coef: 0.01,
                grad_clip: 5.0,
                episodes_per_trial: 2,
                value_coef: 0.05,
                trials_per_update: 16,
                total_updates: 20_000,
                adam: AdamSettings::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} not in [0, 1)", self.discount));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be non-negative".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip {} must be positive", self.grad_clip));
        }
        if self.episodes_per_trial == 0 || self.trials_per_update == 0 {
            return bad("episodes_per_trial and trials_per_update must be positive".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("invalid Adam settings".into());
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            discount: self.discount,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }
}

/// The coefficients that define the per-trial loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSpec {
    pub discount: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// Environment-side record of one step, kept for filtering and transcripts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    /// Agent location (within-task state) when the action was taken.
    pub state_before: usize,
    pub landing_state: usize,
    pub observation: usize,
    /// State after any reset.
    pub state_after: usize,
    pub episode_done: bool,
}

/// Everything recorded while an agent plays one trial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub input_dim: usize,
    /// Row-major, one `input_dim` row per step.
    pub inputs: Vec<f64>,
    /// The recurrent state was zeroed before this step.
    pub resets: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub entropies: Vec<f64>,
    pub rewards: Vec<f64>,
    pub episode_index: Vec<usize>,
    pub env: Vec<EnvStep>,
    pub task_id: usize,
}

impl Trajectory {
    pub fn new(input_dim: usize, task_id: usize) -> Self {
        Trajectory {
            input_dim,
            task_id,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn input(&self, t: usize) -> &[f64] {
        &self.inputs[t * self.input_dim..(t + 1) * self.input_dim]
    }

    pub(crate) fn check_lengths(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            ("trajectory resets", self.resets.len()),
            ("trajectory log_probs", self.log_probs.len()),
            ("trajectory values", self.values.len()),
            ("trajectory rewards", self.rewards.len()),
            ("trajectory episode_index", self.episode_index.len()),
        ];
        for (what, len) in lens {
            if len != n {
                return Err(Error::shape(what, n, len));
            }
        }
        if self.inputs.len() != n * self.input_dim {
            return Err(Error::shape("trajectory inputs", n * self.input_dim, self.inputs.len()));
        }
        if n > 0 && !self.resets[0] {
            return Err(Error::Usage("trajectory must start from a reset state".into()));
        }
        Ok(())
    }

    /// Full structural check, including that the trial has exactly `episodes` segments.
    pub fn validate(&self, episodes: usize) -> Result<()> {
        self.check_lengths()?;
        if self.episode_index.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1) {
            return Err(Error::Usage("episode index must step by 0 or 1".into()));
        }
        let segments = self.episode_index.last().map_or(0, |e| e + 1);
        if segments != episodes {
            return Err(Error::shape("episode segments", episodes, segments));
        }
        Ok(())
    }
}

/// `G_t = r_t + γ G_{t+1}`, with nothing after the end of the trial.
/// Discounting runs straight through episode boundaries.
pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + discount * acc;
        *g = acc;
    }
    out
}

/// Returns and advantages `G_t - V_t` using the values recorded at rollout time.
pub fn advantages(traj: &Trajectory, discount: f64) -> (Vec<f64>, Vec<f64>) {
    let returns = discounted_returns(&traj.rewards, discount);
    let adv = returns.iter().zip(&traj.values).map(|(g, v)| g - v).collect();
    (returns, adv)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Loss components from what was recorded during the rollout.
pub fn a2c_loss(traj: &Trajectory, hp: &Hyperparams) -> LossBreakdown {
    let (returns, adv) = advantages(traj, hp.discount);
    let policy_loss = -adv
        .iter()
        .zip(&traj.log_probs)
        .map(|(a, lp)| a * lp)
        .sum::<f64>();
    let value_loss = traj
        .values
        .iter()
        .zip(&returns)
        .map(|(v, g)| (v - g).powi(2))
        .sum::<f64>();
    let entropy = traj.entropies.iter().sum::<f64>();
    LossBreakdown {
        policy_loss,
        value_loss,
        entropy,
        total: policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy,
    }
}

/// Rescale so the global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(g: &mut GradientBundle, max_norm: f64) -> f64 {
    let norm = g.global_norm();
    if norm > max_norm {
        g.scale(max_norm / norm);
    }
    norm
}

/// Adam with bias correction; moments persist across calls.
#[derive(Debug, Clone)]
pub struct Adam {
    settings: AdamSettings,
    learning_rate: f64,
    m: AgentParams,
    v: AgentParams,
    t: u64,
}

impl Adam {
    pub fn new(params: &AgentParams, learning_rate: f64, settings: AdamSettings) -> Self {
        Adam {
            settings,
            learning_rate,
            m: AgentParams::zeros(params.dims),
            v: AgentParams::zeros(params.dims),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, p: &mut AgentParams, g: &GradientBundle) -> Result<()> {
        p.check_same_shape(g)?;
        p.check_same_shape(&self.m)?;
        self.t += 1;
        let AdamSettings { beta1, beta2, eps } = self.settings;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let lr = self.learning_rate;
        let grads = g.slices();
        for (((pt, mt), vt), gt) in p
            .slices_mut()
            .into_iter()
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
            .zip(grads)
        {
            for i in 0..pt.len() {
                let gi = gt[i];
                mt[i] = beta1 * mt[i] + (1.0 - beta1) * gi;
                vt[i] = beta2 * vt[i] + (1.0 - beta2) * gi * gi;
                let m_hat = mt[i] / c1;
                let v_hat = vt[i] / c2;
                pt[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One Adam update of `p` with `g`.
pub fn optimizer_step(p: &mut AgentParams, g: &GradientBundle, opt: &mut Adam) -> Result<()> {
    opt.step(p, g)
}
