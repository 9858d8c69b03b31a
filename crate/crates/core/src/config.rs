//! Experiment configuration: a flat `key = value` text format with dotted
//! section names (`corridor.length = 11`). Every key can also be supplied as
//! an override; unknown keys are rejected by name.
//!
//! Defaults depend on `env`, so it is resolved first and the remaining keys
//! are applied on top of that environment's defaults.

use serde::Serialize;

use crate::a2c::Hyperparams;
use crate::envs::{
    make_bandit_with, make_corridor_with, observation_dim, EnvKind, DEFAULT_CORRIDOR_LENGTH,
    DEFAULT_CORRIDOR_START, DEFAULT_CORRIDOR_STEP_CAP,
};
use crate::error::{Error, Result};
use crate::net::{InitScheme, NetDims, DEFAULT_HIDDEN};
use crate::pomdp::TaskSet;
use crate::regimes::{RegimeConfig, RegimeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorridorGeometry {
    pub length: usize,
    pub start: usize,
    pub step_cap: usize,
}

impl Default for CorridorGeometry {
    fn default() -> Self {
        CorridorGeometry {
            length: DEFAULT_CORRIDOR_LENGTH,
            start: DEFAULT_CORRIDOR_START,
            step_cap: DEFAULT_CORRIDOR_STEP_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSettings {
    /// Evaluate every this many updates (0 disables snapshots).
    pub every: usize,
    pub rollouts: usize,
    /// Take the most probable action instead of sampling.
    pub greedy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeSettings {
    pub trials: usize,
    pub holdout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub regime: RegimeKind,
    pub corridor: CorridorGeometry,
    pub hyper: Hyperparams,
    pub hidden_size: usize,
    pub init: InitScheme,
    pub seeds: Vec<u64>,
    pub out: String,
    pub suite: Option<String>,
    pub jobs: usize,
    pub eval: EvalSettings,
    pub probe: ProbeSettings,
}

/// Every accepted key, in canonical order.
pub const KEYS: &[&str] = &[
    "env",
    "regime",
    "seeds",
    "out",
    "suite",
    "jobs",
    "hidden_size",
    "init",
    "init.range",
    "learning_rate",
    "discount",
    "entropy_coef",
    "grad_clip",
    "episodes_per_trial",
    "value_coef",
    "trials_per_update",
    "total_updates",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "corridor.length",
    "corridor.start",
    "corridor.step_cap",
    "eval.every",
    "eval.rollouts",
    "eval.greedy",
    "probe.trials",
    "probe.holdout",
];

impl ExperimentConfig {
    pub fn defaults(env: EnvKind) -> Self {
        ExperimentConfig {
            env,
            regime: RegimeKind::Rl2,
            corridor: CorridorGeometry::default(),
            hyper: Hyperparams::for_env(env),
            hidden_size: DEFAULT_HIDDEN,
            init: InitScheme::default(),
            seeds: vec![0],
            out: "out".into(),
            suite: None,
            jobs: 1,
            eval: EvalSettings {
                every: 100,
                rollouts: 100,
                greedy: false,
            },
            probe: ProbeSettings {
                trials: 200,
                holdout: 0.25,
            },
        }
    }

    /// Resolve `(key, value)` pairs (later pairs win) into a full config.
    pub fn resolve(pairs: &[(String, String)]) -> Result<Self> {
        for (k, _) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
        }
        let env = match pairs.iter().rev().find(|(k, _)| k == "env") {
            Some((_, v)) => v.parse()?,
            None => EnvKind::Bandit,
        };
        let mut cfg = Self::defaults(env);
        // init.range only makes sense once the scheme is known
        let mut range = None;
        for (k, v) in pairs {
            if k == "init.range" {
                range = Some(parse_num::<f64>(k, v)?);
            } else {
                cfg.set(k, v)?;
            }
        }
        if let Some(r) = range {
            match cfg.init {
                InitScheme::SmallUniform(_) => cfg.init = InitScheme::SmallUniform(r),
                InitScheme::Zero => {
                    return Err(Error::Config("init.range given with init = zero".into()))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse config file text and apply `overrides` on top.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        pairs.extend_from_slice(overrides);
        Self::resolve(&pairs)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let h = &mut self.hyper;
        match key {
            "env" => self.env = v.parse()?,
            "regime" => self.regime = v.parse()?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "out" => self.out = v.to_string(),
            "suite" => self.suite = Some(v.to_string()),
            "jobs" => self.jobs = parse_num(key, v)?,
            "hidden_size" => self.hidden_size = parse_num(key, v)?,
            "init" => {
                self.init = match v {
                    "zero" => InitScheme::Zero,
                    "small_uniform" => InitScheme::default(),
                    other => {
                        return Err(Error::Config(format!(
                            "unknown init scheme `{other}` (expected zero or small_uniform)"
                        )))
                    }
                }
            }
            "learning_rate" => h.learning_rate = parse_num(key, v)?,
            "discount" => h.discount = parse_num(key, v)?,
            "entropy_coef" => h.entropy_coef = parse_num(key, v)?,
            "grad_clip" => h.grad_clip = parse_num(key, v)?,
            "episodes_per_trial" => h.episodes_per_trial = parse_num(key, v)?,
            "value_coef" => h.value_coef = parse_num(key, v)?,
            "trials_per_update" => h.trials_per_update = parse_num(key, v)?,
            "total_updates" => h.total_updates = parse_num(key, v)?,
            "adam.beta1" => h.adam.beta1 = parse_num(key, v)?,
            "adam.beta2" => h.adam.beta2 = parse_num(key, v)?,
            "adam.eps" => h.adam.eps = parse_num(key, v)?,
            "corridor.length" => self.corridor.length = parse_num(key, v)?,
            "corridor.start" => self.corridor.start = parse_num(key, v)?,
            "corridor.step_cap" => self.corridor.step_cap = parse_num(key, v)?,
            "eval.every" => self.eval.every = parse_num(key, v)?,
            "eval.rollouts" => self.eval.rollouts = parse_num(key, v)?,
            "eval.greedy" => self.eval.greedy = parse_num(key, v)?,
            "probe.trials" => self.probe.trials = parse_num(key, v)?,
            "probe.holdout" => self.probe.holdout = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds given".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.eval.rollouts == 0 {
            return Err(Error::Config("eval.rollouts must be positive".into()));
        }
        if !(self.probe.holdout > 0.0 && self.probe.holdout < 1.0) {
            return Err(Error::Config("probe.holdout must lie in (0, 1)".into()));
        }
        if let InitScheme::SmallUniform(r) = self.init {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Config(format!("init.range {r} must be positive")));
            }
        }
        // geometry errors surface here, before any compute
        self.task_set()?;
        Ok(())
    }

    pub fn task_set(&self) -> Result<TaskSet> {
        let (k, gamma) = (self.hyper.episodes_per_trial, self.hyper.discount);
        match self.env {
            EnvKind::Bandit => make_bandit_with(k, gamma),
            EnvKind::Corridor => make_corridor_with(
                self.corridor.length,
                self.corridor.start,
                self.corridor.step_cap,
                k,
                gamma,
            ),
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        let task_set = self.task_set()?;
        let regime = RegimeConfig {
            kind: self.regime,
            action_count: task_set.action_count(),
            observation_dim: observation_dim(task_set.encoding()),
            task_count: task_set.task_count(),
        };
        let dims = NetDims {
            input: regime.input_dim(),
            hidden: self.hidden_size,
            actions: task_set.action_count(),
        };
        Ok(Setup {
            env: self.env,
            task_set,
            regime,
            dims,
        })
    }

    /// Suite directory name: explicit `suite` or `<env>-<regime>`.
    pub fn suite_name(&self) -> String {
        self.suite
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.env, self.regime))
    }

    /// Canonical `key = value` listing that resolves back to this config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let h = &self.hyper;
        let mut out: Vec<(&str, String)> = vec![
            ("env", self.env.to_string()),
            ("regime", self.regime.to_string()),
            ("seeds", format_seeds(&self.seeds)),
            ("out", self.out.clone()),
        ];
        if let Some(s) = &self.suite {
            out.push(("suite", s.clone()));
        }
        out.push(("jobs", self.jobs.to_string()));
        out.push(("hidden_size", self.hidden_size.to_string()));
        match self.init {
            InitScheme::Zero => out.push(("init", "zero".into())),
            InitScheme::SmallUniform(r) => {
                out.push(("init", "small_uniform".into()));
                out.push(("init.range", r.to_string()));
            }
        }
        out.extend([
            ("learning_rate", h.learning_rate.to_string()),
            ("discount", h.discount.to_string()),
            ("entropy_coef", h.entropy_coef.to_string()),
            ("grad_clip", h.grad_clip.to_string()),
            ("episodes_per_trial", h.episodes_per_trial.to_string()),
            ("value_coef", h.value_coef.to_string()),
            ("trials_per_update", h.trials_per_update.to_string()),
            ("total_updates", h.total_updates.to_string()),
            ("adam.beta1", h.adam.beta1.to_string()),
            ("adam.beta2", h.adam.beta2.to_string()),
            ("adam.eps", h.adam.eps.to_string()),
            ("corridor.length", self.corridor.length.to_string()),
            ("corridor.start", self.corridor.start.to_string()),
            ("corridor.step_cap", self.corridor.step_cap.to_string()),
            ("eval.every", self.eval.every.to_string()),
            ("eval.rollouts", self.eval.rollouts.to_string()),
            ("eval.greedy", self.eval.greedy.to_string()),
            ("probe.trials", self.probe.trials.to_string()),
            ("probe.holdout", self.probe.holdout.to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Identity of the training setup, ignoring seeds and output locations.
    pub fn fingerprint(&self) -> String {
        self.to_pairs()
            .into_iter()
            .filter(|(k, _)| !matches!(k.as_str(), "seeds" | "out" | "suite" | "jobs"))
            .map(|(k, v)| format!("{k}={v};"))
            .collect()
    }
}

/// Resolved environment, regime and network shape for one config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub env: EnvKind,
    pub task_set: TaskSet,
    pub regime: RegimeConfig,
    pub dims: NetDims,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

/// Seeds as `a..b` (inclusive), a comma list, or a single integer.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let v = v.trim();
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = parse_num("seeds", a)?;
        let b: u64 = parse_num("seeds", b.trim_start_matches('='))?;
        if b < a {
            return Err(Error::Config(format!("empty seed range `{v}`")));
        }
        return Ok((a..=b).collect());
    }
    v.split(',').map(|s| parse_num("seeds", s)).collect()
}

fn format_seeds(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    match seeds {
        [one] => one.to_string(),
        [first, .., last] if contiguous => format!("{first}..{last}"),
        _ => seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    }
}

/// Split config text into `(key, value)` pairs. `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(kv: &[(&str, &str)]) -> Vec<(String, String)> {
        kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn corridor_defaults_follow_env() {
        let cfg = ExperimentConfig::resolve(&pairs(&[("regime", "rl1"), ("env", "corridor")])).unwrap();
        assert_eq!(cfg.hyper.learning_rate, 1e-4);
        assert_eq!(cfg.hyper.discount, 0.90);
        assert_eq!(cfg.regime, RegimeKind::Rl1);
        assert_eq!(cfg.setup().unwrap().dims.input, 16);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::resolve(&pairs(&[("corridor.width", "3")])).unwrap_err();
        assert!(err.to_string().contains("corridor.width"));
    }

    #[test]
    fn bad_geometry_rejected_before_compute() {
        let err = ExperimentConfig::resolve(&pairs(&[("env", "corridor"), ("corridor.start", "0")]))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn seeds_formats() {
        assert_eq!(parse_seeds("0..19").unwrap().len(), 20);
        assert_eq!(parse_seeds("3,5,9").unwrap(), vec![3, 5, 9]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert!(parse_seeds("5..2").is_err());
    }

    #[test]
    fn text_roundtrip() {
        let text = "# bandit sweep\nenv = bandit\nseeds = 0..4\ninit = zero\neval.greedy = true\n";
        let cfg = ExperimentConfig::from_text(text, &pairs(&[("total_updates", "10")])).unwrap();
        assert_eq!(cfg.init, InitScheme::Zero);
        assert_eq!(cfg.hyper.total_updates, 10);
        let again = ExperimentConfig::from_text(&cfg.to_text(), &[]).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn init_range_applies_to_small_uniform() {
        let cfg = ExperimentConfig::resolve(&pairs(&[("init.range", "0.05")])).unwrap();
        assert_eq!(cfg.init, InitScheme::SmallUniform(0.05));
        assert!(ExperimentConfig::resolve(&pairs(&[("init", "zero"), ("init.range", "0.1")])).is_err());
    }

    #[test]
    fn malformed_line() {
        assert!(parse_pairs("env bandit").is_err());
    }
}
