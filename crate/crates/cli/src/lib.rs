//! `metapomdp` command line: `train`, `eval`, `oracle`, `probe`, `gradcheck`
//! and `trace`.
//!
//! Every subcommand accepts `--config FILE` (flat `key = value` lines) and any
//! config key as a flag (`--learning_rate 3e-4`, `--corridor.length=9`).
//! Precedence, lowest first: built-in defaults, the config file,
//! `METAPOMDP_OUT`, flags.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O error,
//! 4 failed numerical check.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::{json, Value};

use metapomdp::config::{parse_pairs, ExperimentConfig, KEYS};

pub mod commands;

pub use commands::{
    gradcheck, oracle_report, probe_report, train_suite, GradcheckReport, ProbeReport, SuiteOutput,
};

pub const OUT_ENV: &str = "METAPOMDP_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    /// Command-line parse failure, already formatted by clap.
    #[error("{0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Check(_) => 4,
        }
    }
}

impl From<metapomdp::Error> for CliError {
    fn from(e: metapomdp::Error) -> Self {
        use metapomdp::Error as E;
        match e {
            E::Io(_) | E::Checkpoint(_) => CliError::Io(e.to_string()),
            E::Inconsistent(_) | E::DegenerateTarget(_) | E::SearchSpace { .. } => {
                CliError::Check(e.to_string())
            }
            E::Config(_) | E::Shape { .. } | E::Usage(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

pub fn command() -> Command {
    let with_config = |c: Command| {
        let c = c.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value config file"),
        );
        KEYS.iter().fold(c, |c, k| {
            c.arg(
                Arg::new(*k)
                    .long(*k)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .help_heading("Config keys"),
            )
        })
    };
    let checkpoint = || {
        Arg::new("checkpoint")
            .long("checkpoint")
            .value_name("FILE")
            .required(true)
            .value_parser(clap::value_parser!(PathBuf))
    };
    let seed = || {
        Arg::new("seed")
            .long("seed")
            .value_name("N")
            .value_parser(clap::value_parser!(u64))
            .help("Seed for the evaluation streams (default: first of --seeds)")
    };
    Command::new("metapomdp")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Recurrent meta-RL agents against exact Bayes filters")
        .subcommand_required(true)
        .args_override_self(true)
        .subcommand(with_config(
            Command::new("train").about("Train every seed and write metrics, checkpoints and a summary"),
        ))
        .subcommand(with_config(
            Command::new("eval")
                .about("Evaluate a checkpoint; prints JSON")
                .arg(checkpoint())
                .arg(seed()),
        ))
        .subcommand(with_config(
            Command::new("oracle").about("Bayes-optimal and known-task values; prints JSON"),
        ))
        .subcommand(with_config(
            Command::new("probe")
                .about("Linear belief decoding from hidden states, trained vs untrained; prints JSON")
                .arg(checkpoint())
                .arg(seed()),
        ))
        .subcommand(with_config(
            Command::new("gradcheck")
                .about("Finite-difference check of BPTT for both environments and regimes")
                .arg(
                    Arg::new("check-seed")
                        .long("seed")
                        .value_name("N")
                        .default_value("0")
                        .value_parser(clap::value_parser!(u64)),
                )
                .arg(
                    Arg::new("mutate")
                        .long("mutate")
                        .action(ArgAction::SetTrue)
                        .help("Sign-flip one gradient matrix before checking (the check must then fail)"),
                ),
        ))
        .subcommand(with_config(
            Command::new("trace")
                .about("Print one trial of a checkpointed agent step by step")
                .arg(checkpoint())
                .arg(seed())
                .arg(
                    Arg::new("task")
                        .long("task")
                        .value_name("ID")
                        .default_value("0")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(Arg::new("json").long("json").action(ArgAction::SetTrue)),
        ))
}

/// Resolve the experiment config for a subcommand.
pub fn load_config(m: &ArgMatches) -> Result<ExperimentConfig, CliError> {
    let mut pairs = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_at(path))?;
            parse_pairs(&text)?
        }
        None => Vec::new(),
    };
    if let Ok(out) = std::env::var(OUT_ENV) {
        if !out.is_empty() {
            pairs.push(("out".into(), out));
        }
    }
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k) {
            pairs.push((k.to_string(), v.clone()));
        }
    }
    Ok(ExperimentConfig::resolve(&pairs)?)
}

/// Fully-resolved config as a JSON object of `key: "value"` strings.
pub fn config_echo(cfg: &ExperimentConfig) -> Value {
    Value::Object(
        cfg.to_pairs()
            .into_iter()
            .map(|(k, v)| (k, Value::String(v)))
            .collect(),
    )
}

fn print_json(out: &mut dyn Write, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn eval_seed(m: &ArgMatches, cfg: &ExperimentConfig) -> u64 {
    m.get_one::<u64>("seed").copied().unwrap_or(cfg.seeds[0])
}

/// Parse `args` (including the program name) and run; output goes to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    write!(out, "{}", e.render())?;
                    Ok(())
                }
                _ => Err(CliError::Usage(e.render().to_string().trim_end().to_string())),
            };
        }
    };
    let (name, m) = matches.subcommand().expect("subcommand required");
    let cfg = load_config(m)?;
    match name {
        "train" => {
            let suite = train_suite(&cfg, &mut |line| {
                let _ = writeln!(out, "{line}");
            })?;
            writeln!(out, "wrote {}", suite.dir.join("summary.json").display())?;
            Ok(())
        }
        "oracle" => print_json(out, &oracle_report(&cfg)?),
        "eval" => {
            let path = m.get_one::<PathBuf>("checkpoint").unwrap();
            let v = commands::eval_report(&cfg, path, eval_seed(m, &cfg))?;
            print_json(out, &v)
        }
        "probe" => {
            let path = m.get_one::<PathBuf>("checkpoint").unwrap();
            let params = commands::load_checkpoint(&cfg, path)?;
            let r = probe_report(&cfg, &params, eval_seed(m, &cfg))?;
            let mut v = serde_json::to_value(&r).map_err(|e| CliError::Io(e.to_string()))?;
            v["config"] = config_echo(&cfg);
            v["checkpoint"] = json!(path.display().to_string());
            print_json(out, &v)
        }
        "gradcheck" => {
            let seed = *m.get_one::<u64>("check-seed").unwrap();
            let report = gradcheck(&cfg, seed, m.get_flag("mutate"))?;
            for c in &report.cases {
                writeln!(
                    out,
                    "{:<9} {:<4} max relative error {:.3e} over {} coordinates  {}",
                    c.env,
                    c.regime,
                    c.max_relative_error,
                    c.coordinates,
                    if c.passed { "PASS" } else { "FAIL" }
                )?;
            }
            writeln!(
                out,
                "mutation check: sign-flipped gradients {} (smallest error {:.3e})",
                if report.mutation_detected { "rejected" } else { "ACCEPTED" },
                report.mutation_min_error
            )?;
            if report.passed() {
                writeln!(out, "gradcheck passed (tolerance {:.0e})", report.tolerance)?;
                Ok(())
            } else {
                Err(CliError::Check(format!(
                    "largest relative error {:.3e} exceeds {:.0e}",
                    report.max_relative_error(),
                    report.tolerance
                )))
            }
        }
        "trace" => {
            let path = m.get_one::<PathBuf>("checkpoint").unwrap();
            let task = *m.get_one::<usize>("task").unwrap();
            let trace = commands::trace(&cfg, path, task, eval_seed(m, &cfg))?;
            if m.get_flag("json") {
                print_json(out, &serde_json::to_value(&trace).map_err(|e| CliError::Io(e.to_string()))?)
            } else {
                write!(out, "{trace}")?;
                Ok(())
            }
        }
        other => unreachable!("unhandled subcommand {other}"),
    }
}
