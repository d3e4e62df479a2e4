//! Scenario runner behind the `nullscatter` binary. Each subcommand reads one
//! scenario file, runs the experiment and writes a JSON report (plus CSV
//! tables where the experiment produces them).

pub mod commands;
pub mod scenario;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nullscatter::Error;
use serde::Serialize;
use serde_json::Value;

pub use scenario::Scenario;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io(_) => EXIT_CONFIG,
            Self::Core(e) => match e {
                Error::ConstraintDrift { .. } => EXIT_VIOLATION,
                Error::InvalidInput(_) | Error::ShapeMismatch(_) | Error::Arity { .. } | Error::Signature(_) => {
                    EXIT_CONFIG
                }
                _ => EXIT_DOMAIN,
            },
        }
    }
}

/// Outcome class of a completed run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    InvariantViolation,
    DomainFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Pass => EXIT_PASS,
            Self::InvariantViolation => EXIT_VIOLATION,
            Self::DomainFailure => EXIT_DOMAIN,
        }
    }
}

/// What a subcommand produced, before it is written out.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    pub result: Value,
    /// Largest `|H|` met along any integrated null trajectory.
    pub max_abs_h: Option<f64>,
    /// Extra files `(suffix, contents)`, e.g. `("csv", …)`.
    pub tables: Vec<(String, String)>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tol_overrides: Vec<(String, f64)>,
}

/// Parses `k=v`.
pub fn parse_override(text: &str) -> Result<(String, f64), CliError> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("tolerance override {text:?} is not k=v")))?;
    let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("tolerance override {text:?}: bad value")))?;
    Ok((k.trim().to_string(), v))
}

/// Applies command-line overrides to a scenario.
pub fn resolve(mut scenario: Scenario, opts: &RunOptions) -> Result<Scenario, CliError> {
    if let Some(seed) = opts.seed {
        scenario.reseed(seed);
    }
    for (k, v) in &opts.tol_overrides {
        scenario.tolerances.set(k, *v)?;
    }
    scenario.validate()?;
    Ok(scenario)
}

/// Runs `command` on an already resolved scenario.
pub fn execute(command: &str, scenario: &Scenario) -> Result<Outcome, CliError> {
    if command != scenario.experiment.command() {
        return Err(CliError::Config(format!(
            "scenario {} describes a {} experiment, not {command}",
            scenario.name,
            scenario.experiment.command()
        )));
    }
    commands::run(scenario)
}

/// The report document: resolved configuration, outcome and result.
pub fn report(command: &str, scenario: &Scenario, outcome: &Outcome) -> Value {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    serde_json::json!({
        "command": command,
        "scenario": scenario,
        "resolved_controls": scenario.tolerances.controls(),
        "failure_quota": scenario.tolerances.failure_quota(),
        "seed": scenario.seed,
        "timestamp": timestamp,
        "status": outcome.status,
        "exit_code": outcome.status.exit_code(),
        "max_abs_h": outcome.max_abs_h,
        "result": outcome.result,
    })
}

/// Writes `<dir>/<name>.<command>.json` and the tables; returns the paths.
pub fn write_outputs(dir: &Path, command: &str, scenario: &Scenario, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}.{command}", scenario.name);
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&report(command, scenario, outcome)).expect("report serializes");
    std::fs::write(&json, text + "\n")?;
    let mut paths = vec![json];
    for (suffix, body) in &outcome.tables {
        let p = dir.join(format!("{stem}.{suffix}"));
        std::fs::write(&p, body)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Full pipeline of one invocation; returns the exit code. Diagnostics go to
/// standard error.
pub fn run_file(command: &str, path: &Path, opts: &RunOptions) -> i32 {
    let go = || -> Result<(Status, Vec<PathBuf>), CliError> {
        let scenario = resolve(Scenario::load(path)?, opts)?;
        let outcome = execute(command, &scenario)?;
        let dir = opts
            .out
            .clone()
            .or_else(|| scenario.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let paths = write_outputs(&dir, command, &scenario, &outcome)?;
        Ok((outcome.status, paths))
    };
    match go() {
        Ok((status, paths)) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            if status != Status::Pass {
                eprintln!("{command}: {status:?}");
            }
            status.exit_code()
        }
        Err(e) => {
            eprintln!("{command}: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Core(Error::Trapped { cap: 1.0 }).exit_code(), EXIT_DOMAIN);
        assert_eq!(CliError::Core(Error::ConstraintDrift { value: 1.0, tol: 0.0, s: 0.0 }).exit_code(), EXIT_VIOLATION);
        assert_eq!(Status::InvariantViolation.exit_code(), 2);
    }

    #[test]
    fn overrides_parse() {
        assert_eq!(parse_override("rtol=1e-12").unwrap(), ("rtol".to_string(), 1e-12));
        assert!(parse_override("rtol").is_err());
        assert!(parse_override("rtol=abc").is_err());
    }
}
