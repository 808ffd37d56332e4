//! `varprompt <experiment> [flags]`. Every config key has a `--kebab-case`
//! flag; precedence is defaults < `VARPROMPT_SEED` < `--config` file < flags.

use std::ffi::OsString;
use std::path::Path;

use clap::{Arg, ArgAction, Command};
use thiserror::Error;

use crate::config::{apply_file, ConfigError, ExperimentConfig, EXPERIMENTS, KEYS, SEED_ENV};

const BOOL_KEYS: [&str; 3] = ["paper_literal_reparam", "antithetic", "same_task"];

#[derive(Debug, Error)]
pub enum CliError {
    /// Usage errors, `--help` and `--version`; clap renders and exits.
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

pub fn command() -> Command {
    let mut cmd = Command::new("varprompt")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Seeded experiments on variational prompt distributions")
        .arg(
            Arg::new("experiment")
                .required(true)
                .value_parser(EXPERIMENTS)
                .help("experiment to run"),
        )
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("flat `key = value` file applied before flags"),
        );
    for (key, help) in KEYS {
        let mut arg = Arg::new(*key)
            .long(flag(key))
            .help(*help)
            .action(ArgAction::Set)
            .allow_negative_numbers(true);
        if BOOL_KEYS.contains(key) {
            arg = arg
                .num_args(0..=1)
                .default_missing_value("true")
                .value_name("BOOL");
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

/// Parses `argv` (program name first) with an explicit seed override.
pub fn parse_args_with_env<I, T>(argv: I, env_seed: Option<&str>) -> Result<ExperimentConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let m = command().try_get_matches_from(argv)?;
    let experiment = m.get_one::<String>("experiment").expect("required");
    let mut cfg = ExperimentConfig::defaults(experiment)?;
    if let Some(seed) = env_seed {
        cfg.set("seed", seed)?;
    }
    if let Some(path) = m.get_one::<String>("config") {
        apply_file(&mut cfg, Path::new(path))?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_args<I, T>(argv: I) -> Result<ExperimentConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let env = std::env::var(SEED_ENV).ok();
    parse_args_with_env(argv, env.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<ExperimentConfig, CliError> {
        parse_args_with_env(std::iter::once("varprompt").chain(args.iter().copied()), None)
    }

    #[test]
    fn defaults_only() {
        let cfg = parse(&["prompt-study"]).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults("prompt-study").unwrap());
    }

    #[test]
    fn explicit_training_defaults() {
        let cfg = parse(&["prompt-study", "--nu", "5", "--mc-samples", "10"]).unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults("prompt-study").unwrap());
    }

    #[test]
    fn negative_nu_is_named() {
        match parse(&["prompt-study", "--nu", "-1"]) {
            Err(CliError::Config(e)) => assert_eq!(e.key(), Some("nu")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bool_flags() {
        let cfg = parse(&["scaling", "--antithetic", "--same-task=false"]).unwrap();
        assert!(cfg.antithetic && !cfg.same_task);
        let cfg = parse(&["center-seeking", "--antithetic", "false"]).unwrap();
        assert!(!cfg.antithetic);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        std::fs::write(&file, "# a comment\nseed = 7\nlr = 0.25\n").unwrap();
        let f = file.to_str().unwrap();
        let env = |args: &[&str], seed| {
            parse_args_with_env(std::iter::once("varprompt").chain(args.iter().copied()), seed).unwrap()
        };
        assert_eq!(env(&["grad-check"], Some("9")).seed, 9);
        assert_eq!(env(&["grad-check", "--config", f], Some("9")).seed, 7);
        let cfg = env(&["grad-check", "--config", f, "--seed", "11"], Some("9"));
        assert_eq!((cfg.seed, cfg.lr), (11, 0.25));
    }

    #[test]
    fn unknown_file_key_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        std::fs::write(&file, "temperature = 3\n").unwrap();
        match parse(&["grad-check", "--config", file.to_str().unwrap()]) {
            Err(CliError::Config(ConfigError::UnknownKey(k))) => assert_eq!(k, "temperature"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_flag_and_experiment_rejected() {
        assert!(matches!(parse(&["grad-check", "--colour", "red"]), Err(CliError::Clap(_))));
        assert!(matches!(parse(&["fly"]), Err(CliError::Clap(_))));
    }
}
