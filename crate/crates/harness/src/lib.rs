//! Command-line harness: builds an [`ExperimentConfig`], runs the experiment
//! and writes `<experiment>.csv`, `config.echo` and `summary.txt`.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod table;

use std::fs;
use std::path::PathBuf;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};
pub use experiments::{experiment, experiments, Experiment, Outcome, Verdict};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub outcome: Outcome,
    pub csv: PathBuf,
    pub echo: PathBuf,
    pub summary: PathBuf,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.outcome.verdicts.iter().all(|v| v.pass)
    }
}

pub fn summary_text(cfg: &ExperimentConfig, outcome: &Outcome) -> String {
    let mut s = format!(
        "experiment: {}\nconfig_hash: {}\nseed: {}\nrows: {}\n\n",
        cfg.experiment,
        cfg.hash(),
        cfg.seed,
        outcome.table.rows.len()
    );
    if outcome.verdicts.is_empty() {
        s.push_str("no acceptance criterion applies to this configuration\n");
    }
    for v in &outcome.verdicts {
        s.push_str(&v.line());
        s.push('\n');
    }
    if !outcome.notes.is_empty() {
        s.push('\n');
        for n in &outcome.notes {
            s.push_str(n);
            s.push('\n');
        }
    }
    s
}

/// Validates, runs on a pool of `cfg.jobs` threads and writes the outputs.
/// Nothing is left behind when any step fails.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let exp = experiment(&cfg.experiment)?;
    exp.check(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| RunError::Runtime(e.to_string()))?;
    let outcome = pool.install(|| exp.run(cfg))?;

    fs::create_dir_all(&cfg.out)?;
    let csv = cfg.out.join(format!("{}.csv", cfg.experiment));
    let echo = cfg.out.join("config.echo");
    let summary = cfg.out.join("summary.txt");
    let written = [&csv, &echo, &summary];
    let result = (|| -> std::io::Result<()> {
        outcome.table.save(cfg, &csv)?;
        fs::write(&echo, cfg.echo())?;
        fs::write(&summary, summary_text(cfg, &outcome))
    })();
    if let Err(e) = result {
        for p in written {
            let _ = fs::remove_file(p);
        }
        return Err(e.into());
    }
    Ok(RunReport {
        outcome,
        csv,
        echo,
        summary,
    })
}
