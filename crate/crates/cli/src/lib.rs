//! Experiment harness for `contrastive-core`: configuration, the runnable
//! experiments and long-format CSV output.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use config::{Experiment, FileConfig};
use contrastive_core::checks::CheckResult;
use output::Row;

/// Caps the worker threads used for repetitions.
pub const THREADS_ENV: &str = "CONTRASTIVE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failure: {0}")]
    Check(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(#[from] contrastive_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl RunError {
    /// 0 success, 1 config error, 2 check failure, 3 numeric abort.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Check(_) => 2,
            RunError::Numeric(_) | RunError::Core(contrastive_core::Error::NonFinite(_)) => 3,
            RunError::Core(contrastive_core::Error::DegenerateWeights(_)) => 3,
            _ => 1,
        }
    }
}

/// Everything an experiment produced.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub rows: Vec<Row>,
    /// Oracle-suite results, empty for the training experiments.
    pub checks: Vec<CheckResult>,
}

fn thread_pool() -> Result<rayon::ThreadPool, RunError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            RunError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| RunError::Config(e.to_string()))
}

/// Validate the experiment's section of `cfg`, then run it.
pub fn run(experiment: Experiment, cfg: &FileConfig) -> Result<RunOutput, RunError> {
    cfg.validate_for(experiment)?;
    let seed = cfg.run.seed;
    thread_pool()?.install(|| match experiment {
        Experiment::GaussianProposal => Ok(RunOutput {
            rows: experiments::run_gaussian_proposal(&cfg.gaussian, seed)?,
            checks: Vec::new(),
        }),
        Experiment::Ring => Ok(RunOutput {
            rows: experiments::run_ring(&cfg.ring, seed)?,
            checks: Vec::new(),
        }),
        Experiment::ArToy => Ok(RunOutput {
            rows: experiments::run_ar_toy(&cfg.ar_toy, seed)?,
            checks: Vec::new(),
        }),
        Experiment::OracleSuite => {
            let (checks, rows) = experiments::run_oracle_suite(&cfg.oracle, seed)?;
            Ok(RunOutput { rows, checks })
        }
    })
}

/// Write rows to `path`, or to stdout when `path` is `None`.
pub fn emit(rows: &[Row], path: Option<&Path>) -> Result<(), RunError> {
    match path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            output::write_csv(rows, &mut f)?;
            f.flush()?;
        }
        None => output::write_csv(rows, std::io::stdout().lock())?,
    }
    Ok(())
}
