use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use contrastive_cli::config::{Experiment, FileConfig, Overrides};
use contrastive_cli::{emit, run, RunError};

/// Run a contrastive-estimation experiment and write long-format CSV.
#[derive(Debug, Parser)]
#[command(name = "contrastive", version)]
struct Cli {
    /// gaussian-proposal, ring, ar-toy or oracle-suite
    experiment: String,
    /// TOML file with [run] and per-experiment sections; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long = "J")]
    j: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Oracle suite only: break the Barker acceptance normalisation.
    #[arg(long)]
    corrupt: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("contrastive: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), RunError> {
    let experiment = Experiment::parse(&cli.experiment)?;
    let mut cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        reps: cli.reps,
        out: cli.out,
        criterion: cli.criterion,
        j: cli.j,
        k: cli.k,
    });
    if cli.corrupt {
        cfg.oracle.corrupt_acceptance = true;
    }

    let out = run(experiment, &cfg)?;
    for c in &out.checks {
        eprintln!("{c}");
    }
    emit(&out.rows, cfg.run.out.as_deref())?;
    let failed = out.checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(RunError::Check(format!(
            "{failed} of {} checks failed",
            out.checks.len()
        )));
    }
    Ok(())
}
