use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grokflow_harness::analyze::cmd_analyze;
use grokflow_harness::config::ExperimentConfig;
use grokflow_harness::run::{cmd_run, output_dir};
use grokflow_harness::sweep::{cmd_sweep, parse_lambdas};
use grokflow_harness::verify::{cmd_verify, Scale, Suite};
use grokflow_harness::{HarnessError, HarnessResult};

/// Two-timescale gradient-flow experiments.
#[derive(Parser)]
#[command(name = "grokflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config over a lambda grid plus an unregularised baseline.
    Sweep {
        config: PathBuf,
        /// Comma-separated, e.g. 1e-2,1e-3,1e-4.
        #[arg(long)]
        lambdas: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite: fast_phase, junction, slow_phase, kkt or end_to_end.
    Verify {
        suite: String,
        #[arg(long, default_value = "ci")]
        scale: String,
    },
    /// Timescale and grokking annotation of a finished run directory.
    Analyze { run_dir: PathBuf },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serialisable"));
}

fn dispatch(cli: Cli) -> HarnessResult<ExitCode> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = output_dir(&cfg, out.as_deref());
            let report = cmd_run(&cfg, &dir)?;
            eprintln!("wrote {}", dir.display());
            print_json(&report.summary);
        }
        Command::Sweep { config, lambdas, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let lambdas = parse_lambdas(&lambdas)?;
            let dir = out.unwrap_or_else(|| output_dir(&cfg, None).with_extension("sweep"));
            let summary = cmd_sweep(&cfg, &lambdas, &dir)?;
            eprintln!("wrote {}", dir.display());
            print_json(&summary);
        }
        Command::Verify { suite, scale } => {
            let suite: Suite = suite.parse()?;
            let scale: Scale = scale.parse()?;
            let report = cmd_verify(suite, scale);
            for c in &report.checks {
                eprintln!("{}", c.line());
            }
            print_json(&report);
            if !report.passed {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Analyze { run_dir } => print_json(&cmd_analyze(&run_dir)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                HarnessError::Flow(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
