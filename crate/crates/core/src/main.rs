use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ilsim::runner::{
    cmd_check, cmd_run, cmd_sweep, read_config, Fault, RunError, SweepConfig, EXIT_ABORT, EXIT_CHECK_FAILED, EXIT_OK,
};

/// Bayesian iterated-learning simulator.
#[derive(Parser)]
#[command(name = "ilsim", version)]
struct Cli {
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run { config: PathBuf },
    /// Run every point of a grid config.
    Sweep { config: PathBuf },
    /// Quick self-check of the numeric core.
    Check {
        /// Scale the prior under test so it no longer sums to one.
        #[arg(long, hide = true)]
        inject_broken_prior: bool,
    },
}

fn fail(e: &RunError) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config } => {
            let (cfg, base) = match read_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            let out =
                cli.out.or_else(|| cfg.out.as_ref().map(|o| base.join(o))).unwrap_or_else(|| PathBuf::from("out"));
            match cmd_run(&cfg, &base, &out) {
                Ok(m) => {
                    println!("wrote {} files to {}", m.files.len() + 1, out.display());
                    for (k, v) in &m.summary {
                        println!("{k} = {v:?}");
                    }
                    EXIT_OK
                }
                Err(e) => fail(&e),
            }
        }
        Command::Sweep { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(&RunError::Io(format!("{}: {e}", config.display()))),
            };
            let sweep = match SweepConfig::from_toml(&text) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            };
            let base = config.parent().map(PathBuf::from).unwrap_or_default();
            let out =
                cli.out.or_else(|| sweep.out.as_ref().map(|o| base.join(o))).unwrap_or_else(|| PathBuf::from("sweep"));
            match cmd_sweep(&sweep, &base, &out, cli.workers) {
                Ok(report) => {
                    let resumed = report.results.iter().filter(|r| r.resumed).count();
                    println!(
                        "{} points ({} resumed, {} failed); summary at {}",
                        report.results.len(),
                        resumed,
                        report.failures(),
                        out.join("summary.csv").display()
                    );
                    for (group, ok) in &report.bias_monotone {
                        println!("bias ordering [{group}]: {}", if *ok { "monotone" } else { "NOT monotone" });
                    }
                    if report.failures() > 0 {
                        EXIT_ABORT
                    } else {
                        EXIT_OK
                    }
                }
                Err(e) => fail(&e),
            }
        }
        Command::Check { inject_broken_prior } => {
            let results = cmd_check(inject_broken_prior.then_some(Fault::BrokenPrior));
            let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
            for r in &results {
                println!("{:<width$}  {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
            }
            if results.iter().all(|r| r.passed) {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = run(Cli::parse());
    ExitCode::from(code as u8)
}
