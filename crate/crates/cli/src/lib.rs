//! Command-line front end: configuration loading, worker-pool setup, and
//! the `solve`, `verify` and `compare` commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_compare, cmd_solve, cmd_verify, Context, COMPARE_CAVEAT, SCHEMA_VERSION};
pub use config::{load, load_str, LoadedConfig, RunConfig};
pub use error::CliError;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "EQPIDE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "eqpide", version, about = "Equilibrium mean-variance solvers and verification suites")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed forms, ODE system, and policy iteration on the grid.
    Solve(RunArgs),
    /// Oracle and Monte Carlo checks; exit status 1 if any fails.
    Verify(RunArgs),
    /// Cost of the equilibrium against alternative strategies.
    Compare(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override one key, e.g. `--set mc.n_paths=20000`. Repeatable.
    #[arg(long = "set", value_name = "K=V")]
    pub overrides: Vec<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))
}

fn context(args: &RunArgs) -> Result<Context, CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("mc.seed={seed}"));
    }
    let loaded = load(&args.config, &overrides)?;
    Context::new(loaded, args.out.clone())
}

fn execute(command: &Command) -> Result<i32, CliError> {
    match command {
        Command::Solve(args) => {
            let ctx = context(args)?;
            for path in cmd_solve(&ctx)? {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Verify(args) => {
            let ctx = context(args)?;
            let report = cmd_verify(&ctx)?;
            for c in report.checks.iter().filter(|c| !c.pass) {
                eprintln!("FAIL {}: measured {:e}, tolerance {:e}", c.name, c.measured, c.tolerance);
            }
            let passed = report.checks.iter().filter(|c| c.pass).count();
            println!("{passed}/{} checks passed; report in {}", report.checks.len(), ctx.out.join("verify_report.csv").display());
            Ok(if report.all_pass() { 0 } else { 1 })
        }
        Command::Compare(args) => {
            let ctx = context(args)?;
            let table = cmd_compare(&ctx)?;
            println!("note: {COMPARE_CAVEAT}");
            println!("{} strategies written to {}", table.len(), ctx.out.join("compare.csv").display());
            Ok(0)
        }
    }
}

/// Runs a parsed command inside the configured worker pool and returns the
/// process exit status.
pub fn run(cli: &Cli) -> i32 {
    let result = thread_pool().and_then(|pool| pool.install(|| execute(&cli.command)));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
