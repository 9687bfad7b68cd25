//! The `cfmdp` command line: `gen`, `train`, `verify`, `bench` and `report`.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 configuration or
//! input error, 3 an invariant was violated at runtime.

pub mod commands;
pub mod overrides;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cfmdp::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "cfmdp",
    version,
    about = "Corrupt feedback MDPs and decoupled approval learners"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON config document; values in it override the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set agent.alpha_init=0.1`. `--agent.alpha_init 0.1` is shorthand.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel runs.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    ExampleD1,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvShorthand {
    ExampleD1,
    Adversarial,
    Procedural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchName {
    D1,
    D1Favorable,
    Procedural,
    Convergence,
    Adversarial,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a CFMDP document.
    Gen {
        #[arg(long, conflicts_with = "procedural")]
        builtin: Option<Builtin>,
        #[arg(long)]
        procedural: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        actions: Option<usize>,
    },
    /// Train one agent and write its run record.
    Train {
        #[arg(long)]
        env: Option<EnvShorthand>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Stop after this many steps and write `checkpoint.json`.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Continue from a checkpoint written by `--stop-after`.
        #[arg(long, conflicts_with_all = ["env", "seed", "steps"])]
        resume: Option<PathBuf>,
    },
    /// Run the verification suite and print one row per check.
    Verify {
        /// Seed for the Monte Carlo and training checks; repeat to compare verdicts.
        #[arg(long)]
        seed: Vec<u64>,
        /// Forces the query to equal the action in the policy-gradient expectation.
        #[arg(long)]
        inject_coupling: bool,
        /// Run only these checks.
        #[arg(long = "check")]
        checks: Vec<String>,
    },
    /// Run a benchmark experiment and write its summary and CSVs.
    Bench {
        name: BenchName,
        #[arg(long)]
        runs: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        count: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-render CSVs from stored run records.
    Report {
        /// `runs.jsonl` written by `train`.
        #[arg(long)]
        input: PathBuf,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invariant { .. } | Error::Numerical(_) => EXIT_INVARIANT,
        _ => EXIT_CONFIG,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: Vec<String>) -> i32 {
    let args = overrides::expand_dotted_flags(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
