mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bellkit",
    version,
    about = "Check locality properties of finite Bell-scenario models"
)]
pub struct Cli {
    /// Threshold on every property's maximum violation.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Allowed deviation of a normalization sum from one.
    #[arg(long, global = true)]
    pub tol_norm: Option<f64>,
    /// Weights at or below this count as zero support.
    #[arg(long, global = true)]
    pub tol_support: Option<f64>,
    /// Output file (reports, scenario files) or directory (dynamics CSVs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Seed for randomized restarts in the one-way search.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Form {
    Local,
    Oneway,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a model file and run property checks.
    Check {
        path: PathBuf,
        /// Comma-separated subset of: consistency, wl, oi, lc, mi, det, pc, lc-equiv, prop2, inc, all.
        #[arg(long)]
        properties: Option<String>,
        /// Settings `x,y` for perfect-correlation checks (overrides the file's hint).
        #[arg(long)]
        pc: Option<String>,
        /// Outcome identification `b:a,b:a,...` for perfect correlation.
        #[arg(long)]
        relabel: Option<String>,
    },
    /// Write one of the built-in scenarios as a model file.
    Scenario {
        /// prop1, singlet, example1, example2, box, product or prbox.
        name: String,
        /// Outcome count for prop1.
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated directions (side A, and side B unless --dirs-b is given).
        #[arg(long)]
        dirs: Option<String>,
        #[arg(long)]
        dirs_b: Option<String>,
    },
    /// Decide local or one-way decomposability of a behavior.
    Feasible {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Form::Local)]
        form: Form,
        /// Number of steps g of the w grid {0, 1/g, ..., 1}.
        #[arg(long, default_value_t = commands::DEFAULT_GRID_STEPS)]
        grid_steps: usize,
        /// Also print the CHSH value for settings `x,x',y,y'`.
        #[arg(long)]
        chsh: Option<String>,
    },
    /// CHSH value plus local feasibility (same as `feasible --chsh`).
    Chsh {
        path: PathBuf,
        /// Settings `x,x',y,y'`.
        settings: String,
    },
    /// Evaluate the two-particle solution family and its detector readouts.
    Dynamics(commands::DynamicsArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(&cli, argv) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
