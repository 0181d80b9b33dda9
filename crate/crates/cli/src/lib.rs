//! Batch front-end for softpcc: scenario files in, CSV and JSON reports out.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid scenario, 3 numerical or
//! output failure. Nothing is written unless the whole command succeeds.

pub mod commands;
pub mod output;
pub mod scenario;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use scenario::Scenario;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid scenario: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] softpcc::Error),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Numerical(_) | CliError::Output(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "softpcc",
    version,
    about = "Simulate and analyse planar soft robots"
)]
pub struct Cli {
    /// Integration step [s], overriding the scenario.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Simulated time [s], overriding the scenario.
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Output directory, overriding the scenario.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the scenario's closed loop and write trajectory.csv.
    Simulate { file: String },
    /// Find the open-loop equilibria for the scenario's constant input.
    Equilibria { file: String },
    /// Classify the listed configurations.
    Stability { file: String },
    /// Regenerate bundled figure data.
    Reproduce {
        #[command(subcommand)]
        figure: Figure,
    },
    /// Run the scenario once per value of one model parameter, in parallel.
    Sweep { file: String },
}

#[derive(Debug, Subcommand)]
pub enum Figure {
    /// Step responses of the CC, R-PEA and R models; all panels by default.
    CcEvolution { panel: Option<Panel> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Panel {
    A,
    B,
    C,
}

impl Panel {
    pub fn letter(self) -> char {
        match self {
            Panel::A => 'a',
            Panel::B => 'b',
            Panel::C => 'c',
        }
    }
}

/// Scenarios shipped with the binary, available by name.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "cc_fig_evolution_a",
        include_str!("../scenarios/cc_fig_evolution_a.toml"),
    ),
    (
        "cc_fig_evolution_b",
        include_str!("../scenarios/cc_fig_evolution_b.toml"),
    ),
    (
        "cc_fig_evolution_c",
        include_str!("../scenarios/cc_fig_evolution_c.toml"),
    ),
    (
        "cc_upright_equilibria",
        include_str!("../scenarios/cc_upright_equilibria.toml"),
    ),
    (
        "cc_upright_stability",
        include_str!("../scenarios/cc_upright_stability.toml"),
    ),
    (
        "cc_upright_pd",
        include_str!("../scenarios/cc_upright_pd.toml"),
    ),
    ("cc_tracking", include_str!("../scenarios/cc_tracking.toml")),
    ("cc_ilc", include_str!("../scenarios/cc_ilc.toml")),
    (
        "cc_stiffness_sweep",
        include_str!("../scenarios/cc_stiffness_sweep.toml"),
    ),
    (
        "pcc3_hanging",
        include_str!("../scenarios/pcc3_hanging.toml"),
    ),
    (
        "pcc2_underactuated_pd",
        include_str!("../scenarios/pcc2_underactuated_pd.toml"),
    ),
    (
        "pcc3_operational_space",
        include_str!("../scenarios/pcc3_operational_space.toml"),
    ),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".toml").unwrap_or(name);
    BUNDLED
        .iter()
        .find(|(n, _)| *n == stem)
        .map(|(_, text)| *text)
}

/// Reads a scenario from `path`, falling back to a bundled scenario of that name.
pub fn load_scenario(path: &str) -> Result<Scenario, CliError> {
    let text = if Path::new(path).exists() {
        std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {path}: {e}")))?
    } else if let Some(text) = bundled(path) {
        text.to_string()
    } else {
        return Err(CliError::Usage(format!(
            "no such scenario file or bundled scenario: {path}"
        )));
    };
    Scenario::parse(&text).map_err(|e| match e {
        CliError::Schema(msg) => CliError::Schema(format!("{path}: {msg}")),
        other => other,
    })
}

fn check_overrides(cli: &Cli) -> Result<(), CliError> {
    for (name, v) in [("--dt", cli.dt), ("--duration", cli.duration)] {
        if let Some(v) = v {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!(
                    "{name} must be a positive number, got {v}"
                )));
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    match check_overrides(&cli).and_then(|_| commands::execute(&cli, stdout)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
