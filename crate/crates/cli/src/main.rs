//! `rdueq`: classify, solve, enumerate and verify RDU equilibria from a JSON
//! run configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "rdueq", version, about = "Equilibrium strategies under rank-dependent utility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Emit JSON instead of the configured format.
    #[arg(long)]
    pub json: bool,
    /// Output file; overrides the configured path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Route the configuration to its equilibrium case.
    Classify(Common),
    /// Emit an exposure path and its strategy.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Start the forward equation at Y(0) = ETA.
        #[arg(long, conflicts_with = "maximal", required_unless_present = "maximal")]
        eta: Option<f64>,
        /// Use the maximal solution (the unique one when time-invariant).
        #[arg(long)]
        maximal: bool,
    },
    /// Estimate η* by the ε-ladder, cross-checked by bisection.
    EtaStar(Common),
    /// Search η ∈ [0, η*] for the equilibrium with the largest time-0 value.
    Optimize(Common),
    /// Test a strategy file against the equilibrium condition.
    Verify {
        #[command(flatten)]
        common: Common,
        /// CSV with columns t, optional Y, pi_1..pi_n.
        #[arg(long)]
        strategy: PathBuf,
    },
}

/// Everything that ends a run early, with its exit code.
#[derive(Debug)]
pub enum Failure {
    /// The strategy under test is not an equilibrium.
    Rejected,
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Rejected => 1,
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<rdueq_core::Error> for Failure {
    fn from(e: rdueq_core::Error) -> Self {
        use rdueq_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::NotPositiveDefinite | E::Domain(_) => Failure::Input(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify(c) => commands::classify(&c),
        Command::Solve { common, eta, maximal } => commands::solve(&common, if maximal { None } else { eta }),
        Command::EtaStar(c) => commands::eta_star(&c),
        Command::Optimize(c) => commands::optimize(&c),
        Command::Verify { common, strategy } => commands::verify(&common, &strategy),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Rejected => eprintln!("verification failed"),
                Failure::Input(m) => eprintln!("error: {m}"),
                Failure::Numerical(m) => eprintln!("numerical failure: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
