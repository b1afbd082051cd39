use clap::{Parser, Subcommand};
use resonance::commands::{run, Command, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "resonance", version, about = "Certify and simulate unbounded resonant oscillations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Output directory (overrides the scenario's).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Relative and absolute integration tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Number of periods.
    #[arg(long)]
    kmax: Option<i64>,
    /// Seed for sampled initial conditions.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Check the applicable sufficient conditions and write the certificate.
    Certify(Common),
    /// Integrate each initial condition and draw phase portraits.
    Simulate(Common),
    /// Lyapunov growth and energy checks per period.
    Trace(Common),
    /// Classify a grid of initial conditions in one phase plane.
    Basin(Common),
    /// Export the escape-region parameters.
    Regions(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Certify(c) => (Command::Certify, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Trace(c) => (Command::Trace, c),
        Cmd::Basin(c) => (Command::Basin, c),
        Cmd::Regions(c) => (Command::Regions, c),
    };
    let overrides = Overrides { out: common.out, tol: common.tol, k_max: common.kmax, seed: common.seed };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(common.threads.unwrap_or(0)).build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(command, &common.scenario, &overrides)) {
        Ok(outcome) => {
            for m in &outcome.messages {
                eprintln!("{m}");
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
            ExitCode::from(outcome.status.code())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
