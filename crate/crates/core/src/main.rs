use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sedkit::harness::{self, constants::ConstantsFile};
use sedkit::Error;

/// Stochastic electrodynamics experiments and their quantum references.
#[derive(Parser)]
#[command(name = "sedkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Directory the run directory is created under (default: $SEDKIT_OUTPUT_ROOT or .).
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Print the comparison table of a finished run.
    Report { run_dir: PathBuf },
    /// Write plot-ready data files for a finished run.
    Plot { run_dir: PathBuf },
    /// Physical-constant estimates.
    Constants {
        #[command(subcommand)]
        query: ConstantsQuery,
    },
}

#[derive(Subcommand)]
enum ConstantsQuery {
    /// Transition time (αω_C)⁻¹ in seconds.
    TransitionTime {
        #[arg(long, default_value = "electron")]
        particle: String,
        /// Constants TOML to use instead of the bundled one.
        #[arg(long)]
        constants: Option<PathBuf>,
    },
}

const EXIT_TOLERANCE: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn execute(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run { config, output_root } => {
            let out = harness::run_experiment(&config, output_root.as_deref())?;
            println!("{}", out.report);
            println!("outputs: {}", out.dir.display());
            Ok(out.report.pass)
        }
        Command::Report { run_dir } => {
            let report = harness::load_report(&run_dir)?;
            println!("{report}");
            Ok(report.pass)
        }
        Command::Plot { run_dir } => {
            for path in harness::plot::emit_plot_data(&run_dir)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Constants {
            query: ConstantsQuery::TransitionTime { particle, constants },
        } => {
            let file = match constants {
                Some(path) => ConstantsFile::load(&path)?,
                None => ConstantsFile::bundled(),
            };
            let pc = file.for_particle(&particle)?;
            println!("{:e}", harness::constants::transition_time(&pc));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_TOLERANCE),
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(EXIT_ERROR)
        }
    }
}
