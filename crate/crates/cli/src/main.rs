//! `geoshoot` — multiscale landmark registration from the command line.
//!
//! Subcommands: `match` (full registration), `shoot` (forward geodesic from
//! supplied momenta), `probe` (passive grid advection), `check` (invariant
//! suites). Exit codes: 0 success, 1 invariant failure, 2 shape/data error,
//! 3 config error, 4 optimizer stagnation, 5 divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::{CommandError, EXIT_CONFIG, EXIT_DATA};

#[derive(Parser)]
#[command(name = "geoshoot", version, about = "Multiscale diffeomorphic landmark registration by geodesic shooting")]
struct Cli {
    /// Worker threads for probe advection.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

/// Config-file overrides; flags mirror the RunConfig keys one to one.
#[derive(Args, Clone, Debug, Default)]
struct Overrides {
    /// Kernel widths, comma separated, coarse to fine.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    /// Integrator steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Integrator scheme (euler|rk4).
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    data_weight: Option<f64>,
    #[arg(long)]
    sim_enabled: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Full registration: optimize initial momenta, write the result bundle.
    Match {
        points: PathBuf,
        config: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Forward geodesic from supplied momenta.
    Shoot {
        points: PathBuf,
        config: PathBuf,
        /// Landmark momentum file.
        #[arg(long)]
        p0: PathBuf,
        /// Similarity momentum file.
        #[arg(long)]
        pa0: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Passive grid advection under a shot flow.
    Probe {
        points: PathBuf,
        config: PathBuf,
        #[arg(long)]
        p0: PathBuf,
        /// Grid spec `min..max:resolution[@scale]`, e.g. `-1,-1..1,1:10@2`;
        /// falls back to the config's [probe] section.
        #[arg(long)]
        grid: Option<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the invariant suites on seeded random instances.
    Check {
        /// Substring filter on suite names (kernels, sim, hamiltonian,
        /// integrator, momentum, shooting).
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Testing hook: corrupt one equation on purpose.
        #[arg(long, hide = true)]
        inject: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match {
            points,
            config,
            out,
            overrides,
        } => commands::run_match(&points, &config, out.as_deref(), &overrides),
        Command::Shoot {
            points,
            config,
            p0,
            pa0,
            out,
            overrides,
        } => commands::run_shoot(&points, &config, &p0, pa0.as_deref(), out.as_deref(), &overrides),
        Command::Probe {
            points,
            config,
            p0,
            grid,
            out,
            overrides,
        } => commands::run_probe(
            &points,
            &config,
            &p0,
            grid.as_deref(),
            out.as_deref(),
            &overrides,
            cli.threads,
        ),
        Command::Check {
            filter,
            seed,
            inject,
        } => commands::run_check(filter.as_deref(), seed, inject.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code())
        }
    }
}

impl CommandError {
    fn exit_code(&self) -> u8 {
        match self {
            CommandError::Data { .. } => EXIT_DATA,
            CommandError::Config { .. } => EXIT_CONFIG,
            CommandError::Divergence { .. } => commands::EXIT_DIVERGENCE,
            CommandError::Io { .. } => EXIT_DATA,
        }
    }
}
