//! `spinctrl` — spin-dynamics toolbox front end.
//!
//! Four subcommands cover the workflow: `simulate` propagates an isochromat
//! ensemble through a pulse file, `saturate` builds and verifies the
//! minimum-time drive to zero signal, `snr` maps the steady-state
//! signal-per-unit-time surface and locates its maximizer, and `grape`
//! optimizes a two-species contrast pulse.
//!
//! Conventions shared by all subcommands: configs are JSON with laboratory
//! units (milliseconds, Hz), outputs land in the `--out` directory under
//! fixed file names, runs with the same config and seed are byte-identical
//! regardless of `--threads`, and exit codes are 0 (success), 2 (bad
//! configuration), 3 (numerical failure).

mod commands;
mod configs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "spinctrl", version, about = "Spin-dynamics simulation, minimum-time synthesis, steady-state SNR analysis, and contrast pulse optimization")]
struct Cli {
    /// Worker threads for the parallel maps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the seed of the subcommand's stochastic choices.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Timing diagnostics on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate an isochromat ensemble through a pulse file.
    Simulate {
        /// JSON config: T1_ms, T2_ms, optional Td_ms/offsets_hz/initial, and
        /// a pulse file path.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (receives trajectory.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the minimum-time saturation sequence and verify it by
    /// simulation.
    Saturate {
        /// JSON config: T1_ms, T2_ms, optional Td_ms.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (sequence.json, report.json, trajectory.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Map the steady-state SNR surface and find its maximizer.
    Snr {
        /// JSON config: either {gamma_t, gamma_l} or {T1_ms, T2_ms, Td_ms}.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (qsurface.csv, regions.csv, maximizer.json).
        #[arg(long)]
        out: PathBuf,
        /// Grid nodes per axis for the surface and the maximizer search.
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Optimize a two-species contrast pulse.
    Grape {
        /// JSON problem file (species, offsets_hz, pulse, cost, optimizer).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Built-in problem instead of a config (available: rat-brain-muscle).
        #[arg(long)]
        preset: Option<String>,
        /// Output directory (pulse.json/.csv, history.csv, robustness.csv,
        /// per-species trajectories, summary.json).
        #[arg(long)]
        out: PathBuf,
        /// Check the analytic gradient against central finite differences
        /// on a seeded probe pulse instead of optimizing.
        #[arg(long)]
        gradcheck: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n > 0 {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("error: cannot size the worker pool: {e}");
                return ExitCode::from(3);
            }
        }
    }
    let result = match &cli.command {
        Command::Simulate { config, out } => commands::cmd_simulate(config, out, cli.verbose),
        Command::Saturate { config, out } => commands::cmd_saturate(config, out, cli.verbose),
        Command::Snr {
            config,
            out,
            resolution,
        } => commands::cmd_snr(config, out, *resolution, cli.verbose),
        Command::Grape {
            config,
            preset,
            out,
            gradcheck,
        } => commands::cmd_grape(
            config.as_deref(),
            preset.as_deref(),
            out,
            cli.seed,
            *gradcheck,
            cli.verbose,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
