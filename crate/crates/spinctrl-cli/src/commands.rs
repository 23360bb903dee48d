//! Subcommand implementations: validate the configuration up front, compute
//! through the library, then write the declared output files into the output
//! directory. Every file a subcommand produces has a fixed name, so runs are
//! scriptable without parsing stdout.

use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use spinctrl::bloch::{propagate_ensemble, MagState, PlanarState, Pulse};
use spinctrl::grape::{
    gradient_check, grape_optimize, preset_rat_brain_muscle, robustness_report, ContrastProblem,
    OptimizerOptions, RobustnessRow,
};
use spinctrl::io::{
    read_pulse_json, trajectory_rows, write_history_csv, write_maximizer_json, write_pulse_csv,
    write_pulse_json, write_qsurface_csv, write_regions_csv, write_robustness_csv,
    write_sequence_json, write_trajectory_csv, ProblemFile, TrajectoryRow,
};
use spinctrl::snr::{maximize_q, q_surface};
use spinctrl::synthesis::saturation_sequence;
use spinctrl::Error;

use crate::configs::{SaturateConfig, SimulateConfig, SnrConfig};

/// Failure classes carrying their process exit code: configuration problems
/// exit 2, numerical or runtime problems exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match &e {
            Error::InvalidInput(_) | Error::NonPhysical(_) | Error::Json(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn open_config(path: &Path) -> Result<File, CliError> {
    File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))
}

fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open_config(path)?)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let p = dir.join(name);
    let f = File::create(&p)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    use std::io::Write as _;
    let mut w = out_file(dir, name)?;
    writeln!(
        w,
        "{}",
        serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?
    )?;
    Ok(())
}

fn elapsed(verbose: bool, start: Instant, what: &str) {
    if verbose {
        eprintln!("{what} took {:.2} s", start.elapsed().as_secs_f64());
    }
}

pub fn cmd_simulate(
    config_path: &Path,
    out: &Path,
    verbose: bool,
) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg: SimulateConfig = parse_config(config_path)?;
    let params = cfg.params()?;
    let pulse_path = match config_path.parent() {
        Some(dir) => dir.join(&cfg.pulse),
        None => cfg.pulse.clone(),
    };
    let pulse = read_pulse_json(open_config(&pulse_path)?)?;
    let ensemble = cfg.ensemble(&params)?;
    let initial = cfg.initial_state();

    ensure_out_dir(out)?;
    let histories = propagate_ensemble(initial, &params, &ensemble, &pulse);
    let rows = trajectory_rows(&params, &ensemble, &pulse, &histories);
    write_trajectory_csv(out_file(out, "trajectory.csv")?, &rows)?;

    println!(
        "simulate: {} isochromats x {} steps ({} s) -> trajectory.csv",
        ensemble.len(),
        pulse.n_steps(),
        pulse.duration()
    );
    elapsed(verbose, start, "simulate");
    Ok(())
}

#[derive(Serialize)]
struct SaturationReport {
    regime: spinctrl::synthesis::SaturationRegime,
    /// Minimum time in normalized units.
    t_min: f64,
    /// Minimum time in seconds.
    t_min_seconds: f64,
    /// Duration measured by re-simulating the sequence (normalized units).
    simulated_duration: f64,
    /// Distance from the center after the simulated run.
    terminal_radius: f64,
}

pub fn cmd_saturate(config_path: &Path, out: &Path, verbose: bool) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg: SaturateConfig = parse_config(config_path)?;
    let params = cfg.params()?;
    let sat = saturation_sequence(&params)?;

    let run = sat
        .sequence
        .simulate(&params, PlanarState::new(0.0, 1.0), 4000)?;
    let terminal = run.final_state.radius();
    if terminal >= 1e-6 {
        return Err(CliError::Runtime(format!(
            "saturation sequence missed the center: terminal radius {terminal}"
        )));
    }

    ensure_out_dir(out)?;
    write_sequence_json(out_file(out, "sequence.json")?, &sat.sequence)?;
    write_json(
        out,
        "report.json",
        &SaturationReport {
            regime: sat.regime,
            t_min: sat.t_min,
            t_min_seconds: sat.t_min_seconds,
            simulated_duration: run.duration,
            terminal_radius: terminal,
        },
    )?;
    let rows: Vec<TrajectoryRow> = run
        .trajectory
        .iter()
        .enumerate()
        .map(|(step, (t, s))| TrajectoryRow {
            step,
            t_s: t * params.td,
            offset_hz: 0.0,
            state: MagState::new(0.0, s.y, s.z),
        })
        .collect();
    write_trajectory_csv(out_file(out, "trajectory.csv")?, &rows)?;

    println!(
        "saturate: regime {:?}, T_min = {} ({} s), terminal radius {}",
        sat.regime, sat.t_min, sat.t_min_seconds, terminal
    );
    elapsed(verbose, start, "saturate");
    Ok(())
}

pub fn cmd_snr(
    config_path: &Path,
    out: &Path,
    resolution: usize,
    verbose: bool,
) -> Result<(), CliError> {
    let start = Instant::now();
    let cfg: SnrConfig = parse_config(config_path)?;
    let params = cfg.params()?;

    let samples = q_surface(&params, resolution, resolution)?;
    let optimum = maximize_q(&params, resolution)?;

    ensure_out_dir(out)?;
    write_qsurface_csv(out_file(out, "qsurface.csv")?, &samples)?;
    write_regions_csv(out_file(out, "regions.csv")?, &samples)?;
    write_maximizer_json(out_file(out, "maximizer.json")?, &optimum)?;

    println!(
        "snr: Q* = {} at (y, z) = ({}, {}), theta* = {} rad (Ernst angle {} rad, diff {:e}), Tc = {:e}",
        optimum.q,
        optimum.y_m,
        optimum.z_m,
        optimum.theta_rad,
        optimum.theta_ernst_rad,
        (optimum.theta_rad - optimum.theta_ernst_rad).abs(),
        optimum.tc,
    );
    elapsed(verbose, start, "snr");
    Ok(())
}

#[derive(Serialize)]
struct GradCheckReport {
    h: f64,
    max_abs_err: f64,
    max_rel_err: f64,
    passed: bool,
}

#[derive(Serialize)]
struct GrapeSummary {
    final_cost: f64,
    grad_norm: f64,
    converged: bool,
    restart: usize,
    iterations: usize,
    warnings: Vec<String>,
}

/// Means over the offset ensemble of one species' final states.
fn species_summary(rows: &[RobustnessRow], name: &str) -> (f64, f64) {
    let picked: Vec<&RobustnessRow> = rows.iter().filter(|r| r.species == name).collect();
    let n = picked.len().max(1) as f64;
    let mean_trans = picked.iter().map(|r| r.transverse_norm).sum::<f64>() / n;
    let mean_z = picked.iter().map(|r| r.state.z).sum::<f64>() / n;
    (mean_trans, mean_z)
}

fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn export_species_trajectories(
    out: &Path,
    problem: &ContrastProblem,
    pulse: &Pulse,
) -> Result<(), CliError> {
    for sp in [&problem.enhance, &problem.suppress] {
        let histories = propagate_ensemble(problem.initial, &sp.params, &problem.ensemble, pulse);
        let rows = trajectory_rows(&sp.params, &problem.ensemble, pulse, &histories);
        let name = format!("trajectory_{}.csv", safe_name(&sp.name));
        write_trajectory_csv(out_file(out, &name)?, &rows)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_grape(
    config_path: Option<&Path>,
    preset: Option<&str>,
    out: &Path,
    seed: Option<u64>,
    gradcheck: bool,
    verbose: bool,
) -> Result<(), CliError> {
    let start = Instant::now();
    let (problem, mut opts): (ContrastProblem, OptimizerOptions) = match (config_path, preset) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "--config and --preset are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Config(
                "grape needs --config FILE or --preset NAME".into(),
            ))
        }
        (Some(path), None) => ProblemFile::read(open_config(path)?)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?
            .to_problem()?,
        (None, Some("rat-brain-muscle")) => preset_rat_brain_muscle()?,
        (None, Some(other)) => {
            return Err(CliError::Config(format!(
                "unknown preset '{other}' (available: rat-brain-muscle)"
            )))
        }
    };
    if let Some(s) = seed {
        opts.seed = s;
    }
    ensure_out_dir(out)?;

    if gradcheck {
        let probe = problem.grid.probe_pulse(opts.seed)?;
        let check = gradient_check(&problem, &probe, 1e-6)?;
        let report = GradCheckReport {
            h: 1e-6,
            max_abs_err: check.max_abs_err,
            max_rel_err: check.max_rel_err,
            passed: check.max_rel_err < 1e-6,
        };
        write_json(out, "gradcheck.json", &report)?;
        println!(
            "gradcheck: max abs err {:e}, max rel err {:e} -> {}",
            report.max_abs_err,
            report.max_rel_err,
            if report.passed { "pass" } else { "FAIL" }
        );
        elapsed(verbose, start, "gradcheck");
        return Ok(());
    }

    let result = grape_optimize(&problem, &opts)?;

    write_pulse_json(out_file(out, "pulse.json")?, &result.pulse)?;
    write_pulse_csv(out_file(out, "pulse.csv")?, &result.pulse)?;
    write_history_csv(out_file(out, "history.csv")?, &result.history)?;
    let rows = robustness_report(&problem, &result.pulse)?;
    write_robustness_csv(out_file(out, "robustness.csv")?, &rows)?;
    export_species_trajectories(out, &problem, &result.pulse)?;
    write_json(
        out,
        "summary.json",
        &GrapeSummary {
            final_cost: result.cost,
            grad_norm: result.grad_norm,
            converged: result.converged,
            restart: result.restart,
            iterations: result.history.len(),
            warnings: result.warnings.clone(),
        },
    )?;

    println!("grape: final cost {} (restart {})", result.cost, result.restart);
    for sp in [&problem.enhance, &problem.suppress] {
        let (mean_trans, mean_z) = species_summary(&rows, &sp.name);
        println!(
            "  {}: mean |M_xy| = {}, mean M_z = {}",
            sp.name, mean_trans, mean_z
        );
    }
    if !result.converged {
        println!("  note: stopped before the gradient tolerance (best iterate kept)");
    }
    for w in &result.warnings {
        println!("  warning: {w}");
    }
    elapsed(verbose, start, "grape");
    Ok(())
}
