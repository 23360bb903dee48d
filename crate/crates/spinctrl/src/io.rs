//! On-disk formats: JSON for structured objects, CSV for tabular exports.
//!
//! Numbers are printed with Rust's shortest round-trip formatting (and JSON
//! is emitted from plain structs, never maps), so every writer here produces
//! byte-identical output for equal inputs regardless of thread count.
//! Quantities cross this boundary in laboratory units — seconds,
//! milliseconds, hertz — while the solvers underneath work in normalized
//! units throughout.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bloch::{Isochromat, MagState, Pulse, SpinParams};
use crate::error::{Error, Result};
use crate::grape::{
    offsets_from_list_hz, uniform_offsets_hz, ContrastProblem, CostKind, IterRecord,
    OptimizerOptions, PulseGrid, RobustnessRow, Species,
};
use crate::snr::{QOptimum, QSample};
use crate::synthesis::ControlSequence;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Quote a CSV field if it contains a delimiter, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// One sampled state of one isochromat.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub step: usize,
    /// Elapsed time in seconds.
    pub t_s: f64,
    pub offset_hz: f64,
    pub state: MagState,
}

/// Flatten per-isochromat state histories (as returned by
/// [`crate::bloch::propagate_ensemble`]) into rows, isochromat-major.
pub fn trajectory_rows(
    params: &SpinParams,
    ensemble: &[Isochromat],
    pulse: &Pulse,
    histories: &[Vec<MagState>],
) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for (iso, hist) in ensemble.iter().zip(histories.iter()) {
        let offset_hz = iso.offset / (TWO_PI * params.td);
        for (step, state) in hist.iter().enumerate() {
            rows.push(TrajectoryRow {
                step,
                t_s: step as f64 * pulse.dt(),
                offset_hz,
                state: *state,
            });
        }
    }
    rows
}

/// CSV columns: `step,t,offset,x,y,z` (`t` seconds, `offset` Hz).
pub fn write_trajectory_csv<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> Result<()> {
    writeln!(w, "step,t,offset,x,y,z")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.step, r.t_s, r.offset_hz, r.state.x, r.state.y, r.state.z
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pulses
// ---------------------------------------------------------------------------

/// JSON form of a pulse: step duration in seconds, amplitudes in rad/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseFile {
    pub dt_s: f64,
    pub u_max_rad_s: Option<f64>,
    pub steps: Vec<[f64; 2]>,
}

impl PulseFile {
    pub fn from_pulse(p: &Pulse) -> Self {
        Self { dt_s: p.dt(), u_max_rad_s: p.u_max(), steps: p.steps().to_vec() }
    }

    pub fn to_pulse(&self) -> Result<Pulse> {
        Pulse::new(self.dt_s, self.steps.clone(), self.u_max_rad_s)
    }
}

pub fn write_pulse_json<W: Write>(mut w: W, pulse: &Pulse) -> Result<()> {
    let file = PulseFile::from_pulse(pulse);
    writeln!(w, "{}", serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_pulse_json<R: Read>(r: R) -> Result<Pulse> {
    let file: PulseFile = serde_json::from_reader(r)?;
    file.to_pulse()
}

/// CSV columns: `index,omega_x,omega_y` (rad/s).
pub fn write_pulse_csv<W: Write>(mut w: W, pulse: &Pulse) -> Result<()> {
    writeln!(w, "index,omega_x,omega_y")?;
    for (k, s) in pulse.steps().iter().enumerate() {
        writeln!(w, "{},{},{}", k, s[0], s[1])?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthesized sequences
// ---------------------------------------------------------------------------

/// JSON form of a [`ControlSequence`]: a list of arcs tagged by `kind` with
/// their parameters and durations, plus the total normalized time.
pub fn write_sequence_json<W: Write>(mut w: W, seq: &ControlSequence) -> Result<()> {
    writeln!(w, "{}", serde_json::to_string_pretty(seq)?)?;
    Ok(())
}

pub fn read_sequence_json<R: Read>(r: R) -> Result<ControlSequence> {
    Ok(serde_json::from_reader(r)?)
}

// ---------------------------------------------------------------------------
// Radial-speed contours
// ---------------------------------------------------------------------------

/// One sample of the radial speed field (polar chart with the angle measured
/// from the +y axis, matching [`crate::bloch::radial_speed`]).
#[derive(Debug, Clone, Copy)]
pub struct ContourRow {
    pub theta: f64,
    pub r: f64,
    pub drdt: f64,
}

/// CSV columns: `theta,R,dRdt`.
pub fn write_contour_csv<W: Write>(mut w: W, rows: &[ContourRow]) -> Result<()> {
    writeln!(w, "theta,R,dRdt")?;
    for row in rows {
        writeln!(w, "{},{},{}", row.theta, row.r, row.drdt)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Q surface and maximizer
// ---------------------------------------------------------------------------

/// CSV columns: `y_m,z_m,Q,region_label,feasible`. Infeasible samples write
/// `NaN` for `Q` and `none` for the label.
pub fn write_qsurface_csv<W: Write>(mut w: W, samples: &[QSample]) -> Result<()> {
    writeln!(w, "y_m,z_m,Q,region_label,feasible")?;
    for s in samples {
        let label = s.family.map_or("none", |f| f.label());
        writeln!(w, "{},{},{},{},{}", s.y_m, s.z_m, s.q, label, s.feasible())?;
    }
    Ok(())
}

/// CSV columns: `y_m,z_m,region_label` — the label view of the surface alone,
/// for plotting the region partition without the values.
pub fn write_regions_csv<W: Write>(mut w: W, samples: &[QSample]) -> Result<()> {
    writeln!(w, "y_m,z_m,region_label")?;
    for s in samples {
        let label = s.family.map_or("none", |f| f.label());
        writeln!(w, "{},{},{}", s.y_m, s.z_m, label)?;
    }
    Ok(())
}

/// JSON form of the `Q` maximizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaximizerFile {
    pub y_m: f64,
    pub z_m: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub theta_rad: f64,
    pub theta_ernst_rad: f64,
    #[serde(rename = "Tc")]
    pub tc: f64,
}

impl From<&QOptimum> for MaximizerFile {
    fn from(o: &QOptimum) -> Self {
        Self {
            y_m: o.y_m,
            z_m: o.z_m,
            q: o.q,
            theta_rad: o.theta_rad,
            theta_ernst_rad: o.theta_ernst_rad,
            tc: o.tc,
        }
    }
}

pub fn write_maximizer_json<W: Write>(mut w: W, opt: &QOptimum) -> Result<()> {
    writeln!(w, "{}", serde_json::to_string_pretty(&MaximizerFile::from(opt))?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Optimizer outputs
// ---------------------------------------------------------------------------

/// CSV columns: `iter,cost,grad_norm,step`.
pub fn write_history_csv<W: Write>(mut w: W, history: &[IterRecord]) -> Result<()> {
    writeln!(w, "iter,cost,grad_norm,step")?;
    for h in history {
        writeln!(w, "{},{},{},{}", h.iter, h.cost, h.grad_norm, h.step)?;
    }
    Ok(())
}

/// CSV columns: `offset_hz,species,x,y,z,trans_norm`.
pub fn write_robustness_csv<W: Write>(mut w: W, rows: &[RobustnessRow]) -> Result<()> {
    writeln!(w, "offset_hz,species,x,y,z,trans_norm")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.offset_hz,
            csv_field(&r.species),
            r.state.x,
            r.state.y,
            r.state.z,
            r.transverse_norm
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Contrast problem description
// ---------------------------------------------------------------------------

/// Species entry of a problem file (times in milliseconds).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub name: String,
    #[serde(rename = "T1_ms")]
    pub t1_ms: f64,
    #[serde(rename = "T2_ms")]
    pub t2_ms: f64,
    pub role: SpeciesRole,
}

/// What the cost does with a species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesRole {
    Maximize,
    Saturate,
}

/// Offsets as an explicit list or an inclusive regular range (Hz).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OffsetsSpec {
    List(Vec<f64>),
    Range(OffsetRange),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl OffsetsSpec {
    pub fn to_ensemble(&self, params: &SpinParams) -> Result<Vec<Isochromat>> {
        match self {
            OffsetsSpec::List(list) => offsets_from_list_hz(list, params),
            OffsetsSpec::Range(r) => uniform_offsets_hz(r.min, r.max, r.step, params),
        }
    }
}

/// Pulse grid of a problem file (duration in milliseconds, bound in Hz).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub n_steps: usize,
    pub dt_ms: f64,
    #[serde(default)]
    pub u_max_hz: Option<f64>,
}

impl PulseSpec {
    pub fn to_grid(&self) -> Result<PulseGrid> {
        let grid = PulseGrid {
            n_steps: self.n_steps,
            dt_s: self.dt_ms * 1e-3,
            u_max: self.u_max_hz.map(|hz| TWO_PI * hz),
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// Optimizer overrides of a problem file; absent fields keep the defaults of
/// [`OptimizerOptions`]. Step-like quantities are given in Hz.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub init_amplitude_hz: Option<f64>,
    pub initial_step_hz: Option<f64>,
    pub min_step: Option<f64>,
    pub spectral_steps: Option<bool>,
}

impl OptimizerSpec {
    pub fn to_options(&self) -> OptimizerOptions {
        let mut o = OptimizerOptions::default();
        if let Some(v) = self.max_iters {
            o.max_iters = v;
        }
        if let Some(v) = self.grad_tol {
            o.grad_tol = v;
        }
        if let Some(v) = self.restarts {
            o.restarts = v;
        }
        if let Some(v) = self.seed {
            o.seed = v;
        }
        if let Some(v) = self.init_amplitude_hz {
            o.init_amplitude = TWO_PI * v;
        }
        if let Some(v) = self.initial_step_hz {
            o.initial_step = TWO_PI * v;
        }
        if let Some(v) = self.min_step {
            o.min_step = v;
        }
        if let Some(v) = self.spectral_steps {
            o.spectral_steps = v;
        }
        o
    }
}

/// A complete two-species contrast problem in laboratory units.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub species: Vec<SpeciesSpec>,
    pub offsets_hz: OffsetsSpec,
    pub pulse: PulseSpec,
    pub cost: CostKind,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

impl ProblemFile {
    pub fn read<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Resolve into a solvable problem plus optimizer options. Requires
    /// exactly one species per role.
    pub fn to_problem(&self) -> Result<(ContrastProblem, OptimizerOptions)> {
        let mut enhance = None;
        let mut suppress = None;
        for s in &self.species {
            let params = SpinParams::from_times(s.t1_ms * 1e-3, s.t2_ms * 1e-3, 1.0)?;
            let species = Species::new(s.name.clone(), params);
            let slot = match s.role {
                SpeciesRole::Maximize => &mut enhance,
                SpeciesRole::Saturate => &mut suppress,
            };
            if slot.replace(species).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate {:?} role in species list",
                    s.role
                )));
            }
        }
        let (enhance, suppress) = match (enhance, suppress) {
            (Some(e), Some(s)) => (e, s),
            _ => {
                return Err(Error::InvalidInput(
                    "need exactly one species to maximize and one to saturate".into(),
                ))
            }
        };
        let ensemble = self.offsets_hz.to_ensemble(&enhance.params)?;
        let problem = ContrastProblem {
            enhance,
            suppress,
            ensemble,
            grid: self.pulse.to_grid()?,
            cost: self.cost,
            initial: MagState::equilibrium(),
        };
        problem.validate()?;
        Ok((problem, self.optimizer.to_options()))
    }
}
