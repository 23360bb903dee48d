//! Time-optimal planar synthesis with unbounded control.
//!
//! In the planar reduction (`x = 0`, single control channel) the optimal flow
//! is built from two primitives:
//!
//! * **bang arcs** — in the unbounded-amplitude limit these are instantaneous
//!   rotations about the origin of the `(y, z)` plane: zero elapsed time and
//!   radius preserved;
//! * **singular arcs** — either the vertical axis `y = 0` (control 0, pure
//!   longitudinal relaxation towards `z = 1`) or the horizontal plane
//!   `z = z0 = -gamma_l / (2 (gamma_t - gamma_l))`, on which the control is
//!   the feedback `u = -gamma_l (1 - z0) / y` that freezes `z`.
//!
//! Both singular arc times have closed forms (logarithms), so minimum times
//! are exact expressions; every sequence built here can also be re-simulated
//! with the exact propagator to confirm the closed forms against the flow.

use serde::{Deserialize, Serialize};

use crate::bloch::{propagate_step, PlanarState, SpinParams};
use crate::error::{Error, Result};

/// Horizontal singular arcs are considered terminated once `|y|` falls below
/// this floor: the singular feedback diverges at the axis, while the residual
/// arc time from the floor to the axis is O(El floor^2) and far below every
/// tolerance used here.
pub const Y_FLOOR: f64 = 1e-9;

/// Height `z0` of the horizontal singular plane, when it exists.
///
/// Errors if the relaxation rates coincide (the plane degenerates to
/// infinity); returns `None` when the plane misses the unit ball, which for
/// physical parameters (`T2 <= 2 T1`) means `2 T1 < 3 T2`.
pub fn singular_plane_z0(params: &SpinParams) -> Result<Option<f64>> {
    let (gl, gt) = (params.gamma_l, params.gamma_t);
    if gl == gt {
        return Err(Error::NoSingularPlane(format!(
            "equal relaxation rates (gamma = {gl}) leave no horizontal singular plane"
        )));
    }
    let z0 = -gl / (2.0 * (gt - gl));
    if z0.abs() <= 1.0 {
        Ok(Some(z0))
    } else {
        Ok(None)
    }
}

/// Feedback control holding the state on the horizontal singular plane:
/// `u = -gamma_l (1 - z0) / y`. Errors once `|y|` is at or below [`Y_FLOOR`]
/// (the arc has reached the axis for every practical purpose).
pub fn singular_horizontal_control(y: f64, params: &SpinParams) -> Result<f64> {
    let z0 = singular_plane_z0(params)?.ok_or_else(|| {
        Error::NoSingularPlane("horizontal singular plane misses the unit ball".into())
    })?;
    if y.abs() <= Y_FLOOR {
        return Err(Error::InfeasibleArc(format!(
            "horizontal singular arc terminated: |y| = {} at or below the {Y_FLOOR} floor",
            y.abs()
        )));
    }
    Ok(-params.gamma_l * (1.0 - z0) / y)
}

/// Time spent on the vertical singular arc (the z-axis, control 0) moving
/// from `z_from` up to `z_to`: `(1/gamma_l) ln((1 - z_from)/(1 - z_to))`.
///
/// Relaxation only moves the state towards `z = 1`, so `z_to < z_from` is
/// infeasible and `z_to >= 1` is unreachable in finite time.
pub fn vertical_arc_time(z_from: f64, z_to: f64, params: &SpinParams) -> Result<f64> {
    if !(-1.0..=1.0).contains(&z_from) || z_to < -1.0 {
        return Err(Error::InvalidInput(format!(
            "vertical arc endpoints must lie in the ball (z_from = {z_from}, z_to = {z_to})"
        )));
    }
    if z_to == z_from {
        return Ok(0.0);
    }
    if z_to < z_from {
        return Err(Error::InfeasibleArc(format!(
            "vertical arc cannot move down (z_from = {z_from}, z_to = {z_to})"
        )));
    }
    if z_to >= 1.0 {
        return Err(Error::Unreachable(
            "equilibrium is approached only asymptotically on the axis".into(),
        ));
    }
    if params.gamma_l <= 0.0 {
        return Err(Error::InfeasibleArc(
            "no longitudinal relaxation: the axis flow is frozen".into(),
        ));
    }
    Ok(((1.0 - z_from) / (1.0 - z_to)).ln() / params.gamma_l)
}

/// Time spent on the horizontal singular arc between transverse coordinates
/// `y_from` and `y_to` (same sign; the flow drives `|y|` towards the axis
/// when `z0 < 0`):
///
/// `tau = -(1/(2 gamma_t)) ln((k - gamma_t y_to^2)/(k - gamma_t y_from^2))`
///
/// with `k = gamma_l (1 - z0) z0`. `y_to = 0` is reached in finite time.
pub fn horizontal_arc_time(y_from: f64, y_to: f64, params: &SpinParams) -> Result<f64> {
    let z0 = singular_plane_z0(params)?.ok_or_else(|| {
        Error::NoSingularPlane("horizontal singular plane misses the unit ball".into())
    })?;
    if y_from == y_to {
        return Ok(0.0);
    }
    if y_from * y_to < 0.0 {
        return Err(Error::InfeasibleArc(format!(
            "horizontal arc cannot cross the axis (y_from = {y_from}, y_to = {y_to})"
        )));
    }
    if params.gamma_t <= 0.0 {
        return Err(Error::InfeasibleArc(
            "no transverse relaxation: the in-plane flow is frozen".into(),
        ));
    }
    let k = params.gamma_l * (1.0 - z0) * z0;
    let a = k - params.gamma_t * y_from * y_from;
    let b = k - params.gamma_t * y_to * y_to;
    if a == 0.0 || b / a <= 0.0 {
        return Err(Error::InfeasibleArc(format!(
            "horizontal arc crosses its equilibrium (y_from = {y_from}, y_to = {y_to})"
        )));
    }
    let tau = -(b / a).ln() / (2.0 * params.gamma_t);
    if tau < 0.0 {
        return Err(Error::InfeasibleArc(format!(
            "horizontal arc direction is against the flow (y_from = {y_from}, y_to = {y_to})"
        )));
    }
    Ok(tau)
}

/// Instantaneous rotation of the plane by `angle` (radians): positive angles
/// rotate `+z` towards `-y`, matching the sign of an impulsive `u_x > 0`.
pub fn delta_pulse(state: PlanarState, angle: f64) -> PlanarState {
    let (s, c) = angle.sin_cos();
    PlanarState::new(state.y * c - state.z * s, state.y * s + state.z * c)
}

/// Signed bang angle rotating `from` onto `to` (the radii must agree for the
/// rotation to actually land on `to`).
pub fn bang_angle(from: PlanarState, to: PlanarState) -> f64 {
    (from.y * to.z - from.z * to.y).atan2(from.y * to.y + from.z * to.z)
}

/// One arc of a synthesized sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Arc {
    /// Instantaneous rotation by `angle` (zero elapsed time).
    Bang { angle: f64 },
    /// Horizontal singular arc at `z = z0`, from `y_from` to `y_to`.
    SingularHorizontal { y_from: f64, y_to: f64, z0: f64 },
    /// Vertical singular arc on the axis from `z_from` up to `z_to`.
    SingularVertical { z_from: f64, z_to: f64 },
}

/// An [`Arc`] with its closed-form duration (normalized time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedArc {
    #[serde(flatten)]
    pub arc: Arc,
    pub duration: f64,
}

/// A concatenation of arcs with its total normalized duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub arcs: Vec<TimedArc>,
    pub total_time: f64,
}

/// Result of re-simulating a [`ControlSequence`] with the exact propagator.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub final_state: PlanarState,
    /// Simulated elapsed time, measured by event detection (not taken from
    /// the closed forms).
    pub duration: f64,
    /// `(t, state)` samples, one per substep.
    pub trajectory: Vec<(f64, PlanarState)>,
}

impl ControlSequence {
    pub fn new(arcs: Vec<TimedArc>) -> Self {
        let total_time = arcs.iter().map(|a| a.duration).sum();
        Self { arcs, total_time }
    }

    /// Map a state through the sequence using the arcs' exact endpoint maps
    /// (no integration); used for geometric continuity checks.
    pub fn exit_state(&self, entry: PlanarState) -> PlanarState {
        let mut s = entry;
        for ta in &self.arcs {
            s = match ta.arc {
                Arc::Bang { angle } => delta_pulse(s, angle),
                Arc::SingularHorizontal { y_to, z0, .. } => PlanarState::new(y_to, z0),
                Arc::SingularVertical { z_to, .. } => PlanarState::new(0.0, z_to),
            };
        }
        s
    }

    /// Re-simulate the sequence from `entry` with the exact piecewise
    /// propagator, using `substeps` steps per singular arc (midpoint feedback
    /// on horizontal arcs) and bisection-based event detection for the arc
    /// endpoints. The returned duration is measured, independent of the
    /// closed-form arc times, so it can serve as an oracle for them.
    ///
    /// Errors if the declared arcs are geometrically inconsistent with the
    /// simulated states (entry mismatch beyond small slack).
    pub fn simulate(
        &self,
        params: &SpinParams,
        entry: PlanarState,
        substeps: usize,
    ) -> Result<SimulatedRun> {
        let n = substeps.max(16);
        let mut s = entry;
        let mut t = 0.0_f64;
        let mut traj = vec![(0.0, s)];
        let step3 = |s: PlanarState, u: f64, h: f64| -> PlanarState {
            let m = propagate_step(s.to_mag(), params, 0.0, [u, 0.0], h);
            PlanarState::new(m.y, m.z)
        };
        for ta in &self.arcs {
            match ta.arc {
                Arc::Bang { angle } => {
                    s = delta_pulse(s, angle);
                    traj.push((t, s));
                }
                Arc::SingularVertical { z_from, z_to } => {
                    if (s.y).abs() > 1e-7 || (s.z - z_from).abs() > 1e-7 {
                        return Err(Error::Numerical(format!(
                            "vertical arc entry mismatch: state ({}, {}) vs declared (0, {z_from})",
                            s.y, s.z
                        )));
                    }
                    if z_to == z_from {
                        continue;
                    }
                    // Step with u = 0 until z crosses z_to, then bisect the
                    // crossing time inside the last substep.
                    let h = ta.duration.max(1e-12) * 1.5 / n as f64;
                    loop {
                        let next = step3(s, 0.0, h);
                        if next.z >= z_to {
                            let mut lo = 0.0;
                            let mut hi = h;
                            for _ in 0..80 {
                                let mid = 0.5 * (lo + hi);
                                if step3(s, 0.0, mid).z >= z_to {
                                    hi = mid;
                                } else {
                                    lo = mid;
                                }
                            }
                            s = step3(s, 0.0, hi);
                            t += hi;
                            traj.push((t, s));
                            break;
                        }
                        s = next;
                        t += h;
                        traj.push((t, s));
                    }
                }
                Arc::SingularHorizontal { y_from, y_to, z0 } => {
                    if (s.y - y_from).abs() > 1e-7 || (s.z - z0).abs() > 1e-7 {
                        return Err(Error::Numerical(format!(
                            "horizontal arc entry mismatch: state ({}, {}) vs declared ({y_from}, {z0})",
                            s.y, s.z
                        )));
                    }
                    let target = if y_to.abs() <= Y_FLOOR { Y_FLOOR.copysign(y_from) } else { y_to };
                    let h = ta.duration.max(1e-12) * 1.5 / n as f64;
                    // |y| shrinks monotonically along the arc, but a discrete
                    // step can overshoot straight through y = 0, so the exit
                    // event is "signed y (in the entry orientation) falls to
                    // the target", which a sign flip also satisfies.
                    let sgn = if y_from < 0.0 { -1.0 } else { 1.0 };
                    let reached = |p: &PlanarState| sgn * p.y <= target.abs();
                    // The feedback control diverges at the axis, and y(t)
                    // approaches it like a square root (d(y^2)/dt is nearly
                    // constant), so fixed steps develop an O(h) boundary
                    // layer in z near the exit. Two guards keep the layer
                    // resolved: the step is capped at a small fraction of the
                    // local remaining-time scale y^2 / (2 |k - gamma_t y^2|),
                    // and a step that would still cross the exit target is
                    // halved and retried with live feedback. Accepted steps
                    // grow the width back so refinement stays local.
                    let k = params.gamma_l * (1.0 - z0) * z0;
                    let theta = 2.0_f64.powi(-10);
                    let h_min = h * 2.0_f64.powi(-20);
                    let mut h_cur = h;
                    loop {
                        let r_scale =
                            s.y * s.y / (2.0 * (k.abs() + params.gamma_t * s.y * s.y));
                        let step = h_cur.min(theta * r_scale);
                        // Midpoint feedback: evaluate the singular control at
                        // a half-step predictor to suppress the O(h) bias.
                        // The predictor is clamped to the approach side (it
                        // can overshoot past the axis where the feedback
                        // flips sign), which also bounds it by twice the
                        // start-of-step control.
                        let u0 = singular_horizontal_control(s.y, params)?;
                        let mid = step3(s, u0, 0.5 * step);
                        let y_mid = (sgn * mid.y).max(0.5 * sgn * s.y) * sgn;
                        let u = singular_horizontal_control(y_mid, params).unwrap_or(u0);
                        let next = step3(s, u, step);
                        if reached(&next) {
                            if step > h_min {
                                h_cur = 0.5 * step;
                                continue;
                            }
                            let mut lo = 0.0;
                            let mut hi = step;
                            for _ in 0..80 {
                                let m = 0.5 * (lo + hi);
                                if reached(&step3(s, u, m)) {
                                    hi = m;
                                } else {
                                    lo = m;
                                }
                            }
                            s = step3(s, u, hi);
                            t += hi;
                            traj.push((t, s));
                            break;
                        }
                        s = next;
                        t += step;
                        traj.push((t, s));
                        h_cur = (2.0 * step).min(h);
                    }
                }
            }
        }
        Ok(SimulatedRun { final_state: s, duration: t, trajectory: traj })
    }
}

/// Which construction realizes the saturation minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationRegime {
    /// `2 T1 > 3 T2`: bang onto the horizontal singular plane, ride it to the
    /// axis, then relax up to the center.
    HorizontalDetour,
    /// Otherwise: invert to the south pole and relax up to the center.
    InversionOnly,
}

/// Saturation construction: the minimum-time sequence driving equilibrium
/// `(0, 1)` to the center `(0, 0)`, with its closed-form minimum time.
#[derive(Debug, Clone)]
pub struct Saturation {
    pub sequence: ControlSequence,
    pub regime: SaturationRegime,
    /// Minimum time in normalized units.
    pub t_min: f64,
    /// Minimum time in seconds (`t_min * Td`).
    pub t_min_seconds: f64,
}

/// Build the minimum-time saturation sequence for the given parameters.
///
/// For `2 T1 > 3 T2` the optimum is bang -> horizontal singular -> vertical
/// singular: the bang drops the state from the pole to the singular plane on
/// the unit circle (entry `y = sqrt(1 - z0^2)`), the plane is ridden to the
/// axis in finite time, and the axis arc climbs from `z0` to the center. Its
/// closed-form time is the sum of the two arc quadratures. Otherwise the
/// optimum is a pi bang to the south pole followed by the axis arc, with time
/// `T1 ln 2` in seconds.
pub fn saturation_sequence(params: &SpinParams) -> Result<Saturation> {
    if params.gamma_l <= 0.0 {
        return Err(Error::Unreachable(
            "no longitudinal relaxation: the center is approached only asymptotically".into(),
        ));
    }
    let north = PlanarState::new(0.0, 1.0);
    // Horizontal detour requires the singular plane strictly inside the ball,
    // i.e. 2 T1 > 3 T2 (equivalently 2 gamma_t > 3 gamma_l). At equality both
    // constructions take T1 ln 2; prefer the shorter arc list.
    let use_horizontal = params.gamma_t > 1.5 * params.gamma_l;
    if use_horizontal {
        let z0 = singular_plane_z0(params)?
            .expect("2 gamma_t > 3 gamma_l guarantees the plane intersects the ball");
        let y0 = (1.0 - z0 * z0).sqrt();
        let entry = PlanarState::new(y0, z0);
        let tau_h = horizontal_arc_time(y0, 0.0, params)?;
        let tau_v = vertical_arc_time(z0, 0.0, params)?;
        let seq = ControlSequence::new(vec![
            TimedArc { arc: Arc::Bang { angle: bang_angle(north, entry) }, duration: 0.0 },
            TimedArc { arc: Arc::SingularHorizontal { y_from: y0, y_to: 0.0, z0 }, duration: tau_h },
            TimedArc { arc: Arc::SingularVertical { z_from: z0, z_to: 0.0 }, duration: tau_v },
        ]);
        let t_min = seq.total_time;
        Ok(Saturation {
            sequence: seq,
            regime: SaturationRegime::HorizontalDetour,
            t_min,
            t_min_seconds: t_min * params.td,
        })
    } else {
        let south = PlanarState::new(0.0, -1.0);
        let tau_v = vertical_arc_time(-1.0, 0.0, params)?;
        let seq = ControlSequence::new(vec![
            TimedArc { arc: Arc::Bang { angle: bang_angle(north, south) }, duration: 0.0 },
            TimedArc { arc: Arc::SingularVertical { z_from: -1.0, z_to: 0.0 }, duration: tau_v },
        ]);
        let t_min = seq.total_time;
        Ok(Saturation {
            sequence: seq,
            regime: SaturationRegime::InversionOnly,
            t_min,
            t_min_seconds: t_min * params.td,
        })
    }
}

/// Arc family realizing a point-to-point transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferFamily {
    /// Radii already agree: single bang, zero time.
    DeltaOnly,
    /// Shrink the radius on the lower axis (bang, relax up, bang).
    Vertical,
    /// Shrink the radius on the horizontal singular plane.
    Horizontal,
    /// Ride the plane to the axis, then relax further up the axis.
    HorizontalVertical,
    /// Grow the radius on the upper axis.
    VerticalGrow,
}

impl TransferFamily {
    /// Stable label used in CSV exports.
    pub fn label(&self) -> &'static str {
        match self {
            TransferFamily::DeltaOnly => "delta",
            TransferFamily::Vertical => "vertical",
            TransferFamily::Horizontal => "horizontal",
            TransferFamily::HorizontalVertical => "horizontal+vertical",
            TransferFamily::VerticalGrow => "vertical-grow",
        }
    }
}

/// A synthesized point-to-point transfer.
#[derive(Debug, Clone)]
pub struct Transfer {
    pub sequence: ControlSequence,
    pub duration: f64,
    pub family: TransferFamily,
}

fn push_bang(arcs: &mut Vec<TimedArc>, from: PlanarState, to: PlanarState) {
    let angle = bang_angle(from, to);
    if angle != 0.0 {
        arcs.push(TimedArc { arc: Arc::Bang { angle }, duration: 0.0 });
    }
}

/// Minimum-time transfer between two plane states with unbounded control.
///
/// Because bangs are free rotations, only the radius path matters: the radius
/// can shrink along the lower axis or along the horizontal singular plane
/// (possibly finishing on the axis), and can grow along the upper axis. The
/// admissible families are enumerated, each with its closed-form time, and
/// the fastest is returned (ties within 1e-10 prefer fewer arcs, then the
/// enumeration order vertical < horizontal < horizontal+vertical < grow).
pub fn time_optimal_transfer(
    from: PlanarState,
    to: PlanarState,
    params: &SpinParams,
) -> Result<Transfer> {
    let r_s = from.radius();
    let r_m = to.radius();
    if r_s > 1.0 + 1e-12 || r_m > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "states must lie in the unit ball (radii {r_s}, {r_m})"
        )));
    }

    // Exact radius match: pure rotation.
    if (r_s - r_m).abs() <= 1e-14 * r_s.max(1.0) {
        let mut arcs = Vec::new();
        push_bang(&mut arcs, from, to);
        let seq = ControlSequence::new(arcs);
        return Ok(Transfer { sequence: seq, duration: 0.0, family: TransferFamily::DeltaOnly });
    }

    // A degenerate plane is simply not available as a transfer family.
    let z0 = singular_plane_z0(params).unwrap_or_default();
    // Only a plane strictly below the equator supports the standard inward
    // ride; z0 = 0 (no longitudinal relaxation) still shrinks |y| but never
    // reaches the axis, which the arc-time feasibility checks handle.
    let plane = z0.filter(|z| *z <= 0.0);

    let mut candidates: Vec<(f64, TransferFamily, Vec<TimedArc>)> = Vec::new();

    if r_m < r_s {
        // Lower axis: bang down, relax from -r_s up to -r_m.
        if params.gamma_l > 0.0 {
            if let Ok(tau) = vertical_arc_time(-r_s, -r_m, params) {
                let mut arcs = Vec::new();
                push_bang(&mut arcs, from, PlanarState::new(0.0, -r_s));
                arcs.push(TimedArc {
                    arc: Arc::SingularVertical { z_from: -r_s, z_to: -r_m },
                    duration: tau,
                });
                push_bang(&mut arcs, PlanarState::new(0.0, -r_m), to);
                candidates.push((tau, TransferFamily::Vertical, arcs));
            }
        }
        if let Some(z0) = plane {
            let a = z0.abs();
            if r_s >= a {
                let y_a = (r_s * r_s - z0 * z0).max(0.0).sqrt();
                if r_m >= a {
                    // Stay on the plane.
                    let y_b = (r_m * r_m - z0 * z0).max(0.0).sqrt();
                    if let Ok(tau) = horizontal_arc_time(y_a, y_b, params) {
                        let mut arcs = Vec::new();
                        push_bang(&mut arcs, from, PlanarState::new(y_a, z0));
                        arcs.push(TimedArc {
                            arc: Arc::SingularHorizontal { y_from: y_a, y_to: y_b, z0 },
                            duration: tau,
                        });
                        push_bang(&mut arcs, PlanarState::new(y_b, z0), to);
                        candidates.push((tau, TransferFamily::Horizontal, arcs));
                    }
                } else if params.gamma_l > 0.0 {
                    // Ride to the axis, then climb from z0 to -r_m.
                    if let (Ok(tau_h), Ok(tau_v)) = (
                        horizontal_arc_time(y_a, 0.0, params),
                        vertical_arc_time(z0, -r_m, params),
                    ) {
                        let mut arcs = Vec::new();
                        push_bang(&mut arcs, from, PlanarState::new(y_a, z0));
                        arcs.push(TimedArc {
                            arc: Arc::SingularHorizontal { y_from: y_a, y_to: 0.0, z0 },
                            duration: tau_h,
                        });
                        arcs.push(TimedArc {
                            arc: Arc::SingularVertical { z_from: z0, z_to: -r_m },
                            duration: tau_v,
                        });
                        push_bang(&mut arcs, PlanarState::new(0.0, -r_m), to);
                        candidates.push((tau_h + tau_v, TransferFamily::HorizontalVertical, arcs));
                    }
                }
            }
        }
    } else {
        // r_m > r_s: grow on the upper axis.
        if params.gamma_l > 0.0 && r_m < 1.0 {
            if let Ok(tau) = vertical_arc_time(r_s, r_m, params) {
                let mut arcs = Vec::new();
                push_bang(&mut arcs, from, PlanarState::new(0.0, r_s));
                arcs.push(TimedArc {
                    arc: Arc::SingularVertical { z_from: r_s, z_to: r_m },
                    duration: tau,
                });
                push_bang(&mut arcs, PlanarState::new(0.0, r_m), to);
                candidates.push((tau, TransferFamily::VerticalGrow, arcs));
            }
        }
    }

    if candidates.is_empty() {
        return Err(Error::Unreachable(format!(
            "no admissible arc family connects radius {r_s} to radius {r_m}"
        )));
    }

    // Fastest candidate; ties within 1e-10 prefer fewer arcs, then the
    // enumeration (insertion) order, so the winner is deterministic.
    let mut best = 0;
    for i in 1..candidates.len() {
        let tie = (candidates[i].0 - candidates[best].0).abs() <= 1e-10;
        let better = if tie {
            candidates[i].2.len() < candidates[best].2.len()
        } else {
            candidates[i].0 < candidates[best].0
        };
        if better {
            best = i;
        }
    }
    let (duration, family, arcs) = candidates.swap_remove(best);
    Ok(Transfer { sequence: ControlSequence::new(arcs), duration, family })
}
