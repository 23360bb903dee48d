//! Steady-state signal analysis for repeated acquisition cycles.
//!
//! A cycle measures the transverse signal at a plane state `M = (y_m, z_m)`,
//! lets the state relax freely for one detection period (normalized duration
//! 1), and then steers the relaxed state `S(M)` back to `M` with the
//! minimum-time synthesis of [`crate::synthesis`]. The figure of merit is the
//! signal per square root of cycle duration,
//!
//! `Q(M) = y_m / sqrt(1 + Tc(M))`,
//!
//! where `Tc` is the normalized return-transfer time. States whose radius is
//! conserved over the cycle (`|S(M)| = |M|`) return by a single bang, so
//! `Tc = 0`; that locus is exactly the family of fixed points of
//! constant-flip-angle cycling, swept by the flip angle, and it contains the
//! maximizer of `Q`.

use rayon::prelude::*;

use crate::bloch::{PlanarState, SpinParams};
use crate::error::{Error, Result};
use crate::synthesis::{time_optimal_transfer, TransferFamily};

/// Free relaxation of a plane state over one detection period (normalized
/// duration 1): `y -> y e2`, `z -> 1 + (z - 1) e1` with `e1 = exp(-gamma_l)`,
/// `e2 = exp(-gamma_t)`.
pub fn steady_from_measure(m: PlanarState, params: &SpinParams) -> PlanarState {
    let e1 = (-params.gamma_l).exp();
    let e2 = (-params.gamma_t).exp();
    PlanarState::new(m.y * e2, 1.0 + (m.z - 1.0) * e1)
}

/// Everything `Q` evaluation learns about a measure point.
#[derive(Debug, Clone, Copy)]
pub struct QPoint {
    pub q: f64,
    /// Normalized return-transfer time.
    pub tc: f64,
    /// Arc family of the return transfer.
    pub family: TransferFamily,
}

/// Evaluate `Q`, the cycle time, and the return family at a measure point.
///
/// The measure point must have `y_m >= 0` (the two half-planes are mirror
/// images; the positive side is the convention throughout) and lie in the
/// unit ball. Errors propagate from the transfer synthesis, e.g. for
/// boundary states that cannot be repopulated.
pub fn q_point(m: PlanarState, params: &SpinParams) -> Result<QPoint> {
    if m.y < 0.0 {
        return Err(Error::InvalidInput(format!(
            "measure points use the y >= 0 half-plane (got y = {})",
            m.y
        )));
    }
    if m.radius() > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!(
            "measure point outside the unit ball (radius {})",
            m.radius()
        )));
    }
    let s = steady_from_measure(m, params);
    let transfer = time_optimal_transfer(s, m, params)?;
    let tc = transfer.duration;
    Ok(QPoint { q: m.y / (1.0 + tc).sqrt(), tc, family: transfer.family })
}

/// `Q` at a measure point (see [`q_point`]).
pub fn q_factor(m: PlanarState, params: &SpinParams) -> Result<f64> {
    Ok(q_point(m, params)?.q)
}

/// Signal accumulated over a total (normalized) experiment duration `t`:
/// repeating a cycle of quality `q` for time `t` yields a figure
/// `sqrt(t) * q`. Reported alongside `q`; it does not change the optimum.
pub fn snr_over_duration(q: f64, t: f64) -> f64 {
    t.sqrt() * q
}

/// One grid sample of the `Q` surface.
#[derive(Debug, Clone, Copy)]
pub struct QSample {
    pub y_m: f64,
    pub z_m: f64,
    /// `NaN` when the point is infeasible.
    pub q: f64,
    pub tc: f64,
    /// `None` when the point is infeasible (outside the ball, or its steady
    /// predecessor cannot reach it).
    pub family: Option<TransferFamily>,
}

impl QSample {
    pub fn feasible(&self) -> bool {
        self.family.is_some()
    }
}

/// Sample `Q` on a regular grid over the half-disc `y in [0, 1]`,
/// `z in [-1, 1]` (`nz` rows from south to north, `ny` columns from the axis
/// outwards, row-major). Rows are evaluated in parallel; the output order is
/// the grid order regardless of thread count.
pub fn q_surface(params: &SpinParams, ny: usize, nz: usize) -> Result<Vec<QSample>> {
    if ny < 2 || nz < 2 {
        return Err(Error::InvalidInput(format!(
            "grid needs at least 2 points per axis (got {ny} x {nz})"
        )));
    }
    let rows: Vec<Vec<QSample>> = (0..nz)
        .into_par_iter()
        .map(|j| {
            let z = -1.0 + 2.0 * j as f64 / (nz - 1) as f64;
            (0..ny)
                .map(|i| {
                    let y = i as f64 / (ny - 1) as f64;
                    let m = PlanarState::new(y, z);
                    match q_point(m, params) {
                        Ok(p) => QSample { y_m: y, z_m: z, q: p.q, tc: p.tc, family: Some(p.family) },
                        Err(_) => QSample { y_m: y, z_m: z, q: f64::NAN, tc: f64::NAN, family: None },
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Flip angle maximizing the fixed-point signal of constant-angle cycling:
/// `cos(theta) = (e1 + e2) / (1 + e1 e2)`.
pub fn ernst_angle(params: &SpinParams) -> f64 {
    let e1 = (-params.gamma_l).exp();
    let e2 = (-params.gamma_t).exp();
    (((e1 + e2) / (1.0 + e1 * e2)).clamp(-1.0, 1.0)).acos()
}

/// Fixed point of constant-angle cycling: the measure state `M` satisfying
/// `M = R(-theta) (D M + d)`, i.e. relax for one period, then rotate by
/// `-theta` (which tips towards `+y`) back onto itself.
///
/// The linear system is singular only without relaxation at zero flip angle;
/// that case errors.
pub fn ernst_steady_state(theta: f64, params: &SpinParams) -> Result<PlanarState> {
    let e1 = (-params.gamma_l).exp();
    let e2 = (-params.gamma_t).exp();
    let (s, c) = theta.sin_cos();
    // M = R(-theta) (D M + d) with D = diag(e2, e1), d = (0, 1 - e1):
    //   y = c e2 y + s (e1 z + 1 - e1)
    //   z = -s e2 y + c (e1 z + 1 - e1)
    let a11 = 1.0 - c * e2;
    let a12 = -s * e1;
    let a21 = s * e2;
    let a22 = 1.0 - c * e1;
    let det = a11 * a22 - a12 * a21;
    if det.abs() < 1e-14 {
        return Err(Error::NoSteadyState(format!(
            "cycling map has no isolated fixed point (theta = {theta}, e1 = {e1}, e2 = {e2})"
        )));
    }
    let b1 = s * (1.0 - e1);
    let b2 = c * (1.0 - e1);
    Ok(PlanarState::new((b1 * a22 - b2 * a12) / det, (a11 * b2 - a21 * b1) / det))
}

/// Result of the `Q` maximization.
#[derive(Debug, Clone, Copy)]
pub struct QOptimum {
    pub y_m: f64,
    pub z_m: f64,
    pub q: f64,
    /// Normalized return-transfer time at the optimum.
    pub tc: f64,
    /// Unsigned angle between the relaxed state and the measure state — the
    /// flip angle of the (bang-only) return at the optimum.
    pub theta_rad: f64,
    /// Closed-form optimal constant flip angle, for comparison.
    pub theta_ernst_rad: f64,
}

/// Angle between `S(M)` and `M` (the bang of a radius-conserving return).
fn return_angle(m: PlanarState, params: &SpinParams) -> f64 {
    let s = steady_from_measure(m, params);
    let denom = s.radius() * m.radius();
    if denom == 0.0 {
        return 0.0;
    }
    (((s.y * m.y + s.z * m.z) / denom).clamp(-1.0, 1.0)).acos()
}

/// Maximize `Q` over the half-disc of measure points.
///
/// Strategy: coarse `resolution x resolution` grid (parallel), then a
/// deterministic pattern search from the best grid point. The compass moves
/// are augmented with the local tangent of the radius-conservation locus
/// `|S(M)| = |M|` (from central differences), because the maximizer sits on
/// that locus where the `Q` surface has a ridge. Finally the locus itself is
/// polished with a golden-section sweep of the cycling fixed-point family,
/// and the better of the two candidates is returned.
pub fn maximize_q(params: &SpinParams, resolution: usize) -> Result<QOptimum> {
    if resolution < 8 {
        return Err(Error::InvalidInput(format!(
            "resolution {resolution} too coarse (need at least 8)"
        )));
    }
    let eval = |y: f64, z: f64| -> f64 {
        if y < 0.0 || y * y + z * z > 1.0 {
            return f64::NEG_INFINITY;
        }
        match q_point(PlanarState::new(y, z), params) {
            Ok(p) => p.q,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    // Coarse grid (parallel rows, deterministic reduction in grid order).
    let n = resolution;
    let best_per_row: Vec<(f64, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let z = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
            let mut best = (f64::NEG_INFINITY, 0.0, z);
            for i in 0..n {
                let y = i as f64 / (n - 1) as f64;
                let q = eval(y, z);
                if q > best.0 {
                    best = (q, y, z);
                }
            }
            best
        })
        .collect();
    let (mut best_q, mut by, mut bz) = (f64::NEG_INFINITY, 0.0, 0.0);
    for (q, y, z) in best_per_row {
        if q > best_q {
            (best_q, by, bz) = (q, y, z);
        }
    }
    if !best_q.is_finite() {
        return Err(Error::Numerical("no feasible measure point on the grid".into()));
    }

    // Pattern search with locus-tangent moves.
    let phi = |y: f64, z: f64| -> f64 {
        let m = PlanarState::new(y, z);
        steady_from_measure(m, params).radius() - m.radius()
    };
    let mut h = 1.0 / (n - 1) as f64;
    let mut evals = 0usize;
    while h > 1e-8 && evals < 10_000 {
        let d = 1e-6_f64;
        let gy = (phi(by + d, bz) - phi(by - d, bz)) / (2.0 * d);
        let gz = (phi(by, bz + d) - phi(by, bz - d)) / (2.0 * d);
        let gn = (gy * gy + gz * gz).sqrt();
        let (ty, tz) = if gn > 0.0 { (-gz / gn, gy / gn) } else { (1.0, 0.0) };
        let moves = [
            (h, 0.0),
            (-h, 0.0),
            (0.0, h),
            (0.0, -h),
            (h, h),
            (h, -h),
            (-h, h),
            (-h, -h),
            (h * ty, h * tz),
            (-h * ty, -h * tz),
        ];
        let mut improved = false;
        for (dy, dz) in moves {
            let q = eval(by + dy, bz + dz);
            evals += 1;
            if q > best_q {
                (best_q, by, bz) = (q, by + dy, bz + dz);
                improved = true;
            }
        }
        if !improved {
            h *= 0.5;
        }
    }

    // Polish along the fixed-point family (signal is unimodal in the flip
    // angle), if the family is defined for these rates.
    let golden = 0.5 * (5.0_f64.sqrt() - 1.0);
    let family_q = |theta: f64| -> f64 {
        match ernst_steady_state(theta, params) {
            Ok(m) => q_factor(m, params).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let (mut lo, mut hi) = (1e-6, std::f64::consts::PI - 1e-6);
    let mut x1 = hi - golden * (hi - lo);
    let mut x2 = lo + golden * (hi - lo);
    let (mut f1, mut f2) = (family_q(x1), family_q(x2));
    for _ in 0..90 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = family_q(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = family_q(x1);
        }
    }
    let theta_best = 0.5 * (lo + hi);
    let q_family = family_q(theta_best);
    if q_family > best_q {
        if let Ok(m) = ernst_steady_state(theta_best, params) {
            (best_q, by, bz) = (q_family, m.y, m.z);
        }
    }

    let p = q_point(PlanarState::new(by, bz), params)?;
    Ok(QOptimum {
        y_m: by,
        z_m: bz,
        q: best_q,
        tc: p.tc,
        theta_rad: return_angle(PlanarState::new(by, bz), params),
        theta_ernst_rad: ernst_angle(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::{free_evolution, MagState};

    fn rates(gl: f64, gt: f64) -> SpinParams {
        SpinParams::from_rates(gl, gt).unwrap()
    }

    #[test]
    fn relaxed_point_matches_free_evolution() {
        let p = rates(1.0, 1.8);
        for (y, z) in [(0.3, -0.5), (0.9, 0.1), (0.0, 1.0), (0.5, 0.5)] {
            let via_plane = steady_from_measure(PlanarState::new(y, z), &p);
            let via_flow = free_evolution(MagState::new(0.0, y, z), &p, 1.0);
            assert!((via_plane.y - via_flow.y).abs() < 1e-15);
            assert!((via_plane.z - via_flow.z).abs() < 1e-15);
        }
    }

    #[test]
    fn equilibrium_cycles_for_free() {
        // The equilibrium is its own steady state: Tc = 0, Q = 0.
        let p = rates(1.0, 1.8);
        let qp = q_point(PlanarState::new(0.0, 1.0), &p).unwrap();
        assert_eq!(qp.tc, 0.0);
        assert_eq!(qp.q, 0.0);
    }

    #[test]
    fn fixed_point_matches_power_iteration() {
        let p = rates(0.5, 1.9);
        for theta in [0.2, 0.8, 1.3, 2.4, 3.0] {
            let solved = ernst_steady_state(theta, &p).unwrap();
            // Iterate the cycle map from the origin until it converges.
            let e1 = (-p.gamma_l).exp();
            let e2 = (-p.gamma_t).exp();
            let (s, c) = theta.sin_cos();
            let (mut y, mut z) = (0.0_f64, 0.0_f64);
            for _ in 0..200 {
                let (ry, rz) = (e2 * y, e1 * z + 1.0 - e1);
                y = c * ry + s * rz;
                z = -s * ry + c * rz;
            }
            assert!((y - solved.y).abs() < 1e-12, "theta = {theta}");
            assert!((z - solved.z).abs() < 1e-12, "theta = {theta}");
        }
    }

    #[test]
    fn fixed_point_is_a_true_cycle_fixed_point() {
        // Applying relax-then-rotate to the solved state must return it, with
        // the rotation realized by the synthesis delta pulse.
        let p = rates(1.5, 1.69);
        let theta = 0.9;
        let m = ernst_steady_state(theta, &p).unwrap();
        let relaxed = steady_from_measure(m, &p);
        let back = crate::synthesis::delta_pulse(relaxed, -theta);
        assert!((back.y - m.y).abs() < 1e-14);
        assert!((back.z - m.z).abs() < 1e-14);
    }

    #[test]
    fn fixed_points_conserve_radius_over_the_cycle() {
        // The fixed-point family lies on the locus |S(M)| = |M|, so the
        // return transfer is a single bang and Q = y_m.
        let p = rates(1.0, 1.8);
        for theta in [0.3, 0.9, 1.5, 2.2] {
            let m = ernst_steady_state(theta, &p).unwrap();
            let s = steady_from_measure(m, &p);
            assert!((s.radius() - m.radius()).abs() < 1e-14);
            let qp = q_point(m, &p).unwrap();
            assert_eq!(qp.tc, 0.0);
            assert!((qp.q - m.y).abs() < 1e-15);
        }
    }

    #[test]
    fn no_steady_state_without_relaxation_at_zero_angle() {
        let p = SpinParams::from_times(f64::INFINITY, f64::INFINITY, 1.0).unwrap();
        assert!(matches!(ernst_steady_state(0.0, &p), Err(Error::NoSteadyState(_))));
    }

    #[test]
    fn ernst_angle_maximizes_the_family_signal() {
        // Scan the fixed-point signal on a fine grid: the closed-form angle
        // must beat every grid point, and the signal must be unimodal.
        for (gl, gt) in [(0.5, 1.9), (1.0, 1.8), (1.5, 1.69), (0.2, 3.0)] {
            let p = rates(gl, gt);
            let te = ernst_angle(&p);
            let ye = ernst_steady_state(te, &p).unwrap().y;
            let mut prev = 0.0;
            let mut rises = true;
            let mut direction_changes = 0;
            for k in 1..2000 {
                let theta = std::f64::consts::PI * k as f64 / 2000.0;
                let y = ernst_steady_state(theta, &p).unwrap().y;
                assert!(ye >= y - 1e-12, "closed form beaten at theta = {theta}");
                if rises && y < prev {
                    rises = false;
                    direction_changes += 1;
                } else if !rises && y > prev + 1e-15 {
                    direction_changes += 1;
                }
                prev = y;
            }
            assert_eq!(direction_changes, 1, "signal not unimodal for ({gl}, {gt})");
        }
    }

    #[test]
    fn ernst_angle_reference_value() {
        // gamma_l = 1, gamma_t = 1.8: cos(theta) = (e^-1 + e^-1.8)/(1 + e^-2.8).
        let p = rates(1.0, 1.8);
        let expected = ((0.36787944117144233 + 0.16529888822158653)
            / (1.0 + 0.06081006262521797_f64))
            .acos();
        assert!((ernst_angle(&p) - expected).abs() < 1e-14);
        assert!((ernst_angle(&p) - 1.044176153403274).abs() < 1e-12);
    }

    #[test]
    fn q_surface_grid_shape_and_feasibility() {
        let p = rates(1.0, 1.8);
        let samples = q_surface(&p, 21, 41).unwrap();
        assert_eq!(samples.len(), 21 * 41);
        // Row-major: first sample is the south pole corner.
        assert_eq!((samples[0].y_m, samples[0].z_m), (0.0, -1.0));
        // Outside-ball corner is infeasible, center is feasible.
        let corner = samples.iter().find(|s| s.y_m == 1.0 && s.z_m == -1.0).unwrap();
        assert!(!corner.feasible() && corner.q.is_nan());
        let center = samples.iter().find(|s| s.y_m == 0.5 && s.z_m == 0.0).unwrap();
        assert!(center.feasible() && center.q > 0.0);
        // Equilibrium is feasible with zero signal.
        let eq = samples.iter().find(|s| s.y_m == 0.0 && s.z_m == 1.0).unwrap();
        assert!(eq.feasible() && eq.q == 0.0);
    }

    #[test]
    fn maximizer_sits_on_the_conservation_locus() {
        let p = rates(1.0, 1.8);
        let opt = maximize_q(&p, 64).unwrap();
        assert!(opt.tc < 1e-6, "Tc = {}", opt.tc);
        assert!((opt.theta_rad - opt.theta_ernst_rad).abs() < 1e-3);
        // Q at the optimum is the fixed-point signal at the closed-form angle.
        let ye = ernst_steady_state(ernst_angle(&p), &p).unwrap().y;
        assert!((opt.q - ye).abs() < 1e-9, "q = {} vs y_E = {ye}", opt.q);
        // And it must not be beaten anywhere on a fine grid.
        for s in q_surface(&p, 101, 201).unwrap() {
            if s.feasible() {
                assert!(s.q <= opt.q + 1e-9);
            }
        }
    }
}
