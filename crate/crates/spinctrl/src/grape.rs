//! Gradient-based pulse optimization over isochromat ensembles.
//!
//! A piecewise-constant pulse is judged by a terminal cost over the final
//! states of every (species, offset) pair. Because each step's map is a
//! matrix exponential, the cost's derivative with respect to each control
//! sample is available in closed form: the augmented-exponential directional
//! derivatives of [`crate::bloch::step_propagator_with_derivatives`] combine
//! with one adjoint sweep per isochromat into a gradient that is exact to
//! rounding, not a finite-difference estimate. Optimization is projected
//! steepest descent with a backtracking line search, restarted from several
//! initial pulses: the first restart starts from a waveform derived from the
//! suppressed species' on-resonance saturation geometry, the rest from
//! deterministic random pulses.
//!
//! Reductions over the ensemble always run in a canonical order (bundle,
//! then offset, then weight), so costs and gradients are bitwise identical
//! regardless of thread count or the order isochromats were listed in.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::Vector4;

use crate::bloch::{
    propagate_final, propagate_step, step_propagator_with_derivatives, Isochromat, MagState,
    PlanarState, Pulse, SpinParams,
};
use crate::error::{Error, Result};
use crate::synthesis::{saturation_sequence, singular_horizontal_control, Arc as ControlArc};

/// A named spin species taking part in a contrast problem.
#[derive(Debug, Clone)]
pub struct Species {
    pub name: String,
    pub params: SpinParams,
}

impl Species {
    pub fn new(name: impl Into<String>, params: SpinParams) -> Self {
        Self { name: name.into(), params }
    }
}

/// Terminal cost family, always minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Suppress the transverse signal of one species while maximizing the
    /// transverse signal of the other:
    /// `sum_w |Mxy_suppress| - sum_w |Mxy_enhance|`.
    Transverse,
    /// Null the suppressed species entirely while parking the enhanced one
    /// along +z, ready for a later readout:
    /// `sum_w |M_suppress| - sum_w (M_enhance)_z`.
    ///
    /// The suppression term is the plain vector norm, not its square: its
    /// slope does not flatten near the center, so minimization drives the
    /// suppressed species all the way to zero instead of trading the last
    /// bit of suppression away for the other species' gains.
    Preparation,
}

/// Discretization of the control waveform.
#[derive(Debug, Clone, Copy)]
pub struct PulseGrid {
    pub n_steps: usize,
    /// Step duration in seconds.
    pub dt_s: f64,
    /// Optional amplitude bound in rad/s.
    pub u_max: Option<f64>,
}

impl PulseGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidInput("pulse needs at least one step".into()));
        }
        if !self.dt_s.is_finite() || self.dt_s <= 0.0 {
            return Err(Error::InvalidInput(format!("step duration must be positive (got {})", self.dt_s)));
        }
        if let Some(m) = self.u_max {
            if !m.is_finite() || m <= 0.0 {
                return Err(Error::InvalidInput(format!("amplitude bound must be positive (got {m})")));
            }
        }
        Ok(())
    }

    pub fn zero_pulse(&self) -> Result<Pulse> {
        self.validate()?;
        Pulse::new(self.dt_s, vec![[0.0, 0.0]; self.n_steps], self.u_max)
    }

    /// Seeded probe pulse for gradient diagnostics: uniform phases with
    /// per-step tip angles up to about half a radian, clipped to the
    /// amplitude bound. Probes of this size excite the ensemble enough that
    /// the gradient is well away from zero, which the relative
    /// finite-difference comparison in [`gradient_check`] needs.
    pub fn probe_pulse(&self, seed: u64) -> Result<Pulse> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.random_pulse(0.5 / self.dt_s, &mut rng)
    }

    /// Random initial pulse: per step, amplitude `a sqrt(U)` (uniform over
    /// the disc of radius `a`, clipped to the bound) and uniform phase.
    fn random_pulse(&self, amplitude: f64, rng: &mut ChaCha8Rng) -> Result<Pulse> {
        self.validate()?;
        let cap = self.u_max.unwrap_or(f64::INFINITY).min(amplitude);
        let steps = (0..self.n_steps)
            .map(|_| {
                let r = cap * rng.random::<f64>().sqrt();
                let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                [r * phi.cos(), r * phi.sin()]
            })
            .collect();
        Pulse::new(self.dt_s, steps, self.u_max)
    }
}

/// A two-species ensemble contrast problem.
#[derive(Debug, Clone)]
pub struct ContrastProblem {
    /// Species whose signal the cost rewards.
    pub enhance: Species,
    /// Species whose signal the cost suppresses.
    pub suppress: Species,
    /// Shared offset ensemble (normalized offsets with weights).
    pub ensemble: Vec<Isochromat>,
    pub grid: PulseGrid,
    pub cost: CostKind,
    /// Common initial state (typically equilibrium).
    pub initial: MagState,
}

impl ContrastProblem {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.ensemble.is_empty() {
            return Err(Error::InvalidInput("offset ensemble is empty".into()));
        }
        if !self.initial.norm().is_finite() || self.initial.norm() > 1.0 + 1e-9 {
            return Err(Error::InvalidInput(format!(
                "initial state must lie in the unit ball (norm {})",
                self.initial.norm()
            )));
        }
        Ok(())
    }

    pub(crate) fn objective(&self) -> Objective {
        let bundles = match self.cost {
            CostKind::Transverse => vec![
                BundleSpec { params: self.suppress.params, sign: 1.0, term: TermKind::TransverseNorm },
                BundleSpec { params: self.enhance.params, sign: -1.0, term: TermKind::TransverseNorm },
            ],
            CostKind::Preparation => vec![
                BundleSpec { params: self.suppress.params, sign: 1.0, term: TermKind::FullNorm },
                BundleSpec { params: self.enhance.params, sign: -1.0, term: TermKind::ZComponent },
            ],
        };
        Objective { bundles, ensemble: canonical_ensemble(&self.ensemble), initial: self.initial }
    }
}

/// Evenly weighted isochromats on a regular offset grid (Hz endpoints
/// inclusive), normalized with the species-independent reference period.
pub fn uniform_offsets_hz(
    min_hz: f64,
    max_hz: f64,
    step_hz: f64,
    params: &SpinParams,
) -> Result<Vec<Isochromat>> {
    if !step_hz.is_finite() || step_hz <= 0.0 {
        return Err(Error::InvalidInput(format!("offset step must be positive (got {step_hz})")));
    }
    if min_hz.is_nan() || max_hz.is_nan() || max_hz < min_hz {
        return Err(Error::InvalidInput(format!(
            "offset range is empty ({min_hz} Hz to {max_hz} Hz)"
        )));
    }
    let n = ((max_hz - min_hz) / step_hz).round() as usize + 1;
    let w = 1.0 / n as f64;
    (0..n).map(|i| Isochromat::from_hz(min_hz + i as f64 * step_hz, params).and_then(|iso| Isochromat::new(iso.offset, w))).collect()
}

/// Evenly weighted isochromats at explicit offsets (Hz).
pub fn offsets_from_list_hz(list: &[f64], params: &SpinParams) -> Result<Vec<Isochromat>> {
    if list.is_empty() {
        return Err(Error::InvalidInput("offset list is empty".into()));
    }
    let w = 1.0 / list.len() as f64;
    list.iter()
        .map(|hz| Isochromat::from_hz(*hz, params).and_then(|iso| Isochromat::new(iso.offset, w)))
        .collect()
}

/// Terminal cost term evaluated on one final state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TermKind {
    TransverseNorm,
    FullNorm,
    ZComponent,
}

impl TermKind {
    /// Term value and its gradient with respect to the final state. The norm
    /// terms use the zero subgradient at the origin, the one point where the
    /// norm is not differentiable (and also the point where there is nothing
    /// left to suppress).
    fn value_grad(self, m: MagState) -> (f64, [f64; 3]) {
        match self {
            TermKind::TransverseNorm => {
                let r = (m.x * m.x + m.y * m.y).sqrt();
                if r > 0.0 {
                    (r, [m.x / r, m.y / r, 0.0])
                } else {
                    (0.0, [0.0, 0.0, 0.0])
                }
            }
            TermKind::FullNorm => {
                let r = (m.x * m.x + m.y * m.y + m.z * m.z).sqrt();
                if r > 0.0 {
                    (r, [m.x / r, m.y / r, m.z / r])
                } else {
                    (0.0, [0.0, 0.0, 0.0])
                }
            }
            TermKind::ZComponent => (m.z, [0.0, 0.0, 1.0]),
        }
    }
}

/// One weighted cost bundle: a species propagated over the whole ensemble
/// and scored by `sign * sum_i w_i term(M_i(t_f))`.
#[derive(Debug, Clone)]
pub(crate) struct BundleSpec {
    pub params: SpinParams,
    pub sign: f64,
    pub term: TermKind,
}

/// Internal objective: a list of bundles sharing one ensemble and initial
/// state. Public costs are built from this; tests can assemble single-bundle
/// objectives (e.g. plain excitation) directly.
#[derive(Debug, Clone)]
pub(crate) struct Objective {
    pub bundles: Vec<BundleSpec>,
    /// Canonically ordered (offset, then weight) copy of the ensemble.
    pub ensemble: Vec<Isochromat>,
    pub initial: MagState,
}

/// Sort isochromats by (offset, weight) so reductions have one canonical
/// order no matter how the caller listed them.
fn canonical_ensemble(ensemble: &[Isochromat]) -> Vec<Isochromat> {
    let mut v = ensemble.to_vec();
    v.sort_by(|a, b| {
        a.offset
            .total_cmp(&b.offset)
            .then_with(|| a.weight.total_cmp(&b.weight))
    });
    v
}

impl Objective {
    fn tasks(&self) -> Vec<(usize, usize)> {
        let mut t = Vec::with_capacity(self.bundles.len() * self.ensemble.len());
        for b in 0..self.bundles.len() {
            for i in 0..self.ensemble.len() {
                t.push((b, i));
            }
        }
        t
    }

    /// Cost only (forward propagation, no stored propagators).
    pub fn cost(&self, pulse: &Pulse) -> f64 {
        let parts: Vec<f64> = self
            .tasks()
            .into_par_iter()
            .map(|(b, i)| {
                let bundle = &self.bundles[b];
                let iso = &self.ensemble[i];
                let m = propagate_final(self.initial, &bundle.params, iso.offset, pulse);
                bundle.sign * iso.weight * bundle.term.value_grad(m).0
            })
            .collect();
        parts.iter().sum()
    }

    /// Cost and its exact gradient with respect to the physical control
    /// samples (rad/s), via one adjoint sweep per (bundle, isochromat).
    pub fn cost_grad(&self, pulse: &Pulse) -> (f64, Vec<[f64; 2]>) {
        let n = pulse.n_steps();
        let parts: Vec<(f64, Vec<[f64; 2]>)> = self
            .tasks()
            .into_par_iter()
            .map(|(b, i)| {
                let bundle = &self.bundles[b];
                let iso = &self.ensemble[i];
                let (phi, g) = adjoint_cost_grad(
                    &bundle.params,
                    iso.offset,
                    pulse,
                    self.initial,
                    bundle.term,
                );
                let scale = bundle.sign * iso.weight;
                let g_scaled = g.iter().map(|e| [e[0] * scale, e[1] * scale]).collect();
                (bundle.sign * iso.weight * phi, g_scaled)
            })
            .collect();
        // Sequential reduction in task order: bitwise deterministic.
        let mut cost = 0.0;
        let mut grad = vec![[0.0; 2]; n];
        for (c, g) in parts {
            cost += c;
            for (acc, e) in grad.iter_mut().zip(g.iter()) {
                acc[0] += e[0];
                acc[1] += e[1];
            }
        }
        (cost, grad)
    }
}

/// Forward-store-backward sweep for one isochromat. Returns the raw terminal
/// term value and its gradient with respect to each control sample in rad/s
/// (the chain rule `u = omega Td` contributes the trailing `Td` factor).
fn adjoint_cost_grad(
    params: &SpinParams,
    offset: f64,
    pulse: &Pulse,
    initial: MagState,
    term: TermKind,
) -> (f64, Vec<[f64; 2]>) {
    let n = pulse.n_steps();
    let dtau = pulse.dt() / params.td;
    let mut states = Vec::with_capacity(n + 1);
    let mut props = Vec::with_capacity(n);
    let mut s = initial.homogeneous();
    states.push(s);
    for step in pulse.steps() {
        let u = [step[0] * params.td, step[1] * params.td];
        let (p, dx, dy) = step_propagator_with_derivatives(params, offset, u, dtau);
        s = p * s;
        states.push(s);
        props.push((p, dx, dy));
    }
    let (phi, dphi) = term.value_grad(MagState::from_homogeneous(&states[n]));
    let mut lambda = Vector4::new(dphi[0], dphi[1], dphi[2], 0.0);
    let mut grad = vec![[0.0; 2]; n];
    for k in (0..n).rev() {
        let (p, dx, dy) = &props[k];
        grad[k] = [
            lambda.dot(&(dx * states[k])) * params.td,
            lambda.dot(&(dy * states[k])) * params.td,
        ];
        lambda = p.transpose() * lambda;
    }
    (phi, grad)
}

/// Cost of a pulse for a contrast problem.
pub fn cost(problem: &ContrastProblem, pulse: &Pulse) -> Result<f64> {
    problem.validate()?;
    Ok(problem.objective().cost(pulse))
}

/// Cost and exact gradient (rad/s parametrization) for a contrast problem.
pub fn cost_gradient(problem: &ContrastProblem, pulse: &Pulse) -> Result<(f64, Vec<[f64; 2]>)> {
    problem.validate()?;
    Ok(problem.objective().cost_grad(pulse))
}

/// Descent bookkeeping, one row per accepted iterate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    /// Line-search step actually taken (0 for the initial record).
    pub step: f64,
}

/// Optimizer knobs. `Default` gives a deterministic medium-effort setup.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    /// Stop when the gradient's largest entry falls below this (rad/s scale).
    pub grad_tol: f64,
    /// First trial step moves the largest-gradient control sample by this
    /// many rad/s.
    pub initial_step: f64,
    /// Line-search floor: give up (with a warning) when the trial change to
    /// the largest control sample falls below this many rad/s.
    pub min_step: f64,
    /// Number of random starts; the best final cost wins.
    pub restarts: usize,
    pub seed: u64,
    /// Amplitude scale of random initial pulses (rad/s).
    pub init_amplitude: f64,
    /// Start each line search from a spectral (Barzilai-Borwein) step length
    /// fitted to the previous accepted move, instead of doubling the last
    /// accepted length. Much faster through ill-conditioned valleys, but the
    /// longer trial hops can cross between basins; off by default.
    pub spectral_steps: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-8,
            initial_step: 40.0 * std::f64::consts::PI, // 2 pi * 20 Hz
            min_step: 1e-12,
            restarts: 4,
            seed: 0,
            init_amplitude: 20.0 * std::f64::consts::PI, // 2 pi * 10 Hz
            spectral_steps: false,
        }
    }
}

/// Outcome of a GRAPE run (the best restart).
#[derive(Debug, Clone)]
pub struct GrapeResult {
    pub pulse: Pulse,
    pub cost: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Index of the winning restart.
    pub restart: usize,
    /// Accepted-iterate history of the winning restart (monotone cost).
    pub history: Vec<IterRecord>,
    pub warnings: Vec<String>,
}

fn inf_norm(g: &[[f64; 2]]) -> f64 {
    g.iter().fold(0.0_f64, |m, e| m.max(e[0].abs()).max(e[1].abs()))
}

/// Project a candidate waveform onto the amplitude ball: samples over the
/// bound are scaled down preserving phase.
fn project_steps(steps: &mut [[f64; 2]], u_max: Option<f64>) {
    if let Some(m) = u_max {
        for s in steps.iter_mut() {
            let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
            if r > m {
                let k = m / r;
                s[0] *= k;
                s[1] *= k;
            }
        }
    }
}

/// Outcome of one projected-descent run, before a restart index is attached.
struct Descent {
    pulse: Pulse,
    cost: f64,
    grad_norm: f64,
    converged: bool,
    history: Vec<IterRecord>,
    warnings: Vec<String>,
}

impl Descent {
    fn into_result(self, restart: usize) -> GrapeResult {
        GrapeResult {
            pulse: self.pulse,
            cost: self.cost,
            grad_norm: self.grad_norm,
            converged: self.converged,
            restart,
            history: self.history,
            warnings: self.warnings,
        }
    }
}

fn descend(
    objective: &Objective,
    grid: &PulseGrid,
    start: Pulse,
    opts: &OptimizerOptions,
) -> Result<Descent> {
    let mut pulse = start;
    // Cost always comes from the forward-only path (the adjoint pass supplies
    // gradients only), so every comparison below is between like quantities.
    let mut cost = objective.cost(&pulse);
    let mut grad = objective.cost_grad(&pulse).1;
    let mut gnorm = inf_norm(&grad);
    let mut history = vec![IterRecord { iter: 0, cost, grad_norm: gnorm, step: 0.0 }];
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut alpha_hint: Option<f64> = None;

    for iter in 1..=opts.max_iters {
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        let alpha0 = opts.initial_step / gnorm.max(1e-300);
        let mut alpha = match alpha_hint {
            None => alpha0,
            Some(a) if opts.spectral_steps => a.min(1e8 * alpha0),
            Some(a) => (2.0 * a).min(64.0 * alpha0),
        };
        let mut accepted = false;
        while alpha * gnorm >= opts.min_step {
            let mut steps = pulse.steps().to_vec();
            for (s, g) in steps.iter_mut().zip(grad.iter()) {
                s[0] -= alpha * g[0];
                s[1] -= alpha * g[1];
            }
            project_steps(&mut steps, grid.u_max);
            let trial = Pulse::new(pulse.dt(), steps, grid.u_max)?;
            // Sufficient decrease along the projected step.
            let mut descent = 0.0;
            for (t, (p, g)) in trial.steps().iter().zip(pulse.steps().iter().zip(grad.iter())) {
                descent += g[0] * (t[0] - p[0]) + g[1] * (t[1] - p[1]);
            }
            let trial_cost = objective.cost(&trial);
            if trial_cost <= cost + 1e-4 * descent && descent < 0.0 {
                let new_grad = objective.cost_grad(&trial).1;
                alpha_hint = if opts.spectral_steps {
                    // Spectral (Barzilai-Borwein) trial length for the next
                    // iteration: alpha = <dx,dx>/<dx,dg> fits a scalar
                    // curvature to the last accepted move. The backtracking
                    // above keeps every accepted cost non-increasing
                    // regardless; the spectral first guess is what lets the
                    // search cross the long, narrow valleys the ensemble
                    // costs develop, where a doubling heuristic crawls.
                    let mut dx2 = 0.0;
                    let mut dxdg = 0.0;
                    for (i, (t, p)) in trial.steps().iter().zip(pulse.steps().iter()).enumerate() {
                        for c in 0..2 {
                            let dx = t[c] - p[c];
                            let dg = new_grad[i][c] - grad[i][c];
                            dx2 += dx * dx;
                            dxdg += dx * dg;
                        }
                    }
                    if dxdg > 0.0 { Some(dx2 / dxdg) } else { Some(2.0 * alpha) }
                } else {
                    Some(alpha)
                };
                pulse = trial;
                // Keep the recorded cost on the forward-only path so the
                // accepted history is monotone by construction; the adjoint
                // pass supplies gradients only.
                cost = trial_cost;
                grad = new_grad;
                gnorm = inf_norm(&grad);
                history.push(IterRecord { iter, cost, grad_norm: gnorm, step: alpha });
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            warnings.push(format!(
                "line search stalled at iteration {iter} (cost {cost}, grad norm {gnorm})"
            ));
            break;
        }
    }
    Ok(Descent { pulse, cost, grad_norm: gnorm, converged, history, warnings })
}

/// One exact planar propagation step under a constant normalized control.
fn step_planar(s: PlanarState, params: &SpinParams, u: f64, dtau: f64) -> PlanarState {
    let m = propagate_step(s.to_mag(), params, 0.0, [u, 0.0], dtau);
    PlanarState::new(m.y, m.z)
}

/// Deterministic start derived from the suppressed species' on-resonance
/// saturation geometry, sampled onto the control grid: the bang becomes one
/// strong sample (or several at the bound), the horizontal singular arc
/// becomes midpoint-feedback samples tracked against the exact planar flow,
/// and the grid stays silent once the remaining motion is free relaxation.
///
/// The seed ignores offsets and the enhanced species entirely; descent is
/// responsible for both. Random starts rarely stumble on this bang/ride
/// structure, so offering it as one restart is what lets the optimizer
/// actually null the suppressed species instead of settling for a weak
/// partial tip. Returns `None` when the construction does not apply.
fn saturation_seed(problem: &ContrastProblem) -> Option<Pulse> {
    let p = &problem.suppress.params;
    let sat = saturation_sequence(p).ok()?;
    let dtau = problem.grid.dt_s / p.td;
    // Normalized amplitude cap, if the grid has one.
    let cap = problem.grid.u_max.map(|m| m * p.td);
    let mut steps = vec![[0.0_f64; 2]; problem.grid.n_steps];
    let mut state = PlanarState::new(0.0, 1.0);
    let mut k = 0usize;
    for ta in &sat.sequence.arcs {
        match ta.arc {
            ControlArc::Bang { angle } => {
                let mut remaining = angle;
                while remaining.abs() > 1e-12 && k < steps.len() {
                    let chunk = match cap {
                        Some(c) => remaining.clamp(-c * dtau, c * dtau),
                        None => remaining,
                    };
                    let u = chunk / dtau;
                    steps[k][0] = u / p.td;
                    state = step_planar(state, p, u, dtau);
                    k += 1;
                    remaining -= chunk;
                }
            }
            ControlArc::SingularHorizontal { z0, .. } => {
                // Ride the plane until one grid step would cross the axis:
                // radius where d(y^2)/dtau carries y^2 to zero in one step.
                let k_abs = (p.gamma_l * (1.0 - z0) * z0).abs();
                let floor = (2.0 * k_abs * dtau).sqrt();
                while k < steps.len() && state.y.abs() > floor {
                    let u0 = singular_horizontal_control(state.y, p).ok()?;
                    let mid = step_planar(state, p, u0, 0.5 * dtau);
                    let mut u = singular_horizontal_control(mid.y, p).unwrap_or(u0);
                    if let Some(c) = cap {
                        u = u.clamp(-c, c);
                    }
                    steps[k][0] = u / p.td;
                    state = step_planar(state, p, u, dtau);
                    k += 1;
                }
            }
            // Free relaxation: the remaining samples stay zero.
            ControlArc::SingularVertical { .. } => break,
        }
    }
    Pulse::new(problem.grid.dt_s, steps, problem.grid.u_max).ok()
}

pub(crate) fn optimize_objective(
    objective: &Objective,
    grid: &PulseGrid,
    opts: &OptimizerOptions,
    seeds: &[Pulse],
) -> Result<GrapeResult> {
    grid.validate()?;
    if opts.restarts == 0 {
        return Err(Error::InvalidInput("need at least one restart".into()));
    }
    let mut best: Option<GrapeResult> = None;
    for r in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
        let start = match seeds.get(r) {
            Some(p) => p.clone(),
            None => grid.random_pulse(opts.init_amplitude, &mut rng)?,
        };
        let candidate = descend(objective, grid, start, opts)?.into_result(r);
        let replace = match &best {
            None => true,
            Some(b) => candidate.cost < b.cost,
        };
        if replace {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart ran"))
}

/// Run the optimizer on a contrast problem.
///
/// The first restart descends from the suppression-geometry seed (see the
/// module docs); later restarts use deterministic random pulses. The best
/// final cost wins.
pub fn grape_optimize(problem: &ContrastProblem, opts: &OptimizerOptions) -> Result<GrapeResult> {
    problem.validate()?;
    let seeds: Vec<Pulse> = saturation_seed(problem).into_iter().collect();
    optimize_objective(&problem.objective(), &problem.grid, opts, &seeds)
}

/// Deterministic random problem + probe pulse for gradient validation.
///
/// The draw is shaped so the check is informative: the two species have well
/// separated transverse relaxation (otherwise the bundle gradients nearly
/// cancel under their opposite signs and the quotient measures only
/// finite-difference noise), steps are milliseconds long, and the probe
/// amplitudes tip the ensemble far from equilibrium.
pub fn random_check_problem(cost: CostKind, seed: u64) -> (ContrastProblem, Pulse) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let mut uniform = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let keep = Species::new(
        "keep",
        SpinParams::from_times(uniform(0.8, 1.2), uniform(0.25, 0.45), 1.0).unwrap(),
    );
    let null = Species::new(
        "null",
        SpinParams::from_times(uniform(0.7, 1.1), uniform(0.01, 0.02), 1.0).unwrap(),
    );
    let n_offsets = 1 + (uniform(0.0, 3.0) as usize).min(2);
    let offsets: Vec<f64> = (0..n_offsets).map(|_| uniform(-80.0, 80.0)).collect();
    let ensemble = offsets_from_list_hz(&offsets, &keep.params).unwrap();
    let n_steps = 12 + (uniform(0.0, 5.0) as usize).min(4);
    let dt_s = uniform(4e-3, 6e-3);
    let steps: Vec<[f64; 2]> = (0..n_steps)
        .map(|_| {
            let angle = uniform(0.3, 0.9);
            let phase = uniform(0.0, 2.0 * std::f64::consts::PI);
            let amp = angle / dt_s;
            [amp * phase.cos(), amp * phase.sin()]
        })
        .collect();
    let grid = PulseGrid { n_steps, dt_s, u_max: None };
    let pulse = Pulse::new(dt_s, steps, None).expect("generated amplitudes are finite");
    let problem = ContrastProblem {
        enhance: keep,
        suppress: null,
        ensemble,
        grid,
        cost,
        initial: MagState::equilibrium(),
    };
    (problem, pulse)
}

/// Result of comparing the adjoint gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub analytic: Vec<[f64; 2]>,
    pub numeric: Vec<[f64; 2]>,
    pub max_abs_err: f64,
    /// Largest entry-wise deviation over the largest numeric entry.
    pub max_rel_err: f64,
}

/// Central-difference check of the adjoint gradient at `pulse`, with probe
/// size `h` in rad/s. Probes ignore the amplitude bound (they are evaluation
/// points, not candidate controls).
pub fn gradient_check(problem: &ContrastProblem, pulse: &Pulse, h: f64) -> Result<GradientCheck> {
    problem.validate()?;
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidInput(format!("probe size must be positive (got {h})")));
    }
    let objective = problem.objective();
    let (_, analytic) = objective.cost_grad(pulse);
    let n = pulse.n_steps();
    let mut numeric = vec![[0.0; 2]; n];
    for k in 0..n {
        for c in 0..2 {
            let mut up = pulse.steps().to_vec();
            up[k][c] += h;
            let mut dn = pulse.steps().to_vec();
            dn[k][c] -= h;
            let cp = objective.cost(&Pulse::new(pulse.dt(), up, None)?);
            let cm = objective.cost(&Pulse::new(pulse.dt(), dn, None)?);
            numeric[k][c] = (cp - cm) / (2.0 * h);
        }
    }
    let mut max_abs = 0.0_f64;
    let mut ref_mag = 0.0_f64;
    for k in 0..n {
        for c in 0..2 {
            max_abs = max_abs.max((analytic[k][c] - numeric[k][c]).abs());
            ref_mag = ref_mag.max(numeric[k][c].abs());
        }
    }
    let max_rel = max_abs / ref_mag.max(1e-300);
    Ok(GradientCheck { analytic, numeric, max_abs_err: max_abs, max_rel_err: max_rel })
}

/// Final state of one (species, offset) pair under a pulse.
#[derive(Debug, Clone)]
pub struct RobustnessRow {
    pub species: String,
    pub offset_hz: f64,
    pub state: MagState,
    pub transverse_norm: f64,
}

/// Per-isochromat final states for both species, in (species, offset) order
/// with the enhanced species first.
pub fn robustness_report(problem: &ContrastProblem, pulse: &Pulse) -> Result<Vec<RobustnessRow>> {
    problem.validate()?;
    let ensemble = canonical_ensemble(&problem.ensemble);
    let species = [&problem.enhance, &problem.suppress];
    let tasks: Vec<(usize, usize)> = (0..2)
        .flat_map(|s| (0..ensemble.len()).map(move |i| (s, i)))
        .collect();
    let rows: Vec<RobustnessRow> = tasks
        .into_par_iter()
        .map(|(s, i)| {
            let sp = species[s];
            let iso = &ensemble[i];
            let m = propagate_final(problem.initial, &sp.params, iso.offset, pulse);
            RobustnessRow {
                species: sp.name.clone(),
                offset_hz: iso.offset / (2.0 * std::f64::consts::PI * sp.params.td),
                state: m,
                transverse_norm: m.transverse_norm(),
            }
        })
        .collect();
    Ok(rows)
}

/// The stock two-species preparation problem: suppress brain tissue
/// (T1 = 920 ms, T2 = 60 ms) while keeping muscle (T1 = 1011 ms, T2 = 30 ms)
/// along +z, over a 21-point offset comb spanning +/-400 Hz, with a 250 ms
/// pulse discretized at 0.5 ms.
pub fn preset_rat_brain_muscle() -> Result<(ContrastProblem, OptimizerOptions)> {
    let muscle = Species::new("muscle", SpinParams::from_times(1.011, 0.030, 1.0)?);
    let brain = Species::new("brain", SpinParams::from_times(0.920, 0.060, 1.0)?);
    let ensemble = uniform_offsets_hz(-400.0, 400.0, 40.0, &muscle.params)?;
    let problem = ContrastProblem {
        enhance: muscle,
        suppress: brain,
        ensemble,
        grid: PulseGrid { n_steps: 500, dt_s: 5e-4, u_max: None },
        cost: CostKind::Preparation,
        initial: MagState::equilibrium(),
    };
    let opts = OptimizerOptions {
        max_iters: 300,
        restarts: 2,
        grad_tol: 1e-8,
        spectral_steps: true,
        ..OptimizerOptions::default()
    };
    Ok((problem, opts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_relaxation() -> SpinParams {
        SpinParams::from_times(f64::INFINITY, f64::INFINITY, 1.0).unwrap()
    }

    fn tiny_problem(cost: CostKind, u_max: Option<f64>) -> ContrastProblem {
        let a = Species::new("keep", SpinParams::from_times(1.0, 0.08, 1.0).unwrap());
        let b = Species::new("null", SpinParams::from_times(0.9, 0.16, 1.0).unwrap());
        let ensemble = uniform_offsets_hz(-60.0, 60.0, 60.0, &a.params).unwrap();
        ContrastProblem {
            enhance: a,
            suppress: b,
            ensemble,
            grid: PulseGrid { n_steps: 12, dt_s: 2e-3, u_max },
            cost,
            initial: MagState::equilibrium(),
        }
    }

    #[test]
    fn single_step_excitation_converges_to_quarter_turn() {
        // One unconstrained step on a relaxation-free spin: maximizing the
        // transverse projection has its optimum at |u| dt = pi/2, cost -1.
        let params = no_relaxation();
        let objective = Objective {
            bundles: vec![BundleSpec { params, sign: -1.0, term: TermKind::TransverseNorm }],
            ensemble: vec![Isochromat::new(0.0, 1.0).unwrap()],
            initial: MagState::equilibrium(),
        };
        let grid = PulseGrid { n_steps: 1, dt_s: 1e-3, u_max: None };
        let opts = OptimizerOptions { max_iters: 400, restarts: 1, ..Default::default() };
        let res = optimize_objective(&objective, &grid, &opts, &[]).unwrap();
        assert!(res.cost < -1.0 + 1e-9, "cost = {}", res.cost);
        let s = res.pulse.steps()[0];
        let angle = (s[0] * s[0] + s[1] * s[1]).sqrt() * res.pulse.dt();
        assert!((angle - std::f64::consts::FRAC_PI_2).abs() < 1e-4, "angle = {angle}");
    }

    #[test]
    fn adjoint_gradient_matches_central_differences() {
        // Probe points matter: the check divides by the largest gradient
        // entry, and finite differences at h = 1e-6 carry ~5e-10 of rounding
        // noise, so the problems must be ones whose gradient is not close to
        // a cancellation (dissimilar species, well-excited states).
        for seed in 0..10u64 {
            for cost_kind in [CostKind::Transverse, CostKind::Preparation] {
                let (problem, pulse) = random_check_problem(cost_kind, seed);
                let check = gradient_check(&problem, &pulse, 1e-6).unwrap();
                assert!(
                    check.max_rel_err < 1e-6,
                    "{cost_kind:?} seed {seed}: rel err {}",
                    check.max_rel_err
                );
            }
        }
    }

    #[test]
    fn finite_difference_error_shrinks_quadratically() {
        // Central differences are O(h^2): the disagreement with the adjoint
        // gradient must drop by roughly 100x per 10x smaller probe. Probe
        // sizes are chosen where truncation still dominates rounding noise
        // (at millisecond steps the cost's third derivatives are ~(dt)^3, so
        // sub-milliradian probes are already noise-floor).
        let problem = tiny_problem(CostKind::Transverse, None);
        let steps: Vec<[f64; 2]> =
            (0..problem.grid.n_steps).map(|k| [300.0 + 15.0 * k as f64, -200.0]).collect();
        let pulse = Pulse::new(problem.grid.dt_s, steps, None).unwrap();
        let e_coarse = gradient_check(&problem, &pulse, 1.0).unwrap().max_abs_err;
        let e_fine = gradient_check(&problem, &pulse, 0.1).unwrap().max_abs_err;
        assert!(
            e_fine < e_coarse / 20.0,
            "e(1.0) = {e_coarse}, e(0.1) = {e_fine}"
        );
    }

    #[test]
    fn zero_pulse_from_equilibrium_has_vanishing_gradient() {
        // Equilibrium is a fixed point of every free step, and both cost
        // families are stationary there.
        for cost_kind in [CostKind::Transverse, CostKind::Preparation] {
            let problem = tiny_problem(cost_kind, None);
            let pulse = problem.grid.zero_pulse().unwrap();
            let (_, g) = cost_gradient(&problem, &pulse).unwrap();
            assert!(inf_norm(&g) < 1e-14, "{cost_kind:?}: |g| = {}", inf_norm(&g));
        }
    }

    #[test]
    fn opposite_offsets_mirror_the_gradient() {
        // A y-only pulse is invariant under the reflection y -> -y combined
        // with offset negation, so the x-channel gradient is antisymmetric
        // across +/- offset and the y-channel gradient symmetric.
        let params = SpinParams::from_times(1.0, 0.1, 1.0).unwrap();
        let steps: Vec<[f64; 2]> = (0..10).map(|k| [0.0, 150.0 - 20.0 * k as f64]).collect();
        let pulse = Pulse::new(1e-3, steps, None).unwrap();
        let w = params.normalize_offset_hz(120.0);
        let (_, gp) = adjoint_cost_grad(&params, w, &pulse, MagState::equilibrium(), TermKind::TransverseNorm);
        let (_, gm) = adjoint_cost_grad(&params, -w, &pulse, MagState::equilibrium(), TermKind::TransverseNorm);
        for k in 0..10 {
            assert!((gp[k][0] + gm[k][0]).abs() < 1e-12, "x channel at step {k}");
            assert!((gp[k][1] - gm[k][1]).abs() < 1e-12, "y channel at step {k}");
        }
    }

    #[test]
    fn accepted_history_is_monotone() {
        let problem = tiny_problem(CostKind::Preparation, None);
        let opts = OptimizerOptions { max_iters: 40, restarts: 1, ..Default::default() };
        let res = grape_optimize(&problem, &opts).unwrap();
        assert!(res.history.len() > 1, "optimizer made no progress");
        for w in res.history.windows(2) {
            assert!(w[1].cost <= w[0].cost, "cost rose: {} -> {}", w[0].cost, w[1].cost);
        }
        assert_eq!(res.history.last().unwrap().cost, res.cost);
    }

    #[test]
    fn ensemble_order_does_not_change_bits() {
        let problem = tiny_problem(CostKind::Transverse, None);
        let mut shuffled = problem.clone();
        shuffled.ensemble.reverse();
        let steps: Vec<[f64; 2]> = (0..problem.grid.n_steps).map(|k| [50.0, 10.0 * k as f64]).collect();
        let pulse = Pulse::new(problem.grid.dt_s, steps, None).unwrap();
        let (c1, g1) = cost_gradient(&problem, &pulse).unwrap();
        let (c2, g2) = cost_gradient(&shuffled, &pulse).unwrap();
        assert_eq!(c1.to_bits(), c2.to_bits());
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn amplitude_bound_is_respected() {
        let problem = tiny_problem(CostKind::Transverse, Some(80.0));
        let opts = OptimizerOptions { max_iters: 25, restarts: 1, ..Default::default() };
        let res = grape_optimize(&problem, &opts).unwrap();
        for s in res.pulse.steps() {
            let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
            assert!(r <= 80.0 * (1.0 + 1e-12), "amplitude {r} over the bound");
        }
    }

    #[test]
    fn preset_is_well_formed() {
        let (problem, opts) = preset_rat_brain_muscle().unwrap();
        problem.validate().unwrap();
        assert_eq!(problem.ensemble.len(), 21);
        assert_eq!(problem.grid.n_steps, 500);
        assert_eq!(problem.cost, CostKind::Preparation);
        assert!(opts.restarts >= 1);
        // Offsets span +/- 400 Hz symmetrically.
        let max_hz = problem
            .ensemble
            .iter()
            .map(|i| i.offset / (2.0 * std::f64::consts::PI))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((max_hz - 400.0).abs() < 1e-9);
    }

}
