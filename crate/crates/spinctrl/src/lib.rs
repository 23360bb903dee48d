//! Spin-dynamics toolkit for relaxation-limited control problems.
//!
//! The crate is organized around four pieces:
//!
//! * [`bloch`] — normalized rotating-frame dynamics with exact
//!   piecewise-constant propagation (matrix exponentials of the affine
//!   generator) and its exact control derivatives.
//! * [`synthesis`] — time-optimal planar synthesis with unbounded controls:
//!   instantaneous rotations plus horizontal/vertical singular arcs, closed
//!   form arc times, saturation sequences, and point-to-point transfers.
//! * [`snr`] — steady-state analysis of the measure/relax cycle: the
//!   per-unit-time signal figure `Q`, its surface over measure points, the
//!   optimal flip angle, and the associated steady states.
//! * [`grape`] — iterative pulse optimization for two-tissue contrast over a
//!   resonance-offset ensemble, with adjoint gradients that are exact for the
//!   discretized dynamics.
//!
//! [`io`] holds the file formats (CSV/JSON) shared by the CLI and tests.

pub mod bloch;
pub mod error;
pub mod grape;
pub mod io;
pub mod snr;
pub mod synthesis;

pub use error::{Error, Result};
