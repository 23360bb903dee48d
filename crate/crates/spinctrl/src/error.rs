use thiserror::Error;

/// Library-wide error type.
///
/// `InvalidInput` covers malformed parameters and configuration; the remaining
/// variants signal well-defined mathematical obstructions (degenerate singular
/// plane, unreachable targets, ...) so callers can distinguish "you asked a
/// bad question" from "the answer does not exist".
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Relaxation times outside the physical cone (T2 > 2 T1) or non-positive.
    #[error("non-physical relaxation times: {0}")]
    NonPhysical(String),

    /// The horizontal singular plane is undefined (equal relaxation rates) or
    /// does not intersect the unit ball for these parameters.
    #[error("singular plane unavailable: {0}")]
    NoSingularPlane(String),

    /// An arc was requested between endpoints the corresponding flow cannot
    /// connect (wrong direction, sign change, target at/above equilibrium).
    #[error("infeasible arc: {0}")]
    InfeasibleArc(String),

    /// No admissible arc concatenation reaches the target state.
    #[error("unreachable target: {0}")]
    Unreachable(String),

    /// The steady-state fixed point is not unique (no relaxation, zero flip).
    #[error("steady state undefined: {0}")]
    NoSteadyState(String),

    /// A numerical routine failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
