use thiserror::Error;

/// Errors surfaced by constructors and operator preconditions.
///
/// Numerical tolerance violations that indicate a *caller* bug (feeding a
/// non-mean-free field to an inverse Laplacian, an inadmissible matrix to a
/// geometric decomposition, an under-resolved grid to a building block)
/// are rejected eagerly instead of producing silently wrong fields.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: &'static str, got: &'static str },

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("{op}: input must be mean-free (|mean| = {mean:.3e})")]
    NotMeanFree { op: &'static str, mean: f64 },

    #[error("{op}: input must be divergence-free (rel. div = {div:.3e})")]
    NotDivergenceFree { op: &'static str, div: f64 },

    #[error("matrix is not {class} (residue {residue:.3e})")]
    WrongSymmetryClass { class: &'static str, residue: f64 },

    #[error("decomposition input outside admissible ball: |input| = {norm:.3e} > {radius:.3e}")]
    OutOfBall { norm: f64, radius: f64 },

    #[error("grid under-resolved for requested construction: need N >= {min_n}, have {have_n}")]
    UnderResolved { min_n: usize, have_n: usize },

    #[error("time grid under-resolved: need spacing <= {need:.3e}, have {have:.3e}")]
    TimeUnderResolved { need: f64, have: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("inconsistent schedule: {0}")]
    Schedule(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("identity violated: {what} = {value:.3e} exceeds tolerance {tol:.3e}")]
    IdentityViolation { what: String, value: f64, tol: f64 },

    #[error("amplitude margin violated at t = {t:.6}: |{what}| ratio {ratio:.3e} > {allowed:.3e}; need prefactor >= {min_prefactor:.3e}")]
    MarginViolation { what: &'static str, t: f64, ratio: f64, allowed: f64, min_prefactor: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
