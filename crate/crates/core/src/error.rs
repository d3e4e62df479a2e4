use thiserror::Error;

/// Failures raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Operands of a series or matrix operation do not share a shape.
    #[error("contract violation: {0}")]
    ShapeMismatch(String),

    #[error("arity mismatch: expected {expected} arguments, got {got}")]
    Arity { expected: usize, got: usize },

    /// Square root or reciprocal of a series whose leading term is not admissible.
    #[error("singular input: {0}")]
    SingularInput(String),

    #[error("degenerate metric at {point:?}: |det g| = {det:e}")]
    DegenerateMetric { point: Vec<f64>, det: f64 },

    /// |H| left the admissible band along a null trajectory.
    #[error("constraint drift: |H| = {value:e} exceeds {tol:e} at s = {s}")]
    ConstraintDrift { value: f64, tol: f64, s: f64 },

    #[error("step size underflow at s = {s} (h = {h:e})")]
    StepUnderflow { s: f64, h: f64 },

    /// The geodesic did not return to the boundary before the length cap.
    #[error("trapped: no boundary return within affine length {cap}")]
    Trapped { cap: f64 },

    #[error("left chart domain at s = {s}")]
    LeftChart { s: f64 },

    #[error("causality: {0}")]
    Causality(String),

    #[error("signature: {0}")]
    Signature(String),

    /// Branch condition of the normalization solve failed.
    #[error("degeneracy: {0}")]
    Degeneracy(String),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
