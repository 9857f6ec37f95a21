use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("boundaries collided at t={t}: a={a}, b={b}")]
    Collision { t: f64, a: f64, b: f64 },

    #[error("time grids of the two paths differ")]
    GridMismatch,

    #[error("process must stay positive, got {value}")]
    Positivity { value: f64 },

    #[error("measure bound violated at t={t}, point {index}: m={value} outside [{low}, {high}]")]
    BoundViolation {
        t: f64,
        index: usize,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("metric lost positive definiteness at t={t}, point {index}")]
    NotPositiveDefinite { t: f64, index: usize },

    #[error("operator `{label}` is not hermitian (defect {defect:e})")]
    NonHermitian { label: &'static str, defect: f64 },

    #[error("{scheme} step unstable: norm/trace drift {drift:e} exceeds {limit:e}")]
    Instability {
        scheme: &'static str,
        drift: f64,
        limit: f64,
    },

    #[error("sample point {y} lies outside [{a}, {b}]")]
    Domain { y: f64, a: f64, b: f64 },

    #[error("grid spacing {spacing:e} does not resolve wavelength {wavelength:e}")]
    Resolution { spacing: f64, wavelength: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("unsupported configuration: {0}")]
    Unsupported(&'static str),
}
