use thiserror::Error;

/// Failures raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular phase: sin(Q) = {sin_q:e} is not positive")]
    SingularPhase { sin_q: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("matrix is not Hermitian (residual {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate class: |integral of (alpha + i omega)^n| = {modulus:e}")]
    DegenerateClass { modulus: f64 },

    #[error("phase theta0 = {theta0} is not hypercritical (must lie in (0, pi/2))")]
    NotHypercritical { theta0: f64 },

    #[error("path t*phi leaves the almost calibrated space at t = {t} (margin {margin:e})")]
    PathExit { t: f64, margin: f64 },

    #[error("cone exit at grid point {index} (margin {margin:e})")]
    ConeExit { index: usize, margin: f64 },

    #[error("time step underflow: dt = {dt:e} at t = {t}")]
    Stiffness { t: f64, dt: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("mollifier radius {radius} is below two grid cells")]
    RadiusTooSmall { radius: f64 },

    #[error("gluing gap violated at grid point {index}: rim value trails the covering maximum by {gap:e}, need more than {required:e}")]
    GluingGap { index: usize, gap: f64, required: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io: {0}")]
    Io(String),

    #[error("snapshot format: {0}")]
    Format(String),
}

impl Error {
    /// True for failures of the numerics itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularPhase { .. }
                | Error::PathExit { .. }
                | Error::ConeExit { .. }
                | Error::Stiffness { .. }
                | Error::NoConvergence { .. }
                | Error::GluingGap { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
