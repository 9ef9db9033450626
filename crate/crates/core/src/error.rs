use thiserror::Error;

/// Failures reported by the estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("expected a pure state, got Bloch radius {radius}")]
    NotPure { radius: f64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("observed sequence has zero probability")]
    ZeroProbability,
    #[error("degenerate maximum: {0}")]
    Degenerate(String),
    #[error("vanishing normalization: {0}")]
    ZeroWeight(String),
    #[error("effect lost positivity at t={t}: alpha={alpha}, |(beta,zeta)|={norm}")]
    EffectNotPositive { t: f64, alpha: f64, norm: f64 },
    #[error("negative density {value} at grid index {index} (max {max})")]
    NegativeMass { index: usize, value: f64, max: f64 },
    #[error("time step {dt} needs {needed} substeps, more than the allowed {allowed}")]
    Cfl { dt: f64, needed: usize, allowed: usize },
    #[error("waiting-time distribution holds only {mass} of its mass up to T_max={t_max}")]
    WaitingTimeTruncated { mass: f64, t_max: f64 },
    #[error("no converged boundary-value root: {0}")]
    NoRoots(String),
    #[error("enumeration too large: {0}")]
    OracleTooLarge(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EffectNotPositive { .. }
                | Error::NegativeMass { .. }
                | Error::Cfl { .. }
                | Error::WaitingTimeTruncated { .. }
                | Error::NoRoots(_)
                | Error::Numerical(_)
                | Error::ZeroWeight(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
