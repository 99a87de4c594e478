use std::fmt;

/// KKT residuals of a solved quadratic program, measured against the
/// unregularized problem and scaled by `max(1, |u|_inf)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity).max(self.complementarity)
    }
}

impl fmt::Display for KktResiduals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "primal={:.3e} stationarity={:.3e} complementarity={:.3e}",
            self.primal, self.stationarity, self.complementarity
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("rejected action: {0}")]
    RejectedAction(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver did not converge: {message} ({residuals})")]
    Solver { message: String, residuals: KktResiduals },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },

    #[error("unsupported message: {0}")]
    Version(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
