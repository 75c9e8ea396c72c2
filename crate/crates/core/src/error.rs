use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants split into two families that the command line maps onto
/// distinct exit codes: input problems (bad files, bad arguments, bad
/// configuration) and numeric failures (degenerate denominators, divergent
/// difference quotients, saturation).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("spectrum covers [{have_lo}, {have_hi}] nm but band needs [{need_lo}, {need_hi}] nm")]
    Coverage {
        have_lo: f64,
        have_hi: f64,
        need_lo: f64,
        need_hi: f64,
    },

    #[error("degenerate band {0}: relative spectral response integrates to zero")]
    DegenerateBand(String),

    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("saturated: wdvi {wdvi} is not below the asymptote {wdvi_inf}")]
    Saturation { wdvi: f64, wdvi_inf: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state error: {0}")]
    State(String),

    #[error("not differentiable at component {index}: difference quotient diverges ({coarse} -> {fine})")]
    NonDifferentiable { index: usize, coarse: f64, fine: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("stratification: {0}")]
    Stratification(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// True for failures of the arithmetic itself rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateBand(_)
                | Error::DegenerateDenominator(_)
                | Error::Saturation { .. }
                | Error::NonDifferentiable { .. }
                | Error::Numeric(_)
        )
    }

    /// Process exit code: 2 for input errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_numeric() {
            3
        } else {
            2
        }
    }
}
