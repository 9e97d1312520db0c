use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfdError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("{0}")]
    Invalid(String),
    #[error("frequency {freq_hz} Hz outside tabulated range [{lo_hz}, {hi_hz}] Hz")]
    OutOfRange { freq_hz: f64, lo_hz: f64, hi_hz: f64 },
    #[error("no resonance found in bracket [{lo}, {hi}] rad/s")]
    NotFound { lo: f64, hi: f64 },
    #[error("threshold is infinite: c_d is zero")]
    NoDivision,
    #[error("degenerate network: {0}")]
    Degenerate(String),
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
    #[error("step size underflow at t = {t} s")]
    Stiff { t: f64 },
    #[error("trajectory not settled: {0}")]
    NotSettled(String),
    #[error("invalid bracket: detection at [{lo}, {hi}] V gives {at_lo}/{at_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        at_lo: bool,
        at_hi: bool,
    },
    #[error("window error: {0}")]
    Window(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, PfdError>;
