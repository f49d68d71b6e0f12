use thiserror::Error;

/// Errors raised by the analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter `{name}` must be strictly positive and finite (got {value})")]
    NonPositiveParameter { name: &'static str, value: f64 },

    #[error("condition C0 violated: c*m = {cm} must exceed d = {d}")]
    ConditionC0Violated { cm: f64, d: f64 },

    #[error("{what} is outside its domain: {detail}")]
    OutOfDomain { what: &'static str, detail: String },

    #[error("no purely imaginary characteristic roots: K = {k} <= K2 = {k2}")]
    NoHexicDomain { k: f64, k2: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("argument-principle winding number unstable under refinement ({coarse} vs {fine})")]
    ContourTooSmall { coarse: i64, fine: i64 },

    #[error("positivity violated at t = {t} (x = {x}, y = {y}); step size too large?")]
    PositivityViolated { t: f64, x: f64, y: f64 },

    #[error("invalid step size: {0}")]
    StepSizeInvalid(String),

    #[error("invalid history: {0}")]
    InvalidHistory(String),

    #[error("trajectory never crosses the Poincare section x = {level}")]
    SectionNotCrossed { level: f64 },

    #[error("return times do not settle: relative dispersion {dispersion:e}")]
    PeriodNotSettled { dispersion: f64 },

    #[error("time {t} is outside the stored trajectory window [{start}, {end}]")]
    OutOfWindow { t: f64, start: f64, end: f64 },

    #[error("anchor at tau = {tau} is tangential; no transversal crossing to follow")]
    AnchorDegenerate { tau: f64 },

    #[error("branch lost at its start: {0}")]
    LostAtStart(String),

    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error("seed ({tau}, {k}) is not on the curve (residual {residual:e})")]
    SeedNotOnCurve { tau: f64, k: f64, residual: f64 },

    #[error("condition not met: {0}")]
    ConditionNotMet(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoConvergence { .. }
            | Error::ContourTooSmall { .. }
            | Error::PositivityViolated { .. }
            | Error::PeriodNotSettled { .. }
            | Error::LostAtStart(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
