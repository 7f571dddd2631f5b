use thiserror::Error;

use crate::fleet::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid fleet: {}", format_violations(.0))]
    InvalidFleet(Vec<Violation>),

    #[error("state has {got} entries but the fleet has {expected} devices")]
    StateLength { expected: usize, got: usize },

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("signal takes negative value {value} kW at t = {t} h")]
    NegativeSignal { t: f64, value: f64 },

    #[error("energy gap {gap} kWh exceeds the reference energy {energy} kWh")]
    GapExceedsEnergy { gap: f64, energy: f64 },

    #[error("discharge policy given a negative request ({0} kW)")]
    NegativeRequest(f64),

    #[error("recharge policy given a positive request ({0} kW)")]
    PositiveRequest(f64),

    #[error("time step must be positive and finite, got {0} h")]
    InvalidStep(f64),

    #[error("unknown policy `{0}` (expected one of optimal, lpf, pop, pd, peak_shaving)")]
    UnknownPolicy(String),

    #[error(
        "policy `peak_shaving` needs the whole reference in advance and cannot run step by step"
    )]
    StreamingNonCausal,

    #[error("generator class {index}: {reason}")]
    DegenerateRates { index: usize, reason: String },

    #[error("trace lengths differ: {0}")]
    LengthMismatch(String),

    #[error("at least two samples are needed, got {0}")]
    TooFewSamples(usize),

    #[error("invalid study configuration: {0}")]
    ConfigInvalid(String),

    #[error("trace format error in {path}: {reason}")]
    TraceFormat { path: String, reason: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs (as opposed to failures while
    /// running a valid job).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::PreconditionViolation(_) | Error::Io(_))
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
