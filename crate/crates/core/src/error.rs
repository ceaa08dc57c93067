use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("case parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),

    #[error("branch {from}-{to} references missing bus {missing}")]
    DanglingBranch { from: usize, to: usize, missing: usize },

    #[error("{element} references missing bus {bus}")]
    DanglingRef { element: &'static str, bus: usize },

    #[error("case has no swing machine")]
    NoSwing,

    #[error("more than one swing machine (buses {0:?})")]
    MultipleSwing(Vec<usize>),

    #[error("invalid case data: {0}")]
    InvalidCase(String),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, max_mismatch: f64 },

    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("zero solved voltage at load bus {bus}")]
    ZeroVoltageLoad { bus: usize },

    #[error("all ACVG-bus loads are zero; fleet shares undefined")]
    AllLoadsZero,

    #[error("Kron reduction singular; eliminated buses {buses:?} have no path to a retained bus")]
    ReductionSingular { buses: Vec<usize> },

    #[error("network algebra failed at t={t:.6} s: {reason} ({iterations} iterations, residual {residual:.3e} pu)")]
    StepFailed { t: f64, reason: &'static str, iterations: usize, residual: f64 },

    #[error("event at t={t} s does not land on a step boundary (dt={dt} s)")]
    EventOffGrid { t: f64, dt: f64 },

    #[error("event at t={t} s lies outside the horizon {horizon} s")]
    EventOutsideHorizon { t: f64, horizon: f64 },

    #[error("invalid event: {0}")]
    BadEvent(String),

    #[error("scenario epoch starting at t={t} s failed to compile: {source}")]
    EpochFailed { t: f64, #[source] source: Box<Error> },

    #[error("time series too short: need {needed} s, have {have} s")]
    HorizonTooShort { needed: f64, have: f64 },

    #[error("unknown bus {0}")]
    UnknownBus(usize),

    #[error("unknown branch {from}-{to}")]
    UnknownBranch { from: usize, to: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::PowerFlowDiverged { .. }
                | Error::SingularJacobian { .. }
                | Error::ReductionSingular { .. }
                | Error::StepFailed { .. }
                | Error::EpochFailed { .. }
                | Error::Io(_)
        )
    }
}
