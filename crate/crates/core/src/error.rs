use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ellipticity kappa = {kappa} must lie in (0, 1/(2d)) = (0, {bound})")]
    KappaOutOfRange { kappa: f64, bound: f64 },
    #[error("disorder {delta} is infeasible: direction {direction} would reach {value}, outside [{kappa}, 1]")]
    InfeasibleDisorder { delta: f64, direction: usize, value: f64, kappa: f64 },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid marginal family: {0}")]
    InvalidFamily(String),
    #[error("mixing range {range} is invalid for a window of extent {extent}")]
    BadMixingRange { range: usize, extent: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("walk left the window at site {0:?}")]
    WindowExhausted(Vec<i64>),
    #[error("empty window")]
    EmptyWindow,
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("law is not supported by this routine: {0}")]
    UnsupportedLaw(String),
    #[error("degenerate denominator in ratio estimator")]
    DegenerateDenominator,
    #[error("coupling probability {0} is invalid")]
    InvalidCoupling(f64),
    #[error("residual kernel negative: coupling {coupling} exceeds minimal jump probability {min_prob}")]
    ResidualNegative { coupling: f64, min_prob: f64 },
    #[error("target velocity has l1 norm {0} >= 1")]
    ZNotInterior(f64),
    #[error("enumeration of {0} terms exceeds the budget")]
    EnumerationTooLarge(u128),
    #[error("no renewal found in a sequence of length {0}")]
    NoRenewal(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("run has zero replicas")]
    EmptyRun,
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("gate failed: {0}")]
    GateFailed(String),
    #[error("zero set inconclusive: {0}")]
    Inconclusive(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
