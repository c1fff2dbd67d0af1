use thiserror::Error;

#[derive(Debug, Error)]
pub enum GpsError {
    #[error("invalid kernel: {0}")]
    InvalidSpec(String),
    #[error("persistence defect {defect:e} exceeds tolerance {tol:e}")]
    NonPersistent { defect: f64, tol: f64 },
    #[error("pinning parameter must be positive, got h = {0}")]
    NonPositivePinning(f64),
    #[error("tilt is stale: normalization off by {0:e}")]
    StaleTilt(f64),
    #[error("gamma = {gamma} is outside the Cramer window ({lo}, {hi})")]
    OutOfWindow { gamma: f64, lo: f64, hi: f64 },
    #[error("out of domain: {0}")]
    OutOfDomain(String),
    #[error("N and M must be positive, got ({0}, {1})")]
    EmptyTarget(u64, u64),
    #[error("invalid loop cap {0}: must be at least 2")]
    InvalidCap(u64),
    #[error("target outside the table: {0}")]
    OutOfTable(String),
    #[error("numerical inconsistency: {0}")]
    Inconsistent(String),
    #[error("sampling failure: {0}")]
    Sampling(String),
    #[error("infeasible sequences: {0}")]
    SpecInfeasible(String),
    #[error("wrong asymptotic branch: {0}")]
    WrongBranch(String),
    #[error("cannot fit: {0}")]
    Fit(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GpsError>;
