use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrowdError {
    #[error("configurations have different sizes: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("n = {0} exceeds the brute-force limit of {1}")]
    TooLargeN(usize, usize),
    #[error("integration diverged: trajectory left the working box or became non-finite at t = {t}")]
    IntegrationDiverged { t: f64 },
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error("waypoint not found for agent {agent} on the {side} side: no scanned instant lands in the open control region (tangency; try the approximate pipeline)")]
    WaypointNotFound { agent: usize, side: &'static str },
    #[error("infeasible assignment: every permutation uses an infinite cost entry")]
    InfeasibleAssignment,
    #[error("degenerate tube radii: outer radius fell below {0:e}")]
    RadiiDegenerate(f64),
    #[error("target perturbation failed for agent {agent}: {0} halvings did not produce an admissible point", .halvings)]
    PerturbationFailed { agent: usize, halvings: usize },
    #[error("horizon {t} is not above the infimum time {infimum}")]
    HorizonBelowInfimum { t: f64, infimum: f64 },
    #[error("trajectory time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("scenario validation failed: {0}")]
    Validation(String),
    #[error("plan does not match scenario (hash mismatch)")]
    PlanMismatch,
    #[error("verification failed: {0}")]
    VerificationFailed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CrowdError>;

impl CrowdError {
    /// CLI exit code: 0 success, 1 usage/io, 2 infeasible, 3 synthesis, 4 verification.
    pub fn exit_code(&self) -> i32 {
        use CrowdError::*;
        match self {
            Infeasible(_) => 2,
            WaypointNotFound { .. }
            | InfeasibleAssignment
            | RadiiDegenerate(_)
            | PerturbationFailed { .. }
            | HorizonBelowInfimum { .. }
            | IntegrationDiverged { .. } => 3,
            VerificationFailed(_) => 4,
            _ => 1,
        }
    }
}
