use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("consumption outside the agent's domain: {0}")]
    Domain(String),
    #[error("target utility {target} exceeds the satiation value {satiation}")]
    UnreachableTarget { target: String, satiation: String },
    #[error("infeasible endowment profile: {0}")]
    InfeasibleEndowment(String),
    #[error("constraint references unknown {0}")]
    UnknownReference(String),
    #[error("swap of agents {i} and {j} breaches a consumption cap")]
    SwapCapViolation { i: usize, j: usize },
    #[error("no individually rational allocation exists")]
    NoIrAllocation,
    #[error("linear program failed: {0}")]
    Lp(#[from] crate::lp::LpError),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration rejected: {0}")]
    Config(String),
    #[error("search budget exhausted: {0}")]
    BudgetExhausted(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
