use thiserror::Error;

use crate::mdp::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid MDP ({} violation(s)): {}", .0.len(), first_violation(.0))]
    InvalidMdp(Vec<Violation>),

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feasible set is empty")]
    EmptyFeasibleSet,
}

fn first_violation(v: &[Violation]) -> String {
    v.first().map(|x| x.to_string()).unwrap_or_default()
}

pub type Result<T> = std::result::Result<T, Error>;
