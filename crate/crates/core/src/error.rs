use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("oracle infeasible: {terms} subset terms exceed the cap of {cap}")]
    OracleInfeasible { terms: u128, cap: u128 },
    #[error("lift-one restriction is undefined at index {0} because p_i = 1")]
    DegenerateCoordinate(usize),
    #[error("model not estimable with these weights")]
    NotEstimable,
    #[error("optimality characterization inapplicable: f(p) = 0")]
    CharacterizationInapplicable,
    #[error("support is singular: |X[I]| = 0")]
    SingularSupport,
    #[error("no estimable subset of size {0} found")]
    NoEstimableSubset(usize),
    #[error("weight symmetry hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("internal consistency failure: {0}")]
    Internal(String),
}

impl Error {
    /// True for failures caused by bad user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidAllocation(_)
                | Error::InvalidArgument(_)
                | Error::HypothesisViolated(_)
                | Error::OracleInfeasible { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
