use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Exact integer arithmetic left the supported range.
    #[error("integer overflow during exact evaluation")]
    Overflow,

    #[error("invalid form: {0}")]
    InvalidForm(String),

    #[error("modulus must be odd here, got {0}")]
    EvenModulus(u64),

    #[error("invalid modulus: {0}")]
    InvalidModulus(String),

    #[error("{0} and {1} are not coprime")]
    NotCoprime(u64, u64),

    #[error("budget exceeded for {what}: needs {needed} units, budget is {budget}")]
    BudgetExceeded {
        what: &'static str,
        needed: u128,
        budget: u128,
    },

    #[error("memory budget exceeded: {required_bytes} bytes required, {budget_bytes} allowed")]
    MemoryBudget {
        required_bytes: u128,
        budget_bytes: u128,
    },

    #[error("no anchor found: {0}")]
    NoAnchor(String),

    #[error("verification failure: {0}")]
    VerificationFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("result store: {0}")]
    Store(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 2 for invalid input or refused
    /// work, 3 when a verification check failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::VerificationFailure(_) => 3,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::VerificationFailure("x".into()).exit_code(), 3);
        assert_eq!(Error::InvalidInput("x".into()).exit_code(), 2);
        assert_eq!(
            Error::BudgetExceeded {
                what: "q_naive",
                needed: 2,
                budget: 1
            }
            .exit_code(),
            2
        );
        assert_eq!(Error::Overflow.exit_code(), 2);
    }
}
