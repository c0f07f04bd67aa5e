use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] humeval_core::Error),

    #[error("rate limited; retry in {retry_after_secs} s")]
    RateLimited { retry_after_secs: u64 },

    #[error("submission rejected with {} violation(s)", violations.len())]
    Invalid { violations: Vec<String> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt event log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
