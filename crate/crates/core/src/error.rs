use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("undefined payment for buyer {buyer} at type {t}: win probability {win_prob:e} is not positive")]
    UndefinedPayment { buyer: usize, t: f64, win_prob: f64 },

    #[error("undefined posterior for buyer {buyer} at type {t}: win probability {win_prob:e} is not positive")]
    UndefinedPosterior { buyer: usize, t: f64, win_prob: f64 },

    #[error("enumeration of {count} candidates exceeds the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
