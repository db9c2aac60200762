use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no cycles")]
    EmptyTrajectory,

    #[error("time {t} is outside the trajectory horizon (0, {horizon}]")]
    OutsideHorizon { t: f64, horizon: f64 },

    #[error(
        "optimality condition is not bracketed: g({lo}) = {g_lo:e} (needs >= 0), \
         g({hi}) = {g_hi:e} (needs <= 0)"
    )]
    NotBracketed {
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error(
        "frequency constraint unattainable within wait cap: need mean cycle length \
         {required}, at most {attainable} reachable below threshold {cap}"
    )]
    Infeasible {
        required: f64,
        attainable: f64,
        cap: f64,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit code: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Json(_) | Error::Csv(_) => 1,
            Error::EmptyTrajectory
            | Error::OutsideHorizon { .. }
            | Error::NotBracketed { .. }
            | Error::Infeasible { .. }
            | Error::Io(_) => 2,
        }
    }
}
