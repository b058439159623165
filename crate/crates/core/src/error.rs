use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("model assumption violated: {0}")]
    Assumption(String),

    #[error("non-finite model output at input {input:?} ({what})")]
    NonFinite { what: &'static str, input: Vec<f64> },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(
        "replica {replica} blew up at time {time}: non-finite position of particle {particle}"
    )]
    BlowUp {
        replica: u64,
        time: f64,
        particle: usize,
    },

    #[error("time {time} is not a multiple of kappa = {kappa}")]
    OffGrid { time: f64, kappa: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name,
        reason: reason.into(),
    }
}
