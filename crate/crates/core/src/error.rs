use crate::ecs::EventId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown event {0}")]
    UnknownEvent(EventId),

    #[error("no link {src} -> {dst}")]
    MissingLink { src: EventId, dst: EventId },

    #[error("malformed history: {0}")]
    MalformedHistory(String),

    #[error("event {0} has children but carries no incoming momentum")]
    DegenerateEvent(EventId),

    #[error("momentum {norm:e} is below the direction threshold")]
    DegenerateDirection { norm: f64 },

    #[error("variety needs at least two events, got {0}")]
    UndefinedVariety(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("momenta are incompatible around the cycle closed by {src} -> {dst} (loop residual {residual:e})")]
    IncompatibleMomenta {
        src: EventId,
        dst: EventId,
        residual: f64,
        cycle: Vec<EventId>,
    },

    #[error("grid too coarse: estimated stencil error {estimate:.3} exceeds {limit}")]
    Resolution { estimate: f64, limit: f64 },

    #[error("evolution became unstable at step {step} (t = {t}): {detail}")]
    Instability { step: usize, t: f64, detail: String },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("fit needs at least {needed} points, got {got}")]
    Fit { needed: usize, got: usize },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
