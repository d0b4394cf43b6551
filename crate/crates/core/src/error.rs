use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at sample {sample}")]
    NonFinite { sample: usize },

    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("nominal parameters violate constraint {constraint}: spec {value} > threshold {threshold}")]
    InfeasibleNominal {
        constraint: usize,
        value: f64,
        threshold: f64,
    },

    #[error("parameters lie outside the box at coordinate {index}")]
    OutsideBox { index: usize },

    #[error("no certified box available")]
    NoCertifiedBox,

    #[error("empty synaptic-intelligence trace")]
    EmptyTrace,

    #[error("certification set was used for optimization (fingerprint {0:016x})")]
    HeldOutViolation(u64),

    #[error("margin method `{method}` is not valid here: {reason}")]
    MarginUnavailable { method: String, reason: String },

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },
}
