use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node `{node}`: {reason}")]
    ShapeMismatch { node: String, reason: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("onnx parse error: {0}")]
    OnnxParse(String),

    #[error("unsupported onnx operator `{0}`")]
    UnsupportedOperator(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape repair failed at node `{node}`: {reason}")]
    RepairFailed { node: String, reason: String },

    #[error("operator {op} has no applicable site in this model")]
    Inapplicable { op: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("campaign complete: every operator cap is exhausted")]
    CampaignComplete,

    #[error("seed `{0}` is not in the pool")]
    MissingSeed(String),

    #[error("replay drift at step {step}: {reason}")]
    ReplayDrift { step: usize, reason: String },

    #[error("adapter protocol violation: {reason} (raw payload: {raw:?})")]
    Protocol { reason: String, raw: String },

    #[error("traces share no executed layer")]
    Alignment,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
