use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum DeduceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A serialized record did not follow the expected schema.
    #[error("line {line}: schema violation in `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },

    #[error("frame `{frame_id}`: scene_feature has {found} entries, expected {expected}")]
    FeatureDimension {
        frame_id: String,
        expected: usize,
        found: usize,
    },

    #[error("unknown scene `{name}` (class set: {known})")]
    UnknownScene { name: String, known: String },

    #[error("unknown object class `{0}`")]
    UnknownObject(String),

    #[error("invalid class set: {0}")]
    InvalidClassSet(String),

    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("class `{0}` has no training samples")]
    EmptyClass(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model `{model}` requires missing asset `{asset}`")]
    MissingAsset { model: String, asset: String },

    #[error("frame `{0}` has no feature_blob")]
    MissingBlob(String),

    #[error("frame `{0}` has no truth label")]
    MissingTruth(String),

    #[error("frame `{0}` has no pose")]
    MissingPose(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no palette entry for label `{0}`")]
    MissingPalette(String),

    #[error("invalid palette: {0}")]
    InvalidPalette(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("image encoding failed: {0}")]
    Encode(String),
}

pub type Result<T> = std::result::Result<T, DeduceError>;

impl DeduceError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        DeduceError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn schema(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        DeduceError::Schema {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}
