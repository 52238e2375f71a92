use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error(
        "incompatible conv2d geometry: input {h}x{w}, kernel {kh}x{kw}, stride {stride}, padding {padding}"
    )]
    ConvGeometry {
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
    },

    #[error("incompatible pooling geometry: input {h}x{w}, window {window}, stride {stride}")]
    PoolGeometry {
        h: usize,
        w: usize,
        window: usize,
        stride: usize,
    },

    #[error("expected rank-{expected} tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },

    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("loss tensor is not connected to this tape")]
    DetachedGraph,

    #[error("layer {layer} ({kind}): {message}")]
    Layer {
        layer: usize,
        kind: &'static str,
        message: String,
    },

    #[error("model has no convolutional layer")]
    NoConvLayer,

    #[error("optimizer state keys do not match parameters: {message}")]
    KeyMismatch { message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged: loss became non-finite at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("checkpoint version mismatch: found magic {found:?}, supported {supported:?}")]
    VersionMismatch { found: String, supported: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("nonpositive gaussian variance: {0}")]
    NonPositiveVariance(f64),

    #[error("smoothing kernel radius {radius} too large for {h}x{w} map")]
    KernelTooLarge { radius: usize, h: usize, w: usize },

    #[error("mask is not binary: value {value} at flat index {index}")]
    NonBinaryMask { value: f64, index: usize },

    #[error("anchor grid geometry: stride {stride} does not tile {h}x{w} image")]
    AnchorGeometry { stride: usize, h: usize, w: usize },

    #[error("anchor list is empty")]
    EmptyAnchors,

    #[error("nonpositive box extent: [{x_min}, {y_min}, {x_max}, {y_max}]")]
    DegenerateBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },

    #[error("per-anchor inputs misaligned: {scores} scores, {deltas} deltas, {targets} targets")]
    MisalignedAnchors {
        scores: usize,
        deltas: usize,
        targets: usize,
    },

    #[error("sample {stem} has no annotation record")]
    UnannotatedSample { stem: String },

    #[error("evaluation arms cover different images: {message}")]
    DatasetMismatch { message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed netpbm header: {0}")]
    MalformedHeader(String),

    #[error("truncated netpbm payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an I/O error with the path it happened on.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
