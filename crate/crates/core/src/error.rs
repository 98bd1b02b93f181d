use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: malformed JSON record: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: option \"{key}\" is missing")]
    MissingOption { line: usize, key: char },
    #[error("line {line}: unexpected option key \"{key}\"")]
    UnexpectedOption { line: usize, key: String },
    #[error("line {line}: unknown category \"{value}\"")]
    UnknownCategory { line: usize, value: String },
    #[error("line {line}: invalid {field} \"{value}\"")]
    InvalidField {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: item {item_id}: {reason}")]
    InvalidItem {
        line: usize,
        item_id: String,
        reason: String,
    },
    #[error("line {line}: duplicate item_id \"{item_id}\"")]
    DuplicateItemId { line: usize, item_id: String },
    #[error("invalid pairs: {}", pair_ids.join(", "))]
    InvalidPairs { pair_ids: Vec<String> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("bad magic: expected \"MMVUATN1\"")]
    BadMagic,
    #[error("unsupported dump version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid segment lengths: {0}")]
    InvalidSegments(String),
    #[error("size mismatch: header implies {expected} payload bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("non-finite attention value at flat index {0}")]
    NonFinite(usize),
    #[error("negative attention value at flat index {0}")]
    Negative(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint rejected request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("replay miss: no recorded response for item \"{item_id}\" (tag \"{tag}\")")]
    ReplayMiss { item_id: String, tag: String },
    #[error("malformed reply for item \"{item_id}\": {reason}")]
    MalformedReply { item_id: String, reason: String },
    #[error("replay log line {line}: {reason}")]
    ReplayLog { line: usize, reason: String },
    #[error("attention dump {path}: {source}")]
    Dump {
        path: PathBuf,
        #[source]
        source: DumpError,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AdapterError {
    /// True for failures of the channel itself, as opposed to bad content.
    pub fn is_transport(&self) -> bool {
        matches!(self, AdapterError::Transport { .. })
    }
}

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite logit at index {0}")]
    NonFiniteLogit(usize),
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("missing template asset {0}")]
    MissingAsset(PathBuf),
    #[error("unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum VarError {
    #[error("dimension mismatch: image is {image_w}x{image_h}, mask is {mask_w}x{mask_h}")]
    DimensionMismatch {
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("strategy {strategy} cannot run in no-image mode")]
    IncompatibleMode { strategy: &'static str },
    #[error("extracted info must be given exactly for the CGR answer step (strategy {strategy})")]
    ExtractedInfo { strategy: &'static str },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{failed} of {total} items failed ({transport} transport), above the {:.0}% abort threshold", .threshold * 100.0)]
    TooManyFailures {
        failed: usize,
        transport: usize,
        total: usize,
        threshold: f64,
    },
    #[error("invalid worker count {0}")]
    InvalidWorkers(usize),
    #[error("unknown strategy \"{0}\"")]
    UnknownStrategy(String),
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error("{skipped} of {total} images skipped, above the 50% systemic-failure threshold")]
    Systemic { skipped: usize, total: usize },
    #[error("composition precondition violated: {0}")]
    Precondition(String),
    #[error("invalid sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
