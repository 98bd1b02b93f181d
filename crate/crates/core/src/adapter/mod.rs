//! Channel to a model under test: live HTTP endpoints or a recorded replay log.

mod dump;
mod http;
mod replay;

use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use dump::{AttentionDump, SegmentLengths, HEADER_LEN, MAGIC, VERSION};
pub use http::{ChatBackend, ChatConfig, HttpBackend, LiveConfig, RetryPolicy};
pub use replay::{write_records, ReplayBackend, ResponseRecord};

use crate::error::AdapterError;

/// Request tags. A replay log is keyed by `(item_id, tag)`.
pub const TAG_MAIN: &str = "main";
pub const TAG_CGR_EXTRACT: &str = "cgr_extract";
pub const TAG_VAR_ATTENTION: &str = "var_attn";
pub const TAG_GENERATE: &str = "gen";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelRequest {
    pub item_id: String,
    pub tag: String,
    /// Fully rendered prompt, options included.
    pub prompt: String,
    /// Encoded image bytes; `None` in text-only mode.
    pub image: Option<Vec<u8>>,
    pub want_logits: bool,
    pub want_attention: bool,
}

impl ModelRequest {
    pub fn new(
        item_id: impl Into<String>,
        tag: impl Into<String>,
        prompt: impl Into<String>,
    ) -> Self {
        ModelRequest {
            item_id: item_id.into(),
            tag: tag.into(),
            prompt: prompt.into(),
            image: None,
            want_logits: false,
            want_attention: false,
        }
    }

    pub fn with_image(mut self, image: Option<Vec<u8>>) -> Self {
        self.image = image;
        self
    }

    pub fn with_logits(mut self, want: bool) -> Self {
        self.want_logits = want;
        self
    }

    pub fn with_attention(mut self, want: bool) -> Self {
        self.want_attention = want;
        self
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.prompt.is_empty() {
            return Err(AdapterError::InvalidRequest(format!(
                "empty prompt for item {}",
                self.item_id
            )));
        }
        Ok(())
    }
}

/// Where a response's attention dump lives.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionRef {
    /// A dump file; `declared` is the path as written in the log, `resolved`
    /// is relative to the process working directory.
    File {
        declared: String,
        resolved: PathBuf,
    },
    Inline(Arc<AttentionDump>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub item_id: String,
    pub tag: String,
    pub raw_text: String,
    /// Unnormalized per-option logits, ordered A..D.
    pub option_logits: Option<[f64; 4]>,
    pub attention: Option<AttentionRef>,
}

impl ModelResponse {
    pub fn load_attention(&self) -> Result<Option<AttentionDump>, AdapterError> {
        match &self.attention {
            None => Ok(None),
            Some(AttentionRef::Inline(d)) => Ok(Some((**d).clone())),
            Some(AttentionRef::File { resolved, .. }) => AttentionDump::read_file(resolved)
                .map(Some)
                .map_err(|source| AdapterError::Dump {
                    path: resolved.clone(),
                    source,
                }),
        }
    }
}

pub(crate) fn check_logits(values: &[f64]) -> Result<[f64; 4], String> {
    let arr: [f64; 4] = values
        .try_into()
        .map_err(|_| format!("option_logits must have 4 entries, found {}", values.len()))?;
    if let Some(i) = arr.iter().position(|v| !v.is_finite()) {
        return Err(format!("option_logits[{i}] is not finite"));
    }
    Ok(arr)
}

/// Anything that can answer a [`ModelRequest`]. Implementations must be
/// callable from several worker threads at once.
pub trait ModelBackend: Send + Sync {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, AdapterError>;
}

impl<T: ModelBackend + ?Sized> ModelBackend for Box<T> {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, AdapterError> {
        (**self).send(request)
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for Arc<T> {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, AdapterError> {
        (**self).send(request)
    }
}

/// Transport configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    /// `POST {base}/v1/respond`.
    Live(LiveConfig),
    /// OpenAI-compatible chat completions; text replies only.
    Chat(ChatConfig),
    /// Replay JSONL log.
    Replay(PathBuf),
}

impl Endpoint {
    pub fn replay(path: impl AsRef<Path>) -> Self {
        Endpoint::Replay(path.as_ref().to_path_buf())
    }

    pub fn connect(&self) -> Result<Box<dyn ModelBackend>, AdapterError> {
        Ok(match self {
            Endpoint::Live(cfg) => Box::new(HttpBackend::new(cfg.clone())?),
            Endpoint::Chat(cfg) => Box::new(ChatBackend::new(cfg.clone())?),
            Endpoint::Replay(path) => Box::new(ReplayBackend::load(path)?),
        })
    }
}

/// Sends one request through a backend after checking it.
pub fn send(
    backend: &dyn ModelBackend,
    request: &ModelRequest,
) -> Result<ModelResponse, AdapterError> {
    request.validate()?;
    backend.send(request)
}
