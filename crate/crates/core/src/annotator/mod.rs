//! Prompt construction, backend abstraction and the annotate step.

mod live;
pub mod mock;
mod simulated;
mod throttle;

use std::fmt;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::labels::{parse_label, Emotion, Label, Taxonomy};
use crate::sampling::{sniff_mime, CompositeEncoding, PositionRole};

pub use live::{LiveBackend, LiveConfig, API_KEY_ENV};
pub use simulated::{simulate_label, uniform_draw, LabelerSpec, SimulatedBackend, SimulatedLabeler};
pub use throttle::{throttle_policy, Clock, ManualClock, SystemClock, Throttle, ThrottleConfig};

pub const DEFAULT_MODEL_ID: &str = "gpt-4o-mini-2024-07-18";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transient transport failure: {0}")]
    Transient(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("request failed: {0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("authentication error: {0}")]
    Auth(String),
}

impl AnnotateError {
    fn from_backend(e: BackendError, attempts: u32) -> Self {
        match e {
            BackendError::Auth(m) => AnnotateError::Auth(m),
            BackendError::Transient(message) | BackendError::Fatal(message) => {
                AnnotateError::Transport { message, attempts }
            }
        }
    }
}

/// Prompt texts. `{labels}` in any text is replaced with the comma-separated
/// label names of the request taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub system_text: String,
    pub user_text_single: String,
    pub user_text_composite: String,
    pub clarification: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system_text: "You label the facial emotion shown in images. \
                          Allowed labels: {labels}."
                .to_string(),
            user_text_single: "The image below is a single video frame. Choose the one allowed label \
                               that best describes the emotion it shows and reply with that label only."
                .to_string(),
            user_text_composite: "The image below shows five frames of one video segment placed left to \
                                  right in temporal order. Choose the one allowed label that best \
                                  describes the overall emotion of the segment and reply with that \
                                  label only."
                .to_string(),
            clarification: "Answer with exactly one of the following words and nothing else: {labels}.".to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn render(text: &str, taxonomy: Taxonomy) -> String {
        text.replace("{labels}", &taxonomy.label_names().join(", "))
    }

    pub fn system_for(&self, taxonomy: Taxonomy) -> String {
        Self::render(&self.system_text, taxonomy)
    }

    pub fn user_for(&self, taxonomy: Taxonomy, mode: RequestMode) -> String {
        let text = match mode {
            RequestMode::Single => &self.user_text_single,
            RequestMode::Composite => &self.user_text_composite,
        };
        Self::render(text, taxonomy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestMode {
    Single,
    Composite,
}

/// What an annotation record describes: one key frame or the composite strip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordRole {
    First,
    Q1,
    Middle,
    Q3,
    Last,
    Composite,
}

impl RecordRole {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordRole::Composite => "composite",
            RecordRole::First => "first",
            RecordRole::Q1 => "q1",
            RecordRole::Middle => "middle",
            RecordRole::Q3 => "q3",
            RecordRole::Last => "last",
        }
    }

    pub fn position(self) -> Option<PositionRole> {
        match self {
            RecordRole::First => Some(PositionRole::First),
            RecordRole::Q1 => Some(PositionRole::Q1),
            RecordRole::Middle => Some(PositionRole::Middle),
            RecordRole::Q3 => Some(PositionRole::Q3),
            RecordRole::Last => Some(PositionRole::Last),
            RecordRole::Composite => None,
        }
    }

    pub fn mode(self) -> RequestMode {
        match self {
            RecordRole::Composite => RequestMode::Composite,
            _ => RequestMode::Single,
        }
    }
}

impl From<PositionRole> for RecordRole {
    fn from(r: PositionRole) -> Self {
        match r {
            PositionRole::First => RecordRole::First,
            PositionRole::Q1 => RecordRole::Q1,
            PositionRole::Middle => RecordRole::Middle,
            PositionRole::Q3 => RecordRole::Q3,
            PositionRole::Last => RecordRole::Last,
        }
    }
}

impl fmt::Display for RecordRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// One chat-completions call, fully determined by its inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    /// `data:<mime>;base64,<payload>`
    pub image_payload: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub taxonomy: Taxonomy,
    pub mode: RequestMode,
    /// Encoding parameters of a composite image; empty for single frames.
    pub encoding_tag: String,
}

impl ChatRequest {
    /// Hex SHA-256 over every input that can change the model's answer.
    pub fn prompt_hash(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            self.model_id.as_bytes(),
            self.system_text.as_bytes(),
            self.user_text.as_bytes(),
            self.taxonomy.as_str().as_bytes(),
            self.encoding_tag.as_bytes(),
            &self.max_output_tokens.to_le_bytes(),
            self.image_payload.as_bytes(),
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        hex::encode(h.finalize())
    }

    fn with_clarification(&self, line: &str) -> ChatRequest {
        ChatRequest {
            user_text: format!("{}\n{}", self.user_text, line),
            ..self.clone()
        }
    }
}

pub fn data_uri(image: &[u8]) -> String {
    format!(
        "data:{};base64,{}",
        sniff_mime(image),
        base64::engine::general_purpose::STANDARD.encode(image)
    )
}

/// Builds a temperature-0 request for one image.
///
/// `encoding` is required for composite requests so that the cache key
/// tracks the strip's encoding parameters.
pub fn build_request(
    image: &[u8],
    taxonomy: Taxonomy,
    mode: RequestMode,
    template: &PromptTemplate,
    model_id: &str,
    max_output_tokens: u32,
    encoding: Option<&CompositeEncoding>,
) -> ChatRequest {
    assert!(!image.is_empty(), "image bytes must not be empty");
    ChatRequest {
        model_id: model_id.to_string(),
        system_text: template.system_for(taxonomy),
        user_text: template.user_for(taxonomy, mode),
        image_payload: data_uri(image),
        temperature: 0.0,
        max_output_tokens,
        taxonomy,
        mode,
        encoding_tag: match mode {
            RequestMode::Composite => encoding.map(|e| e.cache_tag()).unwrap_or_default(),
            RequestMode::Single => String::new(),
        },
    }
}

/// Who is asking: lets a simulated backend key its draws, ignored by live ones.
#[derive(Debug, Clone)]
pub struct RequestContext<'a> {
    pub segment_id: &'a str,
    pub role: RecordRole,
    pub ground_truth: Emotion,
    pub draw_index: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Simulated { seed: u64 },
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest, ctx: &RequestContext<'_>) -> Result<Completion, BackendError>;

    fn kind(&self) -> BackendKind;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestCost {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// False when the endpoint did not report usage and the counts are zero.
    pub reported: bool,
}

/// One persisted backend answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub segment_id: String,
    pub role: RecordRole,
    pub taxonomy: Taxonomy,
    pub model_id: String,
    pub prompt_hash: String,
    pub raw_response: String,
    /// Canonical label name, or `None` when the answer could not be parsed.
    pub parsed: Option<String>,
    pub request_cost: RequestCost,
    pub attempts: u32,
    /// True when the answer was copied from an earlier record with the same
    /// prompt hash instead of calling the backend.
    #[serde(default)]
    pub reused: bool,
    pub timestamp: String,
    pub backend: BackendKind,
}

impl AnnotationRecord {
    pub fn label(&self) -> Option<Label> {
        self.parsed
            .as_deref()
            .and_then(|name| Label::from_name(name, self.taxonomy).ok())
    }

    pub fn is_valid(&self) -> bool {
        self.label().is_some()
    }

    /// Copy of this answer filed under another segment/role.
    pub fn reuse_for(&self, segment_id: &str, role: RecordRole) -> AnnotationRecord {
        AnnotationRecord {
            segment_id: segment_id.to_string(),
            role,
            request_cost: RequestCost::default(),
            attempts: 0,
            reused: true,
            timestamp: now_rfc3339(),
            ..self.clone()
        }
    }

    /// The record without its wall-clock timestamp, for run comparisons.
    pub fn content_key(&self) -> String {
        let mut r = self.clone();
        r.timestamp.clear();
        serde_json::to_string(&r).expect("record serializes")
    }
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Sends `request`, parses the answer, and retries once with a clarification
/// line if the answer is not a label. A second unparsable answer yields a
/// record with `parsed = None`.
pub fn annotate(
    request: &ChatRequest,
    ctx: &RequestContext<'_>,
    backend: &dyn Backend,
    throttle: &Throttle,
    template: &PromptTemplate,
) -> Result<AnnotationRecord, AnnotateError> {
    let mut cost = RequestCost::default();
    let mut total_attempts = 0;

    let mut send = |req: &ChatRequest, draw_index: u32| -> Result<String, AnnotateError> {
        let ctx = RequestContext {
            draw_index,
            ..ctx.clone()
        };
        let (res, attempts) = throttle.call(|| backend.complete(req, &ctx));
        total_attempts += attempts;
        let completion = res.map_err(|e| AnnotateError::from_backend(e, attempts))?;
        if let Some(u) = completion.usage {
            cost.input_tokens += u.input_tokens;
            cost.output_tokens += u.output_tokens;
            cost.reported = true;
        }
        Ok(completion.content)
    };

    let mut raw = send(request, ctx.draw_index)?;
    let mut parsed = parse_label(&raw, request.taxonomy);
    if parsed.is_err() {
        let line = PromptTemplate::render(&template.clarification, request.taxonomy);
        let retry = request.with_clarification(&line);
        let second = send(&retry, ctx.draw_index + 1)?;
        parsed = parse_label(&second, request.taxonomy);
        raw = format!("{raw}\n---\n{second}");
    }

    Ok(AnnotationRecord {
        segment_id: ctx.segment_id.to_string(),
        role: ctx.role,
        taxonomy: request.taxonomy,
        model_id: request.model_id.clone(),
        prompt_hash: request.prompt_hash(),
        raw_response: raw,
        parsed: parsed.ok().map(|l| l.name().to_string()),
        request_cost: cost,
        attempts: total_attempts,
        reused: false,
        timestamp: now_rfc3339(),
        backend: backend.kind(),
    })
}
