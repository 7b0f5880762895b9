//! JSON request dispatcher for sessions and stateless attribution. It knows
//! nothing about sockets: a transport hands it a [`Request`] and writes back
//! the [`Response`].

mod scenario;

pub use scenario::{anna_scenario, ANNA_DOCUMENT, SCENARIO_STEPS};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError};

use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::backward::{BackwardModel, DEFAULT_THRESHOLD};
use crate::inference::{InferenceError, Mode};
use crate::model::{ModelError, SummarizerModel};
use crate::session::{ForwardRequest, Session, SessionError, Template};
use crate::textproc::{tokenize, Document};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn get(path: &str) -> Self {
        Request {
            method: "GET".into(),
            path: path.into(),
            content_type: None,
            body: Vec::new(),
        }
    }

    pub fn post_json(path: &str, body: &Value) -> Self {
        Request {
            method: "POST".into(),
            path: path.into(),
            content_type: Some("application/json".into()),
            body: body.to_string().into_bytes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub body: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCode {
    InvalidRequest,
    NotFound,
    NoBackwardResult,
    ModelError,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidRequest => "INVALID_REQUEST",
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::NoBackwardResult => "NO_BACKWARD_RESULT",
            ErrorCode::ModelError => "MODEL_ERROR",
        }
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::InvalidRequest => 400,
            ErrorCode::NotFound => 404,
            ErrorCode::NoBackwardResult => 409,
            ErrorCode::ModelError => 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidRequest, message)
    }

    fn into_response(self) -> Response {
        let body = json!({ "code": self.code.as_str(), "message": self.message });
        Response {
            status: self.code.http_status(),
            body: body.to_string(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let code = match &e {
            SessionError::NoBackwardResult => ErrorCode::NoBackwardResult,
            SessionError::InvalidIndex { .. } | SessionError::Invalid(_) => {
                ErrorCode::InvalidRequest
            }
            SessionError::Inference(InferenceError::InvalidRequest(_)) => ErrorCode::InvalidRequest,
            SessionError::Inference(_) | SessionError::Model(_) => ErrorCode::ModelError,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        ApiError::new(ErrorCode::ModelError, e.to_string())
    }
}

/// Hex digest prefix identifying a forward/backward checkpoint pair.
pub fn model_version(forward_ckpt: &[u8], backward_ckpt: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(forward_ckpt);
    hasher.update(backward_ckpt);
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

type SessionSlot = Arc<Mutex<Session>>;

/// Shared, thread-safe request handler. Each session is guarded by its own
/// lock, so writers to one session queue up while other sessions proceed.
pub struct Service {
    model: Arc<SummarizerModel>,
    backward: Arc<BackwardModel>,
    model_version: String,
    sessions: Mutex<BTreeMap<String, SessionSlot>>,
    next_id: AtomicU64,
    persist: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    document: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionBody {
    sentences: Option<Vec<usize>>,
    template: Option<String>,
    words: Option<Vec<usize>>,
    aggregate: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateBody {
    mode: String,
    n_sentences: Option<usize>,
    prefix: Option<String>,
    beam_width: Option<usize>,
    threshold: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryBody {
    action: String,
    text: Option<String>,
    threshold: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeBody {
    document: String,
    summary: String,
    threshold: Option<f64>,
}

fn check_threshold(t: Option<f64>) -> Result<Option<f64>, ApiError> {
    match t {
        Some(v) if !(0.0..=1.0).contains(&v) => Err(ApiError::invalid(format!(
            "threshold must lie in [0, 1], got {v}"
        ))),
        other => Ok(other),
    }
}

impl Service {
    pub fn new(model: SummarizerModel, backward: BackwardModel, model_version: String) -> Self {
        Service {
            model: Arc::new(model),
            backward: Arc::new(backward),
            model_version,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            persist: None,
        }
    }

    /// Loads both models from checkpoint bytes and derives the version tag from them.
    pub fn from_checkpoints(forward_ckpt: &[u8], backward_ckpt: &[u8]) -> Result<Self, ModelError> {
        let model = SummarizerModel::from_checkpoint(forward_ckpt)?;
        let backward = BackwardModel::from_checkpoint(backward_ckpt)?;
        Ok(Self::new(
            model,
            backward,
            model_version(forward_ckpt, backward_ckpt),
        ))
    }

    /// Writes `DIR/{id}.json` after every session mutation.
    pub fn with_persist(mut self, dir: PathBuf) -> Self {
        self.persist = Some(dir);
        self
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn handle(&self, req: &Request) -> Response {
        match self.route(req) {
            Ok((status, body)) => Response { status, body },
            Err(e) => e.into_response(),
        }
    }

    fn route(&self, req: &Request) -> Result<(u16, String), ApiError> {
        let path = req.path.split('?').next().unwrap_or("");
        let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
        match (req.method.as_str(), parts.as_slice()) {
            ("GET", ["healthz"]) => Ok((
                200,
                json!({ "status": "ok", "model_version": self.model_version }).to_string(),
            )),
            ("POST", ["sessions"]) => {
                let body: CreateBody = parse_body(req)?;
                let id = format!("session-{}", self.next_id.fetch_add(1, Ordering::SeqCst));
                let session = Session::new(id.clone(), &body.document)?;
                let out = session.to_json();
                self.persist(&session)?;
                self.lock_sessions()
                    .insert(id, Arc::new(Mutex::new(session)));
                Ok((201, out))
            }
            ("GET", ["sessions", id]) => {
                let slot = self.slot(id)?;
                let session = slot.lock().unwrap_or_else(PoisonError::into_inner);
                Ok((200, session.to_json()))
            }
            ("POST", ["sessions", id, "selection"]) => {
                let body: SelectionBody = parse_body(req)?;
                self.mutate(id, |s| apply_selection(s, body))
            }
            ("POST", ["sessions", id, "generate"]) => {
                let body: GenerateBody = parse_body(req)?;
                let threshold = check_threshold(body.threshold)?;
                let request = forward_request(&body)?;
                self.mutate(id, |s| {
                    if let Some(t) = threshold {
                        s.threshold = t;
                    }
                    Ok(s.run_forward(&self.model, &self.backward, &request)?)
                })
            }
            ("POST", ["sessions", id, "summary", index]) => {
                let index: usize = index.parse().map_err(|_| {
                    ApiError::invalid(format!("summary index '{index}' is not a number"))
                })?;
                let body: SummaryBody = parse_body(req)?;
                let threshold = check_threshold(body.threshold)?;
                self.mutate(id, |s| {
                    if let Some(t) = threshold {
                        s.threshold = t;
                    }
                    match (body.action.as_str(), &body.text) {
                        ("edit", Some(text)) => Ok(s.edit_sentence(index, text, &self.backward)?),
                        ("edit", None) => Err(ApiError::invalid("edit needs a text field")),
                        ("delete", _) => Ok(s.delete_sentence(index, &self.backward)?),
                        (other, _) => Err(ApiError::invalid(format!(
                            "unknown action '{other}', expected edit or delete"
                        ))),
                    }
                })
            }
            ("POST", ["attribute"]) => {
                let body: AttributeBody = parse_body(req)?;
                let threshold = check_threshold(body.threshold)?.unwrap_or(DEFAULT_THRESHOLD);
                let document = Document::from_text(&body.document);
                if document.is_empty() {
                    return Err(ApiError::invalid("document has no tokens"));
                }
                let summary = tokenize(&body.summary);
                let report = self.backward.attribute(&document, &summary, threshold)?;
                Ok((
                    200,
                    serde_json::to_string(&report).expect("report serializes"),
                ))
            }
            _ => Err(ApiError::new(
                ErrorCode::NotFound,
                format!("no route for {} {}", req.method, path),
            )),
        }
    }

    fn lock_sessions(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, SessionSlot>> {
        self.sessions.lock().unwrap_or_else(PoisonError::into_inner)
    }

    fn slot(&self, id: &str) -> Result<SessionSlot, ApiError> {
        self.lock_sessions()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("no session '{id}'")))
    }

    /// Applies `f` to a copy of the session and commits it only on success,
    /// so a failed request leaves the session untouched.
    fn mutate(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<(), ApiError>,
    ) -> Result<(u16, String), ApiError> {
        let slot = self.slot(id)?;
        let mut guard = slot.lock().unwrap_or_else(PoisonError::into_inner);
        let mut draft = guard.clone();
        f(&mut draft)?;
        self.persist(&draft)?;
        *guard = draft;
        Ok((200, guard.to_json()))
    }

    fn persist(&self, session: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.persist else {
            return Ok(());
        };
        let path = dir.join(format!("{}.json", session.id));
        std::fs::write(&path, session.to_json()).map_err(|e| {
            ApiError::new(
                ErrorCode::ModelError,
                format!("cannot persist session to {}: {e}", path.display()),
            )
        })
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(req: &Request) -> Result<T, ApiError> {
    let is_json = req
        .content_type
        .as_deref()
        .and_then(|ct| ct.split(';').next())
        .is_some_and(|ct| ct.trim().eq_ignore_ascii_case("application/json"));
    if !is_json {
        return Err(ApiError::invalid("Content-Type must be application/json"));
    }
    serde_json::from_slice(&req.body)
        .map_err(|e| ApiError::invalid(format!("malformed JSON body: {e}")))
}

fn apply_selection(s: &mut Session, body: SelectionBody) -> Result<(), ApiError> {
    if let Some(aggregate) = body.aggregate {
        s.set_aggregate(aggregate);
    }
    match (body.sentences, body.template, body.words) {
        (Some(sentences), None, None) => Ok(s.set_selection(&sentences)?),
        (None, Some(template), None) => {
            let template = match template.as_str() {
                "all" => Template::All,
                "none" => Template::None,
                "match" => Template::Match,
                other => {
                    return Err(ApiError::invalid(format!(
                        "unknown template '{other}', expected all, none or match"
                    )))
                }
            };
            Ok(s.select_template(template)?)
        }
        (None, None, Some(words)) => Ok(s.set_word_selection(&words)?),
        (None, None, None) if body.aggregate.is_some() => Ok(()),
        _ => Err(ApiError::invalid(
            "give exactly one of sentences, template or words",
        )),
    }
}

fn forward_request(body: &GenerateBody) -> Result<ForwardRequest, ApiError> {
    let mode = match body.mode.as_str() {
        "init_with" => Mode::InitWith,
        "add_sentence" => Mode::AddSentence,
        "complete" => Mode::Complete,
        other => {
            return Err(ApiError::invalid(format!(
                "unknown mode '{other}', expected init_with, add_sentence or complete"
            )))
        }
    };
    if mode == Mode::Complete && body.prefix.is_none() {
        return Err(ApiError::invalid("complete needs a prefix"));
    }
    if mode != Mode::Complete && body.prefix.is_some() {
        return Err(ApiError::invalid("prefix is only valid for complete"));
    }
    if mode != Mode::InitWith && body.n_sentences.is_some() {
        return Err(ApiError::invalid("n_sentences is only valid for init_with"));
    }
    Ok(ForwardRequest {
        mode,
        n_sentences: body
            .n_sentences
            .unwrap_or(if mode == Mode::InitWith { 3 } else { 1 }),
        prefix: body.prefix.clone(),
        beam_width: body.beam_width.unwrap_or(1),
    })
}
