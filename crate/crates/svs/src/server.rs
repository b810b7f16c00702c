//! HTTP session service.
//!
//! | method | path                          | body / response                        |
//! |--------|-------------------------------|----------------------------------------|
//! | POST   | `/sessions`                   | `{score, seed?}` → `{id, revision, …}` |
//! | GET    | `/sessions/{id}`              | summary                                |
//! | GET    | `/sessions/{id}/style`        | `{revision, scores}`                   |
//! | PUT    | `/sessions/{id}/style`        | `{revision, scores}`                   |
//! | GET    | `/sessions/{id}/f0`           | `{revision, sample_rate, hop, f0_hz}`  |
//! | PUT    | `/sessions/{id}/f0`           | `{revision, f0_hz}`                    |
//! | GET    | `/sessions/{id}/mel`          | `SVSMEL1` bytes                        |
//! | POST   | `/sessions/{id}/resynthesize` | `{revision?, pitch_path?}`             |
//! | GET    | `/sessions/{id}/audio.wav`    | WAV bytes                              |
//!
//! Every session response carries `X-Session-Revision`. Mutations must name the current
//! revision; a stale one is answered with 409. Invariant violations give 422 with
//! `{"error": {"message", "field"}}`, where `field` is a path into the request body.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use svs_core::dpe::{F0Contour, PitchPath};
use svs_core::dsp::vocoder::vocode_seeded;
use svs_core::lst::{Side, StyleScore, StyleScoreDoc, StyleScores, ROW_SUM_TOL};
use svs_core::model::{AcousticModel, Conditioning};
use svs_core::score::{MusicScore, PhonemeInventory, HOP, SAMPLE_RATE};
use uuid::Uuid;

use crate::diag::Failure;
use crate::session::{now, Session, SessionHandle, Store};

pub const REVISION_HEADER: &str = "x-session-revision";

pub struct AppState {
    pub model: Arc<AcousticModel>,
    pub store: Store,
    pub vocoder_iterations: usize,
}

impl AppState {
    /// Shared state; with a data directory, sessions persist there and are restored.
    pub fn open(model: AcousticModel, data_dir: Option<PathBuf>, vocoder_iterations: usize) -> Result<Arc<Self>, Failure> {
        let store = match data_dir {
            Some(d) => Store::open(&d)?,
            None => Store::in_memory(),
        };
        Ok(Arc::new(Self { model: Arc::new(model), store, vocoder_iterations }))
    }
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/style", get(get_style).put(put_style))
        .route("/sessions/{id}/f0", get(get_f0).put(put_f0))
        .route("/sessions/{id}/mel", get(get_mel))
        .route("/sessions/{id}/resynthesize", post(resynthesize))
        .route("/sessions/{id}/audio.wav", get(audio))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Shared) -> Result<(), Failure> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Failure::validation(format!("bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Failure::internal(e.to_string()))?;
    println!("{}", json!({ "listening": local.to_string(), "sessions": state.store.len() }));
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Failure::internal(format!("server: {e}")))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
    revision: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), field: None, revision: None }
    }

    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: Some(field.into()), ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, message) }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session `{id}`"))
    }

    fn at(mut self, revision: u64) -> Self {
        self.revision = Some(revision);
        self
    }
}

impl From<Failure> for ApiError {
    fn from(f: Failure) -> Self {
        match f.kind {
            crate::diag::Kind::Validation => Self::new(StatusCode::UNPROCESSABLE_ENTITY, f.message),
            crate::diag::Kind::Internal => Self::new(StatusCode::INTERNAL_SERVER_ERROR, f.message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "message": self.message, "field": self.field } });
        let mut r = (self.status, Json(body)).into_response();
        if let Some(rev) = self.revision {
            r.headers_mut().insert(REVISION_HEADER, HeaderValue::from(rev));
        }
        r
    }
}

type ApiResult = Result<Response, ApiError>;

fn with_revision(revision: u64, r: impl IntoResponse) -> Response {
    let mut r = r.into_response();
    r.headers_mut().insert(REVISION_HEADER, HeaderValue::from(revision));
    r
}

/// Deserialises a JSON body, reporting the failing path as the field.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        ApiError::invalid(field, e.into_inner().to_string())
    })
}

fn lookup(state: &AppState, id: &str) -> Result<SessionHandle, ApiError> {
    let uuid = Uuid::parse_str(id).map_err(|_| ApiError::not_found(id))?;
    state.store.get(&uuid).ok_or_else(|| ApiError::not_found(id))
}

fn check_revision(session: &Session, given: u64) -> Result<(), ApiError> {
    if given != session.revision {
        return Err(ApiError {
            field: Some("revision".into()),
            ..ApiError::new(
                StatusCode::CONFLICT,
                format!("revision {given} is stale; the session is at revision {}", session.revision),
            )
        }
        .at(session.revision));
    }
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Failure> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker: {e}")))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    score: serde_json::Value,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct SessionSummary {
    id: Uuid,
    revision: u64,
    frames: usize,
    n_mels: usize,
    n_tokens: Option<usize>,
    pitch_path: PitchPath,
    seed: u64,
    created: u64,
    updated: u64,
}

fn summarize(s: &Session) -> SessionSummary {
    SessionSummary {
        id: s.id,
        revision: s.revision,
        frames: s.frames(),
        n_mels: s.mel.n_mels(),
        n_tokens: s.style.as_ref().map(|x| x.text.n_tokens()),
        pitch_path: s.pitch_path,
        seed: s.seed,
        created: s.created,
        updated: s.updated,
    }
}

async fn create(State(state): State<Shared>, body: Bytes) -> ApiResult {
    let req: CreateRequest = parse_body(&body)?;
    let score = MusicScore::parse(&req.score.to_string(), &PhonemeInventory::default())
        .map_err(|e| ApiError::invalid("score", e.to_string()))?;
    if score.frames() == 0 {
        return Err(ApiError::invalid("score.notes", "score has no frames"));
    }
    let model = state.model.clone();
    let iters = state.vocoder_iterations;
    let session = blocking(move || Session::create(&model, score, req.seed, iters)).await?;
    let summary = summarize(&session);
    state.store.insert(session)?;
    Ok(with_revision(summary.revision, (StatusCode::CREATED, Json(summary))))
}

async fn summary(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = lookup(&state, &id)?;
    let s = h.lock().await;
    Ok(with_revision(s.revision, Json(summarize(&s))))
}

#[derive(Serialize)]
struct StyleBody {
    revision: u64,
    scores: Vec<StyleScoreDoc>,
}

fn docs(s: &StyleScores) -> Vec<StyleScoreDoc> {
    std::iter::once(&s.text).chain(s.pitch.as_ref()).map(StyleScore::to_doc).collect()
}

fn no_style(s: &Session) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "the model has no style tokens").at(s.revision)
}

async fn get_style(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = lookup(&state, &id)?;
    let s = h.lock().await;
    let style = s.style.as_ref().ok_or_else(|| no_style(&s))?;
    Ok(with_revision(s.revision, Json(StyleBody { revision: s.revision, scores: docs(style)})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StyleUpdate {
    revision: u64,
    scores: Vec<StyleScoreDoc>,
}

/// Checks submitted style documents against the session shape and the score invariants.
fn validate_style(docs: Vec<StyleScoreDoc>, current: &StyleScores, frames: usize) -> Result<StyleScores, ApiError> {
    let n = current.text.n_tokens();
    let mut text = None;
    let mut pitch = None;
    for (i, d) in docs.into_iter().enumerate() {
        let at = |f: &str| format!("scores[{i}].{f}");
        let slot = match d.side {
            Side::Text => &mut text,
            Side::Pitch if current.pitch.is_some() => &mut pitch,
            Side::Pitch => return Err(ApiError::invalid(at("side"), "the model has no pitch-side style tokens")),
        };
        if slot.is_some() {
            return Err(ApiError::invalid(at("side"), "duplicate side"));
        }
        if d.frames != frames {
            return Err(ApiError::invalid(at("frames"), format!("{} frames, session has {frames}", d.frames)));
        }
        if d.n_tokens != n {
            return Err(ApiError::invalid(at("n_tokens"), format!("{} tokens, model has {n}", d.n_tokens)));
        }
        if d.scores.len() != frames {
            return Err(ApiError::invalid(at("scores"), format!("{} rows, session has {frames}", d.scores.len())));
        }
        for (f, row) in d.scores.iter().enumerate() {
            if row.len() != n {
                return Err(ApiError::invalid(at(&format!("scores[{f}]")), format!("{} entries, expected {n}", row.len())));
            }
            if let Some(k) = row.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(ApiError::invalid(
                    at(&format!("scores[{f}][{k}]")),
                    format!("{} must be finite and non-negative", row[k]),
                ));
            }
            if !d.edited {
                let sum: f64 = row.iter().map(|&v| v as f64).sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(ApiError::invalid(
                        at(&format!("scores[{f}]")),
                        format!("sums to {sum}; rows of unedited scores must sum to 1 (set `edited` to lift this)"),
                    ));
                }
            }
        }
        *slot = Some(StyleScore::from_doc(d).map_err(|e| ApiError::invalid(format!("scores[{i}]"), e.to_string()))?);
    }
    let text = text.ok_or_else(|| ApiError::invalid("scores", "text-side scores are required"))?;
    if current.pitch.is_some() && pitch.is_none() {
        return Err(ApiError::invalid("scores", "pitch-side scores are required"));
    }
    Ok(StyleScores { text, pitch })
}

async fn put_style(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let h = lookup(&state, &id)?;
    let mut s = h.lock().await;
    let req: StyleUpdate = parse_body(&body).map_err(|e| e.at(s.revision))?;
    check_revision(&s, req.revision)?;
    let current = s.style.as_ref().ok_or_else(|| no_style(&s))?;
    let next = validate_style(req.scores, current, s.frames()).map_err(|e| e.at(s.revision))?;
    let mut updated = s.clone();
    updated.style = Some(next);
    updated.revision += 1;
    updated.updated = now();
    state.store.commit(&updated)?;
    *s = updated;
    let style = s.style.as_ref().expect("style was just set");
    Ok(with_revision(s.revision, Json(StyleBody { revision: s.revision, scores: docs(style)})))
}

#[derive(Serialize)]
struct F0Body<'a> {
    revision: u64,
    sample_rate: u32,
    hop: usize,
    f0_hz: &'a [f64],
}

async fn get_f0(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = lookup(&state, &id)?;
    let s = h.lock().await;
    let body = F0Body { revision: s.revision, sample_rate: SAMPLE_RATE, hop: HOP, f0_hz: &s.f0.values };
    Ok(with_revision(s.revision, Json(body)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct F0Update {
    revision: u64,
    f0_hz: Vec<f64>,
    sample_rate: Option<u32>,
    hop: Option<usize>,
}

fn validate_f0(req: F0Update, frames: usize) -> Result<F0Contour, ApiError> {
    if req.sample_rate.is_some_and(|r| r != SAMPLE_RATE) {
        return Err(ApiError::invalid("sample_rate", format!("must be {SAMPLE_RATE}")));
    }
    if req.hop.is_some_and(|h| h != HOP) {
        return Err(ApiError::invalid("hop", format!("must be {HOP}")));
    }
    if req.f0_hz.len() != frames {
        return Err(ApiError::invalid("f0_hz", format!("{} frames, session has {frames}", req.f0_hz.len())));
    }
    let c = F0Contour { values: req.f0_hz };
    if let Some(i) = c.first_invalid() {
        return Err(ApiError::invalid(
            format!("f0_hz[{i}]"),
            c.validate().expect_err("first_invalid found a violation").to_string(),
        ));
    }
    Ok(c)
}

async fn put_f0(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let h = lookup(&state, &id)?;
    let mut s = h.lock().await;
    let req: F0Update = parse_body(&body).map_err(|e| e.at(s.revision))?;
    check_revision(&s, req.revision)?;
    let c = validate_f0(req, s.frames()).map_err(|e| e.at(s.revision))?;
    let mut updated = s.clone();
    updated.f0 = c;
    updated.revision += 1;
    updated.updated = now();
    state.store.commit(&updated)?;
    *s = updated;
    let body = F0Body { revision: s.revision, sample_rate: SAMPLE_RATE, hop: HOP, f0_hz: &s.f0.values };
    Ok(with_revision(s.revision, Json(body)))
}

async fn get_mel(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = lookup(&state, &id)?;
    let s = h.lock().await;
    let headers = [(header::CONTENT_TYPE, "application/octet-stream")];
    Ok(with_revision(s.revision, (headers, s.mel.to_bytes())))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResynthRequest {
    revision: Option<u64>,
    pitch_path: Option<PitchPath>,
}

#[derive(Serialize)]
struct ResynthBody {
    revision: u64,
    pitch_path: PitchPath,
    frames: usize,
    n_mels: usize,
    /// `[frames][n_mels]` log-mel values.
    mel: Vec<Vec<f32>>,
    style: Option<Vec<StyleScoreDoc>>,
}

/// Regenerates from the session's current curves. Without an explicit path the f0 path
/// runs iff the contour was edited. Holding the session lock queues concurrent requests.
async fn resynthesize(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let h = lookup(&state, &id)?;
    let mut s = h.lock().await;
    let req: ResynthRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ResynthRequest::default()
    } else {
        parse_body(&body).map_err(|e| e.at(s.revision))?
    };
    if let Some(r) = req.revision {
        check_revision(&s, r)?;
    }
    let path = req.pitch_path.unwrap_or_else(|| s.default_path());
    let model = state.model.clone();
    let (inputs, f0, style, seed) = (s.inputs.clone(), s.f0.clone(), s.style.clone(), s.seed);
    let r = blocking(move || {
        let cond = Conditioning { style: style.as_ref(), tokens: None };
        let f0 = (path == PitchPath::F0).then_some(&f0);
        Ok(model.synthesize(&inputs, path, f0, &cond, seed)?)
    })
    .await
    .map_err(|e| e.at(s.revision))?;
    let mut updated = s.clone();
    updated.revision += 1;
    updated.updated = now();
    updated.mel = r.mel;
    updated.mel_revision = updated.revision;
    updated.pitch_path = path;
    updated.wav = None;
    state.store.commit(&updated)?;
    *s = updated;
    let body = ResynthBody {
        revision: s.revision,
        pitch_path: path,
        frames: s.mel.n_frames(),
        n_mels: s.mel.n_mels(),
        mel: (0..s.mel.n_frames()).map(|l| s.mel.frame(l).to_vec()).collect(),
        style: r.style_scores.as_ref().map(docs),
    };
    Ok(with_revision(s.revision, Json(body)))
}

async fn audio(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = lookup(&state, &id)?;
    let mut s = h.lock().await;
    let bytes = match &s.wav {
        Some((rev, b)) if *rev == s.mel_revision => b.clone(),
        _ => {
            let (mel, iters, seed) = (s.mel.clone(), state.vocoder_iterations, s.seed);
            let b = blocking(move || Ok(vocode_seeded(&mel, iters, seed)?.to_wav_bytes()?))
                .await
                .map_err(|e| e.at(s.revision))?;
            let b = Arc::new(b);
            s.wav = Some((s.mel_revision, b.clone()));
            state.store.store_wav(&s)?;
            b
        }
    };
    let headers = [(header::CONTENT_TYPE, "audio/wav")];
    Ok(with_revision(s.revision, (headers, bytes.as_ref().clone())))
}
