//! HTTP service that presents stitched images to critics and records their
//! 0–100 scores.
//!
//! State lives in an append-only newline-delimited JSON log. Every accepted
//! write is appended and synced before it is acknowledged; on start the log
//! is replayed, ignoring a torn final line.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Body;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sifid_core::subjective::{SCORE_MAX, SCORE_MIN};
use sifid_core::Rng;

use crate::bundle::{stitched_path, LABELS};
use crate::io;
use crate::tables::{ratings_csv, Rating};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("critic '{critic_id}' already has a session for bundle '{bundle_id}'")]
    DuplicateSession { critic_id: String, bundle_id: String },
    #[error("unknown bundle '{0}'")]
    UnknownBundle(String),
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("unknown image '{0}'")]
    UnknownImage(String),
    #[error("expected a score for '{expected}', got '{got}'")]
    OutOfOrderSubmission { expected: String, got: String },
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("session is complete")]
    SessionComplete,
    #[error("no scores recorded for bundle '{0}'")]
    NothingToExport(String),
    #[error("image id '{0}' registered twice")]
    DuplicateImage(String),
    #[error("corrupt log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("storage failure: {0}")]
    Storage(String),
}

impl ServiceError {
    pub fn class(&self) -> &'static str {
        match self {
            ServiceError::DuplicateSession { .. } => "DuplicateSession",
            ServiceError::UnknownBundle(_) => "UnknownBundle",
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::UnknownImage(_) => "UnknownImage",
            ServiceError::OutOfOrderSubmission { .. } => "OutOfOrderSubmission",
            ServiceError::ScoreOutOfRange(_) => "ScoreOutOfRange",
            ServiceError::SessionComplete => "SessionComplete",
            ServiceError::NothingToExport(_) => "NothingToExport",
            ServiceError::DuplicateImage(_) => "DuplicateImage",
            ServiceError::CorruptLog { .. } => "CorruptLog",
            ServiceError::Storage(_) => "Storage",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownBundle(_) | ServiceError::UnknownSession(_) | ServiceError::UnknownImage(_) | ServiceError::NothingToExport(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::DuplicateSession { .. } | ServiceError::OutOfOrderSubmission { .. } | ServiceError::SessionComplete => StatusCode::CONFLICT,
            ServiceError::ScoreOutOfRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::DuplicateImage(_) | ServiceError::CorruptLog { .. } | ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_class: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error_class: self.class().to_string(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

/// One line of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Session {
        session_id: String,
        critic_id: String,
        bundle_id: String,
        seed: u64,
    },
    Score {
        session_id: String,
        image_id: String,
        score: f64,
        timestamp_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingSession {
    pub session_id: String,
    pub critic_id: String,
    pub bundle_id: String,
    pub seed: u64,
    pub image_order: Vec<String>,
    pub cursor: usize,
    pub scores: Vec<(String, f64, u64)>,
}

struct BundleImages {
    image_ids: Vec<String>,
}

struct Inner {
    bundles: BTreeMap<String, BundleImages>,
    sessions: BTreeMap<String, RatingSession>,
    log: Option<File>,
}

/// Sessions, scores and image bytes behind one lock; the lock also
/// serialises log appends.
pub struct RatingStore {
    inner: Mutex<Inner>,
    images: HashMap<String, Arc<Vec<u8>>>,
    log_path: Option<PathBuf>,
}

/// Presentation seed for a critic on a bundle.
pub fn session_seed(critic_id: &str, bundle_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(critic_id.as_bytes());
    h.update([0u8]);
    h.update(bundle_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn session_id(critic_id: &str, bundle_id: &str) -> String {
    format!("s{:016x}", session_seed(critic_id, bundle_id))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Bundle contents handed to the store: image ids with their PNG bytes.
pub struct BundleSpec {
    pub bundle_id: String,
    pub images: Vec<(String, Vec<u8>)>,
}

/// Reads the stitched images of a bundle directory, in label order.
pub fn bundle_from_dir(bundle_id: &str, dir: &Path) -> Result<BundleSpec, ServiceError> {
    let storage = |e: &dyn std::fmt::Display| ServiceError::Storage(e.to_string());
    let labels = io::read_file(&dir.join(LABELS)).map_err(|e| storage(&e))?;
    let mut r = csv::Reader::from_reader(labels.as_slice());
    let mut images = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| storage(&e))?;
        let id = rec.get(0).unwrap_or_default().trim().to_string();
        let bytes = io::read_file(&stitched_path(dir, &id)).map_err(|e| storage(&e))?;
        images.push((id, bytes));
    }
    Ok(BundleSpec {
        bundle_id: bundle_id.to_string(),
        images,
    })
}

impl RatingStore {
    /// A store without persistence, for tests and dry runs.
    pub fn in_memory(bundles: Vec<BundleSpec>) -> Result<Self, ServiceError> {
        Self::build(bundles, None)
    }

    /// Opens (or creates) the log at `log_path` and replays it.
    pub fn open(bundles: Vec<BundleSpec>, log_path: &Path) -> Result<Self, ServiceError> {
        Self::build(bundles, Some(log_path))
    }

    fn build(bundles: Vec<BundleSpec>, log_path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut images = HashMap::new();
        let mut registry = BTreeMap::new();
        for b in bundles {
            let mut ids = Vec::with_capacity(b.images.len());
            for (id, bytes) in b.images {
                if images.insert(id.clone(), Arc::new(bytes)).is_some() {
                    return Err(ServiceError::DuplicateImage(id));
                }
                ids.push(id);
            }
            registry.insert(b.bundle_id, BundleImages { image_ids: ids });
        }
        let store = RatingStore {
            inner: Mutex::new(Inner {
                bundles: registry,
                sessions: BTreeMap::new(),
                log: None,
            }),
            images,
            log_path: log_path.map(Path::to_path_buf),
        };
        if let Some(path) = log_path {
            store.replay(path)?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| ServiceError::Storage(e.to_string()))?;
            store.lock().log = Some(file);
        }
        Ok(store)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    fn replay(&self, path: &Path) -> Result<(), ServiceError> {
        let text = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(e) => return Err(ServiceError::Storage(e.to_string())),
        };
        let complete = text.last() == Some(&b'\n');
        let text = String::from_utf8_lossy(&text);
        let lines: Vec<&str> = text.split_terminator('\n').collect();
        let mut valid_len = 0usize;
        for (i, line) in lines.iter().enumerate() {
            // A line without its newline was never acknowledged.
            if i + 1 == lines.len() && !complete {
                break;
            }
            let event: LogEvent = serde_json::from_str(line).map_err(|e| ServiceError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })?;
            let mut inner = self.lock();
            apply(&mut inner, event).map_err(|e| ServiceError::CorruptLog {
                line: i + 1,
                message: e.to_string(),
            })?;
            valid_len += line.len() + 1;
        }
        if !complete && !lines.is_empty() {
            // Drop the torn tail so later appends start on a fresh line.
            let f = OpenOptions::new().write(true).open(path).map_err(|e| ServiceError::Storage(e.to_string()))?;
            f.set_len(valid_len as u64).map_err(|e| ServiceError::Storage(e.to_string()))?;
            f.sync_all().map_err(|e| ServiceError::Storage(e.to_string()))?;
        }
        Ok(())
    }

    fn commit(inner: &mut Inner, event: LogEvent) -> Result<(), ServiceError> {
        if let Some(f) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(&event).expect("event serialises");
            line.push(b'\n');
            f.write_all(&line).map_err(|e| ServiceError::Storage(e.to_string()))?;
            f.sync_data().map_err(|e| ServiceError::Storage(e.to_string()))?;
        }
        apply(inner, event)
    }

    pub fn create_session(&self, critic_id: &str, bundle_id: &str) -> Result<RatingSession, ServiceError> {
        let mut inner = self.lock();
        if !inner.bundles.contains_key(bundle_id) {
            return Err(ServiceError::UnknownBundle(bundle_id.to_string()));
        }
        let id = session_id(critic_id, bundle_id);
        if inner.sessions.contains_key(&id) {
            return Err(ServiceError::DuplicateSession {
                critic_id: critic_id.to_string(),
                bundle_id: bundle_id.to_string(),
            });
        }
        Self::commit(
            &mut inner,
            LogEvent::Session {
                session_id: id.clone(),
                critic_id: critic_id.to_string(),
                bundle_id: bundle_id.to_string(),
                seed: session_seed(critic_id, bundle_id),
            },
        )?;
        Ok(inner.sessions[&id].clone())
    }

    pub fn session(&self, session_id: &str) -> Result<RatingSession, ServiceError> {
        self.lock()
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))
    }

    /// Image id at the session cursor.
    pub fn next_item(&self, session_id: &str) -> Result<(String, usize, usize), ServiceError> {
        let s = self.session(session_id)?;
        let id = s.image_order.get(s.cursor).cloned().ok_or(ServiceError::SessionComplete)?;
        Ok((id, s.cursor, s.image_order.len()))
    }

    pub fn image_bytes(&self, image_id: &str) -> Result<Arc<Vec<u8>>, ServiceError> {
        self.images.get(image_id).cloned().ok_or_else(|| ServiceError::UnknownImage(image_id.to_string()))
    }

    /// Records a score for the cursor image; returns how many remain.
    pub fn submit_score(&self, session_id: &str, image_id: &str, score: f64) -> Result<usize, ServiceError> {
        let mut inner = self.lock();
        let s = inner
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_string()))?;
        let expected = s.image_order.get(s.cursor).cloned().ok_or(ServiceError::SessionComplete)?;
        if !(SCORE_MIN..=SCORE_MAX).contains(&score) {
            return Err(ServiceError::ScoreOutOfRange(score));
        }
        if expected != image_id {
            return Err(ServiceError::OutOfOrderSubmission {
                expected,
                got: image_id.to_string(),
            });
        }
        Self::commit(
            &mut inner,
            LogEvent::Score {
                session_id: session_id.to_string(),
                image_id: image_id.to_string(),
                score,
                timestamp_ms: now_ms(),
            },
        )?;
        let s = &inner.sessions[session_id];
        Ok(s.image_order.len() - s.cursor)
    }

    /// Ratings CSV for a bundle: sessions in id order, scores in the order
    /// they were given.
    pub fn export_ratings(&self, bundle_id: &str) -> Result<Vec<u8>, ServiceError> {
        let inner = self.lock();
        if !inner.bundles.contains_key(bundle_id) {
            return Err(ServiceError::UnknownBundle(bundle_id.to_string()));
        }
        let rows: Vec<Rating> = inner
            .sessions
            .values()
            .filter(|s| s.bundle_id == bundle_id)
            .flat_map(|s| {
                s.scores.iter().map(|(image_id, score, _)| Rating {
                    critic_id: s.critic_id.clone(),
                    image_id: image_id.clone(),
                    score: *score,
                })
            })
            .collect();
        if rows.is_empty() {
            return Err(ServiceError::NothingToExport(bundle_id.to_string()));
        }
        Ok(ratings_csv(&rows))
    }
}

fn apply(inner: &mut Inner, event: LogEvent) -> Result<(), ServiceError> {
    match event {
        LogEvent::Session {
            session_id,
            critic_id,
            bundle_id,
            seed,
        } => {
            let bundle = inner.bundles.get(&bundle_id).ok_or_else(|| ServiceError::UnknownBundle(bundle_id.clone()))?;
            if inner.sessions.contains_key(&session_id) {
                return Err(ServiceError::DuplicateSession { critic_id, bundle_id });
            }
            let mut order = bundle.image_ids.clone();
            Rng::new(seed).shuffle(&mut order);
            inner.sessions.insert(
                session_id.clone(),
                RatingSession {
                    session_id,
                    critic_id,
                    bundle_id,
                    seed,
                    image_order: order,
                    cursor: 0,
                    scores: Vec::new(),
                },
            );
        }
        LogEvent::Score {
            session_id,
            image_id,
            score,
            timestamp_ms,
        } => {
            let s = inner.sessions.get_mut(&session_id).ok_or_else(|| ServiceError::UnknownSession(session_id.clone()))?;
            let expected = s.image_order.get(s.cursor).cloned().ok_or(ServiceError::SessionComplete)?;
            if expected != image_id {
                return Err(ServiceError::OutOfOrderSubmission { expected, got: image_id });
            }
            s.scores.push((image_id, score, timestamp_ms));
            s.cursor += 1;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub critic_id: String,
    pub bundle_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub critic_id: String,
    pub bundle_id: String,
    pub seed: u64,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextItem {
    pub image_id: String,
    pub image_url: String,
    pub position: usize,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitScore {
    pub image_id: String,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreAck {
    pub accepted: bool,
    pub remaining: usize,
}

type Shared = Arc<RatingStore>;

async fn create_session(State(store): State<Shared>, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<SessionCreated>), ServiceError> {
    let s = store.create_session(&req.critic_id, &req.bundle_id)?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            total: s.image_order.len(),
            session_id: s.session_id,
            critic_id: s.critic_id,
            bundle_id: s.bundle_id,
            seed: s.seed,
        }),
    ))
}

async fn next_item(State(store): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<NextItem>, ServiceError> {
    let (image_id, position, total) = store.next_item(&id)?;
    Ok(Json(NextItem {
        image_url: format!("/images/{image_id}"),
        image_id,
        position,
        total,
    }))
}

async fn image(State(store): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let bytes = store.image_bytes(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes.as_ref().clone())).into_response())
}

async fn submit(State(store): State<Shared>, UrlPath(id): UrlPath<String>, Json(req): Json<SubmitScore>) -> Result<Json<ScoreAck>, ServiceError> {
    let remaining = store.submit_score(&id, &req.image_id, req.score)?;
    Ok(Json(ScoreAck { accepted: true, remaining }))
}

async fn export(State(store): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let csv = store.export_ratings(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/scores", post(submit))
        .route("/images/{id}", get(image))
        .route("/bundles/{id}/export", get(export))
        .with_state(store)
}

/// Serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, store: Shared) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
