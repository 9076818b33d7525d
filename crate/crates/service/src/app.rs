use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use rnr_core::corpus::{Corpus, TokenId, Vocab};
use rnr_core::retnref::{ResponderRegistry, Turns};

use crate::chat::{ChatTurn, Role, Scores, Session, SessionSnapshot, TraceView};
use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::study::{build_items, Choice, Study, StudyHandle, StudyLog, StudySpec};

type ApiResult<T> = Result<T, ApiError>;

/// Shared by every handler. Models are read-only; each study has one
/// writer behind its mutex.
pub struct AppState {
    pub config: ServiceConfig,
    pub vocab: Arc<Vocab>,
    /// Responders by name; chat variants and A/B models share this table.
    pub models: ResponderRegistry,
    pub personas: Vec<Vec<String>>,
    pub corpora: HashMap<String, Corpus>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    studies: RwLock<HashMap<String, Arc<Mutex<StudyHandle>>>>,
    next_session: AtomicU64,
    next_study: AtomicU64,
    session_log: Option<Mutex<File>>,
}

impl AppState {
    /// Replays every study log found under the state directory.
    pub fn new(
        config: ServiceConfig,
        vocab: Arc<Vocab>,
        models: ResponderRegistry,
        personas: Vec<Vec<String>>,
        corpora: HashMap<String, Corpus>,
    ) -> ApiResult<Self> {
        let mut studies = HashMap::new();
        let mut next_study = 1;
        let mut session_log = None;
        if let Some(dir) = &config.state_dir {
            let io = |e: std::io::Error| ApiError::internal(format!("{}: {e}", dir.display()));
            let sdir = dir.join("studies");
            std::fs::create_dir_all(&sdir).map_err(io)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&sdir)
                .map_err(io)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            paths.sort();
            for p in paths {
                let study = Study::replay(&p)?;
                if let Some(n) = study.study_id.strip_prefix("study-").and_then(|n| n.parse::<u64>().ok()) {
                    next_study = next_study.max(n + 1);
                }
                let handle = StudyHandle {
                    log: Some(StudyLog::open(&p)?),
                    study,
                };
                studies.insert(handle.study.study_id.clone(), Arc::new(Mutex::new(handle)));
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("sessions.jsonl"))
                .map_err(io)?;
            session_log = Some(Mutex::new(f));
        }
        Ok(AppState {
            config,
            vocab,
            models,
            personas,
            corpora,
            sessions: Mutex::new(HashMap::new()),
            studies: RwLock::new(studies),
            next_session: AtomicU64::new(1),
            next_study: AtomicU64::new(next_study),
            session_log,
        })
    }

    fn study(&self, id: &str) -> ApiResult<Arc<Mutex<StudyHandle>>> {
        self.studies
            .read()
            .expect("study table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_study", format!("no study `{id}`")))
    }

    fn session(&self, id: &str) -> ApiResult<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_session", format!("no session `{id}`")))
    }

    fn snapshot(&self, session: &Session) -> ApiResult<()> {
        let Some(log) = &self.session_log else { return Ok(()) };
        let snap = SessionSnapshot {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            session: std::borrow::Cow::Borrowed(session),
        };
        let mut line = serde_json::to_string(&snap).map_err(|e| ApiError::internal(e.to_string()))?;
        line.push('\n');
        log.lock()
            .expect("session log lock")
            .write_all(line.as_bytes())
            .map_err(|e| ApiError::internal(format!("session log: {e}")))
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_request", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Deserialize)]
struct NewSession {
    variant: String,
    seed: Option<u64>,
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: NewSession = parse(&body)?;
    if !st.models.contains(&req.variant) {
        return Err(ApiError::bad_request(
            "unknown_variant",
            format!("unknown variant `{}`; available: {}", req.variant, st.models.names().join(", ")),
        ));
    }
    let n = st.next_session.fetch_add(1, Ordering::SeqCst);
    let seed = req.seed.unwrap_or_else(|| st.config.seed.wrapping_add(n));
    let session = Session::new(format!("session-{n}"), req.variant, seed, &st.personas)?;
    st.snapshot(&session)?;
    let body = json!({
        "session_id": session.session_id,
        "variant": session.variant,
        "seed": session.seed,
        "persona": session.persona,
    });
    st.sessions
        .lock()
        .expect("session table lock")
        .insert(session.session_id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    let s = st.session(&id)?;
    let s = s.lock().await;
    Ok(Json(s.clone()))
}

#[derive(Deserialize)]
struct NewMessage {
    text: String,
}

async fn post_message(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: NewMessage = parse(&body)?;
    let text = req.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::bad_request("empty_text", "message text is empty"));
    }
    let handle = st.session(&id)?;
    let mut session = handle.lock().await;
    let model = st.models.get(&session.variant)?;
    let vocab = st.vocab.clone();
    let persona: Vec<Vec<TokenId>> = session.persona.iter().map(|s| vocab.encode_text(s)).collect();
    let mut history: Vec<Vec<TokenId>> = session.history.iter().map(|t| vocab.encode_text(&t.text)).collect();
    history.push(vocab.encode_text(&text));
    let reply = blocking(move || {
        let turns = Turns {
            persona: &persona,
            history: &history,
            gold: None,
        };
        Ok(model.respond(&turns)?)
    })
    .await?;
    let trace = TraceView::from(&reply);
    session.history.push(ChatTurn {
        role: Role::Human,
        text,
        trace: None,
    });
    session.history.push(ChatTurn {
        role: Role::Model,
        text: reply.text.clone(),
        trace: Some(trace.clone()),
    });
    st.snapshot(&session)?;
    Ok(Json(json!({
        "reply": reply.text,
        "trace": trace,
        "history_len": session.history.len(),
    })))
}

async fn post_scores(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let scores: Scores = parse(&body)?;
    scores.validate()?;
    let handle = st.session(&id)?;
    let mut session = handle.lock().await;
    if session.exchanges() < st.config.min_turns_for_scores {
        return Err(ApiError::conflict(
            "too_few_turns",
            format!("scores open after {} exchanges", st.config.min_turns_for_scores),
        ));
    }
    session.scores.push(scores);
    st.snapshot(&session)?;
    Ok(Json(json!({ "status": "recorded" })))
}

#[derive(Deserialize)]
struct NewStudy {
    model_a: String,
    model_b: String,
    corpus: String,
    judgments_per_item: usize,
    items: Option<usize>,
    seed: Option<u64>,
}

async fn create_study(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: NewStudy = parse(&body)?;
    for name in [&req.model_a, &req.model_b] {
        if !st.models.contains(name) {
            return Err(ApiError::bad_request("unknown_model", format!("unknown model `{name}`")));
        }
    }
    if req.model_a == req.model_b {
        return Err(ApiError::bad_request("invalid_request", "model_a and model_b must differ"));
    }
    let Some(corpus) = st.corpora.get(&req.corpus).cloned() else {
        return Err(ApiError::bad_request("unknown_corpus", format!("unknown corpus `{}`", req.corpus)));
    };
    let n = st.next_study.fetch_add(1, Ordering::SeqCst);
    let spec = StudySpec {
        model_a: req.model_a,
        model_b: req.model_b,
        corpus: req.corpus,
        judgments_per_item: req.judgments_per_item,
        seed: req.seed.unwrap_or(st.config.seed),
    };
    let (a, b) = (st.models.get(&spec.model_a)?, st.models.get(&spec.model_b)?);
    let (vocab, seed, limit) = (st.vocab.clone(), spec.seed, req.items);
    let items = blocking(move || Ok(build_items(a.as_ref(), b.as_ref(), &corpus, &vocab, seed, limit)?)).await?;
    let study = Study::new(format!("study-{n}"), spec, items)?;
    let log = match &st.config.state_dir {
        Some(dir) => Some(StudyLog::create(&dir.join("studies").join(format!("{}.jsonl", study.study_id)), &study)?),
        None => None,
    };
    let body = json!({
        "study_id": study.study_id,
        "items": study.items.len(),
        "judgments_per_item": study.spec.judgments_per_item,
    });
    st.studies
        .write()
        .expect("study table lock")
        .insert(study.study_id.clone(), Arc::new(Mutex::new(StudyHandle { study, log })));
    Ok((StatusCode::CREATED, Json(body)))
}

fn progress(study: &Study) -> Value {
    json!({
        "judged": study.judgments().len(),
        "total": study.items.len() * study.spec.judgments_per_item,
    })
}

async fn next_item(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let annotator = q
        .get("annotator")
        .map(|a| a.trim())
        .filter(|a| !a.is_empty())
        .ok_or_else(|| ApiError::bad_request("invalid_request", "annotator query parameter is required"))?;
    let handle = st.study(&id)?;
    let mut h = handle.lock().expect("study lock");
    match h.study.next_item(annotator) {
        None => Ok(Json(json!({ "status": "complete", "progress": progress(&h.study) }))),
        Some((item, ev)) => {
            if let Some(ev) = ev {
                h.record(ev)?;
            }
            Ok(Json(json!({ "status": "item", "item": item, "progress": progress(&h.study) })))
        }
    }
}

#[derive(Deserialize)]
struct NewJudgment {
    item_id: usize,
    annotator: String,
    choice: String,
}

async fn post_judgment(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: NewJudgment = parse(&body)?;
    let choice: Choice = req.choice.parse()?;
    let handle = st.study(&id)?;
    let mut h = handle.lock().expect("study lock");
    let status = match h.study.judge(req.item_id, req.annotator.trim(), choice)? {
        Some(ev) => {
            h.record(ev)?;
            "recorded"
        }
        None => "duplicate",
    };
    Ok(Json(json!({
        "status": status,
        "judgments": h.study.judgments().len(),
        "progress": progress(&h.study),
    })))
}

async fn results(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let handle = st.study(&id)?;
    let h = handle.lock().expect("study lock");
    let r = h.study.results()?;
    Ok(Json(serde_json::to_value(r).map_err(|e| ApiError::internal(e.to_string()))?))
}

async fn list_models(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "models": st.models.names(), "corpora": st.corpora.keys().collect::<Vec<_>>() }))
}

async fn not_found() -> ApiError {
    ApiError::not_found("not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/v1/models", get(list_models))
        .route("/v1/chat/sessions", post(create_session))
        .route("/v1/chat/sessions/{id}", get(get_session))
        .route("/v1/chat/sessions/{id}/messages", post(post_message))
        .route("/v1/chat/sessions/{id}/scores", post(post_scores))
        .route("/v1/ab/studies", post(create_study))
        .route("/v1/ab/studies/{id}/next", get(next_item))
        .route("/v1/ab/studies/{id}/judgments", post(post_judgment))
        .route("/v1/ab/studies/{id}/results", get(results));
    let app = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    app.layer(CorsLayer::permissive()).with_state(state)
}

/// Binds the configured address and serves until the process stops.
pub async fn serve(state: Arc<AppState>) -> std::io::Result<()> {
    let addr = format!("{}:{}", state.config.host, state.config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
