//! HTTP/JSON session service behind the annotation interface.
//!
//! Each session wraps a simulator [`Session`]. Accepted state-changing
//! commands are appended to `<sessions>/<id>.log` in the same text format
//! as scripted sessions, and sessions are rebuilt from those logs at
//! startup. Commands on one session are serialized by its mutex.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use anyhow::{bail, Context};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pegkit::corpus::{load_document, save_peg};
use pegkit::simulator::{replay_script, Command, FinalizeError, Session};
use pegkit::validator::lint;
use pegkit::Document;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

struct Entry {
    document_id: String,
    session: Session,
    log_path: Option<PathBuf>,
}

impl Entry {
    /// Accepted state-changing commands so far.
    fn revision(&self) -> usize {
        self.session.log().len()
    }

    fn handle(&self, id: &str) -> Value {
        json!({ "session_id": id, "document_id": self.document_id, "revision": self.revision() })
    }
}

pub struct AppState {
    documents: BTreeMap<String, Arc<Document>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    session_dir: Option<PathBuf>,
    next_id: Mutex<u64>,
}

impl AppState {
    pub fn new(documents: Vec<Document>, session_dir: Option<PathBuf>) -> anyhow::Result<Arc<Self>> {
        let documents: BTreeMap<String, Arc<Document>> =
            documents.into_iter().map(|d| (d.id().to_string(), Arc::new(d))).collect();
        let state = AppState { documents, sessions: RwLock::default(), session_dir, next_id: Mutex::new(1) };
        state.restore()?;
        Ok(Arc::new(state))
    }

    /// Loads every `*.doc.json` and `*.peg.json` in `dir`. When both exist
    /// for one document id the first in file-name order wins.
    pub fn load_corpus(dir: &Path) -> anyhow::Result<Vec<Document>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading corpus directory {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.to_string_lossy();
                name.ends_with(".doc.json") || name.ends_with(".peg.json")
            })
            .collect();
        paths.sort();
        let mut seen = std::collections::HashSet::new();
        let mut docs = Vec::new();
        for p in paths {
            let text = fs::read_to_string(&p).with_context(|| p.display().to_string())?;
            let doc = load_document(&text).with_context(|| p.display().to_string())?;
            if seen.insert(doc.id().to_string()) {
                docs.push(doc);
            }
        }
        Ok(docs)
    }

    fn restore(&self) -> anyhow::Result<()> {
        let Some(dir) = &self.session_dir else { return Ok(()) };
        fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        let mut max_id = 0;
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|x| x != "log") {
                continue;
            }
            let id = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let text = fs::read_to_string(&path)?;
            let Some(doc_id) = text.lines().next().and_then(|l| l.strip_prefix("# document ")) else {
                bail!("{}: missing `# document <id>` header", path.display());
            };
            let Some(doc) = self.documents.get(doc_id.trim()) else {
                bail!("{}: unknown document `{doc_id}`", path.display());
            };
            let session = replay_script(doc.clone(), &text).map_err(|e| {
                anyhow::anyhow!("{}: replay stopped at command {}: {:?}", path.display(), e.index, e.diagnostics)
            })?;
            if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            let entry = Entry { document_id: doc_id.trim().to_string(), session, log_path: Some(path) };
            self.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(entry)));
        }
        *self.next_id.lock().unwrap() = max_id + 1;
        Ok(())
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }
}

pub struct ApiError(StatusCode, Value);

impl ApiError {
    fn not_found(msg: String) -> Self {
        ApiError(StatusCode::NOT_FOUND, json!({ "error": msg }))
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": err.to_string() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/documents", get(list_documents))
        .route("/documents/{id}", get(get_document))
        .route("/ontology", get(ontology))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/command", post(command))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/peg", get(session_peg))
        .route("/sessions/{id}/autocomplete", get(autocomplete))
        .route("/sessions/{id}/lint", get(session_lint))
        .route("/sessions/{id}/finalize", post(finalize))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn list_documents(State(app): State<Arc<AppState>>) -> Json<Value> {
    let docs: Vec<Value> = app
        .documents
        .values()
        .map(|d| json!({ "id": d.id(), "sentences": d.sentences().len(), "mentions": d.mentions().len() }))
        .collect();
    Json(json!(docs))
}

async fn get_document(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let doc = app.documents.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown document `{id}`")))?;
    Ok(Json(json!(doc.as_ref())).into_response())
}

async fn ontology() -> Json<Value> {
    Json(json!(pegkit::ontology::export()))
}

#[derive(Deserialize)]
struct CreateSession {
    document_id: String,
}

async fn create_session(State(app): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> ApiResult {
    let doc = app
        .documents
        .get(&req.document_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown document `{}`", req.document_id)))?;
    let id = {
        let mut next = app.next_id.lock().unwrap();
        let id = format!("s{next}");
        *next += 1;
        id
    };
    let log_path = match &app.session_dir {
        Some(dir) => {
            let path = dir.join(format!("{id}.log"));
            fs::write(&path, format!("# document {}\n", req.document_id)).map_err(ApiError::internal)?;
            Some(path)
        }
        None => None,
    };
    let entry = Entry { document_id: req.document_id, session: Session::new(doc.clone()), log_path };
    let body = entry.handle(&id);
    app.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Value> {
    let sessions = app.sessions.read().unwrap();
    let mut ids: Vec<&String> = sessions.keys().collect();
    ids.sort();
    Json(json!(ids.into_iter().map(|id| sessions[id].lock().unwrap().handle(id)).collect::<Vec<_>>()))
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = app.session(&id)?;
    let entry = entry.lock().unwrap();
    Ok(Json(entry.handle(&id)).into_response())
}

#[derive(Deserialize)]
struct CommandRequest {
    line: String,
    /// The revision the client believes the session is at. A retry of the
    /// command that produced the current revision is answered without being
    /// applied twice; any other mismatch is a conflict.
    expected_revision: Option<usize>,
}

async fn command(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<CommandRequest>,
) -> ApiResult {
    let entry = app.session(&id)?;
    let mut entry = entry.lock().unwrap();
    let cmd = match Command::parse(&req.line, entry.session.document()) {
        Ok(cmd) => cmd,
        Err(e) => {
            return Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": e.to_string(), "line": req.line })))
                .into_response())
        }
    };
    let revision = entry.revision();
    if let Some(expected) = req.expected_revision {
        if expected != revision {
            let is_retry = expected + 1 == revision && entry.session.log().last() == Some(&cmd);
            if is_retry {
                return Ok(Json(json!({
                    "revision": revision, "accepted": true, "changed": false, "diagnostics": [], "duplicate": true
                }))
                .into_response());
            }
            return Ok((
                StatusCode::CONFLICT,
                Json(json!({ "error": "revision mismatch", "revision": revision, "expected_revision": expected })),
            )
                .into_response());
        }
    }
    let outcome = entry.session.issue(cmd.clone());
    if outcome.changed {
        if let Some(path) = &entry.log_path {
            let mut file = OpenOptions::new().append(true).open(path).map_err(ApiError::internal)?;
            writeln!(file, "{cmd}").map_err(ApiError::internal)?;
        }
    }
    let mut body = json!(outcome);
    body["revision"] = json!(entry.revision());
    let status = if outcome.accepted { StatusCode::OK } else { StatusCode::CONFLICT };
    Ok((status, Json(body)).into_response())
}

async fn session_state(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = app.session(&id)?;
    let entry = entry.lock().unwrap();
    let s = &entry.session;
    Ok(Json(json!({
        "revision": entry.revision(),
        "entities": s.state().entities,
        "exec_order": s.exec_order(),
        "log": s.log().iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        "rendered": s.render_state(),
    }))
    .into_response())
}

fn peg_json(g: &pegkit::PegGraph) -> Value {
    serde_json::from_str(&save_peg(g)).expect("saved PEG is JSON")
}

async fn session_peg(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = app.session(&id)?;
    let draft = entry.lock().unwrap().session.draft();
    Ok(Json(peg_json(&draft)).into_response())
}

#[derive(Deserialize)]
struct Prefix {
    #[serde(default)]
    prefix: String,
}

async fn autocomplete(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<Prefix>,
) -> ApiResult {
    let entry = app.session(&id)?;
    let completions = entry.lock().unwrap().session.autocomplete(&q.prefix);
    Ok(Json(json!({ "prefix": q.prefix, "completions": completions })).into_response())
}

async fn session_lint(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = app.session(&id)?;
    let draft = entry.lock().unwrap().session.draft();
    Ok(Json(json!(lint(&draft))).into_response())
}

async fn finalize(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = app.session(&id)?;
    let result = entry.lock().unwrap().session.finalize();
    Ok(match result {
        Ok(done) => Json(json!({ "peg": peg_json(&done.graph), "lint": done.lint })).into_response(),
        Err(FinalizeError::Unexecuted(ops)) => {
            (StatusCode::CONFLICT, Json(json!({ "error": "operations not executed", "unexecuted": ops })))
                .into_response()
        }
        Err(FinalizeError::Invalid(diagnostics)) => {
            (StatusCode::CONFLICT, Json(json!({ "error": "graph does not validate", "diagnostics": diagnostics })))
                .into_response()
        }
    })
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
