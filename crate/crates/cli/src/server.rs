//! HTTP service: one engine thread per session, trace lines fanned out to
//! streaming and long-poll readers.
//!
//! Trace lines are the exact JSON lines `diagnose` writes to its trace file.
//! Streams interleave heartbeat lines starting with `:`, which carry no event.

use std::collections::HashMap;
use std::convert::Infallible;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use infradiag::agents::AgentMemory;
use infradiag::corpus::IncidentRecord;
use infradiag::engine::{
    DiagnosisOutcome, EngineConfig, FeedbackProvider, FeedbackResponse, NoFeedback, ScriptedFeedback, TraceEvent,
};
use infradiag::gateway::{ChatBackend, ReplayBackend, ReplayEntry, DEFAULT_MODEL};
use infradiag::verify::{Scenario, SimulatedEnvironment};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use crate::commands::run_session;
use crate::specs::{LlmChoice, Published};
use crate::ServeArgs;

pub const NDJSON: &str = "application/x-ndjson";
pub const HEARTBEAT_LINE: &str = ": heartbeat\n";
/// Longest long-poll wait honoured.
const MAX_WAIT: Duration = Duration::from_secs(60);
/// How long a terminal feedback answer waits for the session to finish.
const FINISH_WAIT: Duration = Duration::from_secs(30);

pub struct ServiceConfig {
    pub engine: EngineConfig,
    /// Backend for sessions that do not bring their own.
    pub llm: LlmChoice,
    pub heartbeat: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Running,
    AwaitingFeedback,
    Finished,
}

#[derive(Debug, Clone, Serialize)]
struct PendingRound {
    round: usize,
    suggestions: Vec<String>,
}

struct SessionState {
    incident_id: String,
    status: Status,
    lines: Vec<String>,
    pending: Option<PendingRound>,
    reply: Option<mpsc::SyncSender<FeedbackResponse>>,
    outcome: Option<DiagnosisOutcome>,
    report: Option<String>,
    error: Option<String>,
}

struct Session {
    state: Mutex<SessionState>,
    version: watch::Sender<u64>,
}

impl Session {
    fn update<T>(&self, f: impl FnOnce(&mut SessionState) -> T) -> T {
        let out = f(&mut self.state.lock().expect("session lock"));
        self.version.send_modify(|v| *v += 1);
        out
    }

    fn view(&self, id: &str) -> serde_json::Value {
        let s = self.state.lock().expect("session lock");
        json!({
            "id": id,
            "incident_id": s.incident_id,
            "status": s.status,
            "cursor": s.lines.len(),
            "pending": s.pending,
            "outcome": s.outcome,
            "report": s.report,
            "error": s.error,
        })
    }
}

/// Hands suggestions to the HTTP client and blocks until it answers.
struct HttpFeedback {
    session: Arc<Session>,
    rounds: usize,
}

impl FeedbackProvider for HttpFeedback {
    fn max_rounds(&self) -> usize {
        self.rounds
    }

    fn next_feedback(&mut self, round: usize, suggestions: &[String]) -> FeedbackResponse {
        let (tx, rx) = mpsc::sync_channel(1);
        self.session.update(|s| {
            s.status = Status::AwaitingFeedback;
            s.pending = Some(PendingRound { round, suggestions: suggestions.to_vec() });
            s.reply = Some(tx);
        });
        rx.recv().unwrap_or(FeedbackResponse::Decline)
    }
}

pub struct Service {
    published: Published,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
}

impl Service {
    pub fn new(published: Published, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Service { published, config, sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1) })
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, Response> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| error(StatusCode::NOT_FOUND, "session_not_found", format!("no session `{id}`")))
    }
}

fn three() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SessionLlm {
    Replay { entries: Vec<ReplayEntry> },
    Simulated,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SessionFeedback {
    Interactive {
        #[serde(default = "three")]
        max_rounds: usize,
    },
    Scripted {
        #[serde(default = "three")]
        max_rounds: usize,
        responses: Vec<FeedbackResponse>,
    },
    None,
}

impl Default for SessionFeedback {
    fn default() -> Self {
        SessionFeedback::Interactive { max_rounds: 3 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    incident: IncidentRecord,
    #[serde(default)]
    scenario: Scenario,
    #[serde(default)]
    llm: Option<SessionLlm>,
    #[serde(default)]
    feedback: SessionFeedback,
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"code": code, "message": message.into()}}))).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/ticket", get(get_ticket))
        .route("/taxonomy", get(get_taxonomy))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(service)
}

fn parse_create(body: &[u8]) -> Result<CreateSession, Response> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, "invalid_json", e.to_string()))?;
    let req = if value.get("incident").is_some() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|incident| CreateSession {
            incident,
            scenario: Scenario::default(),
            llm: None,
            feedback: SessionFeedback::default(),
        })
    };
    let req = req.map_err(|e| error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string()))?;
    req.incident.validate().map_err(|e| error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_incident", e.to_string()))?;
    Ok(req)
}

async fn create_session(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let req = match parse_create(&body) {
        Ok(r) => r,
        Err(e) => return e,
    };
    let faults = [(req.incident.id.clone(), req.scenario.faults.clone())].into_iter().collect();
    let (backend, model): (Arc<dyn ChatBackend>, String) = match req.llm {
        Some(SessionLlm::Replay { entries }) => (Arc::new(ReplayBackend::new(entries)), DEFAULT_MODEL.to_string()),
        Some(SessionLlm::Simulated) => match LlmChoice::Simulated.backend(faults, &svc.published) {
            Ok(b) => b,
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "backend_unavailable", format!("{e:#}")),
        },
        None => match svc.config.llm.backend(faults, &svc.published) {
            Ok(b) => b,
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "backend_unavailable", format!("{e:#}")),
        },
    };
    let id = format!("s-{:04}", svc.next_id.fetch_add(1, Ordering::Relaxed));
    let (version, _) = watch::channel(0);
    let session = Arc::new(Session {
        state: Mutex::new(SessionState {
            incident_id: req.incident.id.clone(),
            status: Status::Running,
            lines: Vec::new(),
            pending: None,
            reply: None,
            outcome: None,
            report: None,
            error: None,
        }),
        version,
    });
    svc.sessions.lock().expect("sessions lock").insert(id.clone(), session.clone());
    log::info!("session {id} started for incident {}", req.incident.id);

    let mut feedback: Box<dyn FeedbackProvider + Send> = match req.feedback {
        SessionFeedback::Interactive { max_rounds } => Box::new(HttpFeedback { session: session.clone(), rounds: max_rounds }),
        SessionFeedback::Scripted { max_rounds, responses } => Box::new(ScriptedFeedback::new(max_rounds, responses)),
        SessionFeedback::None => Box::new(NoFeedback),
    };
    let env = Box::new(SimulatedEnvironment::new(svc.published.table.clone(), req.scenario));
    let incident = req.incident;
    let thread_svc = svc.clone();
    let thread_id = id.clone();
    std::thread::spawn(move || {
        let observed = session.clone();
        let mut observer = move |e: &TraceEvent, _: &AgentMemory| observed.update(|s| s.lines.push(e.to_json_line()));
        let result = catch_unwind(AssertUnwindSafe(|| {
            run_session(
                &thread_svc.published,
                &thread_svc.config.engine,
                &thread_id,
                &incident,
                env,
                backend,
                &model,
                feedback.as_mut(),
                &mut observer,
            )
        }));
        session.update(|s| {
            s.status = Status::Finished;
            s.pending = None;
            s.reply = None;
            match result {
                Ok(done) => {
                    s.outcome = Some(done.outcome);
                    s.report = Some(done.report);
                }
                Err(_) => s.error = Some("the diagnosis engine stopped unexpectedly".into()),
            }
        });
        match &session.state.lock().expect("session lock").outcome {
            Some(o) => log::info!("session {thread_id} finished: {}", o.label()),
            None => log::error!("session {thread_id} panicked"),
        }
    });
    (StatusCode::CREATED, Json(json!({"id": id, "status": Status::Running}))).into_response()
}

async fn get_session(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match svc.session(&id) {
        Ok(s) => Json(s.view(&id)).into_response(),
        Err(e) => e,
    }
}

#[derive(Debug, Deserialize)]
struct TraceQuery {
    /// First trace line to return.
    #[serde(default)]
    from: usize,
    /// Long-poll: wait up to this many seconds for new lines, then return.
    wait: Option<f64>,
}

fn snapshot(session: &Session, from: usize) -> (Vec<String>, usize, Status) {
    let s = session.state.lock().expect("session lock");
    let start = from.min(s.lines.len());
    (s.lines[start..].to_vec(), s.lines.len(), s.status)
}

fn ndjson(lines: &[String]) -> String {
    lines.iter().map(|l| format!("{l}\n")).collect()
}

async fn get_trace(State(svc): State<Arc<Service>>, Path(id): Path<String>, Query(q): Query<TraceQuery>) -> Response {
    let session = match svc.session(&id) {
        Ok(s) => s,
        Err(e) => return e,
    };
    match q.wait {
        Some(w) if !(w.is_finite() && w >= 0.0) => {
            error(StatusCode::BAD_REQUEST, "invalid_query", "wait must be a non-negative number of seconds")
        }
        Some(w) => long_poll(session, q.from, Duration::from_secs_f64(w).min(MAX_WAIT)).await,
        None => stream(session, q.from, svc.config.heartbeat),
    }
}

async fn long_poll(session: Arc<Session>, from: usize, wait: Duration) -> Response {
    let deadline = Instant::now() + wait;
    let mut rx = session.version.subscribe();
    loop {
        rx.mark_unchanged();
        let (lines, cursor, status) = snapshot(&session, from);
        let now = Instant::now();
        if !lines.is_empty() || status == Status::Finished || now >= deadline {
            let mut resp = ([(header::CONTENT_TYPE, NDJSON)], ndjson(&lines)).into_response();
            let h = resp.headers_mut();
            h.insert("x-trace-cursor", HeaderValue::from(cursor as u64));
            h.insert("x-session-status", HeaderValue::from_static(status_name(status)));
            return resp;
        }
        let _ = tokio::time::timeout(deadline - now, rx.changed()).await;
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Running => "Running",
        Status::AwaitingFeedback => "AwaitingFeedback",
        Status::Finished => "Finished",
    }
}

fn stream(session: Arc<Session>, from: usize, heartbeat: Duration) -> Response {
    let rx = session.version.subscribe();
    let body = futures_util::stream::unfold((session, from, rx, false), move |(session, cursor, mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            rx.mark_unchanged();
            let (lines, len, status) = snapshot(&session, cursor);
            if !lines.is_empty() {
                return Some((Ok::<_, Infallible>(ndjson(&lines)), (session, len, rx, false)));
            }
            if status == Status::Finished {
                return None;
            }
            if tokio::time::timeout(heartbeat, rx.changed()).await.is_err() {
                return Some((Ok(HEARTBEAT_LINE.to_string()), (session, cursor, rx, false)));
            }
        }
    });
    ([(header::CONTENT_TYPE, NDJSON)], Body::from_stream(body)).into_response()
}

async fn post_feedback(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> Response {
    let session = match svc.session(&id) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let response: FeedbackResponse = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "invalid_feedback", e.to_string()),
    };
    let mut rx = session.version.subscribe();
    let handed = session.update(|s| {
        if s.status != Status::AwaitingFeedback {
            return Err(s.status);
        }
        s.status = Status::Running;
        s.pending = None;
        Ok(s.reply.take())
    });
    match handed {
        Err(status) => {
            return error(
                StatusCode::CONFLICT,
                "not_awaiting_feedback",
                format!("session `{id}` is {}", status_name(status)),
            )
        }
        Ok(Some(tx)) => {
            let _ = tx.send(response.clone());
        }
        Ok(None) => {}
    }
    if matches!(response, FeedbackResponse::Feedback { .. }) {
        return (StatusCode::ACCEPTED, Json(session.view(&id))).into_response();
    }
    // Accept and decline end the exploration; answer once the session has
    // concluded so the caller sees the final state.
    let deadline = Instant::now() + FINISH_WAIT;
    loop {
        rx.mark_unchanged();
        let status = session.state.lock().expect("session lock").status;
        let now = Instant::now();
        if status == Status::Finished || now >= deadline {
            return Json(session.view(&id)).into_response();
        }
        let _ = tokio::time::timeout(deadline - now, rx.changed()).await;
    }
}

async fn get_ticket(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    let session = match svc.session(&id) {
        Ok(s) => s,
        Err(e) => return e,
    };
    let s = session.state.lock().expect("session lock");
    if s.status != Status::Finished {
        return error(StatusCode::CONFLICT, "not_finished", format!("session `{id}` is {}", status_name(s.status)));
    }
    match s.outcome.as_ref().and_then(DiagnosisOutcome::ticket) {
        Some(t) => Json(t).into_response(),
        None => error(StatusCode::NOT_FOUND, "no_ticket", format!("session `{id}` did not escalate")),
    }
}

async fn get_taxonomy(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.published.taxonomy.to_value()).into_response()
}

/// Binds `addr` and serves until the process exits.
pub fn serve_blocking(a: &ServeArgs) -> anyhow::Result<()> {
    let published = Published::load(&a.resources)?;
    let config = ServiceConfig { engine: a.engine.config(), llm: a.llm.clone(), heartbeat: Duration::from_millis(a.heartbeat_ms.max(1)) };
    let service = Service::new(published, config);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(service)).await?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn service() -> Arc<Service> {
        let published = Published::load(&crate::specs::ResourceArgs::default()).unwrap();
        Service::new(published, ServiceConfig { engine: EngineConfig::default(), llm: LlmChoice::Simulated, heartbeat: Duration::from_millis(10) })
    }

    fn running() -> Arc<Session> {
        let (version, _) = watch::channel(0);
        Arc::new(Session {
            state: Mutex::new(SessionState {
                incident_id: "inc-1".into(),
                status: Status::Running,
                lines: vec!["{\"seq\":0}".into()],
                pending: None,
                reply: None,
                outcome: None,
                report: None,
                error: None,
            }),
            version,
        })
    }

    async fn body_json(r: Response) -> serde_json::Value {
        let bytes = axum::body::to_bytes(r.into_body(), usize::MAX).await.unwrap();
        serde_json::from_slice(&bytes).unwrap()
    }

    #[tokio::test]
    async fn feedback_while_running_is_a_conflict() {
        let svc = service();
        svc.sessions.lock().unwrap().insert("s-9".into(), running());
        let r = post_feedback(State(svc.clone()), Path("s-9".into()), Bytes::from_static(br#"{"kind":"decline"}"#)).await;
        assert_eq!(r.status(), StatusCode::CONFLICT);
        assert_eq!(body_json(r).await["error"]["code"], "not_awaiting_feedback");
        let r = get_ticket(State(svc), Path("s-9".into())).await;
        assert_eq!(r.status(), StatusCode::CONFLICT);
    }

    #[tokio::test]
    async fn long_poll_returns_at_the_deadline_without_new_lines() {
        let session = running();
        let started = Instant::now();
        let r = long_poll(session, 1, Duration::from_millis(50)).await;
        assert!(started.elapsed() >= Duration::from_millis(50));
        assert_eq!(r.headers()["x-trace-cursor"], "1");
        assert_eq!(r.headers()["x-session-status"], "Running");
    }

    #[test]
    fn bad_bodies_map_to_error_codes() {
        let code = |b: &[u8]| match parse_create(b) {
            Ok(_) => "ok".to_string(),
            Err(r) => r.status().as_u16().to_string(),
        };
        assert_eq!(code(b"[1,"), "400");
        assert_eq!(code(br#"{"incident": 3}"#), "422");
        assert_eq!(code(br#"{"id": "a", "description": "b", "created_at": "2024-01-01T00:00:00Z"}"#), "ok");
    }
}
