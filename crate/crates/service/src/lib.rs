//! Local HTTP API that runs retarget jobs, streams their progress as server-sent
//! events and accepts balance updates between iterations.
//!
//! Every job runs on its own thread and owns its optimizer. Requests only touch
//! the shared job state; balance changes are queued and picked up by the job at
//! its next iteration boundary.
#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;
use tower_http::services::ServeDir;

use semret_core::anim::io::animation_to_json;
use semret_core::job::{Job, JobRequest};
use semret_core::limb::Limb;
use semret_core::optimizer::{
    Balance, Breakdown, Checkpoint, ConflictRecord, Control, Observer, Progress, RetargetConfig, Snapshot, Term,
};
use semret_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Loading,
    Optimizing,
    Paused,
    Done,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub id: String,
    pub phase: Phase,
    pub window: usize,
    pub windows: usize,
    /// Steps taken so far, counted across windows.
    pub iteration: usize,
    /// Steps per window.
    pub iterations: usize,
    pub losses: Option<Breakdown>,
    pub per_limb: BTreeMap<Limb, BTreeMap<Term, f64>>,
    pub conflicts: Vec<ConflictRecord>,
    pub snapshot: Option<Snapshot>,
    pub balance: Vec<Balance>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Checkpoint,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub state: JobState,
}

struct Inner {
    state: JobState,
    history: Vec<JobEvent>,
    pause: bool,
    cancel: bool,
    pending: Vec<Balance>,
    /// Animation JSON and report JSON of a finished job.
    result: Option<(String, String)>,
}

pub struct JobHandle {
    inner: Mutex<Inner>,
    wake: Condvar,
    events: broadcast::Sender<JobEvent>,
}

impl JobHandle {
    fn new(id: String, job: &Job) -> Self {
        let (events, _) = broadcast::channel(1024);
        Self {
            inner: Mutex::new(Inner {
                state: JobState {
                    id,
                    phase: Phase::Loading,
                    window: 0,
                    windows: 0,
                    iteration: 0,
                    iterations: job.config.iterations,
                    losses: None,
                    per_limb: BTreeMap::new(),
                    conflicts: Vec::new(),
                    snapshot: None,
                    balance: job.config.balance.clone(),
                    error: None,
                },
                history: Vec::new(),
                pause: false,
                cancel: false,
                pending: Vec::new(),
                result: None,
            }),
            wake: Condvar::new(),
            events,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Records an event; callers hold the lock so subscribers never miss one.
    fn emit(&self, inner: &mut Inner, kind: EventKind) {
        let event = JobEvent {
            seq: inner.history.len() as u64,
            kind,
            state: inner.state.clone(),
        };
        inner.history.push(event.clone());
        let _ = self.events.send(event);
    }

    pub fn state(&self) -> JobState {
        self.lock().state.clone()
    }
}

struct JobObserver {
    handle: Arc<JobHandle>,
}

impl Observer for JobObserver {
    fn boundary(&mut self, p: Progress) -> Control {
        let h = &self.handle;
        let mut g = h.lock();
        while g.pause && !g.cancel {
            g.state.phase = Phase::Paused;
            g = h.wake.wait(g).unwrap_or_else(|p| p.into_inner());
        }
        if g.cancel {
            return Control::Cancel;
        }
        g.state.phase = Phase::Optimizing;
        g.state.window = p.window;
        g.state.windows = p.windows;
        g.state.iterations = p.iterations;
        g.state.iteration = p.window * p.iterations + p.iteration;
        if g.pending.is_empty() {
            return Control::Continue;
        }
        let mut cfg = RetargetConfig {
            balance: g.state.balance.clone(),
            ..Default::default()
        };
        for b in std::mem::take(&mut g.pending) {
            cfg.set_balance(b);
        }
        g.state.balance = cfg.balance.clone();
        Control::Rebalance(cfg.balance)
    }

    fn checkpoint(&mut self, c: &Checkpoint) {
        let h = &self.handle;
        let mut g = h.lock();
        let s = &mut g.state;
        s.window = c.progress.window;
        s.windows = c.progress.windows;
        s.iteration = c.progress.window * c.progress.iterations + c.progress.iteration;
        s.losses = Some(c.losses);
        s.per_limb = c.per_limb.clone();
        s.conflicts = c.conflicts.clone();
        s.snapshot = Some(c.snapshot.clone());
        h.emit(&mut g, EventKind::Checkpoint);
    }
}

fn run(handle: Arc<JobHandle>, job: Job) {
    {
        let mut g = handle.lock();
        if !g.pause {
            g.state.phase = Phase::Optimizing;
        }
    }
    let mut observer = JobObserver { handle: handle.clone() };
    let outcome = job.run(&mut observer);
    let mut g = handle.lock();
    match outcome {
        Ok(out) => {
            let report = serde_json::to_string(&out.report).expect("report serializes");
            g.result = Some((animation_to_json(&out.animation), report));
            g.state.phase = Phase::Done;
            if let Some(r) = &out.report {
                g.state.losses = Some(r.final_losses);
                g.state.per_limb = r.final_per_limb.clone();
                g.state.conflicts = r.conflicts.clone();
                g.state.balance = r.config.balance.clone();
            }
            info!("job {} done", g.state.id);
            handle.emit(&mut g, EventKind::Done);
        }
        Err(e) => {
            warn!("job {} failed: {e}", g.state.id);
            g.state.phase = Phase::Failed;
            g.state.error = Some(e.to_string());
            handle.emit(&mut g, EventKind::Failed);
        }
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    jobs: Arc<Mutex<BTreeMap<String, Arc<JobHandle>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    fn job(&self, id: &str) -> Result<Arc<JobHandle>, Response> {
        self.jobs
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("no job with id '{id}'"), None))
    }

    /// Registers a validated job and starts its thread.
    pub fn submit(&self, job: Job) -> String {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed) + 1;
        let id = format!("job-{n}");
        let handle = Arc::new(JobHandle::new(id.clone(), &job));
        self.jobs
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), handle.clone());
        std::thread::Builder::new()
            .name(id.clone())
            .spawn(move || run(handle, job))
            .expect("spawn job thread");
        id
    }
}

fn error(status: StatusCode, message: String, path: Option<String>) -> Response {
    let mut body = json!({ "error": message });
    if let Some(p) = path {
        body["path"] = json!(p);
    }
    (status, Json(body)).into_response()
}

fn bad_request(e: Error) -> Response {
    match e {
        Error::Parse { path, message } => error(StatusCode::BAD_REQUEST, format!("{path}: {message}"), Some(path)),
        other => error(StatusCode::BAD_REQUEST, other.to_string(), None),
    }
}

/// Multipart submissions carry one request field per part; parts that are not JSON are taken as strings.
async fn multipart_body(mut form: Multipart) -> Result<String, Response> {
    let mut fields = serde_json::Map::new();
    loop {
        let field = form
            .next_field()
            .await
            .map_err(|e| error(StatusCode::BAD_REQUEST, format!("multipart: {e}"), None))?;
        let Some(field) = field else { break };
        let name = field
            .name()
            .ok_or_else(|| error(StatusCode::BAD_REQUEST, "multipart part without a name".into(), None))?
            .to_string();
        let text = field
            .text()
            .await
            .map_err(|e| error(StatusCode::BAD_REQUEST, format!("multipart part '{name}': {e}"), None))?;
        let value = serde_json::from_str(&text).unwrap_or(serde_json::Value::String(text));
        fields.insert(name, value);
    }
    Ok(serde_json::Value::Object(fields).to_string())
}

async fn create_job(State(app): State<AppState>, req: Request) -> Response {
    let multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let text = if multipart {
        match Multipart::from_request(req, &()).await {
            Ok(form) => match multipart_body(form).await {
                Ok(t) => t,
                Err(r) => return r,
            },
            Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), None),
        }
    } else {
        match Bytes::from_request(req, &()).await {
            Ok(b) => String::from_utf8_lossy(&b).into_owned(),
            Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), None),
        }
    };
    let parsed = tokio::task::spawn_blocking(move || JobRequest::parse(&text).and_then(Job::try_from)).await;
    match parsed {
        Ok(Ok(job)) => {
            let id = app.submit(job);
            info!("accepted {id}");
            (StatusCode::ACCEPTED, Json(json!({ "id": id }))).into_response()
        }
        Ok(Err(e)) => bad_request(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

async fn list_jobs(State(app): State<AppState>) -> Response {
    let jobs: Vec<Arc<JobHandle>> = app.jobs.lock().unwrap_or_else(|p| p.into_inner()).values().cloned().collect();
    let states: Vec<JobState> = jobs
        .iter()
        .map(|h| {
            let mut s = h.state();
            s.snapshot = None;
            s
        })
        .collect();
    Json(states).into_response()
}

async fn get_job(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    match app.job(&id) {
        Ok(h) => Json(h.state()).into_response(),
        Err(r) => r,
    }
}

fn event_stream(handle: &JobHandle) -> impl Stream<Item = Result<Event, Infallible>> + use<> {
    let (history, rx, finished) = {
        let g = handle.lock();
        (g.history.clone(), handle.events.subscribe(), g.state.phase.is_terminal())
    };
    let live = stream::unfold((rx, finished), |(mut rx, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let end = ev.kind != EventKind::Checkpoint;
                    return Some((ev, (rx, end)));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => warn!("event stream skipped {n} events"),
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    stream::iter(history).chain(live).map(|ev| {
        let kind = match ev.kind {
            EventKind::Checkpoint => "checkpoint",
            EventKind::Done => "done",
            EventKind::Failed => "failed",
        };
        Ok(Event::default()
            .event(kind)
            .id(ev.seq.to_string())
            .json_data(&ev.state)
            .expect("state serializes"))
    })
}

async fn events(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    match app.job(&id) {
        Ok(h) => Sse::new(event_stream(&h)).keep_alive(KeepAlive::default()).into_response(),
        Err(r) => r,
    }
}

async fn set_balance(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let h = match app.job(&id) {
        Ok(h) => h,
        Err(r) => return r,
    };
    let text = String::from_utf8_lossy(&body);
    let balance: Balance = match semret_core::anim::io::from_json_str(&text) {
        Ok(b) => b,
        Err(e) => return bad_request(e),
    };
    if let Err(e) = balance.validate() {
        return bad_request(e);
    }
    let mut g = h.lock();
    if !matches!(g.state.phase, Phase::Optimizing | Phase::Paused) {
        return error(
            StatusCode::CONFLICT,
            format!("job {id} is {:?}; balance changes need a running or paused job", g.state.phase).to_lowercase(),
            None,
        );
    }
    g.pending.push(balance);
    Json(json!({ "queued": balance, "phase": g.state.phase })).into_response()
}

async fn result(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let h = match app.job(&id) {
        Ok(h) => h,
        Err(r) => return r,
    };
    let g = h.lock();
    match &g.result {
        Some((animation, report)) => (
            [(header::CONTENT_TYPE, "application/json")],
            format!("{{\"animation\":{animation},\"report\":{report}}}"),
        )
            .into_response(),
        None => not_done(&g.state),
    }
}

/// The animation alone, byte for byte as the command line writes it.
async fn result_animation(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    let h = match app.job(&id) {
        Ok(h) => h,
        Err(r) => return r,
    };
    let g = h.lock();
    match &g.result {
        Some((animation, _)) => ([(header::CONTENT_TYPE, "application/json")], animation.clone()).into_response(),
        None => not_done(&g.state),
    }
}

fn not_done(state: &JobState) -> Response {
    let msg = match &state.error {
        Some(e) => format!("job {} failed: {e}", state.id),
        None => format!("job {} has not finished", state.id),
    };
    error(StatusCode::CONFLICT, msg, None)
}

async fn pause(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    lifecycle(&app, &id, |h, g| {
        if g.state.phase.is_terminal() {
            return Err(error(StatusCode::CONFLICT, format!("job {id} has finished"), None));
        }
        g.pause = true;
        g.state.phase = Phase::Paused;
        h.wake.notify_all();
        Ok(())
    })
}

async fn resume(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    lifecycle(&app, &id, |h, g| {
        if g.state.phase.is_terminal() {
            return Err(error(StatusCode::CONFLICT, format!("job {id} has finished"), None));
        }
        g.pause = false;
        g.state.phase = Phase::Optimizing;
        h.wake.notify_all();
        Ok(())
    })
}

async fn cancel(State(app): State<AppState>, Path(id): Path<String>) -> Response {
    lifecycle(&app, &id, |h, g| {
        if !g.state.phase.is_terminal() {
            g.cancel = true;
            h.wake.notify_all();
        }
        Ok(())
    })
}

fn lifecycle(
    app: &AppState,
    id: &str,
    f: impl FnOnce(&JobHandle, &mut Inner) -> Result<(), Response>,
) -> Response {
    let h = match app.job(id) {
        Ok(h) => h,
        Err(r) => return r,
    };
    let mut g = h.lock();
    match f(&h, &mut g) {
        Ok(()) => {
            let mut s = g.state.clone();
            s.snapshot = None;
            Json(s).into_response()
        }
        Err(r) => r,
    }
}

const FALLBACK_PAGE: &str = "<!doctype html><title>semret</title><p>No UI directory configured. \
The API lives under <code>/api/v1</code>.</p>";

pub fn router(state: AppState, ui: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/jobs", post(create_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/events", get(events))
        .route("/jobs/{id}/balance", patch(set_balance))
        .route("/jobs/{id}/result", get(result))
        .route("/jobs/{id}/result/animation", get(result_animation))
        .route("/jobs/{id}/pause", post(pause))
        .route("/jobs/{id}/resume", post(resume))
        .route("/jobs/{id}/cancel", post(cancel))
        .layer(DefaultBodyLimit::max(512 * 1024 * 1024));
    let app = Router::new().nest("/api/v1", api).with_state(state);
    match ui {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(get(|| async { Html(FALLBACK_PAGE) })),
    }
}

pub async fn serve(addr: SocketAddr, ui: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::default(), ui)).await
}

/// Runs [`serve`] on a fresh multi-threaded runtime until the server stops.
pub fn serve_blocking(addr: SocketAddr, ui: Option<PathBuf>) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(addr, ui))
}
