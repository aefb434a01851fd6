//! HTTP and WebSocket front end: `GET /ws` (upgrade), `GET /healthz`,
//! `GET /model/info`, and optionally static files for the browser client.
//!
//! With a stroke log directory, every client message a session sends is
//! appended to `session-<id>.jsonl` there; the file replays offline.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Json};
use axum::routing::get;
use axum::Router;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::protocol::{ClientMessage, ErrorCode, ServerMessage};
use crate::session::{Engine, Session, CANVAS_SIZE};

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Served for any path the API does not claim.
    pub static_dir: Option<PathBuf>,
    pub stroke_log: Option<PathBuf>,
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    next_id: Arc<AtomicU64>,
    stroke_log: Option<PathBuf>,
}

pub fn router(engine: Arc<Engine>, options: ServiceOptions) -> Router {
    let ServiceOptions { static_dir, stroke_log } = options;
    let state = AppState {
        engine,
        next_id: Arc::new(AtomicU64::new(1)),
        stroke_log,
    };
    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/healthz", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/model/info", get(info))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// What a client needs to render the arm and label predictions.
pub fn model_info(engine: &Engine) -> Value {
    let model = &engine.model;
    let joints: Vec<Value> = engine
        .chain
        .joints()
        .iter()
        .map(|j| {
            json!({
                "a": j.link.a,
                "d": j.link.d,
                "alpha": j.link.alpha,
                "theta_offset": j.link.theta_offset,
                "min": j.limit.min,
                "max": j.limit.max,
            })
        })
        .collect();
    json!({
        "classes": model.classes,
        "n_trees": model.n_trees(),
        "feature_count": model.feature_count,
        "forest": model.config,
        "chain": {
            "convention": engine.chain.convention(),
            "base_height": engine.chain.base_height(),
            "joints": joints,
            "tool": engine.chain.tool(),
            "home": engine.chain.home().as_slice(),
        },
        "canvas": {
            "size_m": CANVAS_SIZE,
            "writing_origin": engine.synth.writing_origin.as_slice(),
            "grasp_origin": engine.synth.grasp_origin.as_slice(),
        },
        "sample_rate": engine.sample_rate,
    })
}

async fn info(State(state): State<AppState>) -> Json<Value> {
    Json(model_info(&state.engine))
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let log = state.stroke_log.as_ref().and_then(|dir| {
        let path = dir.join(format!("session-{id}.jsonl"));
        File::create(&path)
            .inspect_err(|err| tracing::warn!(path = %path.display(), %err, "stroke log disabled"))
            .ok()
    });
    ws.on_upgrade(move |socket| run_session(socket, Session::new(id, state.engine), log))
}

async fn run_session(mut socket: WebSocket, mut session: Session, mut log: Option<File>) {
    tracing::debug!(session = session.id(), "connected");
    while let Some(Ok(frame)) = socket.recv().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let replies = match serde_json::from_str::<ClientMessage>(&text) {
            Ok(msg) => {
                // IK is CPU-bound; keep it off the async workers.
                let outcome = tokio::task::spawn_blocking(move || {
                    if let Some(file) = log.as_mut() {
                        let line = serde_json::to_string(&msg).expect("client messages serialize");
                        if let Err(err) = writeln!(file, "{line}") {
                            tracing::warn!(%err, "stroke log write failed");
                        }
                    }
                    let replies = session.handle(msg);
                    (session, log, replies)
                })
                .await;
                match outcome {
                    Ok((s, l, replies)) => {
                        session = s;
                        log = l;
                        replies
                    }
                    Err(err) => {
                        tracing::error!(%err, "session task failed");
                        return;
                    }
                }
            }
            Err(err) => vec![ServerMessage::error(ErrorCode::BadMessage, err.to_string())],
        };
        for reply in replies {
            let body = serde_json::to_string(&reply).expect("server messages serialize");
            if socket.send(Message::Text(body.into())).await.is_err() {
                return;
            }
        }
    }
    tracing::debug!(session = session.id(), "closed");
}

/// Serves the service on an already bound listener until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, engine: Arc<Engine>, options: ServiceOptions) -> std::io::Result<()> {
    axum::serve(listener, router(engine, options)).await
}
