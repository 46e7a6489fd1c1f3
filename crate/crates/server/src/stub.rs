//! Canned chat-completion endpoint for offline tests and demos.
//!
//! Replies are served in order and cycle. Token counts are whitespace word
//! counts of the prompt and the reply.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

#[derive(Debug, Default)]
pub struct StubState {
    replies: Vec<String>,
    /// When set every request is answered with this status.
    forced_status: Option<u16>,
    hits: AtomicUsize,
    requests: Mutex<Vec<Value>>,
}

impl StubState {
    pub fn new(replies: Vec<String>, forced_status: Option<u16>) -> Self {
        Self {
            replies,
            forced_status,
            ..Default::default()
        }
    }

    pub fn from_dir(dir: impl AsRef<Path>, forced_status: Option<u16>) -> std::io::Result<Self> {
        Ok(Self::new(read_replies(dir)?, forced_status))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().expect("stub lock").clone()
    }
}

/// One reply per file, in file-name order.
pub fn read_replies(dir: impl AsRef<Path>) -> std::io::Result<Vec<String>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    paths.iter().map(std::fs::read_to_string).collect()
}

fn words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

async fn complete(State(state): State<Arc<StubState>>, Json(body): Json<Value>) -> Response {
    let n = state.hits.fetch_add(1, Ordering::SeqCst);
    state.requests.lock().expect("stub lock").push(body.clone());
    if let Some(code) = state.forced_status {
        let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return (status, "stub forced failure").into_response();
    }
    if state.replies.is_empty() {
        return (StatusCode::SERVICE_UNAVAILABLE, "stub has no replies").into_response();
    }
    let reply = &state.replies[n % state.replies.len()];
    let prompt: u64 = body
        .get("messages")
        .and_then(Value::as_array)
        .map(|ms| ms.iter().filter_map(|m| m.get("content")?.as_str()).map(words).sum())
        .unwrap_or(0);
    Json(json!({
        "id": format!("stub-{n}"),
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": prompt, "completion_tokens": words(reply), "total_tokens": prompt + words(reply)},
    }))
    .into_response()
}

pub fn router(state: Arc<StubState>) -> Router {
    Router::new()
        .route("/chat/completions", post(complete))
        .route("/v1/chat/completions", post(complete))
        .with_state(state)
}

pub struct StubHandle {
    pub addr: SocketAddr,
    pub state: Arc<StubState>,
    stop: Option<oneshot::Sender<()>>,
}

impl StubHandle {
    /// Base URL for `LlmConfig::new`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for StubHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

pub async fn spawn(addr: SocketAddr, state: StubState) -> std::io::Result<StubHandle> {
    let state = Arc::new(state);
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone());
    tokio::spawn(async move {
        let shutdown = async {
            let _ = rx.await;
        };
        if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
            log::error!("stub stopped: {e}");
        }
    });
    Ok(StubHandle {
        addr,
        state,
        stop: Some(tx),
    })
}
