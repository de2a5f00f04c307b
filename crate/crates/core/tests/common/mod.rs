#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

/// Models served by [`FakeService`]:
/// - `bert-base`   masked `[MASK]`, fixed scores
/// - `roberta-base` masked `<mask>`, fixed scores
/// - `gpt2-medium` causal, fixed scores
/// - `warming`     masked `[MASK]`, answers 503 for the first `warmup` calls
/// - `garbage`     masked `[MASK]`, answers 200 with a non-JSON body
pub struct FakeService {
    pub addr: SocketAddr,
    pub calls: Arc<AtomicU32>,
}

#[derive(Clone)]
struct AppState {
    calls: Arc<AtomicU32>,
    warmup_left: Arc<AtomicU32>,
}

const SCORES: [(&str, f64); 6] = [
    ("she", 0.31),
    ("he", 0.22),
    ("it", 0.08),
    ("woman", 0.05),
    ("man", 0.04),
    ("they", 0.02),
];

async fn models() -> Json<Value> {
    Json(json!({"models": [
        {"id": "bert-base", "mode": "masked", "mask_token": "[MASK]"},
        {"id": "roberta-base", "mode": "masked", "mask_token": "<mask>"},
        {"id": "gpt2-medium", "mode": "causal"},
        {"id": "warming", "mode": "masked", "mask_token": "[MASK]"},
        {"id": "garbage", "mode": "masked", "mask_token": "[MASK]"},
    ]}))
}

async fn score(State(state): State<AppState>, body: String) -> (StatusCode, String) {
    state.calls.fetch_add(1, Ordering::SeqCst);
    let Ok(req) = serde_json::from_str::<Value>(&body) else {
        return (StatusCode::BAD_REQUEST, r#"{"error":"malformed"}"#.into());
    };
    let model = req["model"].as_str().unwrap_or_default();
    let text = req["text"].as_str().unwrap_or_default();
    let top_k = req["top_k"].as_u64().unwrap_or(0) as usize;
    let masks = text.matches("[MASK]").count() + text.matches("<mask>").count();
    let masked = match model {
        "bert-base" | "roberta-base" | "warming" | "garbage" => true,
        "gpt2-medium" => false,
        _ => return (StatusCode::NOT_FOUND, r#"{"error":"unknown model"}"#.into()),
    };
    if (masked && masks != 1) || (!masked && masks != 0) || top_k == 0 {
        return (StatusCode::BAD_REQUEST, r#"{"error":"mask count"}"#.into());
    }
    if model == "warming" {
        let left = state.warmup_left.load(Ordering::SeqCst);
        if left > 0 {
            state.warmup_left.store(left - 1, Ordering::SeqCst);
            return (StatusCode::SERVICE_UNAVAILABLE, r#"{"error":"loading"}"#.into());
        }
    }
    if model == "garbage" {
        return (StatusCode::OK, "<html>oops</html>".into());
    }
    let scores: Vec<Value> = SCORES
        .iter()
        .take(top_k)
        .map(|(t, p)| json!({"token": t, "p": p}))
        .collect();
    (StatusCode::OK, json!({ "scores": scores }).to_string())
}

impl FakeService {
    pub fn start(warmup: u32) -> Self {
        let calls = Arc::new(AtomicU32::new(0));
        let state = AppState {
            calls: calls.clone(),
            warmup_left: Arc::new(AtomicU32::new(warmup)),
        };
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().expect("runtime");
            rt.block_on(async move {
                let app = Router::new()
                    .route("/v1/models", get(models))
                    .route("/v1/score", post(score))
                    .with_state(state);
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
                tx.send(listener.local_addr().expect("addr")).expect("send addr");
                axum::serve(listener, app).await.expect("serve");
            });
        });
        let addr = rx.recv().expect("service address");
        FakeService { addr, calls }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}
