use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use surgassist_core::functions::*;
use surgassist_core::orchestrator::*;

#[derive(Default)]
struct Hits(AtomicUsize);

async fn serve(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

fn probe_detections(target: &str) -> Vec<Detection> {
    fixture_detect(&probe_scene(), target)
}

async fn function_stub() -> (String, Arc<Hits>) {
    let hits = Arc::new(Hits::default());
    let app = Router::new()
        .route(
            "/detect",
            post(|Json(body): Json<Value>| async move {
                assert!(body["image"].is_string());
                let target = body["params"]["target"].as_str().unwrap_or_default().to_string();
                Json(json!({ "detections": probe_detections(&target) }))
            }),
        )
        .route("/malformed", post(|| async { "{\"detections\": [oops" }))
        .route(
            "/out_of_range",
            post(|| async { Json(json!({"detections": [{"class_name": "tumor", "bbox": [0.5, 0.5, 1.4, 0.9], "score": 0.9}]})) }),
        )
        .route(
            "/flaky",
            post(|State(h): State<Arc<Hits>>| async move {
                if h.0.fetch_add(1, Ordering::SeqCst) < 2 {
                    (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({})))
                } else {
                    (StatusCode::OK, Json(json!({ "detections": probe_detections("tumor") })))
                }
            }),
        )
        .route("/missing", post(|| async { (StatusCode::NOT_FOUND, "no") }))
        .with_state(Arc::clone(&hits));
    (serve(app).await, hits)
}

fn remote(base: &str, path: &str) -> RemoteFunction {
    let mut cfg = RemoteFunctionConfig::new(format!("{base}{path}"), OutputKind::Detections);
    cfg.backoff = Duration::from_millis(5);
    RemoteFunction::new(cfg).unwrap()
}

fn request() -> FunctionRequest {
    let mut r = FunctionRequest::new("probe_scene").param("target", "navigation probe");
    r.image = Some(Arc::from(&b"P6 fake"[..]));
    r
}

#[tokio::test]
async fn remote_detection_matches_fixture() {
    let (base, _) = function_stub().await;
    let got = remote(&base, "/detect").call(&request()).await.unwrap();
    assert_eq!(got, FunctionResult::Detections { detections: probe_detections("navigation probe") });
}

#[tokio::test]
async fn malformed_body_is_a_schema_failure() {
    let (base, _) = function_stub().await;
    let err = remote(&base, "/malformed").call(&request()).await.unwrap_err();
    assert!(matches!(err, FunctionError::Failed { cause: FailureCause::Schema, .. }), "{err:?}");
}

#[tokio::test]
async fn out_of_range_box_is_a_validation_failure() {
    let (base, _) = function_stub().await;
    let err = remote(&base, "/out_of_range").call(&request()).await.unwrap_err();
    assert!(matches!(err, FunctionError::Failed { cause: FailureCause::Validation, .. }), "{err:?}");
}

#[tokio::test]
async fn server_errors_are_retried() {
    let (base, hits) = function_stub().await;
    let got = remote(&base, "/flaky").call(&request()).await.unwrap();
    assert!(!got.is_empty());
    assert_eq!(hits.0.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (base, _) = function_stub().await;
    let err = remote(&base, "/missing").call(&request()).await.unwrap_err();
    assert!(matches!(err, FunctionError::Failed { cause: FailureCause::Status(404), .. }));
}

async fn backend_stub(script: ScriptedBackend) -> (String, Arc<Hits>) {
    let hits = Arc::new(Hits::default());
    let script = Arc::new(script);
    let chat = {
        let script = Arc::clone(&script);
        move |Json(body): Json<Value>| {
            let script = Arc::clone(&script);
            async move {
                let msgs = body["messages"].as_array().unwrap();
                let user = msgs.iter().rev().find(|m| m["role"] == "user").unwrap();
                let after = msgs.last().unwrap()["role"] == "function";
                let reply = script.reply_for(user["content"].as_str().unwrap(), user["image"].as_str(), after);
                Json(json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}))
            }
        }
    };
    let app = Router::new()
        .route("/chat", post(chat))
        .route(
            "/down",
            post(|State(h): State<Arc<Hits>>| async move {
                h.0.fetch_add(1, Ordering::SeqCst);
                StatusCode::INTERNAL_SERVER_ERROR
            }),
        )
        .route(
            "/slow",
            post(|| async {
                tokio::time::sleep(Duration::from_secs(5)).await;
                Json(json!({"content": "late"}))
            }),
        )
        .with_state(Arc::clone(&hits));
    (serve(app).await, hits)
}

fn orchestrator(backend: impl LlmBackend + 'static, timeout: Duration) -> Orchestrator {
    let bundle = Arc::new(FixtureBundle::synthetic(0, 2));
    Orchestrator::new(Arc::new(backend), Arc::new(default_registry(Arc::clone(&bundle))))
        .with_fixtures(bundle)
        .with_config(OrchestratorConfig {
            backend_timeout: timeout,
            ..Default::default()
        })
}

fn backend(url: String, timeout: Duration) -> RemoteBackend {
    let mut cfg = RemoteBackendConfig::new(url);
    cfg.backoff = Duration::from_millis(5);
    cfg.timeout = timeout;
    RemoteBackend::new(cfg).unwrap()
}

#[tokio::test]
async fn remote_backend_matches_scripted() {
    let (base, _) = backend_stub(ScriptedBackend::probe_demo()).await;
    let image = Some(ImageInput::Ref("probe_scene".into()));
    let local = orchestrator(ScriptedBackend::probe_demo(), Duration::from_secs(5));
    let remote = orchestrator(backend(format!("{base}/chat"), Duration::from_secs(5)), Duration::from_secs(5));
    let mut results = Vec::new();
    for o in [&local, &remote] {
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, PROBE_DEMO_QUERY, image.clone()).await.unwrap();
        results.push((out.final_reply, out.trace.rounds, out.trace.first_raw, out.trace.second_raw));
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0].1, 2);
}

#[tokio::test]
async fn persistent_server_errors_become_backend_unavailable() {
    let (base, hits) = backend_stub(ScriptedBackend::default()).await;
    let o = orchestrator(backend(format!("{base}/down"), Duration::from_secs(5)), Duration::from_secs(5));
    let s = o.create_session().unwrap();
    let out = o.handle_query(&s, "hello", None).await.unwrap();
    match out.trace.error {
        Some(DispatchError::BackendUnavailable { round: 1, ref error }) => {
            assert_eq!(error.attempts, 3);
            assert_eq!(error.cause, BackendCause::Status(500));
        }
        ref other => panic!("{other:?}"),
    }
    assert_eq!(hits.0.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn slow_backend_times_out() {
    let (base, _) = backend_stub(ScriptedBackend::default()).await;
    let mut cfg = RemoteBackendConfig::new(format!("{base}/slow"));
    cfg.timeout = Duration::from_millis(100);
    cfg.max_attempts = 1;
    let o = orchestrator(RemoteBackend::new(cfg).unwrap(), Duration::from_secs(5));
    let s = o.create_session().unwrap();
    let out = o.handle_query(&s, "hello", None).await.unwrap();
    let Some(DispatchError::BackendUnavailable { error, .. }) = out.trace.error else {
        panic!("{:?}", out.trace.error)
    };
    assert_eq!(error.cause, BackendCause::Timeout);
}
