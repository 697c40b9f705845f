use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde_json::{json, Value};
use surgassist::app::App;
use surgassist::config::ServiceConfig;
use surgassist::server::RunningService;
use surgassist_core::functions::{probe_scene, render_scene_ppm, FixtureBundle};
use surgassist_core::orchestrator::{BackendError, Conversation, LlmBackend, ScriptedBackend, PROBE_DEMO_QUERY};

async fn start(config: &ServiceConfig) -> (RunningService, String) {
    let app = App::from_config(config).unwrap();
    let svc = RunningService::start(app, "127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", svc.addr);
    (svc, base)
}

async fn new_session(c: &reqwest::Client, base: &str) -> String {
    let r = c.post(format!("{base}/v1/sessions")).send().await.unwrap();
    assert_eq!(r.status(), 201);
    r.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_string()
}

async fn post(c: &reqwest::Client, url: String, body: Value) -> (u16, Value) {
    let r = c.post(url).json(&body).send().await.unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

#[tokio::test]
async fn health_and_functions() {
    let (svc, base) = start(&ServiceConfig::default()).await;
    let h: Value = reqwest::get(format!("{base}/v1/health")).await.unwrap().json().await.unwrap();
    assert_eq!(h["status"], "ok");
    assert_eq!(h["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(h["functions"]["names"], json!(["detect", "segment", "analyze_scene"]));
    let f: Value = reqwest::get(format!("{base}/v1/functions")).await.unwrap().json().await.unwrap();
    assert_eq!(f.as_array().unwrap().len(), 3);
    assert_eq!(f[0]["api_name"], "detect");
    svc.stop().await.unwrap();
}

#[tokio::test]
async fn chat_round_trip_and_lookups() {
    let (svc, base) = start(&ServiceConfig::default()).await;
    let c = reqwest::Client::new();
    let s = new_session(&c, &base).await;
    let (status, body) = post(
        &c,
        format!("{base}/v1/sessions/{s}/chat"),
        json!({"message": PROBE_DEMO_QUERY, "image_ref": "probe_scene"}),
    )
    .await;
    assert_eq!(status, 200, "{body}");
    assert!(body["reply"].as_str().unwrap().contains("[0.18, 0.41, 0.45, 0.99]"));
    assert_eq!(body["rounds"], 2);
    assert_eq!(body["error"], Value::Null);
    let trace_id = body["trace_id"].as_str().unwrap();

    let t: Value = reqwest::get(format!("{base}/v1/traces/{trace_id}")).await.unwrap().json().await.unwrap();
    assert_eq!(t["executed_call"]["api_name"], "detect");
    assert_eq!(t["function_result"]["detections"][0]["bbox"], json!([0.18, 0.41, 0.45, 0.99]));
    let snap: Value = reqwest::get(format!("{base}/v1/sessions/{s}")).await.unwrap().json().await.unwrap();
    let roles: Vec<&str> = snap["turns"].as_array().unwrap().iter().map(|t| t["role"].as_str().unwrap()).collect();
    assert_eq!(roles, ["user", "assistant", "function", "assistant"]);
    svc.stop().await.unwrap();
}

#[tokio::test]
async fn uploaded_image_is_resolved_by_content() {
    let (svc, base) = start(&ServiceConfig::default()).await;
    let c = reqwest::Client::new();
    let s = new_session(&c, &base).await;
    let b64 = base64::engine::general_purpose::STANDARD.encode(render_scene_ppm(&probe_scene()));
    let (status, body) = post(
        &c,
        format!("{base}/v1/sessions/{s}/chat"),
        json!({"message": PROBE_DEMO_QUERY, "image_base64": b64}),
    )
    .await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["rounds"], 2);
    assert!(body["image_ref"].as_str().unwrap().starts_with("sha256:"));
    assert!(body["reply"].as_str().unwrap().contains("[0.18, 0.41, 0.45, 0.99]"));
    svc.stop().await.unwrap();
}

#[tokio::test]
async fn bad_requests_get_typed_400s() {
    let (svc, base) = start(&ServiceConfig::default()).await;
    let c = reqwest::Client::new();
    let s = new_session(&c, &base).await;
    let url = format!("{base}/v1/sessions/{s}/chat");

    let r = c.post(&url).body("{\"message\": ").header("content-type", "application/json").send().await.unwrap();
    assert_eq!(r.status(), 400);
    let e: Value = r.json().await.unwrap();
    assert_eq!(e["code"], "invalid_request");
    assert!(e["detail"]["line"].is_number());

    let (status, e) = post(&c, url.clone(), json!({"message": 5})).await;
    assert_eq!(status, 400);
    assert_eq!(e["detail"]["field"], "message");

    let (status, e) = post(&c, url.clone(), json!({"message": "hi", "colour": "red"})).await;
    assert_eq!(status, 400);
    assert!(e["message"].as_str().unwrap().contains("colour"));

    let (status, e) = post(&c, url.clone(), json!({"message": "  "})).await;
    assert_eq!((status, e["detail"]["field"].as_str()), (400, Some("message")));

    let (status, e) = post(&c, url.clone(), json!({"message": "hi", "image_base64": "@@@"})).await;
    assert_eq!((status, e["detail"]["field"].as_str()), (400, Some("image_base64")));

    let (status, e) = post(&c, url.clone(), json!({"message": "hi", "image_ref": "nowhere"})).await;
    assert_eq!((status, e["code"].as_str()), (400, Some("unknown_image")));

    let (status, e) = post(&c, format!("{base}/v1/sessions/s999999/chat"), json!({"message": "hi"})).await;
    assert_eq!((status, e["code"].as_str()), (404, Some("unknown_session")));

    let r = reqwest::get(format!("{base}/v1/traces/nope")).await.unwrap();
    assert_eq!(r.status(), 404);
    let r = reqwest::get(format!("{base}/v1/nothing")).await.unwrap();
    assert_eq!(r.status(), 404);
    assert_eq!(r.json::<Value>().await.unwrap()["code"], "not_found");
    svc.stop().await.unwrap();
}

#[tokio::test]
async fn image_size_cap() {
    let config = ServiceConfig {
        max_image_bytes: 1000,
        ..Default::default()
    };
    let (svc, base) = start(&config).await;
    let c = reqwest::Client::new();
    let s = new_session(&c, &base).await;
    let b64 = base64::engine::general_purpose::STANDARD.encode(vec![7u8; 1001]);
    let (status, e) = post(&c, format!("{base}/v1/sessions/{s}/chat"), json!({"message": "hi", "image_base64": b64})).await;
    assert_eq!((status, e["code"].as_str()), (413, Some("image_too_large")));
    let huge = base64::engine::general_purpose::STANDARD.encode(vec![7u8; 200_000]);
    let r = c
        .post(format!("{base}/v1/sessions/{s}/chat"))
        .json(&json!({"message": "hi", "image_base64": huge}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 413);
    assert_eq!(r.json::<Value>().await.unwrap()["code"], "body_too_large");
    svc.stop().await.unwrap();
}

#[tokio::test]
async fn eval_endpoint() {
    let (svc, base) = start(&ServiceConfig::default()).await;
    let c = reqwest::Client::new();
    let case = json!({"id": "a", "query": PROBE_DEMO_QUERY, "image_ref": "probe_scene", "expect_call": "detect",
                      "keywords": ["navigation probe"], "reference_reply": "The navigation probe is located at [0.18, 0.41, 0.45, 0.99]."});
    let (status, report) = post(&c, format!("{base}/v1/eval"), json!({"cases": [case]})).await;
    assert_eq!(status, 200, "{report}");
    assert_eq!(report["sr"], 100.0);
    assert_eq!(report["bleu4"], 100.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cases.jsonl");
    std::fs::write(&path, format!("{case}\n")).unwrap();
    let (status, report) = post(&c, format!("{base}/v1/eval"), json!({"cases_path": path})).await;
    assert_eq!(status, 200, "{report}");
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);

    let (status, e) = post(&c, format!("{base}/v1/eval"), json!({"cases": []})).await;
    assert_eq!((status, e["code"].as_str()), (400, Some("eval_failed")));
    let (status, _) = post(&c, format!("{base}/v1/eval"), json!({})).await;
    assert_eq!(status, 400);
    svc.stop().await.unwrap();
}

#[tokio::test]
async fn port_in_use_fails_fast() {
    let (svc, _) = start(&ServiceConfig::default()).await;
    let app = App::from_config(&ServiceConfig::default()).unwrap();
    let err = RunningService::start(app, &svc.addr.to_string()).await.err().unwrap();
    assert_eq!(err.exit_code(), surgassist::error::exit::RUNTIME);
    svc.stop().await.unwrap();
}

#[tokio::test]
async fn traces_and_sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        trace_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let c = reqwest::Client::new();
    let (svc, base) = start(&config).await;
    let s = new_session(&c, &base).await;
    let (_, body) = post(
        &c,
        format!("{base}/v1/sessions/{s}/chat"),
        json!({"message": PROBE_DEMO_QUERY, "image_ref": "probe_scene"}),
    )
    .await;
    let trace_id = body["trace_id"].as_str().unwrap().to_string();
    let trace: Value = reqwest::get(format!("{base}/v1/traces/{trace_id}")).await.unwrap().json().await.unwrap();
    let session: Value = reqwest::get(format!("{base}/v1/sessions/{s}")).await.unwrap().json().await.unwrap();
    svc.stop().await.unwrap();

    let (svc, base) = start(&config).await;
    let again: Value = reqwest::get(format!("{base}/v1/traces/{trace_id}")).await.unwrap().json().await.unwrap();
    assert_eq!(again, trace);
    let session_again: Value = reqwest::get(format!("{base}/v1/sessions/{s}")).await.unwrap().json().await.unwrap();
    assert_eq!(session_again, session);
    let s2 = new_session(&c, &base).await;
    assert_ne!(s2, s);
    svc.stop().await.unwrap();
}

struct Slow;

#[async_trait]
impl LlmBackend for Slow {
    async fn generate(&self, c: Conversation<'_>) -> Result<String, BackendError> {
        tokio::time::sleep(Duration::from_millis(300)).await;
        ScriptedBackend::default().generate(c).await
    }
}

#[tokio::test]
async fn shutdown_drains_in_flight_requests() {
    let config = ServiceConfig::default();
    let bundle = Arc::new(FixtureBundle::synthetic(0, 1));
    let app = App::assemble(&config, bundle, Arc::new(Slow), "slow".into()).unwrap();
    let svc = RunningService::start(app, "127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", svc.addr);
    let c = reqwest::Client::new();
    let s = new_session(&c, &base).await;
    let pending = tokio::spawn({
        let c = c.clone();
        async move { post(&c, format!("{base}/v1/sessions/{s}/chat"), json!({"message": "hello"})).await }
    });
    tokio::time::sleep(Duration::from_millis(100)).await;
    svc.stop().await.unwrap();
    let (status, body) = pending.await.unwrap();
    assert_eq!(status, 200);
    assert_eq!(body["rounds"], 1);
}
