mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::default_data;
use shadowpipe::bench::regex_edit;
use shadowpipe::engine::LatencyConfig;
use shadowpipe::server::{router, AppState};
use shadowpipe::shadow::{PipelineKind, ShadowConfig};

fn app() -> Router {
    let state = AppState::new(default_data().clone(), LatencyConfig::default(), ShadowConfig::default());
    router(state, None)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => request
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => request.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

/// Polls the suggestion list until analysis settles.
async fn settled(app: &Router, id: &str) -> Value {
    for _ in 0..600 {
        let (status, body) = call(app, Method::GET, &format!("/sessions/{id}/suggestions"), None).await;
        assert_eq!(status, StatusCode::OK);
        if body["analyzing"] == false {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("analysis of {id} did not finish");
}

async fn create(app: &Router, plan: Value) -> String {
    let (status, body) = call(app, Method::POST, "/sessions", Some(json!({ "plan": plan }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn health_check_answers() {
    let (status, body) = call(&app(), Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "ok");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_lifecycle() {
    let app = app();
    let id = create(&app, json!("rag")).await;
    let list = settled(&app, &id).await;
    let suggestions = list["suggestions"].as_array().unwrap();
    assert_eq!(suggestions.len(), 3);
    assert!(suggestions.iter().all(|s| s["status"] == "ready"));

    let (status, session) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(session["status"], "ready");
    let before = session["metrics"]["accuracy"].as_f64().unwrap();

    let top = suggestions[0]["id"].as_str().unwrap().to_string();
    let other = suggestions[1]["id"].as_str().unwrap().to_string();
    let (status, expl) = call(&app, Method::GET, &format!("/sessions/{id}/explanations/{top}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let n = expl["explanation"].as_array().unwrap().len();
    assert!((1..=10).contains(&n));

    let (status, applied) = call(&app, Method::POST, &format!("/sessions/{id}/suggestions/{top}/apply"), None).await;
    assert_eq!(status, StatusCode::OK, "{applied}");
    assert_eq!(applied["suggestion"]["status"], "applied");
    assert!(applied["accuracy"].as_f64().unwrap() >= before);

    // applying twice conflicts
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/suggestions/{top}/apply"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let list = settled(&app, &id).await;
    let statuses: Vec<&str> = list["suggestions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["status"].as_str().unwrap())
        .collect();
    assert!(statuses.contains(&"applied"));

    let (status, dismissed) = call(&app, Method::POST, &format!("/sessions/{id}/suggestions/{other}/dismiss"), None).await;
    if status == StatusCode::OK {
        assert_eq!(dismissed["suggestion"]["status"], "dismissed");
    } else {
        // re-analysis replaced the suggestion under a new id
        assert_eq!(status, StatusCode::NOT_FOUND);
    }

    let (_, session) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(session["history"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn plan_edit_reports_policy() {
    let app = app();
    let id = create(&app, json!("rag")).await;
    settled(&app, &id).await;
    let plan = regex_edit(&PipelineKind::Rag.plan()).unwrap();
    let body = json!({ "plan": serde_json::to_value(&plan).unwrap() });
    let (status, report) = call(&app, Method::PUT, &format!("/sessions/{id}/plan"), Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["policy"]["enabled"], true);
    assert!(report["maintenance"]["invocations"].get("embed").is_none());
    let list = settled(&app, &id).await;
    assert!(!list["suggestions"].as_array().unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn errors_have_status_codes() {
    let app = app();
    let (status, _) = call(&app, Method::GET, "/sessions/s999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let bad = json!({"plan": {"nodes": [], "outputs": ["missing"]}});
    let (status, body) = call(&app, Method::POST, "/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid plan");
    assert!(!body["errors"].as_array().unwrap().is_empty());

    let id = create(&app, json!("train")).await;
    settled(&app, &id).await;
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/suggestions/nope/apply"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/explanations/nope"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let bad_edit = json!({"plan": {"nodes": [], "outputs": ["x"]}});
    let (status, _) = call(&app, Method::PUT, &format!("/sessions/{id}/plan"), Some(bad_edit)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}
