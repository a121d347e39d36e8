#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(body)).await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, "GET", uri, None).await
}

pub fn bank_request(j: usize, k: usize, seed: u64) -> Value {
    json!({ "generate": { "n_items": j, "n_factors": k, "max_extra_loadings": k - 1, "seed": seed } })
}

pub async fn make_bank(app: &Router, j: usize, k: usize, seed: u64) -> String {
    let (s, v) = post(app, "/banks", bank_request(j, k, seed)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["bank_id"].as_str().unwrap().to_string()
}

pub async fn start(app: &Router, bank: &str, selector: &str, config: Value) -> Value {
    let (s, v) = post(
        app,
        "/sessions",
        json!({ "bank_id": bank, "selector": selector, "config": config }),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v
}

pub async fn answer(app: &Router, id: &str, sequence: u64, item: u64, value: u8) -> (StatusCode, Value) {
    post(
        app,
        &format!("/sessions/{id}/responses"),
        json!({ "sequence": sequence, "item": item, "value": value }),
    )
    .await
}
