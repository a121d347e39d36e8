mod common;

use axum::http::StatusCode;
use common::{answer, get, make_bank, post, start};
use deepcat_rl::{Checkpoint, NetworkConfig, QNetwork};
use deepcat_service::{router, AppState};
use serde_json::json;

fn app(dir: &tempfile::TempDir) -> (AppState, axum::Router) {
    let state = AppState::open(dir.path(), 300).unwrap();
    (state.clone(), router(state))
}

fn events(state: &AppState, id: &str) -> Vec<deepcat_service::SessionEvent> {
    state.store().read_events(id.parse().unwrap()).unwrap()
}

#[tokio::test]
async fn health_and_banks() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(&dir);
    let (s, v) = get(&app, "/healthz").await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("ok")));

    let id = make_bank(&app, 6, 2, 1).await;
    let (s, v) = get(&app, &format!("/banks/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["n_items"], 6);
    assert_eq!(v["loadings"].as_array().unwrap().len(), 6);

    let doc = json!({ "loadings": [[1.0], [0.5]], "intercepts": [0.0, 0.2] });
    let (s, v) = post(&app, "/banks", doc).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");

    let (s, v) = post(&app, "/banks", json!({ "loadings": [[0.0]], "intercepts": [0.0] })).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_bank")));
    let (s, v) = get(&app, "/banks/nope").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_bank")));
    let (s, v) = post(&app, "/banks", json!({ "bogus": 1 })).await;
    assert_eq!(
        (s, v["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_request"))
    );
}

#[tokio::test]
async fn session_creation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (_, app) = app(&dir);
    let bank = make_bank(&app, 6, 2, 1).await;
    let cases = [
        (
            json!({ "bank_id": bank, "selector": "nope" }),
            StatusCode::BAD_REQUEST,
            "unknown_selector",
        ),
        (
            json!({ "bank_id": bank, "selector": "qlearning" }),
            StatusCode::CONFLICT,
            "policy_not_loaded",
        ),
        (
            json!({ "bank_id": "missing", "selector": "mi" }),
            StatusCode::NOT_FOUND,
            "unknown_bank",
        ),
        (
            json!({ "bank_id": bank, "selector": "mi", "config": { "tau2": 0.0 } }),
            StatusCode::BAD_REQUEST,
            "invalid_config",
        ),
        (
            json!({ "bank_id": bank, "selector": "mi", "config": { "horizon": 7 } }),
            StatusCode::BAD_REQUEST,
            "invalid_config",
        ),
    ];
    for (req, status, code) in cases {
        let (s, v) = post(&app, "/sessions", req).await;
        assert_eq!((s, v["code"].as_str()), (status, Some(code)), "{v}");
        assert!(v["message"].is_string());
    }
    let (s, v) = get(&app, "/sessions/00000000-0000-0000-0000-000000000000").await;
    assert_eq!(
        (s, v["code"].as_str()),
        (StatusCode::NOT_FOUND, Some("unknown_session"))
    );
}

#[tokio::test]
async fn answering_until_the_variance_rule_fires() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(&dir);
    let bank = make_bank(&app, 20, 1, 3).await;
    let v = start(&app, &bank, "mi", json!({ "tau2": 0.3, "seed": 5 })).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    assert_eq!(v["status"], "active");
    let mut item = v["item"]["index"].as_u64().unwrap();
    assert!(v["item"]["name"].is_string());
    let mut seq = 1;
    let last = loop {
        let (s, r) = answer(&app, &id, seq, item, 1).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        if r["terminated"].as_bool().unwrap() {
            break r;
        }
        item = r["next_item"]["index"].as_u64().unwrap();
        seq += 1;
    };
    assert_eq!(last["termination"]["reason"], "variance");
    assert_eq!(last["termination"]["termination_step"], seq);
    assert!(last["termination"]["factors"][0]["variance"].as_f64().unwrap() <= 0.3);
    assert!(last["next_item"].is_null());

    let (s, dup) = answer(&app, &id, seq, item, 1).await;
    assert_eq!((s, &dup), (StatusCode::OK, &last));
    let (s, v) = answer(&app, &id, seq + 1, 0, 1).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::GONE, Some("session_terminated")));

    let (_, st) = get(&app, &format!("/sessions/{id}/state")).await;
    assert_eq!(st["status"], "terminated");
    assert_eq!(st["termination"], last["termination"]);

    let ev = events(&state, &id);
    assert_eq!(ev.len() as u64, seq + 1);
    assert!(ev.windows(2).all(|w| w[0].sequence < w[1].sequence));
    assert_eq!(ev.last().unwrap().kind, deepcat_service::EventKind::Terminated);
}

#[tokio::test]
async fn horizon_termination_and_sequence_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(&dir);
    let bank = make_bank(&app, 8, 2, 2).await;
    let v = start(&app, &bank, "eap_kl", json!({ "tau2": 1e-6, "horizon": 3, "seed": 1 })).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let first = v["item"]["index"].as_u64().unwrap();

    let other = (first + 1) % 8;
    let (s, e) = answer(&app, &id, 1, other, 0).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("item_mismatch")));
    let (s, e) = answer(&app, &id, 2, first, 0).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("stale_sequence")));
    let (s, e) = answer(&app, &id, 1, first, 2).await;
    assert_eq!(
        (s, e["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_response"))
    );
    assert_eq!(events(&state, &id).len(), 1);

    let (s, r1) = answer(&app, &id, 1, first, 0).await;
    assert_eq!(s, StatusCode::OK);
    let (s, again) = answer(&app, &id, 1, first, 0).await;
    assert_eq!((s, &again), (StatusCode::OK, &r1));
    assert_eq!(events(&state, &id).len(), 2);
    let (s, e) = answer(&app, &id, 1, first, 1).await;
    assert_eq!(
        (s, e["code"].as_str()),
        (StatusCode::CONFLICT, Some("sequence_conflict"))
    );

    let mut item = r1["next_item"]["index"].as_u64().unwrap();
    let (_, r2) = answer(&app, &id, 2, item, 1).await;
    item = r2["next_item"]["index"].as_u64().unwrap();
    let (_, r3) = answer(&app, &id, 3, item, 0).await;
    assert_eq!(r3["terminated"], true);
    assert_eq!(r3["termination"]["reason"], "horizon");
    assert_eq!(r3["termination"]["termination_step"], 3);

    let (_, info) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(info["items"].as_array().unwrap().len(), 3);
    assert_eq!(info["status"], "terminated");
    assert_eq!(events(&state, &id).len(), 4);
}

#[tokio::test]
async fn state_reads_are_stable_and_start_at_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(&dir);
    let bank = make_bank(&app, 10, 2, 4).await;
    let v = start(&app, &bank, "max_var", json!({ "seed": 9, "n_samples": 2000 })).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let (s, st) = get(&app, &format!("/sessions/{id}/state")).await;
    assert_eq!(s, StatusCode::OK);
    for f in st["factors"].as_array().unwrap() {
        assert_eq!(f["mean"], 0.0);
        assert_eq!(f["variance"], 1.0);
        let hi = f["interval"][1].as_f64().unwrap();
        assert!((hi - 1.644_853_626_951_472_2).abs() < 1e-9);
    }
    assert_eq!(st["remaining"], 10);
    assert_eq!(st["psi"].as_array().unwrap().len(), 10);
    assert_eq!(st["psi"][0]["quantiles"].as_array().unwrap().len(), 11);

    let item = v["item"]["index"].as_u64().unwrap();
    answer(&app, &id, 1, item, 1).await;
    let (_, a) = get(&app, &format!("/sessions/{id}/state")).await;
    let (_, b) = get(&app, &format!("/sessions/{id}/state")).await;
    for c in 0..2 {
        let (ma, mb) = (
            a["factors"][c]["mean"].as_f64().unwrap(),
            b["factors"][c]["mean"].as_f64().unwrap(),
        );
        let var = a["factors"][c]["variance"].as_f64().unwrap();
        assert!((ma - mb).abs() <= 3.0 * (var / 2000.0).sqrt());
    }
    assert_eq!(a["step"], 1);
    assert_eq!(a["history"][0]["item"], item);
    assert_eq!(a["psi"].as_array().unwrap().len(), 9);
    assert_eq!(events(&state, &id).len(), 2);
}

#[tokio::test]
async fn policies_and_abort() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(&dir);
    let bank = make_bank(&app, 6, 2, 1).await;
    let net = QNetwork::new(NetworkConfig::new(2, 6).with_width(8)).unwrap();
    let ckpt = serde_json::to_value(Checkpoint::from_network(&net, 12, Some(-3.5))).unwrap();
    let (s, p) = post(&app, "/policies", ckpt).await;
    assert_eq!(s, StatusCode::CREATED, "{p}");
    assert_eq!(p["n_items"], 6);

    let v = start(&app, &bank, "qlearning", json!({ "seed": 2 })).await;
    let id = v["session_id"].as_str().unwrap().to_string();
    assert!(v["item"]["index"].as_u64().unwrap() < 6);
    let (_, info) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(info["selector"], "qlearning");
    assert_eq!(info["policy_id"], p["policy_id"]);

    let (s, a) = post(&app, &format!("/sessions/{id}/abort"), json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(a["status"], "aborted");
    assert_eq!(a["termination"]["reason"], "aborted");
    let (s, _) = post(&app, &format!("/sessions/{id}/abort"), json!({})).await;
    assert_eq!(s, StatusCode::GONE);
    assert_eq!(events(&state, &id).len(), 2);

    let other = make_bank(&app, 7, 2, 1).await;
    let (s, e) = post(&app, "/sessions", json!({ "bank_id": other, "selector": "qlearning" })).await;
    assert_eq!(
        (s, e["code"].as_str()),
        (StatusCode::BAD_REQUEST, Some("invalid_config"))
    );
    let (s, e) = post(&app, "/policies", json!({ "version": 1 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{e}");
}

#[tokio::test]
async fn prior_already_below_threshold_terminates_at_creation() {
    let dir = tempfile::tempdir().unwrap();
    let (state, app) = app(&dir);
    let bank = make_bank(&app, 5, 2, 1).await;
    let v = start(&app, &bank, "mi", json!({ "tau2": 2.0 })).await;
    assert_eq!(v["status"], "terminated");
    assert!(v["item"].is_null());
    assert_eq!(v["termination"]["termination_step"], 0);
    let id = v["session_id"].as_str().unwrap();
    assert_eq!(events(&state, id).len(), 1);
}
