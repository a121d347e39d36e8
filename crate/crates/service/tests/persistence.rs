mod common;

use std::sync::Arc;

use axum::http::StatusCode;
use common::{answer, get, make_bank, start};
use deepcat_core::ItemBank;
use deepcat_harness::SimulatedExaminee;
use deepcat_service::{router, AppState, SessionSnapshot};
use serde_json::{json, Value};

fn snapshot(dir: &std::path::Path, id: &str) -> SessionSnapshot {
    let p = dir.join("sessions").join(id).join("snapshot.json");
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

async fn bank_of(app: &axum::Router, id: &str) -> ItemBank {
    let (_, v) = get(app, &format!("/banks/{id}")).await;
    ItemBank::try_from(serde_json::from_value::<deepcat_core::mirt::BankDocument>(v).unwrap()).unwrap()
}

/// Answer `steps` items (or until termination) from a simulated examinee.
async fn drive(
    app: &axum::Router,
    id: &str,
    ex: &SimulatedExaminee,
    from_seq: u64,
    first: Option<u64>,
    steps: usize,
) -> (Vec<u64>, Option<u64>) {
    let mut items = Vec::new();
    let mut next = first;
    let mut seq = from_seq;
    for _ in 0..steps {
        let Some(item) = next else { break };
        let (s, r) = answer(app, id, seq, item, ex.response(item as usize)).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        items.push(item);
        next = r["next_item"]["index"].as_u64();
        seq += 1;
    }
    (items, next)
}

#[tokio::test]
async fn restart_mid_session_restores_exact_state_and_next_item() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "tau2": 0.05, "horizon": 12, "seed": 41, "n_samples": 500 });

    // uninterrupted reference run
    let ref_dir = tempfile::tempdir().unwrap();
    let ref_app = router(AppState::open(ref_dir.path(), 500).unwrap());
    let ref_bank = make_bank(&ref_app, 15, 2, 8).await;
    let bank = bank_of(&ref_app, &ref_bank).await;
    let ex = SimulatedExaminee::draw(&bank, 3);
    let v = start(&ref_app, &ref_bank, "mi", cfg.clone()).await;
    let ref_id = v["session_id"].as_str().unwrap().to_string();
    let (ref_items, _) = drive(&ref_app, &ref_id, &ex, 1, v["item"]["index"].as_u64(), 12).await;

    let (bank_id, id, done, pending, state_before, info_before) = {
        let app = router(AppState::open(dir.path(), 500).unwrap());
        let bank_id = make_bank(&app, 15, 2, 8).await;
        let v = start(&app, &bank_id, "mi", cfg.clone()).await;
        let id = v["session_id"].as_str().unwrap().to_string();
        let (done, pending) = drive(&app, &id, &ex, 1, v["item"]["index"].as_u64(), 5).await;
        let (_, st) = get(&app, &format!("/sessions/{id}/state")).await;
        let (_, info) = get(&app, &format!("/sessions/{id}")).await;
        (bank_id, id, done, pending, st, info)
    };
    assert_eq!(done, ref_items[..5]);
    let snap_before = snapshot(dir.path(), &id);

    let state = AppState::open(dir.path(), 500).unwrap();
    let app = router(state);
    let (_, st) = get(&app, &format!("/sessions/{id}/state")).await;
    let (_, info) = get(&app, &format!("/sessions/{id}")).await;
    assert_eq!(st, state_before);
    assert_eq!(info, info_before);
    assert_eq!(info["pending_item"]["index"].as_u64(), pending);

    // exact equality of C1, C2, c3 and history after a restore and re-persist
    let bank = Arc::new(bank_of(&app, &bank_id).await);
    let snap = snapshot(dir.path(), &id);
    assert_eq!(snap, snap_before);
    let mut live = deepcat_service::LiveSession::restore(
        snap.clone(),
        bank.clone(),
        deepcat_harness::Selector::parse("mi", None).unwrap(),
    )
    .unwrap();
    assert_eq!(*live.posterior(), snap.posterior);
    let p = live.posterior().clone();
    for t in 0..p.n_steps() {
        assert_eq!(p.c1_row(t), snap_before.posterior.c1_row(t));
    }
    assert_eq!(p.c2(), snap_before.posterior.c2());
    assert_eq!(p.c3(), snap_before.posterior.c3());
    assert_eq!(live.recompute_pending().unwrap().map(|j| j as u64), pending);

    let (rest, _) = drive(&app, &id, &ex, 6, pending, 12).await;
    let all: Vec<u64> = done.iter().chain(&rest).copied().collect();
    assert_eq!(all, ref_items);
}

#[tokio::test]
async fn restart_preserves_duplicate_delivery_reply() {
    let dir = tempfile::tempdir().unwrap();
    let (id, item, reply) = {
        let app = router(AppState::open(dir.path(), 200).unwrap());
        let bank = make_bank(&app, 6, 1, 2).await;
        let v = start(&app, &bank, "max_pos", json!({ "seed": 1 })).await;
        let id = v["session_id"].as_str().unwrap().to_string();
        let item = v["item"]["index"].as_u64().unwrap();
        let (_, r) = answer(&app, &id, 1, item, 0).await;
        (id, item, r)
    };
    let state = AppState::open(dir.path(), 200).unwrap();
    let app = router(state.clone());
    let (s, again) = answer(&app, &id, 1, item, 0).await;
    assert_eq!((s, again), (StatusCode::OK, reply));
    assert_eq!(state.store().read_events(id.parse().unwrap()).unwrap().len(), 2);
}

async fn run_one(app: &axum::Router, bank_id: &str, bank: &ItemBank, i: u64, interleave: bool) -> (Vec<u64>, Value) {
    let ex = SimulatedExaminee::draw(bank, 1000 + i);
    let selector = ["mi", "eap_kl", "max_pos", "max_var", "random"][i as usize % 5];
    let v = start(
        app,
        bank_id,
        selector,
        json!({ "tau2": 0.2, "horizon": 8, "seed": i, "n_samples": 200 }),
    )
    .await;
    let id = v["session_id"].as_str().unwrap().to_string();
    let mut next = v["item"]["index"].as_u64();
    let mut items = Vec::new();
    let mut seq = 1;
    while let Some(item) = next {
        if interleave {
            tokio::task::yield_now().await;
        }
        let (s, r) = answer(app, &id, seq, item, ex.response(item as usize)).await;
        assert_eq!(s, StatusCode::OK);
        items.push(item);
        next = r["next_item"]["index"].as_u64();
        seq += 1;
    }
    let (_, st) = get(app, &format!("/sessions/{id}/state")).await;
    (items, st["termination"].clone())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn hundred_interleaved_sessions_match_serial_execution() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::open(dir.path(), 200).unwrap());
    let bank_id = make_bank(&app, 12, 2, 6).await;
    let bank = bank_of(&app, &bank_id).await;

    let mut serial = Vec::new();
    for i in 0..100 {
        serial.push(run_one(&app, &bank_id, &bank, i, false).await);
    }

    let bank = Arc::new(bank);
    let tasks: Vec<_> = (0..100)
        .map(|i| {
            let (app, bank_id, bank) = (app.clone(), bank_id.clone(), bank.clone());
            tokio::spawn(async move { run_one(&app, &bank_id, &bank, i, true).await })
        })
        .collect();
    for (i, t) in tasks.into_iter().enumerate() {
        assert_eq!(t.await.unwrap(), serial[i], "session {i}");
    }
}
