//! REST service for live adaptive test sessions.
//!
//! | method | path                        | body / result                      |
//! |--------|-----------------------------|------------------------------------|
//! | GET    | `/healthz`                  | `{"status": "ok"}`                 |
//! | POST   | `/banks`                    | bank document or `{"generate": ..}`|
//! | GET    | `/banks/{id}`               | bank document                      |
//! | POST   | `/policies`                 | Q-network checkpoint               |
//! | POST   | `/sessions`                 | `{bank_id, selector, config?}`     |
//! | GET    | `/sessions/{id}`            | session record                     |
//! | POST   | `/sessions/{id}/responses`  | `{sequence, item, value}`          |
//! | GET    | `/sessions/{id}/state`      | posterior summary                  |
//! | POST   | `/sessions/{id}/abort`      | termination summary                |
//!
//! Errors are `{"code", "message"}` with a matching HTTP status.

pub mod error;
pub mod live;
pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use deepcat_core::mirt::{generate_bank, BankDocument};
use deepcat_core::{derive_seed, BankGenConfig, ItemBank};
use deepcat_harness::{Selector, SessionConfig};
use deepcat_rl::{Checkpoint, QNetwork};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use uuid::Uuid;

pub use error::{ApiError, ApiResult, ErrorBody};
pub use live::{
    EventKind, LiveSession, ResponseReply, ResponseRequest, SessionEvent, SessionInfo, SessionSnapshot, StatePayload,
    Status, TerminationReason,
};
pub use store::Store;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    /// Posterior draws per step unless a session overrides it.
    pub default_samples: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            default_samples: 2000,
        }
    }
}

impl ServiceConfig {
    /// Read `CAT_BIND`, `CAT_DATA_DIR` and `CAT_SAMPLES`, falling back to defaults.
    pub fn from_env() -> Result<Self, String> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("CAT_BIND") {
            cfg.bind = v.parse().map_err(|e| format!("CAT_BIND={v}: {e}"))?;
        }
        if let Ok(v) = std::env::var("CAT_DATA_DIR") {
            cfg.data_dir = PathBuf::from(v);
        }
        if let Ok(v) = std::env::var("CAT_SAMPLES") {
            cfg.default_samples = v.parse().map_err(|e| format!("CAT_SAMPLES={v}: {e}"))?;
        }
        Ok(cfg)
    }
}

type SessionSlot = Arc<Mutex<LiveSession>>;

struct Inner {
    store: Store,
    default_samples: usize,
    banks: RwLock<HashMap<String, Arc<ItemBank>>>,
    policies: RwLock<HashMap<String, Arc<QNetwork>>>,
    latest_policy: RwLock<Option<String>>,
    sessions: RwLock<HashMap<Uuid, SessionSlot>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn read<T>(l: &RwLock<T>) -> std::sync::RwLockReadGuard<'_, T> {
    l.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(l: &RwLock<T>) -> std::sync::RwLockWriteGuard<'_, T> {
    l.write().unwrap_or_else(|e| e.into_inner())
}

fn lock(slot: &SessionSlot) -> std::sync::MutexGuard<'_, LiveSession> {
    slot.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    /// Open the data directory and restore every persisted bank, policy and session.
    pub fn open(data_dir: impl Into<PathBuf>, default_samples: usize) -> ApiResult<Self> {
        let store = Store::open(data_dir)?;
        let mut banks = HashMap::new();
        for (id, doc) in store.load_banks()? {
            let bank = ItemBank::try_from(doc).map_err(|e| ApiError::internal(format!("bank {id}: {e}")))?;
            banks.insert(id, Arc::new(bank));
        }
        let mut policies = HashMap::new();
        let mut latest = None;
        for (id, ckpt) in store.load_policies()? {
            let net = ckpt
                .to_network()
                .map_err(|e| ApiError::internal(format!("policy {id}: {e}")))?;
            policies.insert(id.clone(), Arc::new(net));
            latest = Some(id);
        }
        let mut sessions = HashMap::new();
        for snap in store.load_sessions()? {
            let id = snap.id;
            let bank = banks
                .get(&snap.bank_id)
                .cloned()
                .ok_or_else(|| ApiError::internal(format!("session {id}: bank {} missing", snap.bank_id)))?;
            let policy = snap.policy_id.as_ref().and_then(|p| policies.get(p).cloned());
            let selector = Selector::parse(&snap.selector, policy)?;
            let live = LiveSession::restore(snap, bank, selector)?;
            sessions.insert(id, Arc::new(Mutex::new(live)));
        }
        tracing::info!(
            banks = banks.len(),
            policies = policies.len(),
            sessions = sessions.len(),
            "restored data directory"
        );
        Ok(Self(Arc::new(Inner {
            store,
            default_samples,
            banks: RwLock::new(banks),
            policies: RwLock::new(policies),
            latest_policy: RwLock::new(latest),
            sessions: RwLock::new(sessions),
        })))
    }

    pub fn store(&self) -> &Store {
        &self.0.store
    }

    fn bank(&self, id: &str) -> ApiResult<Arc<ItemBank>> {
        read(&self.0.banks)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_bank", format!("no bank {id:?}")))
    }

    fn session(&self, id: &str) -> ApiResult<SessionSlot> {
        let missing = || ApiError::not_found("unknown_session", format!("no session {id:?}"));
        let uuid = Uuid::parse_str(id).map_err(|_| missing())?;
        read(&self.0.sessions).get(&uuid).cloned().ok_or_else(missing)
    }

    fn policy(&self, id: Option<&str>) -> ApiResult<Option<(String, Arc<QNetwork>)>> {
        let id = match id {
            Some(id) => id.to_string(),
            None => match read(&self.0.latest_policy).clone() {
                Some(id) => id,
                None => return Ok(None),
            },
        };
        match read(&self.0.policies).get(&id) {
            Some(net) => Ok(Some((id, net.clone()))),
            None => Err(ApiError::not_found("unknown_policy", format!("no policy {id:?}"))),
        }
    }
}

/// Build the router over an opened state.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/banks", post(create_bank))
        .route("/banks/{id}", get(get_bank))
        .route("/policies", post(upload_policy))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/responses", post(submit_response))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/abort", post(abort_session))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::open(&cfg.data_dir, cfg.default_samples).map_err(|e| std::io::Error::other(e.to_string()))?;
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("invalid_request", e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum BankRequest {
    Generate { generate: BankGenConfig },
    Document(BankDocument),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BankInfo {
    pub bank_id: String,
    pub n_items: usize,
    pub n_factors: usize,
    #[serde(flatten)]
    pub document: BankDocument,
}

fn bank_info(id: String, bank: &ItemBank) -> BankInfo {
    BankInfo {
        bank_id: id,
        n_items: bank.n_items(),
        n_factors: bank.n_factors(),
        document: BankDocument::from(bank.clone()),
    }
}

async fn create_bank(
    State(state): State<AppState>,
    payload: Result<Json<BankRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<BankInfo>)> {
    let bank = match body(payload)? {
        BankRequest::Generate { generate } => generate_bank(&generate),
        BankRequest::Document(doc) => ItemBank::try_from(doc),
    }
    .map_err(|e| ApiError::bad_request("invalid_bank", e.to_string()))?;
    let id = Uuid::new_v4().to_string();
    state.store().save_bank(&id, &BankDocument::from(bank.clone()))?;
    let info = bank_info(id.clone(), &bank);
    write(&state.0.banks).insert(id, Arc::new(bank));
    Ok((StatusCode::CREATED, Json(info)))
}

async fn get_bank(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BankInfo>> {
    let bank = state.bank(&id)?;
    Ok(Json(bank_info(id, &bank)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInfo {
    pub policy_id: String,
    pub n_items: usize,
    pub n_factors: usize,
    pub episode: usize,
    pub mean_reward: Option<f64>,
}

async fn upload_policy(
    State(state): State<AppState>,
    payload: Result<Json<Checkpoint>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<PolicyInfo>)> {
    let ckpt = body(payload)?;
    let net = ckpt
        .to_network()
        .map_err(|e| ApiError::bad_request("invalid_policy", e.to_string()))?;
    let id = Uuid::new_v4().to_string();
    state.store().save_policy(&id, &ckpt)?;
    let info = PolicyInfo {
        policy_id: id.clone(),
        n_items: net.config.n_items,
        n_factors: net.config.n_factors,
        episode: ckpt.episode,
        mean_reward: ckpt.mean_reward,
    };
    write(&state.0.policies).insert(id.clone(), Arc::new(net));
    *write(&state.0.latest_policy) = Some(id);
    Ok((StatusCode::CREATED, Json(info)))
}

/// Optional overrides of the session configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOverrides {
    pub tau2: Option<f64>,
    /// Prioritized factors, 0-based.
    pub priority: Option<Vec<usize>>,
    pub horizon: Option<usize>,
    pub n_samples: Option<usize>,
    pub priority_selection: Option<bool>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub bank_id: String,
    pub selector: String,
    /// Checkpoint for `qlearning`; defaults to the most recently uploaded one.
    #[serde(default)]
    pub policy_id: Option<String>,
    #[serde(default)]
    pub config: SessionOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionReply {
    pub session_id: Uuid,
    pub status: Status,
    pub item: Option<live::ItemRef>,
    pub termination: Option<live::TerminationSummary>,
}

/// Per-session seed derived from the session id.
pub fn session_seed(id: Uuid) -> u64 {
    let (hi, lo) = id.as_u64_pair();
    derive_seed(hi, lo)
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreateSessionReply>)> {
    let req = body(payload)?;
    let bank = state.bank(&req.bank_id)?;
    let (selector, policy_id) = if req.selector == "qlearning" {
        match state.policy(req.policy_id.as_deref())? {
            Some((id, net)) => (Selector::QLearning(net), Some(id)),
            None => return Err(deepcat_harness::HarnessError::PolicyNotLoaded.into()),
        }
    } else {
        (Selector::parse(&req.selector, None)?, None)
    };
    let id = Uuid::new_v4();
    let o = req.config;
    let cfg = SessionConfig {
        tau2: o.tau2.unwrap_or(SessionConfig::default().tau2),
        priority: o.priority.unwrap_or_else(|| vec![0]),
        horizon: o
            .horizon
            .unwrap_or_else(|| bank.n_items().min(SessionConfig::default().horizon)),
        n_samples: o.n_samples.unwrap_or(state.0.default_samples),
        priority_selection: o.priority_selection.unwrap_or(true),
        seed: o.seed.unwrap_or_else(|| session_seed(id)),
        ..SessionConfig::default()
    };
    let st = state.clone();
    let reply = blocking(move || {
        let (live, event) = LiveSession::create(id, req.bank_id, bank, selector, policy_id, cfg)?;
        st.store().persist(&live.snapshot(), &event)?;
        let info = live.info();
        write(&st.0.sessions).insert(id, Arc::new(Mutex::new(live)));
        Ok(CreateSessionReply {
            session_id: id,
            status: info.status,
            item: info.pending_item,
            termination: info.termination,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(reply)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let slot = state.session(&id)?;
    let info = lock(&slot).info();
    Ok(Json(info))
}

async fn submit_response(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<ResponseRequest>, JsonRejection>,
) -> ApiResult<Json<ResponseReply>> {
    let slot = state.session(&id)?;
    let req = body(payload)?;
    let st = state.clone();
    let reply = blocking(move || {
        let mut live = lock(&slot);
        let before = live.clone();
        let (reply, event) = live.submit(&req)?;
        if let Some(event) = event {
            if let Err(e) = st.store().persist(&live.snapshot(), &event) {
                *live = before;
                return Err(e.into());
            }
        }
        Ok(reply)
    })
    .await?;
    Ok(Json(reply))
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StatePayload>> {
    let slot = state.session(&id)?;
    let payload = blocking(move || lock(&slot).state()).await?;
    Ok(Json(payload))
}

async fn abort_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let slot = state.session(&id)?;
    let st = state.clone();
    let info = blocking(move || {
        let mut live = lock(&slot);
        let before = live.clone();
        let event = live.abort()?;
        if let Err(e) = st.store().persist(&live.snapshot(), &event) {
            *live = before;
            return Err(e.into());
        }
        Ok(live.info())
    })
    .await?;
    Ok(Json(info))
}
