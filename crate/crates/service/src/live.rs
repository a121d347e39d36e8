//! Live sessions: the stateful wrapper around a [`SessionEngine`] that the
//! HTTP layer drives, plus its persisted forms.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use deepcat_core::normal;
use deepcat_core::posterior::{prediction_quantiles, quantile_sorted};
use deepcat_core::{ItemBank, SunPosterior};
use deepcat_harness::{Selector, SessionConfig, SessionEngine};
use serde::{Deserialize, Serialize};
use serde_json::json;
use uuid::Uuid;

use crate::error::{ApiError, ApiResult};

pub const SNAPSHOT_VERSION: u32 = 1;

/// Central credible interval level reported in state payloads.
pub const CREDIBLE_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Terminated,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// Every prioritized variance fell to the threshold.
    Variance,
    Horizon,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ItemSelected,
    ResponseRecorded,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: Uuid,
    /// Strictly increasing per session, starting at 1.
    pub sequence: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRef {
    pub index: usize,
    pub name: String,
}

impl ItemRef {
    fn new(bank: &ItemBank, index: usize) -> Self {
        Self {
            index,
            name: bank.name(index).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorBelief {
    pub mean: f64,
    pub variance: f64,
    /// Central 90% credible interval.
    pub interval: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationSummary {
    pub reason: TerminationReason,
    /// Items administered when the session ended.
    pub termination_step: usize,
    pub factors: Vec<FactorBelief>,
}

/// Body returned by `POST /sessions/{id}/responses`. Replayed verbatim for a
/// duplicate delivery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReply {
    pub session_id: Uuid,
    pub sequence: u64,
    pub item: usize,
    pub value: u8,
    pub status: Status,
    pub terminated: bool,
    pub next_item: Option<ItemRef>,
    pub termination: Option<TerminationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRequest {
    /// 1-based index of this response within the session.
    pub sequence: u64,
    pub item: usize,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub item: usize,
    pub name: String,
    pub value: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiRow {
    pub item: usize,
    pub quantiles: Vec<f64>,
}

/// Body of `GET /sessions/{id}/state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub session_id: Uuid,
    pub status: Status,
    pub step: usize,
    pub horizon: usize,
    pub remaining: usize,
    pub tau2: f64,
    pub priority: Vec<usize>,
    pub factors: Vec<FactorBelief>,
    pub max_priority_variance: f64,
    pub pending_item: Option<ItemRef>,
    pub history: Vec<HistoryEntry>,
    pub termination: Option<TerminationSummary>,
    /// Predictive-probability quantiles of every unadministered item.
    pub psi: Vec<PsiRow>,
}

/// Body of `GET /sessions/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: Uuid,
    pub bank_id: String,
    pub selector: String,
    pub policy_id: Option<String>,
    pub config: SessionConfig,
    pub status: Status,
    pub sequence: u64,
    pub items: Vec<usize>,
    pub responses: Vec<u8>,
    pub pending_item: Option<ItemRef>,
    pub termination: Option<TerminationSummary>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// Persisted form of a live session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub version: u32,
    pub id: Uuid,
    pub bank_id: String,
    pub selector: String,
    pub policy_id: Option<String>,
    pub config: SessionConfig,
    pub status: Status,
    pub pending_item: Option<usize>,
    pub termination: Option<TerminationSummary>,
    pub last_reply: Option<ResponseReply>,
    pub events: u64,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    /// Posterior under the session bank; its history is the response log.
    pub posterior: SunPosterior,
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    pub id: Uuid,
    pub bank_id: String,
    pub policy_id: Option<String>,
    engine: SessionEngine,
    status: Status,
    pending: Option<usize>,
    termination: Option<TerminationSummary>,
    last_reply: Option<ResponseReply>,
    events: u64,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
}

impl LiveSession {
    /// Start a session and select its first item.
    pub fn create(
        id: Uuid,
        bank_id: String,
        bank: Arc<ItemBank>,
        selector: Selector,
        policy_id: Option<String>,
        cfg: SessionConfig,
    ) -> ApiResult<(Self, SessionEvent)> {
        let engine = SessionEngine::new(bank, selector, cfg)?;
        let now = Utc::now();
        let mut s = Self {
            id,
            bank_id,
            policy_id,
            engine,
            status: Status::Active,
            pending: None,
            termination: None,
            last_reply: None,
            events: 0,
            created_at: now,
            updated_at: now,
        };
        s.advance()?;
        let (kind, payload) = match s.pending {
            Some(j) => (EventKind::ItemSelected, json!({ "item": j })),
            None => (EventKind::Terminated, json!({ "termination": s.termination })),
        };
        let event = s.event(kind, payload);
        Ok((s, event))
    }

    /// Rebuild from a snapshot by replaying its response history.
    pub fn restore(snap: SessionSnapshot, bank: Arc<ItemBank>, selector: Selector) -> ApiResult<Self> {
        let history = snap.posterior.history().to_vec();
        let engine = SessionEngine::replay(bank, selector, snap.config.clone(), &history)?;
        if *engine.posterior() != snap.posterior {
            return Err(ApiError::internal(format!(
                "session {}: replayed posterior differs from the snapshot",
                snap.id
            )));
        }
        Ok(Self {
            id: snap.id,
            bank_id: snap.bank_id,
            policy_id: snap.policy_id,
            engine,
            status: snap.status,
            pending: snap.pending_item,
            termination: snap.termination,
            last_reply: snap.last_reply,
            events: snap.events,
            created_at: snap.created_at,
            updated_at: snap.updated_at,
        })
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            version: SNAPSHOT_VERSION,
            id: self.id,
            bank_id: self.bank_id.clone(),
            selector: self.engine.selector().id(),
            policy_id: self.policy_id.clone(),
            config: self.engine.config().clone(),
            status: self.status,
            pending_item: self.pending,
            termination: self.termination.clone(),
            last_reply: self.last_reply.clone(),
            events: self.events,
            created_at: self.created_at,
            updated_at: self.updated_at,
            posterior: self.engine.posterior().clone(),
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn pending_item(&self) -> Option<usize> {
        self.pending
    }

    pub fn posterior(&self) -> &SunPosterior {
        self.engine.posterior()
    }

    /// Item the engine would select now; recomputed, not read from the cache.
    pub fn recompute_pending(&mut self) -> ApiResult<Option<usize>> {
        if self.engine.is_finished()? {
            return Ok(None);
        }
        Ok(Some(self.engine.next_item()?))
    }

    fn event(&mut self, kind: EventKind, payload: serde_json::Value) -> SessionEvent {
        self.events += 1;
        self.updated_at = Utc::now();
        SessionEvent {
            session_id: self.id,
            sequence: self.events,
            kind,
            payload,
            at: self.updated_at,
        }
    }

    fn sequence(&self) -> u64 {
        self.engine.step() as u64
    }

    fn beliefs(&mut self) -> ApiResult<Vec<FactorBelief>> {
        let step = self.engine.step();
        let obs = self.engine.observe()?;
        let k = obs.summary.mean.len();
        let half = 0.5 * (1.0 - CREDIBLE_LEVEL);
        let z = normal::quantile(1.0 - half);
        Ok((0..k)
            .map(|c| {
                let interval = if step == 0 {
                    [-z, z]
                } else {
                    let mut col: Vec<f64> = obs.samples().iter().flat_map(|s| s.column(c)).collect();
                    col.sort_unstable_by(f64::total_cmp);
                    [quantile_sorted(&col, half), quantile_sorted(&col, 1.0 - half)]
                };
                FactorBelief {
                    mean: obs.summary.mean[c],
                    variance: obs.summary.var[c],
                    interval,
                }
            })
            .collect())
    }

    /// Check termination and select the next item if the session goes on.
    fn advance(&mut self) -> ApiResult<()> {
        if self.engine.is_finished()? {
            let reason = match self.engine.termination_step() {
                Some(_) if !self.engine.config().run_to_horizon => TerminationReason::Variance,
                _ => TerminationReason::Horizon,
            };
            self.finish(reason)?;
        } else {
            self.pending = Some(self.engine.next_item()?);
        }
        Ok(())
    }

    fn finish(&mut self, reason: TerminationReason) -> ApiResult<()> {
        let factors = self.beliefs()?;
        self.status = if reason == TerminationReason::Aborted {
            Status::Aborted
        } else {
            Status::Terminated
        };
        self.pending = None;
        self.termination = Some(TerminationSummary {
            reason,
            termination_step: self.engine.step(),
            factors,
        });
        Ok(())
    }

    /// Record a response. Returns the reply and the event to persist, or the
    /// cached reply (and no event) for a duplicate delivery.
    pub fn submit(&mut self, req: &ResponseRequest) -> ApiResult<(ResponseReply, Option<SessionEvent>)> {
        let seq = self.sequence();
        if req.sequence == seq && seq > 0 {
            return match &self.last_reply {
                Some(r) if r.item == req.item && r.value == req.value => Ok((r.clone(), None)),
                _ => Err(ApiError::conflict(
                    "sequence_conflict",
                    format!("response {seq} was already recorded with a different item or value"),
                )),
            };
        }
        if self.status != Status::Active {
            return Err(ApiError::new(
                axum::http::StatusCode::GONE,
                "session_terminated",
                format!("session is {:?}", self.status).to_lowercase(),
            ));
        }
        if req.sequence != seq + 1 {
            return Err(ApiError::conflict(
                "stale_sequence",
                format!("expected sequence {}, got {}", seq + 1, req.sequence),
            ));
        }
        if req.value > 1 {
            return Err(ApiError::bad_request(
                "invalid_response",
                format!("response must be 0 or 1, got {}", req.value),
            ));
        }
        if self.pending != Some(req.item) {
            return Err(deepcat_harness::HarnessError::UnexpectedItem {
                item: req.item,
                expected: self.pending,
            }
            .into());
        }
        self.engine.record(req.item, req.value)?;
        self.pending = None;
        self.advance()?;
        let reply = ResponseReply {
            session_id: self.id,
            sequence: req.sequence,
            item: req.item,
            value: req.value,
            status: self.status,
            terminated: self.status != Status::Active,
            next_item: self.pending.map(|j| ItemRef::new(self.engine.bank(), j)),
            termination: self.termination.clone(),
        };
        self.last_reply = Some(reply.clone());
        let event = if reply.terminated {
            self.event(
                EventKind::Terminated,
                json!({ "item": req.item, "value": req.value, "termination": reply.termination }),
            )
        } else {
            self.event(
                EventKind::ResponseRecorded,
                json!({ "item": req.item, "value": req.value, "next_item": self.pending }),
            )
        };
        Ok((reply, Some(event)))
    }

    /// End an active session early.
    pub fn abort(&mut self) -> ApiResult<SessionEvent> {
        if self.status != Status::Active {
            return Err(ApiError::new(
                axum::http::StatusCode::GONE,
                "session_terminated",
                "session is no longer active",
            ));
        }
        self.finish(TerminationReason::Aborted)?;
        let t = self.termination.clone();
        Ok(self.event(EventKind::Terminated, json!({ "termination": t })))
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            session_id: self.id,
            bank_id: self.bank_id.clone(),
            selector: self.engine.selector().id(),
            policy_id: self.policy_id.clone(),
            config: self.engine.config().clone(),
            status: self.status,
            sequence: self.sequence(),
            items: self.engine.items().to_vec(),
            responses: self.engine.responses().to_vec(),
            pending_item: self.pending.map(|j| ItemRef::new(self.engine.bank(), j)),
            termination: self.termination.clone(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }

    /// Posterior summary from the step's seeded draws; does not mutate the
    /// session history.
    pub fn state(&mut self) -> ApiResult<StatePayload> {
        let factors = self.beliefs()?;
        let cfg = self.engine.config().clone();
        let step = self.engine.step();
        let bank = self.engine.bank();
        let history = self
            .engine
            .history()
            .into_iter()
            .map(|(item, value)| HistoryEntry {
                item,
                name: bank.name(item).to_string(),
                value,
            })
            .collect();
        let pending_item = self.pending.map(|j| ItemRef::new(bank, j));
        let available = self.engine.available();
        let samples = self.engine.observe()?.samples()[0].clone();
        let psi_all =
            prediction_quantiles(self.engine.bank(), &samples).map_err(|e| ApiError::internal(e.to_string()))?;
        let psi = available
            .into_iter()
            .map(|j| PsiRow {
                item: j,
                quantiles: psi_all.row(j).to_vec(),
            })
            .collect();
        let max_priority_variance = cfg
            .priority
            .iter()
            .map(|&k| factors[k].variance)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(StatePayload {
            session_id: self.id,
            status: self.status,
            step,
            horizon: cfg.horizon,
            remaining: cfg.horizon.saturating_sub(step),
            tau2: cfg.tau2,
            priority: cfg.priority.clone(),
            factors,
            max_priority_variance,
            pending_item,
            history,
            termination: self.termination.clone(),
            psi,
        })
    }
}
