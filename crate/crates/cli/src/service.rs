//! JSON-over-HTTP review sessions.
//!
//! A session runs the same per-series loops as `hitl run`, but stops after
//! every batch so that a client can post labels before advancing.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create; runs the first batch |
//! | GET | `/sessions/{id}/batch` | current reports with plotting context |
//! | POST | `/sessions/{id}/feedback` | `[{series_id, time_index, label}]` → 204 |
//! | POST | `/sessions/{id}/advance` | close feedback, retrain, run next batch |
//! | GET | `/sessions/{id}/relevancy` | current `r`, `d_c`, `d⁺`, `d⁻` per series |
//! | GET | `/sessions/{id}/metrics` | running precision / recall / F1 |

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock as StdRwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hitl_core::detectors::DetectorSpec;
use hitl_core::experiment::{prepare_series, series_seeds, ExperimentConfig, PreparedSeries};
use hitl_core::hitl::{BatchReport, LoopState, RelevancySnapshot};
use hitl_core::metrics::{count_series, Counts, Metrics};
use hitl_core::series::{detected_indices, FeedbackRecord};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

/// Points of context shipped with each reported anomaly.
pub const CONTEXT_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingFeedback,
    ReadyToAdvance,
    Finished,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: serde_json::json!({ "error": message.into() }),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }
}

impl From<hitl_core::Error> for ApiError {
    fn from(e: hitl_core::Error) -> Self {
        use hitl_core::Error as E;
        match e {
            E::UnreportedPoint {
                ref series_id,
                time_index,
            } => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: serde_json::json!({
                    "error": e.to_string(),
                    "series_id": series_id,
                    "time_index": time_index,
                }),
            },
            E::InvalidConfig(_) | E::Json(_) => Self::new(StatusCode::BAD_REQUEST, e.to_string()),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

struct SeriesSession {
    prep: PreparedSeries,
    state: LoopState,
    reports: Vec<BatchReport>,
    closed_through: usize,
}

struct Session {
    id: String,
    detector: DetectorSpec,
    seed: u64,
    status: SessionStatus,
    batch_number: usize,
    series: Vec<SeriesSession>,
}

#[derive(Serialize)]
struct SessionSnapshot<'a> {
    session_id: &'a str,
    detector: &'a DetectorSpec,
    seed: u64,
    status: SessionStatus,
    batch_number: usize,
    states: Vec<&'a LoopState>,
    reports: Vec<&'a [BatchReport]>,
}

impl Session {
    fn create(config: &ExperimentConfig, id: String, detector: DetectorSpec, seed: u64) -> ApiResult<Self> {
        let data = config.dataset.load(seed)?;
        let mut series = Vec::with_capacity(data.len());
        for (i, full) in data.iter().enumerate() {
            let (det_seed, loop_seed) = series_seeds(seed, i);
            let prep = prepare_series(full, &detector, config.batch_length, det_seed)?;
            let state = LoopState::new(full.id(), config.loop_config(loop_seed))?;
            series.push(SeriesSession {
                prep,
                state,
                reports: Vec::new(),
                closed_through: 0,
            });
        }
        let mut s = Self {
            id,
            detector,
            seed,
            status: SessionStatus::ReadyToAdvance,
            batch_number: 0,
            series,
        };
        s.run_next()?;
        Ok(s)
    }

    fn has_more(&self) -> bool {
        self.series
            .iter()
            .any(|s| s.state.batch_counter() < s.prep.batches.len())
    }

    fn run_next(&mut self) -> ApiResult<()> {
        let mut open = false;
        for s in &mut self.series {
            let i = s.state.batch_counter();
            if i < s.prep.batches.len() {
                let (slice, scores) = s.prep.batch(i)?;
                s.reports.push(s.state.run_batch(&slice, &scores)?);
                open |= s.state.feedback_open();
            }
        }
        self.batch_number += 1;
        self.status = if open {
            SessionStatus::AwaitingFeedback
        } else {
            SessionStatus::ReadyToAdvance
        };
        Ok(())
    }

    fn advance(&mut self) -> ApiResult<()> {
        if self.status == SessionStatus::Finished {
            return Err(ApiError::new(StatusCode::CONFLICT, "session is finished"));
        }
        for s in &mut self.series {
            if s.closed_through < s.state.batch_counter() {
                s.state.close_batch()?;
                s.closed_through = s.state.batch_counter();
            }
        }
        if self.has_more() {
            self.run_next()
        } else {
            self.status = SessionStatus::Finished;
            Ok(())
        }
    }

    fn feedback(&mut self, records: &[FeedbackRecord]) -> ApiResult<()> {
        if self.status != SessionStatus::AwaitingFeedback {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("session is {:?}, not awaiting feedback", self.status),
            ));
        }
        let mut by_series: BTreeMap<usize, Vec<FeedbackRecord>> = BTreeMap::new();
        for r in records {
            let pos = self
                .series
                .iter()
                .position(|s| s.state.series_id() == r.series_id)
                .filter(|&p| self.series[p].state.reported().contains(&r.time_index));
            match pos {
                Some(p) => by_series.entry(p).or_default().push(r.clone()),
                None => {
                    return Err(hitl_core::Error::UnreportedPoint {
                        series_id: r.series_id.clone(),
                        time_index: r.time_index,
                    }
                    .into())
                }
            }
        }
        for (p, recs) in by_series {
            self.series[p].state.ingest_feedback(&recs)?;
        }
        Ok(())
    }

    fn batch_view(&self) -> BatchView {
        let series = self
            .series
            .iter()
            .filter_map(|s| {
                let report = s.reports.last()?;
                let values = s.prep.series.values();
                let start = s.prep.series.start_index();
                let contexts = report
                    .reported_anomalies
                    .iter()
                    .map(|a| {
                        let pos = (a.time_index - start) as usize;
                        let lo = pos.saturating_sub(CONTEXT_POINTS / 2);
                        let hi = (lo + CONTEXT_POINTS).min(values.len());
                        let lo = hi.saturating_sub(CONTEXT_POINTS);
                        AnomalyContext {
                            time_index: a.time_index,
                            start_index: start + lo as i64,
                            values: values[lo..hi].to_vec(),
                        }
                    })
                    .collect();
                Some(SeriesBatchView {
                    series_id: s.state.series_id().to_string(),
                    report: report.clone(),
                    contexts,
                })
            })
            .collect();
        BatchView {
            session_id: self.id.clone(),
            status: self.status,
            batch_number: self.batch_number,
            series,
        }
    }

    fn relevancy_view(&self) -> RelevancyView {
        RelevancyView {
            session_id: self.id.clone(),
            batch_number: self.batch_number,
            series: self
                .series
                .iter()
                .map(|s| SeriesRelevancy {
                    series_id: s.state.series_id().to_string(),
                    model_version: s.state.model_version(),
                    relevancy: s.state.relevancy_snapshot(),
                })
                .collect(),
        }
    }

    fn metrics_view(&self, config: &ExperimentConfig) -> ApiResult<MetricsView> {
        let mut base = Counts::default();
        let mut hitl = Counts::default();
        for s in &self.series {
            let run = s.state.batch_counter();
            if run == 0 {
                continue;
            }
            let (first, last) = (&s.prep.batches[0], &s.prep.batches[run - 1]);
            let seen = s.prep.series.slice(first.start_index, last.end_index)?;
            let scores = s.prep.scores.slice(first.start_index, last.end_index)?;
            let detected: BTreeSet<i64> = detected_indices(&scores, &config.thresholds).into_iter().collect();
            base.add(count_series(&seen, &detected, config.evaluation)?);
            hitl.add(count_series(&seen, s.state.reported(), config.evaluation)?);
        }
        Ok(MetricsView {
            session_id: self.id.clone(),
            batch_number: self.batch_number,
            base_only: base.metrics(),
            with_hitl: hitl.metrics(),
        })
    }

    fn snapshot_json(&self) -> serde_json::Result<Vec<u8>> {
        serde_json::to_vec(&SessionSnapshot {
            session_id: &self.id,
            detector: &self.detector,
            seed: self.seed,
            status: self.status,
            batch_number: self.batch_number,
            states: self.series.iter().map(|s| &s.state).collect(),
            reports: self.series.iter().map(|s| s.reports.as_slice()).collect(),
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Defaults to the first configured detector.
    #[serde(default)]
    pub detector: Option<DetectorSpec>,
    /// Defaults to the first configured seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub status: SessionStatus,
    pub batch_number: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyContext {
    pub time_index: i64,
    /// Time index of `values[0]`.
    pub start_index: i64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBatchView {
    pub series_id: String,
    pub report: BatchReport,
    /// One entry per reported anomaly, in report order.
    pub contexts: Vec<AnomalyContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub session_id: String,
    pub status: SessionStatus,
    pub batch_number: usize,
    pub series: Vec<SeriesBatchView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRelevancy {
    pub series_id: String,
    pub model_version: u64,
    pub relevancy: Option<RelevancySnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevancyView {
    pub session_id: String,
    pub batch_number: usize,
    pub series: Vec<SeriesRelevancy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub session_id: String,
    pub batch_number: usize,
    pub base_only: Metrics,
    pub with_hitl: Metrics,
}

struct Shared {
    config: ExperimentConfig,
    snapshot_dir: Option<PathBuf>,
    sessions: StdRwLock<BTreeMap<String, Arc<RwLock<Session>>>>,
    next_id: AtomicU64,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(config: ExperimentConfig, snapshot_dir: Option<PathBuf>) -> Self {
        Self {
            shared: Arc::new(Shared {
                config,
                snapshot_dir,
                sessions: StdRwLock::new(BTreeMap::new()),
                next_id: AtomicU64::new(1),
            }),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<RwLock<Session>>> {
        self.shared
            .sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/batch", get(get_batch))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/relevancy", get(get_relevancy))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .with_state(state)
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionCreated>)> {
    let req: CreateSession = parse_body(&body)?;
    let config = &app.shared.config;
    let detector = req.detector.unwrap_or_else(|| config.detectors[0].clone());
    detector.validate()?;
    let seed = req.seed.unwrap_or(config.seeds[0]);
    let id = format!("s{:06}", app.shared.next_id.fetch_add(1, Ordering::Relaxed));
    let shared = app.shared.clone();
    let session = blocking(move || Session::create(&shared.config, id, detector, seed)).await?;
    let created = SessionCreated {
        session_id: session.id.clone(),
        status: session.status,
        batch_number: session.batch_number,
    };
    app.shared
        .sessions
        .write()
        .expect("session table poisoned")
        .insert(created.session_id.clone(), Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_batch(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BatchView>> {
    let s = app.session(&id)?;
    let view = s.read().await.batch_view();
    Ok(Json(view))
}

async fn post_feedback(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<StatusCode> {
    let s = app.session(&id)?;
    let records: Vec<FeedbackRecord> = parse_body(&body)?;
    s.write().await.feedback(&records)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn advance(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BatchView>> {
    let s = app.session(&id)?;
    let mut guard = s.write_owned().await;
    let snapshot_dir = app.shared.snapshot_dir.clone();
    blocking(move || {
        guard.advance()?;
        if let Some(dir) = snapshot_dir {
            let path = dir.join(format!("{}.json", guard.id));
            let bytes = guard.snapshot_json().map_err(hitl_core::Error::from)?;
            std::fs::write(&path, bytes).map_err(hitl_core::Error::from)?;
        }
        Ok(guard.batch_view())
    })
    .await
    .map(Json)
}

async fn get_relevancy(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RelevancyView>> {
    let s = app.session(&id)?;
    let view = s.read().await.relevancy_view();
    Ok(Json(view))
}

async fn get_metrics(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<MetricsView>> {
    let s = app.session(&id)?;
    let view = s.read().await.metrics_view(&app.shared.config)?;
    Ok(Json(view))
}
