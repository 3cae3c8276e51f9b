use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use hitl_cli::service::{router, AppState, BatchView, RelevancyView};
use hitl_core::datasets::SyntheticConfig;
use hitl_core::embedding::EmbeddingConfig;
use hitl_core::experiment::{
    drive_series, oracle_for, prepare_series, series_seeds, DatasetSpec, ExperimentConfig,
};
use hitl_core::hitl::{BatchReport, FeedbackBudget, LoopState};
use hitl_core::series::FeedbackRecord;
use serde_json::{json, Value};
use tower::ServiceExt;

fn config() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSpec::Synthetic(SyntheticConfig {
            num_series: 2,
            points_per_series: 6_000,
            anomaly_rate: 0.01,
            seed: 11,
            ..Default::default()
        }),
        embedding: EmbeddingConfig {
            hidden_size: 4,
            epochs: 5,
            ..Default::default()
        },
        batch_length: 1_000,
        budget: FeedbackBudget {
            positive: 5,
            negative: 5,
        },
        feedback_batches: 2,
        seeds: vec![3],
        ..Default::default()
    }
}

fn app() -> Router {
    router(AppState::new(config(), None))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/sessions", Some(json!({}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["status"], "awaiting_feedback");
    assert_eq!(body["batch_number"], 1);
    body["session_id"].as_str().unwrap().to_string()
}

async fn batch(app: &Router, id: &str) -> BatchView {
    let (status, body) = call(app, "GET", &format!("/sessions/{id}/batch"), None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_value(body).unwrap()
}

async fn relevancy(app: &Router, id: &str) -> RelevancyView {
    let (status, body) = call(app, "GET", &format!("/sessions/{id}/relevancy"), None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_value(body).unwrap()
}

#[tokio::test]
async fn feedback_shapes_the_relevancy_vector() {
    let app = app();
    let id = create(&app).await;
    let view = batch(&app, &id).await;
    assert_eq!(view.series.len(), 2);
    let first = &view.series[0];
    let t = first.report.reported_anomalies[0].time_index;
    assert_eq!(first.contexts.len(), first.report.reported_anomalies.len());
    assert!(first.contexts.iter().all(|c| c.values.len() <= 512 && !c.values.is_empty()));

    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/feedback"),
        Some(json!([{ "series_id": first.series_id, "time_index": t, "label": "positive" }])),
    )
    .await;
    assert_eq!(status, StatusCode::NO_CONTENT);

    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["batch_number"], 2);
    assert!(body["series"][0]["report"]["relevancy_used"].is_array());

    let rel = relevancy(&app, &id).await;
    let r = rel.series[0].relevancy.as_ref().unwrap().r.values().to_vec();
    assert!(r.iter().any(|&v| v != 1.0), "{r:?}");
    assert!(r.contains(&2.0));
    // The other series got no labels.
    assert!(rel.series[1].relevancy.as_ref().unwrap().r.is_neutral());
}

#[tokio::test]
async fn unreported_feedback_is_rejected_with_its_index() {
    let app = app();
    let id = create(&app).await;
    let view = batch(&app, &id).await;
    let series_id = view.series[0].series_id.clone();
    let reported = view.series[0].report.indices();
    let bad = (view.series[0].report.batch.start_index..)
        .find(|t| !reported.contains(t))
        .unwrap();
    let good = reported[0];
    let (status, body) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/feedback"),
        Some(json!([
            { "series_id": series_id, "time_index": good, "label": "negative" },
            { "series_id": series_id, "time_index": bad, "label": "positive" }
        ])),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["time_index"], bad);
    assert_eq!(body["series_id"], series_id.as_str());

    // Nothing from the rejected request was kept: advancing gives neutral r.
    call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    let rel = relevancy(&app, &id).await;
    assert!(rel.series.iter().all(|s| s.relevancy.as_ref().unwrap().r.is_neutral()));
}

#[tokio::test]
async fn unknown_sessions_and_bad_bodies() {
    let app = app();
    for (method, path) in [
        ("GET", "/sessions/nope/batch"),
        ("GET", "/sessions/nope/relevancy"),
        ("GET", "/sessions/nope/metrics"),
        ("POST", "/sessions/nope/advance"),
    ] {
        let (status, _) = call(&app, method, path, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {path}");
    }
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({ "seeed": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("seeed"));
    let id = create(&app).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/feedback"), Some(json!({ "x": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn finished_sessions_conflict() {
    let app = app();
    let id = create(&app).await;
    let mut status_seen = Vec::new();
    loop {
        let (status, body) = call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
        if status == StatusCode::CONFLICT {
            break;
        }
        assert_eq!(status, StatusCode::OK);
        status_seen.push(body["status"].as_str().unwrap().to_string());
        assert!(status_seen.len() < 10);
    }
    // 3 test batches: two more runs, then finish.
    assert_eq!(status_seen, ["awaiting_feedback", "ready_to_advance", "finished"]);
    let view = batch(&app, &id).await;
    let t = view.series[0].report.indices()[0];
    let (status, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/feedback"),
        Some(json!([{ "series_id": view.series[0].series_id, "time_index": t, "label": "positive" }])),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn advancing_without_feedback_keeps_neutral_relevancy() {
    let app = app();
    let id = create(&app).await;
    let (_, second) = call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    let (_, third) = call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    for body in [&second, &third] {
        for s in body["series"].as_array().unwrap() {
            let r: Vec<f64> = serde_json::from_value(s["report"]["relevancy_used"].clone()).unwrap();
            assert!(r.iter().all(|&v| v == 1.0));
            assert_eq!(s["report"]["n_base"], s["report"]["n_adj"]);
        }
    }
    assert_eq!(second["batch_number"], 2);
    assert_eq!(third["batch_number"], 3);
}

#[tokio::test]
async fn gets_do_not_mutate_and_duplicate_feedback_replaces() {
    let app = app();
    let a = create(&app).await;
    let b = create(&app).await;
    let first = call(&app, "GET", &format!("/sessions/{a}/batch"), None).await;
    let again = call(&app, "GET", &format!("/sessions/{a}/batch"), None).await;
    assert_eq!(first, again);
    let m1 = call(&app, "GET", &format!("/sessions/{a}/metrics"), None).await;
    let m2 = call(&app, "GET", &format!("/sessions/{a}/metrics"), None).await;
    assert_eq!(m1.0, StatusCode::OK);
    assert_eq!(m1, m2);
    assert!(m1.1["base_only"]["f1"].is_number());

    let view = batch(&app, &a).await;
    let s = &view.series[0];
    let record = json!({ "series_id": s.series_id, "time_index": s.report.indices()[0], "label": "negative" });
    call(&app, "POST", &format!("/sessions/{a}/feedback"), Some(json!([record]))).await;
    call(&app, "POST", &format!("/sessions/{a}/feedback"), Some(json!([record]))).await;
    call(&app, "POST", &format!("/sessions/{b}/feedback"), Some(json!([record]))).await;
    call(&app, "POST", &format!("/sessions/{a}/advance"), None).await;
    call(&app, "POST", &format!("/sessions/{b}/advance"), None).await;
    let (ra, rb) = (relevancy(&app, &a).await, relevancy(&app, &b).await);
    assert_eq!(
        serde_json::to_value(&ra.series).unwrap(),
        serde_json::to_value(&rb.series).unwrap()
    );
}

#[tokio::test]
async fn service_replays_the_batch_loop() {
    let cfg = config();
    let seed = cfg.seeds[0];
    let data = cfg.dataset.load(seed).unwrap();
    let detector = cfg.detectors[0].clone();
    let mut expected: Vec<Vec<BatchReport>> = Vec::new();
    let mut feedback: Vec<Vec<Vec<FeedbackRecord>>> = Vec::new();
    for (i, full) in data.iter().enumerate() {
        let (det_seed, loop_seed) = series_seeds(seed, i);
        let prep = prepare_series(full, &detector, cfg.batch_length, det_seed).unwrap();
        let mut state = LoopState::new(full.id(), cfg.loop_config(loop_seed)).unwrap();
        let mut given = Vec::new();
        let reports = drive_series(&prep, &mut state, |s, r| {
            let fb = oracle_for(&prep, s, r)?;
            given.push(fb.clone());
            Ok(fb)
        })
        .unwrap();
        expected.push(reports);
        feedback.push(given);
    }

    let app = app();
    let id = create(&app).await;
    let batches = expected[0].len();
    for b in 0..batches {
        let view = batch(&app, &id).await;
        for (si, s) in view.series.iter().enumerate() {
            assert_eq!(s.report, expected[si][b], "series {si}, batch {b}");
        }
        let records: Vec<FeedbackRecord> = feedback.iter().filter_map(|f| f.get(b)).flatten().cloned().collect();
        if view.status == hitl_cli::service::SessionStatus::AwaitingFeedback {
            let (status, _) = call(
                &app,
                "POST",
                &format!("/sessions/{id}/feedback"),
                Some(serde_json::to_value(&records).unwrap()),
            )
            .await;
            assert_eq!(status, StatusCode::NO_CONTENT);
        } else {
            assert!(records.is_empty());
        }
        call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    }
}

#[tokio::test]
async fn snapshots_are_written_per_advance() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(config(), Some(dir.path().to_path_buf())));
    let id = create(&app).await;
    call(&app, "POST", &format!("/sessions/{id}/advance"), None).await;
    let text = std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap();
    let snap: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(snap["session_id"], id.as_str());
    assert_eq!(snap["batch_number"], 2);
}
