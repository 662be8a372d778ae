use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use toc_cli::server::{router, ServiceState};
use toc_core::codec::SequenceCodec;
use toc_core::lstm::{Checkpoint, EmbeddingDims, LstmParams, ModelShape, TrainConfig};
use toc_core::operator::read_jsonl;
use toc_core::robot::RobotConfig;
use toc_core::sim::{replay, Operator};

struct Fixture {
    app: Router,
    data_out: PathBuf,
    _dir: tempfile::TempDir,
}

fn fixture(model: Option<Checkpoint>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data_out = dir.path().join("human.jsonl");
    let state = ServiceState::new(Arc::new(RobotConfig::shipped()), model, 3, data_out.clone());
    Fixture {
        app: router(Arc::new(state)),
        data_out,
        _dir: dir,
    }
}

fn small_model() -> Checkpoint {
    let config = RobotConfig::shipped();
    let codec = SequenceCodec::new(&config);
    let dims = EmbeddingDims {
        hidden: 8,
        ..EmbeddingDims::default()
    };
    let params = LstmParams::init(ModelShape::for_codec(&codec, dims), 12);
    Checkpoint::new(&codec, TrainConfig::default(), params)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    raw(app, request).await
}

async fn raw(app: &Router, request: Request<Body>) -> (StatusCode, Value) {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router, fault: &str, seed: u64) -> String {
    let (status, body) = call(app, "POST", "/api/session", Some(json!({"fault_id": fault, "seed": seed}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn happy_path_persists_one_replayable_line() {
    let fx = fixture(None);
    let (status, created) = call(&fx.app, "POST", "/api/session", Some(json!({"fault_id": "driving_slow", "seed": 5}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(created["symptom_message"], "Robot driving slow");
    assert_eq!(created["sensors"].as_array().unwrap().len(), 20);
    assert_eq!(created["actions"].as_array().unwrap().len(), 26);
    let sensor = &created["sensors"][0];
    for key in ["id", "label", "group", "color_key"] {
        assert!(sensor[key].is_string(), "sensor view lacks {key}");
    }
    let id = created["session_id"].as_str().unwrap();

    for sensor in ["wheel_speed", "wheel_slip", "left_motor_current"] {
        let (status, body) = call(&fx.app, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"sensor_id": sensor}))).await;
        assert_eq!(status, StatusCode::OK);
        assert!(body["value"].is_number());
        assert!(body["unit"].is_string());
    }
    let (status, body) = call(&fx.app, "POST", &format!("/api/session/{id}/action"), Some(json!({"action_id": "clear_wheel_debris"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"resolved": true}));

    let (status, log) = call(&fx.app, "POST", &format!("/api/session/{id}/finish"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(log["operator"], "human");
    assert_eq!(log["resolved"], true);

    let text = fs::read_to_string(&fx.data_out).unwrap();
    assert_eq!(text.lines().count(), 1);
    let logs = read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(logs[0].operator, Operator::Human);
    assert_eq!(logs[0].steps.len(), 4);
    let replayed = replay(Arc::new(RobotConfig::shipped()), &logs[0]).unwrap();
    assert!(replayed.is_resolved());
    // The persisted log replays to the same revealed values.
    assert_eq!(replayed.finalize().steps, logs[0].steps);

    // The finished session is closed.
    let (status, _) = call(&fx.app, "GET", &format!("/api/session/{id}/suggest"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn error_statuses() {
    let fx = fixture(None);
    let (status, body) = call(&fx.app, "POST", "/api/session/nope/reveal", Some(json!({"sensor_id": "wheel_speed"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());

    let id = create(&fx.app, "driving_slow", 1).await;
    let bad = Request::builder()
        .method("POST")
        .uri(format!("/api/session/{id}/reveal"))
        .header("content-type", "application/json")
        .body(Body::from("{\"sensor_id\": "))
        .unwrap();
    assert_eq!(raw(&fx.app, bad).await.0, StatusCode::BAD_REQUEST);
    let (status, _) = call(&fx.app, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"sensor": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&fx.app, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"sensor_id": "no_such_sensor"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&fx.app, "POST", "/api/session", Some(json!({"fault_id": "no_such_fault"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _) = call(&fx.app, "POST", &format!("/api/session/{id}/action"), Some(json!({"action_id": "clear_wheel_debris"}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&fx.app, "POST", &format!("/api/session/{id}/action"), Some(json!({"action_id": "clean_filter"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&fx.app, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"sensor_id": "wheel_speed"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn suggest_without_model() {
    let fx = fixture(None);
    let id = create(&fx.app, "driving_slow", 1).await;
    let (status, body) = call(&fx.app, "GET", &format!("/api/session/{id}/suggest"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"suggestions": [], "model_loaded": false}));
}

#[tokio::test]
async fn suggest_with_model_is_top5_descending() {
    let fx = fixture(Some(small_model()));
    let id = create(&fx.app, "weak_suction", 2).await;
    call(&fx.app, "POST", &format!("/api/session/{id}/reveal"), Some(json!({"sensor_id": "fan_rpm"}))).await;
    let (status, body) = call(&fx.app, "GET", &format!("/api/session/{id}/suggest"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["model_loaded"], true);
    let suggestions = body["suggestions"].as_array().unwrap();
    assert_eq!(suggestions.len(), 5);
    let scores: Vec<f64> = suggestions.iter().map(|s| s["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]), "{scores:?}");
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    for s in suggestions {
        assert!(matches!(s["kind"].as_str(), Some("read" | "act")));
    }
    // Suggestions never act on the session.
    let (_, again) = call(&fx.app, "GET", &format!("/api/session/{id}/suggest"), None).await;
    assert_eq!(again, body);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let fx = fixture(None);
    let a = create(&fx.app, "weak_suction", 9).await;
    let b = create(&fx.app, "weak_suction", 9).await;
    let reveal = |id: &str, sensor: &str| {
        let app = fx.app.clone();
        let uri = format!("/api/session/{id}/reveal");
        let sensor = sensor.to_string();
        async move { call(&app, "POST", &uri, Some(json!({"sensor_id": sensor}))).await.1["value"].as_f64().unwrap() }
    };
    // Interleave: A reads twice before B starts; B must see the same first
    // reading as a fresh session with the same seed.
    let a1 = reveal(&a, "fan_rpm").await;
    let a2 = reveal(&a, "fan_rpm").await;
    let b1 = reveal(&b, "fan_rpm").await;
    let b2 = reveal(&b, "fan_rpm").await;
    assert_eq!((a1, a2), (b1, b2));
    call(&fx.app, "POST", &format!("/api/session/{a}/action"), Some(json!({"action_id": "clear_suction_hose"}))).await;
    let (_, log_b) = call(&fx.app, "POST", &format!("/api/session/{b}/finish"), None).await;
    assert_eq!(log_b["steps"].as_array().unwrap().len(), 2);
    assert_eq!(log_b["resolved"], false);
}

#[tokio::test]
async fn random_fault_sessions_are_deterministic() {
    let first = fixture(None);
    let second = fixture(None);
    for _ in 0..3 {
        let (_, x) = call(&first.app, "POST", "/api/session", None).await;
        let (_, y) = call(&second.app, "POST", "/api/session", Some(json!({}))).await;
        assert_eq!(x["session_id"], y["session_id"]);
        assert_eq!(x["symptom_message"], y["symptom_message"]);
    }
}

#[tokio::test]
async fn taxonomy_covers_every_leaf_once() {
    let fx = fixture(None);
    let (status, tree) = call(&fx.app, "GET", "/api/config/taxonomy", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(tree["level"], 0);
    fn walk(node: &Value, sensors: &mut Vec<String>, actions: &mut Vec<String>) {
        match node["kind"].as_str().unwrap() {
            "sensor-leaf" => sensors.push(node["entity_id"].as_str().unwrap().to_string()),
            "actuator-leaf" => actions.push(node["entity_id"].as_str().unwrap().to_string()),
            _ => {}
        }
        for child in node["children"].as_array().unwrap() {
            walk(child, sensors, actions);
        }
    }
    let (mut sensors, mut actions) = (Vec::new(), Vec::new());
    walk(&tree, &mut sensors, &mut actions);
    let config = RobotConfig::shipped();
    let mut want_s: Vec<String> = config.sensors.iter().map(|s| s.id.clone()).collect();
    let mut want_a: Vec<String> = config.actions.iter().map(|a| a.id.clone()).collect();
    sensors.sort();
    actions.sort();
    want_s.sort();
    want_a.sort();
    assert_eq!(sensors, want_s);
    assert_eq!(actions, want_a);
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let fx = fixture(None);
    let request = Request::builder()
        .method("OPTIONS")
        .uri("/api/session")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let response = fx.app.clone().oneshot(request).await.unwrap();
    assert!(response.status().is_success());
    assert!(response.headers().contains_key("access-control-allow-origin"));
}
