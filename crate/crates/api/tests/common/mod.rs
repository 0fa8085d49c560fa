//! Two-scenario fixture dataset and the golden request table.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use marlviz_api::{router, LoadedDataset};
use marlviz_core::artifacts::{write_features, write_projection};
use marlviz_core::env::{GameMode, ScenarioConfig};
use marlviz_core::features::{embed, AeTrainConfig};
use marlviz_core::projection::fit_project;
use marlviz_core::trace::write_dataset;
use marlviz_core::training::{run_grid, TrainSpec};
use tower::ServiceExt;

pub fn fixture_grid() -> Vec<ScenarioConfig> {
    vec![
        ScenarioConfig::new(GameMode::Walls, 4, -0.01, -1.0).with_max_steps(60),
        ScenarioConfig::new(GameMode::Wrap, 4, 0.01, -0.5).with_max_steps(60),
    ]
}

/// Trains, embeds and projects the fixture, then loads it back from disk.
pub fn fixture() -> LoadedDataset {
    let dir = tempfile::tempdir().unwrap();
    let spec = TrainSpec::default().with_episodes(60).with_seed(3);
    let runs = run_grid(&fixture_grid(), &spec, 1).unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, &runs, &spec).unwrap();
    let traces = runs.into_iter().map(|r| (r.trace.scenario_id().to_owned(), r.trace)).collect();
    let e = embed(&traces, &AeTrainConfig { epochs: 300, ..AeTrainConfig::default() }).unwrap();
    let features = dir.path().join("features.json");
    write_features(&features, &e.features, &e.trained.history).unwrap();
    let projection = dir.path().join("projection.json");
    write_projection(&projection, &fit_project(&e.features).unwrap()).unwrap();
    LoadedDataset::load(&data, &features, &projection).unwrap()
}

pub fn app(d: &LoadedDataset) -> Router {
    router(Some(Arc::new(d.clone())), None)
}

pub async fn send(app: Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_owned())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub struct Case {
    pub name: &'static str,
    pub method: &'static str,
    pub uri: String,
    pub body: Option<String>,
    pub status: StatusCode,
}

fn keys_body(keys: &[(&str, usize)]) -> String {
    let items: Vec<String> =
        keys.iter().map(|(s, a)| format!(r#"{{"scenario_id":"{s}","agent_id":{a}}}"#)).collect();
    format!(r#"{{"agent_keys":[{}]}}"#, items.join(","))
}

pub fn cases() -> Vec<Case> {
    let ids: Vec<String> = fixture_grid().into_iter().map(|c| c.scenario_id).collect();
    let (a, b) = (ids[0].as_str(), ids[1].as_str());
    let all: Vec<(&str, usize)> = [a, b].iter().flat_map(|s| (0..4).map(move |i| (*s, i))).collect();
    let case = |name, method, uri: String, body: Option<String>, status| Case { name, method, uri, body, status };
    vec![
        case("meta", "GET", "/api/meta".into(), None, StatusCode::OK),
        case("overview", "GET", "/api/overview".into(), None, StatusCode::OK),
        case("configs_all", "POST", "/api/selection/configs".into(), Some(keys_body(&all)), StatusCode::OK),
        case("configs_empty", "POST", "/api/selection/configs".into(), Some(keys_body(&[])), StatusCode::OK),
        case("configs_one", "POST", "/api/selection/configs".into(), Some(keys_body(&[(b, 2)])), StatusCode::OK),
        case("scenarios_all", "POST", "/api/selection/scenarios".into(), Some(keys_body(&all)), StatusCode::OK),
        case("scenarios_one", "POST", "/api/selection/scenarios".into(), Some(keys_body(&[(a, 3)])), StatusCode::OK),
        case("interaction_first", "GET", format!("/api/scenarios/{a}/interaction"), None, StatusCode::OK),
        case("interaction_second", "GET", format!("/api/scenarios/{b}/interaction"), None, StatusCode::OK),
        case(
            "error_unknown_agent",
            "POST",
            "/api/selection/configs".into(),
            Some(keys_body(&[(a, 4), ("nope", 0), (b, 0)])),
            StatusCode::BAD_REQUEST,
        ),
        case(
            "error_duplicate_agent",
            "POST",
            "/api/selection/scenarios".into(),
            Some(keys_body(&[(a, 1), (b, 0), (a, 1)])),
            StatusCode::BAD_REQUEST,
        ),
        case("error_unknown_scenario", "GET", "/api/scenarios/nope/interaction".into(), None, StatusCode::NOT_FOUND),
    ]
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../api/tests/golden"))
}

/// Compares every case against its golden file, rewriting the files instead
/// when `UPDATE_GOLDEN` is set. Returns one `(name, outcome)` per case.
pub async fn check_goldens(d: &LoadedDataset) -> Vec<(String, Result<(), String>)> {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let app = app(d);
    let mut out = Vec::new();
    for c in cases() {
        let (status, body) = send(app.clone(), c.method, &c.uri, c.body.as_deref()).await;
        let path = golden_dir().join(format!("{}.json", c.name));
        let outcome = if status != c.status {
            Err(format!("status {status}, expected {}: {body}", c.status))
        } else if update {
            std::fs::write(&path, format!("{body}\n")).map_err(|e| e.to_string())
        } else {
            match std::fs::read_to_string(&path) {
                Ok(want) if want.strip_suffix('\n') == Some(body.as_str()) => Ok(()),
                Ok(_) => Err(format!("body differs from {}", path.display())),
                Err(e) => Err(format!("{}: {e}", path.display())),
            }
        };
        out.push((c.name.to_owned(), outcome));
    }
    out
}

/// Status codes of the error paths not covered by goldens.
pub async fn check_error_codes(d: &LoadedDataset) -> Vec<(String, Result<(), String>)> {
    let loaded = app(d);
    let empty = router(None, None);
    let mut checks: Vec<(String, Router, &str, &str, Option<&str>, StatusCode)> = Vec::new();
    for (method, uri, body) in [
        ("GET", "/api/meta", None),
        ("GET", "/api/overview", None),
        ("POST", "/api/selection/configs", Some(r#"{"agent_keys":[]}"#)),
        ("POST", "/api/selection/scenarios", Some(r#"{"agent_keys":[]}"#)),
        ("GET", "/api/scenarios/x/interaction", None),
    ] {
        checks.push((format!("503 {uri}"), empty.clone(), method, uri, body, StatusCode::SERVICE_UNAVAILABLE));
    }
    for (label, body) in [
        ("truncated", "{"),
        ("missing list", "{}"),
        ("null list", r#"{"agent_keys":null}"#),
        ("wrong type", r#"{"agent_keys":[{"scenario_id":1,"agent_id":0}]}"#),
        ("extra field", r#"{"agent_keys":[],"other":true}"#),
    ] {
        for uri in ["/api/selection/configs", "/api/selection/scenarios"] {
            checks.push((format!("422 {uri} {label}"), loaded.clone(), "POST", uri, Some(body), StatusCode::UNPROCESSABLE_ENTITY));
        }
    }
    checks.push(("404 unknown endpoint".into(), loaded.clone(), "GET", "/api/nothing", None, StatusCode::NOT_FOUND));
    let mut out = Vec::new();
    for (name, app, method, uri, body, want) in checks {
        let (status, text) = send(app, method, uri, body).await;
        let shape_ok = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .is_some_and(|v| v["code"].is_string() && v["message"].is_string());
        let outcome = if status != want {
            Err(format!("status {status}, expected {want}"))
        } else if !shape_ok {
            Err(format!("error body lacks code/message: {text}"))
        } else {
            Ok(())
        };
        out.push((name, outcome));
    }
    out
}
