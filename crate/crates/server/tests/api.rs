use std::time::Duration;

use arelink::sim::{simulate_grid, GridSimConfig};
use arelink::{load_areas, st_bridges, Areas, BridgeOptions, NbFormat, NbStructure};
use arelink_server::{router, AppState};
use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

const RECTANGLES: &[u8] = include_bytes!("data/rectangles.geojson");

fn rectangles() -> Areas {
    load_areas(RECTANGLES, "name").unwrap()
}

fn fixture_state(save: &str) -> AppState {
    let coll = rectangles();
    let b = st_bridges(&coll, &BridgeOptions::default()).unwrap();
    AppState::new(b.areas, b.nb, save)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn adj(v: &Value) -> Vec<Vec<u64>> {
    serde_json::from_value(v["adj"].clone()).unwrap()
}

#[tokio::test]
async fn bridges_body_is_the_printed_adjacency() {
    let app = router(fixture_state("unused.json"));
    let (s, v) = call_json(&app, Method::POST, "/bridges", Some(json!({"k": 1}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(adj(&v), vec![vec![2, 3], vec![1, 3, 4], vec![1, 2, 5], vec![2], vec![3]]);
    let (_, audit) = call_json(&app, Method::GET, "/nb/audit", None).await;
    assert_eq!(audit[0]["island_names"], "Rect4");
    assert_eq!(audit[1]["nb_names"], "Rect3");
    let (s, v) = call_json(&app, Method::POST, "/bridges", Some(json!({"remove_islands": true}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["names"], json!(["Rect1", "Rect2", "Rect3"]));
    let (_, areas) = call_json(&app, Method::GET, "/areas", None).await;
    assert_eq!(areas["features"].as_array().unwrap().len(), 3);
    let (s, _) = call_json(&app, Method::POST, "/bridges", Some(json!({"k": 9}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn join_is_visible_both_ways() {
    let app = router(fixture_state("unused.json"));
    let (s, v) = call_json(&app, Method::POST, "/edit", Some(json!({"op": "join", "a": 3, "b": 4}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, nb) = call_json(&app, Method::GET, "/nb", None).await;
    assert_eq!(v, nb);
    let a = adj(&nb);
    assert!(a[2].contains(&4) && a[3].contains(&3));
}

#[tokio::test]
async fn absent_cut_conflicts_and_leaves_structure() {
    let app = router(fixture_state("unused.json"));
    let (_, before) = call_json(&app, Method::GET, "/nb", None).await;
    let (s, err) =
        call_json(&app, Method::POST, "/edit", Some(json!({"op": "cut", "a": "Rect1", "b": "Rect4"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("Rect1"));
    let (s, _) = call_json(&app, Method::POST, "/edit", Some(json!({"op": "join", "a": "Nope", "b": 1}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, after) = call_json(&app, Method::GET, "/nb", None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let app = router(fixture_state("unused.json"));
    let req = Request::post("/edit").body(Body::from("{not json")).unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, Method::POST, "/edit", Some(json!({"op": "merge", "a": 1, "b": 2}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, Method::POST, "/fit", Some(json!({"family": "poisson"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn click_sequence_then_double_undo_restores() {
    let state = fixture_state("unused.json");
    let app = router(state.clone());
    let (_, initial) = call_json(&app, Method::GET, "/nb", None).await;
    call_json(&app, Method::POST, "/edit", Some(json!({"op": "join", "a": 3, "b": 4}))).await;
    let (_, v) = call_json(&app, Method::POST, "/edit", Some(json!({"op": "cut", "a": 1, "b": 2}))).await;
    assert_eq!(adj(&v)[0], vec![3]);
    {
        let session = state.session();
        let (_, replayed) = session.replay().unwrap();
        assert_eq!(
            replayed.export(NbFormat::Json).unwrap(),
            session.nb.export(NbFormat::Json).unwrap()
        );
    }
    let (_, hist) = call_json(&app, Method::GET, "/nb/history", None).await;
    assert_eq!(hist, json!([{"op": "join", "a": 3, "b": 4}, {"op": "cut", "a": 1, "b": 2}]));
    call_json(&app, Method::POST, "/undo", None).await;
    let (s, v) = call_json(&app, Method::POST, "/undo", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, initial);
    let (s, _) = call_json(&app, Method::POST, "/undo", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn nb_svg_honours_query() {
    let app = router(fixture_state("unused.json"));
    let (s, body) = call(&app, Method::GET, "/render/nb.svg?nodes=numeric&hulls=1", None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert_eq!(text.matches("<text class=\"node\"").count(), 5);
    assert_eq!(text.matches("<path class=\"hull\"").count(), 5);
    assert_eq!(text.matches("<line class=\"link\"").count(), 5);
    let (s, _) = call(&app, Method::GET, "/render/nb.svg?nodes=stars", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

fn fixture_with_response() -> AppState {
    let base = rectangles();
    let ys = [3.0, 9.0, 4.0, 1.0, 12.0];
    let units = base
        .units()
        .iter()
        .zip(ys)
        .map(|(u, y)| u.clone().with_attr("province", u.name.clone()).with_attr("quakes", y).with_attr("area", 2.0))
        .collect();
    let coll = Areas::new("name", units).unwrap();
    let nb = st_bridges(&coll, &BridgeOptions::default()).unwrap().nb;
    AppState::new(coll, nb, "unused.json")
}

#[tokio::test]
async fn fit_then_render_one_choropleth_per_term() {
    let app = router(fixture_with_response());
    let (s, _) = call_json(&app, Method::GET, "/render/preds/mrf.smooth.province.svg", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, summary) = call_json(
        &app,
        Method::POST,
        "/fit",
        Some(json!({"formula": "quakes ~ s(province, bs='mrf') + offset(log(area))", "family": "poisson"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{summary}");
    assert_eq!(summary["terms"][0]["label"], "mrf.smooth.province");
    let (_, status) = call_json(&app, Method::GET, "/fit/status", None).await;
    assert_eq!(status["state"], "done");
    assert_eq!(status["columns"], json!(["mrf.smooth.province"]));
    let (s, body) = call(&app, Method::GET, "/render/preds/mrf.smooth.province.svg?scale_high=red", None).await;
    assert_eq!(s, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert!(text.contains(">province</text>") && text.contains(">mrf.smooth</text>"));
    let (s, _) = call(&app, Method::GET, "/render/preds/se.mrf.smooth.province.svg", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/render/preds/mrf.smooth.nowhere.svg", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (_, fit) = call_json(&app, Method::GET, "/fit", None).await;
    assert_eq!(fit, summary);
}

#[tokio::test]
async fn bad_formula_is_400_and_recorded() {
    let app = router(fixture_with_response());
    let (s, err) = call_json(&app, Method::POST, "/fit", Some(json!({"formula": "quakes ~ s(province, bs='tp')"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(err["error"].as_str().unwrap().contains("tp"));
    let (_, status) = call_json(&app, Method::GET, "/fit/status", None).await;
    assert_eq!(status["state"], "failed");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn competing_fit_gets_503() {
    let sim = simulate_grid(&GridSimConfig {
        nx: 10,
        ny: 10,
        ..Default::default()
    });
    let app = router(AppState::new(sim.areas, sim.nb, "unused.json"));
    let slow = json!({
        "formula": "y ~ x + s(name, bs='mrf') + s(name, by=x, bs='mrf') + offset(log(area))",
        "family": "poisson"
    });
    let first = {
        let app = app.clone();
        let body = slow.clone();
        tokio::spawn(async move { call_json(&app, Method::POST, "/fit", Some(body)).await })
    };
    let mut running = false;
    for _ in 0..400 {
        let (_, st) = call_json(&app, Method::GET, "/fit/status", None).await;
        if st["state"] == "running" {
            running = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert!(running, "fit never reported running");
    let (s, _) = call_json(&app, Method::POST, "/fit", Some(slow)).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    // reads and edits stay available while the fit runs
    let (s, _) = call_json(&app, Method::GET, "/nb", None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = first.await.unwrap();
    assert_eq!(s, StatusCode::OK);
    let (_, st) = call_json(&app, Method::GET, "/fit/status", None).await;
    assert_eq!(st["state"], "done");
}

#[tokio::test]
async fn save_writes_a_cli_compatible_structure() {
    let dir = std::env::temp_dir().join(format!("arelink-save-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let default_path = dir.join("nb.json");
    let app = router(fixture_state(default_path.to_str().unwrap()));
    call_json(&app, Method::POST, "/edit", Some(json!({"op": "join", "a": 4, "b": 5}))).await;
    let (s, v) = call_json(&app, Method::POST, "/save", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let saved = NbStructure::import(NbFormat::Json, &std::fs::read(&default_path).unwrap()).unwrap();
    assert!(saved.has_edge(3, 4));
    let other = dir.join("other.json");
    let (s, _) = call_json(&app, Method::POST, "/save", Some(json!({"path": other}))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(other.exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[tokio::test]
async fn cors_allows_localhost_only() {
    let app = router(fixture_state("unused.json"));
    let preflight = |origin: &str| {
        Request::builder()
            .method(Method::OPTIONS)
            .uri("/edit")
            .header(header::ORIGIN, origin)
            .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
            .body(Body::empty())
            .unwrap()
    };
    let ok = app.clone().oneshot(preflight("http://localhost:5173")).await.unwrap();
    assert_eq!(ok.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");
    let no = app.clone().oneshot(preflight("http://example.com")).await.unwrap();
    assert!(no.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}
