//! Local HTTP/JSON service around one editing-and-fitting session.
//!
//! Mutations go through a single lock, so concurrent requests observe a
//! total order. Fits run on a blocking worker; at most one is in flight and
//! competing requests get 503.

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use arelink::render::render_pred_map;
use arelink::{
    fit_model, parse_model, render_nb_map, st_augment, Areas, Augmented, Family, FitSummary, NbFormat, NbMapOptions,
    NbStructure, NodeStyle, PredMapOptions, RenderError, UnitRef,
};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use session::{Session, SessionError, Step};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "status": self.status.as_u16()}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Progress of the most recent fit.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum FitStatus {
    Idle,
    Running { formula: String },
    Done { formula: String, columns: Vec<String> },
    Failed { formula: String, error: String },
}

struct Shared {
    session: Mutex<Session>,
    fit_busy: AtomicBool,
    fit_status: Mutex<FitStatus>,
    save_path: PathBuf,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// `save_path` is where `POST /save` writes when the body names no path.
    pub fn new(coll: Areas, nb: NbStructure, save_path: impl Into<PathBuf>) -> Self {
        Self(Arc::new(Shared {
            session: Mutex::new(Session::new(coll, nb)),
            fit_busy: AtomicBool::new(false),
            fit_status: Mutex::new(FitStatus::Idle),
            save_path: save_path.into(),
        }))
    }

    pub fn session(&self) -> MutexGuard<'_, Session> {
        self.0.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn status(&self) -> MutexGuard<'_, FitStatus> {
        self.0.fit_status.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

fn nb_json(nb: &NbStructure) -> Value {
    serde_json::to_value(nb).expect("structure serialises")
}

fn conflict(e: impl ToString) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, e.to_string())
}

fn svg(text: String) -> Response {
    ([(header::CONTENT_TYPE, "image/svg+xml")], text).into_response()
}

async fn get_areas(State(s): State<AppState>) -> Json<Value> {
    Json(s.session().coll.to_geojson())
}

async fn get_nb(State(s): State<AppState>) -> Json<Value> {
    Json(nb_json(&s.session().nb))
}

async fn get_audit(State(s): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(s.session().nb.check_islands()).expect("audit serialises"))
}

async fn get_history(State(s): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(s.session().history()).expect("history serialises"))
}

#[derive(Deserialize)]
struct BridgesBody {
    #[serde(default = "one")]
    k: usize,
    #[serde(default)]
    remove_islands: bool,
}

fn one() -> usize {
    1
}

async fn post_bridges(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let b: BridgesBody = body(&bytes)?;
    let mut session = s.session();
    session
        .apply(Step::Bridges {
            k: b.k,
            remove_islands: b.remove_islands,
        })
        .map_err(conflict)?;
    Ok(Json(nb_json(&session.nb)))
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum EditOp {
    Join,
    Cut,
}

#[derive(Deserialize)]
struct EditBody {
    op: EditOp,
    a: UnitRef,
    b: UnitRef,
}

async fn post_edit(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let e: EditBody = body(&bytes)?;
    let step = match e.op {
        EditOp::Join => Step::Join { a: e.a, b: e.b },
        EditOp::Cut => Step::Cut { a: e.a, b: e.b },
    };
    let mut session = s.session();
    session.apply(step).map_err(conflict)?;
    Ok(Json(nb_json(&session.nb)))
}

async fn post_undo(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let mut session = s.session();
    session.undo().map_err(conflict)?;
    Ok(Json(nb_json(&session.nb)))
}

fn flag(q: &HashMap<String, String>, key: &str) -> bool {
    q.get(key).is_some_and(|v| matches!(v.as_str(), "1" | "true" | "yes"))
}

async fn render_nb(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let mut opts = NbMapOptions {
        concavehull: flag(&q, "hulls"),
        ..Default::default()
    };
    if let Some(n) = q.get("nodes") {
        opts.nodes = n.parse::<NodeStyle>().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    }
    let session = s.session();
    let text = render_nb_map(&session.coll, &session.nb, &opts)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(svg(text))
}

#[derive(Deserialize)]
struct FitBody {
    formula: String,
    #[serde(default)]
    family: Family,
}

struct BusyGuard(AppState);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0 .0.fit_busy.store(false, Ordering::SeqCst);
    }
}

fn run_fit(formula: &str, family: Family, coll: &Areas, nb: &NbStructure) -> ApiResult<(FitSummary, Augmented)> {
    let spec = parse_model(formula, family).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let fit = fit_model(&spec, coll, Some(nb)).map_err(conflict)?;
    let summary = fit.summary();
    let aug = st_augment(&summary, coll).map_err(conflict)?;
    Ok((summary, aug))
}

async fn post_fit(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Json<FitSummary>> {
    let f: FitBody = body(&bytes)?;
    if s.0.fit_busy.swap(true, Ordering::SeqCst) {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "a fit is already running"));
    }
    let _guard = BusyGuard(s.clone());
    let (coll, nb) = {
        let session = s.session();
        (session.coll.clone(), session.nb.clone())
    };
    *s.status() = FitStatus::Running {
        formula: f.formula.clone(),
    };
    let formula = f.formula.clone();
    let outcome = tokio::task::spawn_blocking(move || run_fit(&formula, f.family, &coll, &nb))
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())));
    match outcome {
        Ok((summary, aug)) => {
            let columns = aug.prediction_columns().iter().map(|c| c.to_string()).collect();
            {
                let mut session = s.session();
                session.latest_fit = Some(summary.clone());
                session.latest_aug = Some(aug);
            }
            *s.status() = FitStatus::Done {
                formula: f.formula,
                columns,
            };
            Ok(Json(summary))
        }
        Err(e) => {
            *s.status() = FitStatus::Failed {
                formula: f.formula,
                error: e.message.clone(),
            };
            Err(e)
        }
    }
}

async fn fit_status(State(s): State<AppState>) -> Json<FitStatus> {
    Json(s.status().clone())
}

async fn get_fit(State(s): State<AppState>) -> ApiResult<Json<FitSummary>> {
    s.session()
        .latest_fit
        .clone()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no fit yet"))
}

async fn render_preds(
    State(s): State<AppState>,
    Path(file): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown prediction column `{file}`"));
    let column = file.strip_suffix(".svg").ok_or_else(not_found)?;
    let mut opts = PredMapOptions::default();
    for (key, slot) in [
        ("scale_low", &mut opts.scale_low),
        ("scale_mid", &mut opts.scale_mid),
        ("scale_high", &mut opts.scale_high),
    ] {
        if let Some(v) = q.get(key) {
            *slot = v.clone();
        }
    }
    if let Some(v) = q.get("scale_midpoint") {
        opts.scale_midpoint = v
            .parse()
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("bad scale_midpoint `{v}`")))?;
    }
    let session = s.session();
    let aug = session.latest_aug.as_ref().ok_or_else(not_found)?;
    match render_pred_map(aug, column, &opts) {
        Ok(map) => Ok(svg(map.svg)),
        Err(RenderError::UnknownColumn(_)) => Err(not_found()),
        Err(e) => Err(ApiError::new(StatusCode::BAD_REQUEST, e.to_string())),
    }
}

#[derive(Deserialize)]
struct SaveBody {
    path: Option<PathBuf>,
}

async fn post_save(State(s): State<AppState>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let b: SaveBody = body(&bytes)?;
    let path = b.path.unwrap_or_else(|| s.0.save_path.clone());
    let data = s.session().nb.export(NbFormat::Json).map_err(conflict)?;
    std::fs::write(&path, &data)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())))?;
    Ok(Json(json!({"path": path.display().to_string(), "bytes": data.len()})))
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(o) = origin.to_str() else { return false };
    let host = o
        .strip_prefix("http://")
        .or_else(|| o.strip_prefix("https://"))
        .unwrap_or("");
    let host = match host.rsplit_once(':') {
        Some((h, port)) if port.chars().all(|c| c.is_ascii_digit()) => h,
        _ => host,
    };
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|o, _| is_local_origin(o)))
        .allow_methods(Any)
        .allow_headers(Any);
    Router::new()
        .route("/areas", get(get_areas))
        .route("/nb", get(get_nb))
        .route("/nb/audit", get(get_audit))
        .route("/nb/history", get(get_history))
        .route("/bridges", post(post_bridges))
        .route("/edit", post(post_edit))
        .route("/undo", post(post_undo))
        .route("/render/nb.svg", get(render_nb))
        .route("/fit", post(post_fit).get(get_fit))
        .route("/fit/status", get(fit_status))
        .route("/render/preds/{file}", get(render_preds))
        .route("/save", post(post_save))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Runs [`serve`] on a fresh multi-threaded runtime until the process ends.
pub fn serve_blocking(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(state, addr))
}
