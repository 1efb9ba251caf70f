//! Local HTTP facade over one loaded dataset.
//!
//! | route | |
//! |---|---|
//! | `GET /dataset` | image count, size and thumbnail URLs |
//! | `GET /thumb/{i}` | PNG preview of image `i` (1-based), at most 256 px a side |
//! | `POST /jobs` | submit `{kind, method?, kept?}`; identical parameters reuse the same job |
//! | `GET /jobs/{id}` | job state, result and artifact URLs |
//! | `GET /artifacts/{id}/{name}` | `report`, `normals.png`, `albedo.png`, `surface.obj`, `heights.csv` |
//!
//! Jobs run on a bounded pool of blocking workers. The dataset is never
//! mutated, so concurrent jobs do not interact.

pub mod jobs;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::GrayImage;
use psideal_io::raster::{pixel_to_node, png_bytes, quantize8};
use psideal_io::Dataset;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use jobs::{Finished, JobFailure, JobParams, JobRequest, Workspace};

/// Light estimation needs six images.
pub const MIN_KEPT: usize = 6;
pub const THUMBNAIL_MAX_SIDE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

struct Job {
    id: u64,
    params: JobParams,
    state: JobState,
    finished: Option<Finished>,
}

#[derive(Default)]
struct JobStore {
    jobs: Vec<Job>,
    by_params: HashMap<JobParams, u64>,
}

impl JobStore {
    fn get(&self, id: u64) -> Option<&Job> {
        id.checked_sub(1).and_then(|i| self.jobs.get(i as usize))
    }

    fn get_mut(&mut self, id: u64) -> Option<&mut Job> {
        id.checked_sub(1).and_then(|i| self.jobs.get_mut(i as usize))
    }
}

struct Inner {
    dataset: Dataset,
    workspace: Arc<Workspace>,
    jobs: Mutex<JobStore>,
    pool: Arc<Semaphore>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Prepares a dataset for serving with at most `workers` concurrent jobs.
    pub fn new(dataset: Dataset, workers: usize) -> psideal_io::Result<Self> {
        let grid = dataset.grid().ok();
        let workspace = Workspace {
            data: dataset.data.clone(),
            grid,
            lights: dataset.lights()?,
            truth: if grid.is_some() { dataset.ground_truth()? } else { None },
        };
        Ok(Self(Arc::new(Inner {
            dataset,
            workspace: Arc::new(workspace),
            jobs: Mutex::new(JobStore::default()),
            pool: Arc::new(Semaphore::new(workers.max(1))),
        })))
    }

    fn images(&self) -> usize {
        self.0.dataset.len()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/dataset", get(dataset_summary))
        .route("/thumb/{i}", get(thumbnail))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(get_job))
        .route("/artifacts/{id}/{name}", get(get_artifact))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(what: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("{what} not found"))
}

async fn dataset_summary(State(state): State<AppState>) -> Json<Value> {
    let ds = &state.0.dataset;
    let entries: Vec<Value> = ds
        .manifest
        .images
        .iter()
        .enumerate()
        .map(|(t, path)| json!({ "index": t + 1, "file": path, "thumbnail": format!("/thumb/{}", t + 1) }))
        .collect();
    Json(json!({
        "name": ds.manifest.name,
        "images": ds.len(),
        "width": ds.cols,
        "height": ds.rows,
        "pixels": ds.data.p(),
        "has_lights": state.0.workspace.lights.is_some(),
        "has_ground_truth": state.0.workspace.truth.is_some(),
        "min_kept": MIN_KEPT,
        "entries": entries,
    }))
}

async fn thumbnail(State(state): State<AppState>, Path(i): Path<String>) -> Result<Response, ApiError> {
    let t = i
        .parse::<usize>()
        .ok()
        .filter(|t| (1..=state.images()).contains(t))
        .ok_or_else(|| not_found(format!("image {i}")))?;
    let ds = &state.0.dataset;
    let (cols, rows) = (ds.cols, ds.rows);
    let column = ds.data.matrix().column(t - 1);
    let full = GrayImage::from_fn(cols as u32, rows as u32, |c, r| {
        image::Luma([quantize8(column[pixel_to_node(cols, rows, c as usize, r as usize)])])
    });
    let scale = (THUMBNAIL_MAX_SIDE as f64 / cols.max(rows) as f64).min(1.0);
    let (w, h) = (((cols as f64 * scale).round() as u32).max(1), ((rows as f64 * scale).round() as u32).max(1));
    let thumb = if scale < 1.0 { image::imageops::thumbnail(&full, w, h) } else { full };
    Ok(([(header::CONTENT_TYPE, "image/png")], png_bytes(&thumb)).into_response())
}

async fn submit_job(
    State(state): State<AppState>,
    body: Result<Json<JobRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let params =
        JobParams::validate(req, state.images()).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    let (id, fresh) = {
        let mut store = state.0.jobs.lock().expect("job store lock");
        match store.by_params.get(&params) {
            Some(&id) => (id, false),
            None => {
                let id = store.jobs.len() as u64 + 1;
                store.jobs.push(Job { id, params: params.clone(), state: JobState::Queued, finished: None });
                store.by_params.insert(params.clone(), id);
                (id, true)
            }
        }
    };
    if fresh {
        tokio::spawn(execute(state.clone(), id, params));
    }
    let view = job_view(&state, id).expect("job was just stored");
    Ok((if fresh { StatusCode::ACCEPTED } else { StatusCode::OK }, Json(view)))
}

async fn execute(state: AppState, id: u64, params: JobParams) {
    let _permit = state.0.pool.clone().acquire_owned().await.expect("pool is never closed");
    set_state(&state, id, JobState::Running, None);
    let workspace = state.0.workspace.clone();
    let finished = tokio::task::spawn_blocking(move || {
        let start = Instant::now();
        let outcome = jobs::run(&workspace, &params);
        Finished { outcome, elapsed: start.elapsed() }
    })
    .await
    .unwrap_or_else(|e| Finished {
        outcome: Err(JobFailure { message: format!("worker panicked: {e}"), lambda3: None }),
        elapsed: Default::default(),
    });
    let state_after = if finished.outcome.is_ok() { JobState::Done } else { JobState::Failed };
    set_state(&state, id, state_after, Some(finished));
}

fn set_state(state: &AppState, id: u64, to: JobState, finished: Option<Finished>) {
    let mut store = state.0.jobs.lock().expect("job store lock");
    let job = store.get_mut(id).expect("jobs are never removed");
    job.state = to;
    if finished.is_some() {
        job.finished = finished;
    }
}

fn job_view(state: &AppState, id: u64) -> Option<Value> {
    let store = state.0.jobs.lock().expect("job store lock");
    let job = store.get(id)?;
    let mut view = json!({
        "id": job.id,
        "kind": job.params.kind,
        "method": job.params.method.label(),
        "kept": job.params.kept,
        "state": job.state,
    });
    if let Some(f) = &job.finished {
        let obj = view.as_object_mut().expect("object");
        obj.insert("elapsed_ms".into(), json!(f.elapsed.as_secs_f64() * 1e3));
        match &f.outcome {
            Ok(out) => {
                obj.insert("result".into(), out.result.clone());
                let urls: Vec<String> = out.artifacts.keys().map(|n| format!("/artifacts/{id}/{n}")).collect();
                obj.insert("artifacts".into(), json!(urls));
            }
            Err(e) => {
                obj.insert("error".into(), json!(e));
            }
        }
    }
    Some(view)
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    id.parse::<u64>()
        .ok()
        .and_then(|n| job_view(&state, n))
        .map(Json)
        .ok_or_else(|| not_found(format!("job {id}")))
}

async fn get_artifact(
    State(state): State<AppState>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let store = state.0.jobs.lock().expect("job store lock");
    let job = id
        .parse::<u64>()
        .ok()
        .and_then(|n| store.get(n))
        .ok_or_else(|| not_found(format!("job {id}")))?;
    let Some(finished) = &job.finished else {
        return Err(ApiError(StatusCode::CONFLICT, format!("job {id} has not finished")));
    };
    let out = finished
        .outcome
        .as_ref()
        .map_err(|e| ApiError(StatusCode::CONFLICT, format!("job {id} failed: {}", e.message)))?;
    let artifact = out.artifacts.get(name.as_str()).ok_or_else(|| not_found(format!("artifact {name}")))?;
    Ok(([(header::CONTENT_TYPE, artifact.content_type)], artifact.bytes.clone()).into_response())
}
