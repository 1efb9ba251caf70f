use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use image::{ImageBuffer, Luma};
use nalgebra::{Matrix3xX, Vector3};
use psideal_core::{generate_dataset, GridSpec, SyntheticScenario};
use psideal_io::{load_dataset, write_synthetic, DatasetManifest};
use psideal_service::{router, AppState};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn near_light_app(cols: usize, rows: usize) -> (TempDir, Router) {
    let mut scn = SyntheticScenario::near_light(Some(2.0), 0.1);
    scn.grid = GridSpec::new(2.0, cols - 2, rows - 2).unwrap();
    let ds = generate_dataset(&scn).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic(&ds, "near-light", dir.path()).unwrap();
    let app = router(AppState::new(load_dataset(&manifest).unwrap(), 2).unwrap());
    (dir, app)
}

/// Nine images whose lights lie on `x^2 + y^2 - z^2 = 1`, so every Gram
/// fit is indefinite.
fn breakdown_app() -> (TempDir, Router) {
    let (cols, rows) = (10usize, 6usize);
    let lights: Vec<Vector3<f64>> = (0..9)
        .map(|t| {
            let a = 0.3 + 0.08 * t as f64;
            let th = t as f64 * 0.9;
            Vector3::new(th.cos() * a.cosh(), th.sin() * a.cosh(), a.sinh())
        })
        .collect();
    let normals = Matrix3xX::from_fn(cols * rows, |r, c| match r {
        0 => 0.04 * ((c as f64) * 0.7).sin(),
        1 => 0.04 * ((c as f64) * 1.3).cos(),
        _ => 1.0,
    });
    let m = normals.transpose() * Matrix3xX::from_columns(&lights);
    let scale = m.max();
    let dir = tempfile::tempdir().unwrap();
    let mut images = Vec::new();
    for t in 0..9 {
        let img = ImageBuffer::from_fn(cols as u32, rows as u32, |c, r| {
            let k = psideal_io::raster::pixel_to_node(cols, rows, c as usize, r as usize);
            Luma([psideal_io::raster::quantize16(m[(k, t)] / scale)])
        });
        let name = format!("h{t}.png");
        img.save(dir.path().join(&name)).unwrap();
        images.push(name.into());
    }
    let manifest = DatasetManifest { name: "hyperboloid".into(), width: None, images, lights: None, ground_truth: None };
    let path = dir.path().join("manifest.toml");
    manifest.write(&path).unwrap();
    let app = router(AppState::new(load_dataset(&path).unwrap(), 2).unwrap());
    (dir, app)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = get(app, uri).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn post_job(app: &Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/jobs")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn wait(app: &Router, id: &Value) -> Value {
    for _ in 0..2000 {
        let (status, job) = get_json(app, &format!("/jobs/{id}")).await;
        assert_eq!(status, StatusCode::OK);
        if job["state"] == "done" || job["state"] == "failed" {
            return job;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {id} did not finish");
}

async fn run_job(app: &Router, body: Value) -> Value {
    let (status, job) = post_job(app, body).await;
    assert!(status.is_success(), "{job}");
    wait(app, &job["id"]).await
}

fn first_removed(report: &Value) -> u64 {
    report["trace"][0]["image"].as_u64().unwrap()
}

#[tokio::test]
async fn dataset_and_thumbnails() {
    let (_dir, app) = near_light_app(31, 21);
    let (status, summary) = get_json(&app, "/dataset").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["images"], 9);
    assert_eq!((summary["width"].as_u64(), summary["height"].as_u64()), (Some(31), Some(21)));
    let entries = summary["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 9);
    assert_eq!(entries[2]["thumbnail"], "/thumb/3");

    let (status, png) = get(&app, "/thumb/3").await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (31, 21));
    for bad in ["/thumb/0", "/thumb/10", "/thumb/x"] {
        assert_eq!(get(&app, bad).await.0, StatusCode::NOT_FOUND, "{bad}");
    }
}

#[tokio::test]
async fn thumbnails_are_bounded() {
    let (_dir, app) = near_light_app(300, 120);
    let (_, png) = get(&app, "/thumb/1").await;
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!(img.width(), 256);
    assert!(img.height() <= 256);
}

#[tokio::test]
async fn screening_flags_the_corrupted_image() {
    let (_dir, app) = near_light_app(41, 41);
    let job = run_job(&app, json!({ "kind": "screen" })).await;
    assert_eq!(job["state"], "done", "{job}");
    assert_eq!(job["method"], "all");
    let reports = job["result"]["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    assert_eq!(first_removed(&reports[0]), 3);
    assert_eq!(first_removed(&reports[1]), 3);
    assert_eq!(job["result"]["kept"], json!([1, 2, 3, 4, 5, 6, 7, 8, 9]));

    let (status, body) = get(&app, &format!("/artifacts/{}/report", job["id"])).await;
    assert_eq!(status, StatusCode::OK);
    let report: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(report, job["result"]);
    assert_eq!(get(&app, &format!("/artifacts/{}/surface.obj", job["id"])).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn subsets_keep_original_numbering() {
    let (_dir, app) = near_light_app(41, 41);
    let kept = json!([1, 2, 3, 4, 6, 7, 8, 9]);
    let job = run_job(&app, json!({ "kind": "screen", "method": "algo1", "kept": kept })).await;
    let report = &job["result"]["reports"][0];
    assert_eq!(first_removed(report), 3);
    assert_eq!(report["trace"][0]["candidates"].as_array().unwrap().len(), 8);
    for step in report["trace"].as_array().unwrap() {
        assert_ne!(step["image"], 5);
        assert!(step["candidates"].as_array().unwrap().iter().all(|c| c[0] != 5));
    }
    assert!(!report["kept"].as_array().unwrap().contains(&json!(5)));
}

#[tokio::test]
async fn identical_requests_share_a_job() {
    let (_dir, app) = near_light_app(21, 21);
    let body = json!({ "kind": "indicators", "kept": [9, 8, 7, 6, 5, 4] });
    let (s1, a) = post_job(&app, body.clone()).await;
    let (s2, b) = post_job(&app, body).await;
    assert_eq!(s1, StatusCode::ACCEPTED);
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(a["id"], b["id"]);
    assert_eq!(a["kept"], json!([4, 5, 6, 7, 8, 9]));
    let done = wait(&app, &a["id"]).await;
    assert!(done["result"]["indicators"]["lambda3"].is_number());
    let (_, other) = post_job(&app, json!({ "kind": "indicators" })).await;
    assert_ne!(other["id"], a["id"]);
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let (_dir, app) = near_light_app(21, 21);
    let (status, err) = post_job(&app, json!({ "kind": "reconstruct", "kept": [1, 2, 3, 4, 5] })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["error"].as_str().unwrap().contains("at least six images"), "{err}");
    for body in [
        json!({ "kind": "screen", "kept": [1, 2, 3, 4, 5, 12] }),
        json!({ "kind": "screen", "kept": [1, 1, 2, 3, 4, 5] }),
        json!({ "kind": "screen", "method": "algo3" }),
        json!({ "kind": "reconstruct", "method": "cubic" }),
        json!({ "kind": "indicators", "method": "linear" }),
        json!({ "kind": "render" }),
        json!({ "kind": "screen", "extra": 1 }),
    ] {
        let (status, err) = post_job(&app, body.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert!(err["error"].is_string());
    }
    assert_eq!(get(&app, "/jobs/42").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/jobs/abc").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/artifacts/42/report").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reconstruction_artifacts() {
    let (_dir, app) = near_light_app(41, 31);
    let job = run_job(&app, json!({ "kind": "reconstruct", "kept": [1, 2, 4, 5, 6, 7, 8, 9] })).await;
    assert_eq!(job["state"], "done", "{job}");
    let result = &job["result"];
    assert_eq!(result["method"], "linear");
    assert_eq!(result["estimate"]["lights"].as_array().unwrap().len(), 8);
    assert!(result["relative_error"].as_f64().unwrap() < 0.05, "{result}");
    let urls: Vec<&str> = job["artifacts"].as_array().unwrap().iter().map(|u| u.as_str().unwrap()).collect();
    for name in ["report", "normals.png", "albedo.png", "surface.obj", "heights.csv"] {
        assert!(urls.contains(&format!("/artifacts/{}/{name}", job["id"]).as_str()), "{name}");
    }
    let id = &job["id"];
    let (_, obj) = get(&app, &format!("/artifacts/{id}/surface.obj")).await;
    let obj = String::from_utf8(obj).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 41 * 31);
    let (_, csv) = get(&app, &format!("/artifacts/{id}/heights.csv")).await;
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 31);
    let (_, png) = get(&app, &format!("/artifacts/{id}/normals.png")).await;
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (41, 31));
    assert_eq!(get(&app, &format!("/artifacts/{id}/nothing")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn breakdown_is_reported_not_fatal() {
    let (_dir, app) = breakdown_app();
    let job = run_job(&app, json!({ "kind": "reconstruct" })).await;
    assert_eq!(job["state"], "failed");
    let lambda3 = job["error"]["lambda3"].as_f64().unwrap();
    assert!(lambda3 < 0.0);
    assert!(job["error"]["message"].as_str().unwrap().contains("breakdown"), "{job}");
    assert_eq!(get(&app, &format!("/artifacts/{}/report", job["id"])).await.0, StatusCode::CONFLICT);

    let job = run_job(&app, json!({ "kind": "screen", "method": "algo1" })).await;
    assert_eq!(job["state"], "failed");
    assert!(job["error"]["lambda3"].as_f64().unwrap() <= 0.0);

    let job = run_job(&app, json!({ "kind": "screen" })).await;
    assert_eq!(job["state"], "done");
    let reports = job["result"]["reports"].as_array().unwrap();
    assert!(reports[0]["failure"].is_string() && reports[0]["breakdown"] == true);

    let job = run_job(&app, json!({ "kind": "indicators" })).await;
    assert_eq!(job["state"], "done");
    assert!(job["result"]["indicators"]["lambda3"].as_f64().unwrap() <= 0.0);
    assert_eq!(job["result"]["indicators"]["breakdown"], true);
}

#[tokio::test]
async fn concurrent_jobs_all_finish() {
    let (_dir, app) = near_light_app(31, 31);
    let bodies = [
        json!({ "kind": "screen", "method": "algo2" }),
        json!({ "kind": "screen", "method": "algo1-fast" }),
        json!({ "kind": "reconstruct", "method": "nonlinear", "kept": [1, 2, 4, 5, 6, 7, 8, 9] }),
        json!({ "kind": "indicators" }),
        json!({ "kind": "reconstruct" }),
    ];
    let mut ids = Vec::new();
    for b in &bodies {
        ids.push(post_job(&app, b.clone()).await.1["id"].clone());
    }
    for id in &ids {
        let job = wait(&app, id).await;
        assert_eq!(job["state"], "done", "{job}");
        assert!(job["elapsed_ms"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn empty_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    std::fs::write(&path, "images = []\n").unwrap();
    assert!(load_dataset(Path::new(&path)).is_err());
}
