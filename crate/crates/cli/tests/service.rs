mod common;

use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use common::{fixture, run_ok, scratch};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tinydet::runs::RunStore;
use tinydet::service::{router, AppState, DetectResponse, EvalResponse, TrackResponse};
use tinydet_core::postprocess::{read_detections, DetectionRecord};
use tower::ServiceExt;

fn app() -> (Router, String) {
    let f = fixture();
    let state = AppState::load(&f.model, RunStore::new(&f.runs)).unwrap();
    let id = state.model_id.clone();
    (router(Arc::new(state)), id)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Option<String>, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ctype, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: &Value) -> Request<Body> {
    Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap()
}

const BOUNDARY: &str = "tinydet-test-boundary";

fn post_multipart(uri: &str, file: Option<(&str, &[u8])>, fields: &[(&str, &str)]) -> Request<Body> {
    let mut body = Vec::new();
    for (k, v) in fields {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").as_bytes());
    }
    if let Some((name, bytes)) = file {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"media\"; filename=\"{name}\"\r\nContent-Type: application/octet-stream\r\n\r\n").as_bytes());
        body.extend(bytes);
        body.extend(b"\r\n");
    }
    body.extend(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post(uri).header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}")).body(Body::from(body)).unwrap()
}

fn frames_path(source: &str) -> String {
    fixture().data.join(source).to_str().unwrap().to_string()
}

fn all_dets(r: &DetectResponse) -> Vec<DetectionRecord> {
    r.frames.iter().flat_map(|f| f.detections.clone()).collect()
}

#[tokio::test]
async fn health_reports_the_loaded_model() {
    let (app, id) = app();
    let (status, ctype, body) = send(&app, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("application/json"));
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({ "status": "ok", "model": id }));
    let (_, _, body) = send(&app, get("/models")).await;
    let models: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(models[0]["id"], json!(id));
    assert_eq!(models[0]["input_size"], json!(64));
    assert_eq!(models[0]["anchors"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn detect_is_byte_identical_across_requests() {
    let (app, id) = app();
    let req = || post_json("/detect", &json!({ "path": frames_path("synth_12"), "conf": 0.02, "nms_iou": 0.45 }));
    let (s1, _, a) = send(&app, req()).await;
    let (s2, _, b) = send(&app, req()).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
    let r: DetectResponse = serde_json::from_slice(&a).unwrap();
    assert_eq!(r.model, id);
    assert_eq!(r.frames.len(), 10);
    assert_eq!(r.count, all_dets(&r).len());
}

#[tokio::test]
async fn raising_confidence_only_removes_detections() {
    let (app, _) = app();
    let mut previous: Option<Vec<DetectionRecord>> = None;
    for conf in [0.0, 0.005, 0.01, 0.03, 0.1, 0.5, 0.99] {
        let (status, _, body) = send(&app, post_json("/detect", &json!({ "path": frames_path("synth_13"), "conf": conf }))).await;
        assert_eq!(status, StatusCode::OK);
        let dets = all_dets(&serde_json::from_slice(&body).unwrap());
        if let Some(prev) = &previous {
            for d in &dets {
                assert!(prev.contains(d), "conf {conf}: {d:?} absent at lower threshold");
            }
            assert_eq!(dets.len(), prev.iter().filter(|d| d.conf >= conf).count(), "conf {conf}");
        }
        previous = Some(dets);
    }
}

#[tokio::test]
async fn service_and_cli_detections_agree() {
    let f = fixture();
    let (app, _) = app();
    let dir = scratch("svc-cli");
    let out = dir.join("d.jsonl");
    run_ok(
        &dir.join("runs"),
        &["detect", "--model", f.model.to_str().unwrap(), &frames_path("synth_11"), "--conf", "0.02", "--out", out.to_str().unwrap()],
    );
    let cli = read_detections(BufReader::new(File::open(&out).unwrap())).unwrap();
    let (_, _, body) = send(&app, post_json("/detect", &json!({ "path": frames_path("synth_11"), "conf": 0.02 }))).await;
    assert_eq!(all_dets(&serde_json::from_slice(&body).unwrap()), cli);
}

#[tokio::test]
async fn uploads_match_path_requests_and_render_overlays() {
    let (app, _) = app();
    let png_path = Path::new(&frames_path("synth_12")).join("frame_00003.png");
    let bytes = fs::read(&png_path).unwrap();
    let (status, _, body) = send(&app, post_multipart("/detect", Some(("frame_00003.png", &bytes)), &[("conf", "0.02")])).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let up: DetectResponse = serde_json::from_slice(&body).unwrap();
    let (_, _, body) = send(&app, post_json("/detect", &json!({ "path": png_path, "conf": 0.02 }))).await;
    let by_path: DetectResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(up.frames.len(), 1);
    assert_eq!(up.media_digest, by_path.media_digest);
    let boxes = |r: &DetectResponse| r.frames[0].detections.iter().map(|d| (d.class, d.conf, d.x_min, d.y_min, d.x_max, d.y_max)).collect::<Vec<_>>();
    assert_eq!(boxes(&up), boxes(&by_path));

    let (status, ctype, png) = send(&app, get(&up.frames[0].overlay)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (up.frames[0].width, up.frames[0].height));
    let (status, _, _) = send(&app, get("/overlays/0000.png")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_media_and_parameters_are_client_errors() {
    let (app, _) = app();
    let cases = [
        post_multipart("/detect", Some(("clip.png", b"definitely not an image")), &[]),
        post_multipart("/detect", Some(("clip.avi", b"RIFF....AVI garbage")), &[]),
        post_multipart("/detect", None, &[("conf", "0.5")]),
        post_json("/detect", &json!({ "path": "/no/such/media.avi" })),
        post_json("/detect", &json!({ "conf": 0.5 })),
        post_json("/detect", &json!({ "path": frames_path("synth_11"), "conf": 1.5 })),
        post_json("/detect", &json!({ "path": frames_path("synth_11"), "nms_iou": "high" })),
        post_json("/track", &json!({ "path": "/no/such/dir" })),
        Request::post("/detect").header(header::CONTENT_TYPE, "application/json").body(Body::from("{not json")).unwrap(),
    ];
    for (i, req) in cases.into_iter().enumerate() {
        let (status, _, body) = send(&app, req).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "case {i}: {}", String::from_utf8_lossy(&body));
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert!(v["error"].is_string(), "case {i}");
    }
}

#[tokio::test]
async fn runs_are_served_from_the_store() {
    let f = fixture();
    let (app, _) = app();
    let (status, _, body) = send(&app, get(&format!("/runs/{}", f.train_run))).await;
    assert_eq!(status, StatusCode::OK);
    let m: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(m["run_id"], json!(f.train_run));
    assert_eq!(m["command"], "train");
    assert!(m["results"]["throughput"]["fps"].as_f64().unwrap() > 0.0);
    let (_, _, body) = send(&app, get("/runs")).await;
    let list: Vec<Value> = serde_json::from_slice(&body).unwrap();
    assert!(list.iter().any(|r| r["run_id"] == json!(f.train_run)));
    for bad in ["/runs/nope", "/runs/..", "/runs/.hidden"] {
        assert_eq!(send(&app, get(bad)).await.0, StatusCode::NOT_FOUND, "{bad}");
    }
}

#[tokio::test]
async fn track_links_detections_per_source() {
    let (app, _) = app();
    let req = json!({ "path": frames_path("synth_11"), "conf": 0.02, "gate_px": 12.0, "fps": 25.0 });
    let (status, _, body) = send(&app, post_json("/track", &req)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let r: TrackResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(r.tracker.gate_px, 12.0);
    for (source, t) in &r.sources {
        assert_eq!(source, "synth_11");
        assert_eq!(t.motility.entries.len() + t.motility.excluded.len(), t.trajectories.len());
    }
    assert_eq!(send(&app, post_json("/track", &req)).await.2, body);
}

#[tokio::test]
async fn eval_endpoint_matches_the_cli_report() {
    let f = fixture();
    let (app, _) = app();
    let dir = scratch("svc-eval");
    let runs = dir.join("runs");
    let dets_path = dir.join("d.jsonl");
    let gt = frames_path("synth_11");
    run_ok(&runs, &["detect", "--model", f.model.to_str().unwrap(), &gt, "--conf", "0.01", "--out", dets_path.to_str().unwrap()]);
    let cli = run_ok(&runs, &["eval", "--detections", dets_path.to_str().unwrap(), "--gt", &gt, "--conf", "0.05"]);
    let cli_report: Value = serde_json::from_reader(File::open(cli["report"].as_str().unwrap()).unwrap()).unwrap();

    let dets = read_detections(BufReader::new(File::open(&dets_path).unwrap())).unwrap();
    let ground_truth = tinydet::pipeline::load_ground_truth(Path::new(&gt)).unwrap();
    let req = json!({ "detections": dets, "ground_truth": ground_truth, "conf": 0.05 });
    let (status, _, body) = send(&app, post_json("/eval", &req)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: EvalResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(serde_json::to_value(&resp.report).unwrap(), cli_report);
    let sum = |k: fn(&tinydet::service::FrameCounts) -> usize| resp.frames.iter().map(k).sum::<usize>();
    assert_eq!((sum(|c| c.tp), sum(|c| c.fp), sum(|c| c.fn_count)), (resp.report.tp, resp.report.fp, resp.report.fn_count));
    assert_eq!(resp.frames.len(), 10);
}
