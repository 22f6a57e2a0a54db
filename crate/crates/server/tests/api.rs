use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ptlabel_core::detect_io::{DetectionFrameSet, DetectionSource};
use ptlabel_core::store::{FrameFormat, Project};
use ptlabel_core::synth::{generate_scene, intersection_preset, synth_detector, AgentSpec, DetectorConfig, SceneConfig};
use ptlabel_core::{ObjectClass, SceneSequence};
use ptlabel_server::{router, AppState};

struct Fixture {
    _dir: tempfile::TempDir,
    app: Router,
    seq: SceneSequence,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut project = Project::create(dir.path()).unwrap();
    let mut cfg = intersection_preset(6, 40, 5);
    cfg.point_density = 1500.0;
    cfg.ground_points = 1500;
    let seq = generate_scene(&cfg);
    project.add_sequence("scene", &seq, FrameFormat::Bin).unwrap();
    project.save_detections("scene", &synth_detector(&seq, &DetectorConfig::default(), 1)).unwrap();

    let car = AgentSpec::line(ObjectClass::Vehicle, 0, [-10.0, 6.0], 0.0, 6.0);
    let solo = generate_scene(&SceneConfig { duration: 30, agents: vec![car], ..SceneConfig::default() });
    project.add_sequence("solo", &solo, FrameFormat::Bin).unwrap();
    project.add_sequence("bare", &solo, FrameFormat::Ascii).unwrap();
    project.save_detections("bare", &DetectionFrameSet::empty(solo.len(), DetectionSource::File)).unwrap();
    Fixture { _dir: dir, app: router(AppState::new(project)), seq }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = raw(app, method, uri, body).await;
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

async fn raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn car_entry(frame: usize, x: f64) -> Value {
    json!({"frame": frame, "box": [x, 6.0, 0.75, 4.5, 1.8, 1.5, 0.0], "source": "manual", "keyframe": true})
}

#[tokio::test]
async fn empty_project_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(Project::create(dir.path()).unwrap()));
    let (s, v) = call(&app, Method::GET, "/sequences", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!([])));
    let (s, _) = call(&app, Method::GET, "/sequences/nope/annotations", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn get_mutate_get() {
    let f = fixture();
    let (_, list) = call(&f.app, Method::GET, "/sequences", None).await;
    assert_eq!(list.as_array().unwrap().len(), 3);
    let (_, v) = call(&f.app, Method::GET, "/sequences/solo/annotations", None).await;
    assert_eq!(v, json!({"revision": 0, "tracks": []}));

    let edit = json!({"revision": 0, "edit": {"op": "upsert_entry", "track_id": 3, "class": "vehicle", "entry": car_entry(4, 1.0)}});
    let (s, v) = call(&f.app, Method::POST, "/sequences/solo/edits", Some(edit.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["revision"], 1);
    assert_eq!(v["record"]["kind"], "create");
    let (_, v) = call(&f.app, Method::GET, "/sequences/solo/annotations", None).await;
    assert_eq!(v["tracks"][0]["id"], 3);
    assert_eq!(v["tracks"][0]["entries"][0]["box"][0], 1.0);

    // Stale revision.
    let (s, v) = call(&f.app, Method::POST, "/sequences/solo/edits", Some(edit)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["current_revision"], 1);
    // Invalid edit: unknown track without class.
    let bad = json!({"revision": 1, "edit": {"op": "delete_track", "track_id": 99}});
    assert_eq!(call(&f.app, Method::POST, "/sequences/solo/edits", Some(bad)).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, info) = call(&f.app, Method::GET, "/sequences/solo", None).await;
    assert_eq!((info["revision"].clone(), info["track_count"].clone(), info["undo_depth"].clone()), (json!(1), json!(1), json!(1)));
    let (_, log) = call(&f.app, Method::GET, "/sequences/solo/log", None).await;
    assert_eq!(log[0]["track_ids"], json!([3]));
}

#[tokio::test]
async fn concurrent_conflicting_puts() {
    let f = fixture();
    let body = |x: f64| json!({"revision": 0, "tracks": [{"id": 1, "class": "vehicle", "entries": [car_entry(0, x)]}]});
    let (a, b) = tokio::join!(
        call(&f.app, Method::PUT, "/sequences/solo/annotations", Some(body(1.0))),
        call(&f.app, Method::PUT, "/sequences/solo/annotations", Some(body(2.0))),
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let (_, v) = call(&f.app, Method::GET, "/sequences/solo/annotations", None).await;
    assert_eq!(v["revision"], 1);
    let winner = if a.0 == StatusCode::OK { 1.0 } else { 2.0 };
    assert_eq!(v["tracks"][0]["entries"][0]["box"][0], winner);
}

#[tokio::test]
async fn point_payloads_are_deterministic() {
    let f = fixture();
    let (s, full) = raw(&f.app, Method::GET, "/sequences/scene/frames/3/points", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(full.len(), 16 * f.seq.frames[3].len());
    let (_, a) = raw(&f.app, Method::GET, "/sequences/scene/frames/3/points?decimate=4", None).await;
    let (_, b) = raw(&f.app, Method::GET, "/sequences/scene/frames/3/points?decimate=4", None).await;
    assert_eq!(a, b);
    assert_eq!(a.len(), 16 * f.seq.frames[3].len().div_ceil(4));
    assert_eq!(&a[..16], &full[..16]);
    assert_eq!(raw(&f.app, Method::GET, "/sequences/scene/frames/40/points", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(raw(&f.app, Method::GET, "/sequences/scene/frames/1/points?decimate=0", None).await.0, StatusCode::BAD_REQUEST);
    // ASCII-stored sequence serves the same binary layout.
    let (s, ascii) = raw(&f.app, Method::GET, "/sequences/bare/frames/0/points", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ascii.len() % 16, 0);
}

#[tokio::test]
async fn autolabel_stages_ground_truth() {
    let f = fixture();
    let (s, job) = call(&f.app, Method::POST, "/sequences/scene/autolabel", Some(json!({"revision": 0, "wait": true}))).await;
    assert_eq!(s, StatusCode::OK, "{job}");
    assert_eq!(job["state"], "done");
    assert_eq!(job["result"]["revision"], 1);
    let (_, report) = call(&f.app, Method::POST, "/eval", Some(json!({"sequence": "scene"}))).await;
    assert_eq!(report["overall"]["f1"], 1.0, "{report}");
    assert_eq!(report["id_switches"], 0);
    assert!(report["classes"]["vehicle"]["ap_3d"].as_f64().unwrap() > 0.99);

    // Same revision again.
    let (s, _) = call(&f.app, Method::POST, "/sequences/scene/autolabel", Some(json!({"revision": 0}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    // Accept all but one staged track.
    let first = job["result"]["track_ids"][0].as_u64().unwrap();
    let del = json!({"revision": 1, "edit": {"op": "delete_track", "track_id": first}});
    assert_eq!(call(&f.app, Method::POST, "/sequences/scene/edits", Some(del)).await.0, StatusCode::OK);
    let (_, v) = call(&f.app, Method::GET, "/sequences/scene/annotations", None).await;
    assert_eq!(v["tracks"].as_array().unwrap().len(), f.seq.gt_tracks.len() - 1);
}

#[tokio::test]
async fn autolabel_job_polling_and_errors() {
    let f = fixture();
    let (s, job) = call(&f.app, Method::POST, "/sequences/bare/autolabel", Some(json!({"revision": 0}))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let uri = format!("/jobs/{}", job["id"]);
    let mut status = Value::Null;
    for _ in 0..200 {
        status = call(&f.app, Method::GET, &uri, None).await.1;
        if status["state"] != "running" {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    }
    assert_eq!(status["state"], "done", "{status}");
    assert_eq!(status["result"]["track_ids"], json!([]));

    let (s, v) = call(&f.app, Method::POST, "/sequences/solo/autolabel", Some(json!({"revision": 0}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["error"].as_str().unwrap().contains("no detections"));
    assert_eq!(call(&f.app, Method::GET, "/jobs/999", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn propagate_then_undo_leaves_no_trace() {
    let f = fixture();
    let start = json!([-10.0, 6.0, 0.75, 4.5, 1.8, 1.5, 0.0]);
    let body = json!({"revision": 0, "start_frame": 0, "box": start, "class": "vehicle"});
    let (s, v) = call(&f.app, Method::POST, "/sequences/solo/propagate", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    // Runs to the end of a 30-frame sequence.
    assert_eq!(v["added"], 29);
    assert_eq!(v["notice"]["kind"], "sequence_end");
    let (_, ann) = call(&f.app, Method::GET, "/sequences/solo/annotations", None).await;
    let entries = ann["tracks"][0]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 30);
    assert_eq!(entries[10]["keyframe"], true);
    assert_eq!(entries[10]["source"], "auto_sot");
    assert_eq!(entries[9]["keyframe"], false);

    let (s, v) = call(&f.app, Method::POST, "/sequences/solo/undo", Some(json!({"revision": 1}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["record"]["undoes"], 1);
    let (_, ann) = call(&f.app, Method::GET, "/sequences/solo/annotations", None).await;
    assert_eq!(ann["tracks"], json!([]));
    let (s, _) = call(&f.app, Method::POST, "/sequences/solo/undo", Some(json!({"revision": 2}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let far = json!({"revision": 2, "start_frame": 30, "box": start, "class": "vehicle"});
    assert_eq!(call(&f.app, Method::POST, "/sequences/solo/propagate", Some(far)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn track_operations_are_undoable_edits() {
    let f = fixture();
    let entries: Vec<Value> = (0..20).map(|fr| {
        let mut e = car_entry(fr, fr as f64 * 0.6);
        e["keyframe"] = json!(fr % 10 == 0 || fr == 19);
        e
    }).collect();
    let tracks = json!([{"id": 1, "class": "vehicle", "entries": entries}]);
    let (s, _) = call(&f.app, Method::PUT, "/sequences/solo/annotations", Some(json!({"revision": 0, "tracks": tracks}))).await;
    assert_eq!(s, StatusCode::OK);

    let ops = [
        ("interpolate", json!({})),
        ("smooth", json!({"weight": 0.8})),
        ("reorient", json!({})),
        ("flip", json!({"start": 0, "end": 5})),
        ("idfix", json!({"from_frame": 12, "new_id": 7})),
    ];
    let mut rev = 1;
    for (op, params) in ops {
        let mut body = params.clone();
        body["revision"] = json!(rev);
        let (s, v) = call(&f.app, Method::POST, &format!("/sequences/solo/tracks/1/{op}"), Some(body)).await;
        assert_eq!(s, StatusCode::OK, "{op}: {v}");
        rev = v["revision"].as_u64().unwrap();
    }
    let (_, ann) = call(&f.app, Method::GET, "/sequences/solo/annotations", None).await;
    let ids: Vec<u64> = ann["tracks"].as_array().unwrap().iter().map(|t| t["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, vec![1, 7]);

    let (s, _) = call(&f.app, Method::POST, "/sequences/solo/tracks/1/teleport", Some(json!({"revision": rev}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&f.app, Method::POST, "/sequences/solo/tracks/42/smooth", Some(json!({"revision": rev}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&f.app, Method::POST, "/sequences/solo/tracks/1/flip", Some(json!({"revision": rev, "start": 2}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    // Undo everything back to the empty start.
    while rev > 0 {
        let (_, info) = call(&f.app, Method::GET, "/sequences/solo", None).await;
        if info["undo_depth"] == 0 {
            break;
        }
        let (s, v) = call(&f.app, Method::POST, "/sequences/solo/undo", Some(json!({"revision": rev}))).await;
        assert_eq!(s, StatusCode::OK);
        rev = v["revision"].as_u64().unwrap();
    }
    let (_, ann) = call(&f.app, Method::GET, "/sequences/solo/annotations", None).await;
    assert_eq!(ann["tracks"], json!([]));
}

#[tokio::test]
async fn ground_fit_and_query() {
    let f = fixture();
    let (s, _) = call(&f.app, Method::GET, "/sequences/solo/ground?x=1&y=2", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call(&f.app, Method::POST, "/sequences/solo/ground", Some(json!({"frame": 0, "cell_size": 2.0}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = call(&f.app, Method::GET, "/sequences/solo/ground?x=1&y=2", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["z"].as_f64().unwrap().abs() < 0.05, "{v}");
}

#[tokio::test]
async fn eval_with_explicit_tracks() {
    let f = fixture();
    let gt = serde_json::to_value(&f.seq.gt_tracks).unwrap();
    let (s, v) = call(&f.app, Method::POST, "/eval", Some(json!({"predictions": gt, "ground_truth": gt, "iou": 0.3}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["overall"]["f1"], 1.0);
    assert_eq!(v["metric"], "bev");
    let (s, _) = call(&f.app, Method::POST, "/eval", Some(json!({"predictions": gt}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&f.app, Method::POST, "/eval", Some(json!({"sequence": "solo", "iou": 1.5}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
