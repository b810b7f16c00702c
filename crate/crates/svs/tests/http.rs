//! Session service through the router, without a socket.

mod common;

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use svs::server::{router, AppState, Shared, REVISION_HEADER};
use svs_core::dsp::MelSpectrogram;
use tower::ServiceExt;

struct Reply {
    status: StatusCode,
    revision: Option<u64>,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> Reply {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let revision = resp
        .headers()
        .get(REVISION_HEADER)
        .map(|v| v.to_str().unwrap().parse().unwrap());
    let body = to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    Reply { status, revision, body }
}

fn state(dir: Option<&std::path::Path>) -> Shared {
    AppState::open(common::small_model(3), dir.map(Into::into), 8).unwrap()
}

async fn create(app: &Router, seed: u64) -> String {
    let score: Value = serde_json::from_str(&common::score_json(seed)).unwrap();
    let r = call(app, Method::POST, "/sessions", Some(json!({ "score": score, "seed": 5 }))).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.revision, Some(1));
    r.json()["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn fresh_session_exposes_curves_mel_and_audio() {
    let app = router(state(None));
    let id = create(&app, 1).await;
    let summary = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.json();
    let frames = summary["frames"].as_u64().unwrap() as usize;
    assert_eq!(summary["n_tokens"], 4);

    let style = call(&app, Method::GET, &format!("/sessions/{id}/style"), None).await;
    assert_eq!(style.revision, Some(1));
    let docs = style.json()["scores"].as_array().unwrap().clone();
    assert_eq!(docs.len(), 2);
    for d in &docs {
        assert_eq!(d["frames"].as_u64().unwrap() as usize, frames);
        assert_eq!(d["n_tokens"], 4);
    }

    let f0 = call(&app, Method::GET, &format!("/sessions/{id}/f0"), None).await.json();
    assert_eq!(f0["f0_hz"].as_array().unwrap().len(), frames);

    let mel = call(&app, Method::GET, &format!("/sessions/{id}/mel"), None).await;
    assert_eq!(mel.revision, Some(1));
    assert_eq!(MelSpectrogram::from_bytes(&mel.body).unwrap().n_frames(), frames);

    let wav = call(&app, Method::GET, &format!("/sessions/{id}/audio.wav"), None).await;
    assert_eq!(wav.status, StatusCode::OK);
    assert!(wav.body.starts_with(b"RIFF"));
}

#[tokio::test]
async fn negative_f0_is_rejected_naming_the_frame() {
    let app = router(state(None));
    let id = create(&app, 1).await;
    let uri = format!("/sessions/{id}/f0");
    let mut f0 = call(&app, Method::GET, &uri, None).await.json();
    f0["f0_hz"][3] = json!(-10.0);
    let r = call(&app, Method::PUT, &uri, Some(json!({ "revision": 1, "f0_hz": f0["f0_hz"] }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"]["field"], "f0_hz[3]");
    assert!(r.json()["error"]["message"].as_str().unwrap().contains("f0_hz[3]"));
    assert_eq!(r.revision, Some(1));

    let short = call(&app, Method::PUT, &uri, Some(json!({ "revision": 1, "f0_hz": [0.0, 0.0] }))).await;
    assert_eq!(short.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(short.json()["error"]["field"], "f0_hz");

    let missing = call(&app, Method::PUT, &uri, Some(json!({ "f0_hz": [] }))).await;
    assert_eq!(missing.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn invalid_style_is_rejected_with_a_field_path() {
    let app = router(state(None));
    let id = create(&app, 1).await;
    let uri = format!("/sessions/{id}/style");
    let mut scores = call(&app, Method::GET, &uri, None).await.json()["scores"].clone();
    scores[0]["edited"] = json!(true);
    scores[0]["scores"][2][1] = json!(-0.5);
    let r = call(&app, Method::PUT, &uri, Some(json!({ "revision": 1, "scores": scores }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"]["field"], "scores[0].scores[2][1]");

    let mut scores = call(&app, Method::GET, &uri, None).await.json()["scores"].clone();
    scores[1]["scores"][0][0] = json!(5.0);
    let r = call(&app, Method::PUT, &uri, Some(json!({ "revision": 1, "scores": scores }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"]["field"], "scores[1].scores[0]");
}

#[tokio::test]
async fn unchanged_curves_resynthesize_to_the_same_mel() {
    let app = router(state(None));
    let id = create(&app, 2).await;
    let before = call(&app, Method::GET, &format!("/sessions/{id}/mel"), None).await.body;

    let style = call(&app, Method::GET, &format!("/sessions/{id}/style"), None).await.json();
    let r = call(&app, Method::PUT, &format!("/sessions/{id}/style"), Some(json!({ "revision": 1, "scores": style["scores"] }))).await;
    assert_eq!((r.status, r.revision), (StatusCode::OK, Some(2)));
    let f0 = call(&app, Method::GET, &format!("/sessions/{id}/f0"), None).await.json();
    let r = call(&app, Method::PUT, &format!("/sessions/{id}/f0"), Some(json!({ "revision": 2, "f0_hz": f0["f0_hz"] }))).await;
    assert_eq!((r.status, r.revision), (StatusCode::OK, Some(3)));

    let r = call(&app, Method::POST, &format!("/sessions/{id}/resynthesize"), Some(json!({ "revision": 3 }))).await;
    assert_eq!((r.status, r.revision), (StatusCode::OK, Some(4)));
    let body = r.json();
    assert_eq!(body["pitch_path"], "midi");
    assert_eq!(body["style"], style["scores"]);
    let after = call(&app, Method::GET, &format!("/sessions/{id}/mel"), None).await;
    assert_eq!(after.revision, Some(4));
    assert_eq!(after.body, before);
}

#[tokio::test]
async fn edited_f0_drives_the_f0_path() {
    let app = router(state(None));
    let id = create(&app, 2).await;
    let before = call(&app, Method::GET, &format!("/sessions/{id}/mel"), None).await.body;
    let frames = call(&app, Method::GET, &format!("/sessions/{id}"), None).await.json()["frames"].as_u64().unwrap();
    let contour: Vec<f64> = (0..frames).map(|i| 220.0 + i as f64).collect();
    let r = call(&app, Method::PUT, &format!("/sessions/{id}/f0"), Some(json!({ "revision": 1, "f0_hz": contour }))).await;
    assert_eq!(r.status, StatusCode::OK);
    let r = call(&app, Method::POST, &format!("/sessions/{id}/resynthesize"), None).await;
    assert_eq!(r.json()["pitch_path"], "f0");
    let after = call(&app, Method::GET, &format!("/sessions/{id}/mel"), None).await.body;
    assert_ne!(after, before);
}

#[tokio::test]
async fn stale_revisions_conflict() {
    let app = router(state(None));
    let id = create(&app, 1).await;
    let uri = format!("/sessions/{id}/f0");
    let f0 = call(&app, Method::GET, &uri, None).await.json();
    let put = json!({ "revision": 1, "f0_hz": f0["f0_hz"] });
    assert_eq!(call(&app, Method::PUT, &uri, Some(put.clone())).await.status, StatusCode::OK);
    let replay = call(&app, Method::PUT, &uri, Some(put)).await;
    assert_eq!(replay.status, StatusCode::CONFLICT);
    assert_eq!(replay.revision, Some(2));
    assert_eq!(replay.json()["error"]["field"], "revision");

    let r = call(&app, Method::POST, &format!("/sessions/{id}/resynthesize"), Some(json!({ "revision": 1 }))).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_puts_on_one_revision_admit_exactly_one() {
    let app = router(state(None));
    let id = create(&app, 1).await;
    let uri = format!("/sessions/{id}/f0");
    let f0 = call(&app, Method::GET, &uri, None).await.json();
    let put = json!({ "revision": 1, "f0_hz": f0["f0_hz"] });
    let (a, b) = tokio::join!(
        call(&app, Method::PUT, &uri, Some(put.clone())),
        call(&app, Method::PUT, &uri, Some(put.clone()))
    );
    let mut statuses = [a.status, b.status];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let app = router(state(None));
    let missing = uuid::Uuid::nil();
    for uri in [format!("/sessions/{missing}/style"), "/sessions/not-a-uuid/f0".to_string()] {
        assert_eq!(call(&app, Method::GET, &uri, None).await.status, StatusCode::NOT_FOUND);
    }
    let r = call(&app, Method::PUT, &format!("/sessions/{missing}/f0"), Some(json!({ "revision": 1, "f0_hz": [] }))).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = call(&app, Method::POST, &format!("/sessions/{missing}/resynthesize"), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_scores_are_rejected() {
    let app = router(state(None));
    let r = call(&app, Method::POST, "/sessions", Some(json!({ "score": { "singer_id": 0, "notes": [] } }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"]["field"], "score");
    let r = call(&app, Method::POST, "/sessions", Some(json!({ "seed": 1 }))).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn editing_one_session_leaves_another_untouched() {
    let app = router(state(None));
    let a = create(&app, 4).await;
    let b = create(&app, 4).await;
    let b_before = call(&app, Method::GET, &format!("/sessions/{b}/mel"), None).await.body;
    assert_eq!(call(&app, Method::GET, &format!("/sessions/{a}/mel"), None).await.body, b_before);

    let mut scores = call(&app, Method::GET, &format!("/sessions/{a}/style"), None).await.json()["scores"].clone();
    scores[0]["edited"] = json!(true);
    for row in scores[0]["scores"].as_array_mut().unwrap() {
        row[0] = json!(row[0].as_f64().unwrap() * 3.0);
    }
    let r = call(&app, Method::PUT, &format!("/sessions/{a}/style"), Some(json!({ "revision": 1, "scores": scores }))).await;
    assert_eq!(r.status, StatusCode::OK);
    let ra = call(&app, Method::POST, &format!("/sessions/{a}/resynthesize"), None).await;
    assert_eq!(ra.json()["style"][0]["edited"], true);
    let rb = call(&app, Method::POST, &format!("/sessions/{b}/resynthesize"), None).await;
    assert_eq!(rb.revision, Some(2));

    let a_after = call(&app, Method::GET, &format!("/sessions/{a}/mel"), None).await.body;
    let b_after = call(&app, Method::GET, &format!("/sessions/{b}/mel"), None).await.body;
    assert_ne!(a_after, b_before);
    assert_eq!(b_after, b_before);
}

#[tokio::test]
async fn restart_restores_sessions_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = router(state(Some(dir.path())));
    let id = create(&first, 6).await;
    let frames = call(&first, Method::GET, &format!("/sessions/{id}"), None).await.json()["frames"].as_u64().unwrap();
    let contour: Vec<f64> = (0..frames).map(|i| if i % 7 == 0 { 0.0 } else { 196.0 + 0.1 * i as f64 }).collect();
    let r = call(&first, Method::PUT, &format!("/sessions/{id}/f0"), Some(json!({ "revision": 1, "f0_hz": contour }))).await;
    assert_eq!(r.status, StatusCode::OK);
    let mut scores = call(&first, Method::GET, &format!("/sessions/{id}/style"), None).await.json()["scores"].clone();
    scores[0]["edited"] = json!(true);
    scores[0]["scores"][0][1] = json!(0.123_456_79);
    call(&first, Method::PUT, &format!("/sessions/{id}/style"), Some(json!({ "revision": 2, "scores": scores }))).await;
    call(&first, Method::POST, &format!("/sessions/{id}/resynthesize"), None).await;

    let paths = ["", "/style", "/f0", "/mel", "/audio.wav"];
    let mut before = Vec::new();
    for p in paths {
        before.push(call(&first, Method::GET, &format!("/sessions/{id}{p}"), None).await);
    }
    drop(first);

    let restored: Shared = state(Some(dir.path()));
    assert_eq!(restored.store.len(), 1);
    let second = router(Arc::clone(&restored));
    for (p, b) in paths.iter().zip(&before) {
        let a = call(&second, Method::GET, &format!("/sessions/{id}{p}"), None).await;
        assert_eq!(a.status, StatusCode::OK, "{p}");
        assert_eq!(a.revision, Some(4), "{p}");
        assert_eq!(a.body, b.body, "{p}");
    }
    let r = call(&second, Method::POST, &format!("/sessions/{id}/resynthesize"), Some(json!({ "revision": 4 }))).await;
    assert_eq!(r.revision, Some(5));
}
