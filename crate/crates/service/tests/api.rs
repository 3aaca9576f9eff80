use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method as HttpMethod, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use semret_core::anim::io::animation_to_json;
use semret_core::fixtures::{belly, clap_static, Scenario};
use semret_core::job::{Job, JobRequest};
use semret_core::limb::Limb;
use semret_core::optimizer::{NoObserver, Term};
use semret_service::{router, AppState, JobEvent, JobState, Phase};

fn app() -> Router {
    router(AppState::default(), None)
}

async fn send(app: &Router, method: HttpMethod, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn request_json(s: &Scenario, iterations: usize) -> String {
    let mut r = s.request();
    r.config.iterations = iterations;
    serde_json::to_string(&r).unwrap()
}

async fn submit(app: &Router, body: String) -> String {
    let (status, text) = send(app, HttpMethod::POST, "/api/v1/jobs", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{text}");
    let v: Value = serde_json::from_str(&text).unwrap();
    v["id"].as_str().unwrap().to_string()
}

async fn state(app: &Router, id: &str) -> JobState {
    let (status, text) = send(app, HttpMethod::GET, &format!("/api/v1/jobs/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    serde_json::from_str(&text).unwrap()
}

async fn wait_finished(app: &Router, id: &str) -> JobState {
    let start = Instant::now();
    loop {
        let s = state(app, id).await;
        if s.phase.is_terminal() {
            return s;
        }
        assert!(start.elapsed() < Duration::from_secs(120), "job {id} did not finish");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

/// Parses a finished event stream into its events.
fn parse_events(text: &str) -> Vec<(String, JobEvent)> {
    let mut out = Vec::new();
    for block in text.split("\n\n") {
        let mut kind = None;
        let mut data = String::new();
        for line in block.lines() {
            if let Some(k) = line.strip_prefix("event:") {
                kind = Some(k.trim().to_string());
            } else if let Some(d) = line.strip_prefix("data:") {
                data.push_str(d.trim_start());
            }
        }
        if let Some(k) = kind {
            let state: JobState = serde_json::from_str(&data).unwrap();
            let seq = out.len() as u64;
            let kind = match k.as_str() {
                "checkpoint" => semret_service::EventKind::Checkpoint,
                "done" => semret_service::EventKind::Done,
                _ => semret_service::EventKind::Failed,
            };
            out.push((k, JobEvent { seq, kind, state }));
        }
    }
    out
}

fn direct_animation(s: &Scenario, iterations: usize) -> String {
    let mut r = s.request();
    r.config.iterations = iterations;
    let job = Job::try_from(r).unwrap();
    animation_to_json(&job.run(&mut NoObserver).unwrap().animation)
}

#[tokio::test(flavor = "multi_thread")]
async fn submitted_job_runs_to_completion() {
    let app = app();
    let s = belly(6);
    let a = submit(&app, request_json(&s, 300)).await;
    let b = submit(&app, request_json(&s, 300)).await;
    assert_ne!(a, b);
    let done = wait_finished(&app, &a).await;
    assert_eq!(done.phase, Phase::Done);
    wait_finished(&app, &b).await;

    let (status, text) = send(&app, HttpMethod::GET, &format!("/api/v1/jobs/{a}/events"), None).await;
    assert_eq!(status, StatusCode::OK);
    let events = parse_events(&text);
    assert_eq!(events.last().unwrap().0, "done");
    assert!(events.iter().filter(|e| e.0 == "checkpoint").count() >= 10);
    let torso = events.iter().any(|(_, e)| {
        e.state
            .conflicts
            .iter()
            .any(|c| c.limb == Limb::Torso && c.terms == [Term::Dist, Term::Pen])
    });
    assert!(torso, "no torso dist/pen conflict in the event stream");
    for (_, e) in &events {
        if let Some(snap) = &e.state.snapshot {
            assert!(snap.frames.len() <= 10);
        }
    }
    let iterations: Vec<usize> = events.iter().map(|e| e.1.state.iteration).collect();
    assert!(iterations.windows(2).all(|w| w[0] <= w[1]));

    let (status, text) = send(&app, HttpMethod::GET, &format!("/api/v1/jobs/{a}/result"), None).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["animation"]["frames"].as_array().unwrap().len(), 6);
    assert!(v["report"]["timing"]["frames_per_second"].as_f64().unwrap() > 0.0);

    let (_, listed) = send(&app, HttpMethod::GET, "/api/v1/jobs", None).await;
    let listed: Vec<JobState> = serde_json::from_str(&listed).unwrap();
    assert_eq!(listed.len(), 2);
}

#[tokio::test(flavor = "multi_thread")]
async fn service_result_matches_direct_run_bit_for_bit() {
    let app = app();
    let s = clap_static(8);
    let id = submit(&app, request_json(&s, 80)).await;
    wait_finished(&app, &id).await;
    let (status, text) = send(&app, HttpMethod::GET, &format!("/api/v1/jobs/{id}/result/animation"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(text, direct_animation(&s, 80));
}

#[tokio::test(flavor = "multi_thread")]
async fn interleaved_jobs_match_serial_runs() {
    let app = app();
    let scenes = [clap_static(8), belly(6)];
    let ids = [
        submit(&app, request_json(&scenes[0], 60)).await,
        submit(&app, request_json(&scenes[1], 60)).await,
    ];
    for (id, s) in ids.iter().zip(&scenes) {
        wait_finished(&app, id).await;
        let (_, text) = send(&app, HttpMethod::GET, &format!("/api/v1/jobs/{id}/result/animation"), None).await;
        assert_eq!(text, direct_animation(s, 60));
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn invalid_submissions_are_rejected_with_a_location() {
    let app = app();
    let (status, text) = send(&app, HttpMethod::POST, "/api/v1/jobs", Some("{\"source_character\": 3}".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["path"], "source_character");

    let s = belly(3);
    let mut r: JobRequest = s.request();
    r.target_character.skeleton.bones[3].tpose_world[0] = 2.0;
    let name = r.target_character.skeleton.bones[3].name.clone();
    let (status, text) = send(&app, HttpMethod::POST, "/api/v1/jobs", Some(serde_json::to_string(&r).unwrap())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(text.contains(&name), "{text}");

    let mut r: Value = serde_json::from_str(&request_json(&s, 10)).unwrap();
    r["source_animation"]["frames"][1]["rotations"][0] = json!([1.0, 0.0]);
    let (status, text) = send(&app, HttpMethod::POST, "/api/v1/jobs", Some(r.to_string())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert!(v["path"].as_str().unwrap().starts_with("source_animation.frames[1].rotations[0]"), "{text}");
}

#[tokio::test(flavor = "multi_thread")]
async fn lifecycle_pause_resume_cancel() {
    let app = app();
    let s = belly(6);
    let id = submit(&app, request_json(&s, 3000)).await;
    let (status, _) = send(&app, HttpMethod::POST, &format!("/api/v1/jobs/{id}/pause"), None).await;
    assert_eq!(status, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(200)).await;
    let before = state(&app, &id).await;
    assert_eq!(before.phase, Phase::Paused);
    tokio::time::sleep(Duration::from_millis(300)).await;
    let after = state(&app, &id).await;
    assert_eq!(before.iteration, after.iteration, "paused job kept iterating");

    let (status, _) = send(&app, HttpMethod::GET, &format!("/api/v1/jobs/{id}/result"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, _) = send(&app, HttpMethod::POST, &format!("/api/v1/jobs/{id}/resume"), None).await;
    assert_eq!(status, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(100)).await;
    for _ in 0..2 {
        let (status, _) = send(&app, HttpMethod::POST, &format!("/api/v1/jobs/{id}/cancel"), None).await;
        assert_eq!(status, StatusCode::OK);
    }
    let end = wait_finished(&app, &id).await;
    assert_eq!(end.phase, Phase::Failed);
    assert!(end.error.unwrap().contains("cancelled"));
    let (status, _) = send(&app, HttpMethod::POST, &format!("/api/v1/jobs/{id}/cancel"), None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = send(&app, HttpMethod::GET, &format!("/api/v1/jobs/{id}/result"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = send(&app, HttpMethod::POST, &format!("/api/v1/jobs/{id}/pause"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn balance_updates_are_validated_and_applied() {
    let app = app();
    let s = belly(6);
    let unbalanced = submit(&app, request_json(&s, 300)).await;
    let id = submit(&app, request_json(&s, 300)).await;
    send(&app, HttpMethod::POST, &format!("/api/v1/jobs/{id}/pause"), None).await;

    let uri = format!("/api/v1/jobs/{id}/balance");
    let body = |lambda: f64| Some(json!({"limb": "torso", "terms": ["pen", "dist"], "lambda": lambda}).to_string());
    let (status, _) = send(&app, HttpMethod::PATCH, &uri, body(1.5)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, HttpMethod::PATCH, "/api/v1/jobs/nope/balance", body(0.5)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, text) = send(&app, HttpMethod::PATCH, &uri, body(1.0)).await;
    assert_eq!(status, StatusCode::OK, "{text}");
    send(&app, HttpMethod::POST, &format!("/api/v1/jobs/{id}/resume"), None).await;

    let plain = wait_finished(&app, &unbalanced).await;
    let tuned = wait_finished(&app, &id).await;
    assert_eq!(tuned.phase, Phase::Done);
    assert_eq!(tuned.balance.len(), 1);
    let pen = |s: &JobState| s.per_limb[&Limb::Torso][&Term::Pen];
    assert!(pen(&tuned) < pen(&plain), "torso pen {} vs {}", pen(&tuned), pen(&plain));

    let (status, _) = send(&app, HttpMethod::PATCH, &uri, body(0.5)).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_jobs_are_not_found() {
    let app = app();
    for uri in ["/api/v1/jobs/x", "/api/v1/jobs/x/events", "/api/v1/jobs/x/result"] {
        let (status, _) = send(&app, HttpMethod::GET, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn multipart_submission() {
    let app = app();
    let s = clap_static(4);
    let r = s.request();
    let boundary = "XyZ";
    let mut body = String::new();
    let part = |name: &str, value: String, body: &mut String| {
        body.push_str(&format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n"
        ));
    };
    part("source_character", serde_json::to_string(&r.source_character).unwrap(), &mut body);
    part("target_character", serde_json::to_string(&r.target_character).unwrap(), &mut body);
    part("source_animation", serde_json::to_string(&r.source_animation).unwrap(), &mut body);
    part("mapping", serde_json::to_string(&r.mapping).unwrap(), &mut body);
    part("config", json!({"iterations": 20}).to_string(), &mut body);
    part("method", "copy-rotations".into(), &mut body);
    body.push_str(&format!("--{boundary}--\r\n"));
    let req = Request::builder()
        .method(HttpMethod::POST)
        .uri("/api/v1/jobs")
        .header("content-type", format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::ACCEPTED);
    let v: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let id = v["id"].as_str().unwrap().to_string();
    assert_eq!(wait_finished(&app, &id).await.phase, Phase::Done);
    let (_, text) = send(&app, HttpMethod::GET, &format!("/api/v1/jobs/{id}/result"), None).await;
    let v: Value = serde_json::from_str(&text).unwrap();
    assert!(v["report"].is_null());
}

#[tokio::test(flavor = "multi_thread")]
async fn static_ui_is_served_at_the_root() {
    let dir = std::env::temp_dir().join(format!("semret-ui-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("index.html"), "<h1>authoring</h1>").unwrap();
    let app = router(AppState::default(), Some(dir.clone()));
    let (status, text) = send(&app, HttpMethod::GET, "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(text.contains("authoring"));
    let (status, _) = send(&app, HttpMethod::GET, "/api/v1/jobs", None).await;
    assert_eq!(status, StatusCode::OK);
    std::fs::remove_dir_all(dir).unwrap();
}
