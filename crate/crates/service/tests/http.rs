mod common;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use common::Fixture;
use reflect_service::config::StudyConfig;
use reflect_service::http::router;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn login(app: &Router, p: &str) -> String {
    let (status, body) = call(app, Method::POST, "/sessions", None, Some(json!({"participant_id": p, "access_code": format!("code-{p}")}))).await;
    assert_eq!(status, StatusCode::OK);
    body["token"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn requests_without_a_session_are_unauthorized() {
    let f = Fixture::new(StudyConfig::default());
    let app = router(f.svc.clone(), None);
    for (m, uri) in [
        (Method::GET, "/prompts/today"),
        (Method::GET, "/dashboard"),
        (Method::GET, "/notifications"),
        (Method::GET, "/partner-reflections?day=1"),
    ] {
        let (status, body) = call(&app, m, uri, None, None).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED, "{uri}");
        assert_eq!(body["code"], "unauthorized");
    }
    let (status, _) = call(&app, Method::GET, "/dashboard", Some("nope"), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = call(&app, Method::GET, "/health", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
}

#[tokio::test]
async fn full_round_over_http() {
    let f = Fixture::new(StudyConfig::default());
    let app = router(f.svc.clone(), None);
    let r1 = login(&app, "r1").await;
    let r2 = login(&app, "r2").await;
    let c1 = login(&app, "c1").await;

    let up = json!({"meeting_index": 1, "transcript": common::upload(1).transcript});
    let (status, body) = call(&app, Method::POST, "/transcripts", Some(&r1), Some(up.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["recap"].is_string());
    let (status, body) = call(&app, Method::POST, "/transcripts", Some(&c1), Some(up)).await;
    assert_eq!(status, StatusCode::OK);
    assert!(body.get("recap").is_none());

    f.at(1, 9, 0);
    let (_, today) = call(&app, Method::GET, "/prompts/today", Some(&r1), None).await;
    let pid = today[0]["prompt_id"].as_str().unwrap().to_owned();
    let (status, err) = call(&app, Method::POST, "/responses", Some(&r1), Some(json!({"prompt_id": pid, "body": common::words(71)}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "word_cap_exceeded");
    let (status, entry) = call(&app, Method::POST, "/responses", Some(&r1), Some(json!({"prompt_id": pid, "body": common::words(70)}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(entry["word_count"], 70);

    let (status, seen) = call(&app, Method::GET, "/partner-reflections?day=1", Some(&r2), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(seen.as_array().unwrap().len(), 1);
    let (status, body) = call(&app, Method::GET, "/partner-reflections?day=1", Some(&c1), None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::FORBIDDEN, Some("condition_denied")));
    let (status, _) = call(&app, Method::GET, "/partner-reflections", Some(&c1), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = call(&app, Method::GET, "/partner-reflections", Some(&r2), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let eid = entry["entry_id"].as_str().unwrap();
    let (status, body) =
        call(&app, Method::POST, &format!("/entries/{eid}/visibility"), Some(&r1), Some(json!({"visibility": "private"}))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::CONFLICT, Some("narrowing_after_view")));

    let (_, feed) = call(&app, Method::GET, "/notifications", Some(&r2), None).await;
    let partner: Vec<&Value> = feed.as_array().unwrap().iter().filter(|n| n["notification_kind"] == "partner_responded").collect();
    assert_eq!(partner.len(), 1);
    let nid = partner[0]["notification_id"].as_str().unwrap();
    let (status, n) = call(&app, Method::POST, &format!("/notifications/{nid}/read"), Some(&r2), None).await;
    assert_eq!((status, n["read"].as_bool()), (StatusCode::OK, Some(true)));
    let (status, _) = call(&app, Method::GET, "/notifications?since=yesterday", Some(&r2), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, dash) = call(&app, Method::GET, "/dashboard", Some(&r2), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(dash["partner_available"], true);
    let (_, cu) = call(&app, Method::GET, "/prompts/catch-up", Some(&r2), None).await;
    assert_eq!(cu, json!([]));
}

#[tokio::test]
async fn oversize_and_malformed_bodies() {
    let f = Fixture::new(StudyConfig::default());
    let app = router(f.svc.clone(), None);
    let r1 = login(&app, "r1").await;
    let big = "x".repeat(f.cfg.transcript_max_bytes + 10);
    let (status, body) =
        call(&app, Method::POST, "/transcripts", Some(&r1), Some(json!({"meeting_index": 1, "transcript": big}))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::PAYLOAD_TOO_LARGE, Some("payload_too_large")));
    let (status, body) = call(&app, Method::POST, "/responses", Some(&r1), Some(json!({"nope": 1}))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
}

#[tokio::test]
async fn serves_static_files_next_to_the_api() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>hi</p>").unwrap();
    let f = Fixture::new(StudyConfig::default());
    let app = router(f.svc.clone(), Some(dir.path().to_owned()));
    let resp = app.oneshot(Request::get("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(&bytes[..], b"<p>hi</p>");
}
