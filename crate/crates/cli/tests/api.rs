use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use chrono::{TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use studyhook_cli::api::{router, AppState};
use studyhook_cli::store::Store;
use studyhook_core::domain::ManualClock;
use studyhook_core::{Engine, EngineConfig};

fn app(token: Option<&str>, store: Store) -> axum::Router {
    let clock = ManualClock::new(Utc.with_ymd_and_hms(2026, 1, 4, 12, 0, 0).unwrap());
    router(Arc::new(AppState { store: Arc::new(store), clock: Arc::new(clock), token: token.map(String::from) }))
}

async fn send(app: &axum::Router, method: Method, path: &str, auth: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(path).header(header::CONTENT_TYPE, "application/json");
    if let Some(t) = auth {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn memory() -> Store {
    Store::in_memory(Engine::new(EngineConfig::default()).unwrap())
}

#[tokio::test]
async fn token_guards_everything_but_health() {
    let app = app(Some("s3cret"), memory());
    assert_eq!(send(&app, Method::GET, "/health", None, None).await.0, StatusCode::OK);
    let (status, body) = send(&app, Method::GET, "/students/x", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["code"], "unauthorized");
    assert_eq!(send(&app, Method::GET, "/students/x", Some("wrong"), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(send(&app, Method::GET, "/students/x", Some("s3cret"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn error_codes_follow_the_engine() {
    let app = app(None, memory());
    let created = send(&app, Method::POST, "/students", None, Some(json!({ "student_id": "s1", "classes": ["cs101"] }))).await;
    assert_eq!(created.0, StatusCode::CREATED);
    let dup = send(&app, Method::POST, "/students", None, Some(json!({ "student_id": "s1" }))).await;
    assert_eq!((dup.0, dup.1["code"].as_str()), (StatusCode::CONFLICT, Some("conflict")));
    let early = send(&app, Method::PUT, "/students/s1/preference", None, Some(json!({ "preference": "early" }))).await;
    assert_eq!((early.0, early.1["code"].as_str()), (StatusCode::CONFLICT, Some("wizard_order")));
    let bad = send(&app, Method::PUT, "/students/s1/preference", None, Some(json!({ "preference": "noon" }))).await;
    assert_eq!(bad.0, StatusCode::UNPROCESSABLE_ENTITY);
    let week = send(&app, Method::GET, "/students/s1/checklist/not-a-date", None, None).await;
    assert_eq!(week.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn snapshot_survives_export_and_import() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    let first = app(None, Store::open(&path, EngineConfig::default()).unwrap());
    send(&first, Method::POST, "/students", None, Some(json!({ "student_id": "s1", "classes": ["cs101"] }))).await;
    let (status, snapshot) = send(&first, Method::GET, "/snapshot", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(path.exists());

    let reopened = app(None, Store::open(&path, EngineConfig::default()).unwrap());
    assert_eq!(send(&reopened, Method::GET, "/students/s1", None, None).await.0, StatusCode::OK);

    let fresh = app(None, memory());
    assert_eq!(send(&fresh, Method::GET, "/students/s1", None, None).await.0, StatusCode::NOT_FOUND);
    let (status, _) = send(&fresh, Method::PUT, "/snapshot", None, Some(snapshot.clone())).await;
    assert!(status.is_success(), "{status}");
    assert_eq!(send(&fresh, Method::GET, "/snapshot", None, None).await.1, snapshot);
}
