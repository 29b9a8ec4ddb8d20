//! HTTP+JSON surface over the engine. Errors are `{code, message}` documents.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::extract::{FromRequest, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{NaiveDate, TimeZone, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use studyhook_core::domain::Clock;
use studyhook_core::engine::{NewStudent, TimetableInput};
use studyhook_core::performance::LikertResponseSet;
use studyhook_core::preparation::{Material, MaterialsManifest};
use studyhook_core::scheduler::Preference;
use studyhook_core::ttm::TestAttempt;
use studyhook_core::{ClassId, Engine, EngineError, SessionId, StudentId, TimeBlock, WeekTag};

use crate::store::Store;

pub struct AppState {
    pub store: Arc<Store>,
    pub clock: Arc<dyn Clock>,
    /// Bearer token required on every route but `/health` when set.
    pub token: Option<String>,
}

pub type Shared = Arc<AppState>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.into(), message: message.into() }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::NotFound { .. } => StatusCode::NOT_FOUND,
            EngineError::Conflict(_) | EngineError::WizardOrder(_) | EngineError::Precondition(_) => StatusCode::CONFLICT,
            EngineError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::Forbidden(_) => StatusCode::FORBIDDEN,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body whose rejections are reported as `{code, message}`.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(rej) => {
                let status = rej.status();
                let code = if status == StatusCode::UNPROCESSABLE_ENTITY { "validation" } else { "bad_request" };
                Err(ApiError::new(status, code, rej.body_text()))
            }
        }
    }
}

fn student_id(raw: String) -> ApiResult<StudentId> {
    StudentId::new(raw).map_err(|e| ApiError::invalid(e.to_string()))
}

fn class_id(raw: String) -> ApiResult<ClassId> {
    ClassId::new(raw).map_err(|e| ApiError::invalid(e.to_string()))
}

fn session_id(raw: String) -> ApiResult<SessionId> {
    SessionId::new(raw).map_err(|e| ApiError::invalid(e.to_string()))
}

/// Any date inside the week; weeks are keyed by their Monday.
fn week(raw: &str) -> ApiResult<WeekTag> {
    let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|e| ApiError::invalid(format!("week {raw}: {e}")))?;
    let noon = Utc.from_utc_datetime(&date.and_hms_opt(12, 0, 0).expect("valid time"));
    Ok(WeekTag::containing(noon, "UTC").expect("UTC"))
}

async fn require_token(State(state): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok && req.uri().path() != "/health" {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/students", post(create_student))
        .route("/students/{id}", get(get_student))
        .route("/students/{id}/timetable", put(put_timetable).get(get_timetable))
        .route("/students/{id}/preference", put(put_preference))
        .route("/students/{id}/schedule/suggestions", get(get_suggestions))
        .route("/students/{id}/schedule/suggestions/reject", post(reject_suggestion))
        .route("/students/{id}/sessions", post(accept_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/checkin", post(check_in))
        .route("/sessions/{id}/checkout", post(check_out))
        .route("/students/{id}/checklist/{week}", get(get_checklists))
        .route("/checklist/items/{id}/tick", post(tick_item))
        .route("/students/{id}/notes", post(add_note))
        .route("/students/{id}/partners/suggestions", get(partner_suggestions))
        .route("/students/{id}/pairs", get(list_pairs))
        .route("/study-groups", post(create_group))
        .route("/study-groups/{id}", get(get_group))
        .route("/study-groups/{id}/ratings", post(rate_group))
        .route("/study-groups/{id}/endorse", post(endorse))
        .route("/students/{id}/feed", get(get_feed))
        .route("/students/{id}/metrics", get(get_metrics))
        .route("/ttm/scores", post(ingest_scores))
        .route("/classes/{id}/materials/{week}", put(put_materials))
        .route("/classes/{id}/pairings", post(pair_class))
        .route("/students/{id}/responses", post(post_responses))
        .route("/students/{id}/performance", get(get_performance))
        .route("/admin/tick", post(admin_tick))
        .route("/snapshot", get(export_snapshot).put(import_snapshot))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Ticks the engine whenever it has work, checking at least every `period`.
pub async fn run_dispatcher(state: Shared, period: StdDuration) {
    loop {
        let now = state.clock.now();
        let report = state.store.write(|e| e.tick(now));
        if !report.deliveries.is_empty() || !report.missed.is_empty() {
            tracing::info!(deliveries = report.deliveries.len(), missed = report.missed.len(), "dispatcher tick");
        }
        let wait = state
            .store
            .read(|e| e.next_wakeup(now))
            .and_then(|t| (t - now).to_std().ok())
            .map_or(period, |d| d.min(period))
            .max(StdDuration::from_millis(200));
        tokio::time::sleep(wait).await;
    }
}

fn write<R>(state: &Shared, f: impl FnOnce(&mut Engine, chrono::DateTime<Utc>) -> Result<R, EngineError>) -> ApiResult<R> {
    let now = state.clock.now();
    Ok(state.store.write(|e| f(e, now))?)
}

fn read<R>(state: &Shared, f: impl FnOnce(&Engine) -> Result<R, EngineError>) -> ApiResult<R> {
    Ok(state.store.read(f)?)
}

async fn create_student(State(s): State<Shared>, Body(new): Body<NewStudent>) -> ApiResult<impl IntoResponse> {
    let record = write(&s, |e, now| e.create_student(new, now))?;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn get_student(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(read(&s, |e| e.student(&id).cloned())?))
}

async fn put_timetable(State(s): State<Shared>, Path(id): Path<String>, Body(input): Body<TimetableInput>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(write(&s, |e, _| e.set_timetable(&id, input))?))
}

async fn get_timetable(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(read(&s, |e| Ok(e.timetable(&id)?.cloned()))?))
}

#[derive(Deserialize)]
struct PreferenceBody {
    preference: Preference,
}

async fn put_preference(State(s): State<Shared>, Path(id): Path<String>, Body(body): Body<PreferenceBody>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    let record = write(&s, |e, _| {
        e.set_preference(&id, body.preference)?;
        e.student(&id).cloned()
    })?;
    Ok(Json(record))
}

async fn get_suggestions(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(json!({ "suggestions": read(&s, |e| e.suggestions(&id))? })))
}

#[derive(Deserialize)]
struct BlockBody {
    block: TimeBlock,
}

async fn reject_suggestion(State(s): State<Shared>, Path(id): Path<String>, Body(body): Body<BlockBody>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(json!({ "suggestions": write(&s, |e, _| e.reject_suggestion(&id, body.block))? })))
}

async fn accept_session(State(s): State<Shared>, Path(id): Path<String>, Body(body): Body<BlockBody>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    let block = write(&s, |e, now| e.accept_session(&id, body.block, now))?;
    Ok((StatusCode::CREATED, Json(json!({ "block": block }))))
}

async fn list_sessions(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    let sessions = read(&s, |e| {
        e.student(&id)?;
        let mut v: Vec<_> = e.sessions_of(&id).into_iter().cloned().collect();
        v.sort_by_key(|x| x.starts_at);
        Ok(v)
    })?;
    Ok(Json(json!({ "study_blocks": read(&s, |e| Ok(e.study_blocks(&id)?.to_vec()))?, "sessions": sessions })))
}

async fn get_session(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    Ok(Json(read(&s, |e| e.session(&id).cloned())?))
}

async fn check_in(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    Ok(Json(write(&s, |e, now| e.check_in(&id, now))?))
}

#[derive(Deserialize)]
struct CheckoutBody {
    effectiveness: i64,
    environment: i64,
}

async fn check_out(State(s): State<Shared>, Path(id): Path<String>, Body(body): Body<CheckoutBody>) -> ApiResult<impl IntoResponse> {
    let id = session_id(id)?;
    let rating = |name: &str, v: i64| {
        u8::try_from(v).ok().filter(|v| (1..=5).contains(v)).ok_or_else(|| ApiError::invalid(format!("{name} must be 1..=5, got {v}")))
    };
    let (eff, env) = (rating("effectiveness", body.effectiveness)?, rating("environment", body.environment)?);
    Ok(Json(write(&s, |e, now| e.check_out(&id, eff, env, now))?))
}

async fn get_checklists(State(s): State<Shared>, Path((id, wk)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    let wk = week(&wk)?;
    Ok(Json(json!({ "week": wk, "checklists": write(&s, |e, _| e.checklists(&id, wk))? })))
}

#[derive(Deserialize)]
struct TickBody {
    student_id: StudentId,
}

async fn tick_item(State(s): State<Shared>, Path(item): Path<String>, Body(body): Body<TickBody>) -> ApiResult<impl IntoResponse> {
    Ok(Json(write(&s, |e, now| e.tick_checklist_item(&body.student_id, &item, now))?))
}

#[derive(Deserialize)]
struct NoteBody {
    class_id: ClassId,
    week: String,
    text: String,
}

async fn add_note(State(s): State<Shared>, Path(id): Path<String>, Body(body): Body<NoteBody>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    let wk = week(&body.week)?;
    let note = write(&s, |e, now| e.add_note(&id, body.class_id, wk, body.text, now))?;
    Ok((StatusCode::CREATED, Json(note)))
}

#[derive(Deserialize)]
struct PartnerQuery {
    class: Option<String>,
    topic: Option<String>,
}

async fn partner_suggestions(State(s): State<Shared>, Path(id): Path<String>, Query(q): Query<PartnerQuery>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    let class = q.class.map(class_id).transpose()?;
    let found = read(&s, |e| e.partner_suggestions(&id, class.as_ref(), q.topic.as_deref()))?;
    let suggestions: Vec<Value> = found
        .into_iter()
        .map(|(class_id, topic, outcome)| json!({ "class_id": class_id, "topic": topic, "outcome": outcome }))
        .collect();
    Ok(Json(json!({ "suggestions": suggestions })))
}

async fn list_pairs(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(json!({ "pairs": read(&s, |e| { e.student(&id)?; Ok(e.pairs_of(&id)) })? })))
}

#[derive(Deserialize)]
struct GroupBody {
    creator: StudentId,
    class_id: ClassId,
    topic: String,
    #[serde(default)]
    members: Vec<StudentId>,
}

async fn create_group(State(s): State<Shared>, Body(b): Body<GroupBody>) -> ApiResult<impl IntoResponse> {
    let group = write(&s, |e, now| e.create_group(&b.creator, b.class_id, b.topic, b.members, now))?;
    Ok((StatusCode::CREATED, Json(group)))
}

#[derive(Deserialize)]
struct ViewerQuery {
    student_id: Option<String>,
}

async fn get_group(State(s): State<Shared>, Path(id): Path<String>, Query(q): Query<ViewerQuery>) -> ApiResult<impl IntoResponse> {
    let viewer = q.student_id.map(student_id).transpose()?;
    Ok(Json(read(&s, |e| e.group_view(&id, viewer.as_ref()))?))
}

#[derive(Deserialize)]
struct RatingBody {
    rater: StudentId,
    ratings: BTreeMap<StudentId, u8>,
}

async fn rate_group(State(s): State<Shared>, Path(id): Path<String>, Body(b): Body<RatingBody>) -> ApiResult<impl IntoResponse> {
    Ok(Json(json!({ "ratings": write(&s, |e, now| e.rate_group(&id, &b.rater, &b.ratings, now))? })))
}

#[derive(Deserialize)]
struct EndorseBody {
    from: StudentId,
    to: StudentId,
}

async fn endorse(State(s): State<Shared>, Path(id): Path<String>, Body(b): Body<EndorseBody>) -> ApiResult<impl IntoResponse> {
    let (endorsement, created) = write(&s, |e, now| e.endorse(&id, &b.from, &b.to, now))?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({ "endorsement": endorsement, "created": created }))))
}

async fn get_feed(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(json!({ "items": read(&s, |e| Ok(e.feed(&id)?.to_vec()))? })))
}

async fn get_metrics(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(read(&s, |e| e.metrics(&id))?))
}

async fn ingest_scores(State(s): State<Shared>, Body(batch): Body<Vec<TestAttempt>>) -> ApiResult<impl IntoResponse> {
    Ok(Json(write(&s, |e, _| Ok(e.ingest_ttm(batch)))?))
}

#[derive(Deserialize)]
struct MaterialsBody {
    #[serde(default)]
    cancelled: bool,
    #[serde(default)]
    materials: Vec<Material>,
    #[serde(default)]
    topics: Vec<String>,
}

async fn put_materials(State(s): State<Shared>, Path((id, wk)): Path<(String, String)>, Body(b): Body<MaterialsBody>) -> ApiResult<impl IntoResponse> {
    let class = class_id(id)?;
    let mut manifest = MaterialsManifest::new(class, week(&wk)?, b.materials);
    manifest.cancelled = b.cancelled;
    manifest.topics = b.topics;
    write(&s, |e, _| e.put_materials(manifest.clone()))?;
    Ok(Json(manifest))
}

#[derive(Deserialize)]
struct PairBody {
    topic: String,
}

async fn pair_class(State(s): State<Shared>, Path(id): Path<String>, Body(b): Body<PairBody>) -> ApiResult<impl IntoResponse> {
    let class = class_id(id)?;
    Ok((StatusCode::CREATED, Json(write(&s, |e, now| e.pair(&class, &b.topic, now))?)))
}

async fn post_responses(State(s): State<Shared>, Path(id): Path<String>, Body(r): Body<LikertResponseSet>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(json!({ "responses": write(&s, |e, _| e.set_responses(&id, r))? })))
}

async fn get_performance(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id = student_id(id)?;
    Ok(Json(read(&s, |e| e.performance(&id))?))
}

async fn admin_tick(State(s): State<Shared>) -> ApiResult<impl IntoResponse> {
    Ok(Json(write(&s, |e, now| Ok(e.tick(now)))?))
}

async fn export_snapshot(State(s): State<Shared>) -> ApiResult<impl IntoResponse> {
    let json = s.store.read(|e| e.snapshot_json());
    Ok(([(header::CONTENT_TYPE, "application/json")], json))
}

async fn import_snapshot(State(s): State<Shared>, body: String) -> ApiResult<impl IntoResponse> {
    let engine = Engine::from_snapshot_json(&body)?;
    s.store.replace(engine).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))?;
    Ok(StatusCode::NO_CONTENT)
}
