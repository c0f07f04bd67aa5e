//! HTTP API.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/healthz` | liveness and log position |
//! | GET | `/tasks` | task list |
//! | POST | `/tasks/{id}/submissions` | submit predictions |
//! | GET | `/tasks/{id}/leaderboard?aspect=` | ranked entries |
//! | GET | `/submissions/{id}` | full submission record |
//! | GET | `/annotators/{id}/next` | lease the next assignment |
//! | POST | `/assignments/{id}/label` | record a label |
//! | POST | `/admin/annotators` | register an annotator profile |
//! | POST | `/admin/pipeline/step` | run one pipeline step |

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use humeval_core::dispatch::LabelSubmission;
use humeval_core::model::{parse_predictions, AnnotatorProfile};
use humeval_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ServiceError;
use crate::service::Service;

pub type SharedService = Arc<RwLock<Service>>;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.0.to_string();
        let (status, kind) = match &self.0 {
            ServiceError::RateLimited { retry_after_secs } => {
                let body = json!({ "error": "rate_limited", "message": message, "retry_after_secs": retry_after_secs });
                let mut resp = (StatusCode::TOO_MANY_REQUESTS, Json(body)).into_response();
                resp.headers_mut()
                    .insert(header::RETRY_AFTER, HeaderValue::from(*retry_after_secs));
                return resp;
            }
            ServiceError::Invalid { violations } => {
                let body = json!({ "error": "validation", "message": message, "violations": violations });
                return (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response();
            }
            ServiceError::Core(e) => match e {
                Error::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
                Error::Domain(_) => (StatusCode::UNPROCESSABLE_ENTITY, "domain"),
                Error::Parse { .. } => (StatusCode::BAD_REQUEST, "parse"),
                Error::Unauthorized(_) => (StatusCode::FORBIDDEN, "unauthorized"),
                Error::StaleLease(_) => (StatusCode::CONFLICT, "stale_lease"),
                Error::Inconsistent(_) => (StatusCode::CONFLICT, "inconsistent"),
                Error::Planning(_) => (StatusCode::UNPROCESSABLE_ENTITY, "planning"),
                Error::Config(_) | Error::MetricUnavailable(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
            ServiceError::Io(_) | ServiceError::CorruptLog { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        (status, Json(json!({ "error": kind, "message": message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs CPU-heavy work (metrics, bootstrap) off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Io(std::io::Error::other(e))))?
        .map_err(ApiError)
}

fn read(s: &SharedService) -> std::sync::RwLockReadGuard<'_, Service> {
    s.read().unwrap_or_else(|e| e.into_inner())
}

fn write(s: &SharedService) -> std::sync::RwLockWriteGuard<'_, Service> {
    s.write().unwrap_or_else(|e| e.into_inner())
}

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}/submissions", post(submit))
        .route("/tasks/{id}/leaderboard", get(leaderboard))
        .route("/submissions/{id}", get(submission))
        .route("/annotators/{id}/next", get(next_assignment))
        .route("/assignments/{id}/label", post(label))
        .route("/admin/annotators", post(register_annotator))
        .route("/admin/pipeline/step", post(pipeline_step))
        .with_state(service)
}

async fn healthz(State(s): State<SharedService>) -> impl IntoResponse {
    Json(read(&s).health())
}

#[derive(Serialize)]
struct TaskSummary {
    task_id: String,
    name: String,
    aspects: Vec<String>,
    scheme: String,
    paired: bool,
}

async fn list_tasks(State(s): State<SharedService>) -> impl IntoResponse {
    let svc = read(&s);
    let tasks: Vec<TaskSummary> = svc
        .catalog()
        .tasks()
        .map(|t| TaskSummary {
            task_id: t.task_id.clone(),
            name: t.name.clone(),
            aspects: t.aspect_names().map(String::from).collect(),
            scheme: t.elicitation.kind.to_string(),
            paired: t.paired_with_gold,
        })
        .collect();
    Json(tasks)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PredictionPayload {
    /// Line-delimited `{"id", "prediction"}` records.
    Lines(String),
    Records(Vec<PredictionRecord>),
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    id: String,
    prediction: String,
}

#[derive(Debug, Deserialize)]
struct SubmitBody {
    submitter: String,
    #[serde(default)]
    system_name: Option<String>,
    predictions: PredictionPayload,
}

async fn submit(
    State(s): State<SharedService>,
    Path(task_id): Path<String>,
    Json(body): Json<SubmitBody>,
) -> ApiResult<impl IntoResponse> {
    let predictions = match body.predictions {
        PredictionPayload::Lines(text) => parse_predictions(&text)?,
        PredictionPayload::Records(recs) => {
            let mut m = BTreeMap::new();
            for r in recs {
                if m.insert(r.id.clone(), r.prediction).is_some() {
                    return Err(Error::Domain(format!("duplicate id {:?}", r.id)).into());
                }
            }
            m
        }
    };
    let receipt = blocking(move || write(&s).submit(&task_id, &body.submitter, body.system_name, predictions)).await?;
    Ok((StatusCode::CREATED, Json(receipt)))
}

#[derive(Debug, Deserialize)]
struct LeaderboardQuery {
    aspect: Option<String>,
}

async fn leaderboard(
    State(s): State<SharedService>,
    Path(task_id): Path<String>,
    Query(q): Query<LeaderboardQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(read(&s).get_leaderboard(&task_id, q.aspect.as_deref())?))
}

async fn submission(State(s): State<SharedService>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(read(&s).get_submission(&id)?))
}

async fn next_assignment(State(s): State<SharedService>, Path(id): Path<String>) -> ApiResult<Response> {
    match write(&s).next_assignment(&id)? {
        Some(a) => Ok(Json(a).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    annotator_id: String,
    #[serde(flatten)]
    label: LabelSubmission,
    #[serde(default)]
    elapsed: Option<f64>,
}

async fn label(
    State(s): State<SharedService>,
    Path(id): Path<String>,
    Json(body): Json<LabelBody>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(write(&s).record_label(
        &id,
        &body.annotator_id,
        body.label,
        body.elapsed,
    )?))
}

async fn register_annotator(
    State(s): State<SharedService>,
    Json(profile): Json<AnnotatorProfile>,
) -> ApiResult<impl IntoResponse> {
    write(&s).register_annotator(profile)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn pipeline_step(State(s): State<SharedService>) -> ApiResult<impl IntoResponse> {
    let report = blocking(move || write(&s).run_pipeline_step()).await?;
    Ok(Json(report))
}

/// Serves the API until Ctrl-C.
pub async fn serve(service: SharedService, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
