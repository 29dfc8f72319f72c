use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use feedmon_core::records::RecordFilter;
use feedmon_core::signal::wire::corpus_to_string;
use futures::Stream;
use serde::de::DeserializeOwned;

use crate::api::{
    Command, CreateSession, ErrorBody, ModelList, ModelUpload, RecordList, RecordQuery, Schema, TelemetryQuery,
    API_VERSION,
};
use crate::{ApiError, AppState, CommandResult};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = ErrorBody {
            version: API_VERSION,
            error: code.into(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

/// JSON body that reports every decoding problem as a bad request.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed payload: {e}")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/schema", get(schema))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session).delete(close_session))
        .route("/api/v1/sessions/{id}/commands", post(command))
        .route("/api/v1/sessions/{id}/telemetry", get(telemetry))
        .route("/api/v1/records", get(records))
        .route("/api/v1/corpus", get(corpus))
        .route("/api/v1/models", get(models).post(upload_model))
        .route("/api/v1/models/{id}/activate", post(activate_model))
        .with_state(state)
}

async fn health(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.health())
}

async fn schema(State(app): State<AppState>) -> impl IntoResponse {
    Json(Schema::for_definition(app.definition()))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let view = app.create_session(parse::<CreateSession>(&body)?)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(app.session(&id)?.view()).into_response())
}

async fn close_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(app.close_session(&id).await?).into_response())
}

async fn command(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    // unknown sessions are reported before payload problems
    app.session(&id)?;
    let cmd: Command = parse(&body)?;
    Ok(match app.command(&id, cmd).await? {
        CommandResult::Ack(ack) => Json(ack).into_response(),
        CommandResult::Rejected(rej) => (StatusCode::CONFLICT, Json(rej)).into_response(),
        CommandResult::BadRequest(msg) => return Err(ApiError::BadRequest(msg)),
        CommandResult::Failed(msg) => return Err(ApiError::Internal(msg)),
    })
}

async fn telemetry(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TelemetryQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = app.session(&id)?;
    let rx = handle.subscribe();
    let start = handle.index_after(q.after);
    let stream = futures::stream::unfold((handle, rx, start), |(handle, mut rx, mut idx)| async move {
        loop {
            rx.borrow_and_update();
            let (frame, done) = handle.frame_at(idx);
            if let Some(f) = frame {
                idx += 1;
                let event = Event::default()
                    .event("frame")
                    .id(f.timestep.to_string())
                    .json_data(&f)
                    .expect("frames serialize");
                return Some((Ok(event), (handle, rx, idx)));
            }
            if done || rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn filter(q: RecordQuery) -> RecordFilter {
    RecordFilter {
        task: q.task,
        label: q.label,
    }
}

async fn records(State(app): State<AppState>, Query(q): Query<RecordQuery>) -> Result<Response, ApiError> {
    let records = app.store().list(&filter(q)).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(RecordList {
        version: API_VERSION,
        records,
    })
    .into_response())
}

async fn corpus(State(app): State<AppState>, Query(q): Query<RecordQuery>) -> Result<Response, ApiError> {
    let corpus = app
        .store()
        .export_corpus(&filter(q))
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], corpus_to_string(&corpus)).into_response())
}

async fn models(State(app): State<AppState>) -> impl IntoResponse {
    Json(ModelList {
        version: API_VERSION,
        models: app.models(),
    })
}

async fn upload_model(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let up: ModelUpload = parse(&body)?;
    if up.version != API_VERSION {
        return Err(ApiError::BadRequest(format!("unsupported version {}", up.version)));
    }
    let info = app.add_model(up.task, up.model, up.activate)?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn activate_model(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(app.activate_model(&id)?).into_response())
}
