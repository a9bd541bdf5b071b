//! HTTP binding of the hub.
//!
//! | method | path                           | body / query        | response                  |
//! |--------|--------------------------------|---------------------|---------------------------|
//! | POST   | `/sessions`                    | config overrides    | `{"session_id": ...}`     |
//! | POST   | `/sessions/{id}/commands`      | `CommandRequest`    | `Ack`                     |
//! | GET    | `/sessions/{id}/snapshot`      |                     | `ServerMessage::Snapshot` |
//! | GET    | `/sessions/{id}/events`        | `?from_seq=N`       | SSE of `ServerMessage::Events` |
//! | GET    | `/sessions/{id}/export`        |                     | session file bytes        |
//! | POST   | `/messages`                    | `ClientMessage`     | `ServerMessage`           |
//!
//! Each SSE message carries the seq of its last event as its id, so a client
//! reconnecting with `Last-Event-ID` resumes without gaps or duplicates.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cpr_core::DosingOverrides;
use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::hub::{Hub, ServiceError};
use crate::messages::{records, ClientMessage, CommandRequest, ServerMessage};

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    fields: Vec<&'static str>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, fields) = match &self {
            ServiceError::UnknownSession(_) => (StatusCode::NOT_FOUND, Vec::new()),
            ServiceError::InvalidConfig(e) => (StatusCode::UNPROCESSABLE_ENTITY, e.fields.clone()),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, Vec::new()),
            ServiceError::Persist(_) => (StatusCode::INTERNAL_SERVER_ERROR, Vec::new()),
        };
        let body = ErrorBody {
            error: self.to_string(),
            fields,
        };
        (status, Json(body)).into_response()
    }
}

fn bad_json(rejection: JsonRejection) -> ServiceError {
    ServiceError::BadRequest(rejection.body_text())
}

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/commands", post(submit))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/export", get(export))
        .route("/messages", post(message))
        .with_state(hub)
}

async fn create(
    State(hub): State<Arc<Hub>>,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ServiceError> {
    let overrides: DosingOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        DosingOverrides::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?
    };
    let session_id = hub.create_session(&overrides)?;
    Ok((StatusCode::CREATED, Json(Created { session_id })))
}

async fn submit(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    body: Result<Json<CommandRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let Json(request) = body.map_err(bad_json)?;
    let ack = hub.submit_command(&id, &request)?;
    Ok(Json(ack).into_response())
}

async fn snapshot(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
) -> Result<Json<ServerMessage>, ServiceError> {
    Ok(Json(ServerMessage::Snapshot(hub.snapshot(&id)?)))
}

async fn export(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let bytes = hub.export(&id)?;
    let disposition = format!("attachment; filename=\"{id}.jsonl\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson".to_owned()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    from_seq: Option<u64>,
}

async fn events(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(query): Query<StreamQuery>,
    headers: HeaderMap,
) -> Result<Response, ServiceError> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|last| last + 1);
    let from_seq = resume.or(query.from_seq).unwrap_or(1);
    let session_id = id.clone();
    let stream = hub.stream_events(&id, from_seq)?.map(move |batch| {
        let last = batch.last().map_or(0, |e| e.seq);
        let message = ServerMessage::Events {
            session_id: session_id.clone(),
            events: records(&batch),
        };
        let data = serde_json::to_string(&message).expect("server messages serialize");
        Ok::<_, Infallible>(
            SseEvent::default()
                .event("Events")
                .id(last.to_string())
                .data(data),
        )
    });
    Ok(Sse::new(stream)
        .keep_alive(KeepAlive::default())
        .into_response())
}

async fn message(
    State(hub): State<Arc<Hub>>,
    body: Result<Json<ClientMessage>, JsonRejection>,
) -> (StatusCode, Json<ServerMessage>) {
    let reply = match body {
        Ok(Json(msg)) => handle(&hub, msg),
        Err(rejection) => Err(bad_json(rejection)),
    };
    match reply {
        Ok(reply) => (StatusCode::OK, Json(reply)),
        Err(e) => {
            let text = e.to_string();
            let status = e.into_response().status();
            (status, Json(ServerMessage::Error { text }))
        }
    }
}

/// Dispatches a [`ClientMessage`] against the hub.
pub fn handle(hub: &Hub, msg: ClientMessage) -> Result<ServerMessage, ServiceError> {
    Ok(match msg {
        ClientMessage::SubmitCommand {
            session_id,
            command,
        } => {
            let ack = hub.submit_command(&session_id, &command)?;
            match ack.reason {
                Some(reason) => ServerMessage::Rejected {
                    session_id,
                    reason,
                    events: ack.events,
                },
                None => ServerMessage::Events {
                    session_id,
                    events: ack.events,
                },
            }
        }
        ClientMessage::Subscribe {
            session_id,
            from_seq,
        } => {
            let view = hub.view(&session_id)?;
            let from = usize::try_from(from_seq.unwrap_or(1).max(1) - 1).unwrap_or(usize::MAX);
            let events = records(view.events.get(from..).unwrap_or(&[]));
            ServerMessage::Events { session_id, events }
        }
        ClientMessage::RequestSnapshot { session_id } => {
            ServerMessage::Snapshot(hub.snapshot(&session_id)?)
        }
    })
}
