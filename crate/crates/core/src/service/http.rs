use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::model::Response as Choice;
use crate::session::SessionConfig;

use super::wal::{self, Event, Record};
use super::{CreatedDoc, ResponseDoc, Service, SessionId, SummaryDoc};

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(state))
        .route("/sessions/{id}/trial", get(trial))
        .route("/sessions/{id}/response", post(respond))
        .with_state(service)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }

    fn busy() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "busy", "session is still computing; retry shortly")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Domain(_) | Error::DimensionMismatch { .. } => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string())
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_object(body: &Bytes) -> ApiResult<Map<String, Value>> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::bad_request("body must be a JSON object")),
        Err(e) => Err(ApiError::bad_request(format!("malformed JSON: {e}"))),
    }
}

/// Overlay `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn create(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<(StatusCode, Json<CreatedDoc>)> {
    let mut obj = parse_object(&body)?;
    let seed = match obj.remove("seed") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| ApiError::bad_request("seed must be a nonnegative integer"))?),
    };
    let mut config = serde_json::to_value(&svc.config.defaults).map_err(Error::from)?;
    merge(&mut config, Value::Object(obj));
    let config: SessionConfig =
        serde_json::from_value(config).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string()))?;
    let env = svc.create(config, seed).await?;
    tracing::info!(sid = %env.id, seed = env.session.seed, "session created");
    let doc = CreatedDoc {
        id: env.id.clone(),
        status: env.session.state.status,
        step: env.session.state.step(),
        seed: env.session.seed,
        trial: env.session.state.current_trial.as_ref().map(Into::into).expect("fresh session has a trial"),
        created: env.created,
    };
    Ok((StatusCode::CREATED, Json(doc)))
}

async fn list(State(svc): State<Arc<Service>>) -> Json<Vec<SummaryDoc>> {
    let mut out = Vec::new();
    for id in svc.session_ids().await {
        if let Some(env) = svc.snapshot(&id).await {
            let s = &env.session.state;
            out.push(SummaryDoc { id, status: s.status, step: s.step(), updated: env.updated });
        }
    }
    Json(out)
}

async fn locked(svc: &Service, id: &str) -> ApiResult<tokio::sync::OwnedMutexGuard<super::SessionEnvelope>> {
    let slot = svc.slot(&SessionId(id.to_string())).await.ok_or_else(|| ApiError::not_found(id))?;
    tokio::time::timeout(svc.config.budget(), slot.lock_owned())
        .await
        .map_err(|_| ApiError::busy())
}

async fn state(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let env = locked(&svc, &id).await?;
    Ok(Json(env.state_doc()).into_response())
}

async fn trial(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let env = locked(&svc, &id).await?;
    match env.trial_doc() {
        Some(doc) => Ok(Json(doc).into_response()),
        None => Err(ApiError::new(StatusCode::CONFLICT, "terminal", format!("session {id} has finished"))),
    }
}

async fn respond(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let obj = parse_object(&body)?;
    let r = match obj.get("r").and_then(Value::as_u64) {
        Some(0) => Choice::REFERENCE,
        Some(1) => Choice::ALTERNATIVE,
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_response", "r must be 0 or 1")),
    };
    let step = obj
        .get("step")
        .and_then(Value::as_u64)
        .ok_or_else(|| ApiError::bad_request("step must be the index of the trial being answered"))? as usize;

    let mut env = locked(&svc, &id).await?;
    let current = env.session.state.step();
    if env.session.state.status.is_terminal() {
        return Err(ApiError::new(StatusCode::CONFLICT, "terminal", format!("session {id} has finished")));
    }
    if step != current {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "stale_step",
            format!("step {step} does not match the pending trial {current}"),
        ));
    }

    // Compute on a copy, persist, then commit; the lock is held throughout so
    // an overrun of the budget leaves the session busy rather than inconsistent.
    let wal = svc.wal.clone();
    let task = tokio::task::spawn_blocking(move || -> crate::Result<ResponseDoc> {
        let started = std::time::Instant::now();
        let mut next = env.session.clone();
        next.submit(r)?;
        let t = wal::now_ms();
        wal.append(&Record { t, sid: env.id.clone(), event: Event::Response { step, r } })?;
        env.session = next;
        env.updated = t;
        if let Some(rec) = env.trial_record(t) {
            wal.append(&rec)?;
        }
        let s = &env.session.state;
        tracing::info!(sid = %env.id, step, ms = started.elapsed().as_millis() as u64, "response accepted");
        Ok(ResponseDoc {
            id: env.id.clone(),
            status: s.status,
            accepted_step: step,
            step: s.step(),
            trial: s.current_trial.as_ref().map(Into::into),
            theta: s.estimate()?.theta,
            mi_bits: s.current_mi,
            rsu: s.rsu().ok(),
        })
    });
    match tokio::time::timeout(svc.config.budget(), task).await {
        Ok(Ok(Ok(doc))) => Ok(Json(doc).into_response()),
        Ok(Ok(Err(e))) => Err(e.into()),
        Ok(Err(join)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", join.to_string())),
        Err(_) => Ok((
            StatusCode::ACCEPTED,
            Json(json!({"id": id, "accepted_step": step, "status": "pending"})),
        )
            .into_response()),
    }
}
