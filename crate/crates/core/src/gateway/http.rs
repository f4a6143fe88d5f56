//! JSON-over-HTTP surface of the [`Gateway`]. Every route except the ledger
//! metrics requires `Authorization: Bearer <credential>`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{svg, ActorPrincipal, BatchAuditRequest, Gateway, GatewayError};
use crate::audit::AuditError;
use crate::consent::{ConsentError, ConsentEventKind};
use crate::crypto::canonical_deserialize;
use crate::explain::ExplanationArtifact;
use crate::model::{Decision, LoanApplication, ModelError};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError { status: StatusCode::BAD_REQUEST, code: "bad_request".into(), message: message.into() }
    }
}

pub fn status_of(e: &GatewayError) -> StatusCode {
    match e {
        GatewayError::Unauthorized => StatusCode::UNAUTHORIZED,
        GatewayError::WrongRole(_) | GatewayError::ConsentRequired(_) => StatusCode::FORBIDDEN,
        GatewayError::NotFound(_) | GatewayError::Consent(ConsentError::UnknownExpert(_)) => StatusCode::NOT_FOUND,
        GatewayError::CaseNotPending(_)
        | GatewayError::EmptyBuffer
        | GatewayError::AlreadyRegistered(_)
        | GatewayError::Consent(_) => StatusCode::CONFLICT,
        GatewayError::Model(ModelError::UnknownCategory { .. } | ModelError::SchemaMismatch { .. })
        | GatewayError::Audit(AuditError::InsufficientFiles { .. }) => StatusCode::UNPROCESSABLE_ENTITY,
        GatewayError::ModelUnavailable => StatusCode::SERVICE_UNAVAILABLE,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        ApiError { status: status_of(&e), code: e.code().to_string(), message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code, message: self.message })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn authenticate(gw: &Gateway, headers: &HeaderMap) -> Result<ActorPrincipal, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or(GatewayError::Unauthorized)?;
    Ok(gw.authenticate(token.trim())?)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// Runs CPU-heavy gateway work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, GatewayError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::from(GatewayError::Internal(e.to_string())))?
        .map_err(ApiError::from)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub decision: Decision,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConsentEventRequest {
    pub kind: ConsentEventKind,
}

pub fn router(gw: Arc<Gateway>) -> Router {
    Router::new()
        .route("/applications", post(submit_application))
        .route("/applications/{id}", get(get_application))
        .route("/applications/{id}/explanation", get(get_explanation))
        .route("/applications/{id}/explanation.svg", get(get_explanation_svg))
        .route("/review-queue", get(review_queue))
        .route("/review-queue/{id}/decision", post(review_decision))
        .route("/consents/{expert_id}", get(get_consent))
        .route("/consents/{expert_id}/events", post(consent_event))
        .route("/audits/explanations/{id}", post(audit_explanation))
        .route("/audits/consents/{expert_id}", post(audit_consent))
        .route("/audits/contributions/{expert_id}", post(audit_contributions))
        .route("/audits/batch", post(audit_batch))
        .route("/admin/retrain", post(retrain))
        .route("/metrics/ledger", get(ledger_metrics))
        .with_state(gw)
}

async fn submit_application(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    let app: LoanApplication = parse(&body)?;
    let case = blocking(move || gw.process_application(&actor, app)).await?;
    Ok((StatusCode::CREATED, Json(case)).into_response())
}

async fn get_application(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    Ok(Json(gw.get_case(&actor, &id)?).into_response())
}

/// The exact stored artifact bytes, so clients can re-hash them.
async fn get_explanation(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    let bytes = gw.explanation_bytes(&actor, &id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn get_explanation_svg(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    let bytes = gw.explanation_bytes(&actor, &id)?;
    let artifact: ExplanationArtifact =
        canonical_deserialize(&bytes).map_err(|e| ApiError::from(GatewayError::Internal(e.to_string())))?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg::render(&artifact)).into_response())
}

async fn review_queue(State(gw): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    Ok(Json(gw.review_queue(&actor)?).into_response())
}

async fn review_decision(
    State(gw): State<Arc<Gateway>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    let req: DecisionRequest = parse(&body)?;
    Ok(Json(gw.submit_review_decision(&actor, &id, req.decision)?).into_response())
}

async fn get_consent(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(expert): Path<String>) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    Ok(Json(gw.consent_states(&actor, &expert)?).into_response())
}

async fn consent_event(
    State(gw): State<Arc<Gateway>>,
    headers: HeaderMap,
    Path(expert): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    let req: ConsentEventRequest = parse(&body)?;
    Ok(Json(gw.consent_event(&actor, &expert, req.kind)?).into_response())
}

async fn audit_explanation(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    Ok(Json(gw.audit_case(&actor, &id)?).into_response())
}

async fn audit_consent(State(gw): State<Arc<Gateway>>, headers: HeaderMap, Path(expert): Path<String>) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    Ok(Json(gw.audit_consent(&actor, &expert)?).into_response())
}

async fn audit_contributions(
    State(gw): State<Arc<Gateway>>,
    headers: HeaderMap,
    Path(expert): Path<String>,
) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    Ok(Json(gw.audit_contributions(&actor, &expert)?).into_response())
}

async fn audit_batch(State(gw): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    let req: BatchAuditRequest = if body.is_empty() { parse(&Bytes::from_static(b"{}"))? } else { parse(&body)? };
    let report = blocking(move || gw.audit_batch(&actor, &req)).await?;
    Ok(Json(report).into_response())
}

async fn retrain(State(gw): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult<Response> {
    let actor = authenticate(&gw, &headers)?;
    Ok(Json(blocking(move || gw.trigger_retrain(&actor)).await?).into_response())
}

async fn ledger_metrics(State(gw): State<Arc<Gateway>>) -> Json<super::LedgerMetrics> {
    Json(gw.ledger_metrics())
}
