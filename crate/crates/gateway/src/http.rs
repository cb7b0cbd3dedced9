//! HTTP/JSON routes.
//!
//! Every route authenticates with the `X-Api-Key` header. Once a caller is
//! authenticated, every error response is also written to the audit log.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fmgate_core::access::{AuthError, Principal, Scope};
use fmgate_core::clock::parse_rfc3339;
use fmgate_core::orchestrator::{Modality, RequestMode, RECORDING_UNAVAILABLE};
use fmgate_core::quota::QuotaDecision;
use fmgate_core::rag::RagError;
use fmgate_core::recorder::{export_events, AuditFilter, RecorderError};
use fmgate_core::registry::{AibomRecord, ComponentRef, RegistryError};
use fmgate_core::report::generate_report;
use fmgate_core::verifier::{HumanVerdict, VerdictError};
use fmgate_core::{EventKind, PromptRequest, ResponseStatus};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::state::AppState;

pub const API_KEY_HEADER: &str = "x-api-key";

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub request_id: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl ToString) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.to_string(),
            request_id: None,
        }
    }

    fn recording(e: RecorderError) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, RECORDING_UNAVAILABLE, e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({"code": self.code, "message": self.message});
        if let Some(id) = self.request_id {
            error["request_id"] = json!(id);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

/// An authenticated caller and the id assigned to this HTTP request.
struct Caller {
    principal: Principal,
    request_id: String,
    channel: &'static str,
}

impl Caller {
    /// Records the refusal, then returns the error tagged with the request id.
    fn fail(&self, state: &AppState, mut err: ApiError) -> ApiError {
        if err.code != RECORDING_UNAVAILABLE {
            let recorded = state.pipeline.record_refusal(
                &self.request_id,
                &self.principal.key_id,
                self.channel,
                &err.code,
            );
            if let Err(e) = recorded {
                tracing::error!(error = %e, "could not record refusal");
            }
        }
        err.request_id = Some(self.request_id.clone());
        err
    }

    fn parse<T: DeserializeOwned>(&self, state: &AppState, body: &[u8]) -> Result<T, ApiError> {
        serde_json::from_slice(body).map_err(|e| self.fail(state, ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e)))
    }
}

fn authenticate(state: &AppState, headers: &HeaderMap, scope: Scope, channel: &'static str) -> Result<Caller, ApiError> {
    let unauthorized = |e: AuthError| ApiError::new(StatusCode::UNAUTHORIZED, e.code(), e);
    let key = headers
        .get(API_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .ok_or_else(|| unauthorized(AuthError::Unauthorized))?;
    let principal = state.keys.authenticate(key).map_err(unauthorized)?;
    let caller = Caller {
        principal,
        request_id: uuid::Uuid::new_v4().to_string(),
        channel,
    };
    if !caller.principal.has(scope) {
        let e = AuthError::Forbidden(scope);
        return Err(caller.fail(state, ApiError::new(StatusCode::FORBIDDEN, e.code(), e)));
    }
    Ok(caller)
}

/// Handlers block on durable audit writes, so they run off the async pool.
async fn blocking<F>(f: F) -> Response
where
    F: FnOnce() -> ApiResult + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e).into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/complete/{request_id}", get(poll_complete))
        .route("/v1/context-events", post(context_event))
        .route("/v1/documents", post(document))
        .route("/v1/verifier/pending", get(pending))
        .route("/v1/verifier/{task_id}/verdict", post(verdict))
        .route("/v1/audit", get(audit_query))
        .route("/v1/audit/verify", get(audit_verify))
        .route("/v1/audit/export", get(audit_export))
        .route("/v1/aibom", post(aibom_register))
        .route("/v1/aibom/{id}/{version}", get(aibom_lookup))
        .route("/v1/coversion", post(coversion_record))
        .route("/v1/coversion/{id}/{version}", get(coversion_resolve))
        .route("/v1/report", get(report))
        .with_state(state)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteBody {
    template_id: String,
    #[serde(default)]
    vars: BTreeMap<String, String>,
    #[serde(default)]
    mode: RequestMode,
    #[serde(default)]
    context_window: usize,
}

async fn complete(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Complete, "complete")?;
        let body: CompleteBody = caller.parse(&s, &body)?;
        let p = &caller.principal;
        if s.quotas.try_acquire(&p.key_id, p.quota_per_hour, s.clock.now()) == QuotaDecision::Exceeded {
            let e = ApiError::new(StatusCode::TOO_MANY_REQUESTS, "quota_exceeded", "hourly request quota exhausted");
            return Err(caller.fail(&s, e));
        }
        let request = PromptRequest {
            request_id: caller.request_id.clone(),
            principal: p.key_id.clone(),
            mode: body.mode,
            template_id: body.template_id,
            vars: body.vars,
            context_window: body.context_window,
        };
        Ok(pipeline_response(s.pipeline.handle(&request)))
    })
    .await
}

/// Maps a pipeline outcome onto HTTP. Guardrail, risk and verifier rejects
/// are ordinary 200 answers; malformed requests and storage failures are
/// errors. The pipeline has already recorded the outcome.
fn pipeline_response(resp: fmgate_core::GatewayResponse) -> Response {
    let status = match resp.status {
        ResponseStatus::Held => StatusCode::ACCEPTED,
        ResponseStatus::Ok => StatusCode::OK,
        ResponseStatus::Rejected => {
            let code = resp.reason_code.clone().unwrap_or_default();
            let status = match code.as_str() {
                "unknown_template" | "missing_variable" | "extra_variable" => StatusCode::UNPROCESSABLE_ENTITY,
                RECORDING_UNAVAILABLE => StatusCode::SERVICE_UNAVAILABLE,
                _ => StatusCode::OK,
            };
            if status != StatusCode::OK {
                let mut e = ApiError::new(status, code.clone(), format!("request rejected: {code}"));
                e.request_id = Some(resp.request_id);
                return e.into_response();
            }
            status
        }
    };
    (status, Json(resp)).into_response()
}

async fn poll_complete(State(s): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Complete, "poll")?;
        let state = s
            .pipeline
            .poll(&id)
            .filter(|st| st.principal == caller.principal.key_id || caller.principal.has(Scope::Admin));
        let Some(state) = state else {
            let e = ApiError::new(StatusCode::NOT_FOUND, "unknown_request", format!("no request `{id}`"));
            return Err(caller.fail(&s, e));
        };
        Ok(pipeline_response(state.response))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextBody {
    modality: Modality,
    content: String,
    #[serde(default)]
    event_id: Option<String>,
}

async fn context_event(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Ingest, "context")?;
        let body: ContextBody = caller.parse(&s, &body)?;
        match s
            .pipeline
            .ingest_context_event(&caller.principal.key_id, body.modality, body.content, body.event_id)
        {
            Ok(event) => Ok((StatusCode::CREATED, Json(event)).into_response()),
            Err(e) if e.code() == RECORDING_UNAVAILABLE => {
                Err(caller.fail(&s, ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.code(), e)))
            }
            Err(e) => Err(caller.fail(&s, ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.code(), e))),
        }
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentBody {
    doc_id: String,
    text: String,
    source: String,
    #[serde(default)]
    store_id: Option<String>,
}

async fn document(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Ingest, "documents")?;
        let body: DocumentBody = caller.parse(&s, &body)?;
        let store = match &body.store_id {
            Some(id) => s.pipeline.rag_store(id),
            None => s.pipeline.rag_stores().into_iter().next(),
        };
        let Some(store) = store else {
            let e = ApiError::new(StatusCode::NOT_FOUND, "unknown_store", "no such RAG store");
            return Err(caller.fail(&s, e));
        };
        match store.add_document(body.doc_id, body.text, body.source) {
            Ok(doc) => Ok((
                StatusCode::CREATED,
                Json(json!({"doc_id": doc.doc_id, "store_id": store.id()})),
            )
                .into_response()),
            Err(e @ RagError::DuplicateDocId(_)) => {
                Err(caller.fail(&s, ApiError::new(StatusCode::CONFLICT, "duplicate_doc_id", e)))
            }
            Err(e) => Err(caller.fail(&s, ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", e))),
        }
    })
    .await
}

#[derive(Deserialize)]
struct PendingQuery {
    limit: Option<usize>,
}

async fn pending(State(s): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<PendingQuery>) -> Response {
    blocking(move || {
        authenticate(&s, &headers, Scope::Verify, "verifier")?;
        Ok(Json(s.pipeline.pending_reviews(q.limit.unwrap_or(100))).into_response())
    })
    .await
}

async fn verdict(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(task_id): Path<String>,
    body: Bytes,
) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Verify, "verifier")?;
        let verdict: HumanVerdict = caller.parse(&s, &body)?;
        match s.pipeline.submit_verdict(&task_id, &verdict, &caller.principal.key_id) {
            Ok(task) => Ok(Json(task).into_response()),
            Err(e) => {
                let status = match e {
                    VerdictError::UnknownTask(_) => StatusCode::NOT_FOUND,
                    VerdictError::AlreadyDecided(_) => StatusCode::CONFLICT,
                    VerdictError::Expired(_) => StatusCode::GONE,
                    VerdictError::UnchangedEdit => StatusCode::UNPROCESSABLE_ENTITY,
                    VerdictError::Recorder(_) => StatusCode::SERVICE_UNAVAILABLE,
                };
                Err(caller.fail(&s, ApiError::new(status, e.code(), e)))
            }
        }
    })
    .await
}

#[derive(Deserialize)]
struct AuditQuery {
    kind: Option<String>,
    actor: Option<String>,
    request_id: Option<String>,
    from_seq: Option<u64>,
    to_seq: Option<u64>,
}

fn export_values(events: &[fmgate_core::AuditEvent]) -> Vec<Value> {
    export_events(events)
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).expect("export emits JSON lines"))
        .collect()
}

async fn audit_query(State(s): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<AuditQuery>) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Admin, "audit")?;
        let kind = match q.kind.as_deref().map(|k| EventKind::parse(k).ok_or(k)) {
            None => None,
            Some(Ok(k)) => Some(k),
            Some(Err(k)) => {
                let e = ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", format!("unknown kind `{k}`"));
                return Err(caller.fail(&s, e));
            }
        };
        let filter = AuditFilter {
            kind,
            actor: q.actor,
            request_id: q.request_id,
            from_seq: q.from_seq,
            to_seq: q.to_seq,
        };
        Ok(Json(export_values(&s.pipeline.recorder().query(&filter))).into_response())
    })
    .await
}

#[derive(Deserialize)]
struct VerifyQuery {
    from_seq: Option<u64>,
    to_seq: Option<u64>,
}

async fn audit_verify(State(s): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<VerifyQuery>) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Admin, "audit")?;
        let recorder = s.pipeline.recorder();
        let len = recorder.len();
        let status = match (q.from_seq, q.to_seq) {
            (None, None) => recorder.verify_all(),
            (from, to) => {
                let (from, to) = (from.unwrap_or(0), to.unwrap_or(len.saturating_sub(1)));
                recorder
                    .verify_chain(from, to)
                    .map_err(|e| caller.fail(&s, ApiError::new(StatusCode::BAD_REQUEST, "invalid_range", e)))?
            }
        };
        let mut body = serde_json::to_value(status).expect("status serializes");
        body["len"] = json!(len);
        Ok(Json(body).into_response())
    })
    .await
}

#[derive(Deserialize)]
struct ExportQuery {
    from: Option<u64>,
    to: Option<u64>,
}

async fn audit_export(State(s): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<ExportQuery>) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Admin, "audit")?;
        let recorder = s.pipeline.recorder();
        let range = q.from.unwrap_or(0)..q.to.unwrap_or_else(|| recorder.len());
        let bytes = recorder
            .export_jsonl(range)
            .map_err(|e| caller.fail(&s, ApiError::new(StatusCode::BAD_REQUEST, "invalid_range", e)))?;
        Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes).into_response())
    })
    .await
}

fn registry_error(e: RegistryError) -> ApiError {
    match e {
        RegistryError::Duplicate(..) => ApiError::new(StatusCode::CONFLICT, "duplicate_aibom", e),
        RegistryError::Validation(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_aibom", e),
        RegistryError::UnregisteredArtifact(..) => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unregistered_artifact", e)
        }
        RegistryError::Recorder(e) => ApiError::recording(e),
    }
}

async fn aibom_register(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Admin, "aibom")?;
        let record: AibomRecord = caller.parse(&s, &body)?;
        let key = record.key();
        let digest = s
            .pipeline
            .registry()
            .register_aibom(record)
            .map_err(|e| caller.fail(&s, registry_error(e)))?;
        Ok((
            StatusCode::CREATED,
            Json(json!({"component_id": key.component_id, "version": key.version, "document_digest": digest})),
        )
            .into_response())
    })
    .await
}

async fn aibom_lookup(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, version)): Path<(String, String)>,
) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Admin, "aibom")?;
        match s.pipeline.registry().lookup(&id, &version) {
            Some(record) => Ok(Json(record).into_response()),
            None => Err(caller.fail(
                &s,
                ApiError::new(StatusCode::NOT_FOUND, "unknown_aibom", format!("no AIBOM for {id}@{version}")),
            )),
        }
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CoversionBody {
    tuple: Vec<ComponentRef>,
}

async fn coversion_record(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Admin, "coversion")?;
        let body: CoversionBody = caller.parse(&s, &body)?;
        let entry = s
            .pipeline
            .registry()
            .record_coversion(body.tuple)
            .map_err(|e| match e {
                RegistryError::Validation(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_coversion", e),
                e => registry_error(e),
            })
            .map_err(|e| caller.fail(&s, e))?;
        Ok((StatusCode::CREATED, Json(entry)).into_response())
    })
    .await
}

async fn coversion_resolve(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, version)): Path<(String, String)>,
) -> Response {
    blocking(move || {
        authenticate(&s, &headers, Scope::Admin, "coversion")?;
        let companions = s.pipeline.registry().resolve_coversion(&id, &version);
        Ok(Json(json!({ "companions": companions })).into_response())
    })
    .await
}

#[derive(Deserialize)]
struct ReportQuery {
    start: Option<String>,
    end: Option<String>,
}

async fn report(State(s): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<ReportQuery>) -> Response {
    blocking(move || {
        let caller = authenticate(&s, &headers, Scope::Admin, "report")?;
        let bad = |m: &str| ApiError::new(StatusCode::BAD_REQUEST, "invalid_period", m);
        let (Some(start), Some(end)) = (
            q.start.as_deref().and_then(parse_rfc3339),
            q.end.as_deref().and_then(parse_rfc3339),
        ) else {
            return Err(caller.fail(&s, bad("start and end must be RFC 3339 timestamps")));
        };
        let events = s.pipeline.recorder().snapshot();
        let report = generate_report(&events, start, end, s.clock.now(), s.report_notes.clone())
            .map_err(|e| caller.fail(&s, bad(&e.to_string())))?;
        Ok(Json(report).into_response())
    })
    .await
}
