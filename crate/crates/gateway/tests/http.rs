use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::Duration;
use fmgate::http::API_KEY_HEADER;
use fmgate::{router, AppState};
use fmgate_core::access::{KeyEntry, KeyTable, Scope};
use fmgate_core::adapters::{Adapters, EchoBackend};
use fmgate_core::policy::{AdapterKind, FmDescriptor};
use fmgate_core::rag::RagStore;
use fmgate_core::recorder::storage::MemoryStorage;
use fmgate_core::recorder::AuditFilter;
use fmgate_core::registry::{AibomRecord, AibomRegistry, ComponentType};
use fmgate_core::{EventKind, ManualClock, Pipeline, Policy, Recorder};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const ADMIN: &str = "admin-secret";
const USER: &str = "user-secret";
const OTHER: &str = "other-secret";
const VERIFIER: &str = "verifier-secret";

fn policy(patch: Value) -> Policy {
    let mut base = json!({
        "id": "p", "version": "1",
        "topic_whitelist": [], "topic_blacklist": ["bomb"],
        "pii_patterns": [], "risk_indicators": [],
        "risk_threshold_modify": 0.5, "risk_threshold_reject": 0.9,
        "verifier_mode": "automatic", "disclose_trace": false,
        "fm_route": ["echo"], "rag_enabled": false, "rag_top_k": 2,
        "human_verdict_timeout_s": 60,
        "templates": [{"id": "q", "body": "Q: {{q}}", "required_vars": ["q"], "output_format_note": ""}]
    });
    for (k, v) in patch.as_object().unwrap() {
        base[k] = v.clone();
    }
    Policy::from_value(base).unwrap()
}

fn key(key: &str, id: &str, scopes: &[Scope], quota: u32) -> KeyEntry {
    KeyEntry {
        key: key.into(),
        key_id: id.into(),
        display_name: id.into(),
        scopes: scopes.iter().copied().collect(),
        quota_per_hour: quota,
    }
}

struct Api {
    app: Router,
    state: Arc<AppState>,
    clock: Arc<ManualClock>,
    storage: MemoryStorage,
}

impl Api {
    fn new(patch: Value) -> Self {
        let clock = Arc::new(ManualClock::epoch());
        let storage = MemoryStorage::new();
        let recorder = Arc::new(Recorder::open(Box::new(storage.clone()), clock.clone(), "node-1").unwrap());
        let registry = Arc::new(AibomRegistry::new(recorder.clone()));
        registry.register_aibom(AibomRecord::new("echo", "1", "test", ComponentType::Fm)).unwrap();
        let adapters = Arc::new(Adapters::new(recorder.clone(), registry));
        let descriptor = FmDescriptor {
            id: "echo".into(),
            fm_type: 1,
            capabilities: ["chat".to_string()].into(),
            adapter_kind: AdapterKind::Echo,
            endpoint: None,
            model_version: "1".into(),
        };
        adapters.register_adapter(descriptor, Arc::new(EchoBackend)).unwrap();
        let pipeline = Arc::new(Pipeline::new(recorder, adapters, policy(patch)));
        pipeline.add_rag_store(Arc::new(RagStore::new("docs")));
        let keys = KeyTable::new(vec![
            key(ADMIN, "root", &[Scope::Complete, Scope::Ingest, Scope::Verify, Scope::Admin], 1000),
            key(USER, "alice", &[Scope::Complete, Scope::Ingest], 3),
            key(OTHER, "bob", &[Scope::Complete], 100),
            key(VERIFIER, "vera", &[Scope::Verify], 100),
        ])
        .unwrap();
        let state = Arc::new(AppState::new(pipeline, keys, Some("quarterly".into())));
        Self {
            app: router(state.clone()),
            state,
            clock,
            storage,
        }
    }

    async fn raw(&self, method: &str, uri: &str, key: Option<&str>, body: Option<Vec<u8>>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(k) = key {
            req = req.header(API_KEY_HEADER, k);
        }
        let body = match body {
            Some(b) => {
                req = req.header("content-type", "application/json");
                Body::from(b)
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn call(&self, method: &str, uri: &str, key: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, key, body.map(|b| serde_json::to_vec(&b).unwrap())).await;
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, v)
    }

    async fn complete(&self, key: &str, q: &str) -> (StatusCode, Value) {
        self.call("POST", "/v1/complete", Some(key), Some(json!({"template_id": "q", "vars": {"q": q}})))
            .await
    }

    fn log_len(&self) -> u64 {
        self.state.pipeline.recorder().len()
    }

    fn events(&self, request_id: &str) -> Vec<(EventKind, Value)> {
        self.state
            .pipeline
            .recorder()
            .query(&AuditFilter::request(request_id))
            .into_iter()
            .map(|e| (e.kind, e.payload_json()))
            .collect()
    }

    /// Asserts the refusal was written as request_received + response_delivered.
    fn assert_refusal_recorded(&self, body: &Value, code: &str) {
        assert_eq!(body["error"]["code"], code);
        let id = body["error"]["request_id"].as_str().expect("request id in error body");
        let events = self.events(id);
        assert_eq!(events.len(), 2, "{events:?}");
        assert_eq!(events[0].0, EventKind::RequestReceived);
        assert_eq!(events[1].0, EventKind::ResponseDelivered);
        assert_eq!(events[1].1["reason_code"], code);
    }
}

#[tokio::test]
async fn missing_or_bad_key_is_401_and_unrecorded() {
    let api = Api::new(json!({}));
    let before = api.log_len();
    let (s, body) = api.call("POST", "/v1/complete", None, Some(json!({}))).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(body["error"]["code"], "unauthorized");
    let (s, _) = api.complete("wrong", "hi").await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(api.log_len(), before);
}

#[tokio::test]
async fn missing_scope_is_403_and_recorded() {
    let api = Api::new(json!({}));
    let (s, body) = api.call("GET", "/v1/audit", Some(USER), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    api.assert_refusal_recorded(&body, "forbidden");
    let (s, _) = api.complete(VERIFIER, "hi").await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn completion_and_poll() {
    let api = Api::new(json!({}));
    let (s, body) = api.complete(USER, "hi").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["text"], "Q: hi\n");
    let id = body["request_id"].as_str().unwrap();
    assert!(uuid_like(id));

    let (s, polled) = api.call("GET", &format!("/v1/complete/{id}"), Some(USER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(polled, body);

    let (s, _) = api.call("GET", &format!("/v1/complete/{id}"), Some(OTHER), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = api.call("GET", &format!("/v1/complete/{id}"), Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, body) = api.call("GET", "/v1/complete/nope", Some(USER), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    api.assert_refusal_recorded(&body, "unknown_request");
}

fn uuid_like(s: &str) -> bool {
    s.len() == 36 && s.chars().filter(|c| *c == '-').count() == 4
}

#[tokio::test]
async fn guardrail_rejection_is_a_200_answer() {
    let api = Api::new(json!({}));
    let (s, body) = api.complete(USER, "a bomb").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["status"], "rejected");
    assert_eq!(body["reason_code"], "blacklisted_term");
    let id = body["request_id"].as_str().unwrap();
    assert!(api.events(id).iter().all(|(k, _)| *k != EventKind::FmCall));
}

#[tokio::test]
async fn template_and_body_errors() {
    let api = Api::new(json!({}));
    let (s, body) = api
        .call("POST", "/v1/complete", Some(USER), Some(json!({"template_id": "nope"})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "unknown_template");

    let (s, body) = api.call("POST", "/v1/complete", Some(USER), Some(json!({"template_id": "q"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "missing_variable");

    let (s, bytes) = api.raw("POST", "/v1/complete", Some(ADMIN), Some(b"{not json".to_vec())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&bytes).unwrap();
    api.assert_refusal_recorded(&body, "invalid_request");
}

#[tokio::test]
async fn quota_is_per_key_and_hourly() {
    let api = Api::new(json!({}));
    for _ in 0..3 {
        assert_eq!(api.complete(USER, "hi").await.0, StatusCode::OK);
    }
    let (s, body) = api.complete(USER, "hi").await;
    assert_eq!(s, StatusCode::TOO_MANY_REQUESTS);
    api.assert_refusal_recorded(&body, "quota_exceeded");
    assert_eq!(api.complete(OTHER, "hi").await.0, StatusCode::OK);
    api.clock.advance(Duration::seconds(3600));
    assert_eq!(api.complete(USER, "hi").await.0, StatusCode::OK);
}

#[tokio::test]
async fn storage_failure_is_503() {
    let api = Api::new(json!({}));
    api.storage.set_failing(true);
    let (s, body) = api.complete(USER, "hi").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "recording_unavailable");
}

#[tokio::test]
async fn human_review_flow() {
    let api = Api::new(json!({"verifier_mode": "human"}));
    let (s, held) = api.complete(USER, "hi").await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(held["status"], "held");
    let id = held["request_id"].as_str().unwrap().to_string();
    let task = held["task_id"].as_str().unwrap().to_string();
    assert_eq!(api.call("GET", &format!("/v1/complete/{id}"), Some(USER), None).await.0, StatusCode::ACCEPTED);

    let (s, pending) = api.call("GET", "/v1/verifier/pending?limit=10", Some(VERIFIER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(pending.as_array().unwrap().len(), 1);
    assert_eq!(pending[0]["task_id"], task.as_str());
    assert_eq!(pending[0]["candidate_text"], "Q: hi\n");

    let uri = format!("/v1/verifier/{task}/verdict");
    let (s, bad) = api.call("POST", &uri, Some(VERIFIER), Some(json!({"verdict": "maybe"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(bad["error"]["code"], "invalid_request");
    let (s, _) = api
        .call("POST", &uri, Some(VERIFIER), Some(json!({"verdict": "edit", "new_text": "Q: hi\n"})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, decided) = api
        .call("POST", &uri, Some(VERIFIER), Some(json!({"verdict": "edit", "new_text": "better"})))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(decided["status"], "edited");

    let (s, body) = api.call("POST", &uri, Some(VERIFIER), Some(json!({"verdict": "approve"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "already_decided");

    let (s, done) = api.call("GET", &format!("/v1/complete/{id}"), Some(USER), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(done["text"], "better");

    let (s, _) = api
        .call("POST", "/v1/verifier/vt-999999/verdict", Some(VERIFIER), Some(json!({"verdict": "approve"})))
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn late_verdict_is_410_and_times_out() {
    let api = Api::new(json!({"verifier_mode": "human"}));
    let (_, held) = api.complete(USER, "hi").await;
    let task = held["task_id"].as_str().unwrap();
    api.clock.advance(Duration::seconds(61));
    let (s, body) = api
        .call("POST", &format!("/v1/verifier/{task}/verdict"), Some(VERIFIER), Some(json!({"verdict": "approve"})))
        .await;
    assert_eq!(s, StatusCode::GONE);
    assert_eq!(body["error"]["code"], "expired");
    let id = held["request_id"].as_str().unwrap();
    let (_, polled) = api.call("GET", &format!("/v1/complete/{id}"), Some(USER), None).await;
    assert_eq!(polled["reason_code"], "verifier_timeout");
}

#[tokio::test]
async fn context_events() {
    let api = Api::new(json!({}));
    let (s, body) = api
        .call("POST", "/v1/context-events", Some(USER), Some(json!({"modality": "click", "content": "opened doc"})))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body["principal"], "alice");
    let big = "x".repeat(5000);
    let (s, body) = api
        .call("POST", "/v1/context-events", Some(USER), Some(json!({"modality": "typing", "content": big})))
        .await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    api.assert_refusal_recorded(&body, "oversize_content");
    let (s, _) = api
        .call("POST", "/v1/context-events", Some(USER), Some(json!({"modality": "gaze", "content": "x"})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = api
        .call("POST", "/v1/context-events", Some(OTHER), Some(json!({"modality": "click", "content": "x"})))
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn documents() {
    let api = Api::new(json!({}));
    let doc = json!({"doc_id": "d1", "text": "solar power", "source": "wiki"});
    let (s, body) = api.call("POST", "/v1/documents", Some(USER), Some(doc.clone())).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body, json!({"doc_id": "d1", "store_id": "docs"}));
    let (s, body) = api.call("POST", "/v1/documents", Some(USER), Some(doc)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    api.assert_refusal_recorded(&body, "duplicate_doc_id");
    let (s, _) = api
        .call(
            "POST",
            "/v1/documents",
            Some(USER),
            Some(json!({"doc_id": "d2", "text": "t", "source": "s", "store_id": "elsewhere"})),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(api.state.pipeline.rag_store("docs").unwrap().get("d1").is_some());
}

#[tokio::test]
async fn audit_query_verify_export() {
    let api = Api::new(json!({}));
    let (_, body) = api.complete(USER, "hi").await;
    let id = body["request_id"].as_str().unwrap();

    let (s, events) = api.call("GET", &format!("/v1/audit?request_id={id}"), Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::OK);
    let kinds: Vec<&str> = events.as_array().unwrap().iter().map(|e| e["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds.first(), Some(&"request_received"));
    assert_eq!(kinds.last(), Some(&"response_delivered"));
    assert!(kinds.contains(&"fm_call"));

    let (_, calls) = api.call("GET", "/v1/audit?kind=fm_call", Some(ADMIN), None).await;
    assert_eq!(calls.as_array().unwrap().len(), 1);
    let (s, body) = api.call("GET", "/v1/audit?kind=bogus", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    api.assert_refusal_recorded(&body, "invalid_request");

    let (s, v) = api.call("GET", "/v1/audit/verify", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let len = v["len"].as_u64().unwrap();
    assert_eq!(len, api.log_len());
    let (s, v) = api.call("GET", "/v1/audit/verify?from_seq=1&to_seq=2", Some(ADMIN), None).await;
    assert_eq!((s, &v["status"]), (StatusCode::OK, &json!("ok")));
    let (s, _) = api.call("GET", "/v1/audit/verify?from_seq=5&to_seq=999", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let len = api.log_len();
    let (s, bytes) = api.raw("GET", "/v1/audit/export?from=0&to=3", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::OK);
    let expected = api.state.pipeline.recorder().export_jsonl(0..3).unwrap();
    assert_eq!(bytes, expected);
    assert_eq!(bytes.iter().filter(|b| **b == b'\n').count(), 3);
    let (_, all) = api.raw("GET", "/v1/audit/export", Some(ADMIN), None).await;
    assert_eq!(all, api.state.pipeline.recorder().export_jsonl(0..len).unwrap());
}

#[tokio::test]
async fn aibom_and_coversion() {
    let api = Api::new(json!({}));
    let record = json!({
        "component_id": "retriever", "version": "2", "supplier": "acme",
        "component_type": "tool", "rai_metrics": {"bias": 0.1}
    });
    let (s, body) = api.call("POST", "/v1/aibom", Some(ADMIN), Some(record.clone())).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body["document_digest"].as_str().unwrap().len(), 64);
    let (s, body) = api.call("POST", "/v1/aibom", Some(ADMIN), Some(record)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    api.assert_refusal_recorded(&body, "duplicate_aibom");
    let (s, body) = api
        .call(
            "POST",
            "/v1/aibom",
            Some(ADMIN),
            Some(json!({"component_id": "", "version": "1", "supplier": "x", "component_type": "fm"})),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "invalid_aibom");

    let (s, got) = api.call("GET", "/v1/aibom/retriever/2", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(got["supplier"], "acme");
    assert_eq!(api.call("GET", "/v1/aibom/retriever/9", Some(ADMIN), None).await.0, StatusCode::NOT_FOUND);

    let tuple = json!({"tuple": [
        {"component_id": "echo", "version": "1"},
        {"component_id": "retriever", "version": "2"}
    ]});
    let (s, entry) = api.call("POST", "/v1/coversion", Some(ADMIN), Some(tuple)).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(entry["tuple"].as_array().unwrap().len(), 2);
    let (s, resolved) = api.call("GET", "/v1/coversion/echo/1", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(resolved["companions"], json!([{"component_id": "retriever", "version": "2"}]));
    let (s, none) = api.call("GET", "/v1/coversion/nope/1", Some(ADMIN), None).await;
    assert_eq!((s, none), (StatusCode::OK, json!({"companions": []})));

    let (s, body) = api
        .call("POST", "/v1/coversion", Some(ADMIN), Some(json!({"tuple": [{"component_id": "echo", "version": "1"}, {"component_id": "ghost", "version": "1"}]})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "unregistered_artifact");
    let (s, body) = api
        .call("POST", "/v1/coversion", Some(ADMIN), Some(json!({"tuple": [{"component_id": "echo", "version": "1"}]})))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "invalid_coversion");
}

#[tokio::test]
async fn report_totals() {
    let api = Api::new(json!({}));
    api.complete(USER, "hi").await;
    api.complete(USER, "a bomb").await;
    api.complete(USER, "hi").await;
    api.complete(USER, "hi").await;
    let uri = "/v1/report?start=2024-01-01T00:00:00Z&end=2024-01-02T00:00:00Z";
    let (s, r) = api.call("GET", uri, Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::OK);
    let t = &r["totals"];
    assert_eq!(t["requests"], 4);
    assert_eq!(t["delivered"], 2);
    assert_eq!(t["rejected_total"], 2);
    assert_eq!(t["rejected_by_reason"], json!({"blacklisted_term": 1, "quota_exceeded": 1}));
    assert_eq!(t["held"], 0);
    assert_eq!(t["fm_calls_by_fm_id"], json!({"echo": 2}));
    assert_eq!(r["process_notes"], "quarterly");

    let (s, body) = api.call("GET", "/v1/report?start=2024-01-02T00:00:00Z&end=2024-01-01T00:00:00Z", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid_period");
    let (s, _) = api.call("GET", "/v1/report?start=yesterday", Some(ADMIN), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn every_authenticated_error_is_recorded() {
    let api = Api::new(json!({}));
    let probes: Vec<(&str, &str, &str, Option<Value>)> = vec![
        ("GET", "/v1/audit", USER, None),
        ("GET", "/v1/complete/missing", USER, None),
        ("POST", "/v1/verifier/vt-000404/verdict", VERIFIER, Some(json!({"verdict": "approve"}))),
        ("GET", "/v1/aibom/x/1", ADMIN, None),
        ("GET", "/v1/report", ADMIN, None),
    ];
    for (method, uri, key, body) in probes {
        let (s, body) = api.call(method, uri, Some(key), body).await;
        assert!(s.is_client_error(), "{uri}: {s}");
        let code = body["error"]["code"].as_str().unwrap().to_string();
        api.assert_refusal_recorded(&body, &code);
    }
    assert_eq!(api.state.pipeline.recorder().verify_all(), fmgate_core::recorder::ChainStatus::Ok);
}
