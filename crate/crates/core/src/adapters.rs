//! Adapter layer over heterogeneous foundation-model backends.
//!
//! Every backend sits behind [`FmBackend`]; [`Adapters`] owns the
//! registrations, routes by capability and records an `fm_call` /
//! `fm_response` pair around every dispatch.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::guardrail::{self, ReasonCode, Stage};
use crate::policy::{AdapterKind, FmDescriptor, Policy, PolicyError};
use crate::recorder::{EventKind, Recorder, RecorderError};
use crate::registry::{AibomRegistry, Enforcement};

/// Output of the scripted mock for prompts missing from its table.
pub const UNSCRIPTED: &str = "UNSCRIPTED";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FmRequest {
    pub prompt: String,
    pub max_output_chars: usize,
    pub request_id: String,
}

impl FmRequest {
    pub fn new(prompt: impl Into<String>, max_output_chars: usize, request_id: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_chars,
            request_id: request_id.into(),
        }
    }

    fn with_prompt(&self, prompt: String) -> Self {
        Self { prompt, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FmResponse {
    pub text: String,
    pub fm_id: String,
    pub latency_ms: u64,
    pub truncated: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend failure: {0}")]
    Failed(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
}

pub trait FmBackend: Send + Sync {
    fn complete(&self, request: &FmRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EchoBackend;

impl FmBackend for EchoBackend {
    fn complete(&self, request: &FmRequest) -> Result<String, BackendError> {
        Ok(request.prompt.clone())
    }
}

#[derive(Debug, Default, Clone)]
pub struct ScriptedBackend {
    table: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new<K: Into<String>, V: Into<String>>(entries: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            table: entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }
}

impl FmBackend for ScriptedBackend {
    fn complete(&self, request: &FmRequest) -> Result<String, BackendError> {
        Ok(self
            .table
            .get(&request.prompt)
            .cloned()
            .unwrap_or_else(|| UNSCRIPTED.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct FailingBackend {
    message: String,
}

impl Default for FailingBackend {
    fn default() -> Self {
        Self {
            message: "mock backend failure".into(),
        }
    }
}

impl FmBackend for FailingBackend {
    fn complete(&self, _request: &FmRequest) -> Result<String, BackendError> {
        Err(BackendError::Failed(self.message.clone()))
    }
}

/// POSTs `{"prompt", "max_output_chars"}` and expects `{"text"}` back.
pub struct HttpBackend {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            retries,
        }
    }

    fn attempt(&self, request: &FmRequest) -> Result<String, BackendError> {
        let body = json!({"prompt": request.prompt, "max_output_chars": request.max_output_chars});
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(t) => BackendError::Timeout(t.to_string()),
            other => BackendError::Failed(other.to_string()),
        };
        let reply: HttpReply = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(map_err)?
            .into_body()
            .read_json()
            .map_err(map_err)?;
        Ok(reply.text)
    }
}

impl FmBackend for HttpBackend {
    fn complete(&self, request: &FmRequest) -> Result<String, BackendError> {
        let mut last = self.attempt(request);
        for _ in 0..self.retries {
            if last.is_ok() {
                break;
            }
            last = self.attempt(request);
        }
        last
    }
}

/// Options for backends that need more than a descriptor.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendOptions {
    /// Prompt → reply table for `scripted` adapters.
    #[serde(default)]
    pub script: BTreeMap<String, String>,
    #[serde(default)]
    pub timeout_ms: Option<u64>,
    #[serde(default)]
    pub retries: u32,
}

pub fn build_backend(descriptor: &FmDescriptor, options: &BackendOptions) -> Arc<dyn FmBackend> {
    match descriptor.adapter_kind {
        AdapterKind::Echo => Arc::new(EchoBackend),
        AdapterKind::Scripted => Arc::new(ScriptedBackend::new(options.script.clone())),
        AdapterKind::Failing => Arc::new(FailingBackend::default()),
        AdapterKind::Http => Arc::new(HttpBackend::new(
            descriptor.endpoint.clone().unwrap_or_default(),
            Duration::from_millis(options.timeout_ms.unwrap_or(30_000)),
            options.retries.min(1),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterRegistration {
    pub fm_id: String,
    pub capabilities: BTreeSet<String>,
    pub model_version: String,
}

#[derive(Debug, Error)]
pub enum RegisterError {
    #[error("adapter `{0}` has no registered AIBOM for its model version")]
    AibomRefused(String),
    #[error("adapter `{0}` is already registered")]
    DuplicateAdapter(String),
    #[error(transparent)]
    Invalid(#[from] PolicyError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvokeError {
    #[error("unknown fm `{0}`")]
    UnknownFm(String),
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("fm `{fm_id}`: {source}")]
    Backend { fm_id: String, source: BackendError },
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

impl InvokeError {
    pub fn code(&self) -> &'static str {
        match self {
            InvokeError::UnknownFm(_) => "unknown_fm",
            InvokeError::EmptyPrompt => "empty_prompt",
            InvokeError::Backend { source: BackendError::Timeout(_), .. } => "fm_timeout",
            InvokeError::Backend { .. } => "fm_backend_error",
            InvokeError::Recorder(_) => "recording_unavailable",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("empty route")]
    EmptyRoute,
    #[error("chain step {step}: {source}")]
    Invoke { step: usize, source: InvokeError },
    #[error("mid-stage guardrail rejected step {step}: {reason}")]
    GuardrailAbort { step: usize, reason: ReasonCode },
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainOutput {
    pub response: FmResponse,
    pub intermediates: Vec<FmResponse>,
}

#[derive(Clone)]
struct Entry {
    descriptor: FmDescriptor,
    backend: Arc<dyn FmBackend>,
}

pub struct Adapters {
    entries: RwLock<BTreeMap<String, Entry>>,
    recorder: Arc<Recorder>,
    registry: Arc<AibomRegistry>,
}

impl std::fmt::Debug for Adapters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adapters")
            .field("fm_ids", &self.entries.read().keys().collect::<Vec<_>>())
            .finish()
    }
}

const ACTOR: &str = "fm-adapters";

fn truncate_chars(text: String, max: usize) -> (String, bool) {
    match text.char_indices().nth(max) {
        Some((cut, _)) => (text[..cut].to_string(), true),
        None => (text, false),
    }
}

impl Adapters {
    pub fn new(recorder: Arc<Recorder>, registry: Arc<AibomRegistry>) -> Self {
        Self {
            entries: RwLock::default(),
            recorder,
            registry,
        }
    }

    pub fn registry(&self) -> &Arc<AibomRegistry> {
        &self.registry
    }

    /// Registers a model adapter. Its AIBOM must already be on file.
    pub fn register_adapter(
        &self,
        descriptor: FmDescriptor,
        backend: Arc<dyn FmBackend>,
    ) -> Result<AdapterRegistration, RegisterError> {
        descriptor.validate()?;
        if self.entries.read().contains_key(&descriptor.id) {
            return Err(RegisterError::DuplicateAdapter(descriptor.id));
        }
        if self.registry.enforce(&descriptor.id, &descriptor.model_version, None)? == Enforcement::Refused {
            return Err(RegisterError::AibomRefused(descriptor.id));
        }
        self.insert(descriptor, backend)
    }

    /// Installs a tool or plugin worker without an up-front AIBOM check. Such
    /// workers are checked every time a plan routes a task to them.
    pub fn install_tool(
        &self,
        descriptor: FmDescriptor,
        backend: Arc<dyn FmBackend>,
    ) -> Result<AdapterRegistration, RegisterError> {
        descriptor.validate()?;
        self.insert(descriptor, backend)
    }

    fn insert(&self, descriptor: FmDescriptor, backend: Arc<dyn FmBackend>) -> Result<AdapterRegistration, RegisterError> {
        let mut entries = self.entries.write();
        if entries.contains_key(&descriptor.id) {
            return Err(RegisterError::DuplicateAdapter(descriptor.id));
        }
        let reg = AdapterRegistration {
            fm_id: descriptor.id.clone(),
            capabilities: descriptor.capabilities.clone(),
            model_version: descriptor.model_version.clone(),
        };
        entries.insert(descriptor.id.clone(), Entry { descriptor, backend });
        Ok(reg)
    }

    pub fn is_registered(&self, fm_id: &str) -> bool {
        self.entries.read().contains_key(fm_id)
    }

    pub fn descriptor(&self, fm_id: &str) -> Option<FmDescriptor> {
        self.entries.read().get(fm_id).map(|e| e.descriptor.clone())
    }

    /// Lexicographically smallest fm id declaring `capability`.
    pub fn route(&self, capability: &str) -> Option<String> {
        self.entries
            .read()
            .values()
            .find(|e| e.descriptor.capabilities.contains(capability))
            .map(|e| e.descriptor.id.clone())
    }

    pub fn invoke(&self, fm_id: &str, request: &FmRequest) -> Result<FmResponse, InvokeError> {
        self.invoke_redacting(fm_id, request, None)
    }

    /// Like [`invoke`](Self::invoke); when `policy` is given, the text stored
    /// in the `fm_response` event is PII-redacted with the policy patterns.
    pub fn invoke_redacting(
        &self,
        fm_id: &str,
        request: &FmRequest,
        policy: Option<&Policy>,
    ) -> Result<FmResponse, InvokeError> {
        let entry = self
            .entries
            .read()
            .get(fm_id)
            .cloned()
            .ok_or_else(|| InvokeError::UnknownFm(fm_id.to_string()))?;
        if request.prompt.is_empty() {
            return Err(InvokeError::EmptyPrompt);
        }
        let clock = self.recorder.clock().clone();
        self.recorder.append(
            ACTOR,
            EventKind::FmCall,
            json!({
                "request_id": request.request_id,
                "fm_id": fm_id,
                "model_version": entry.descriptor.model_version,
                "prompt": request.prompt,
                "max_output_chars": request.max_output_chars,
            }),
        )?;
        let started = clock.now();
        let outcome = entry.backend.complete(request);
        let latency_ms = (clock.now() - started).num_milliseconds().max(0) as u64;

        match outcome {
            Ok(text) => {
                let (text, truncated) = truncate_chars(text, request.max_output_chars);
                let stored = match policy {
                    Some(p) => guardrail::redact_with(&text, &p.compiled().pii).0,
                    None => text.clone(),
                };
                self.recorder.append(
                    ACTOR,
                    EventKind::FmResponse,
                    json!({
                        "request_id": request.request_id,
                        "fm_id": fm_id,
                        "ok": true,
                        "text": stored,
                        "truncated": truncated,
                        "latency_ms": latency_ms,
                    }),
                )?;
                Ok(FmResponse {
                    text,
                    fm_id: fm_id.to_string(),
                    latency_ms,
                    truncated,
                })
            }
            Err(source) => {
                self.recorder.append(
                    ACTOR,
                    EventKind::FmResponse,
                    json!({
                        "request_id": request.request_id,
                        "fm_id": fm_id,
                        "ok": false,
                        "error": source.to_string(),
                        "latency_ms": latency_ms,
                    }),
                )?;
                Err(InvokeError::Backend {
                    fm_id: fm_id.to_string(),
                    source,
                })
            }
        }
    }

    /// Pipes the output of each step into the next. Intermediate outputs go
    /// through the mid-stage guardrail; a reject aborts the chain.
    pub fn chain_invoke(&self, route: &[String], request: &FmRequest, policy: &Policy) -> Result<ChainOutput, ChainError> {
        let (last, head) = route.split_last().ok_or(ChainError::EmptyRoute)?;
        let mut intermediates = Vec::with_capacity(head.len());
        let mut current = request.clone();
        for (step, fm_id) in head.iter().enumerate() {
            let resp = self
                .invoke_redacting(fm_id, &current, Some(policy))
                .map_err(|source| ChainError::Invoke { step, source })?;
            let verdict = guardrail::evaluate(Stage::Mid, &resp.text, policy);
            self.recorder.append(
                "guardrail",
                EventKind::GuardrailVerdict,
                json!({
                    "request_id": request.request_id,
                    "stage": Stage::Mid,
                    "step": step,
                    "fm_id": fm_id,
                    "decision": verdict.decision,
                    "reason_code": verdict.reason_code,
                    "redactions": verdict.redactions.len(),
                    "output_text": verdict.output_text,
                }),
            )?;
            if let Some(reason) = verdict.reason_code.filter(|_| verdict.is_reject()) {
                return Err(ChainError::GuardrailAbort { step, reason });
            }
            current = current.with_prompt(verdict.output_text);
            intermediates.push(resp);
        }
        let response = self
            .invoke_redacting(last, &current, Some(policy))
            .map_err(|source| ChainError::Invoke { step: head.len(), source })?;
        Ok(ChainOutput { response, intermediates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::recorder::AuditFilter;
    use crate::registry::{AibomRecord, ComponentType};
    use std::io::{BufRead, BufReader, Read, Write};
    use serde_json::Value;
    use std::net::TcpListener;

    fn descriptor(id: &str, kind: AdapterKind, caps: &[&str]) -> FmDescriptor {
        FmDescriptor {
            id: id.into(),
            fm_type: 1,
            capabilities: caps.iter().map(|c| c.to_string()).collect(),
            adapter_kind: kind,
            endpoint: None,
            model_version: "1".into(),
        }
    }

    fn setup() -> (Adapters, Arc<Recorder>) {
        let rec = Arc::new(Recorder::in_memory(Arc::new(ManualClock::epoch()), "n"));
        let reg = Arc::new(AibomRegistry::new(rec.clone()));
        for id in ["echo", "s1", "s2", "bad", "zeta", "alpha"] {
            reg.register_aibom(AibomRecord::new(id, "1", "test", ComponentType::Fm)).unwrap();
        }
        (Adapters::new(rec.clone(), reg), rec)
    }

    fn policy(black: &[&str]) -> Policy {
        Policy::from_value(json!({
            "id": "p", "version": "1",
            "topic_whitelist": [], "topic_blacklist": black,
            "pii_patterns": [{"name": "EMAIL", "pattern": "[a-z]+@[a-z]+\\.[a-z]+", "replacement_tag": "[EMAIL_{n}]"}],
            "risk_indicators": [],
            "risk_threshold_modify": 0.5, "risk_threshold_reject": 0.8,
            "verifier_mode": "automatic", "disclose_trace": false,
            "fm_route": ["echo"], "rag_enabled": false, "rag_top_k": 1,
            "human_verdict_timeout_s": 60
        }))
        .unwrap()
    }

    #[test]
    fn registration_rules() {
        let (a, rec) = setup();
        a.register_adapter(descriptor("echo", AdapterKind::Echo, &["chat"]), Arc::new(EchoBackend)).unwrap();
        assert!(a.is_registered("echo"));
        assert_eq!(a.route("chat").as_deref(), Some("echo"));
        assert!(matches!(
            a.register_adapter(descriptor("echo", AdapterKind::Echo, &["chat"]), Arc::new(EchoBackend)),
            Err(RegisterError::DuplicateAdapter(_))
        ));
        assert!(matches!(
            a.register_adapter(descriptor("rogue", AdapterKind::Echo, &["chat"]), Arc::new(EchoBackend)),
            Err(RegisterError::AibomRefused(_))
        ));
        assert!(!a.is_registered("rogue"));
        assert_eq!(rec.query(&AuditFilter::kind(EventKind::ToolRefusedAibom)).len(), 1);
    }

    #[test]
    fn routing_prefers_smallest_id() {
        let (a, _) = setup();
        a.register_adapter(descriptor("zeta", AdapterKind::Echo, &["sum"]), Arc::new(EchoBackend)).unwrap();
        a.register_adapter(descriptor("alpha", AdapterKind::Echo, &["sum", "x"]), Arc::new(EchoBackend)).unwrap();
        assert_eq!(a.route("sum").as_deref(), Some("alpha"));
        assert_eq!(a.route("x").as_deref(), Some("alpha"));
        assert_eq!(a.route("nope"), None);
    }

    #[test]
    fn echo_and_scripted() {
        let (a, rec) = setup();
        a.register_adapter(descriptor("echo", AdapterKind::Echo, &["chat"]), Arc::new(EchoBackend)).unwrap();
        a.register_adapter(
            descriptor("s1", AdapterKind::Scripted, &["plan"]),
            Arc::new(ScriptedBackend::new([("plan?", "[]")])),
        )
        .unwrap();
        assert_eq!(a.invoke("echo", &FmRequest::new("hi", 100, "r1")).unwrap().text, "hi");
        assert_eq!(a.invoke("s1", &FmRequest::new("plan?", 100, "r2")).unwrap().text, "[]");
        assert_eq!(a.invoke("s1", &FmRequest::new("other", 100, "r3")).unwrap().text, UNSCRIPTED);
        for rid in ["r1", "r2", "r3"] {
            let evs = rec.query(&AuditFilter::request(rid));
            assert_eq!(evs.iter().map(|e| e.kind).collect::<Vec<_>>(), vec![EventKind::FmCall, EventKind::FmResponse]);
        }
        assert_eq!(a.invoke("ghost", &FmRequest::new("x", 1, "r")), Err(InvokeError::UnknownFm("ghost".into())));
    }

    #[test]
    fn failing_backend_is_still_recorded() {
        let (a, rec) = setup();
        a.register_adapter(descriptor("bad", AdapterKind::Failing, &["x"]), Arc::new(FailingBackend::default())).unwrap();
        let err = a.invoke("bad", &FmRequest::new("hi", 10, "rf")).unwrap_err();
        assert_eq!(err.code(), "fm_backend_error");
        let evs = rec.query(&AuditFilter::request("rf"));
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[1].kind, EventKind::FmResponse);
        assert_eq!(evs[1].payload_json()["ok"], false);
    }

    #[test]
    fn truncation_flags() {
        let (a, _) = setup();
        a.register_adapter(descriptor("echo", AdapterKind::Echo, &["chat"]), Arc::new(EchoBackend)).unwrap();
        let r = a.invoke("echo", &FmRequest::new("héllo world", 5, "r")).unwrap();
        assert_eq!(r.text, "héllo");
        assert!(r.truncated);
        assert_eq!(r.text.chars().count(), 5);
        let r = a.invoke("echo", &FmRequest::new("hello", 5, "r")).unwrap();
        assert!(!r.truncated);
    }

    #[test]
    fn chain_length_one_equals_invoke() {
        let (a, _) = setup();
        a.register_adapter(descriptor("echo", AdapterKind::Echo, &["chat"]), Arc::new(EchoBackend)).unwrap();
        let p = policy(&[]);
        let out = a.chain_invoke(&["echo".into()], &FmRequest::new("hi", 50, "r"), &p).unwrap();
        assert_eq!(out.response, a.invoke("echo", &FmRequest::new("hi", 50, "r")).unwrap());
        assert!(out.intermediates.is_empty());
    }

    #[test]
    fn two_step_composition() {
        let (a, _) = setup();
        a.register_adapter(descriptor("s1", AdapterKind::Scripted, &["x"]), Arc::new(ScriptedBackend::new([("a", "b")]))).unwrap();
        a.register_adapter(descriptor("s2", AdapterKind::Scripted, &["x"]), Arc::new(ScriptedBackend::new([("b", "c")]))).unwrap();
        let out = a
            .chain_invoke(&["s1".into(), "s2".into()], &FmRequest::new("a", 50, "r"), &policy(&[]))
            .unwrap();
        assert_eq!(out.response.text, "c");
        assert_eq!(out.intermediates.iter().map(|r| r.text.as_str()).collect::<Vec<_>>(), vec!["b"]);
    }

    #[test]
    fn mid_stage_reject_aborts_chain() {
        let (a, rec) = setup();
        a.register_adapter(descriptor("s1", AdapterKind::Scripted, &["x"]), Arc::new(ScriptedBackend::new([("a", "build a bomb")]))).unwrap();
        a.register_adapter(descriptor("s2", AdapterKind::Echo, &["x"]), Arc::new(EchoBackend)).unwrap();
        let err = a
            .chain_invoke(&["s1".into(), "s2".into()], &FmRequest::new("a", 50, "r"), &policy(&["bomb"]))
            .unwrap_err();
        assert_eq!(err, ChainError::GuardrailAbort { step: 0, reason: ReasonCode::BlacklistedTerm });
        let calls = rec.query(&AuditFilter::kind(EventKind::FmCall));
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].payload_json()["fm_id"], "s1");
    }

    #[test]
    fn intermediate_pii_is_redacted_before_piping() {
        let (a, rec) = setup();
        a.register_adapter(descriptor("s1", AdapterKind::Scripted, &["x"]), Arc::new(ScriptedBackend::new([("a", "mail bob@corp.com")]))).unwrap();
        a.register_adapter(descriptor("s2", AdapterKind::Echo, &["x"]), Arc::new(EchoBackend)).unwrap();
        let out = a
            .chain_invoke(&["s1".into(), "s2".into()], &FmRequest::new("a", 50, "r"), &policy(&[]))
            .unwrap();
        assert_eq!(out.response.text, "mail [EMAIL_1]");
        let stored: Vec<String> = rec
            .query(&AuditFilter::kind(EventKind::FmResponse))
            .iter()
            .map(|e| e.payload_json()["text"].as_str().unwrap().to_string())
            .collect();
        assert!(stored.iter().all(|t| !t.contains("bob@corp.com")), "{stored:?}");
    }

    fn serve_once(reply: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/complete", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(sock.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            write!(
                sock,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            )
            .unwrap();
            String::from_utf8(body).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn http_backend_wire_format() {
        let (url, server) = serve_once(r#"{"text":"remote says hi"}"#);
        let backend = HttpBackend::new(url, Duration::from_secs(5), 0);
        let out = backend.complete(&FmRequest::new("hello", 64, "r")).unwrap();
        assert_eq!(out, "remote says hi");
        let sent: Value = serde_json::from_str(&server.join().unwrap()).unwrap();
        assert_eq!(sent, json!({"prompt": "hello", "max_output_chars": 64}));
    }

    #[test]
    fn http_backend_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let backend = HttpBackend::new(url, Duration::from_millis(200), 0);
        let err = backend.complete(&FmRequest::new("x", 8, "r")).unwrap_err();
        assert!(matches!(err, BackendError::Timeout(_)), "{err:?}");
        drop(listener);
    }
}
