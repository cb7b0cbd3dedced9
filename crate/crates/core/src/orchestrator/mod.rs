//! Request pipeline and agent layer.
//!
//! A simple request runs template rendering, the pre-stage guardrail, risk
//! assessment, optional retrieval, model invocation (single or chained), the
//! post-stage guardrail and the verifier gate. A goal request replaces the
//! model step with a coordinator plan executed by worker adapters.

mod context;
mod plan;

pub use context::{append_context_block, ContextEvent, ContextStore, Modality, MAX_CONTENT_CHARS};
pub use plan::{planning_prompt, task_prompt, PlanError, TaskPlan, TaskSpec};

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::adapters::{Adapters, ChainError, FmRequest, InvokeError};
use crate::digest::Digest32;
use crate::guardrail::{self, GuardrailVerdict, ReasonCode, Stage};
use crate::policy::{render_prompt, Policy, TemplateError, VerifierMode};
use crate::rag::{federated_retrieve, RagStore};
use crate::recorder::{AuditEvent, AuditFilter, EventKind, Recorder, RecorderError};
use crate::registry::{AibomRegistry, Enforcement};
use crate::risk::{self, RiskDecision};
use crate::verifier::{GateOutcome, HumanVerdict, TaskStatus, VerdictError, VerificationTask, Verifier};

const ACTOR: &str = "orchestrator";
pub const RECORDING_UNAVAILABLE: &str = "recording_unavailable";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestMode {
    #[default]
    Simple,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub request_id: String,
    pub principal: String,
    #[serde(default)]
    pub mode: RequestMode,
    pub template_id: String,
    #[serde(default)]
    pub vars: BTreeMap<String, String>,
    #[serde(default)]
    pub context_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Rejected,
    Held,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_no: usize,
    pub component: String,
    pub summary: String,
    pub audit_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayResponse {
    pub request_id: String,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceStep>>,
}

impl GatewayResponse {
    pub fn ok(request_id: &str, text: String) -> Self {
        Self {
            request_id: request_id.to_string(),
            status: ResponseStatus::Ok,
            text: Some(text),
            reason_code: None,
            task_id: None,
            trace: None,
        }
    }

    pub fn rejected(request_id: &str, reason_code: impl Into<String>) -> Self {
        Self {
            request_id: request_id.to_string(),
            status: ResponseStatus::Rejected,
            text: None,
            reason_code: Some(reason_code.into()),
            task_id: None,
            trace: None,
        }
    }

    pub fn held(request_id: &str, task_id: Option<String>) -> Self {
        Self {
            request_id: request_id.to_string(),
            status: ResponseStatus::Held,
            text: None,
            reason_code: None,
            task_id,
            trace: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("context content has {chars} chars; the limit is {MAX_CONTENT_CHARS}")]
    Oversize { chars: usize },
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

impl ContextError {
    pub fn code(&self) -> &'static str {
        match self {
            ContextError::Oversize { .. } => "oversize_content",
            ContextError::Recorder(_) => RECORDING_UNAVAILABLE,
        }
    }
}

/// Held or finished request as seen by a poller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestState {
    pub principal: String,
    pub response: GatewayResponse,
}

struct RequestRecord {
    principal: String,
    first_seq: u64,
    /// `None` while the pipeline is still running.
    response: Option<GatewayResponse>,
}

enum Terminal {
    Deliver(String),
    Hold(String),
}

enum Halt {
    Reject(String),
    Recording,
}

impl From<RecorderError> for Halt {
    fn from(_: RecorderError) -> Self {
        Halt::Recording
    }
}

impl From<InvokeError> for Halt {
    fn from(e: InvokeError) -> Self {
        match e {
            InvokeError::Recorder(_) => Halt::Recording,
            other => Halt::Reject(other.code().to_string()),
        }
    }
}

impl From<ChainError> for Halt {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::EmptyRoute => Halt::Reject("empty_route".into()),
            ChainError::Invoke { source, .. } => source.into(),
            ChainError::GuardrailAbort { reason, .. } => Halt::Reject(reason.as_str().into()),
            ChainError::Recorder(_) => Halt::Recording,
        }
    }
}

impl From<PlanError> for Halt {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Recorder(_) => Halt::Recording,
            other => Halt::Reject(other.code().to_string()),
        }
    }
}

fn reject_reason(v: &GuardrailVerdict) -> Option<ReasonCode> {
    v.reason_code.filter(|_| v.is_reject())
}

pub struct Pipeline {
    recorder: Arc<Recorder>,
    adapters: Arc<Adapters>,
    verifier: Verifier,
    contexts: ContextStore,
    stores: RwLock<Vec<Arc<RagStore>>>,
    policy: RwLock<Arc<Policy>>,
    requests: Mutex<HashMap<String, RequestRecord>>,
    next_context_id: AtomicU64,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("policy", &self.policy.read().to_string())
            .field("adapters", &self.adapters)
            .finish()
    }
}

impl Pipeline {
    pub fn new(recorder: Arc<Recorder>, adapters: Arc<Adapters>, policy: Policy) -> Self {
        Self {
            verifier: Verifier::new(recorder.clone()),
            recorder,
            adapters,
            contexts: ContextStore::default(),
            stores: RwLock::default(),
            policy: RwLock::new(Arc::new(policy)),
            requests: Mutex::default(),
            next_context_id: AtomicU64::new(1),
        }
    }

    pub fn recorder(&self) -> &Arc<Recorder> {
        &self.recorder
    }

    pub fn adapters(&self) -> &Arc<Adapters> {
        &self.adapters
    }

    pub fn registry(&self) -> &Arc<AibomRegistry> {
        self.adapters.registry()
    }

    pub fn verifier(&self) -> &Verifier {
        &self.verifier
    }

    pub fn policy(&self) -> Arc<Policy> {
        self.policy.read().clone()
    }

    /// Swaps the active policy and records a `config_loaded` event.
    pub fn set_policy(&self, policy: Policy) -> Result<(), RecorderError> {
        self.recorder.append(
            ACTOR,
            EventKind::ConfigLoaded,
            json!({
                "config": "policy",
                "policy_id": policy.id,
                "policy_version": policy.version,
                "digest": Digest32::of(&policy.to_canonical_json()),
            }),
        )?;
        *self.policy.write() = Arc::new(policy);
        Ok(())
    }

    pub fn add_rag_store(&self, store: Arc<RagStore>) {
        self.stores.write().push(store);
    }

    pub fn rag_stores(&self) -> Vec<Arc<RagStore>> {
        self.stores.read().clone()
    }

    pub fn rag_store(&self, id: &str) -> Option<Arc<RagStore>> {
        self.stores.read().iter().find(|s| s.id() == id).cloned()
    }

    /// Runs `request` under the active policy.
    pub fn handle(&self, request: &PromptRequest) -> GatewayResponse {
        let policy = self.policy();
        self.handle_request(request, &policy)
    }

    /// Runs the full pipeline. Failures surface as rejected responses.
    pub fn handle_request(&self, request: &PromptRequest, policy: &Policy) -> GatewayResponse {
        let id = request.request_id.as_str();
        let first_seq = {
            let mut requests = self.requests.lock();
            if requests.contains_key(id) {
                return GatewayResponse::rejected(id, "duplicate_request_id");
            }
            let first_seq = self.recorder.len();
            requests.insert(
                id.to_string(),
                RequestRecord {
                    principal: request.principal.clone(),
                    first_seq,
                    response: None,
                },
            );
            first_seq
        };

        let received = self.recorder.append(
            ACTOR,
            EventKind::RequestReceived,
            json!({
                "request_id": id,
                "principal": request.principal,
                "channel": "complete",
                "mode": request.mode,
                "template_id": request.template_id,
                "var_names": request.vars.keys().collect::<Vec<_>>(),
                "context_window": request.context_window,
                "policy_id": policy.id,
                "policy_version": policy.version,
            }),
        );
        let outcome = match received {
            Ok(_) => self.run(request, policy),
            Err(_) => Err(Halt::Recording),
        };
        let response = match outcome {
            Ok(Terminal::Hold(task_id)) => GatewayResponse::held(id, Some(task_id)),
            Ok(Terminal::Deliver(text)) => self.deliver(id, Ok(text)),
            Err(Halt::Reject(code)) => self.deliver(id, Err(code)),
            Err(Halt::Recording) => GatewayResponse::rejected(id, RECORDING_UNAVAILABLE),
        };

        let mut response = {
            let mut requests = self.requests.lock();
            let record = requests.get_mut(id).expect("request registered above");
            // A verdict may already have settled a held request.
            record.response.get_or_insert(response).clone()
        };
        if policy.disclose_trace {
            response.trace = Some(self.trace(id, first_seq));
        }
        response
    }

    fn run(&self, request: &PromptRequest, policy: &Policy) -> Result<Terminal, Halt> {
        let id = request.request_id.as_str();
        let template = policy
            .template(&request.template_id)
            .ok_or_else(|| Halt::Reject("unknown_template".into()))?;
        let mut prompt = render_prompt(template, &request.vars).map_err(|e| {
            Halt::Reject(
                match e {
                    TemplateError::MissingVariable(_) => "missing_variable",
                    TemplateError::ExtraVariable(_) => "extra_variable",
                }
                .into(),
            )
        })?;
        append_context_block(&mut prompt, &self.contexts.latest(&request.principal, request.context_window));

        let pre = guardrail::evaluate(Stage::Pre, &prompt, policy);
        self.record_verdict(id, Stage::Pre, &pre, None)?;
        if let Some(reason) = reject_reason(&pre) {
            return Err(Halt::Reject(reason.as_str().into()));
        }
        let mut prompt = pre.output_text;

        let assessment = risk::assess(&prompt, policy);
        let mut mode = policy.verifier_mode;
        if assessment.decision == RiskDecision::Escalate {
            mode = mode.max(VerifierMode::Rule);
        }
        self.recorder.append(
            "risk-assessor",
            EventKind::RiskAssessment,
            json!({
                "request_id": id,
                "score": assessment.score,
                "triggered": assessment.triggered,
                "decision": assessment.decision,
                "verifier_mode": mode.as_str(),
            }),
        )?;
        if assessment.decision == RiskDecision::Reject {
            return Err(Halt::Reject("risk_rejected".into()));
        }

        if policy.rag_enabled {
            prompt = self.with_references(id, prompt, policy)?;
        }

        let output = match request.mode {
            RequestMode::Simple => {
                let fm_request = FmRequest::new(prompt, policy.max_output_chars, id);
                match policy.fm_route.as_slice() {
                    [single] => self.adapters.invoke_redacting(single, &fm_request, Some(policy))?.text,
                    route => self.adapters.chain_invoke(route, &fm_request, policy)?.response.text,
                }
            }
            RequestMode::Goal => {
                let coordinator = policy.fm_route.first().ok_or_else(|| Halt::Reject("empty_route".into()))?;
                let plan = self.plan(&prompt, coordinator, id, policy)?;
                let results = self.execute_plan(&plan, policy, id)?;
                plan.sinks()?
                    .into_iter()
                    .map(|t| results[&t.task_id].as_str())
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        };

        let post = guardrail::evaluate(Stage::Post, &output, policy);
        self.record_verdict(id, Stage::Post, &post, None)?;
        if let Some(reason) = reject_reason(&post) {
            return Err(Halt::Reject(reason.as_str().into()));
        }

        match self.verifier.gate(&post.output_text, policy, id, mode)? {
            GateOutcome::Deliver(text) => Ok(Terminal::Deliver(text)),
            GateOutcome::Hold(task_id) => Ok(Terminal::Hold(task_id)),
            GateOutcome::Reject(reason) => Err(Halt::Reject(reason)),
        }
    }

    fn with_references(&self, request_id: &str, prompt: String, policy: &Policy) -> Result<String, RecorderError> {
        let stores = self.rag_stores();
        let refs: Vec<&RagStore> = stores.iter().map(Arc::as_ref).collect();
        let chunks = federated_retrieve(&refs, &prompt, policy.rag_top_k);
        self.recorder.append(
            "rag-store",
            EventKind::RagRetrieval,
            json!({"request_id": request_id, "top_k": policy.rag_top_k, "chunks": chunks}),
        )?;
        if chunks.is_empty() {
            return Ok(prompt);
        }
        let pii = &policy.compiled().pii;
        let mut block = String::from("Reference:\n");
        for c in &chunks {
            let text = stores
                .iter()
                .find(|s| s.id() == c.store_id)
                .and_then(|s| s.get(&c.doc_id))
                .map(|d| guardrail::redact_with(&d.text, pii).0)
                .unwrap_or_default();
            block.push_str(&format!("[{}/{}] {}\n", c.store_id, c.doc_id, text));
        }
        block.push_str(&prompt);
        Ok(block)
    }

    fn record_verdict(
        &self,
        request_id: &str,
        stage: Stage,
        verdict: &GuardrailVerdict,
        task_id: Option<&str>,
    ) -> Result<AuditEvent, RecorderError> {
        let mut payload = json!({
            "request_id": request_id,
            "stage": stage,
            "decision": verdict.decision,
            "reason_code": verdict.reason_code,
            "redactions": verdict.redactions,
            "output_text": verdict.output_text,
        });
        if let Some(t) = task_id {
            payload["task_id"] = json!(t);
        }
        self.recorder.append("guardrail", EventKind::GuardrailVerdict, payload)
    }

    /// Records `response_delivered`. A storage failure downgrades the
    /// response to `recording_unavailable`.
    fn deliver(&self, request_id: &str, outcome: Result<String, String>) -> GatewayResponse {
        self.try_deliver(request_id, outcome)
            .unwrap_or_else(|_| GatewayResponse::rejected(request_id, RECORDING_UNAVAILABLE))
    }

    fn try_deliver(&self, request_id: &str, outcome: Result<String, String>) -> Result<GatewayResponse, RecorderError> {
        let (payload, response) = match outcome {
            Ok(text) => (
                json!({"request_id": request_id, "status": "ok", "text": text}),
                GatewayResponse::ok(request_id, text),
            ),
            Err(code) => (
                json!({"request_id": request_id, "status": "rejected", "reason_code": code}),
                GatewayResponse::rejected(request_id, code),
            ),
        };
        self.recorder.append(ACTOR, EventKind::ResponseDelivered, payload)?;
        Ok(response)
    }

    /// Records an authenticated request refused before the pipeline ran,
    /// e.g. for quota or scope.
    pub fn record_refusal(
        &self,
        request_id: &str,
        principal: &str,
        channel: &str,
        code: &str,
    ) -> Result<(), RecorderError> {
        self.recorder.append(
            ACTOR,
            EventKind::RequestReceived,
            json!({"request_id": request_id, "principal": principal, "channel": channel}),
        )?;
        self.try_deliver(request_id, Err(code.to_string()))?;
        Ok(())
    }

    /// This request's audit events in seq order.
    pub fn trace(&self, request_id: &str, from_seq: u64) -> Vec<TraceStep> {
        let filter = AuditFilter {
            from_seq: Some(from_seq),
            ..AuditFilter::request(request_id)
        };
        self.recorder
            .query(&filter)
            .iter()
            .enumerate()
            .map(|(i, e)| TraceStep {
                step_no: i + 1,
                component: e.actor.clone(),
                summary: summarize(e),
                audit_seq: e.seq,
            })
            .collect()
    }

    /// Current state of a request, after settling any expired reviews.
    pub fn poll(&self, request_id: &str) -> Option<RequestState> {
        let _ = self.sweep_expired();
        let (principal, first_seq, response) = {
            let requests = self.requests.lock();
            let r = requests.get(request_id)?;
            let response = r
                .response
                .clone()
                .unwrap_or_else(|| GatewayResponse::held(request_id, None));
            (r.principal.clone(), r.first_seq, response)
        };
        let mut response = response;
        if self.policy().disclose_trace {
            response.trace = Some(self.trace(request_id, first_seq));
        }
        Some(RequestState { principal, response })
    }

    /// Expires overdue reviews and answers their requests with
    /// `verifier_timeout`. Returns how many were expired.
    pub fn sweep_expired(&self) -> Result<usize, RecorderError> {
        let expired = self.verifier.expire_overdue()?;
        for task in &expired {
            self.settle(task)?;
        }
        Ok(expired.len())
    }

    pub fn pending_reviews(&self, limit: usize) -> Vec<VerificationTask> {
        let _ = self.sweep_expired();
        self.verifier.poll_pending(limit)
    }

    /// Applies a human verdict and answers the held request.
    pub fn submit_verdict(
        &self,
        task_id: &str,
        verdict: &HumanVerdict,
        principal: &str,
    ) -> Result<VerificationTask, VerdictError> {
        self.sweep_expired()?;
        match self.verifier.human_verdict(task_id, verdict, principal) {
            Ok(task) => {
                self.settle(&task)?;
                Ok(task)
            }
            Err(VerdictError::Expired(id)) => {
                if let Some(task) = self.verifier.get(&id) {
                    self.settle(&task)?;
                }
                Err(VerdictError::Expired(id))
            }
            Err(e) => Err(e),
        }
    }

    /// Delivers or rejects the request behind a decided review task, once.
    fn settle(&self, task: &VerificationTask) -> Result<(), RecorderError> {
        let mut requests = self.requests.lock();
        let Some(record) = requests.get_mut(&task.request_id) else {
            return Ok(());
        };
        if record.response.as_ref().is_some_and(|r| r.status != ResponseStatus::Held) {
            return Ok(());
        }
        let outcome = match task.status {
            TaskStatus::Pending => return Ok(()),
            TaskStatus::Approved => Ok(task.candidate_text.clone()),
            TaskStatus::Edited => {
                let policy = self.policy();
                let edited = task.final_text.clone().unwrap_or_default();
                let verdict = guardrail::evaluate(Stage::Post, &edited, &policy);
                self.record_verdict(&task.request_id, Stage::Post, &verdict, None)?;
                match reject_reason(&verdict) {
                    Some(reason) => Err(reason.as_str().to_string()),
                    None => Ok(verdict.output_text),
                }
            }
            TaskStatus::Rejected => Err("verifier_rejected".to_string()),
            TaskStatus::Expired => Err("verifier_timeout".to_string()),
        };
        record.response = Some(self.try_deliver(&task.request_id, outcome)?);
        Ok(())
    }

    /// Stores a client context event and logs it with redacted content.
    pub fn ingest_context_event(
        &self,
        principal: &str,
        modality: Modality,
        content: String,
        event_id: Option<String>,
    ) -> Result<ContextEvent, ContextError> {
        let chars = content.chars().count();
        if chars > MAX_CONTENT_CHARS {
            return Err(ContextError::Oversize { chars });
        }
        let event_id =
            event_id.unwrap_or_else(|| format!("ctx-{:06}", self.next_context_id.fetch_add(1, Ordering::SeqCst)));
        let policy = self.policy();
        let logged = guardrail::redact_with(&content, &policy.compiled().pii).0;
        self.recorder.append(
            ACTOR,
            EventKind::RequestReceived,
            json!({
                "channel": "context",
                "event_id": event_id,
                "principal": principal,
                "modality": modality,
                "content": logged,
            }),
        )?;
        let event = ContextEvent {
            event_id,
            principal: principal.to_string(),
            modality,
            content,
            received_at: self.recorder.clock().now(),
        };
        self.contexts.push(event.clone());
        Ok(event)
    }

    /// Asks the coordinator for a plan for `goal`.
    pub fn plan(&self, goal: &str, coordinator_fm_id: &str, request_id: &str, policy: &Policy) -> Result<TaskPlan, PlanError> {
        let request = FmRequest::new(planning_prompt(goal), policy.max_output_chars, request_id);
        let response = self
            .adapters
            .invoke_redacting(coordinator_fm_id, &request, Some(policy))
            .map_err(|source| match source {
                InvokeError::Recorder(e) => PlanError::Recorder(e),
                source => PlanError::Invoke {
                    task_id: "plan".into(),
                    source,
                },
            })?;
        TaskPlan::parse(&response.text)
    }

    /// Routes and AIBOM-checks every task up front, then runs them in
    /// deterministic topological order.
    pub fn execute_plan(
        &self,
        plan: &TaskPlan,
        policy: &Policy,
        request_id: &str,
    ) -> Result<BTreeMap<String, String>, PlanError> {
        let order = plan.topo_order()?;
        self.recorder.append(
            ACTOR,
            EventKind::PlanCreated,
            json!({"request_id": request_id, "tasks": plan}),
        )?;

        let mut workers = BTreeMap::new();
        let mut failure = None;
        for &i in &order {
            let task = &plan.tasks[i];
            let Some(fm_id) = self.adapters.route(&task.capability) else {
                failure.get_or_insert(PlanError::UnroutableCapability(task.task_id.clone()));
                continue;
            };
            let version = self.adapters.descriptor(&fm_id).map(|d| d.model_version).unwrap_or_default();
            if self.registry().enforce(&fm_id, &version, Some(request_id))? == Enforcement::Refused {
                failure.get_or_insert(PlanError::AibomRefused(task.task_id.clone()));
            }
            workers.insert(task.task_id.clone(), fm_id);
        }
        if let Some(e) = failure {
            return Err(e);
        }

        let mut results = BTreeMap::new();
        for &i in &order {
            let task = &plan.tasks[i];
            let fm_id = &workers[&task.task_id];
            let request = FmRequest::new(task_prompt(task, &results), policy.max_output_chars, request_id);
            let response = self
                .adapters
                .invoke_redacting(fm_id, &request, Some(policy))
                .map_err(|source| match source {
                    InvokeError::Recorder(e) => PlanError::Recorder(e),
                    source => PlanError::Invoke {
                        task_id: task.task_id.clone(),
                        source,
                    },
                })?;
            let verdict = guardrail::evaluate(Stage::Mid, &response.text, policy);
            self.record_verdict(request_id, Stage::Mid, &verdict, Some(&task.task_id))?;
            if let Some(reason) = reject_reason(&verdict) {
                return Err(PlanError::GuardrailAbort {
                    task_id: task.task_id.clone(),
                    reason,
                });
            }
            self.recorder.append(
                ACTOR,
                EventKind::TaskResult,
                json!({
                    "request_id": request_id,
                    "task_id": task.task_id,
                    "fm_id": fm_id,
                    "text": verdict.output_text,
                }),
            )?;
            results.insert(task.task_id.clone(), verdict.output_text);
        }
        Ok(results)
    }
}

fn summarize(e: &AuditEvent) -> String {
    let p = e.payload_json();
    let s = |k: &str| p.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    match e.kind {
        EventKind::RequestReceived => format!("request received for template {}", s("template_id")),
        EventKind::GuardrailVerdict => match p.get("reason_code").and_then(Value::as_str) {
            Some(reason) => format!("{} guardrail: {} ({reason})", s("stage"), s("decision")),
            None => format!("{} guardrail: {}", s("stage"), s("decision")),
        },
        EventKind::RiskAssessment => format!("risk score {} gives {}", p["score"], s("decision")),
        EventKind::RagRetrieval => {
            let n = p.get("chunks").and_then(Value::as_array).map_or(0, Vec::len);
            format!("retrieved {n} reference chunks")
        }
        EventKind::FmCall => format!("called {}", s("fm_id")),
        EventKind::FmResponse if p["ok"] == json!(true) => format!("response from {}", s("fm_id")),
        EventKind::FmResponse => format!("{} failed", s("fm_id")),
        EventKind::PlanCreated => {
            let n = p.get("tasks").and_then(Value::as_array).map_or(0, Vec::len);
            format!("plan with {n} tasks")
        }
        EventKind::TaskResult => format!("task {} completed by {}", s("task_id"), s("fm_id")),
        EventKind::VerifierSubmitted => format!("held for review as {}", s("task_id")),
        EventKind::VerifierVerdict => format!("verifier verdict: {}", s("verdict")),
        EventKind::ResponseDelivered => match p.get("reason_code").and_then(Value::as_str) {
            Some(reason) => format!("response {} ({reason})", s("status")),
            None => format!("response {}", s("status")),
        },
        EventKind::ToolRefusedAibom => format!("refused {} {}: no AIBOM", s("component_id"), s("version")),
        EventKind::ConfigLoaded => "configuration loaded".to_string(),
    }
}
