//! Verification gate between model output and delivery.
//!
//! `automatic` passes output straight through, `rule` runs a fixed check
//! set, and `human` parks the candidate in a review queue until a verdict
//! arrives or the deadline passes.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::clock::format_millis;
use crate::guardrail::ReasonCode;
use crate::policy::{Policy, VerifierMode};
use crate::recorder::{EventKind, Recorder, RecorderError};

const ACTOR: &str = "verifier";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Approved,
    Edited,
    Rejected,
    Expired,
}

impl TaskStatus {
    pub fn is_terminal(&self) -> bool {
        *self != TaskStatus::Pending
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskStatus::Pending => "pending",
            TaskStatus::Approved => "approved",
            TaskStatus::Edited => "edited",
            TaskStatus::Rejected => "rejected",
            TaskStatus::Expired => "expired",
        }
    }
}

mod millis {
    use chrono::{DateTime, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::clock::format_millis(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        crate::clock::parse_rfc3339(&raw).ok_or_else(|| serde::de::Error::custom("bad timestamp"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationTask {
    pub task_id: String,
    pub request_id: String,
    pub candidate_text: String,
    #[serde(with = "millis")]
    pub created_at: DateTime<Utc>,
    #[serde(with = "millis")]
    pub deadline: DateTime<Utc>,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateOutcome {
    Deliver(String),
    Hold(String),
    Reject(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "lowercase", deny_unknown_fields)]
pub enum HumanVerdict {
    Approve,
    Edit { new_text: String },
    Reject { reason: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerdictError {
    #[error("unknown verification task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` already has a verdict")]
    AlreadyDecided(String),
    #[error("task `{0}` expired before a verdict arrived")]
    Expired(String),
    #[error("edited text must differ from the candidate")]
    UnchangedEdit,
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

impl VerdictError {
    pub fn code(&self) -> &'static str {
        match self {
            VerdictError::UnknownTask(_) => "unknown_task",
            VerdictError::AlreadyDecided(_) => "already_decided",
            VerdictError::Expired(_) => "expired",
            VerdictError::UnchangedEdit => "unchanged_edit",
            VerdictError::Recorder(_) => "recording_unavailable",
        }
    }
}

/// Fixed rule set used in `rule` mode. Returns the first failing reason.
pub fn rule_check(candidate: &str, policy: &Policy) -> Option<ReasonCode> {
    let compiled = policy.compiled();
    let lowered = candidate.to_lowercase();
    if compiled.blacklist.matches_lowered(&lowered) {
        return Some(ReasonCode::BlacklistedTerm);
    }
    if !compiled.whitelist.is_empty() && !compiled.whitelist.matches_lowered(&lowered) {
        return Some(ReasonCode::OffTopic);
    }
    if candidate.chars().count() > policy.max_output_chars {
        return Some(ReasonCode::FormatViolation);
    }
    None
}

pub struct Verifier {
    tasks: Mutex<BTreeMap<String, VerificationTask>>,
    next_id: AtomicU64,
    recorder: Arc<Recorder>,
}

impl std::fmt::Debug for Verifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Verifier").field("tasks", &self.tasks.lock().len()).finish()
    }
}

impl Verifier {
    pub fn new(recorder: Arc<Recorder>) -> Self {
        Self {
            tasks: Mutex::default(),
            next_id: AtomicU64::new(1),
            recorder,
        }
    }

    fn now(&self) -> DateTime<Utc> {
        self.recorder.clock().now()
    }

    /// `mode` may be stricter than the policy's own mode when risk escalated.
    pub fn gate(
        &self,
        candidate: &str,
        policy: &Policy,
        request_id: &str,
        mode: VerifierMode,
    ) -> Result<GateOutcome, RecorderError> {
        match mode {
            VerifierMode::Automatic => Ok(GateOutcome::Deliver(candidate.to_string())),
            VerifierMode::Rule => {
                let failed = rule_check(candidate, policy);
                self.recorder.append(
                    ACTOR,
                    EventKind::VerifierVerdict,
                    json!({
                        "request_id": request_id,
                        "mode": "rule",
                        "verdict": if failed.is_some() { "reject" } else { "approve" },
                        "reason": failed.map(|r| r.as_str()),
                    }),
                )?;
                Ok(match failed {
                    Some(reason) => GateOutcome::Reject(reason.as_str().to_string()),
                    None => GateOutcome::Deliver(candidate.to_string()),
                })
            }
            VerifierMode::Human => {
                let mut tasks = self.tasks.lock();
                let created_at = self.now();
                let deadline = i64::try_from(policy.human_verdict_timeout_s)
                    .ok()
                    .and_then(Duration::try_seconds)
                    .and_then(|d| created_at.checked_add_signed(d))
                    .unwrap_or(DateTime::<Utc>::MAX_UTC);
                let task_id = format!("vt-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
                self.recorder.append(
                    ACTOR,
                    EventKind::VerifierSubmitted,
                    json!({
                        "request_id": request_id,
                        "task_id": task_id,
                        "candidate_text": candidate,
                        "deadline": format_millis(deadline),
                    }),
                )?;
                tasks.insert(
                    task_id.clone(),
                    VerificationTask {
                        task_id: task_id.clone(),
                        request_id: request_id.to_string(),
                        candidate_text: candidate.to_string(),
                        created_at,
                        deadline,
                        status: TaskStatus::Pending,
                        verdict_by: None,
                        final_text: None,
                        reason: None,
                    },
                );
                Ok(GateOutcome::Hold(task_id))
            }
        }
    }

    /// Applies a human verdict. The first verdict wins; a verdict arriving at
    /// or after the deadline expires the task instead.
    pub fn human_verdict(
        &self,
        task_id: &str,
        verdict: &HumanVerdict,
        principal: &str,
    ) -> Result<VerificationTask, VerdictError> {
        let mut tasks = self.tasks.lock();
        let task = tasks
            .get_mut(task_id)
            .ok_or_else(|| VerdictError::UnknownTask(task_id.to_string()))?;
        match task.status {
            TaskStatus::Pending => {}
            TaskStatus::Expired => return Err(VerdictError::Expired(task_id.to_string())),
            _ => return Err(VerdictError::AlreadyDecided(task_id.to_string())),
        }
        if self.now() >= task.deadline {
            self.expire_locked(task)?;
            return Err(VerdictError::Expired(task_id.to_string()));
        }
        let (status, final_text, reason) = match verdict {
            HumanVerdict::Approve => (TaskStatus::Approved, Some(task.candidate_text.clone()), None),
            HumanVerdict::Edit { new_text } if *new_text == task.candidate_text => {
                return Err(VerdictError::UnchangedEdit)
            }
            HumanVerdict::Edit { new_text } => (TaskStatus::Edited, Some(new_text.clone()), None),
            HumanVerdict::Reject { reason } => (TaskStatus::Rejected, None, Some(reason.clone())),
        };
        self.recorder.append(
            ACTOR,
            EventKind::VerifierVerdict,
            json!({
                "request_id": task.request_id,
                "task_id": task.task_id,
                "mode": "human",
                "verdict": match status {
                    TaskStatus::Approved => "approve",
                    TaskStatus::Edited => "edit",
                    _ => "reject",
                },
                "principal": principal,
                "final_text": final_text,
                "reason": reason,
            }),
        )?;
        task.status = status;
        task.verdict_by = Some(principal.to_string());
        task.final_text = final_text;
        task.reason = reason;
        Ok(task.clone())
    }

    fn expire_locked(&self, task: &mut VerificationTask) -> Result<(), RecorderError> {
        self.recorder.append(
            ACTOR,
            EventKind::VerifierVerdict,
            json!({
                "request_id": task.request_id,
                "task_id": task.task_id,
                "mode": "human",
                "verdict": "expired",
            }),
        )?;
        task.status = TaskStatus::Expired;
        Ok(())
    }

    /// Expires every pending task whose deadline has passed and returns them.
    pub fn expire_overdue(&self) -> Result<Vec<VerificationTask>, RecorderError> {
        let now = self.now();
        let mut tasks = self.tasks.lock();
        let mut expired = Vec::new();
        for task in tasks.values_mut() {
            if task.status == TaskStatus::Pending && now >= task.deadline {
                self.expire_locked(task)?;
                expired.push(task.clone());
            }
        }
        Ok(expired)
    }

    /// Pending, unexpired tasks, oldest first.
    pub fn poll_pending(&self, limit: usize) -> Vec<VerificationTask> {
        let now = self.now();
        let mut pending: Vec<VerificationTask> = self
            .tasks
            .lock()
            .values()
            .filter(|t| t.status == TaskStatus::Pending && t.deadline > now)
            .cloned()
            .collect();
        pending.sort_by(|a, b| (a.created_at, &a.task_id).cmp(&(b.created_at, &b.task_id)));
        pending.truncate(limit);
        pending
    }

    pub fn get(&self, task_id: &str) -> Option<VerificationTask> {
        self.tasks.lock().get(task_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.tasks.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[cfg(test)]
    fn insert_raw(&self, task: VerificationTask) {
        self.tasks.lock().insert(task.task_id.clone(), task);
    }
}
