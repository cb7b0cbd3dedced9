//! Black-box recorder: an append-only, hash-chained, timestamped log of
//! every input, output and intermediate step.
//!
//! Each event hashes as
//! `SHA-256(seq_be8 ‖ timestamp_utc ‖ kind ‖ payload_digest ‖ prev_hash)`,
//! with `prev_hash` of the genesis event set to 32 zero bytes. The recorder
//! stamps `actor` and `location` into the payload object as well, so that
//! those two fields are covered by `payload_digest`.

pub mod storage;

use std::ops::Range;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::canonical;
use crate::clock::{format_millis, Clock};
use crate::digest::Digest32;
use storage::{decode_records, encode_record, DecodeError, Storage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RequestReceived,
    GuardrailVerdict,
    RiskAssessment,
    RagRetrieval,
    FmCall,
    FmResponse,
    PlanCreated,
    TaskResult,
    VerifierSubmitted,
    VerifierVerdict,
    ResponseDelivered,
    ToolRefusedAibom,
    ConfigLoaded,
}

impl EventKind {
    pub const ALL: [EventKind; 13] = [
        EventKind::RequestReceived,
        EventKind::GuardrailVerdict,
        EventKind::RiskAssessment,
        EventKind::RagRetrieval,
        EventKind::FmCall,
        EventKind::FmResponse,
        EventKind::PlanCreated,
        EventKind::TaskResult,
        EventKind::VerifierSubmitted,
        EventKind::VerifierVerdict,
        EventKind::ResponseDelivered,
        EventKind::ToolRefusedAibom,
        EventKind::ConfigLoaded,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::RequestReceived => "request_received",
            EventKind::GuardrailVerdict => "guardrail_verdict",
            EventKind::RiskAssessment => "risk_assessment",
            EventKind::RagRetrieval => "rag_retrieval",
            EventKind::FmCall => "fm_call",
            EventKind::FmResponse => "fm_response",
            EventKind::PlanCreated => "plan_created",
            EventKind::TaskResult => "task_result",
            EventKind::VerifierSubmitted => "verifier_submitted",
            EventKind::VerifierVerdict => "verifier_verdict",
            EventKind::ResponseDelivered => "response_delivered",
            EventKind::ToolRefusedAibom => "tool_refused_aibom",
            EventKind::ConfigLoaded => "config_loaded",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        Self::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp_utc: String,
    pub location: String,
    pub actor: String,
    pub kind: EventKind,
    /// Canonical JSON bytes.
    pub payload: Vec<u8>,
    pub payload_digest: Digest32,
    pub prev_hash: Digest32,
    pub hash: Digest32,
}

pub fn compute_hash(
    seq: u64,
    timestamp_utc: &str,
    kind: EventKind,
    payload_digest: &Digest32,
    prev_hash: &Digest32,
) -> Digest32 {
    let mut h = Sha256::new();
    h.update(seq.to_be_bytes());
    h.update(timestamp_utc.as_bytes());
    h.update(kind.as_str().as_bytes());
    h.update(payload_digest.0);
    h.update(prev_hash.0);
    Digest32(h.finalize().into())
}

impl AuditEvent {
    pub fn payload_json(&self) -> Value {
        serde_json::from_slice(&self.payload).unwrap_or(Value::Null)
    }

    pub fn request_id(&self) -> Option<String> {
        match self.payload_json().get("request_id") {
            Some(Value::String(s)) => Some(s.clone()),
            _ => None,
        }
    }

    fn recomputed_hash(&self) -> Digest32 {
        compute_hash(self.seq, &self.timestamp_utc, self.kind, &self.payload_digest, &self.prev_hash)
    }

    /// Field-local integrity: digest, stamped envelope and own hash.
    fn self_consistent(&self) -> bool {
        if self.recomputed_hash() != self.hash || Digest32::of(&self.payload) != self.payload_digest {
            return false;
        }
        #[derive(Deserialize)]
        struct Envelope<'a> {
            #[serde(borrow)]
            actor: std::borrow::Cow<'a, str>,
            #[serde(borrow)]
            location: std::borrow::Cow<'a, str>,
        }
        match serde_json::from_slice::<Envelope>(&self.payload) {
            Ok(env) => env.actor == self.actor && env.location == self.location,
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Ok,
    FirstBadSeq { seq: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecorderError {
    #[error("audit storage failure: {0}")]
    Storage(String),
    #[error("seq range {from}..={to} is outside the log (len {len})")]
    Range { from: u64, to: u64, len: u64 },
    #[error("existing audit log is corrupt at seq {0}")]
    Corrupt(u64),
    #[error("bad export line {line}: {reason}")]
    Import { line: usize, reason: String },
}

/// Verifies `events[from..=to]`; `events` must be the log from seq 0.
pub fn verify_events(events: &[AuditEvent], from: u64, to: u64) -> Result<ChainStatus, RecorderError> {
    let len = events.len() as u64;
    if from > to || to >= len {
        return Err(RecorderError::Range { from, to, len });
    }
    for i in from..=to {
        let e = &events[i as usize];
        let expected_prev = if i == 0 { Digest32::ZERO } else { events[i as usize - 1].hash };
        if e.seq != i || e.prev_hash != expected_prev || !e.self_consistent() {
            return Ok(ChainStatus::FirstBadSeq { seq: i });
        }
    }
    Ok(ChainStatus::Ok)
}

pub fn verify_all(events: &[AuditEvent]) -> ChainStatus {
    if events.is_empty() {
        return ChainStatus::Ok;
    }
    verify_events(events, 0, events.len() as u64 - 1).expect("full range is valid")
}

/// Decodes a raw storage image and verifies it. A record that cannot be
/// decoded counts as bad at its position.
pub fn verify_storage_bytes(bytes: &[u8]) -> ChainStatus {
    let (events, err) = decode_records(bytes);
    match verify_all(&events) {
        ChainStatus::Ok => match err {
            Some(DecodeError { index, .. }) => ChainStatus::FirstBadSeq { seq: index },
            None => ChainStatus::Ok,
        },
        bad => bad,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EventKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    /// Inclusive lower seq bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_seq: Option<u64>,
    /// Inclusive upper seq bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_seq: Option<u64>,
}

impl AuditFilter {
    pub fn kind(kind: EventKind) -> Self {
        Self { kind: Some(kind), ..Self::default() }
    }

    pub fn request(request_id: impl Into<String>) -> Self {
        Self { request_id: Some(request_id.into()), ..Self::default() }
    }

    pub fn matches(&self, e: &AuditEvent) -> bool {
        self.kind.is_none_or(|k| k == e.kind)
            && self.actor.as_ref().is_none_or(|a| *a == e.actor)
            && self.from_seq.is_none_or(|f| e.seq >= f)
            && self.to_seq.is_none_or(|t| e.seq <= t)
            && self
                .request_id
                .as_ref()
                .is_none_or(|r| e.request_id().as_deref() == Some(r.as_str()))
    }
}

/// JSON Lines export shape. Keys serialize in sorted order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportedEvent {
    actor: String,
    hash: Digest32,
    kind: EventKind,
    location: String,
    payload: Value,
    payload_digest: Digest32,
    prev_hash: Digest32,
    seq: u64,
    timestamp_utc: String,
}

pub fn export_events(events: &[AuditEvent]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in events {
        let line = ExportedEvent {
            actor: e.actor.clone(),
            hash: e.hash,
            kind: e.kind,
            location: e.location.clone(),
            payload: e.payload_json(),
            payload_digest: e.payload_digest,
            prev_hash: e.prev_hash,
            seq: e.seq,
            timestamp_utc: e.timestamp_utc.clone(),
        };
        out.extend(canonical::to_vec(&line));
        out.push(b'\n');
    }
    out
}

/// Parses a JSON Lines export back into events.
pub fn import_jsonl(bytes: &[u8]) -> Result<Vec<AuditEvent>, RecorderError> {
    let text = std::str::from_utf8(bytes).map_err(|e| RecorderError::Import { line: 0, reason: e.to_string() })?;
    let mut events = Vec::new();
    for (i, line) in text.split_terminator('\n').enumerate() {
        let x: ExportedEvent = serde_json::from_str(line)
            .map_err(|e| RecorderError::Import { line: i + 1, reason: e.to_string() })?;
        events.push(AuditEvent {
            seq: x.seq,
            timestamp_utc: x.timestamp_utc,
            location: x.location,
            actor: x.actor,
            kind: x.kind,
            payload: canonical::to_vec(&x.payload),
            payload_digest: x.payload_digest,
            prev_hash: x.prev_hash,
            hash: x.hash,
        });
    }
    Ok(events)
}

/// The single serialization point for audit appends.
pub struct Recorder {
    writer: Mutex<Box<dyn Storage>>,
    events: RwLock<Vec<AuditEvent>>,
    clock: Arc<dyn Clock>,
    location: String,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder")
            .field("location", &self.location)
            .field("len", &self.len())
            .finish()
    }
}

impl Recorder {
    /// Opens a recorder over `storage`, replaying and verifying any records
    /// already present.
    pub fn open(
        storage: Box<dyn Storage>,
        clock: Arc<dyn Clock>,
        location: impl Into<String>,
    ) -> Result<Self, RecorderError> {
        let bytes = storage.read_all().map_err(|e| RecorderError::Storage(e.to_string()))?;
        if let ChainStatus::FirstBadSeq { seq } = verify_storage_bytes(&bytes) {
            return Err(RecorderError::Corrupt(seq));
        }
        let (events, _) = decode_records(&bytes);
        Ok(Self {
            writer: Mutex::new(storage),
            events: RwLock::new(events),
            clock,
            location: location.into(),
        })
    }

    pub fn in_memory(clock: Arc<dyn Clock>, location: impl Into<String>) -> Self {
        Self::open(Box::new(storage::MemoryStorage::new()), clock, location)
            .expect("empty storage opens")
    }

    pub fn location(&self) -> &str {
        &self.location
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    /// Appends an event. `payload` should be a JSON object; anything else is
    /// wrapped as `{"data": payload}`. The event is durable when this returns.
    pub fn append(&self, actor: &str, kind: EventKind, payload: Value) -> Result<AuditEvent, RecorderError> {
        let mut map = match payload {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert("data".into(), other);
                m
            }
        };
        map.insert("actor".into(), Value::String(actor.to_string()));
        map.insert("location".into(), Value::String(self.location.clone()));
        let payload = canonical::to_vec(&Value::Object(map));

        let mut writer = self.writer.lock();
        let (seq, prev_hash) = {
            let events = self.events.read();
            events
                .last()
                .map_or((0, Digest32::ZERO), |e| (e.seq + 1, e.hash))
        };
        let timestamp_utc = format_millis(self.clock.now());
        let payload_digest = Digest32::of(&payload);
        let hash = compute_hash(seq, &timestamp_utc, kind, &payload_digest, &prev_hash);
        let event = AuditEvent {
            seq,
            timestamp_utc,
            location: self.location.clone(),
            actor: actor.to_string(),
            kind,
            payload,
            payload_digest,
            prev_hash,
            hash,
        };
        writer
            .append(&encode_record(&event))
            .map_err(|e| RecorderError::Storage(e.to_string()))?;
        self.events.write().push(event.clone());
        Ok(event)
    }

    pub fn len(&self) -> u64 {
        self.events.read().len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, seq: u64) -> Option<AuditEvent> {
        self.events.read().get(seq as usize).cloned()
    }

    /// A consistent prefix of the log.
    pub fn snapshot(&self) -> Vec<AuditEvent> {
        self.events.read().clone()
    }

    pub fn verify_chain(&self, from_seq: u64, to_seq: u64) -> Result<ChainStatus, RecorderError> {
        verify_events(&self.events.read(), from_seq, to_seq)
    }

    pub fn verify_all(&self) -> ChainStatus {
        verify_all(&self.events.read())
    }

    /// Matching events in ascending seq order.
    pub fn query(&self, filter: &AuditFilter) -> Vec<AuditEvent> {
        let events = self.events.read();
        let start = filter.from_seq.map_or(0, |f| f.min(events.len() as u64) as usize);
        events[start..].iter().filter(|e| filter.matches(e)).cloned().collect()
    }

    /// JSON Lines export of the half-open seq range.
    pub fn export_jsonl(&self, range: Range<u64>) -> Result<Vec<u8>, RecorderError> {
        let events = self.events.read();
        let len = events.len() as u64;
        if range.start > range.end || range.end > len {
            return Err(RecorderError::Range {
                from: range.start,
                to: range.end,
                len,
            });
        }
        Ok(export_events(&events[range.start as usize..range.end as usize]))
    }
}
