//! Standardised stakeholder report aggregated from the audit log.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::{format_millis, parse_rfc3339};
use crate::recorder::{AuditEvent, EventKind};

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub requests: u64,
    pub delivered: u64,
    pub rejected_by_reason: BTreeMap<String, u64>,
    pub rejected_total: u64,
    pub held: u64,
    pub verifier_overrides: u64,
    pub risk_score_histogram: [u64; HISTOGRAM_BINS],
    pub fm_calls_by_fm_id: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub period: Period,
    pub totals: Totals,
    pub generated_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_notes: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReportError {
    #[error("period start must not be after its end")]
    Range,
    #[error("event {0} has an unparseable timestamp")]
    Timestamp(u64),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::Range => "invalid_period",
            ReportError::Timestamp(_) => "corrupt_log",
        }
    }
}

/// Bin `i` covers `[i/10, (i+1)/10)`; a score of 1 falls in the last bin.
pub fn histogram_bin(score: f64) -> usize {
    ((score * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1)
}

/// Aggregates the events whose timestamp lies in `[start, end)`.
///
/// A request counts if its `request_received` (completion channel) is in the
/// period. It is delivered or rejected by its last `response_delivered` in
/// the period, and held otherwise.
pub fn generate_report(
    events: &[AuditEvent],
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    generated_at: DateTime<Utc>,
    process_notes: Option<String>,
) -> Result<Report, ReportError> {
    if start > end {
        return Err(ReportError::Range);
    }
    let mut totals = Totals::default();
    let mut requests = BTreeSet::new();
    let mut outcome: BTreeMap<String, Result<(), String>> = BTreeMap::new();

    for e in events {
        let t = parse_rfc3339(&e.timestamp_utc).ok_or(ReportError::Timestamp(e.seq))?;
        if t < start || t >= end {
            continue;
        }
        let p = e.payload_json();
        let s = |k: &str| p.get(k).and_then(Value::as_str);
        match e.kind {
            EventKind::RequestReceived if s("channel") == Some("complete") => {
                if let Some(id) = s("request_id") {
                    requests.insert(id.to_string());
                }
            }
            EventKind::ResponseDelivered => {
                if let Some(id) = s("request_id") {
                    let result = match s("status") {
                        Some("ok") => Ok(()),
                        _ => Err(s("reason_code").unwrap_or("unknown").to_string()),
                    };
                    outcome.insert(id.to_string(), result);
                }
            }
            EventKind::VerifierVerdict
                if s("mode") == Some("human") && matches!(s("verdict"), Some("edit" | "reject")) =>
            {
                totals.verifier_overrides += 1;
            }
            EventKind::RiskAssessment => {
                if let Some(score) = p.get("score").and_then(Value::as_f64) {
                    totals.risk_score_histogram[histogram_bin(score)] += 1;
                }
            }
            EventKind::FmCall => {
                if let Some(fm) = s("fm_id") {
                    *totals.fm_calls_by_fm_id.entry(fm.to_string()).or_default() += 1;
                }
            }
            _ => {}
        }
    }

    totals.requests = requests.len() as u64;
    for id in &requests {
        match outcome.get(id) {
            Some(Ok(())) => totals.delivered += 1,
            Some(Err(reason)) => {
                *totals.rejected_by_reason.entry(reason.clone()).or_default() += 1;
                totals.rejected_total += 1;
            }
            None => totals.held += 1,
        }
    }

    Ok(Report {
        period: Period {
            start: format_millis(start),
            end: format_millis(end),
        },
        totals,
        generated_at: format_millis(generated_at),
        process_notes,
    })
}
