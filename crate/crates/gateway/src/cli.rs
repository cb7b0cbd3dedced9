//! Offline operator commands over an audit store file.

use std::ops::Range;
use std::path::Path;

use anyhow::{bail, Context};
use chrono::{DateTime, Utc};
use fmgate_core::clock::parse_rfc3339;
use fmgate_core::recorder::storage::decode_records;
use fmgate_core::recorder::{export_events, verify_all, verify_events, ChainStatus};
use fmgate_core::report::{generate_report, Report};
use fmgate_core::AuditEvent;

/// Parses `a..b`, `a..`, `..b` or `..` into a half-open seq range over a log
/// of `len` events.
pub fn parse_range(s: &str, len: u64) -> anyhow::Result<Range<u64>> {
    let (a, b) = s.split_once("..").with_context(|| format!("range `{s}` must look like a..b"))?;
    let bound = |t: &str, default: u64| -> anyhow::Result<u64> {
        if t.is_empty() {
            Ok(default)
        } else {
            t.parse().with_context(|| format!("bad range bound `{t}`"))
        }
    };
    let (start, end) = (bound(a, 0)?, bound(b, len)?);
    if start > end || end > len {
        bail!("range {start}..{end} is outside the log (len {len})");
    }
    Ok(start..end)
}

/// Parses `START/END`, both RFC 3339.
pub fn parse_period(s: &str) -> anyhow::Result<(DateTime<Utc>, DateTime<Utc>)> {
    let (a, b) = s.split_once('/').with_context(|| format!("period `{s}` must look like START/END"))?;
    let t = |x: &str| parse_rfc3339(x).with_context(|| format!("`{x}` is not an RFC 3339 timestamp"));
    Ok((t(a)?, t(b)?))
}

/// Reads every decodable record. A trailing undecodable record is reported
/// by [`verify_store`], not here.
pub fn load_events(store: &Path) -> anyhow::Result<Vec<AuditEvent>> {
    let bytes = std::fs::read(store).with_context(|| format!("reading {}", store.display()))?;
    Ok(decode_records(&bytes).0)
}

/// Verifies the whole store, or an inclusive sub-range given as `a..b`.
pub fn verify_store(store: &Path, range: Option<&str>) -> anyhow::Result<ChainStatus> {
    let bytes = std::fs::read(store).with_context(|| format!("reading {}", store.display()))?;
    let (events, err) = decode_records(&bytes);
    let Some(range) = range else {
        return Ok(match (verify_all(&events), err) {
            (ChainStatus::Ok, Some(e)) => ChainStatus::FirstBadSeq { seq: e.index },
            (status, _) => status,
        });
    };
    let r = parse_range(range, events.len() as u64)?;
    if r.is_empty() {
        return Ok(ChainStatus::Ok);
    }
    Ok(verify_events(&events, r.start, r.end - 1)?)
}

pub fn export_store(store: &Path, range: &str) -> anyhow::Result<Vec<u8>> {
    let events = load_events(store)?;
    let r = parse_range(range, events.len() as u64)?;
    Ok(export_events(&events[r.start as usize..r.end as usize]))
}

pub fn report_store(store: &Path, period: &str, notes: Option<String>, now: DateTime<Utc>) -> anyhow::Result<Report> {
    let events = load_events(store)?;
    let (start, end) = parse_period(period)?;
    Ok(generate_report(&events, start, end, now, notes)?)
}
