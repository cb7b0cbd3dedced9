//! Per-key sliding-window request quotas.

use std::collections::{HashMap, VecDeque};

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;

pub const WINDOW_SECS: i64 = 3600;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuotaDecision {
    Allowed,
    Exceeded,
}

/// A request at `t` counts against the quota while `now - t < window`.
#[derive(Debug)]
pub struct QuotaTracker {
    window: Duration,
    hits: Mutex<HashMap<String, VecDeque<DateTime<Utc>>>>,
}

impl Default for QuotaTracker {
    fn default() -> Self {
        Self::with_window(Duration::seconds(WINDOW_SECS))
    }
}

impl QuotaTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_window(window: Duration) -> Self {
        Self {
            window,
            hits: Mutex::default(),
        }
    }

    fn prune(&self, hits: &mut VecDeque<DateTime<Utc>>, now: DateTime<Utc>) {
        while hits.front().is_some_and(|&t| now - t >= self.window) {
            hits.pop_front();
        }
    }

    pub fn count(&self, key_id: &str, now: DateTime<Utc>) -> usize {
        let mut map = self.hits.lock();
        let Some(hits) = map.get_mut(key_id) else {
            return 0;
        };
        self.prune(hits, now);
        hits.len()
    }

    /// Admits and counts the request if the key is under `limit`.
    pub fn try_acquire(&self, key_id: &str, limit: u32, now: DateTime<Utc>) -> QuotaDecision {
        let mut map = self.hits.lock();
        let hits = map.entry(key_id.to_string()).or_default();
        self.prune(hits, now);
        if hits.len() >= limit as usize {
            return QuotaDecision::Exceeded;
        }
        hits.push_back(now);
        QuotaDecision::Allowed
    }
}
