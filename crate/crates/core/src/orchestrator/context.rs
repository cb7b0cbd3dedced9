//! Proactive context events posted by clients, kept per principal.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

pub const MAX_CONTENT_CHARS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TextNote,
    Click,
    Annotation,
    Typing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEvent {
    pub event_id: String,
    pub principal: String,
    pub modality: Modality,
    pub content: String,
    #[serde(serialize_with = "ser_millis")]
    pub received_at: DateTime<Utc>,
}

fn ser_millis<S: serde::Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&crate::clock::format_millis(*t))
}

#[derive(Debug, Default)]
pub struct ContextStore {
    by_principal: RwLock<HashMap<String, Vec<ContextEvent>>>,
}

impl ContextStore {
    pub fn push(&self, event: ContextEvent) {
        self.by_principal
            .write()
            .entry(event.principal.clone())
            .or_default()
            .push(event);
    }

    /// The last `window` events of `principal`, oldest first.
    pub fn latest(&self, principal: &str, window: usize) -> Vec<ContextEvent> {
        let map = self.by_principal.read();
        let Some(events) = map.get(principal) else {
            return Vec::new();
        };
        events[events.len().saturating_sub(window)..].to_vec()
    }
}

/// Appends a `Context:` block to `prompt`; no-op for an empty slice.
pub fn append_context_block(prompt: &mut String, events: &[ContextEvent]) {
    if events.is_empty() {
        return;
    }
    if !prompt.is_empty() && !prompt.ends_with('\n') {
        prompt.push('\n');
    }
    prompt.push_str("Context:\n");
    for e in events {
        prompt.push_str(&e.content);
        prompt.push('\n');
    }
}
