//! AIBOM registry and co-versioning registry.
//!
//! Every third-party component (model, dataset, tool, plugin) must carry a
//! registered AIBOM record before it may be used. Records are append-only
//! and version-exact.
//!
//! The digest of a record is SHA-256 over the canonical JSON (sorted keys,
//! compact, UTF-8) of:
//!
//! ```json
//! {"component_id":..,"component_type":..,"rai_metrics":{..},
//!  "subcomponents":[{"component_id":..,"version":..}],"supplier":..,"version":..}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::canonical;
use crate::clock::format_millis;
use crate::digest::Digest32;
use crate::recorder::{EventKind, Recorder, RecorderError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentType {
    Fm,
    Dataset,
    Tool,
    Plugin,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentRef {
    pub component_id: String,
    pub version: String,
}

impl ComponentRef {
    pub fn new(id: impl Into<String>, version: impl Into<String>) -> Self {
        Self {
            component_id: id.into(),
            version: version.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AibomRecord {
    pub component_id: String,
    pub version: String,
    pub supplier: String,
    pub component_type: ComponentType,
    #[serde(default)]
    pub subcomponents: Vec<ComponentRef>,
    #[serde(default)]
    pub rai_metrics: BTreeMap<String, f64>,
    /// Filled in on registration; if supplied it must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_digest: Option<Digest32>,
}

#[derive(Serialize)]
struct DigestView<'a> {
    component_id: &'a str,
    component_type: ComponentType,
    rai_metrics: &'a BTreeMap<String, f64>,
    subcomponents: &'a [ComponentRef],
    supplier: &'a str,
    version: &'a str,
}

impl AibomRecord {
    pub fn new(
        component_id: impl Into<String>,
        version: impl Into<String>,
        supplier: impl Into<String>,
        component_type: ComponentType,
    ) -> Self {
        Self {
            component_id: component_id.into(),
            version: version.into(),
            supplier: supplier.into(),
            component_type,
            subcomponents: Vec::new(),
            rai_metrics: BTreeMap::new(),
            document_digest: None,
        }
    }

    /// The documented canonical serialization (excludes the digest itself).
    pub fn canonical_document(&self) -> Vec<u8> {
        canonical::to_vec(&DigestView {
            component_id: &self.component_id,
            component_type: self.component_type,
            rai_metrics: &self.rai_metrics,
            subcomponents: &self.subcomponents,
            supplier: &self.supplier,
            version: &self.version,
        })
    }

    pub fn compute_digest(&self) -> Digest32 {
        Digest32::of(&self.canonical_document())
    }

    pub fn key(&self) -> ComponentRef {
        ComponentRef::new(&self.component_id, &self.version)
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let bad = |m: &str| Err(RegistryError::Validation(m.to_string()));
        if self.component_id.is_empty() || self.version.is_empty() || self.supplier.is_empty() {
            return bad("component_id, version and supplier must be non-empty");
        }
        let mut seen = BTreeSet::new();
        for s in &self.subcomponents {
            if s.component_id.is_empty() || s.version.is_empty() {
                return bad("subcomponent references must be non-empty");
            }
            if !seen.insert(s) {
                return bad("duplicate subcomponent reference");
            }
        }
        if self.rai_metrics.values().any(|v| !v.is_finite()) {
            return bad("rai_metrics values must be finite");
        }
        match self.document_digest {
            Some(d) if d != self.compute_digest() => bad("document_digest does not match record contents"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoVersionEntry {
    pub tuple: Vec<ComponentRef>,
    pub recorded_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Enforcement {
    Allowed,
    Refused,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("AIBOM record {0}@{1} already registered")]
    Duplicate(String, String),
    #[error("invalid AIBOM record: {0}")]
    Validation(String),
    #[error("artifact {0}@{1} has no AIBOM record")]
    UnregisteredArtifact(String, String),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
}

pub struct AibomRegistry {
    records: RwLock<BTreeMap<ComponentRef, AibomRecord>>,
    coversions: RwLock<Vec<CoVersionEntry>>,
    recorder: Arc<Recorder>,
}

impl std::fmt::Debug for AibomRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AibomRegistry")
            .field("records", &self.records.read().len())
            .finish()
    }
}

const ACTOR: &str = "registry";

impl AibomRegistry {
    pub fn new(recorder: Arc<Recorder>) -> Self {
        Self {
            records: RwLock::default(),
            coversions: RwLock::default(),
            recorder,
        }
    }

    pub fn register_aibom(&self, mut record: AibomRecord) -> Result<Digest32, RegistryError> {
        record.validate()?;
        let digest = record.compute_digest();
        record.document_digest = Some(digest);
        let key = record.key();
        let mut records = self.records.write();
        if records.contains_key(&key) {
            return Err(RegistryError::Duplicate(key.component_id, key.version));
        }
        self.recorder.append(
            ACTOR,
            EventKind::ConfigLoaded,
            json!({
                "aibom": {
                    "component_id": key.component_id,
                    "version": key.version,
                    "component_type": record.component_type,
                    "digest": digest,
                }
            }),
        )?;
        records.insert(key, record);
        Ok(digest)
    }

    pub fn lookup(&self, component_id: &str, version: &str) -> Option<AibomRecord> {
        self.records
            .read()
            .get(&ComponentRef::new(component_id, version))
            .cloned()
    }

    pub fn is_registered(&self, component_id: &str, version: &str) -> bool {
        self.records
            .read()
            .contains_key(&ComponentRef::new(component_id, version))
    }

    /// Allowed iff a record exists for exactly `(component_id, version)`.
    /// A refusal is recorded as `tool_refused_aibom`.
    pub fn enforce(
        &self,
        component_id: &str,
        version: &str,
        request_id: Option<&str>,
    ) -> Result<Enforcement, RecorderError> {
        if self.is_registered(component_id, version) {
            return Ok(Enforcement::Allowed);
        }
        let mut payload = json!({"component_id": component_id, "version": version});
        if let Some(r) = request_id {
            payload["request_id"] = json!(r);
        }
        self.recorder.append(ACTOR, EventKind::ToolRefusedAibom, payload)?;
        Ok(Enforcement::Refused)
    }

    pub fn record_coversion(&self, tuple: Vec<ComponentRef>) -> Result<CoVersionEntry, RegistryError> {
        if tuple.len() < 2 {
            return Err(RegistryError::Validation("a co-version tuple needs at least 2 artifacts".into()));
        }
        let ids: BTreeSet<&str> = tuple.iter().map(|c| c.component_id.as_str()).collect();
        if ids.len() != tuple.len() {
            return Err(RegistryError::Validation("artifact ids within a tuple must be distinct".into()));
        }
        if let Some(missing) = tuple.iter().find(|c| !self.is_registered(&c.component_id, &c.version)) {
            return Err(RegistryError::UnregisteredArtifact(
                missing.component_id.clone(),
                missing.version.clone(),
            ));
        }
        let mut coversions = self.coversions.write();
        let entry = CoVersionEntry {
            tuple,
            recorded_at: format_millis(self.recorder.clock().now()),
        };
        self.recorder.append(ACTOR, EventKind::ConfigLoaded, json!({"coversion": entry}))?;
        coversions.push(entry.clone());
        Ok(entry)
    }

    /// Companions of `(artifact_id, version)` in the most recently recorded
    /// tuple that contains it.
    pub fn resolve_coversion(&self, artifact_id: &str, version: &str) -> Vec<ComponentRef> {
        let target = ComponentRef::new(artifact_id, version);
        self.coversions
            .read()
            .iter()
            .rev()
            .find(|e| e.tuple.contains(&target))
            .map(|e| e.tuple.iter().filter(|c| **c != target).cloned().collect())
            .unwrap_or_default()
    }

    pub fn coversions(&self) -> Vec<CoVersionEntry> {
        self.coversions.read().clone()
    }
}
