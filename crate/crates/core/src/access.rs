//! API keys, principals and scopes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::digest::Digest32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Complete,
    Ingest,
    Verify,
    Admin,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::Complete => "complete",
            Scope::Ingest => "ingest",
            Scope::Verify => "verify",
            Scope::Admin => "admin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub key_id: String,
    pub display_name: String,
    pub scopes: BTreeSet<Scope>,
    pub quota_per_hour: u32,
}

impl Principal {
    pub fn has(&self, scope: Scope) -> bool {
        self.scopes.contains(&scope)
    }
}

/// One row of the configured key table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyEntry {
    pub key: String,
    pub key_id: String,
    pub display_name: String,
    pub scopes: BTreeSet<Scope>,
    pub quota_per_hour: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("unknown API key")]
    Unauthorized,
    #[error("missing scope `{}`", .0.as_str())]
    Forbidden(Scope),
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::Unauthorized => "unauthorized",
            AuthError::Forbidden(_) => "forbidden",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid key table: {0}")]
pub struct KeyTableError(pub String);

/// Keys are held only as SHA-256 digests.
#[derive(Debug, Clone, Default)]
pub struct KeyTable {
    entries: Vec<(Digest32, Principal)>,
}

impl KeyTable {
    pub fn new(entries: Vec<KeyEntry>) -> Result<Self, KeyTableError> {
        let mut ids = BTreeSet::new();
        let mut digests = BTreeSet::new();
        let mut table = Vec::with_capacity(entries.len());
        for e in entries {
            if e.key.is_empty() || e.key_id.is_empty() {
                return Err(KeyTableError("key and key_id must be non-empty".into()));
            }
            if e.scopes.is_empty() {
                return Err(KeyTableError(format!("`{}` has no scopes", e.key_id)));
            }
            if e.quota_per_hour == 0 {
                return Err(KeyTableError(format!("`{}` needs a positive quota_per_hour", e.key_id)));
            }
            if !ids.insert(e.key_id.clone()) {
                return Err(KeyTableError(format!("duplicate key_id `{}`", e.key_id)));
            }
            let digest = Digest32::of(e.key.as_bytes());
            if !digests.insert(digest) {
                return Err(KeyTableError(format!("`{}` reuses another entry's key", e.key_id)));
            }
            table.push((
                digest,
                Principal {
                    key_id: e.key_id,
                    display_name: e.display_name,
                    scopes: e.scopes,
                    quota_per_hour: e.quota_per_hour,
                },
            ));
        }
        Ok(Self { entries: table })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Compares the presented key's digest against every entry without
    /// early exit.
    pub fn authenticate(&self, presented: &str) -> Result<Principal, AuthError> {
        let digest = Digest32::of(presented.as_bytes());
        let mut found = None;
        for (i, (known, _)) in self.entries.iter().enumerate() {
            let hit: bool = known.0.ct_eq(&digest.0).into();
            if hit {
                found = Some(i);
            }
        }
        found.map(|i| self.entries[i].1.clone()).ok_or(AuthError::Unauthorized)
    }

    pub fn authorize(&self, presented: &str, scope: Scope) -> Result<Principal, AuthError> {
        let principal = self.authenticate(presented)?;
        if !principal.has(scope) {
            return Err(AuthError::Forbidden(scope));
        }
        Ok(principal)
    }
}
