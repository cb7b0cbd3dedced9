//! Gateway configuration file (JSON).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use fmgate_core::access::KeyEntry;
use fmgate_core::adapters::BackendOptions;
use fmgate_core::policy::FmDescriptor;
use fmgate_core::registry::AibomRecord;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Node id stamped into every audit event.
    pub location: String,
    pub keys: Vec<KeyEntry>,
    pub policy_path: PathBuf,
    pub audit_store_path: PathBuf,
    /// Store id → JSON Lines document journal.
    #[serde(default)]
    pub rag_store_paths: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub adapters: Vec<AdapterConfig>,
    /// AIBOM records registered at startup, before any adapter.
    #[serde(default)]
    pub aibom: Vec<AibomRecord>,
    /// Operator-supplied free text copied into every report.
    #[serde(default)]
    pub report_notes: Option<String>,
    #[serde(default = "default_sweep_ms")]
    pub expiry_sweep_ms: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub descriptor: FmDescriptor,
    #[serde(default)]
    pub options: BackendOptions,
    /// Tools are installed without an AIBOM check and checked on every use.
    #[serde(default)]
    pub tool: bool,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_sweep_ms() -> u64 {
    1000
}

impl Config {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: Config =
            serde_json::from_slice(&raw).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.policy_path);
        resolve(&mut config.audit_store_path);
        config.rag_store_paths.values_mut().for_each(resolve);
        Ok(config)
    }
}
