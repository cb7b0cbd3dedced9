//! Shared server state and its construction from a config file.

use std::sync::Arc;

use anyhow::Context;
use fmgate_core::access::KeyTable;
use fmgate_core::adapters::{build_backend, Adapters};
use fmgate_core::quota::QuotaTracker;
use fmgate_core::rag::RagStore;
use fmgate_core::recorder::storage::FileStorage;
use fmgate_core::registry::AibomRegistry;
use fmgate_core::{load_policy, Clock, Pipeline, Recorder};

use crate::config::Config;

pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub keys: KeyTable,
    pub quotas: QuotaTracker,
    pub clock: Arc<dyn Clock>,
    pub report_notes: Option<String>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>, keys: KeyTable, report_notes: Option<String>) -> Self {
        Self {
            clock: pipeline.recorder().clock().clone(),
            pipeline,
            keys,
            quotas: QuotaTracker::new(),
            report_notes,
        }
    }

    /// Opens the audit store, loads the policy, registers AIBOMs and adapters
    /// and opens the RAG stores.
    pub fn from_config(config: &Config, clock: Arc<dyn Clock>) -> anyhow::Result<AppState> {
        let policy_bytes = std::fs::read(&config.policy_path)
            .with_context(|| format!("reading policy {}", config.policy_path.display()))?;
        let policy = load_policy(&policy_bytes).context("loading policy")?;
        let keys = KeyTable::new(config.keys.clone())?;

        let storage = FileStorage::open(&config.audit_store_path)
            .with_context(|| format!("opening audit store {}", config.audit_store_path.display()))?;
        let recorder = Arc::new(Recorder::open(Box::new(storage), clock, config.location.clone())?);
        let registry = Arc::new(AibomRegistry::new(recorder.clone()));
        for record in &config.aibom {
            registry
                .register_aibom(record.clone())
                .with_context(|| format!("registering AIBOM {}@{}", record.component_id, record.version))?;
        }

        let adapters = Arc::new(Adapters::new(recorder.clone(), registry));
        for a in &config.adapters {
            let backend = build_backend(&a.descriptor, &a.options);
            let installed = if a.tool {
                adapters.install_tool(a.descriptor.clone(), backend)
            } else {
                adapters.register_adapter(a.descriptor.clone(), backend)
            };
            installed.with_context(|| format!("registering adapter {}", a.descriptor.id))?;
        }
        policy
            .check_routes(|id| adapters.is_registered(id))
            .context("checking fm_route")?;

        let pipeline = Arc::new(Pipeline::new(recorder, adapters, policy.clone()));
        pipeline.set_policy(policy)?;
        for (id, path) in &config.rag_store_paths {
            let store = RagStore::open(id.clone(), path).with_context(|| format!("opening RAG store {id}"))?;
            pipeline.add_rag_store(Arc::new(store));
        }
        Ok(AppState::new(pipeline, keys, config.report_notes.clone()))
    }
}
