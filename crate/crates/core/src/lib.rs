//! Core pipeline for a responsible-AI foundation-model gateway.
//!
//! Every completion request flows through prompt templating, three-stage
//! guardrails, risk assessment, optional retrieval, adapter-mediated model
//! invocation, a verifier gate and a hash-chained audit recorder. The
//! supply-chain registry gates which models and tools may be used at all.

pub mod access;
pub mod adapters;
pub mod canonical;
pub mod clock;
pub mod digest;
pub mod guardrail;
pub mod orchestrator;
pub mod policy;
pub mod quota;
pub mod rag;
pub mod recorder;
pub mod registry;
pub mod report;
pub mod risk;
pub mod verifier;

pub use clock::{Clock, ManualClock, SystemClock};
pub use digest::Digest32;

pub use orchestrator::{GatewayResponse, Pipeline, PromptRequest, ResponseStatus};
pub use policy::{load_policy, Policy};
pub use recorder::{AuditEvent, EventKind, Recorder};
