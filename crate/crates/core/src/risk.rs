//! Continuous risk assessment over prompts and intermediate outputs.
//!
//! The score is a saturating weighted sum of triggered indicators; the
//! decision is a threshold comparison against the policy.

use serde::{Deserialize, Serialize};

use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskDecision {
    Allow,
    Escalate,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub score: f64,
    pub triggered: Vec<String>,
    pub decision: RiskDecision,
}

/// Maps a score onto the policy thresholds.
pub fn decide(score: f64, policy: &Policy) -> RiskDecision {
    if score >= policy.risk_threshold_reject {
        RiskDecision::Reject
    } else if score >= policy.risk_threshold_modify {
        RiskDecision::Escalate
    } else {
        RiskDecision::Allow
    }
}

pub fn assess(text: &str, policy: &Policy) -> RiskAssessment {
    let lowered = text.to_lowercase();
    let mut sum = 0.0;
    let mut triggered = Vec::new();
    for (indicator, matcher) in policy.risk_indicators.iter().zip(&policy.compiled().indicators) {
        if matcher.matches_lowered(&lowered) {
            sum += indicator.weight;
            triggered.push(indicator.id.clone());
        }
    }
    let score = sum.min(1.0);
    RiskAssessment {
        score,
        triggered,
        decision: decide(score, policy),
    }
}
