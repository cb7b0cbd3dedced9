//! Declarative policy and prompt templates.
//!
//! A [`Policy`] is loaded once from strict JSON and is immutable afterwards.
//! Keyword lists and PII patterns are compiled at load time so that every
//! other module can treat the policy as a ready-to-use rule set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::guardrail::{PiiRule, WordMatcher};

pub const DEFAULT_MAX_OUTPUT_CHARS: usize = 4096;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("malformed policy JSON: {0}")]
    Parse(String),
    #[error("policy invariant violated: {0}")]
    Validation(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierMode {
    Automatic,
    Rule,
    Human,
}

impl VerifierMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerifierMode::Automatic => "automatic",
            VerifierMode::Rule => "rule",
            VerifierMode::Human => "human",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiiPattern {
    pub name: String,
    pub pattern: String,
    /// Tag template; `{n}` is replaced by the per-pattern ordinal.
    pub replacement_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskIndicator {
    pub id: String,
    pub weight: f64,
    pub matcher: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub required_vars: BTreeSet<String>,
    #[serde(default)]
    pub output_format_note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Echo,
    Scripted,
    Failing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmDescriptor {
    pub id: String,
    pub fm_type: u8,
    pub capabilities: BTreeSet<String>,
    pub adapter_kind: AdapterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model_version: String,
}

impl FmDescriptor {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.id.is_empty() {
            return Err(invalid("fm descriptor id must be non-empty"));
        }
        if !(1..=4).contains(&self.fm_type) {
            return Err(invalid(format!(
                "fm_type in {{1,2,3,4}} (descriptor `{}` has {})",
                self.id, self.fm_type
            )));
        }
        if self.capabilities.is_empty() {
            return Err(invalid(format!("capabilities non-empty (descriptor `{}`)", self.id)));
        }
        match (&self.adapter_kind, &self.endpoint) {
            (AdapterKind::Http, None) => Err(invalid(format!(
                "endpoint required for http adapter `{}`",
                self.id
            ))),
            (AdapterKind::Http, Some(url))
                if !(url.starts_with("http://") || url.starts_with("https://")) =>
            {
                Err(invalid(format!("endpoint `{url}` is not an http(s) URL")))
            }
            (AdapterKind::Http, Some(_)) => Ok(()),
            (_, Some(_)) => Err(invalid(format!(
                "endpoint only allowed for http adapters (descriptor `{}`)",
                self.id
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub id: String,
    pub version: String,
    pub topic_whitelist: Vec<String>,
    pub topic_blacklist: Vec<String>,
    pub pii_patterns: Vec<PiiPattern>,
    pub risk_indicators: Vec<RiskIndicator>,
    pub risk_threshold_modify: f64,
    pub risk_threshold_reject: f64,
    pub verifier_mode: VerifierMode,
    pub disclose_trace: bool,
    pub fm_route: Vec<String>,
    pub rag_enabled: bool,
    pub rag_top_k: usize,
    pub human_verdict_timeout_s: u64,
    #[serde(default)]
    pub templates: Vec<PromptTemplate>,
    #[serde(default = "default_max_output_chars")]
    pub max_output_chars: usize,
    #[serde(skip)]
    compiled: Compiled,
}

fn default_max_output_chars() -> usize {
    DEFAULT_MAX_OUTPUT_CHARS
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Compiled {
    pub whitelist: WordMatcher,
    pub blacklist: WordMatcher,
    pub pii: Vec<PiiRule>,
    pub indicators: Vec<WordMatcher>,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        self.to_canonical_json() == other.to_canonical_json()
    }
}

const TOP_LEVEL_KEYS: &[&str] = &[
    "id",
    "version",
    "topic_whitelist",
    "topic_blacklist",
    "pii_patterns",
    "risk_indicators",
    "risk_threshold_modify",
    "risk_threshold_reject",
    "verifier_mode",
    "disclose_trace",
    "fm_route",
    "rag_enabled",
    "rag_top_k",
    "human_verdict_timeout_s",
    "templates",
    "max_output_chars",
];

/// Parses and validates a policy document.
pub fn load_policy(document: &[u8]) -> Result<Policy, PolicyError> {
    let tree: Value =
        serde_json::from_slice(document).map_err(|e| PolicyError::Parse(e.to_string()))?;
    Policy::from_value(tree)
}

impl Policy {
    pub fn from_value(tree: Value) -> Result<Policy, PolicyError> {
        let Value::Object(map) = &tree else {
            return Err(invalid("policy document must be a JSON object"));
        };
        if let Some(key) = map.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(PolicyError::UnknownField(key.clone()));
        }
        let mut policy: Policy = serde_json::from_value(tree).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("unknown field `") {
                Some(rest) => PolicyError::UnknownField(rest.split('`').next().unwrap_or("").into()),
                None => PolicyError::Validation(msg),
            }
        })?;
        policy.compiled = policy.validate()?;
        Ok(policy)
    }

    fn validate(&self) -> Result<Compiled, PolicyError> {
        if self.id.is_empty() {
            return Err(invalid("id non-empty"));
        }
        for (name, t) in [
            ("risk_threshold_modify", self.risk_threshold_modify),
            ("risk_threshold_reject", self.risk_threshold_reject),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid(format!("{name} in [0,1]")));
            }
        }
        if self.risk_threshold_modify > self.risk_threshold_reject {
            return Err(invalid("risk_threshold_modify ≤ risk_threshold_reject"));
        }
        check_keywords("topic_whitelist", &self.topic_whitelist)?;
        check_keywords("topic_blacklist", &self.topic_blacklist)?;
        let black: BTreeSet<&String> = self.topic_blacklist.iter().collect();
        if let Some(both) = self.topic_whitelist.iter().find(|w| black.contains(w)) {
            return Err(invalid(format!(
                "topic_whitelist ∩ topic_blacklist = ∅ (\"{both}\" in both)"
            )));
        }

        let mut pii = Vec::with_capacity(self.pii_patterns.len());
        for p in &self.pii_patterns {
            pii.push(PiiRule::compile(p)?);
        }

        let mut indicators = Vec::with_capacity(self.risk_indicators.len());
        let mut seen = BTreeSet::new();
        for ind in &self.risk_indicators {
            if !seen.insert(ind.id.as_str()) {
                return Err(invalid(format!("risk indicator id `{}` duplicated", ind.id)));
            }
            if !(ind.weight > 0.0 && ind.weight <= 1.0) {
                return Err(invalid(format!("weight in (0,1] (indicator `{}`)", ind.id)));
            }
            if ind.matcher.is_empty() {
                return Err(invalid(format!("matcher non-empty (indicator `{}`)", ind.id)));
            }
            check_keywords(&format!("matcher of `{}`", ind.id), &ind.matcher)?;
            indicators.push(WordMatcher::new(&ind.matcher));
        }

        if self.fm_route.is_empty() {
            return Err(invalid("fm_route non-empty"));
        }
        if self.rag_top_k == 0 {
            return Err(invalid("rag_top_k positive"));
        }
        if self.human_verdict_timeout_s == 0 {
            return Err(invalid("human_verdict_timeout_s positive"));
        }
        if self.max_output_chars == 0 {
            return Err(invalid("max_output_chars positive"));
        }
        let mut ids = BTreeSet::new();
        for t in &self.templates {
            if !ids.insert(t.id.as_str()) {
                return Err(invalid(format!("template id `{}` duplicated", t.id)));
            }
            t.validate()?;
        }

        Ok(Compiled {
            whitelist: WordMatcher::new(&self.topic_whitelist),
            blacklist: WordMatcher::new(&self.topic_blacklist),
            pii,
            indicators,
        })
    }

    /// Confirms every id in `fm_route` names a known adapter.
    pub fn check_routes(&self, is_registered: impl Fn(&str) -> bool) -> Result<(), PolicyError> {
        match self.fm_route.iter().find(|id| !is_registered(id)) {
            Some(id) => Err(invalid(format!("fm_route id `{id}` is not a registered adapter"))),
            None => Ok(()),
        }
    }

    pub fn template(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// Canonical serialization: sorted keys, compact, UTF-8.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub(crate) fn compiled(&self) -> &Compiled {
        &self.compiled
    }

    /// Returns a copy with a different trace disclosure flag.
    pub fn with_disclose_trace(&self, disclose: bool) -> Policy {
        let mut p = self.clone();
        p.disclose_trace = disclose;
        p
    }

    pub fn with_verifier_mode(&self, mode: VerifierMode) -> Policy {
        let mut p = self.clone();
        p.verifier_mode = mode;
        p
    }
}

fn check_keywords(list: &str, words: &[String]) -> Result<(), PolicyError> {
    for w in words {
        if w.trim().is_empty() {
            return Err(invalid(format!("{list} contains an empty keyword")));
        }
        if w.to_lowercase() != *w {
            return Err(invalid(format!("{list} keyword \"{w}\" must be lowercase")));
        }
    }
    Ok(())
}

fn invalid(msg: impl Into<String>) -> PolicyError {
    PolicyError::Validation(msg.into())
}

// ---------------------------------------------------------------------------
// Prompt templates

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("missing variable `{0}`")]
    MissingVariable(String),
    #[error("unexpected variable `{0}`")]
    ExtraVariable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Literal(&'a str),
    Var(&'a str),
}

fn placeholder_name_ok(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Splits a body into literals and `{{name}}` placeholders. Any `{{` not
/// starting a well-formed placeholder is an error.
fn parse_body(body: &str) -> Result<Vec<Piece<'_>>, String> {
    let mut pieces = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        if open > 0 {
            pieces.push(Piece::Literal(&rest[..open]));
        }
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| "unterminated `{{` in template body".to_string())?;
        let name = &after[..close];
        if !placeholder_name_ok(name) {
            return Err(format!("invalid placeholder `{{{{{name}}}}}`"));
        }
        pieces.push(Piece::Var(name));
        rest = &after[close + 2..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest));
    }
    Ok(pieces)
}

impl PromptTemplate {
    pub fn placeholders(&self) -> Result<BTreeSet<String>, PolicyError> {
        let pieces = parse_body(&self.body)
            .map_err(|e| invalid(format!("template `{}`: {e}", self.id)))?;
        Ok(pieces
            .into_iter()
            .filter_map(|p| match p {
                Piece::Var(v) => Some(v.to_string()),
                Piece::Literal(_) => None,
            })
            .collect())
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.id.is_empty() {
            return Err(invalid("template id non-empty"));
        }
        if self.placeholders()? != self.required_vars {
            return Err(invalid(format!(
                "template `{}`: required_vars must equal the placeholder set",
                self.id
            )));
        }
        Ok(())
    }
}

/// Substitutes `vars` into the template and appends the output-format note
/// after a single newline.
pub fn render_prompt(
    template: &PromptTemplate,
    vars: &BTreeMap<String, String>,
) -> Result<String, TemplateError> {
    if let Some(missing) = template.required_vars.iter().find(|v| !vars.contains_key(*v)) {
        return Err(TemplateError::MissingVariable(missing.clone()));
    }
    if let Some(extra) = vars.keys().find(|k| !template.required_vars.contains(*k)) {
        return Err(TemplateError::ExtraVariable(extra.clone()));
    }
    // Templates inside a loaded policy are validated; an ad-hoc invalid body
    // renders its literal text.
    let pieces = parse_body(&template.body).unwrap_or_else(|_| vec![Piece::Literal(&template.body)]);
    let mut out = String::with_capacity(template.body.len() + template.output_format_note.len() + 1);
    for piece in pieces {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Var(name) => out.push_str(&vars[name]),
        }
    }
    out.push('\n');
    out.push_str(&template.output_format_note);
    Ok(out)
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.version)
    }
}
