//! Three-stage guardrails: blacklist, topic scope and PII redaction.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use regex_automata::nfa::thompson::pikevm::PikeVM;
use regex_automata::{Anchored, Input, MatchKind};
use serde::{Deserialize, Serialize};

use crate::policy::{PiiPattern, Policy, PolicyError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Mid,
    Post,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Mid => "mid",
            Stage::Post => "post",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Allow,
    AllowRedacted,
    Reject,
}

/// Stable wire strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    OffTopic,
    BlacklistedTerm,
    PiiUnredactable,
    FormatViolation,
}

impl ReasonCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReasonCode::OffTopic => "off_topic",
            ReasonCode::BlacklistedTerm => "blacklisted_term",
            ReasonCode::PiiUnredactable => "pii_unredactable",
            ReasonCode::FormatViolation => "format_violation",
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redaction {
    pub pattern_name: String,
    pub ordinal: usize,
    /// Byte range in the text that was evaluated.
    pub span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardrailVerdict {
    pub decision: Decision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason_code: Option<ReasonCode>,
    pub redactions: Vec<Redaction>,
    /// For rejects this is the redacted input (or empty when redaction could
    /// not be completed), so the verdict itself never carries raw PII.
    pub output_text: String,
}

impl GuardrailVerdict {
    pub fn is_reject(&self) -> bool {
        self.decision == Decision::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicScope {
    InScope,
    OffTopic,
    Blacklisted,
}

/// Case-insensitive whole-word matcher over a keyword list.
#[derive(Debug, Clone, Default)]
pub struct WordMatcher {
    re: Option<Regex>,
}

impl WordMatcher {
    pub fn new<S: AsRef<str>>(words: &[S]) -> Self {
        if words.is_empty() {
            return Self { re: None };
        }
        let alts: Vec<String> = words
            .iter()
            .map(|w| regex::escape(&w.as_ref().to_lowercase()))
            .collect();
        let re = Regex::new(&format!(r"\b(?:{})\b", alts.join("|")))
            .expect("escaped keywords always compile");
        Self { re: Some(re) }
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_none()
    }

    /// `lowered` must already be lowercased.
    pub(crate) fn matches_lowered(&self, lowered: &str) -> bool {
        self.re.as_ref().is_some_and(|re| re.is_match(lowered))
    }

    pub fn matches(&self, text: &str) -> bool {
        self.matches_lowered(&text.to_lowercase())
    }
}

/// A compiled PII pattern.
#[derive(Debug, Clone)]
pub struct PiiRule {
    pub name: String,
    tag: String,
    finder: Regex,
    longest: PikeVM,
}

impl PiiRule {
    pub fn compile(p: &PiiPattern) -> Result<Self, PolicyError> {
        let bad = |why: String| PolicyError::Validation(format!("pii pattern `{}`: {why}", p.name));
        if p.name.is_empty() {
            return Err(PolicyError::Validation("pii pattern name non-empty".into()));
        }
        if p.replacement_tag.is_empty() {
            return Err(bad("replacement_tag non-empty".into()));
        }
        if !p.replacement_tag.contains("{n}") {
            return Err(bad("replacement_tag must contain the `{n}` ordinal slot".into()));
        }
        let finder = Regex::new(&p.pattern).map_err(|e| bad(e.to_string()))?;
        let longest = PikeVM::builder()
            .configure(PikeVM::config().match_kind(MatchKind::All))
            .build(&p.pattern)
            .map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            name: p.name.clone(),
            tag: p.replacement_tag.clone(),
            finder,
            longest,
        })
    }

    fn tag_for(&self, ordinal: usize) -> String {
        self.tag.replace("{n}", &ordinal.to_string())
    }

    /// Leftmost non-empty match at or after `from`, extended to the longest
    /// match starting at that position.
    fn next_match(&self, text: &str, from: usize) -> Option<(usize, usize)> {
        let mut cache = self.longest.create_cache();
        let mut pos = from;
        while pos <= text.len() {
            let m = self.finder.find_at(text, pos)?;
            let start = m.start();
            let input = Input::new(text).range(start..).anchored(Anchored::Yes);
            if let Some(long) = self.longest.find(&mut cache, input) {
                if long.end() > start {
                    return Some((start, long.end()));
                }
            }
            if m.end() > start {
                return Some((start, m.end()));
            }
            pos = start + text[start..].chars().next().map_or(1, char::len_utf8);
        }
        None
    }
}

/// Replaces non-overlapping PII matches left to right. Among candidates the
/// leftmost start wins, then the longest match, then the earlier rule.
pub fn redact_with(text: &str, rules: &[PiiRule]) -> (String, Vec<Redaction>) {
    if rules.is_empty() {
        return (text.to_string(), Vec::new());
    }
    let mut out = String::with_capacity(text.len());
    let mut redactions = Vec::new();
    let mut ordinals: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next: Vec<Option<(usize, usize)>> = rules.iter().map(|r| r.next_match(text, 0)).collect();
    let mut cursor = 0;
    loop {
        for (rule, slot) in rules.iter().zip(next.iter_mut()) {
            if matches!(slot, Some((s, _)) if *s < cursor) {
                *slot = rule.next_match(text, cursor);
            }
        }
        let best = next
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|(s, e)| (s, e, i)))
            .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        let Some((start, end, idx)) = best else { break };
        let rule = &rules[idx];
        let ordinal = ordinals.entry(rule.name.as_str()).or_insert(0);
        *ordinal += 1;
        out.push_str(&text[cursor..start]);
        out.push_str(&rule.tag_for(*ordinal));
        redactions.push(Redaction {
            pattern_name: rule.name.clone(),
            ordinal: *ordinal,
            span: (start, end),
        });
        cursor = end;
    }
    out.push_str(&text[cursor..]);
    (out, redactions)
}

/// Compiles `patterns` and redacts `text`.
pub fn redact_pii(text: &str, patterns: &[PiiPattern]) -> Result<(String, Vec<Redaction>), PolicyError> {
    let rules = patterns.iter().map(PiiRule::compile).collect::<Result<Vec<_>, _>>()?;
    Ok(redact_with(text, &rules))
}

pub fn check_topic_scope<S: AsRef<str>>(text: &str, whitelist: &[S], blacklist: &[S]) -> TopicScope {
    scope_with(text, &WordMatcher::new(whitelist), &WordMatcher::new(blacklist))
}

fn scope_with(text: &str, whitelist: &WordMatcher, blacklist: &WordMatcher) -> TopicScope {
    let lowered = text.to_lowercase();
    if blacklist.matches_lowered(&lowered) {
        TopicScope::Blacklisted
    } else if whitelist.is_empty() || whitelist.matches_lowered(&lowered) {
        TopicScope::InScope
    } else {
        TopicScope::OffTopic
    }
}

/// Evaluates `text` at `stage`: blacklist, then topic scope (pre stage
/// only), then PII redaction. The first reject short-circuits.
pub fn evaluate(stage: Stage, text: &str, policy: &Policy) -> GuardrailVerdict {
    let compiled = policy.compiled();
    let lowered = text.to_lowercase();
    let scope_reject = if compiled.blacklist.matches_lowered(&lowered) {
        Some(ReasonCode::BlacklistedTerm)
    } else if stage == Stage::Pre
        && !compiled.whitelist.is_empty()
        && !compiled.whitelist.matches_lowered(&lowered)
    {
        Some(ReasonCode::OffTopic)
    } else {
        None
    };

    let (redacted, redactions) = redact_with(text, &compiled.pii);
    // A tag that itself matches a pattern means redaction cannot converge.
    let unredactable = !redactions.is_empty() && !redact_with(&redacted, &compiled.pii).1.is_empty();

    if let Some(reason) = scope_reject {
        return GuardrailVerdict {
            decision: Decision::Reject,
            reason_code: Some(reason),
            redactions: Vec::new(),
            output_text: if unredactable { String::new() } else { redacted },
        };
    }
    if unredactable {
        return GuardrailVerdict {
            decision: Decision::Reject,
            reason_code: Some(ReasonCode::PiiUnredactable),
            redactions: Vec::new(),
            output_text: String::new(),
        };
    }
    if redactions.is_empty() {
        GuardrailVerdict {
            decision: Decision::Allow,
            reason_code: None,
            redactions,
            output_text: text.to_string(),
        }
    } else {
        GuardrailVerdict {
            decision: Decision::AllowRedacted,
            reason_code: None,
            redactions,
            output_text: redacted,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const EMAIL: &str = r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}";

    fn policy(white: &[&str], black: &[&str], pii: serde_json::Value) -> Policy {
        Policy::from_value(json!({
            "id": "p", "version": "1",
            "topic_whitelist": white, "topic_blacklist": black,
            "pii_patterns": pii, "risk_indicators": [],
            "risk_threshold_modify": 0.5, "risk_threshold_reject": 0.8,
            "verifier_mode": "automatic", "disclose_trace": false,
            "fm_route": ["echo"], "rag_enabled": false, "rag_top_k": 1,
            "human_verdict_timeout_s": 60
        }))
        .unwrap()
    }

    fn email() -> PiiPattern {
        PiiPattern {
            name: "EMAIL".into(),
            pattern: EMAIL.into(),
            replacement_tag: "[EMAIL_{n}]".into(),
        }
    }

    #[test]
    fn blacklist_rejects_at_pre() {
        let p = policy(&[], &["bomb"], json!([]));
        let v = evaluate(Stage::Pre, "how to build a bomb", &p);
        assert_eq!(v.decision, Decision::Reject);
        assert_eq!(v.reason_code, Some(ReasonCode::BlacklistedTerm));
    }

    #[test]
    fn whitelist_hit_allows() {
        let p = policy(&["risk", "fairness"], &[], json!([]));
        let v = evaluate(Stage::Pre, "assess fairness risk", &p);
        assert_eq!(v.decision, Decision::Allow);
        assert_eq!(v.output_text, "assess fairness risk");
        assert!(v.redactions.is_empty());
    }

    #[test]
    fn post_stage_redacts_email() {
        let p = policy(&[], &[], json!([{"name": "EMAIL", "pattern": EMAIL, "replacement_tag": "[EMAIL_{n}]"}]));
        let v = evaluate(Stage::Post, "contact john@example.com", &p);
        assert_eq!(v.decision, Decision::AllowRedacted);
        assert_eq!(v.output_text, "contact [EMAIL_1]");
        assert_eq!(v.redactions.len(), 1);
        assert_eq!(v.redactions[0].span, (8, 24));
    }

    #[test]
    fn topic_scope_only_applies_before_invocation() {
        let p = policy(&["loan"], &[], json!([]));
        assert_eq!(evaluate(Stage::Pre, "weather today?", &p).reason_code, Some(ReasonCode::OffTopic));
        assert_eq!(evaluate(Stage::Mid, "weather today?", &p).decision, Decision::Allow);
        assert_eq!(evaluate(Stage::Post, "weather today?", &p).decision, Decision::Allow);
    }

    #[test]
    fn blacklist_applies_at_every_stage() {
        let p = policy(&[], &["bomb"], json!([]));
        for stage in [Stage::Pre, Stage::Mid, Stage::Post] {
            assert!(evaluate(stage, "a BOMB here", &p).is_reject());
        }
    }

    #[test]
    fn rejected_text_is_still_redacted() {
        let p = policy(&[], &["bomb"], json!([{"name": "EMAIL", "pattern": EMAIL, "replacement_tag": "[EMAIL_{n}]"}]));
        let v = evaluate(Stage::Pre, "bomb a@b.co", &p);
        assert!(v.is_reject());
        assert_eq!(v.output_text, "bomb [EMAIL_1]");
    }

    #[test]
    fn self_matching_tag_is_unredactable() {
        let p = policy(&[], &[], json!([{"name": "N", "pattern": "[0-9]+", "replacement_tag": "<{n}>"}]));
        let v = evaluate(Stage::Post, "call 555", &p);
        assert_eq!(v.reason_code, Some(ReasonCode::PiiUnredactable));
        assert_eq!(v.output_text, "");
    }

    #[test]
    fn redact_examples() {
        let (out, r) = redact_pii("a@b.co and c@d.co", &[email()]).unwrap();
        assert_eq!(out, "[EMAIL_1] and [EMAIL_2]");
        assert_eq!(r.iter().map(|x| x.ordinal).collect::<Vec<_>>(), vec![1, 2]);
        let (out, r) = redact_pii("nothing here", &[email()]).unwrap();
        assert_eq!(out, "nothing here");
        assert!(r.is_empty());
    }

    #[test]
    fn ordinals_are_per_pattern() {
        let phone = PiiPattern {
            name: "PHONE".into(),
            pattern: r"\d{3}-\d{4}".into(),
            replacement_tag: "[PHONE_{n}]".into(),
        };
        let (out, _) = redact_pii("x@y.io 555-1234 z@w.io 555-9876", &[email(), phone]).unwrap();
        assert_eq!(out, "[EMAIL_1] [PHONE_1] [EMAIL_2] [PHONE_2]");
    }

    #[test]
    fn leftmost_longest_across_patterns() {
        let short = PiiPattern { name: "S".into(), pattern: "ab".into(), replacement_tag: "<S{n}>".into() };
        let long = PiiPattern { name: "L".into(), pattern: "abc|a".into(), replacement_tag: "<L{n}>".into() };
        let (out, _) = redact_pii("abcab", &[short, long]).unwrap();
        assert_eq!(out, "<L1><S1>");
    }

    #[test]
    fn topic_scope_examples() {
        assert_eq!(check_topic_scope("Tell me about LOAN risk", &["loan"], &[]), TopicScope::InScope);
        assert_eq!(check_topic_scope("weather today?", &["loan", "credit"], &[]), TopicScope::OffTopic);
        assert_eq!(check_topic_scope("loansharking", &["loan"], &[]), TopicScope::OffTopic);
        assert_eq!(check_topic_scope("loan bomb", &["loan"], &["bomb"]), TopicScope::Blacklisted);
        assert_eq!(check_topic_scope::<&str>("anything", &[], &[]), TopicScope::InScope);
    }

    #[test]
    fn unicode_words() {
        assert!(WordMatcher::new(&["crédit"]).matches("Le CRÉDIT est là"));
        assert!(!WordMatcher::new(&["crédit"]).matches("crédits"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// All (start, end) byte spans where `pat` matches the whole substring.
        fn spans(text: &str, full: &Regex) -> Vec<(usize, usize)> {
            let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
            let mut out = Vec::new();
            for (a, &s) in bounds.iter().enumerate() {
                for &e in &bounds[a + 1..] {
                    if full.is_match(&text[s..e]) {
                        out.push((s, e));
                    }
                }
            }
            out
        }

        /// Brute-force leftmost-longest scan over every candidate span.
        fn brute_force(text: &str, patterns: &[(&str, &str)]) -> (String, usize) {
            let fulls: Vec<Regex> = patterns.iter().map(|(_, p)| Regex::new(&format!("^(?:{p})$")).unwrap()).collect();
            let all: Vec<Vec<(usize, usize)>> = fulls.iter().map(|f| spans(text, f)).collect();
            let mut cursor = 0;
            let mut out = String::new();
            let mut count = 0;
            let mut ord: BTreeMap<&str, usize> = BTreeMap::new();
            loop {
                let mut best: Option<(usize, usize, usize)> = None;
                for (i, list) in all.iter().enumerate() {
                    for &(s, e) in list.iter().filter(|(s, _)| *s >= cursor) {
                        let better = match best {
                            None => true,
                            Some((bs, be, bi)) => s < bs || (s == bs && (e > be || (e == be && i < bi))),
                        };
                        if better {
                            best = Some((s, e, i));
                        }
                    }
                }
                let Some((s, e, i)) = best else { break };
                let n = ord.entry(patterns[i].0).or_insert(0);
                *n += 1;
                out.push_str(&text[cursor..s]);
                out.push_str(&format!("<{}{}>", patterns[i].0, n));
                count += 1;
                cursor = e;
            }
            out.push_str(&text[cursor..]);
            (out, count)
        }

        const PATTERNS: &[(&str, &str)] = &[
            ("E", r"[a-c]+@[a-c]+\.[a-c]{2,3}"),
            ("D", r"[0-9]{2,4}"),
            ("X", r"ab|abc|b@"),
        ];

        fn rules() -> Vec<PiiPattern> {
            PATTERNS
                .iter()
                .map(|(n, p)| PiiPattern { name: n.to_string(), pattern: p.to_string(), replacement_tag: format!("<{n}{{n}}>") })
                .collect()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(400))]

            #[test]
            fn matches_brute_force_enumerator(text in "[abc@.0-9 ]{0,64}") {
                let (out, red) = redact_pii(&text, &rules()).unwrap();
                let (expect, count) = brute_force(&text, PATTERNS);
                prop_assert_eq!(red.len(), count);
                prop_assert_eq!(out, expect);
            }

            #[test]
            fn redaction_reaches_a_fixpoint(text in "[a-z@. 0-9]{0,64}") {
                let pats = vec![
                    email(),
                    PiiPattern { name: "PHONE".into(), pattern: r"\d{3}-\d{4}".into(), replacement_tag: "[PHONE_{n}]".into() },
                ];
                let (once, _) = redact_pii(&text, &pats).unwrap();
                let (twice, red) = redact_pii(&once, &pats).unwrap();
                prop_assert!(red.is_empty());
                prop_assert_eq!(twice, once);
            }

            #[test]
            fn blacklist_dominates_whitelist(
                pre in "[a-z ]{0,10}", mid in "[a-z ]{0,10}", swap in any::<bool>()
            ) {
                let p = policy(&["loan"], &["bomb"], json!([]));
                let text = if swap { format!("{pre} bomb {mid} loan") } else { format!("{pre} loan {mid} bomb") };
                for stage in [Stage::Pre, Stage::Mid, Stage::Post] {
                    let v = evaluate(stage, &text, &p);
                    prop_assert_eq!(v.reason_code, Some(ReasonCode::BlacklistedTerm));
                }
            }
        }
    }
}
