//! The prompt boundary: every piece of text the network "thinks" with goes
//! through one of these operations. The mock implementation defines the
//! testable semantics; the HTTP implementation talks to a real model.

mod fault;
mod http;
mod mock;

pub use fault::FaultInjector;
pub use http::HttpBackend;
pub use mock::MockBackend;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Attribute, ClientId, FilterMemory, ModuleRef, PropagatedMessage, RouterId, TextualGradient,
};
use crate::text::distinct_content_tokens;

/// Hard cap on extracted or rendered attributes per profile.
pub const MAX_ATTRIBUTES: usize = 32;

/// Errors crossing the prompt boundary.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable ({kind}): {detail}")]
    Unavailable { kind: PromptKind, detail: String },
    #[error("environment variable {0} is not set")]
    MissingCredential(String),
    #[error("rate limited and retries exhausted")]
    RateLimited,
}

/// The prompt families, one counter slot each.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Extract,
    Summarize,
    Merge,
    Predict,
    Gradient,
    Optimize,
    Rank,
}

impl PromptKind {
    pub const ALL: &'static [PromptKind] = &[
        PromptKind::Extract,
        PromptKind::Summarize,
        PromptKind::Merge,
        PromptKind::Predict,
        PromptKind::Gradient,
        PromptKind::Optimize,
        PromptKind::Rank,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptKind::Extract => "extract",
            PromptKind::Summarize => "summarize",
            PromptKind::Merge => "merge",
            PromptKind::Predict => "predict",
            PromptKind::Gradient => "gradient",
            PromptKind::Optimize => "optimize",
            PromptKind::Rank => "rank",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thread-safe per-kind invocation counters. Every backend call increments
/// exactly one slot.
#[derive(Debug, Default)]
pub struct CallCounters {
    slots: [AtomicU64; 7],
}

impl CallCounters {
    pub fn bump(&self, kind: PromptKind) {
        self.slots[kind as usize].fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, kind: PromptKind) -> u64 {
        self.slots[kind as usize].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.slots.iter().map(|s| s.load(Ordering::Relaxed)).sum()
    }

    pub fn snapshot(&self) -> std::collections::BTreeMap<PromptKind, u64> {
        PromptKind::ALL.iter().map(|k| (*k, self.get(*k))).collect()
    }
}

/// Outcome of the pairwise prediction prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictOutcome {
    pub chosen: ClientId,
    pub rationale: String,
}

/// Interaction context handed to the gradient prompt for one module.
#[derive(Debug, Clone)]
pub struct GradientContext<'a> {
    pub reward: u8,
    pub user: &'a ClientId,
    pub positive: &'a ClientId,
    pub negative: &'a ClientId,
    pub merged_user: &'a str,
    /// The user's stored profile before the merge, to tell propagated
    /// tokens apart from the user's own.
    pub user_own: &'a str,
    pub merged_positive: &'a str,
    pub merged_negative: &'a str,
    pub module_content: &'a str,
    /// For router modules: the attributes this router delivered.
    pub router_delivered: Option<&'a BTreeSet<Attribute>>,
}

/// Structural facts about a router under backward optimization.
#[derive(Debug, Clone)]
pub struct RouterFacts {
    pub router_id: RouterId,
    pub attr_count: usize,
    /// Smallest other router id whose profile cosine exceeds the merge
    /// threshold, if any.
    pub merge_candidate: Option<RouterId>,
    /// Gradients aggregated from reward-0 feedback.
    pub negative_count: usize,
    pub split_threshold: usize,
    pub merge_threshold: f64,
}

/// What the optimizer decided to do with a router.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterAction {
    Split,
    Merge(RouterId),
    Rewrite,
    NoOp,
}

/// A router action plus an optional replacement profile text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterDecision {
    pub action: RouterAction,
    pub payload: Option<String>,
}

impl RouterDecision {
    pub fn noop() -> Self {
        Self { action: RouterAction::NoOp, payload: None }
    }
}

/// All prompt operations behind one trait so the engine cannot tell a mock
/// run from a remote one.
pub trait PromptBackend: Send + Sync {
    /// Fine-grained attribute extraction from a profile.
    fn extract(&self, profile: &str) -> Result<BTreeSet<Attribute>, BackendError>;

    /// Fold newly routed attributes into a router profile. Empty `new_attrs`
    /// returns the profile unchanged.
    fn summarize(
        &self,
        router_profile: &str,
        new_attrs: &BTreeSet<Attribute>,
    ) -> Result<String, BackendError>;

    /// Fuse buffered router messages into a profile under filter rules.
    fn merge(
        &self,
        buffered: &[PropagatedMessage],
        filter: &FilterMemory,
        profile: &str,
    ) -> Result<String, BackendError>;

    /// Pairwise choice between the positive and negative candidate.
    fn predict(
        &self,
        user_profile: &str,
        positive: (&ClientId, &str),
        negative: (&ClientId, &str),
    ) -> Result<PredictOutcome, BackendError>;

    /// Credit assignment for one module.
    fn gradient(
        &self,
        module: &ModuleRef,
        ctx: &GradientContext<'_>,
    ) -> Result<TextualGradient, BackendError>;

    /// Apply a textual gradient to a profile, returning the revised text.
    fn optimize_profile(
        &self,
        profile: &str,
        gradient_text: &str,
    ) -> Result<String, BackendError>;

    /// Decide what to do with a router given aggregated gradients.
    fn decide_router(
        &self,
        facts: &RouterFacts,
        aggregated: &str,
    ) -> Result<RouterDecision, BackendError>;

    /// Order candidate items for a user, best first.
    fn rank(
        &self,
        user_profile: &str,
        candidates: &[(ClientId, String)],
    ) -> Result<Vec<ClientId>, BackendError>;

    /// Live invocation counters.
    fn counters(&self) -> &CallCounters;
}

/// One parsed gradient directive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Add(Attribute),
    Remove(Attribute),
    RuleAllow(Attribute),
    RuleDeny(Attribute),
    RouterSplit,
    RouterMerge(RouterId),
    RouterRewrite,
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Add(a) => write!(f, "add:{a}"),
            Directive::Remove(a) => write!(f, "remove:{a}"),
            Directive::RuleAllow(a) => write!(f, "rule:allow:{a}"),
            Directive::RuleDeny(a) => write!(f, "rule:deny:{a}"),
            Directive::RouterSplit => f.write_str("router:split"),
            Directive::RouterMerge(id) => write!(f, "router:merge:{}", id.0),
            Directive::RouterRewrite => f.write_str("router:rewrite"),
        }
    }
}

/// Parse gradient text into directives. Unknown or malformed lines are
/// skipped and reported as warnings, never as faults.
pub fn parse_directives(text: &str) -> (Vec<Directive>, Vec<String>) {
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = parse_directive(line);
        match parsed {
            Some(d) => out.push(d),
            None => warnings.push(format!("unknown directive skipped: {line}")),
        }
    }
    (out, warnings)
}

fn parse_directive(line: &str) -> Option<Directive> {
    if let Some(rest) = line.strip_prefix("rule:allow:") {
        return Attribute::new(rest).ok().map(Directive::RuleAllow);
    }
    if let Some(rest) = line.strip_prefix("rule:deny:") {
        return Attribute::new(rest).ok().map(Directive::RuleDeny);
    }
    if let Some(rest) = line.strip_prefix("add:") {
        return Attribute::new(rest).ok().map(Directive::Add);
    }
    if let Some(rest) = line.strip_prefix("remove:") {
        return Attribute::new(rest).ok().map(Directive::Remove);
    }
    if line == "router:split" {
        return Some(Directive::RouterSplit);
    }
    if line == "router:rewrite" {
        return Some(Directive::RouterRewrite);
    }
    if let Some(rest) = line.strip_prefix("router:merge:") {
        let digits = rest.trim_start_matches(['r', 'R']);
        return digits.parse::<u64>().ok().map(|n| Directive::RouterMerge(RouterId(n)));
    }
    None
}

/// Render client-profile tokens as deterministic text that extracts back
/// to the same token sequence.
pub fn render_client_profile(tokens: &[String]) -> String {
    if tokens.is_empty() {
        return String::new();
    }
    format!("interests: {}", tokens.join(", "))
}

/// Render a router attribute set (sorted, capped) as profile text.
pub fn render_router_profile(attrs: &BTreeSet<Attribute>) -> String {
    if attrs.is_empty() {
        return String::new();
    }
    let listed: Vec<&str> =
        attrs.iter().take(MAX_ATTRIBUTES).map(Attribute::as_str).collect();
    format!("community interests: {}", listed.join(", "))
}

/// Jaccard overlap between two token sets; 0.0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// The deterministic candidate ordering used by the mock backend and as
/// the fallback when a remote ranking reply cannot be parsed: descending
/// profile-token overlap, ties by ascending item id.
pub fn overlap_rank(
    user_profile: &str,
    candidates: &[(ClientId, String)],
) -> Vec<ClientId> {
    let user: BTreeSet<String> =
        distinct_content_tokens(user_profile).into_iter().collect();
    let mut scored: Vec<(f64, &ClientId)> = candidates
        .iter()
        .map(|(id, profile)| {
            let tokens: BTreeSet<String> =
                distinct_content_tokens(profile).into_iter().collect();
            (jaccard(&user, &tokens), id)
        })
        .collect();
    scored.sort_by(|(sa, ia), (sb, ib)| {
        sb.partial_cmp(sa).unwrap_or(std::cmp::Ordering::Equal).then_with(|| ia.cmp(ib))
    });
    scored.into_iter().map(|(_, id)| id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directive_round_trip() {
        let text = "add:vinyl\nremove:metal\nrule:allow:jazz\nrule:deny:noise\nrouter:split\nrouter:merge:3\nrouter:rewrite";
        let (parsed, warnings) = parse_directives(text);
        assert!(warnings.is_empty());
        let rendered: Vec<String> = parsed.iter().map(|d| d.to_string()).collect();
        assert_eq!(rendered.join("\n"), text);
    }

    #[test]
    fn unknown_directives_skipped_with_warning() {
        let (parsed, warnings) = parse_directives("add:vinyl\nboost:jazz\n\nadd:");
        assert_eq!(parsed, vec![Directive::Add(Attribute::new("vinyl").unwrap())]);
        assert_eq!(warnings.len(), 2);
    }

    #[test]
    fn renderings_extract_back_to_their_tokens() {
        let tokens = vec!["jazz".to_string(), "vinyl".to_string()];
        let text = render_client_profile(&tokens);
        assert_eq!(distinct_content_tokens(&text), tokens);
        assert_eq!(render_client_profile(&[]), "");
    }

    #[test]
    fn counters_bump_one_slot() {
        let c = CallCounters::default();
        c.bump(PromptKind::Merge);
        c.bump(PromptKind::Merge);
        c.bump(PromptKind::Predict);
        assert_eq!(c.get(PromptKind::Merge), 2);
        assert_eq!(c.get(PromptKind::Predict), 1);
        assert_eq!(c.total(), 3);
    }

    #[test]
    fn jaccard_edges() {
        let empty = BTreeSet::new();
        let one: BTreeSet<String> = ["jazz".to_string()].into();
        assert_eq!(jaccard(&empty, &empty), 0.0);
        assert_eq!(jaccard(&one, &one), 1.0);
        assert_eq!(jaccard(&one, &empty), 0.0);
    }
}
