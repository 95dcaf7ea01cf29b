//! Shared domain types: client and router agents, attributes, buffers,
//! filter memories, interaction records, and the network configuration.
//!
//! Everything here is a plain value. Mutation happens by replacing values
//! inside the engine's exclusive state; nothing in this module talks to a
//! backend on its own.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Errors raised while constructing or validating domain values.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("attribute is empty after normalization")]
    EmptyAfterNormalization,
    #[error("client id must be non-empty")]
    EmptyId,
    #[error("positive and negative item must differ")]
    SamePositiveNegative,
    #[error("expected a {expected} id, got {got}")]
    KindMismatch { expected: ClientKind, got: ClientKind },
}

/// Whether a client agent models a user or an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    User,
    Item,
}

impl fmt::Display for ClientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientKind::User => f.write_str("user"),
            ClientKind::Item => f.write_str("item"),
        }
    }
}

/// Identifier of a client agent. `(kind, raw)` pairs are unique per network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClientId {
    pub kind: ClientKind,
    pub raw: String,
}

impl ClientId {
    pub fn new(kind: ClientKind, raw: impl Into<String>) -> Result<Self, ModelError> {
        let raw = raw.into();
        if raw.is_empty() {
            return Err(ModelError::EmptyId);
        }
        Ok(Self { kind, raw })
    }

    pub fn user(raw: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(ClientKind::User, raw)
    }

    pub fn item(raw: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(ClientKind::Item, raw)
    }

    pub fn is_user(&self) -> bool {
        self.kind == ClientKind::User
    }

    pub fn is_item(&self) -> bool {
        self.kind == ClientKind::Item
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.raw)
    }
}

impl FromStr for ClientId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("user", raw)) => ClientId::user(raw),
            Some(("item", raw)) => ClientId::item(raw),
            _ => Err(ModelError::EmptyId),
        }
    }
}

/// Normalize free text: Unicode NFC, lowercase, every rune outside
/// letters/digits/space becomes a space, whitespace collapsed and trimmed.
pub fn normalize_text(raw: &str) -> String {
    let mapped: String = raw
        .nfc()
        .flat_map(|c| c.to_lowercase())
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let mut out = String::with_capacity(mapped.len());
    for token in mapped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// A normalized fine-grained preference keyword. The inner text always
/// equals its own normalization, so set membership is deterministic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Attribute {
    text: String,
}

impl Attribute {
    /// Normalize `raw` into an attribute, rejecting text that normalizes
    /// to the empty string (e.g. punctuation-only input).
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        let text = normalize_text(raw);
        if text.is_empty() {
            return Err(ModelError::EmptyAfterNormalization);
        }
        Ok(Self { text })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Normalize raw text into an [`Attribute`].
pub fn normalize_attribute(raw: &str) -> Result<Attribute, ModelError> {
    Attribute::new(raw)
}

/// Unit-length (or exactly zero) embedding of a piece of text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    dim: usize,
}

impl EmbeddingVector {
    /// The all-zero vector, used for text with no embeddable tokens.
    pub fn zero(dim: usize) -> Self {
        Self { values: vec![0.0; dim], dim }
    }

    /// L2-normalize `values`; an all-zero input stays the zero vector.
    pub fn unit(values: Vec<f64>) -> Self {
        let dim = values.len();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self { values, dim };
        }
        Self {
            values: values.into_iter().map(|v| v / norm).collect(),
            dim,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Identifier of a router agent. Ids are assigned monotonically and never
/// reused after a split or merge, so lineage stays auditable.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RouterId(pub u64);

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}", self.0)
    }
}

/// A router profile delivered to a client's buffer during multicast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagatedMessage {
    pub router_id: RouterId,
    pub router_profile: String,
    pub router_attributes: BTreeSet<Attribute>,
    pub seq: u64,
}

/// Bounded LIFO cache of propagated messages, newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageBuffer {
    capacity: usize,
    entries: VecDeque<PropagatedMessage>,
    next_seq: u64,
}

impl MessageBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self { capacity, entries: VecDeque::new(), next_seq: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Prepend a message, assigning it the next receipt sequence number.
    /// The oldest entry is evicted once the buffer is over capacity.
    pub fn push(
        &mut self,
        router_id: RouterId,
        router_profile: String,
        router_attributes: BTreeSet<Attribute>,
    ) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push_front(PropagatedMessage {
            router_id,
            router_profile,
            router_attributes,
            seq,
        });
        while self.entries.len() > self.capacity {
            self.entries.pop_back();
        }
    }

    /// Entries newest-first.
    pub fn entries(&self) -> impl Iterator<Item = &PropagatedMessage> {
        self.entries.iter()
    }

    /// Drain all entries newest-first, leaving the buffer empty.
    pub fn drain(&mut self) -> Vec<PropagatedMessage> {
        self.entries.drain(..).collect()
    }
}

/// Whether a filter rule admits or blocks matching incoming attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Allow,
    Deny,
}

impl RuleAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleAction::Allow => "allow",
            RuleAction::Deny => "deny",
        }
    }
}

/// One textual integration rule: an action paired with the attribute it
/// matches.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FilterRule {
    pub action: RuleAction,
    pub pattern: Attribute,
}

/// Ordered list of integration rules guiding how propagated preferences
/// merge into a client profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterMemory {
    rules: Vec<FilterRule>,
    max_rules: usize,
}

impl FilterMemory {
    pub fn new(max_rules: usize) -> Self {
        assert!(max_rules >= 1, "max_rules must be positive");
        Self { rules: Vec::new(), max_rules }
    }

    pub fn rules(&self) -> &[FilterRule] {
        &self.rules
    }

    pub fn max_rules(&self) -> usize {
        self.max_rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Append a rule, deduplicating on `(action, pattern)` and evicting the
    /// oldest rule once over capacity.
    pub fn add_rule(&mut self, rule: FilterRule) {
        if self.rules.contains(&rule) {
            return;
        }
        self.rules.push(rule);
        while self.rules.len() > self.max_rules {
            self.rules.remove(0);
        }
    }

    pub fn denies(&self, attr: &Attribute) -> bool {
        self.rules
            .iter()
            .any(|r| r.action == RuleAction::Deny && &r.pattern == attr)
    }

    pub fn allows(&self, attr: &Attribute) -> bool {
        self.rules
            .iter()
            .any(|r| r.action == RuleAction::Allow && &r.pattern == attr)
    }

    /// The rules in directive form, oldest first, one per line.
    pub fn render(&self) -> String {
        self.rules
            .iter()
            .map(|r| format!("rule:{}:{}", r.action.as_str(), r.pattern))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// A user or item agent: textual profile, extracted attribute set, message
/// buffer, and filter memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientAgent {
    pub id: ClientId,
    pub profile: String,
    pub attributes: BTreeSet<Attribute>,
    pub buffer: MessageBuffer,
    pub filter_memory: FilterMemory,
    pub interaction_count: u64,
}

impl ClientAgent {
    pub fn new(id: ClientId, profile: impl Into<String>, config: &NetworkConfig) -> Self {
        Self {
            id,
            profile: profile.into(),
            attributes: BTreeSet::new(),
            buffer: MessageBuffer::new(config.buffer_capacity),
            filter_memory: FilterMemory::new(config.max_filter_rules),
            interaction_count: 0,
        }
    }
}

/// A community-level coordinator holding the shared profile of a group of
/// related clients, plus its cached profile embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterAgent {
    pub id: RouterId,
    pub profile: String,
    pub attributes: BTreeSet<Attribute>,
    pub embedding: EmbeddingVector,
    pub generation: u64,
}

/// The live router population plus the monotone id allocator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterSet {
    agents: Vec<RouterAgent>,
    next_id: u64,
}

impl RouterSet {
    pub fn new() -> Self {
        Self { agents: Vec::new(), next_id: 0 }
    }

    pub fn fresh_id(&mut self) -> RouterId {
        let id = RouterId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Insert a router, keeping the list sorted by ascending id.
    pub fn insert(&mut self, router: RouterAgent) {
        let pos = self
            .agents
            .binary_search_by_key(&router.id, |r| r.id)
            .unwrap_or_else(|p| p);
        self.agents.insert(pos, router);
    }

    pub fn remove(&mut self, id: RouterId) -> Option<RouterAgent> {
        let pos = self.agents.iter().position(|r| r.id == id)?;
        Some(self.agents.remove(pos))
    }

    pub fn get(&self, id: RouterId) -> Option<&RouterAgent> {
        self.agents.iter().find(|r| r.id == id)
    }

    pub fn get_mut(&mut self, id: RouterId) -> Option<&mut RouterAgent> {
        self.agents.iter_mut().find(|r| r.id == id)
    }

    /// Routers in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &RouterAgent> {
        self.agents.iter()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

impl Default for RouterSet {
    fn default() -> Self {
        Self::new()
    }
}

/// One `(user, positive item, negative item)` training or evaluation event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user: ClientId,
    pub positive: ClientId,
    pub negative: ClientId,
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn new(
        user: ClientId,
        positive: ClientId,
        negative: ClientId,
        timestamp: i64,
    ) -> Result<Self, ModelError> {
        if !user.is_user() {
            return Err(ModelError::KindMismatch { expected: ClientKind::User, got: user.kind });
        }
        for item in [&positive, &negative] {
            if !item.is_item() {
                return Err(ModelError::KindMismatch {
                    expected: ClientKind::Item,
                    got: item.kind,
                });
            }
        }
        if positive == negative {
            return Err(ModelError::SamePositiveNegative);
        }
        Ok(Self { user, positive, negative, timestamp })
    }
}

/// Which optimizable module a textual gradient targets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleRef {
    ClientProfile(ClientId),
    FilterMem(ClientId),
    Router(RouterId),
}

impl fmt::Display for ModuleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModuleRef::ClientProfile(id) => write!(f, "profile({id})"),
            ModuleRef::FilterMem(id) => write!(f, "filter({id})"),
            ModuleRef::Router(id) => write!(f, "router({id})"),
        }
    }
}

/// Per-module reward text and revision directives produced by credit
/// assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextualGradient {
    pub module_ref: ModuleRef,
    pub reward_text: String,
    pub gradient_text: String,
}

impl TextualGradient {
    pub fn is_empty(&self) -> bool {
        self.gradient_text.trim().is_empty()
    }
}

/// Pipeline variants: the full system plus the ablation and efficiency
/// configurations used by the sweep runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Routing replaced by dense top-k retrieval with whole-profile push.
    NoCprEm,
    /// As `NoCprEm`, plus a backend rerank of retrieved neighbors.
    EmLr,
    /// As `EmLr`, plus a backend summarize of the content before sending.
    EmLrLs,
    /// Reception bypassed: no buffering, no filter rules.
    NoPpr,
    /// Messages fuse immediately on delivery instead of buffering.
    NoBuffer,
    /// Filter memory ignored at merge time.
    NoFilter,
    /// Feedback-driven optimization skipped entirely.
    NoFpo,
    /// Filter memories never optimized.
    NoOptFilter,
    /// Routers never optimized (no split/merge/rewrite).
    NoOptRouter,
    /// Router stage runs after every interaction.
    NoAsync,
    /// Point-to-point propagation with per-neighbor content summarization.
    NoRouter,
}

impl Variant {
    pub const ALL: &'static [Variant] = &[
        Variant::Full,
        Variant::NoCprEm,
        Variant::EmLr,
        Variant::EmLrLs,
        Variant::NoPpr,
        Variant::NoBuffer,
        Variant::NoFilter,
        Variant::NoFpo,
        Variant::NoOptFilter,
        Variant::NoOptRouter,
        Variant::NoAsync,
        Variant::NoRouter,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCprEm => "no_cpr_em",
            Variant::EmLr => "em_lr",
            Variant::EmLrLs => "em_lr_ls",
            Variant::NoPpr => "no_ppr",
            Variant::NoBuffer => "no_buffer",
            Variant::NoFilter => "no_filter",
            Variant::NoFpo => "no_fpo",
            Variant::NoOptFilter => "no_opt_filter",
            Variant::NoOptRouter => "no_opt_router",
            Variant::NoAsync => "no_async",
            Variant::NoRouter => "no_router",
        }
    }

    /// Whether router agents mediate propagation in this variant.
    pub fn router_based(&self) -> bool {
        !matches!(
            self,
            Variant::NoCprEm | Variant::EmLr | Variant::EmLrLs | Variant::NoRouter
        )
    }

    /// Whether propagation happens at all via point-to-point retrieval.
    pub fn point_to_point(&self) -> bool {
        matches!(
            self,
            Variant::NoCprEm | Variant::EmLr | Variant::EmLrLs | Variant::NoRouter
        )
    }

    /// Whether the backward pass (credit assignment + optimizer) runs.
    pub fn fpo_enabled(&self) -> bool {
        !matches!(self, Variant::NoFpo)
    }

    /// Whether delivered messages are cached in the buffer (false means
    /// they fuse into the stored profile immediately on delivery).
    pub fn uses_buffer(&self) -> bool {
        !matches!(self, Variant::NoPpr | Variant::NoBuffer)
    }

    /// Whether filter rules apply during merge.
    pub fn uses_filter(&self) -> bool {
        !matches!(self, Variant::NoPpr | Variant::NoFilter)
    }

    /// Whether rule directives are applied to filter memories.
    pub fn optimizes_filter(&self) -> bool {
        self.fpo_enabled() && !matches!(self, Variant::NoOptFilter | Variant::NoPpr)
    }

    /// Whether router gradients are collected and router decisions applied.
    pub fn optimizes_router(&self) -> bool {
        self.fpo_enabled() && self.router_based() && !matches!(self, Variant::NoOptRouter)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant: {s}"))
    }
}

/// Remote chat/embedding endpoint settings for the HTTP backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API credential.
    pub credential_env: String,
    #[serde(default)]
    pub embed_base_url: Option<String>,
    #[serde(default)]
    pub embed_model: Option<String>,
    /// Directory of prompt template files; embedded templates when absent.
    #[serde(default)]
    pub prompt_dir: Option<String>,
}

/// Which prompt/embedding backend a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum BackendSelector {
    #[default]
    Mock,
    Http(HttpBackendConfig),
}


/// Run-level knobs: initial router count, multicast threshold, buffer and
/// batching sizes, and the router split/merge thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub k_init: usize,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub update_size: usize,
    pub embedding_dim: usize,
    pub seed: u64,
    pub variant: Variant,
    pub backend: BackendSelector,
    pub split_threshold: usize,
    pub merge_threshold: f64,
    pub max_filter_rules: usize,
    /// Fan-out for the point-to-point (EM / no-router) variants.
    pub neighbor_k: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            k_init: 20,
            tau: 0.8,
            buffer_capacity: 5,
            update_size: 16,
            embedding_dim: 256,
            seed: 42,
            variant: Variant::Full,
            backend: BackendSelector::Mock,
            split_threshold: 24,
            merge_threshold: 0.92,
            max_filter_rules: 16,
            neighbor_k: 5,
        }
    }
}

impl NetworkConfig {
    /// Batch gate for the router-centric stage; the no-async variant
    /// updates routers after every interaction.
    pub fn effective_update_size(&self) -> usize {
        match self.variant {
            Variant::NoAsync => 1,
            _ => self.update_size,
        }
    }

    /// Range violations in the configuration itself.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.k_init < 1 {
            out.push(Violation::ConfigOutOfRange { field: "k_init".into() });
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            out.push(Violation::ConfigOutOfRange { field: "tau".into() });
        }
        if self.update_size < 1 {
            out.push(Violation::ConfigOutOfRange { field: "update_size".into() });
        }
        if self.buffer_capacity < 1 {
            out.push(Violation::ConfigOutOfRange { field: "buffer_capacity".into() });
        }
        if self.embedding_dim < 8 {
            out.push(Violation::ConfigOutOfRange { field: "embedding_dim".into() });
        }
        if !(self.merge_threshold > 0.0 && self.merge_threshold < 1.0) {
            out.push(Violation::ConfigOutOfRange { field: "merge_threshold".into() });
        }
        if self.split_threshold < 1 {
            out.push(Violation::ConfigOutOfRange { field: "split_threshold".into() });
        }
        out
    }
}

/// One invariant breach found by [`validate_network`]. Violations are data,
/// not faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    BufferOverCapacity { client: ClientId },
    NonMonotonicSeq { client: ClientId },
    FilterOverCapacity { client: ClientId },
    AttributeDrift { client: ClientId },
    StaleRouterEmbedding { router: RouterId },
    EmptyRouterAttributes { router: RouterId },
    BadEmbeddingNorm { router: RouterId },
    ConfigOutOfRange { field: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BufferOverCapacity { client } => {
                write!(f, "buffer over capacity for {client}")
            }
            Violation::NonMonotonicSeq { client } => {
                write!(f, "buffer sequence numbers not strictly decreasing for {client}")
            }
            Violation::FilterOverCapacity { client } => {
                write!(f, "filter memory over capacity for {client}")
            }
            Violation::AttributeDrift { client } => {
                write!(f, "attributes inconsistent with profile re-extraction for {client}")
            }
            Violation::StaleRouterEmbedding { router } => {
                write!(f, "cached embedding does not match profile for {router}")
            }
            Violation::EmptyRouterAttributes { router } => {
                write!(f, "router {router} has an empty attribute set")
            }
            Violation::BadEmbeddingNorm { router } => {
                write!(f, "router {router} embedding norm is neither 0 nor 1")
            }
            Violation::ConfigOutOfRange { field } => {
                write!(f, "config field {field} out of range")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_punctuation_and_case() {
        assert_eq!(normalize_attribute("Jazz-Fusion ").unwrap().as_str(), "jazz fusion");
        assert_eq!(normalize_attribute("ROCK").unwrap().as_str(), "rock");
    }

    #[test]
    fn normalize_rejects_punctuation_only() {
        assert_eq!(normalize_attribute("—"), Err(ModelError::EmptyAfterNormalization));
        assert_eq!(normalize_attribute("  "), Err(ModelError::EmptyAfterNormalization));
    }

    #[test]
    fn normalize_is_idempotent() {
        for raw in ["Jazz-Fusion ", "ROCK", "a  b\tc", "Éclair!", "x9"] {
            if let Ok(attr) = normalize_attribute(raw) {
                assert_eq!(normalize_text(attr.as_str()), attr.as_str());
            }
        }
    }

    #[test]
    fn buffer_push_evicts_oldest() {
        let mut buf = MessageBuffer::new(2);
        for name in ["a", "b", "c"] {
            buf.push(RouterId(0), name.to_string(), BTreeSet::new());
        }
        let profiles: Vec<_> = buf.entries().map(|m| m.router_profile.as_str()).collect();
        assert_eq!(profiles, ["c", "b"]);
    }

    #[test]
    fn buffer_seq_strictly_decreasing() {
        let mut buf = MessageBuffer::new(3);
        for i in 0..5 {
            buf.push(RouterId(i), format!("p{i}"), BTreeSet::new());
        }
        let seqs: Vec<_> = buf.entries().map(|m| m.seq).collect();
        assert_eq!(seqs, [4, 3, 2]);
    }

    #[test]
    fn filter_memory_dedupes_and_evicts() {
        let mut fm = FilterMemory::new(3);
        let deny = |s: &str| FilterRule {
            action: RuleAction::Deny,
            pattern: Attribute::new(s).unwrap(),
        };
        fm.add_rule(deny("metal"));
        fm.add_rule(deny("metal"));
        assert_eq!(fm.rules().len(), 1);
        fm.add_rule(deny("noise"));
        fm.add_rule(deny("polka"));
        fm.add_rule(deny("ska"));
        assert_eq!(fm.rules().len(), 3);
        assert!(!fm.denies(&Attribute::new("metal").unwrap()));
        assert!(fm.denies(&Attribute::new("ska").unwrap()));
    }

    #[test]
    fn interaction_record_validation() {
        let u = ClientId::user("u1").unwrap();
        let a = ClientId::item("i1").unwrap();
        let b = ClientId::item("i2").unwrap();
        assert!(InteractionRecord::new(u.clone(), a.clone(), b.clone(), 0).is_ok());
        assert_eq!(
            InteractionRecord::new(u.clone(), a.clone(), a.clone(), 0),
            Err(ModelError::SamePositiveNegative)
        );
        assert!(InteractionRecord::new(a.clone(), u.clone(), b, 0).is_err());
    }

    #[test]
    fn embedding_unit_norm_or_zero() {
        let v = EmbeddingVector::unit(vec![3.0, 4.0]);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        let z = EmbeddingVector::unit(vec![0.0, 0.0]);
        assert!(z.is_zero());
        assert_eq!(z.dim(), 2);
    }

    #[test]
    fn serde_round_trips() {
        let id = ClientId::user("u1").unwrap();
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(json, r#"{"kind":"user","raw":"u1"}"#);
        assert_eq!(serde_json::from_str::<ClientId>(&json).unwrap(), id);

        let mut buf = MessageBuffer::new(2);
        buf.push(RouterId(7), "p".into(), BTreeSet::new());
        let json = serde_json::to_string(&buf).unwrap();
        assert_eq!(serde_json::from_str::<MessageBuffer>(&json).unwrap(), buf);

        let cfg = NetworkConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<NetworkConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), *v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn config_violations_catch_bad_ranges() {
        let cfg = NetworkConfig { tau: 1.5, k_init: 0, ..NetworkConfig::default() };
        let v = cfg.violations();
        assert_eq!(v.len(), 2);
    }
}
