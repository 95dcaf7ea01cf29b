//! Two-stage execution engine. Interactions stream through a client-centric
//! stage (merge, predict, credit, optimize); once enough accumulate, an
//! exclusive router-centric stage applies structural decisions, integrates
//! queued attribute diffs, and multicasts the updated router profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{parse_directives, BackendError, PromptBackend, PromptKind};
use crate::embedding::{cosine, EmbedError, EmbeddingBackend};
use crate::model::{
    Attribute, ClientAgent, ClientId, FilterMemory, InteractionRecord, ModuleRef, NetworkConfig,
    PropagatedMessage, RouterId, RouterSet, Variant, Violation,
};
use crate::optimization::{
    aggregate_router_gradients, apply_router_decision, assign_credit, compute_reward,
    decide_router_action, optimize_client_profile, CreditInputs, FeedbackRecord, LineageEntry,
    RouterFeedback, RouterShare,
};
use crate::reception::{apply_rule_directives, flush_and_merge_filtered};
use crate::routing::{self, AttributeDiff, DeliveryEntry, RoutingError};

/// Sender id stamped on point-to-point messages, which no router owns.
pub const DIRECT_SENDER: RouterId = RouterId(u64::MAX);

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration rejected: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Violation>),
    #[error("embedder dimension {actual} does not match configured {expected}")]
    EmbedderDim { expected: usize, actual: usize },
    #[error("unknown client {0}")]
    MissingClient(ClientId),
    #[error("client {client} has {count} interactions, too warm for cold-start augmentation")]
    NotCold { client: ClientId, count: u64 },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

/// The two phases of the workflow, for call attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ClientCentric,
    RouterCentric,
}

/// Per-stage, per-kind operation counts. The merge column counts merge
/// phases (three per interaction, one per involved client) rather than raw
/// backend calls, since an empty buffer satisfies the phase without one;
/// every other column matches the backend counters exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallAccounting {
    pub calls: BTreeMap<Stage, BTreeMap<PromptKind, u64>>,
    pub interactions: u64,
    /// Three calls per interaction: what a propagation-free single-agent
    /// loop would spend (predict, one gradient, one optimize).
    pub baseline_calls: u64,
    pub routers_updated_last_batch: usize,
}

impl CallAccounting {
    pub fn new() -> Self {
        let zeroed: BTreeMap<PromptKind, u64> =
            PromptKind::ALL.iter().map(|k| (*k, 0)).collect();
        let mut calls = BTreeMap::new();
        calls.insert(Stage::ClientCentric, zeroed.clone());
        calls.insert(Stage::RouterCentric, zeroed);
        Self { calls, interactions: 0, baseline_calls: 0, routers_updated_last_batch: 0 }
    }

    pub fn record(&mut self, stage: Stage, kind: PromptKind, n: u64) {
        *self.calls.get_mut(&stage).unwrap().get_mut(&kind).unwrap() += n;
    }

    pub fn get(&self, stage: Stage, kind: PromptKind) -> u64 {
        self.calls[&stage][&kind]
    }

    pub fn stage_total(&self, stage: Stage) -> u64 {
        self.calls[&stage].values().sum()
    }
}

impl Default for CallAccounting {
    fn default() -> Self {
        Self::new()
    }
}

mod clients_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<ClientId, ClientAgent>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<ClientId, ClientAgent>, D::Error> {
        let agents = Vec::<ClientAgent>::deserialize(d)?;
        Ok(agents.into_iter().map(|a| (a.id.clone(), a)).collect())
    }
}

/// Everything that survives a snapshot: agents, queues, counters, rng.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    #[serde(with = "clients_serde")]
    pub clients: BTreeMap<ClientId, ClientAgent>,
    pub routers: RouterSet,
    pub pending_records: Vec<InteractionRecord>,
    pub pending_diffs: Vec<AttributeDiff>,
    pub pending_router_gradients: BTreeMap<RouterId, Vec<RouterFeedback>>,
    pub batch_index: u64,
    pub rng: ChaCha8Rng,
    pub accounting: CallAccounting,
    pub k_trajectory: Vec<usize>,
}

/// What one router-centric stage did.
#[derive(Debug, Clone)]
pub struct BatchReport {
    pub batch: u64,
    pub updated: BTreeSet<RouterId>,
    pub deliveries: Vec<DeliveryEntry>,
    pub lineage: Vec<LineageEntry>,
}

/// Summary of a completed run, in the shape the run-report file uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub interactions: u64,
    pub batches: u64,
    pub calls: BTreeMap<Stage, BTreeMap<PromptKind, u64>>,
    pub k_trajectory: Vec<usize>,
    pub lambda_observed: f64,
}

/// Report plus the per-event artifacts a run accumulates.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub feedbacks: Vec<FeedbackRecord>,
    pub deliveries: Vec<DeliveryEntry>,
    pub lineage: Vec<LineageEntry>,
}

pub struct Engine {
    config: NetworkConfig,
    backend: Arc<dyn PromptBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    state: EngineState,
}

impl Engine {
    pub fn new(
        config: NetworkConfig,
        backend: Arc<dyn PromptBackend>,
        embedder: Arc<dyn EmbeddingBackend>,
    ) -> Result<Self, EngineError> {
        let state = EngineState {
            clients: BTreeMap::new(),
            routers: RouterSet::new(),
            pending_records: Vec::new(),
            pending_diffs: Vec::new(),
            pending_router_gradients: BTreeMap::new(),
            batch_index: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            accounting: CallAccounting::new(),
            k_trajectory: Vec::new(),
        };
        Self::from_state(config, backend, embedder, state)
    }

    /// Resume from a serialized snapshot.
    pub fn from_state(
        config: NetworkConfig,
        backend: Arc<dyn PromptBackend>,
        embedder: Arc<dyn EmbeddingBackend>,
        state: EngineState,
    ) -> Result<Self, EngineError> {
        let violations = config.violations();
        if !violations.is_empty() {
            return Err(EngineError::Config(violations));
        }
        if embedder.dim() != config.embedding_dim {
            return Err(EngineError::EmbedderDim {
                expected: config.embedding_dim,
                actual: embedder.dim(),
            });
        }
        Ok(Self { config, backend, embedder, state })
    }

    /// Create the client agents, extract their initial attributes, and
    /// cluster the attribute universe into the initial router layer.
    pub fn initialize(
        &mut self,
        profiles: impl IntoIterator<Item = (ClientId, String)>,
    ) -> Result<(), EngineError> {
        let before = self.backend.counters().snapshot();
        let result = self.initialize_inner(profiles);
        self.absorb(Stage::RouterCentric, &before, None);
        result
    }

    fn initialize_inner(
        &mut self,
        profiles: impl IntoIterator<Item = (ClientId, String)>,
    ) -> Result<(), EngineError> {
        for (id, profile) in profiles {
            let mut agent = ClientAgent::new(id.clone(), profile, &self.config);
            agent.attributes = self.backend.extract(&agent.profile)?;
            self.state.clients.insert(id, agent);
        }
        if self.config.variant.router_based() {
            self.state.routers = routing::init_routers(
                self.state.clients.values(),
                self.config.k_init,
                &*self.backend,
                &*self.embedder,
                self.config.seed,
            )?;
        }
        self.state.k_trajectory.push(self.state.routers.len());
        Ok(())
    }

    /// Registers a client that joined after initialization. Its attributes are
    /// queued as a pending diff so the next router-centric stage integrates them.
    /// Returns false without touching anything when the id is already known.
    pub fn admit(&mut self, id: ClientId, profile: String) -> Result<bool, EngineError> {
        if self.state.clients.contains_key(&id) {
            return Ok(false);
        }
        let before = self.backend.counters().snapshot();
        let mut agent = ClientAgent::new(id.clone(), profile, &self.config);
        let result = self.backend.extract(&agent.profile);
        self.absorb(Stage::RouterCentric, &before, None);
        agent.attributes = result?;
        if self.config.variant.router_based() && !agent.attributes.is_empty() {
            self.state.pending_diffs.push(AttributeDiff {
                client: id.clone(),
                added: agent.attributes.clone(),
            });
        }
        self.state.clients.insert(id, agent);
        Ok(true)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn backend(&self) -> &dyn PromptBackend {
        &*self.backend
    }

    pub fn client(&self, id: &ClientId) -> Option<&ClientAgent> {
        self.state.clients.get(id)
    }

    pub fn clients(&self) -> &BTreeMap<ClientId, ClientAgent> {
        &self.state.clients
    }

    pub fn routers(&self) -> &RouterSet {
        &self.state.routers
    }

    pub fn accounting(&self) -> &CallAccounting {
        &self.state.accounting
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn snapshot(&self) -> EngineState {
        self.state.clone()
    }

    /// Add backend-counter movement since `before` to one stage. `skip`
    /// excludes a kind whose accounting is kept by phase instead.
    fn absorb(
        &mut self,
        stage: Stage,
        before: &BTreeMap<PromptKind, u64>,
        skip: Option<PromptKind>,
    ) {
        let after = self.backend.counters().snapshot();
        for kind in PromptKind::ALL {
            if Some(*kind) == skip {
                continue;
            }
            let delta = after[kind] - before[kind];
            if delta > 0 {
                self.state.accounting.record(stage, *kind, delta);
            }
        }
    }

    /// Client-centric stage for one interaction. Atomic: on error the three
    /// involved agents and the pending queues are exactly as before.
    pub fn step(&mut self, record: &InteractionRecord) -> Result<FeedbackRecord, EngineError> {
        for id in [&record.user, &record.positive, &record.negative] {
            if !self.state.clients.contains_key(id) {
                return Err(EngineError::MissingClient(id.clone()));
            }
        }
        let snapshot: Vec<ClientAgent> = [&record.user, &record.positive, &record.negative]
            .into_iter()
            .map(|id| self.state.clients[id].clone())
            .collect();
        let records_len = self.state.pending_records.len();
        let diffs_len = self.state.pending_diffs.len();
        let gradients_len: BTreeMap<RouterId, usize> = self
            .state
            .pending_router_gradients
            .iter()
            .map(|(k, v)| (*k, v.len()))
            .collect();

        let before = self.backend.counters().snapshot();
        let result = self.step_inner(record);
        self.absorb(Stage::ClientCentric, &before, Some(PromptKind::Merge));
        match &result {
            Ok(_) => {
                self.state.accounting.record(Stage::ClientCentric, PromptKind::Merge, 3);
                self.state.accounting.interactions += 1;
                self.state.accounting.baseline_calls += 3;
            }
            Err(_) => {
                let after = self.backend.counters().snapshot();
                let merged = after[&PromptKind::Merge] - before[&PromptKind::Merge];
                self.state.accounting.record(Stage::ClientCentric, PromptKind::Merge, merged);
                for agent in snapshot {
                    self.state.clients.insert(agent.id.clone(), agent);
                }
                self.state.pending_records.truncate(records_len);
                self.state.pending_diffs.truncate(diffs_len);
                self.state.pending_router_gradients.retain(|k, v| {
                    match gradients_len.get(k) {
                        Some(n) => {
                            v.truncate(*n);
                            true
                        }
                        None => false,
                    }
                });
            }
        }
        result
    }

    fn step_inner(&mut self, record: &InteractionRecord) -> Result<FeedbackRecord, EngineError> {
        let v = self.config.variant;
        let backend = Arc::clone(&self.backend);

        let mut contributing: BTreeMap<RouterId, (BTreeSet<Attribute>, String)> = BTreeMap::new();
        for id in [&record.user, &record.positive, &record.negative] {
            for msg in self.state.clients[id].buffer.entries() {
                if self.state.routers.get(msg.router_id).is_none() {
                    continue;
                }
                let slot = contributing
                    .entry(msg.router_id)
                    .or_insert_with(|| (BTreeSet::new(), msg.router_profile.clone()));
                slot.0.extend(msg.router_attributes.iter().cloned());
            }
        }

        let merged_user = self.fuse_client(&record.user)?;
        let merged_pos = self.fuse_client(&record.positive)?;
        let merged_neg = self.fuse_client(&record.negative)?;

        let outcome = backend.predict(
            &merged_user,
            (&record.positive, &merged_pos),
            (&record.negative, &merged_neg),
        )?;
        let reward = compute_reward(&outcome.chosen, &record.positive);

        let mut involved = Vec::new();
        if v.fpo_enabled() {
            let user_own = self.state.clients[&record.user].profile.clone();
            let mut modules: Vec<(ModuleRef, String)> =
                vec![(ModuleRef::ClientProfile(record.user.clone()), merged_user.clone())];
            if v.uses_filter() && v.optimizes_filter() {
                let rendered = self.state.clients[&record.user].filter_memory.render();
                modules.push((ModuleRef::FilterMem(record.user.clone()), rendered));
            }
            modules.push((ModuleRef::ClientProfile(record.positive.clone()), merged_pos.clone()));
            modules.push((ModuleRef::ClientProfile(record.negative.clone()), merged_neg.clone()));

            let shares: Vec<RouterShare> = if v.optimizes_router() {
                contributing
                    .iter()
                    .map(|(id, (delivered, content))| RouterShare {
                        id: *id,
                        delivered: delivered.clone(),
                        content: content.clone(),
                    })
                    .collect()
            } else {
                Vec::new()
            };

            let inputs = CreditInputs {
                reward,
                user: &record.user,
                positive: &record.positive,
                negative: &record.negative,
                merged_user: &merged_user,
                user_own: &user_own,
                merged_positive: &merged_pos,
                merged_negative: &merged_neg,
            };
            let gradients = assign_credit(&inputs, &modules, &shares, &*backend)?;
            involved = modules.iter().map(|(m, _)| m.clone()).collect();

            let mut new_diffs = Vec::new();
            for ((module, content), gradient) in modules.iter().zip(&gradients) {
                match module {
                    ModuleRef::ClientProfile(id) => {
                        let client = self.state.clients.get_mut(id).unwrap();
                        if let Some(diff) =
                            optimize_client_profile(client, content, gradient, &*backend)?
                        {
                            new_diffs.push(diff);
                        }
                    }
                    ModuleRef::FilterMem(id) => {
                        if !gradient.is_empty() {
                            let (directives, _) = parse_directives(&gradient.gradient_text);
                            let client = self.state.clients.get_mut(id).unwrap();
                            apply_rule_directives(&mut client.filter_memory, &directives);
                        }
                    }
                    ModuleRef::Router(_) => {}
                }
            }
            if v.router_based() {
                self.state.pending_diffs.extend(new_diffs);
            }
            for (share, gradient) in shares.iter().zip(gradients[modules.len()..].iter()) {
                self.state
                    .pending_router_gradients
                    .entry(share.id)
                    .or_default()
                    .push(RouterFeedback {
                        client: record.user.clone(),
                        reward,
                        gradient: gradient.clone(),
                    });
            }
        }

        self.state.clients.get_mut(&record.user).unwrap().interaction_count += 1;
        self.state.clients.get_mut(&record.positive).unwrap().interaction_count += 1;

        if v == Variant::NoRouter {
            let senders = BTreeSet::from([record.user.clone()]);
            self.propagate_direct(&senders, false, false, true)?;
        }

        self.state.pending_records.push(record.clone());
        Ok(FeedbackRecord {
            record: record.clone(),
            chosen: outcome.chosen,
            reward,
            involved_modules: involved,
            contributing_routers: contributing.keys().copied().collect(),
        })
    }

    fn fuse_client(&mut self, id: &ClientId) -> Result<String, BackendError> {
        let backend = Arc::clone(&self.backend);
        let client = self.state.clients.get_mut(id).unwrap();
        if self.config.variant.uses_filter() {
            let filter = client.filter_memory.clone();
            flush_and_merge_filtered(client, &filter, &*backend)
        } else {
            let empty = FilterMemory::new(self.config.max_filter_rules);
            flush_and_merge_filtered(client, &empty, &*backend)
        }
    }

    /// Push one client's whole profile into its top-k nearest neighbors'
    /// buffers, the propagation style of the point-to-point variants.
    fn propagate_direct(
        &mut self,
        senders: &BTreeSet<ClientId>,
        rerank: bool,
        summarize_once: bool,
        summarize_per_neighbor: bool,
    ) -> Result<(), EngineError> {
        let backend = Arc::clone(&self.backend);
        let embedder = Arc::clone(&self.embedder);
        for sender in senders {
            let (profile, attrs) = {
                let agent = &self.state.clients[sender];
                (agent.profile.clone(), agent.attributes.clone())
            };
            if profile.is_empty() || attrs.is_empty() {
                continue;
            }
            let anchor = embedder.embed(&profile)?;
            let mut scored: Vec<(f64, ClientId)> = Vec::new();
            for (id, other) in &self.state.clients {
                if id == sender {
                    continue;
                }
                let e = embedder.embed(&other.profile)?;
                scored.push((cosine(&anchor, &e)?, id.clone()));
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            scored.truncate(self.config.neighbor_k);
            let mut neighbors: Vec<ClientId> = scored.into_iter().map(|(_, id)| id).collect();
            if rerank && !neighbors.is_empty() {
                let candidates: Vec<(ClientId, String)> = neighbors
                    .iter()
                    .map(|id| (id.clone(), self.state.clients[id].profile.clone()))
                    .collect();
                neighbors = backend.rank(&profile, &candidates)?;
            }
            let payload = if summarize_once {
                backend.summarize(&profile, &attrs)?
            } else {
                profile.clone()
            };
            for neighbor in &neighbors {
                let text = if summarize_per_neighbor {
                    backend.summarize(&payload, &attrs)?
                } else {
                    payload.clone()
                };
                let client = self.state.clients.get_mut(neighbor).unwrap();
                client.buffer.push(DIRECT_SENDER, text, attrs.clone());
            }
        }
        Ok(())
    }

    /// Run the router-centric stage if enough interactions accumulated.
    pub fn maybe_run_router_stage(&mut self) -> Result<Option<BatchReport>, EngineError> {
        if self.state.pending_records.len() < self.config.effective_update_size() {
            return Ok(None);
        }
        self.run_router_stage().map(Some)
    }

    /// Force a final router-centric stage over whatever is pending.
    pub fn flush_pending(&mut self) -> Result<Option<BatchReport>, EngineError> {
        if self.state.pending_records.is_empty() {
            return Ok(None);
        }
        self.run_router_stage().map(Some)
    }

    fn run_router_stage(&mut self) -> Result<BatchReport, EngineError> {
        let before = self.backend.counters().snapshot();
        let result = self.router_stage_inner();
        self.absorb(Stage::RouterCentric, &before, None);
        result
    }

    fn router_stage_inner(&mut self) -> Result<BatchReport, EngineError> {
        let v = self.config.variant;
        let batch = self.state.batch_index;
        let backend = Arc::clone(&self.backend);
        let embedder = Arc::clone(&self.embedder);

        if v.point_to_point() {
            if v != Variant::NoRouter {
                let senders: BTreeSet<ClientId> = self
                    .state
                    .pending_records
                    .iter()
                    .flat_map(|r| [r.user.clone(), r.positive.clone()])
                    .collect();
                let rerank = matches!(v, Variant::EmLr | Variant::EmLrLs);
                self.propagate_direct(&senders, rerank, v == Variant::EmLrLs, false)?;
            }
            self.finish_batch(BTreeSet::new());
            return Ok(BatchReport {
                batch,
                updated: BTreeSet::new(),
                deliveries: Vec::new(),
                lineage: Vec::new(),
            });
        }

        let mut staged = self.state.routers.clone();
        let mut lineage = Vec::new();
        let mut touched: BTreeSet<RouterId> = BTreeSet::new();

        if v.optimizes_router() {
            let queued = self.state.pending_router_gradients.clone();
            for (rid, feedback) in &queued {
                let Some(router) = staged.get(*rid) else { continue };
                let aggregated = aggregate_router_gradients(*rid, feedback);
                let decision =
                    decide_router_action(router, &aggregated, &staged, &self.config, &*backend)?;
                let split_seed = self.config.seed ^ rid.0 ^ batch;
                if let Some(entry) = apply_router_decision(
                    &mut staged,
                    *rid,
                    &decision,
                    &aggregated.text,
                    batch,
                    split_seed,
                    &*backend,
                    &*embedder,
                )? {
                    match entry.action.as_str() {
                        "split" => touched.extend(entry.children.iter().map(|c| RouterId(*c))),
                        "merge" => {
                            touched.insert(RouterId(entry.children[0]));
                        }
                        _ => {
                            touched.insert(*rid);
                        }
                    }
                    lineage.push(entry);
                }
            }
        }

        let diffs = self.state.pending_diffs.clone();
        let integrated = routing::integrate_batch(&diffs, &mut staged, &*backend, &*embedder)?;
        touched.extend(integrated);
        touched.retain(|id| staged.get(*id).is_some());

        let table = routing::build_table(
            &touched,
            &staged,
            &self.state.clients,
            self.config.tau,
            batch,
            &*embedder,
        )?;

        let mut fused: Vec<(ClientId, String, BTreeSet<Attribute>, Option<AttributeDiff>)> =
            Vec::new();
        let deliveries = if v.uses_buffer() {
            routing::multicast(&touched, &staged, &mut self.state.clients, &table)
        } else {
            let mut log = Vec::new();
            for (id, client) in &self.state.clients {
                let mut messages = Vec::new();
                for rid in touched.iter().rev() {
                    let score = match table.scores.get(&(*rid, id.clone())) {
                        Some(s) => *s,
                        None => continue,
                    };
                    if score <= table.tau {
                        continue;
                    }
                    let router = staged.get(*rid).unwrap();
                    messages.push(PropagatedMessage {
                        router_id: *rid,
                        router_profile: router.profile.clone(),
                        router_attributes: router.attributes.clone(),
                        seq: messages.len() as u64,
                    });
                }
                for rid in touched.iter() {
                    if let Some(score) = table.scores.get(&(*rid, id.clone())) {
                        if *score > table.tau {
                            log.push(DeliveryEntry {
                                batch,
                                router: *rid,
                                client: id.to_string(),
                                score: *score,
                            });
                        }
                    }
                }
                if messages.is_empty() {
                    continue;
                }
                let filter = if v.uses_filter() {
                    client.filter_memory.clone()
                } else {
                    FilterMemory::new(self.config.max_filter_rules)
                };
                let merged = backend.merge(&messages, &filter, &client.profile)?;
                let fresh = backend.extract(&merged)?;
                let added: BTreeSet<Attribute> =
                    fresh.difference(&client.attributes).cloned().collect();
                let diff = (!added.is_empty())
                    .then(|| AttributeDiff { client: id.clone(), added });
                fused.push((id.clone(), merged, fresh, diff));
            }
            log
        };

        self.state.routers = staged;
        self.state.accounting.routers_updated_last_batch = touched.len();
        self.finish_batch(touched.clone());
        for (id, profile, attrs, diff) in fused {
            let client = self.state.clients.get_mut(&id).unwrap();
            client.profile = profile;
            client.attributes = attrs;
            if let Some(d) = diff {
                self.state.pending_diffs.push(d);
            }
        }

        Ok(BatchReport { batch, updated: touched, deliveries, lineage })
    }

    fn finish_batch(&mut self, _updated: BTreeSet<RouterId>) {
        self.state.pending_records.clear();
        self.state.pending_diffs.clear();
        self.state.pending_router_gradients.clear();
        self.state.batch_index += 1;
        self.state.k_trajectory.push(self.state.routers.len());
    }

    /// Drive a whole record stream: step, gated router stages, and one
    /// forced trailing stage so nothing stays pending.
    pub fn run(&mut self, records: &[InteractionRecord]) -> Result<RunArtifacts, EngineError> {
        let mut feedbacks = Vec::new();
        let mut deliveries = Vec::new();
        let mut lineage = Vec::new();
        for record in records {
            feedbacks.push(self.step(record)?);
            if let Some(report) = self.maybe_run_router_stage()? {
                deliveries.extend(report.deliveries);
                lineage.extend(report.lineage);
            }
        }
        if let Some(report) = self.flush_pending()? {
            deliveries.extend(report.deliveries);
            lineage.extend(report.lineage);
        }
        Ok(RunArtifacts { report: self.report(), feedbacks, deliveries, lineage })
    }

    pub fn report(&self) -> RunReport {
        let acc = &self.state.accounting;
        let client_total = acc.stage_total(Stage::ClientCentric);
        RunReport {
            interactions: acc.interactions,
            batches: self.state.batch_index,
            calls: acc.calls.clone(),
            k_trajectory: self.state.k_trajectory.clone(),
            lambda_observed: if acc.baseline_calls == 0 {
                0.0
            } else {
                client_total as f64 / acc.baseline_calls as f64
            },
        }
    }

    /// Ephemeral warm-up for a client with at most one interaction: score
    /// every router with the overlap indicator bypassed, deliver the ones
    /// above tau, and merge immediately. The stored profile is untouched.
    pub fn augment_cold_start(&mut self, id: &ClientId) -> Result<String, EngineError> {
        let before = self.backend.counters().snapshot();
        let result = self.augment_inner(id);
        self.absorb(Stage::ClientCentric, &before, None);
        result
    }

    fn augment_inner(&mut self, id: &ClientId) -> Result<String, EngineError> {
        let client = self
            .state
            .clients
            .get(id)
            .ok_or_else(|| EngineError::MissingClient(id.clone()))?;
        if client.interaction_count > 1 {
            return Err(EngineError::NotCold {
                client: id.clone(),
                count: client.interaction_count,
            });
        }
        let embedding = self.embedder.embed(&client.profile)?;
        let mut pushes = Vec::new();
        for router in self.state.routers.iter() {
            let sim = routing::score(router, client, &embedding, true)?;
            if sim > self.config.tau {
                pushes.push((router.id, router.profile.clone(), router.attributes.clone()));
            }
        }
        let client = self.state.clients.get_mut(id).unwrap();
        for (rid, profile, attrs) in pushes {
            client.buffer.push(rid, profile, attrs);
        }
        self.fuse_client(id).map_err(EngineError::from)
    }

    /// Structural health check over the live network. Attribute-drift
    /// detection re-extracts profiles, so this costs backend calls.
    pub fn validate(&self) -> Result<Vec<Violation>, EngineError> {
        let mut violations = self.config.violations();
        for (id, client) in &self.state.clients {
            if client.buffer.len() > self.config.buffer_capacity {
                violations.push(Violation::BufferOverCapacity { client: id.clone() });
            }
            let seqs: Vec<u64> = client.buffer.entries().map(|m| m.seq).collect();
            if !seqs.windows(2).all(|w| w[0] > w[1]) {
                violations.push(Violation::NonMonotonicSeq { client: id.clone() });
            }
            if client.filter_memory.rules().len() > self.config.max_filter_rules {
                violations.push(Violation::FilterOverCapacity { client: id.clone() });
            }
            if self.backend.extract(&client.profile)? != client.attributes {
                violations.push(Violation::AttributeDrift { client: id.clone() });
            }
        }
        for router in self.state.routers.iter() {
            if router.attributes.is_empty() {
                violations.push(Violation::EmptyRouterAttributes { router: router.id });
            }
            let norm = router.embedding.norm();
            if !router.embedding.is_zero() && (norm - 1.0).abs() > 1e-9 {
                violations.push(Violation::BadEmbeddingNorm { router: router.id });
            }
            if self.embedder.embed(&router.profile)? != router.embedding {
                violations.push(Violation::StaleRouterEmbedding { router: router.id });
            }
        }
        Ok(violations)
    }
}
