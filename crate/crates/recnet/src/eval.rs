//! Offline evaluation: dataset ingestion, leave-one-out splits, NDCG@K,
//! and the ablation sweep runner.
//!
//! The harness speaks two JSONL dialects (the native one and Amazon review
//! dumps), holds out the last event per user, and ranks the held-out item
//! against nine sampled negatives, repeated with reseeded negative draws.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{HttpBackend, MockBackend, PromptBackend};
use crate::embedding::{EmbeddingBackend, HashEmbedder, RemoteEmbedder};
use crate::engine::{Engine, RunReport};
use crate::model::{
    BackendSelector, ClientId, FilterMemory, InteractionRecord, NetworkConfig, PropagatedMessage,
    Variant,
};

/// Input dialect of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// Native rows: user, item, timestamp, title, review, optional negative.
    Recnet,
    /// Amazon review dumps: reviewerID, asin, unixReviewTime, summary, reviewText.
    Amazon,
}

impl Format {
    pub fn as_str(&self) -> &'static str {
        match self {
            Format::Recnet => "recnet",
            Format::Amazon => "amazon",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recnet" => Ok(Format::Recnet),
            "amazon" => Ok(Format::Amazon),
            other => Err(format!("unknown dataset format '{other}'")),
        }
    }
}

/// One interaction event, post-normalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEvent {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub review: String,
    /// Explicit training negative; sampled when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<String>,
}

/// A timestamp-ordered interaction corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub events: Vec<DatasetEvent>,
}

/// Headline counts for a dataset, in the shape the ingest command prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Percentage, e.g. 98.69 for the CDs sample.
    pub sparsity: f64,
}

impl Dataset {
    /// Dedupe on (user, item, timestamp) keeping first occurrence, then sort
    /// by timestamp with (user, item) as the determinism tie-break.
    pub fn from_events(name: impl Into<String>, events: Vec<DatasetEvent>) -> Self {
        let mut seen = BTreeSet::new();
        let mut kept: Vec<DatasetEvent> = Vec::with_capacity(events.len());
        for ev in events {
            if seen.insert((ev.user.clone(), ev.item.clone(), ev.timestamp)) {
                kept.push(ev);
            }
        }
        kept.sort_by(|a, b| {
            (a.timestamp, &a.user, &a.item).cmp(&(b.timestamp, &b.user, &b.item))
        });
        Dataset { name: name.into(), events: kept }
    }

    pub fn users(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.user.as_str()).collect()
    }

    pub fn items(&self) -> BTreeSet<&str> {
        self.events.iter().map(|e| e.item.as_str()).collect()
    }

    /// Interaction-matrix sparsity as a percentage; 0 for an empty dataset.
    pub fn sparsity_percent(&self) -> f64 {
        let cells = self.users().len() * self.items().len();
        if cells == 0 {
            return 0.0;
        }
        (1.0 - self.events.len() as f64 / cells as f64) * 100.0
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            users: self.users().len(),
            items: self.items().len(),
            interactions: self.events.len(),
            sparsity: self.sparsity_percent(),
        }
    }

    /// Per-user event indices in stream order.
    pub fn histories(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, ev) in self.events.iter().enumerate() {
            map.entry(ev.user.as_str()).or_default().push(i);
        }
        map
    }

    /// Item id → title of the item's earliest event.
    pub fn item_titles(&self) -> BTreeMap<&str, &str> {
        let mut map = BTreeMap::new();
        for ev in &self.events {
            map.entry(ev.item.as_str()).or_insert(ev.title.as_str());
        }
        map
    }

    /// Native JSONL rendering, one event per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

/// What can go wrong between a dataset file and a metrics table.
#[derive(Debug)]
pub enum EvalError {
    Io { path: String, detail: String },
    Parse { line: usize, detail: String },
    MissingField { line: usize, field: &'static str },
    UserTooShort { user: String, events: usize },
    TruthMissing { item: String },
    NegativePool { user: String, available: usize },
    Backend(String),
    Engine(String),
    Model(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Io { path, detail } => write!(f, "cannot read {path}: {detail}"),
            EvalError::Parse { line, detail } => write!(f, "line {line}: {detail}"),
            EvalError::MissingField { line, field } => {
                write!(f, "line {line}: missing field '{field}'")
            }
            EvalError::UserTooShort { user, events } => {
                write!(f, "user {user} has {events} event(s); leave-one-out needs at least 2")
            }
            EvalError::TruthMissing { item } => {
                write!(f, "ground-truth item {item} absent from the ranked list")
            }
            EvalError::NegativePool { user, available } => {
                write!(f, "user {user}: only {available} items outside the history, need 9")
            }
            EvalError::Backend(detail) => write!(f, "backend: {detail}"),
            EvalError::Engine(detail) => write!(f, "engine: {detail}"),
            EvalError::Model(detail) => write!(f, "model: {detail}"),
        }
    }
}

impl std::error::Error for EvalError {}

fn field_str(
    value: &serde_json::Value,
    line: usize,
    field: &'static str,
) -> Result<String, EvalError> {
    match value.get(field) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(other) if !other.is_null() => Ok(other.to_string()),
        _ => Err(EvalError::MissingField { line, field }),
    }
}

fn field_i64(
    value: &serde_json::Value,
    line: usize,
    field: &'static str,
) -> Result<i64, EvalError> {
    match value.get(field) {
        Some(v) => v
            .as_i64()
            .ok_or(EvalError::Parse { line, detail: format!("field '{field}' is not an integer") }),
        None => Err(EvalError::MissingField { line, field }),
    }
}

fn opt_field_str(value: &serde_json::Value, field: &str) -> String {
    value.get(field).and_then(|v| v.as_str()).unwrap_or_default().to_string()
}

/// Parse a JSONL file into a deduplicated, time-sorted dataset.
pub fn ingest(path: &Path, format: Format) -> Result<Dataset, EvalError> {
    let raw = fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut events = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| EvalError::Parse { line: line_no, detail: e.to_string() })?;
        let ev = match format {
            Format::Recnet => DatasetEvent {
                user: field_str(&value, line_no, "user")?,
                item: field_str(&value, line_no, "item")?,
                timestamp: field_i64(&value, line_no, "timestamp")?,
                title: opt_field_str(&value, "title"),
                review: opt_field_str(&value, "review"),
                negative: value
                    .get("negative")
                    .and_then(|v| v.as_str())
                    .map(|s| s.to_string()),
            },
            Format::Amazon => DatasetEvent {
                user: field_str(&value, line_no, "reviewerID")?,
                item: field_str(&value, line_no, "asin")?,
                timestamp: field_i64(&value, line_no, "unixReviewTime")?,
                title: opt_field_str(&value, "summary"),
                review: opt_field_str(&value, "reviewText"),
                negative: None,
            },
        };
        events.push(ev);
    }
    Ok(Dataset::from_events(name, events))
}

/// Iteratively drop users and items with fewer than five events until the
/// five-core property holds.
pub fn five_core(dataset: &Dataset) -> Dataset {
    let mut events = dataset.events.clone();
    loop {
        let mut user_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut item_counts: BTreeMap<String, usize> = BTreeMap::new();
        for ev in &events {
            *user_counts.entry(ev.user.clone()).or_default() += 1;
            *item_counts.entry(ev.item.clone()).or_default() += 1;
        }
        let before = events.len();
        events.retain(|ev| user_counts[&ev.user] >= 5 && item_counts[&ev.item] >= 5);
        if events.len() == before {
            break;
        }
    }
    Dataset { name: dataset.name.clone(), events }
}

/// Keep only the events of `n` seeded-sampled users.
pub fn sample_users(dataset: &Dataset, n: usize, seed: u64) -> Dataset {
    let users: Vec<&str> = dataset.users().into_iter().collect();
    if users.len() <= n {
        return dataset.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    while chosen.len() < n {
        chosen.insert(users[rng.random_range(0..users.len())]);
    }
    let events = dataset
        .events
        .iter()
        .filter(|ev| chosen.contains(ev.user.as_str()))
        .cloned()
        .collect();
    Dataset { name: dataset.name.clone(), events }
}

/// One user's ranking instance for one repetition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    pub user: String,
    pub truth: String,
    /// Ten item ids: the truth plus nine negatives, in seeded shuffled order.
    pub candidates: Vec<String>,
}

/// Leave-one-out split with per-repetition candidate lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    /// Indices into the dataset's events, minus the held-out ones.
    pub training: Vec<usize>,
    /// user → index of the held-out (last) event.
    pub held_out: BTreeMap<String, usize>,
    /// lists[r] = candidate lists for repetition r, users ascending.
    pub lists: Vec<Vec<CandidateList>>,
}

/// Hold out the last event per user and draw 9 negatives per repetition
/// from outside the user's full history, reseeding with `seed ^ r`.
pub fn make_split(
    dataset: &Dataset,
    seed: u64,
    repetitions: usize,
) -> Result<EvalSplit, EvalError> {
    let histories = dataset.histories();
    for (user, idxs) in &histories {
        if idxs.len() < 2 {
            return Err(EvalError::UserTooShort {
                user: (*user).to_string(),
                events: idxs.len(),
            });
        }
    }
    let catalog: Vec<&str> = dataset.items().into_iter().collect();
    let mut held_out = BTreeMap::new();
    let mut held_set = BTreeSet::new();
    for (user, idxs) in &histories {
        let last = *idxs.last().expect("non-empty history");
        held_out.insert((*user).to_string(), last);
        held_set.insert(last);
    }
    let training: Vec<usize> =
        (0..dataset.events.len()).filter(|i| !held_set.contains(i)).collect();

    let mut lists = Vec::with_capacity(repetitions);
    for r in 0..repetitions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ r as u64);
        let mut rep = Vec::with_capacity(histories.len());
        for (user, idxs) in &histories {
            let history: BTreeSet<&str> =
                idxs.iter().map(|&i| dataset.events[i].item.as_str()).collect();
            let eligible: Vec<&str> =
                catalog.iter().copied().filter(|it| !history.contains(it)).collect();
            if eligible.len() < 9 {
                return Err(EvalError::NegativePool {
                    user: (*user).to_string(),
                    available: eligible.len(),
                });
            }
            let truth = dataset.events[held_out[*user]].item.clone();
            let mut candidates = vec![truth.clone()];
            let mut drawn = BTreeSet::new();
            while drawn.len() < 9 {
                let pick = eligible[rng.random_range(0..eligible.len())];
                if drawn.insert(pick) {
                    candidates.push(pick.to_string());
                }
            }
            for i in (1..candidates.len()).rev() {
                candidates.swap(i, rng.random_range(0..=i));
            }
            rep.push(CandidateList { user: (*user).to_string(), truth, candidates });
        }
        lists.push(rep);
    }
    Ok(EvalSplit { training, held_out, lists })
}

/// Single-relevant-item NDCG: 1/log2(1+rank) when the truth sits within the
/// top k, else 0. The ideal DCG is 1, so no normalization constant appears.
pub fn ndcg_at_k(ranked: &[String], truth: &str, k: usize) -> Result<f64, EvalError> {
    let rank = ranked
        .iter()
        .position(|it| it == truth)
        .map(|p| p + 1)
        .ok_or_else(|| EvalError::TruthMissing { item: truth.to_string() })?;
    if rank <= k {
        Ok(1.0 / ((rank as f64) + 1.0).log2())
    } else {
        Ok(0.0)
    }
}

fn engine_err(e: crate::engine::EngineError) -> EvalError {
    EvalError::Engine(e.to_string())
}

/// Merge a client's buffered messages into its profile without draining the
/// buffer, mirroring the call `flush_and_merge` would make.
fn peek_merged_profile(engine: &Engine, id: &ClientId) -> Result<String, EvalError> {
    let client = engine
        .client(id)
        .ok_or_else(|| EvalError::Engine(format!("unknown client {id}")))?;
    if client.buffer.is_empty() {
        return Ok(client.profile.clone());
    }
    let entries: Vec<PropagatedMessage> = client.buffer.entries().cloned().collect();
    let filter = if engine.config().variant.uses_filter() {
        client.filter_memory.clone()
    } else {
        FilterMemory::new(engine.config().max_filter_rules)
    };
    engine
        .backend()
        .merge(&entries, &filter, &client.profile)
        .map_err(|e| EvalError::Backend(e.to_string()))
}

/// Order the candidates for one user, best first. With `augment` set,
/// cold-start participants (at most one training interaction) have router
/// messages fused into their profile before ranking.
pub fn rank_candidates(
    engine: &mut Engine,
    user: &ClientId,
    candidates: &[ClientId],
    augment: bool,
) -> Result<Vec<ClientId>, EvalError> {
    let user_cold = engine
        .client(user)
        .ok_or_else(|| EvalError::Engine(format!("unknown user {user}")))?
        .interaction_count
        <= 1;
    let user_text = if augment && user_cold {
        engine.augment_cold_start(user).map_err(engine_err)?
    } else {
        peek_merged_profile(engine, user)?
    };
    let mut pairs = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let cold = engine
            .client(cand)
            .ok_or_else(|| EvalError::Engine(format!("unknown item {cand}")))?
            .interaction_count
            <= 1;
        let text = if augment && cold {
            engine.augment_cold_start(cand).map_err(engine_err)?
        } else {
            engine.client(cand).expect("checked above").profile.clone()
        };
        pairs.push((cand.clone(), text));
    }
    engine
        .backend()
        .rank(&user_text, &pairs)
        .map_err(|e| EvalError::Backend(e.to_string()))
}

/// Knobs of an evaluation sweep that are not network configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub repetitions: usize,
    /// Fuse router messages into cold-start participants before ranking.
    pub augment_cold: bool,
    /// Upper bound on concurrent (variant, repetition) runs.
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { repetitions: 3, augment_cold: false, parallelism: 1 }
    }
}

/// Metrics of one (variant, repetition) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepMetrics {
    pub repetition: usize,
    pub n1: f64,
    pub n5: f64,
    pub n10: f64,
    pub run: RunReport,
}

/// Averaged NDCG row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgMetrics {
    pub n1: f64,
    pub n5: f64,
    pub n10: f64,
}

/// All repetitions of one variant plus their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub reps: Vec<RepMetrics>,
    pub avg: AvgMetrics,
}

/// Sweep output: one report per surviving variant, errors for the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub variants: Vec<VariantReport>,
    pub errors: BTreeMap<String, String>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl SweepReport {
    /// Metrics table: per-repetition rows plus an `avg` row per variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dataset,variant,repetition,n1,n5,n10\n");
        for vr in &self.variants {
            for rep in &vr.reps {
                out.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{:.6}\n",
                    self.dataset, vr.variant, rep.repetition, rep.n1, rep.n5, rep.n10
                ));
            }
            out.push_str(&format!(
                "{},{},avg,{:.6},{:.6},{:.6}\n",
                self.dataset, vr.variant, vr.avg.n1, vr.avg.n5, vr.avg.n10
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep report serializes")
    }

    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.variant == name)
    }
}

/// A prompt backend paired with the embedding backend it runs beside.
pub type Backends = (Arc<dyn PromptBackend>, Arc<dyn EmbeddingBackend>);

/// Instantiate the prompt and embedding backends a config names.
pub fn build_backends(config: &NetworkConfig) -> Result<Backends, EvalError> {
    match &config.backend {
        BackendSelector::Mock => Ok((
            Arc::new(MockBackend::new()),
            Arc::new(HashEmbedder::new(config.embedding_dim, config.seed)),
        )),
        BackendSelector::Http(http) => {
            let prompt =
                HttpBackend::new(http).map_err(|e| EvalError::Backend(e.to_string()))?;
            let embed = RemoteEmbedder::new(http, config.embedding_dim)
                .map_err(|e| EvalError::Backend(e.to_string()))?;
            Ok((Arc::new(prompt), Arc::new(embed)))
        }
    }
}

/// Client ids and initial profile texts for a dataset: users start blank,
/// items start from the title of their earliest event.
/// Items open with their title; users open with the text of their earliest
/// event, so prediction and routing have a signal before any optimization
/// runs. An all-empty start would never bootstrap: a blank profile embeds
/// to zero, receives nothing, and ties every prediction.
pub fn initial_profiles(dataset: &Dataset) -> Result<BTreeMap<ClientId, String>, EvalError> {
    let mut earliest: BTreeMap<&str, &DatasetEvent> = BTreeMap::new();
    for ev in &dataset.events {
        let slot = earliest.entry(ev.user.as_str()).or_insert(ev);
        if ev.timestamp < slot.timestamp {
            *slot = ev;
        }
    }
    let mut profiles: BTreeMap<ClientId, String> = BTreeMap::new();
    for user in dataset.users() {
        let id = ClientId::user(user).map_err(|e| EvalError::Model(e.to_string()))?;
        let seed_text = earliest
            .get(user)
            .map(|ev| {
                if ev.review.trim().is_empty() {
                    ev.title.clone()
                } else {
                    ev.review.clone()
                }
            })
            .unwrap_or_default();
        profiles.insert(id, seed_text);
    }
    for (item, title) in dataset.item_titles() {
        let id = ClientId::item(item).map_err(|e| EvalError::Model(e.to_string()))?;
        profiles.insert(id, title.to_string());
    }
    Ok(profiles)
}

/// Turn the selected events into interaction triplets. Explicit negatives
/// are honored; missing ones are drawn from outside the user's full history
/// with a generator derived from `seed`.
pub fn build_records(
    dataset: &Dataset,
    indices: &[usize],
    seed: u64,
) -> Result<Vec<InteractionRecord>, EvalError> {
    let catalog: Vec<&str> = dataset.items().into_iter().collect();
    let mut full_history: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for ev in &dataset.events {
        full_history.entry(ev.user.as_str()).or_default().insert(ev.item.as_str());
    }
    let mut neg_rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let mut records = Vec::with_capacity(indices.len());
    for &idx in indices {
        let ev = &dataset.events[idx];
        let negative = match &ev.negative {
            Some(n) => n.clone(),
            None => {
                let history = &full_history[ev.user.as_str()];
                let eligible: Vec<&str> =
                    catalog.iter().copied().filter(|it| !history.contains(it)).collect();
                if eligible.is_empty() {
                    return Err(EvalError::NegativePool {
                        user: ev.user.clone(),
                        available: 0,
                    });
                }
                eligible[neg_rng.random_range(0..eligible.len())].to_string()
            }
        };
        let record = InteractionRecord::new(
            ClientId::user(&ev.user).map_err(|e| EvalError::Model(e.to_string()))?,
            ClientId::item(&ev.item).map_err(|e| EvalError::Model(e.to_string()))?,
            ClientId::item(&negative).map_err(|e| EvalError::Model(e.to_string()))?,
            ev.timestamp,
        )
        .map_err(|e| EvalError::Model(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

/// Build an engine over the dataset's catalog and replay the training
/// stream.
pub fn train_engine(
    dataset: &Dataset,
    split: &EvalSplit,
    config: &NetworkConfig,
) -> Result<Engine, EvalError> {
    let (backend, embedder) = build_backends(config)?;
    let mut engine = Engine::new(config.clone(), backend, embedder).map_err(engine_err)?;
    engine.initialize(initial_profiles(dataset)?).map_err(engine_err)?;
    let records = build_records(dataset, &split.training, config.seed)?;
    engine.run(&records).map_err(engine_err)?;
    Ok(engine)
}

/// Rank every user's candidate list and average NDCG@{1,5,10}.
pub fn evaluate_rep(
    engine: &mut Engine,
    lists: &[CandidateList],
    augment: bool,
) -> Result<AvgMetrics, EvalError> {
    let mut n1 = Vec::with_capacity(lists.len());
    let mut n5 = Vec::with_capacity(lists.len());
    let mut n10 = Vec::with_capacity(lists.len());
    for list in lists {
        let user = ClientId::user(&list.user).map_err(|e| EvalError::Model(e.to_string()))?;
        let candidates: Vec<ClientId> = list
            .candidates
            .iter()
            .map(|c| ClientId::item(c).map_err(|e| EvalError::Model(e.to_string())))
            .collect::<Result<_, _>>()?;
        let ranked = rank_candidates(engine, &user, &candidates, augment)?;
        let ranked_raw: Vec<String> = ranked.into_iter().map(|c| c.raw).collect();
        n1.push(ndcg_at_k(&ranked_raw, &list.truth, 1)?);
        n5.push(ndcg_at_k(&ranked_raw, &list.truth, 5)?);
        n10.push(ndcg_at_k(&ranked_raw, &list.truth, 10)?);
    }
    Ok(AvgMetrics { n1: mean(&n1), n5: mean(&n5), n10: mean(&n10) })
}

/// One (variant, repetition) run: train, rank, report.
pub fn run_variant(
    dataset: &Dataset,
    split: &EvalSplit,
    variant: Variant,
    repetition: usize,
    base_config: &NetworkConfig,
    options: &EvalOptions,
) -> Result<RepMetrics, EvalError> {
    let mut config = base_config.clone();
    config.variant = variant;
    config.seed = base_config.seed ^ repetition as u64;
    let mut engine = train_engine(dataset, split, &config)?;
    let metrics = evaluate_rep(&mut engine, &split.lists[repetition], options.augment_cold)?;
    Ok(RepMetrics {
        repetition,
        n1: metrics.n1,
        n5: metrics.n5,
        n10: metrics.n10,
        run: engine.report(),
    })
}

/// Run every (variant, repetition) pair, isolating per-variant failures.
pub fn sweep(
    dataset: &Dataset,
    variants: &[Variant],
    base_config: &NetworkConfig,
    options: &EvalOptions,
) -> Result<SweepReport, EvalError> {
    let split = make_split(dataset, base_config.seed, options.repetitions)?;
    let jobs: Vec<(Variant, usize)> = variants
        .iter()
        .flat_map(|&v| (0..options.repetitions).map(move |r| (v, r)))
        .collect();
    let results: Mutex<Vec<Option<Result<RepMetrics, String>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let workers = options.parallelism.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let (variant, rep) = jobs[i];
                let outcome = run_variant(dataset, &split, variant, rep, base_config, options)
                    .map_err(|e| e.to_string());
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().expect("results lock");

    let mut variant_reports = Vec::new();
    let mut errors = BTreeMap::new();
    for (vi, &variant) in variants.iter().enumerate() {
        let mut reps = Vec::with_capacity(options.repetitions);
        let mut failure = None;
        for r in 0..options.repetitions {
            match &results[vi * options.repetitions + r] {
                Some(Ok(m)) => reps.push(m.clone()),
                Some(Err(e)) => {
                    failure = Some(e.clone());
                    break;
                }
                None => {
                    failure = Some("run never executed".to_string());
                    break;
                }
            }
        }
        match failure {
            Some(e) => {
                errors.insert(variant.as_str().to_string(), e);
            }
            None => {
                let avg = AvgMetrics {
                    n1: mean(&reps.iter().map(|m| m.n1).collect::<Vec<_>>()),
                    n5: mean(&reps.iter().map(|m| m.n5).collect::<Vec<_>>()),
                    n10: mean(&reps.iter().map(|m| m.n10).collect::<Vec<_>>()),
                };
                variant_reports.push(VariantReport {
                    variant: variant.as_str().to_string(),
                    reps,
                    avg,
                });
            }
        }
    }
    Ok(SweepReport { dataset: dataset.name.clone(), variants: variant_reports, errors })
}

/// Shape of the planted-community generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub groups: usize,
    pub users_per_group: usize,
    pub items_per_group: usize,
    pub vocab_per_group: usize,
    /// Probability that an event targets an item outside the user's group.
    pub crossover: f64,
    pub events_per_user: usize,
    /// Give every user a fresh, otherwise-unseen item as the final event,
    /// making all held-out targets cold-start items.
    pub fresh_last: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            users_per_group: 25,
            items_per_group: 40,
            vocab_per_group: 12,
            crossover: 0.1,
            events_per_user: 8,
            fresh_last: false,
            seed: 42,
        }
    }
}

/// Generate a planted-community corpus: disjoint per-group vocabularies,
/// mostly within-group interactions, round-robin sequential timestamps.
pub fn gen_synthetic(cfg: &SynthConfig) -> Dataset {
    assert!(cfg.groups >= 2, "need at least two groups");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab: Vec<Vec<String>> = (0..cfg.groups)
        .map(|g| (0..cfg.vocab_per_group).map(|w| format!("g{g}w{w}")).collect())
        .collect();
    let mut item_titles: BTreeMap<String, String> = BTreeMap::new();
    let mut items: Vec<Vec<String>> = Vec::with_capacity(cfg.groups);
    for (g, group_vocab) in vocab.iter().enumerate() {
        let mut group_items = Vec::with_capacity(cfg.items_per_group);
        for n in 0..cfg.items_per_group {
            let id = format!("g{g}i{n:03}");
            let mut tokens = BTreeSet::new();
            tokens.insert(group_vocab[n % cfg.vocab_per_group].clone());
            while tokens.len() < 3.min(cfg.vocab_per_group) {
                tokens.insert(group_vocab[rng.random_range(0..cfg.vocab_per_group)].clone());
            }
            let title = tokens.into_iter().collect::<Vec<_>>().join(" ");
            item_titles.insert(id.clone(), title);
            group_items.push(id);
        }
        items.push(group_items);
    }
    let users: Vec<(String, usize)> = (0..cfg.groups)
        .flat_map(|g| (0..cfg.users_per_group).map(move |n| (format!("g{g}u{n:03}"), g)))
        .collect();

    let mut events = Vec::new();
    let mut t = 1_000;
    for round in 0..cfg.events_per_user {
        let last = round + 1 == cfg.events_per_user;
        for (user, g) in &users {
            let (item, title) = if last && cfg.fresh_last {
                let id = format!("g{g}x{user}");
                let title = format!(
                    "{} {}",
                    vocab[*g][rng.random_range(0..cfg.vocab_per_group)],
                    vocab[*g][rng.random_range(0..cfg.vocab_per_group)]
                );
                item_titles.insert(id.clone(), title.clone());
                (id, title)
            } else {
                let eg = if cfg.groups > 1 && rng.random::<f64>() < cfg.crossover {
                    let mut other = rng.random_range(0..cfg.groups - 1);
                    if other >= *g {
                        other += 1;
                    }
                    other
                } else {
                    *g
                };
                let id = items[eg][rng.random_range(0..cfg.items_per_group)].clone();
                let title = item_titles[&id].clone();
                (id, title)
            };
            let review = format!("{} keeper", title);
            events.push(DatasetEvent {
                user: user.clone(),
                item,
                timestamp: t,
                title,
                review,
                negative: None,
            });
            t += 1;
        }
    }
    Dataset::from_events("planted", events)
}

/// Deterministic stand-in for the sampled CDs subset: exactly 100 users,
/// 613 items, 800 interactions.
pub fn gen_cds_sample(seed: u64) -> Dataset {
    const USERS: usize = 100;
    const ITEMS: usize = 613;
    const EVENTS_PER_USER: usize = 8;
    let genres = [
        "blues", "jazz", "folk", "metal", "opera", "soul", "funk", "reggae", "swing", "choral",
    ];
    let forms = ["anthology", "sessions", "concerto", "quartet", "ballads", "standards"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::with_capacity(USERS * EVENTS_PER_USER);
    let title_of = |c: usize| {
        format!("{} {} vol {}", genres[c % genres.len()], forms[c % forms.len()], c / 60 + 1)
    };
    for round in 0..EVENTS_PER_USER {
        for u in 0..USERS {
            let e = round * USERS + u;
            let c = if e < ITEMS { e } else { rng.random_range(0..ITEMS) };
            let title = title_of(c);
            events.push(DatasetEvent {
                user: format!("u{u:03}"),
                item: format!("c{c:04}"),
                timestamp: 10_000 + e as i64,
                title: title.clone(),
                review: format!("{} on heavy rotation", title),
                negative: None,
            });
        }
    }
    Dataset::from_events("cds_sample", events)
}
