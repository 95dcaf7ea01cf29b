//! Centralized preference routing: cluster attributes into router agents,
//! route updated attributes to the most similar router, and multicast
//! refreshed router profiles to every client scoring above the threshold.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, PromptBackend};
use crate::embedding::{cosine, EmbedError, EmbeddingBackend};
use crate::model::{
    Attribute, ClientAgent, ClientId, EmbeddingVector, RouterAgent, RouterId, RouterSet,
};

/// Errors from router initialization, routing, or integration.
#[derive(Debug, Error)]
pub enum RoutingError {
    #[error("no client holds any attribute, cannot initialize routers")]
    NoAttributes,
    #[error("router set is empty")]
    NoRouters,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Attributes newly gained by one client since its last extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDiff {
    pub client: ClientId,
    pub added: BTreeSet<Attribute>,
}

/// One multicast delivery, as logged to the delivery JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryEntry {
    pub batch: u64,
    pub router: RouterId,
    pub client: String,
    pub score: f64,
}

/// The per-batch score matrix between updated routers and all clients.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    pub scores: BTreeMap<(RouterId, ClientId), f64>,
    pub tau: f64,
    pub built_at: u64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Seeded k-means over unit vectors, best of two Lloyd runs. One run seeds
/// centroids farthest-point apart, which finds genuine cluster structure;
/// the other starts from a shuffled round-robin partition, which stays
/// balanced. On near-orthogonal points (hash embeddings of distinct tokens)
/// the objective is flat and farthest-point seeding degenerates into one
/// bulk cluster plus singletons, so the balanced run wins unless the seeded
/// run is better by a clear margin. Returns per-cluster point indices;
/// clusters left empty by duplicate points are dropped.
pub(crate) fn kmeans(points: &[EmbeddingVector], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = points.len();
    assert!(k >= 1 && n >= k, "need at least k points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut seeded: Vec<Vec<f64>> = Vec::with_capacity(k);
    seeded.push(points[rng.random_range(0..n)].values().to_vec());
    while seeded.len() < k {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            let d = seeded
                .iter()
                .map(|c| dist2(p.values(), c))
                .fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        seeded.push(points[best.1].values().to_vec());
    }

    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut assign = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % k;
    }
    let balanced = centroids_of(points, &assign, k);

    let (structured, s_cost) = lloyd(points, k, seeded);
    let (even, e_cost) = lloyd(points, k, balanced);
    let mut clusters = if s_cost < 0.85 * e_cost { structured } else { even };
    clusters.retain(|c| !c.is_empty());
    clusters
}

fn centroids_of(points: &[EmbeddingVector], assign: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].dim();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, p) in points.iter().enumerate() {
        counts[assign[i]] += 1;
        for (s, v) in sums[assign[i]].iter_mut().zip(p.values()) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            for s in sums[j].iter_mut() {
                *s /= counts[j] as f64;
            }
        }
    }
    sums
}

/// Lloyd iterations: at most 50 passes or centroid movement below 1e-6,
/// empty clusters reseeded at the point farthest from every centroid.
/// Returns the clusters and the within-cluster sum of squared distances.
fn lloyd(
    points: &[EmbeddingVector],
    k: usize,
    mut centroids: Vec<Vec<f64>>,
) -> (Vec<Vec<usize>>, f64) {
    let n = points.len();
    let dim = points[0].dim();
    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        for (i, p) in points.iter().enumerate() {
            let mut nearest = (f64::INFINITY, 0usize);
            for (j, c) in centroids.iter().enumerate() {
                let d = dist2(p.values(), c);
                if d < nearest.0 {
                    nearest = (d, j);
                }
            }
            assign[i] = nearest.1;
        }
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(p.values()) {
                *s += v;
            }
        }
        let mut movement = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                let mut far = (f64::NEG_INFINITY, 0usize);
                for (i, p) in points.iter().enumerate() {
                    let d = centroids
                        .iter()
                        .map(|c| dist2(p.values(), c))
                        .fold(f64::INFINITY, f64::min);
                    if d > far.0 {
                        far = (d, i);
                    }
                }
                let fresh = points[far.1].values().to_vec();
                movement = movement.max(dist2(&centroids[j], &fresh).sqrt());
                centroids[j] = fresh;
                continue;
            }
            let mean: Vec<f64> =
                sums[j].iter().map(|s| s / counts[j] as f64).collect();
            movement = movement.max(dist2(&centroids[j], &mean).sqrt());
            centroids[j] = mean;
        }
        if movement < 1e-6 {
            break;
        }
    }

    let mut cost = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        let mut nearest = (f64::INFINITY, 0usize);
        for (j, c) in centroids.iter().enumerate() {
            let d = dist2(p.values(), c);
            if d < nearest.0 {
                nearest = (d, j);
            }
        }
        assign[i] = nearest.1;
        cost += nearest.0;
    }
    let mut clusters = vec![Vec::new(); k];
    for (i, j) in assign.iter().enumerate() {
        clusters[*j].push(i);
    }
    (clusters, cost)
}

/// Build a router from one attribute cluster.
fn router_from_attrs(
    routers: &mut RouterSet,
    attrs: BTreeSet<Attribute>,
    backend: &dyn PromptBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<(), RoutingError> {
    let profile = backend.summarize("", &attrs)?;
    let embedding = embedder.embed(&profile)?;
    let id = routers.fresh_id();
    routers.insert(RouterAgent { id, profile, attributes: attrs, embedding, generation: 0 });
    Ok(())
}

/// Cluster the union of client attributes into k routers. Fewer distinct
/// attributes than k collapses to one router per attribute.
pub fn init_routers<'a>(
    clients: impl IntoIterator<Item = &'a ClientAgent>,
    k: usize,
    backend: &dyn PromptBackend,
    embedder: &dyn EmbeddingBackend,
    seed: u64,
) -> Result<RouterSet, RoutingError> {
    let universe: BTreeSet<Attribute> = clients
        .into_iter()
        .flat_map(|c| c.attributes.iter().cloned())
        .collect();
    if universe.is_empty() {
        return Err(RoutingError::NoAttributes);
    }
    let mut routers = RouterSet::new();
    if universe.len() <= k {
        for attr in universe {
            router_from_attrs(&mut routers, BTreeSet::from([attr]), backend, embedder)?;
        }
        return Ok(routers);
    }
    let ordered: Vec<Attribute> = universe.into_iter().collect();
    let points: Vec<EmbeddingVector> = ordered
        .iter()
        .map(|a| embedder.embed(a.as_str()))
        .collect::<Result<_, _>>()?;
    for cluster in kmeans(&points, k, seed) {
        let attrs: BTreeSet<Attribute> =
            cluster.into_iter().map(|i| ordered[i].clone()).collect();
        router_from_attrs(&mut routers, attrs, backend, embedder)?;
    }
    Ok(routers)
}

/// Re-extract a client's attributes from `new_profile`, replacing the
/// stored set and reporting what was gained. None when nothing was.
pub fn diff_attributes(
    client: &mut ClientAgent,
    new_profile: &str,
    backend: &dyn PromptBackend,
) -> Result<Option<AttributeDiff>, RoutingError> {
    let fresh = backend.extract(new_profile)?;
    let added: BTreeSet<Attribute> = fresh.difference(&client.attributes).cloned().collect();
    client.attributes = fresh;
    if added.is_empty() {
        return Ok(None);
    }
    Ok(Some(AttributeDiff { client: client.id.clone(), added }))
}

/// The router whose cached embedding is most similar to the attribute's;
/// ties go to the smallest router id.
pub fn route_attribute(
    attr: &Attribute,
    routers: &RouterSet,
    embedder: &dyn EmbeddingBackend,
) -> Result<RouterId, RoutingError> {
    if routers.is_empty() {
        return Err(RoutingError::NoRouters);
    }
    let target = embedder.embed(attr.as_str())?;
    let mut best: Option<(f64, RouterId)> = None;
    for router in routers.iter() {
        let sim = cosine(&target, &router.embedding)?;
        match best {
            Some((b, _)) if sim <= b => {}
            _ => best = Some((sim, router.id)),
        }
    }
    Ok(best.expect("non-empty router set").1)
}

/// Route every diffed attribute to its router and fold the arrivals into
/// router profiles. Returns the ids of every router that received routed
/// attributes; routers that received nothing stay untouched and make no
/// summarize call. The whole batch rolls back on error.
pub fn integrate_batch(
    diffs: &[AttributeDiff],
    routers: &mut RouterSet,
    backend: &dyn PromptBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<BTreeSet<RouterId>, RoutingError> {
    let mut staged = routers.clone();
    let mut routed: BTreeMap<RouterId, BTreeSet<Attribute>> = BTreeMap::new();
    for diff in diffs {
        for attr in &diff.added {
            let target = route_attribute(attr, &staged, embedder)?;
            routed.entry(target).or_default().insert(attr.clone());
        }
    }
    let mut updated = BTreeSet::new();
    for (id, attrs) in routed {
        let router = staged.get_mut(id).expect("routed to live router");
        let new_profile = backend.summarize(&router.profile, &attrs)?;
        router.attributes.extend(attrs);
        router.profile = new_profile;
        router.embedding = embedder.embed(&router.profile)?;
        router.generation += 1;
        updated.insert(id);
    }
    *routers = staged;
    Ok(updated)
}

/// Eq-4-style affinity: profile cosine gated by shared attributes, except
/// for cold clients where the indicator is bypassed.
pub fn score(
    router: &RouterAgent,
    client: &ClientAgent,
    client_embedding: &EmbeddingVector,
    cold: bool,
) -> Result<f64, RoutingError> {
    let sim = cosine(&router.embedding, client_embedding)?;
    if cold {
        return Ok(sim);
    }
    if router.attributes.is_disjoint(&client.attributes) {
        return Ok(0.0);
    }
    Ok(sim)
}

/// Score every (updated router, client) pair into a fresh table.
pub fn build_table(
    updated: &BTreeSet<RouterId>,
    routers: &RouterSet,
    clients: &BTreeMap<ClientId, ClientAgent>,
    tau: f64,
    built_at: u64,
    embedder: &dyn EmbeddingBackend,
) -> Result<RoutingTable, RoutingError> {
    let mut scores = BTreeMap::new();
    for (id, client) in clients {
        let embedding = embedder.embed(&client.profile)?;
        let cold = client.interaction_count == 0;
        for rid in updated {
            let router = routers.get(*rid).expect("updated router exists");
            scores.insert((*rid, id.clone()), score(router, client, &embedding, cold)?);
        }
    }
    Ok(RoutingTable { scores, tau, built_at })
}

/// Deliver every updated router profile to every client scoring strictly
/// above tau, returning the delivery log.
pub fn multicast(
    updated: &BTreeSet<RouterId>,
    routers: &RouterSet,
    clients: &mut BTreeMap<ClientId, ClientAgent>,
    table: &RoutingTable,
) -> Vec<DeliveryEntry> {
    let mut log = Vec::new();
    for (id, client) in clients.iter_mut() {
        for rid in updated {
            let score = match table.scores.get(&(*rid, id.clone())) {
                Some(s) => *s,
                None => continue,
            };
            if score <= table.tau {
                continue;
            }
            let router = routers.get(*rid).expect("updated router exists");
            client.buffer.push(
                router.id,
                router.profile.clone(),
                router.attributes.clone(),
            );
            log.push(DeliveryEntry {
                batch: table.built_at,
                router: *rid,
                client: id.to_string(),
                score,
            });
        }
    }
    log
}
