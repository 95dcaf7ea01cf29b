//! Feedback-driven textual optimization: reward computation, credit
//! assignment across the modules an interaction touched, profile and
//! filter updates, and backward structural evolution of the router layer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{
    parse_directives, BackendError, Directive, GradientContext, PromptBackend, RouterAction,
    RouterDecision, RouterFacts,
};
use crate::embedding::{cosine, EmbeddingBackend};
use crate::model::{
    Attribute, ClientAgent, ClientId, InteractionRecord, ModuleRef, NetworkConfig, RouterAgent,
    RouterId, RouterSet, TextualGradient,
};
use crate::routing::{self, AttributeDiff, RoutingError};

/// Implicit reward: 1 when the predicted client is the observed positive.
pub fn compute_reward(chosen: &ClientId, positive: &ClientId) -> u8 {
    u8::from(chosen == positive)
}

/// One processed interaction with everything credit assignment saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub record: InteractionRecord,
    pub chosen: ClientId,
    pub reward: u8,
    pub involved_modules: Vec<ModuleRef>,
    pub contributing_routers: BTreeSet<RouterId>,
}

/// Merged texts and identities shared by every gradient call of one step.
#[derive(Debug, Clone, Copy)]
pub struct CreditInputs<'a> {
    pub reward: u8,
    pub user: &'a ClientId,
    pub positive: &'a ClientId,
    pub negative: &'a ClientId,
    pub merged_user: &'a str,
    pub user_own: &'a str,
    pub merged_positive: &'a str,
    pub merged_negative: &'a str,
}

/// A router's share of one interaction: what it delivered and the profile
/// text it carried at delivery time.
#[derive(Debug, Clone)]
pub struct RouterShare {
    pub id: RouterId,
    pub delivered: BTreeSet<Attribute>,
    pub content: String,
}

/// One gradient per involved module, client modules first, then routers in
/// the given order.
pub fn assign_credit(
    inputs: &CreditInputs<'_>,
    modules: &[(ModuleRef, String)],
    routers: &[RouterShare],
    backend: &dyn PromptBackend,
) -> Result<Vec<TextualGradient>, BackendError> {
    let mut gradients = Vec::with_capacity(modules.len() + routers.len());
    for (module, content) in modules {
        let ctx = GradientContext {
            reward: inputs.reward,
            user: inputs.user,
            positive: inputs.positive,
            negative: inputs.negative,
            merged_user: inputs.merged_user,
            user_own: inputs.user_own,
            merged_positive: inputs.merged_positive,
            merged_negative: inputs.merged_negative,
            module_content: content,
            router_delivered: None,
        };
        gradients.push(backend.gradient(module, &ctx)?);
    }
    for share in routers {
        let module = ModuleRef::Router(share.id);
        let ctx = GradientContext {
            reward: inputs.reward,
            user: inputs.user,
            positive: inputs.positive,
            negative: inputs.negative,
            merged_user: inputs.merged_user,
            user_own: inputs.user_own,
            merged_positive: inputs.merged_positive,
            merged_negative: inputs.merged_negative,
            module_content: &share.content,
            router_delivered: Some(&share.delivered),
        };
        gradients.push(backend.gradient(&module, &ctx)?);
    }
    Ok(gradients)
}

/// Rewrite a client profile under a non-empty gradient, re-extract its
/// attributes, and report what was gained. An empty gradient is a no-op:
/// no backend call, no update, no diff.
pub fn optimize_client_profile(
    client: &mut ClientAgent,
    merged: &str,
    gradient: &TextualGradient,
    backend: &dyn PromptBackend,
) -> Result<Option<AttributeDiff>, RoutingError> {
    if gradient.is_empty() {
        return Ok(None);
    }
    let revised = backend.optimize_profile(merged, &gradient.gradient_text)?;
    let diff = routing::diff_attributes(client, &revised, backend)?;
    client.profile = revised;
    Ok(diff)
}

/// One queued router gradient with the feedback that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterFeedback {
    pub client: ClientId,
    pub reward: u8,
    pub gradient: TextualGradient,
}

/// A router's gradients folded into one prompt input, oldest feedback
/// first, with per-line provenance kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedGradient {
    pub router: RouterId,
    pub text: String,
    pub negative_count: usize,
    pub provenance: Vec<String>,
}

pub fn aggregate_router_gradients(
    router: RouterId,
    feedback: &[RouterFeedback],
) -> AggregatedGradient {
    let mut lines = Vec::new();
    let mut provenance = Vec::new();
    let mut negative_count = 0usize;
    for fb in feedback {
        if fb.reward == 0 {
            negative_count += 1;
        }
        for line in fb.gradient.gradient_text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            lines.push(line.to_string());
            provenance.push(format!("{} (reward {}): {line}", fb.client, fb.reward));
        }
    }
    AggregatedGradient { router, text: lines.join("\n"), negative_count, provenance }
}

/// Build the structural facts for one router and let the backend decide
/// its fate. The merge candidate is the smallest other router whose cached
/// profile embedding clears the merge threshold.
pub fn decide_router_action(
    router: &RouterAgent,
    aggregated: &AggregatedGradient,
    routers: &RouterSet,
    config: &NetworkConfig,
    backend: &dyn PromptBackend,
) -> Result<RouterDecision, RoutingError> {
    let mut merge_candidate = None;
    for other in routers.iter() {
        if other.id == router.id {
            continue;
        }
        if cosine(&router.embedding, &other.embedding)? > config.merge_threshold {
            merge_candidate = Some(other.id);
            break;
        }
    }
    let facts = RouterFacts {
        router_id: router.id,
        attr_count: router.attributes.len(),
        merge_candidate,
        negative_count: aggregated.negative_count,
        split_threshold: config.split_threshold,
        merge_threshold: config.merge_threshold,
    };
    Ok(backend.decide_router(&facts, &aggregated.text)?)
}

/// One structural change to the router layer, as logged to the lineage
/// JSONL file. Every change to the router count traces to such an entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub batch: u64,
    pub router: u64,
    pub action: String,
    pub children: Vec<u64>,
    pub k_after: usize,
}

/// Carry out a router decision against the live set. Returns the lineage
/// entry, or `None` when nothing structural happened (no-op decisions,
/// merge targets already retired, rewrites that would empty the router).
#[allow(clippy::too_many_arguments)]
pub fn apply_router_decision(
    routers: &mut RouterSet,
    id: RouterId,
    decision: &RouterDecision,
    aggregated_text: &str,
    batch: u64,
    seed: u64,
    backend: &dyn PromptBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<Option<LineageEntry>, RoutingError> {
    match &decision.action {
        RouterAction::NoOp => Ok(None),
        RouterAction::Split => {
            let router = match routers.get(id) {
                Some(r) => r.clone(),
                None => return Ok(None),
            };
            let attrs: Vec<Attribute> = router.attributes.iter().cloned().collect();
            if attrs.len() < 2 {
                return rewrite_router(routers, id, aggregated_text, batch, backend, embedder);
            }
            let points = attrs
                .iter()
                .map(|a| embedder.embed(a.as_str()))
                .collect::<Result<Vec<_>, _>>()?;
            let clusters = routing::kmeans(&points, 2, seed);
            if clusters.len() < 2 {
                return rewrite_router(routers, id, aggregated_text, batch, backend, embedder);
            }
            routers.remove(id);
            let mut children = Vec::new();
            for cluster in clusters {
                let set: BTreeSet<Attribute> =
                    cluster.into_iter().map(|i| attrs[i].clone()).collect();
                let profile = backend.summarize("", &set)?;
                let embedding = embedder.embed(&profile)?;
                let child = routers.fresh_id();
                routers.insert(RouterAgent {
                    id: child,
                    profile,
                    attributes: set,
                    embedding,
                    generation: router.generation + 1,
                });
                children.push(child.0);
            }
            Ok(Some(LineageEntry {
                batch,
                router: id.0,
                action: "split".into(),
                children,
                k_after: routers.len(),
            }))
        }
        RouterAction::Merge(other_id) => {
            if routers.get(*other_id).is_none() || routers.get(id).is_none() || *other_id == id {
                return Ok(None);
            }
            let survivor_id = id.min(*other_id);
            let retired_id = id.max(*other_id);
            let retired = routers.remove(retired_id).expect("checked above");
            let survivor = routers.get_mut(survivor_id).expect("checked above");
            let mut union = survivor.attributes.clone();
            union.extend(retired.attributes.iter().cloned());
            let profile = backend.summarize(&survivor.profile, &union)?;
            let embedding = embedder.embed(&profile)?;
            survivor.attributes = union;
            survivor.profile = profile;
            survivor.embedding = embedding;
            survivor.generation = survivor.generation.max(retired.generation) + 1;
            Ok(Some(LineageEntry {
                batch,
                router: id.0,
                action: "merge".into(),
                children: vec![survivor_id.0],
                k_after: routers.len(),
            }))
        }
        RouterAction::Rewrite => {
            if let Some(text) = &decision.payload {
                return rewrite_router_to(routers, id, text.clone(), batch, backend, embedder);
            }
            rewrite_router(routers, id, aggregated_text, batch, backend, embedder)
        }
    }
}

/// Rewrite in place: drop the attributes the gradient asks to remove,
/// re-summarize, re-embed, bump the generation. Dropping every attribute
/// would leave the router unroutable, so that case keeps it untouched.
fn rewrite_router(
    routers: &mut RouterSet,
    id: RouterId,
    aggregated_text: &str,
    batch: u64,
    backend: &dyn PromptBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<Option<LineageEntry>, RoutingError> {
    let router = match routers.get(id) {
        Some(r) => r,
        None => return Ok(None),
    };
    let (directives, _) = parse_directives(aggregated_text);
    let removed: BTreeSet<Attribute> = directives
        .into_iter()
        .filter_map(|d| match d {
            Directive::Remove(a) => Some(a),
            _ => None,
        })
        .collect();
    let revised: BTreeSet<Attribute> =
        router.attributes.difference(&removed).cloned().collect();
    if revised.is_empty() {
        return Ok(None);
    }
    let profile = backend.summarize("", &revised)?;
    let embedding = embedder.embed(&profile)?;
    let router = routers.get_mut(id).expect("checked above");
    router.attributes = revised;
    router.profile = profile;
    router.embedding = embedding;
    router.generation += 1;
    Ok(Some(LineageEntry {
        batch,
        router: id.0,
        action: "rewrite".into(),
        children: Vec::new(),
        k_after: routers.len(),
    }))
}

/// Rewrite from a replacement profile supplied by the backend.
fn rewrite_router_to(
    routers: &mut RouterSet,
    id: RouterId,
    profile: String,
    batch: u64,
    backend: &dyn PromptBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<Option<LineageEntry>, RoutingError> {
    if routers.get(id).is_none() {
        return Ok(None);
    }
    let attributes = backend.extract(&profile)?;
    if attributes.is_empty() {
        return Ok(None);
    }
    let embedding = embedder.embed(&profile)?;
    let router = routers.get_mut(id).expect("checked above");
    router.attributes = attributes;
    router.profile = profile;
    router.embedding = embedding;
    router.generation += 1;
    Ok(Some(LineageEntry {
        batch,
        router: id.0,
        action: "rewrite".into(),
        children: Vec::new(),
        k_after: routers.len(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;
    use crate::embedding::HashEmbedder;
    use crate::model::ClientKind;

    fn attr(s: &str) -> Attribute {
        Attribute::new(s).unwrap()
    }

    fn attrs(names: &[&str]) -> BTreeSet<Attribute> {
        names.iter().map(|s| attr(s)).collect()
    }

    fn router(routers: &mut RouterSet, names: &[&str], embedder: &HashEmbedder) -> RouterId {
        let set = attrs(names);
        let profile = MockBackend::new().summarize("", &set).unwrap();
        let embedding = embedder.embed(&profile).unwrap();
        let id = routers.fresh_id();
        routers.insert(RouterAgent { id, profile, attributes: set, embedding, generation: 0 });
        id
    }

    fn gradient_for(router: RouterId, text: &str) -> TextualGradient {
        TextualGradient {
            module_ref: ModuleRef::Router(router),
            reward_text: "reward: 0".into(),
            gradient_text: text.into(),
        }
    }

    #[test]
    fn reward_is_indicator_on_positive() {
        let pos = ClientId::item("i1").unwrap();
        let neg = ClientId::item("i2").unwrap();
        assert_eq!(compute_reward(&pos, &pos), 1);
        assert_eq!(compute_reward(&neg, &pos), 0);
    }

    #[test]
    fn credit_covers_modules_then_routers_in_order() {
        let backend = MockBackend::new();
        let user = ClientId::user("u1").unwrap();
        let pos = ClientId::item("i1").unwrap();
        let neg = ClientId::item("i2").unwrap();
        let inputs = CreditInputs {
            reward: 0,
            user: &user,
            positive: &pos,
            negative: &neg,
            merged_user: "interests: jazz",
            user_own: "interests: jazz",
            merged_positive: "vinyl records",
            merged_negative: "metal",
        };
        let modules = vec![
            (ModuleRef::ClientProfile(user.clone()), "interests: jazz".to_string()),
            (ModuleRef::FilterMem(user.clone()), String::new()),
            (ModuleRef::ClientProfile(pos.clone()), "vinyl records".to_string()),
            (ModuleRef::ClientProfile(neg.clone()), "metal".to_string()),
        ];
        let shares = vec![RouterShare {
            id: RouterId(3),
            delivered: attrs(&["metal"]),
            content: "community interests: metal".into(),
        }];
        let grads = assign_credit(&inputs, &modules, &shares, &backend).unwrap();
        assert_eq!(grads.len(), 5);
        assert_eq!(grads[0].module_ref, ModuleRef::ClientProfile(user.clone()));
        assert_eq!(grads[0].gradient_text, "add:vinyl\nadd:records");
        assert_eq!(grads[4].module_ref, ModuleRef::Router(RouterId(3)));
        assert_eq!(grads[4].gradient_text, "remove:metal");
    }

    #[test]
    fn reward_one_credit_is_all_empty() {
        let backend = MockBackend::new();
        let user = ClientId::user("u1").unwrap();
        let pos = ClientId::item("i1").unwrap();
        let neg = ClientId::item("i2").unwrap();
        let inputs = CreditInputs {
            reward: 1,
            user: &user,
            positive: &pos,
            negative: &neg,
            merged_user: "interests: jazz",
            user_own: "interests: jazz",
            merged_positive: "vinyl",
            merged_negative: "metal",
        };
        let modules = vec![
            (ModuleRef::ClientProfile(user.clone()), "interests: jazz".to_string()),
            (ModuleRef::FilterMem(user.clone()), String::new()),
            (ModuleRef::ClientProfile(pos.clone()), "vinyl".to_string()),
            (ModuleRef::ClientProfile(neg.clone()), "metal".to_string()),
        ];
        let grads = assign_credit(&inputs, &modules, &[], &backend).unwrap();
        assert!(grads.iter().all(|g| g.is_empty()));
    }

    #[test]
    fn empty_gradient_skips_optimizer_entirely() {
        let backend = MockBackend::new();
        let config = NetworkConfig::default();
        let mut client = ClientAgent::new(ClientId::user("u1").unwrap(), "jazz", &config);
        client.attributes = attrs(&["jazz"]);
        let g = TextualGradient {
            module_ref: ModuleRef::ClientProfile(client.id.clone()),
            reward_text: "reward: 1".into(),
            gradient_text: String::new(),
        };
        let diff = optimize_client_profile(&mut client, "interests: jazz, vinyl", &g, &backend)
            .unwrap();
        assert!(diff.is_none());
        assert_eq!(client.profile, "jazz");
        assert_eq!(client.attributes, attrs(&["jazz"]));
        assert_eq!(backend.counters().get(crate::backend::PromptKind::Optimize), 0);
    }

    #[test]
    fn add_directive_updates_profile_and_queues_diff() {
        let backend = MockBackend::new();
        let config = NetworkConfig::default();
        let mut client = ClientAgent::new(ClientId::user("u1").unwrap(), "jazz", &config);
        client.attributes = attrs(&["jazz"]);
        let g = TextualGradient {
            module_ref: ModuleRef::ClientProfile(client.id.clone()),
            reward_text: "reward: 0".into(),
            gradient_text: "add:vinyl".into(),
        };
        let diff =
            optimize_client_profile(&mut client, "interests: jazz", &g, &backend).unwrap();
        assert_eq!(client.profile, "interests: jazz, vinyl");
        assert_eq!(client.attributes, attrs(&["jazz", "vinyl"]));
        let diff = diff.unwrap();
        assert_eq!(diff.added, attrs(&["vinyl"]));
        assert_eq!(diff.client, client.id);
    }

    #[test]
    fn aggregation_counts_negatives_and_keeps_feedback_order() {
        let r = RouterId(7);
        let feedback = vec![
            RouterFeedback {
                client: ClientId::user("u1").unwrap(),
                reward: 0,
                gradient: gradient_for(r, "remove:metal"),
            },
            RouterFeedback {
                client: ClientId::user("u2").unwrap(),
                reward: 1,
                gradient: gradient_for(r, ""),
            },
            RouterFeedback {
                client: ClientId::user("u3").unwrap(),
                reward: 0,
                gradient: gradient_for(r, "remove:noise\nremove:metal"),
            },
        ];
        let agg = aggregate_router_gradients(r, &feedback);
        assert_eq!(agg.negative_count, 2);
        assert_eq!(agg.text, "remove:metal\nremove:noise\nremove:metal");
        assert_eq!(agg.provenance.len(), 3);
        assert!(agg.provenance[0].starts_with("user:u1 (reward 0)"));
    }

    #[test]
    fn decision_policy_walks_split_merge_rewrite_noop() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(64, 42);
        let config =
            NetworkConfig { split_threshold: 2, merge_threshold: 0.9, ..NetworkConfig::default() };
        let mut routers = RouterSet::new();
        let wide = router(&mut routers, &["a", "b", "c"], &embedder);
        let twin_a = router(&mut routers, &["jazz"], &embedder);
        let twin_b = router(&mut routers, &["jazz"], &embedder);
        let lone = router(&mut routers, &["skiing"], &embedder);

        let quiet = AggregatedGradient {
            router: wide,
            text: String::new(),
            negative_count: 0,
            provenance: Vec::new(),
        };
        let noisy = AggregatedGradient {
            router: lone,
            text: "remove:skiing".into(),
            negative_count: 1,
            provenance: Vec::new(),
        };

        let d = decide_router_action(routers.get(wide).unwrap(), &quiet, &routers, &config, &backend)
            .unwrap();
        assert_eq!(d.action, RouterAction::Split);

        let d =
            decide_router_action(routers.get(twin_b).unwrap(), &quiet, &routers, &config, &backend)
                .unwrap();
        assert_eq!(d.action, RouterAction::Merge(twin_a));

        let d = decide_router_action(routers.get(lone).unwrap(), &noisy, &routers, &config, &backend)
            .unwrap();
        assert_eq!(d.action, RouterAction::Rewrite);

        let calm = AggregatedGradient {
            router: lone,
            text: String::new(),
            negative_count: 0,
            provenance: Vec::new(),
        };
        let d = decide_router_action(routers.get(lone).unwrap(), &calm, &routers, &config, &backend)
            .unwrap();
        assert_eq!(d.action, RouterAction::NoOp);
    }

    #[test]
    fn split_partitions_attributes_across_two_children() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(256, 42);
        let mut routers = RouterSet::new();
        let id = router(
            &mut routers,
            &["jazz music", "blues music", "alpine skiing", "nordic skiing"],
            &embedder,
        );
        let before: BTreeSet<Attribute> = routers.get(id).unwrap().attributes.clone();
        let decision = RouterDecision { action: RouterAction::Split, payload: None };
        let entry =
            apply_router_decision(&mut routers, id, &decision, "", 1, 42, &backend, &embedder)
                .unwrap()
                .unwrap();
        assert_eq!(entry.action, "split");
        assert_eq!(entry.children.len(), 2);
        assert_eq!(entry.k_after, 2);
        assert!(routers.get(id).is_none());

        let mut union = BTreeSet::new();
        let mut sides = Vec::new();
        for child in &entry.children {
            let r = routers.get(RouterId(*child)).unwrap();
            assert_eq!(r.generation, 1);
            union.extend(r.attributes.iter().cloned());
            sides.push(r.attributes.clone());
        }
        assert_eq!(union, before);
        assert!(sides[0].is_disjoint(&sides[1]));
        let music = attrs(&["jazz music", "blues music"]);
        assert!(sides.contains(&music), "2-means should separate the shared-token pairs");
    }

    #[test]
    fn single_attribute_split_downgrades_to_rewrite() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(64, 42);
        let mut routers = RouterSet::new();
        let id = router(&mut routers, &["jazz"], &embedder);
        let decision = RouterDecision { action: RouterAction::Split, payload: None };
        let entry =
            apply_router_decision(&mut routers, id, &decision, "", 0, 42, &backend, &embedder)
                .unwrap()
                .unwrap();
        assert_eq!(entry.action, "rewrite");
        assert_eq!(entry.k_after, 1);
        let r = routers.get(id).unwrap();
        assert_eq!(r.attributes, attrs(&["jazz"]));
        assert_eq!(r.generation, 1);
    }

    #[test]
    fn merge_unions_attributes_under_smaller_id() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(64, 42);
        let mut routers = RouterSet::new();
        let a = router(&mut routers, &["jazz"], &embedder);
        let b = router(&mut routers, &["vinyl"], &embedder);
        let decision = RouterDecision { action: RouterAction::Merge(a), payload: None };
        let entry =
            apply_router_decision(&mut routers, b, &decision, "", 2, 42, &backend, &embedder)
                .unwrap()
                .unwrap();
        assert_eq!(entry.action, "merge");
        assert_eq!(entry.router, b.0);
        assert_eq!(entry.children, vec![a.0]);
        assert_eq!(entry.k_after, 1);
        assert!(routers.get(b).is_none());
        let survivor = routers.get(a).unwrap();
        assert_eq!(survivor.attributes, attrs(&["jazz", "vinyl"]));
        assert_eq!(survivor.profile, "community interests: jazz, vinyl");
        assert_eq!(survivor.generation, 1);
    }

    #[test]
    fn merge_with_retired_target_is_a_noop() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(64, 42);
        let mut routers = RouterSet::new();
        let a = router(&mut routers, &["jazz"], &embedder);
        let b = router(&mut routers, &["vinyl"], &embedder);
        routers.remove(a);
        let decision = RouterDecision { action: RouterAction::Merge(a), payload: None };
        let entry =
            apply_router_decision(&mut routers, b, &decision, "", 0, 42, &backend, &embedder)
                .unwrap();
        assert!(entry.is_none());
        assert_eq!(routers.len(), 1);
    }

    #[test]
    fn rewrite_drops_removed_attributes_and_rerenders() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(64, 42);
        let mut routers = RouterSet::new();
        let id = router(&mut routers, &["jazz", "metal"], &embedder);
        let decision = RouterDecision { action: RouterAction::Rewrite, payload: None };
        let entry = apply_router_decision(
            &mut routers,
            id,
            &decision,
            "remove:metal",
            3,
            42,
            &backend,
            &embedder,
        )
        .unwrap()
        .unwrap();
        assert_eq!(entry.action, "rewrite");
        assert!(entry.children.is_empty());
        let r = routers.get(id).unwrap();
        assert_eq!(r.attributes, attrs(&["jazz"]));
        assert_eq!(r.profile, "community interests: jazz");
        assert_eq!(r.generation, 1);
        let expected = embedder.embed("community interests: jazz").unwrap();
        assert_eq!(r.embedding, expected);
    }

    #[test]
    fn rewrite_that_would_empty_the_router_is_skipped() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(64, 42);
        let mut routers = RouterSet::new();
        let id = router(&mut routers, &["jazz"], &embedder);
        let decision = RouterDecision { action: RouterAction::Rewrite, payload: None };
        let entry = apply_router_decision(
            &mut routers,
            id,
            &decision,
            "remove:jazz",
            0,
            42,
            &backend,
            &embedder,
        )
        .unwrap();
        assert!(entry.is_none());
        let r = routers.get(id).unwrap();
        assert_eq!(r.attributes, attrs(&["jazz"]));
        assert_eq!(r.generation, 0);
    }

    #[test]
    fn payload_rewrite_replaces_profile_and_reextracts() {
        let backend = MockBackend::new();
        let embedder = HashEmbedder::new(64, 42);
        let mut routers = RouterSet::new();
        let id = router(&mut routers, &["jazz", "metal"], &embedder);
        let decision = RouterDecision {
            action: RouterAction::Rewrite,
            payload: Some("community interests: jazz, swing".into()),
        };
        apply_router_decision(&mut routers, id, &decision, "", 0, 42, &backend, &embedder)
            .unwrap()
            .unwrap();
        let r = routers.get(id).unwrap();
        assert_eq!(r.attributes, attrs(&["jazz", "swing"]));
    }

    #[test]
    fn feedback_record_round_trips_through_json() {
        let record = InteractionRecord::new(
            ClientId::user("u1").unwrap(),
            ClientId::item("i1").unwrap(),
            ClientId::item("i2").unwrap(),
            7,
        )
        .unwrap();
        let fb = FeedbackRecord {
            chosen: record.positive.clone(),
            reward: 1,
            involved_modules: vec![
                ModuleRef::ClientProfile(record.user.clone()),
                ModuleRef::FilterMem(record.user.clone()),
            ],
            contributing_routers: BTreeSet::from([RouterId(0), RouterId(2)]),
            record,
        };
        let json = serde_json::to_string(&fb).unwrap();
        let back: FeedbackRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fb);
    }

    #[test]
    fn client_kind_guard_still_holds_for_records() {
        let err = InteractionRecord::new(
            ClientId::user("u1").unwrap(),
            ClientId::item("i1").unwrap(),
            ClientId::item("i1").unwrap(),
            0,
        );
        assert!(err.is_err());
        let _ = ClientKind::User;
    }
}
