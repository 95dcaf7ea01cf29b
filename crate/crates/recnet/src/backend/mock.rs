//! Deterministic prompt backend. Every operation is a pure function of its
//! inputs, so runs are reproducible and oracle-checkable without a network.

use std::collections::BTreeSet;

use crate::model::{
    Attribute, ClientId, FilterMemory, ModuleRef, PropagatedMessage, TextualGradient,
};
use crate::text::distinct_content_tokens;

use super::{
    overlap_rank, parse_directives, render_client_profile, render_router_profile,
    BackendError, CallCounters, Directive, GradientContext, PredictOutcome, PromptBackend,
    PromptKind, RouterAction, RouterDecision, RouterFacts, jaccard, MAX_ATTRIBUTES,
};

/// The offline stand-in for a language model.
#[derive(Debug, Default)]
pub struct MockBackend {
    counters: CallCounters,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    distinct_content_tokens(text).into_iter().collect()
}

fn attrs_of(text: &str) -> BTreeSet<Attribute> {
    distinct_content_tokens(text)
        .into_iter()
        .take(MAX_ATTRIBUTES)
        .map(|t| Attribute::new(&t).expect("tokenizer yields normalized tokens"))
        .collect()
}

impl PromptBackend for MockBackend {
    fn extract(&self, profile: &str) -> Result<BTreeSet<Attribute>, BackendError> {
        self.counters.bump(PromptKind::Extract);
        Ok(attrs_of(profile))
    }

    fn summarize(
        &self,
        router_profile: &str,
        new_attrs: &BTreeSet<Attribute>,
    ) -> Result<String, BackendError> {
        self.counters.bump(PromptKind::Summarize);
        if new_attrs.is_empty() {
            return Ok(router_profile.to_string());
        }
        let mut union = attrs_of(router_profile);
        union.extend(new_attrs.iter().cloned());
        Ok(render_router_profile(&union))
    }

    fn merge(
        &self,
        buffered: &[PropagatedMessage],
        filter: &FilterMemory,
        profile: &str,
    ) -> Result<String, BackendError> {
        self.counters.bump(PromptKind::Merge);
        if buffered.is_empty() {
            return Ok(profile.to_string());
        }
        let own = distinct_content_tokens(profile);
        let mut seen: BTreeSet<String> = own.iter().cloned().collect();
        let mut tokens = own;
        for msg in buffered {
            for attr in &msg.router_attributes {
                if seen.contains(attr.as_str()) || filter.denies(attr) {
                    continue;
                }
                seen.insert(attr.as_str().to_string());
                tokens.push(attr.as_str().to_string());
            }
        }
        if tokens.len() > MAX_ATTRIBUTES {
            let overflow = tokens.split_off(MAX_ATTRIBUTES);
            for t in overflow {
                let attr = Attribute::new(&t).expect("normalized token");
                if filter.allows(&attr) {
                    tokens.push(t);
                }
            }
        }
        Ok(render_client_profile(&tokens))
    }

    fn predict(
        &self,
        user_profile: &str,
        positive: (&ClientId, &str),
        negative: (&ClientId, &str),
    ) -> Result<PredictOutcome, BackendError> {
        self.counters.bump(PromptKind::Predict);
        let user = token_set(user_profile);
        let pos_overlap = jaccard(&user, &token_set(positive.1));
        let neg_overlap = jaccard(&user, &token_set(negative.1));
        let chosen = if pos_overlap > neg_overlap {
            positive.0
        } else if neg_overlap > pos_overlap {
            negative.0
        } else if fnv1a(0, &positive.0.raw) <= fnv1a(0, &negative.0.raw) {
            positive.0
        } else {
            negative.0
        };
        Ok(PredictOutcome {
            chosen: chosen.clone(),
            rationale: format!("overlap {pos_overlap:.4} vs {neg_overlap:.4}"),
        })
    }

    fn gradient(
        &self,
        module: &ModuleRef,
        ctx: &GradientContext<'_>,
    ) -> Result<TextualGradient, BackendError> {
        self.counters.bump(PromptKind::Gradient);
        let reward_text = if ctx.reward == 1 {
            "reward 1: the positive item was chosen".to_string()
        } else {
            format!("reward 0: {} was chosen over {}", ctx.negative.raw, ctx.positive.raw)
        };
        let directives = if ctx.reward == 1 {
            Vec::new()
        } else {
            mock_directives(module, ctx)
        };
        Ok(TextualGradient {
            module_ref: module.clone(),
            reward_text,
            gradient_text: directives.join("\n"),
        })
    }

    fn optimize_profile(
        &self,
        profile: &str,
        gradient_text: &str,
    ) -> Result<String, BackendError> {
        self.counters.bump(PromptKind::Optimize);
        let (directives, _) = parse_directives(gradient_text);
        let mut tokens = distinct_content_tokens(profile);
        let mut touched = false;
        for d in directives {
            match d {
                Directive::Add(a) => {
                    touched = true;
                    if !tokens.iter().any(|t| t == a.as_str()) {
                        tokens.push(a.as_str().to_string());
                    }
                }
                Directive::Remove(a) => {
                    touched = true;
                    tokens.retain(|t| t != a.as_str());
                }
                _ => {}
            }
        }
        if !touched {
            return Ok(profile.to_string());
        }
        Ok(render_client_profile(&tokens))
    }

    fn decide_router(
        &self,
        facts: &RouterFacts,
        _aggregated: &str,
    ) -> Result<RouterDecision, BackendError> {
        self.counters.bump(PromptKind::Optimize);
        let action = if facts.attr_count > facts.split_threshold {
            RouterAction::Split
        } else if let Some(other) = facts.merge_candidate {
            RouterAction::Merge(other)
        } else if facts.negative_count > 0 {
            RouterAction::Rewrite
        } else {
            RouterAction::NoOp
        };
        Ok(RouterDecision { action, payload: None })
    }

    fn rank(
        &self,
        user_profile: &str,
        candidates: &[(ClientId, String)],
    ) -> Result<Vec<ClientId>, BackendError> {
        self.counters.bump(PromptKind::Rank);
        Ok(overlap_rank(user_profile, candidates))
    }

    fn counters(&self) -> &CallCounters {
        &self.counters
    }
}

/// Reward-0 directive generation, per module role.
fn mock_directives(module: &ModuleRef, ctx: &GradientContext<'_>) -> Vec<String> {
    let merged_user = token_set(ctx.merged_user);
    match module {
        ModuleRef::ClientProfile(id) if id == ctx.user => {
            distinct_content_tokens(ctx.merged_positive)
                .into_iter()
                .filter(|t| !merged_user.contains(t))
                .map(|t| format!("add:{t}"))
                .collect()
        }
        ModuleRef::ClientProfile(id) if id == ctx.positive => {
            let merged_pos = token_set(ctx.merged_positive);
            distinct_content_tokens(ctx.merged_user)
                .into_iter()
                .filter(|t| !merged_pos.contains(t))
                .map(|t| format!("add:{t}"))
                .collect()
        }
        ModuleRef::ClientProfile(_) => Vec::new(),
        ModuleRef::FilterMem(id) if id == ctx.user => {
            let own = token_set(ctx.user_own);
            distinct_content_tokens(ctx.merged_negative)
                .into_iter()
                .filter(|t| merged_user.contains(t) && !own.contains(t))
                .map(|t| format!("rule:deny:{t}"))
                .collect()
        }
        ModuleRef::FilterMem(_) => Vec::new(),
        ModuleRef::Router(_) => {
            let negative = token_set(ctx.merged_negative);
            ctx.router_delivered
                .map(|delivered| {
                    delivered
                        .iter()
                        .filter(|a| negative.contains(a.as_str()))
                        .map(|a| format!("remove:{a}"))
                        .collect()
                })
                .unwrap_or_default()
        }
    }
}
