//! Chat-completions prompt backend. Templates are versioned text files
//! with {{placeholder}} slots; responses are parsed defensively and
//! downgraded rather than trusted.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use crate::model::{
    Attribute, ClientId, FilterMemory, HttpBackendConfig, ModuleRef, PropagatedMessage,
    RuleAction, TextualGradient,
};

use super::{
    overlap_rank, render_router_profile, BackendError, CallCounters, GradientContext,
    PredictOutcome, PromptBackend, PromptKind, RouterAction, RouterDecision, RouterFacts,
    MAX_ATTRIBUTES,
};

const EXTRACT_TEMPLATE: &str = include_str!("../../prompts/extract.txt");
const SUMMARIZE_TEMPLATE: &str = include_str!("../../prompts/summarize.txt");
const MERGE_TEMPLATE: &str = include_str!("../../prompts/merge.txt");
const PREDICT_TEMPLATE: &str = include_str!("../../prompts/predict.txt");
const GRADIENT_TEMPLATE: &str = include_str!("../../prompts/gradient.txt");
const OPTIMIZE_TEMPLATE: &str = include_str!("../../prompts/optimize.txt");
const RANK_TEMPLATE: &str = include_str!("../../prompts/rank.txt");

fn fill(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

struct Templates {
    extract: String,
    summarize: String,
    merge: String,
    predict: String,
    gradient: String,
    optimize: String,
    rank: String,
}

impl Templates {
    fn load(prompt_dir: Option<&str>) -> Self {
        let read = |name: &str, fallback: &str| -> String {
            match prompt_dir {
                Some(dir) => std::fs::read_to_string(Path::new(dir).join(name))
                    .unwrap_or_else(|_| fallback.to_string()),
                None => fallback.to_string(),
            }
        };
        Self {
            extract: read("extract.txt", EXTRACT_TEMPLATE),
            summarize: read("summarize.txt", SUMMARIZE_TEMPLATE),
            merge: read("merge.txt", MERGE_TEMPLATE),
            predict: read("predict.txt", PREDICT_TEMPLATE),
            gradient: read("gradient.txt", GRADIENT_TEMPLATE),
            optimize: read("optimize.txt", OPTIMIZE_TEMPLATE),
            rank: read("rank.txt", RANK_TEMPLATE),
        }
    }
}

/// Prompt backend over an OpenAI-style chat completions endpoint.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    credential: String,
    templates: Templates,
    counters: CallCounters,
}

impl HttpBackend {
    /// Reads the credential at construction so a missing variable is a
    /// configuration error, not a mid-run surprise.
    pub fn new(config: &HttpBackendConfig) -> Result<Self, BackendError> {
        let credential = std::env::var(&config.credential_env)
            .map_err(|_| BackendError::MissingCredential(config.credential_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            credential,
            templates: Templates::load(config.prompt_dir.as_deref()),
            counters: CallCounters::default(),
        })
    }

    fn chat(&self, kind: PromptKind, prompt: &str) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut last = String::new();
        let mut rate_limited = false;
        for attempt in 0..3u32 {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << attempt));
            }
            let sent = self
                .agent
                .post(&self.url)
                .header("authorization", &format!("Bearer {}", self.credential))
                .send_json(&body);
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    rate_limited = false;
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status == 429 {
                rate_limited = true;
                last = "status 429".to_string();
                let wait = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|s| s.trim().parse::<u64>().ok())
                    .unwrap_or(1)
                    .min(30);
                std::thread::sleep(Duration::from_secs(wait));
                continue;
            }
            if status >= 500 {
                rate_limited = false;
                last = format!("status {status}");
                continue;
            }
            if status >= 400 {
                return Err(BackendError::Unavailable {
                    kind,
                    detail: format!("status {status}"),
                });
            }
            let parsed: serde_json::Value = resp.body_mut().read_json().map_err(|e| {
                BackendError::Unavailable { kind, detail: format!("bad response body: {e}") }
            })?;
            return parsed
                .pointer("/choices/0/message/content")
                .and_then(|v| v.as_str())
                .map(|s| s.trim().to_string())
                .ok_or_else(|| BackendError::Unavailable {
                    kind,
                    detail: "response missing choices[0].message.content".to_string(),
                });
        }
        if rate_limited {
            Err(BackendError::RateLimited)
        } else {
            Err(BackendError::Unavailable { kind, detail: last })
        }
    }
}

/// Comma/newline-separated reply → normalized attribute set, capped.
fn parse_extract_response(response: &str) -> BTreeSet<Attribute> {
    response
        .split([',', '\n', ';'])
        .filter_map(|chunk| Attribute::new(chunk).ok())
        .take(MAX_ATTRIBUTES)
        .collect()
}

/// Find which candidate the reply names: raw ids first, then the A/B
/// letters as standalone words. None means unparseable.
fn parse_predict_choice(
    response: &str,
    a: &ClientId,
    b: &ClientId,
) -> Option<ClientKindChoice> {
    let lower = response.to_lowercase();
    let has_a = lower.contains(&a.raw.to_lowercase());
    let has_b = lower.contains(&b.raw.to_lowercase());
    match (has_a, has_b) {
        (true, false) => return Some(ClientKindChoice::A),
        (false, true) => return Some(ClientKindChoice::B),
        _ => {}
    }
    for (i, c) in response.char_indices() {
        if c != 'A' && c != 'B' {
            continue;
        }
        let before = response[..i].chars().next_back();
        let after = response[i + 1..].chars().next();
        let bounded = |ch: Option<char>| ch.is_none_or(|x| !x.is_alphanumeric());
        if bounded(before) && bounded(after) {
            return Some(if c == 'A' { ClientKindChoice::A } else { ClientKindChoice::B });
        }
    }
    None
}

enum ClientKindChoice {
    A,
    B,
}

/// First line of the optimizer reply → structural router action.
fn parse_router_decision(response: &str, self_id: u64) -> Option<RouterAction> {
    let line = response.lines().next()?.trim().to_lowercase();
    if line.contains("split") {
        return Some(RouterAction::Split);
    }
    if line.contains("rewrite") {
        return Some(RouterAction::Rewrite);
    }
    if line.contains("noop") || line.contains("no-op") || line.contains("keep") {
        return Some(RouterAction::NoOp);
    }
    if line.contains("merge") {
        let digits: String = line
            .chars()
            .skip_while(|c| !c.is_ascii_digit())
            .take_while(|c| c.is_ascii_digit())
            .collect();
        let id = digits.parse::<u64>().ok()?;
        if id == self_id {
            return None;
        }
        return Some(RouterAction::Merge(crate::model::RouterId(id)));
    }
    None
}

/// Reply → full permutation of candidate ids, or None when malformed.
fn parse_rank_response(response: &str, candidates: &[(ClientId, String)]) -> Option<Vec<ClientId>> {
    let mut remaining: Vec<&ClientId> = candidates.iter().map(|(id, _)| id).collect();
    let mut ordered = Vec::with_capacity(candidates.len());
    for chunk in response.split(|c: char| c == ',' || c.is_whitespace()) {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        if let Some(pos) = remaining.iter().position(|id| id.raw == chunk) {
            ordered.push(remaining.remove(pos).clone());
        }
    }
    if remaining.is_empty() {
        Some(ordered)
    } else {
        None
    }
}

fn render_messages(buffered: &[PropagatedMessage]) -> String {
    if buffered.is_empty() {
        return "(none)".to_string();
    }
    buffered
        .iter()
        .map(|m| format!("- [{}] {}", m.router_id, m.router_profile))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_rules(filter: &FilterMemory) -> String {
    if filter.is_empty() {
        return "(none)".to_string();
    }
    filter
        .rules()
        .iter()
        .map(|r| match r.action {
            RuleAction::Allow => format!("- always keep: {}", r.pattern),
            RuleAction::Deny => format!("- never integrate: {}", r.pattern),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl PromptBackend for HttpBackend {
    fn extract(&self, profile: &str) -> Result<BTreeSet<Attribute>, BackendError> {
        self.counters.bump(PromptKind::Extract);
        if profile.trim().is_empty() {
            return Ok(BTreeSet::new());
        }
        let prompt = fill(&self.templates.extract, &[("profile", profile)]);
        Ok(parse_extract_response(&self.chat(PromptKind::Extract, &prompt)?))
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
        let listed = render_router_profile(new_attrs);
        let prompt = fill(
            &self.templates.summarize,
            &[("profile", router_profile), ("new_attributes", &listed)],
        );
        self.chat(PromptKind::Summarize, &prompt)
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
        let prompt = fill(
            &self.templates.merge,
            &[
                ("profile", profile),
                ("rules", &render_rules(filter)),
                ("messages", &render_messages(buffered)),
            ],
        );
        self.chat(PromptKind::Merge, &prompt)
    }

    fn predict(
        &self,
        user_profile: &str,
        positive: (&ClientId, &str),
        negative: (&ClientId, &str),
    ) -> Result<PredictOutcome, BackendError> {
        self.counters.bump(PromptKind::Predict);
        let prompt = fill(
            &self.templates.predict,
            &[
                ("user_profile", user_profile),
                ("candidate_a_id", &positive.0.raw),
                ("candidate_a_profile", positive.1),
                ("candidate_b_id", &negative.0.raw),
                ("candidate_b_profile", negative.1),
            ],
        );
        let response = self.chat(PromptKind::Predict, &prompt)?;
        match parse_predict_choice(&response, positive.0, negative.0) {
            Some(ClientKindChoice::A) => Ok(PredictOutcome {
                chosen: positive.0.clone(),
                rationale: response,
            }),
            Some(ClientKindChoice::B) => Ok(PredictOutcome {
                chosen: negative.0.clone(),
                rationale: response,
            }),
            None => Ok(PredictOutcome {
                chosen: negative.0.clone(),
                rationale: format!("unparseable reply treated as wrong prediction: {response}"),
            }),
        }
    }

    fn gradient(
        &self,
        module: &ModuleRef,
        ctx: &GradientContext<'_>,
    ) -> Result<TextualGradient, BackendError> {
        self.counters.bump(PromptKind::Gradient);
        let context = format!(
            "user {}: {}\npositive item {}: {}\nnegative item {}: {}",
            ctx.user.raw,
            ctx.merged_user,
            ctx.positive.raw,
            ctx.merged_positive,
            ctx.negative.raw,
            ctx.merged_negative,
        );
        let prompt = fill(
            &self.templates.gradient,
            &[
                ("reward", &ctx.reward.to_string()),
                ("module", &module.to_string()),
                ("content", ctx.module_content),
                ("context", &context),
            ],
        );
        let response = self.chat(PromptKind::Gradient, &prompt)?;
        let (reward_text, gradient_text) = match response.split_once('\n') {
            Some((first, rest)) => (first.to_string(), rest.to_string()),
            None => (response.clone(), String::new()),
        };
        Ok(TextualGradient { module_ref: module.clone(), reward_text, gradient_text })
    }

    fn optimize_profile(
        &self,
        profile: &str,
        gradient_text: &str,
    ) -> Result<String, BackendError> {
        self.counters.bump(PromptKind::Optimize);
        if gradient_text.trim().is_empty() {
            return Ok(profile.to_string());
        }
        let prompt = fill(
            &self.templates.optimize,
            &[("module_kind", "profile"), ("content", profile), ("gradient", gradient_text)],
        );
        self.chat(PromptKind::Optimize, &prompt)
    }

    fn decide_router(
        &self,
        facts: &RouterFacts,
        aggregated: &str,
    ) -> Result<RouterDecision, BackendError> {
        self.counters.bump(PromptKind::Optimize);
        let content = format!(
            "router {} holds {} attributes (split above {}); \
             most similar mergeable router: {}; \
             negative-feedback gradients this batch: {}",
            facts.router_id,
            facts.attr_count,
            facts.split_threshold,
            facts
                .merge_candidate
                .map(|id| id.to_string())
                .unwrap_or_else(|| "none".to_string()),
            facts.negative_count,
        );
        let prompt = fill(
            &self.templates.optimize,
            &[("module_kind", "router"), ("content", &content), ("gradient", aggregated)],
        );
        let response = self.chat(PromptKind::Optimize, &prompt)?;
        match parse_router_decision(&response, facts.router_id.0) {
            Some(action) => {
                let payload = match action {
                    RouterAction::Rewrite => response
                        .split_once('\n')
                        .map(|(_, rest)| rest.trim().to_string())
                        .filter(|s| !s.is_empty()),
                    _ => None,
                };
                Ok(RouterDecision { action, payload })
            }
            None => {
                eprintln!(
                    "warning: unparseable router decision for {}, keeping as-is",
                    facts.router_id
                );
                Ok(RouterDecision::noop())
            }
        }
    }

    fn rank(
        &self,
        user_profile: &str,
        candidates: &[(ClientId, String)],
    ) -> Result<Vec<ClientId>, BackendError> {
        self.counters.bump(PromptKind::Rank);
        let listed = candidates
            .iter()
            .map(|(id, profile)| format!("- {}: {}", id.raw, profile))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = fill(
            &self.templates.rank,
            &[("user_profile", user_profile), ("candidates", &listed)],
        );
        for _ in 0..2 {
            let response = self.chat(PromptKind::Rank, &prompt)?;
            if let Some(ordered) = parse_rank_response(&response, candidates) {
                return Ok(ordered);
            }
        }
        eprintln!("warning: unparseable ranking reply twice, falling back to overlap order");
        Ok(overlap_rank(user_profile, candidates))
    }

    fn counters(&self) -> &CallCounters {
        &self.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RouterId;

    fn item(raw: &str) -> ClientId {
        ClientId::item(raw).unwrap()
    }

    #[test]
    fn fill_replaces_named_placeholders() {
        let out = fill("x {{a}} y {{b}} {{a}}", &[("a", "1"), ("b", "2")]);
        assert_eq!(out, "x 1 y 2 1");
    }

    #[test]
    fn extract_response_parsing_normalizes_and_caps() {
        let got = parse_extract_response("Jazz, VINYL; , bebop\nlive sets");
        let names: Vec<&str> = got.iter().map(|a| a.as_str()).collect();
        assert_eq!(names, ["bebop", "jazz", "live sets", "vinyl"]);
    }

    #[test]
    fn predict_choice_prefers_ids_then_letters() {
        let a = item("B004X");
        let b = item("B009Z");
        assert!(matches!(
            parse_predict_choice("the user would pick b009z here", &a, &b),
            Some(ClientKindChoice::B)
        ));
        assert!(matches!(
            parse_predict_choice("Item B looks closer to the profile", &a, &b),
            Some(ClientKindChoice::B)
        ));
        assert!(matches!(
            parse_predict_choice("A. it matches the jazz interest", &a, &b),
            Some(ClientKindChoice::A)
        ));
        assert!(parse_predict_choice("neither is convincing", &a, &b).is_none());
    }

    #[test]
    fn router_decision_parsing() {
        assert_eq!(parse_router_decision("split", 1), Some(RouterAction::Split));
        assert_eq!(parse_router_decision("Merge: R4", 1), Some(RouterAction::Merge(RouterId(4))));
        assert_eq!(parse_router_decision("merge:1", 1), None);
        assert_eq!(parse_router_decision("rewrite\nnew text", 1), Some(RouterAction::Rewrite));
        assert_eq!(parse_router_decision("noop", 1), Some(RouterAction::NoOp));
        assert_eq!(parse_router_decision("do a barrel roll", 1), None);
    }

    #[test]
    fn rank_parsing_requires_full_permutation() {
        let cands = vec![
            (item("x1"), String::new()),
            (item("x2"), String::new()),
            (item("x3"), String::new()),
        ];
        let ok = parse_rank_response("x2, x3, x1", &cands).unwrap();
        assert_eq!(ok.iter().map(|c| c.raw.as_str()).collect::<Vec<_>>(), ["x2", "x3", "x1"]);
        assert!(parse_rank_response("x2 and then x1", &cands).is_none());
    }
}
