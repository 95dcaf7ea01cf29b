//! Personalized preference reception: drain a client's message buffer into
//! an ephemeral merged profile under its filter rules, and maintain the
//! rules themselves from gradient directives.

use crate::backend::{BackendError, Directive, PromptBackend};
use crate::model::{ClientAgent, FilterMemory, FilterRule, RuleAction};

/// Merge the buffered messages into the client's profile and clear the
/// buffer. An empty buffer returns the stored profile without touching the
/// backend; a backend error leaves the buffer intact so the call is
/// retry-safe. The stored profile itself is never replaced here.
pub fn flush_and_merge(
    client: &mut ClientAgent,
    backend: &dyn PromptBackend,
) -> Result<String, BackendError> {
    let filter = client.filter_memory.clone();
    flush_and_merge_filtered(client, &filter, backend)
}

/// As [`flush_and_merge`], but with an explicit filter so variants that
/// ignore filter memory can pass an empty one.
pub fn flush_and_merge_filtered(
    client: &mut ClientAgent,
    filter: &FilterMemory,
    backend: &dyn PromptBackend,
) -> Result<String, BackendError> {
    if client.buffer.is_empty() {
        return Ok(client.profile.clone());
    }
    let entries: Vec<_> = client.buffer.entries().cloned().collect();
    let merged = backend.merge(&entries, filter, &client.profile)?;
    client.buffer.drain();
    Ok(merged)
}

/// Apply rule directives to a filter memory; non-rule directives are
/// ignored here (they target profiles).
pub fn apply_rule_directives(filter: &mut FilterMemory, directives: &[Directive]) {
    for d in directives {
        match d {
            Directive::RuleAllow(pattern) => filter.add_rule(FilterRule {
                action: RuleAction::Allow,
                pattern: pattern.clone(),
            }),
            Directive::RuleDeny(pattern) => filter.add_rule(FilterRule {
                action: RuleAction::Deny,
                pattern: pattern.clone(),
            }),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::backend::{parse_directives, MockBackend, PromptKind};
    use crate::model::{Attribute, ClientId, NetworkConfig, RouterId};

    fn attr(s: &str) -> Attribute {
        Attribute::new(s).unwrap()
    }

    fn client(profile: &str) -> ClientAgent {
        ClientAgent::new(ClientId::user("u1").unwrap(), profile, &NetworkConfig::default())
    }

    fn push(c: &mut ClientAgent, names: &[&str]) {
        let attrs: BTreeSet<Attribute> = names.iter().map(|s| attr(s)).collect();
        c.buffer.push(RouterId(0), format!("community interests: {}", names.join(", ")), attrs);
    }

    #[test]
    fn empty_buffer_merges_without_backend_calls() {
        let backend = MockBackend::new();
        let mut c = client("Original Profile");
        let merged = flush_and_merge(&mut c, &backend).unwrap();
        assert_eq!(merged, "Original Profile");
        assert_eq!(backend.counters().get(PromptKind::Merge), 0);
    }

    #[test]
    fn merge_clears_buffer_and_leaves_profile_stored() {
        let backend = MockBackend::new();
        let mut c = client("jazz");
        push(&mut c, &["vinyl"]);
        let merged = flush_and_merge(&mut c, &backend).unwrap();
        assert_eq!(merged, "interests: jazz, vinyl");
        assert!(c.buffer.is_empty());
        assert_eq!(c.profile, "jazz");
        assert_eq!(backend.counters().get(PromptKind::Merge), 1);
    }

    #[test]
    fn deny_rule_limits_incoming_tokens() {
        let backend = MockBackend::new();
        let mut c = client("jazz");
        let (directives, _) = parse_directives("rule:deny:metal");
        apply_rule_directives(&mut c.filter_memory, &directives);
        push(&mut c, &["metal", "vinyl"]);
        let merged = flush_and_merge(&mut c, &backend).unwrap();
        assert_eq!(merged, "interests: jazz, vinyl");
    }

    #[test]
    fn deny_rules_are_monotone_under_mock() {
        let backend = MockBackend::new();
        let tokens = ["metal", "vinyl", "noise", "jazz"];
        for denied in tokens {
            let mut plain = client("swing");
            push(&mut plain, &tokens);
            let baseline = flush_and_merge(&mut plain, &backend).unwrap();
            let base_set = backend.extract(&baseline).unwrap();

            let mut filtered = client("swing");
            let (ds, _) = parse_directives(&format!("rule:deny:{denied}"));
            apply_rule_directives(&mut filtered.filter_memory, &ds);
            push(&mut filtered, &tokens);
            let merged = flush_and_merge(&mut filtered, &backend).unwrap();
            let got = backend.extract(&merged).unwrap();
            assert!(got.is_subset(&base_set), "deny:{denied} grew the merge");
        }
    }

    #[test]
    fn rule_directives_dedupe_and_evict() {
        let mut filter = FilterMemory::new(2);
        let (ds, _) = parse_directives("rule:deny:a\nrule:deny:a\nrule:allow:b\nrule:deny:c");
        apply_rule_directives(&mut filter, &ds);
        assert_eq!(filter.rules().len(), 2);
        assert!(filter.allows(&attr("b")));
        assert!(filter.denies(&attr("c")));
        assert!(!filter.denies(&attr("a")));
    }

    #[test]
    fn non_rule_directives_ignored() {
        let mut filter = FilterMemory::new(4);
        let (ds, _) = parse_directives("add:x\nremove:y\nrouter:split");
        apply_rule_directives(&mut filter, &ds);
        assert!(filter.is_empty());
    }

    #[test]
    fn buffer_invariants_hold_for_all_short_push_sequences() {
        for capacity in 1..=3usize {
            for len in 0..=6usize {
                let mut c = ClientAgent::new(
                    ClientId::user("u").unwrap(),
                    "",
                    &NetworkConfig { buffer_capacity: capacity, ..NetworkConfig::default() },
                );
                for i in 0..len {
                    push(&mut c, &[&format!("t{i}")]);
                    assert!(c.buffer.len() <= capacity);
                    let seqs: Vec<u64> = c.buffer.entries().map(|m| m.seq).collect();
                    assert!(seqs.windows(2).all(|w| w[0] > w[1]), "seq not decreasing");
                    let newest = c.buffer.entries().next().unwrap();
                    assert_eq!(newest.seq as usize, i, "LIFO order broken");
                }
            }
        }
    }
}
