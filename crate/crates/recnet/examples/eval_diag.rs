//! Scratch diagnostic: where does NDCG@5 go per variant on the planted fixture?

use std::collections::BTreeSet;
use std::path::Path;

use recnet::eval::{ingest, make_split, ndcg_at_k, rank_candidates, train_engine, Format};
use recnet::model::{ClientId, NetworkConfig, Variant};

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn group_of(s: &str) -> Option<usize> {
    let b = s.as_bytes();
    if b.len() >= 2 && b[0] == b'g' && b[1].is_ascii_digit() {
        Some((b[1] - b'0') as usize)
    } else {
        None
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn main() {
    let ds = ingest(Path::new("crates/recnet/fixtures/planted.jsonl"), Format::Recnet).unwrap();
    let split = make_split(&ds, 42, 1).unwrap();
    let titles = ds.item_titles();
    for variant in [Variant::Full, Variant::NoCprEm] {
        let config = NetworkConfig {
            k_init: 8,
            tau: 0.3,
            update_size: 16,
            embedding_dim: 64,
            split_threshold: 16,
            merge_threshold: 0.12,
            seed: 42,
            variant,
            ..NetworkConfig::default()
        };
        let mut engine = train_engine(&ds, &split, &config).unwrap();

        if variant == Variant::Full {
            use recnet::eval::{build_backends, build_records, initial_profiles};
            use recnet::engine::Engine;
            let (backend, embedder) = build_backends(&config).unwrap();
            let mut probe = Engine::new(config.clone(), backend, embedder).unwrap();
            probe.initialize(initial_profiles(&ds).unwrap()).unwrap();
            let records = build_records(&ds, &split.training, config.seed).unwrap();
            let watch = ClientId::user("g0u000").unwrap();
            let mut r0 = 0usize;
            let mut r1 = 0usize;
            for record in &records {
                let fb = probe.step(record).unwrap();
                if fb.reward == 0 {
                    r0 += 1;
                } else {
                    r1 += 1;
                }
                if record.user == watch {
                    let c = probe.client(&watch).unwrap();
                    println!(
                        "  watch {} reward {} profile {:?} attrs {} buffer {}",
                        record.positive,
                        fb.reward,
                        c.profile,
                        c.attributes.len(),
                        c.buffer.entries().count()
                    );
                }
                probe.maybe_run_router_stage().unwrap();
            }
            probe.flush_pending().unwrap();
            println!("  rewards: {r0} zero / {r1} one");
        }

        if variant == Variant::Full {
            println!("== routers (full) ==");
            let ids: Vec<_> = engine.routers().iter().map(|r| r.id).collect();
            for rid in ids {
                let r = engine.routers().get(rid).unwrap();
                let mut per_group = [0usize; 8];
                for a in &r.attributes {
                    if let Some(g) = group_of(a.as_str()) {
                        per_group[g.min(7)] += 1;
                    }
                }
                let total: usize = per_group.iter().sum();
                let purity =
                    per_group.iter().max().copied().unwrap_or(0) as f64 / total.max(1) as f64;
                println!(
                    "  router {} attrs {} groups {:?} purity {purity:.2}",
                    r.id.0,
                    r.attributes.len(),
                    &per_group[..4]
                );
            }
        }

        let mut sum5 = 0.0;
        let mut n = 0usize;
        let mut truth_ranks = vec![0usize; 11];
        let mut foreign_in_top5 = 0usize;
        let mut user_own_tok = 0usize;
        let mut user_foreign_tok = 0usize;
        let mut user_total_tok = 0usize;
        let mut truth_beaten_by_same = 0usize;
        let mut truth_beaten_by_foreign = 0usize;
        let mut shown = 0;
        for list in &split.lists[0] {
            let user = ClientId::user(&list.user).unwrap();
            let ug = group_of(&list.user).unwrap();
            let candidates: Vec<ClientId> =
                list.candidates.iter().map(|c| ClientId::item(c).unwrap()).collect();
            let ranked = rank_candidates(&mut engine, &user, &candidates, false).unwrap();
            let ranked_raw: Vec<String> = ranked.iter().map(|c| c.raw.clone()).collect();
            let score = ndcg_at_k(&ranked_raw, &list.truth, 5).unwrap();
            sum5 += score;
            n += 1;
            let rank = ranked_raw.iter().position(|r| r == &list.truth).unwrap() + 1;
            truth_ranks[rank.min(10)] += 1;
            for r in ranked_raw.iter().take(5) {
                if group_of(r) != Some(ug) {
                    foreign_in_top5 += 1;
                }
            }
            for r in ranked_raw.iter().take(rank - 1) {
                if group_of(r) == Some(ug) {
                    truth_beaten_by_same += 1;
                } else {
                    truth_beaten_by_foreign += 1;
                }
            }
            let client = engine.client(&user).unwrap();
            let mut text = client.profile.clone();
            for entry in client.buffer.entries() {
                text.push(' ');
                text.push_str(&entry.router_profile);
            }
            let toks = tokens(&text);
            user_total_tok += toks.len();
            for t in &toks {
                match group_of(t) {
                    Some(g) if g == ug => user_own_tok += 1,
                    Some(_) => user_foreign_tok += 1,
                    None => {}
                }
            }
            if shown < 6 {
                shown += 1;
                let entries: Vec<_> = client.buffer.entries().cloned().collect();
                let merged = if entries.is_empty() {
                    client.profile.clone()
                } else {
                    engine
                        .backend()
                        .merge(&entries, &client.filter_memory, &client.profile)
                        .unwrap()
                };
                println!(
                    "  MERGED {}: {:?} (buffer {} filters {})",
                    list.user,
                    merged,
                    client.buffer.entries().count(),
                    client.filter_memory.rules().len(),
                );
                let utoks = toks;
                let mut line = format!(
                    "  {} truth {} rank {rank} | ",
                    list.user, list.truth
                );
                for cand in &list.candidates {
                    let profile = engine
                        .client(&ClientId::item(cand).unwrap())
                        .map(|c| c.profile.clone())
                        .unwrap_or_else(|| titles[cand.as_str()].to_string());
                    let j = jaccard(&utoks, &tokens(&profile));
                    let mark = if cand == &list.truth { "*" } else { "" };
                    line.push_str(&format!("{cand}{mark} J{j:.3} n{} | ", tokens(&profile).len()));
                }
                println!("{line}");
            }
        }
        println!(
            "variant {:?}: ndcg@5 {:.4} over {n} lists",
            variant,
            sum5 / n as f64
        );
        println!("  truth rank histogram (1..=10): {:?}", &truth_ranks[1..]);
        println!(
            "  avg user tokens {:.1} (own-group {:.1}, foreign {:.1})",
            user_total_tok as f64 / n as f64,
            user_own_tok as f64 / n as f64,
            user_foreign_tok as f64 / n as f64
        );
        println!(
            "  foreign candidates in top5: {:.2}/list; truth beaten by same {:.2}, by foreign {:.2}",
            foreign_in_top5 as f64 / n as f64,
            truth_beaten_by_same as f64 / n as f64,
            truth_beaten_by_foreign as f64 / n as f64
        );
    }
}
