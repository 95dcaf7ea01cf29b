//! Inspect the router layer of a freshly initialized network: per-router
//! attribute counts, the pairwise profile-cosine spectrum, and how many
//! clients each router would reach if every router multicast right now.
//!
//! Usage: cargo run --example routing_tables [-- <dataset.jsonl> [k_init] [tau]]

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use recnet::embedding;
use recnet::engine::Engine;
use recnet::eval::{self, Format};
use recnet::model::{NetworkConfig, RouterId};
use recnet::routing;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args
        .get(1)
        .map(String::as_str)
        .unwrap_or("crates/recnet/fixtures/planted.jsonl");
    let k_init: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let tau: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.8);

    let config = NetworkConfig { k_init, tau, embedding_dim: 64, ..NetworkConfig::default() };
    let dataset = eval::ingest(Path::new(path), Format::Recnet).expect("dataset ingests");
    let (backend, embedder) = eval::build_backends(&config).expect("mock backends");
    let mut engine = Engine::new(config.clone(), backend, Arc::clone(&embedder)).expect("engine");
    engine
        .initialize(eval::initial_profiles(&dataset).expect("profiles"))
        .expect("initialize");

    println!("dataset {} with k_init={k_init}, tau={tau}", dataset.name);
    println!("\nrouters:");
    for router in engine.routers().iter() {
        println!(
            "  {:>3}  {:>3} attributes  gen {}",
            router.id.0,
            router.attributes.len(),
            router.generation
        );
    }

    let routers: Vec<_> = engine.routers().iter().collect();
    let mut cosines = Vec::new();
    println!("\npairwise profile cosines:");
    for i in 0..routers.len() {
        for j in (i + 1)..routers.len() {
            let c = embedding::cosine(&routers[i].embedding, &routers[j].embedding)
                .expect("cosine");
            cosines.push(c);
            if routers.len() <= 10 {
                println!("  {:>3} x {:>3}  {c:+.4}", routers[i].id.0, routers[j].id.0);
            }
        }
    }
    cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if let (Some(lo), Some(hi)) = (cosines.first(), cosines.last()) {
        let mid = cosines[cosines.len() / 2];
        println!("  spectrum: min {lo:+.4}  median {mid:+.4}  max {hi:+.4}");
    }

    let all: BTreeSet<RouterId> = engine.routers().iter().map(|r| r.id).collect();
    let table = routing::build_table(
        &all,
        engine.routers(),
        engine.clients(),
        config.tau,
        0,
        embedder.as_ref(),
    )
    .expect("table");
    let mut positive = Vec::new();
    println!("\nmulticast reach if every router updated now:");
    for rid in &all {
        let mut over = 0usize;
        let mut best = f64::NEG_INFINITY;
        for ((r, _), s) in &table.scores {
            if r == rid {
                if *s > config.tau {
                    over += 1;
                }
                if *s > best {
                    best = *s;
                }
                if *s > 0.0 {
                    positive.push(*s);
                }
            }
        }
        println!(
            "  {:>3}  {over:>4} of {} clients over tau, best score {best:+.4}",
            rid.0,
            engine.clients().len()
        );
    }
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if !positive.is_empty() {
        let mid = positive[positive.len() / 2];
        println!(
            "  positive router-client scores: n {}  min {:+.4}  median {mid:+.4}  max {:+.4}",
            positive.len(),
            positive.first().unwrap(),
            positive.last().unwrap()
        );
    }
}
