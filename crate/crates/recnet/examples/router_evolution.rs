//! Watch the router layer restructure itself over a dataset replay: the K
//! trajectory across batches and the split/merge/rewrite lineage behind
//! every change.
//!
//! Usage: cargo run --example router_evolution -- \
//!     [dataset.jsonl] [k_init] [tau] [split_threshold] [merge_threshold]

use std::path::Path;

use recnet::engine::Engine;
use recnet::eval::{self, Format};
use recnet::model::NetworkConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args
        .get(1)
        .map(String::as_str)
        .unwrap_or("crates/recnet/fixtures/planted.jsonl");
    let k_init: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let tau: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let split_threshold: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let merge_threshold: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(-0.01);

    let config = NetworkConfig {
        k_init,
        tau,
        split_threshold,
        merge_threshold,
        embedding_dim: 64,
        ..NetworkConfig::default()
    };
    let dataset = eval::ingest(Path::new(path), Format::Recnet).expect("dataset ingests");
    let all: Vec<usize> = (0..dataset.events.len()).collect();
    let records = eval::build_records(&dataset, &all, config.seed).expect("records build");
    let (backend, embedder) = eval::build_backends(&config).expect("mock backends");
    let mut engine = Engine::new(config, backend, embedder).expect("engine");
    engine
        .initialize(eval::initial_profiles(&dataset).expect("profiles"))
        .expect("initialize");

    println!(
        "replaying {} ({} events) with k_init={k_init} tau={tau} split>{split_threshold} merge>{merge_threshold}",
        dataset.name,
        records.len()
    );

    let mut lineage = Vec::new();
    for record in &records {
        engine.step(record).expect("step");
        if let Some(report) = engine.maybe_run_router_stage().expect("router stage") {
            lineage.extend(report.lineage);
        }
    }
    if let Some(report) = engine.flush_pending().expect("flush") {
        lineage.extend(report.lineage);
    }

    let report = engine.report();
    let k: Vec<String> = report.k_trajectory.iter().map(|k| k.to_string()).collect();
    println!("\nK trajectory: {}", k.join(" -> "));
    println!("\nlineage ({} structural changes):", lineage.len());
    for entry in &lineage {
        let children: Vec<String> = entry.children.iter().map(|c| c.to_string()).collect();
        println!(
            "  batch {:>3}  router {:>3}  {:<7}  -> [{}]  K={}",
            entry.batch,
            entry.router,
            entry.action,
            children.join(", "),
            entry.k_after
        );
    }
    let sizes: Vec<String> = engine
        .routers()
        .iter()
        .map(|r| format!("{}:{}", r.id.0, r.attributes.len()))
        .collect();
    println!("\nterminal routers (id:attributes): {}", sizes.join("  "));
}
