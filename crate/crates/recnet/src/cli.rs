//! Command-line shell: config loading, the five subcommands, and exit-code
//! discipline (0 ok, 2 input error, 3 runtime backend error, 4 bad config).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineError, EngineState, RunReport, Stage};
use crate::eval::{
    self, Dataset, EvalError, EvalOptions, Format, SweepReport, SynthConfig,
};
use crate::model::{BackendSelector, NetworkConfig, Variant};

/// Failure classes, each owning one exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed inputs: datasets, snapshots, run dirs.
    Input(String),
    /// The backend failed at runtime, mid-stream.
    Backend(String),
    /// The configuration itself is unusable.
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Config(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Backend(m) | CliError::Config(m) => m,
        }
    }
}

fn input_err(e: &EvalError) -> CliError {
    match e {
        EvalError::Backend(m) => CliError::Backend(m.clone()),
        other => CliError::Input(other.to_string()),
    }
}

fn engine_cli_err(e: EngineError) -> CliError {
    match e {
        EngineError::Config(_) | EngineError::EmbedderDim { .. } => {
            CliError::Config(e.to_string())
        }
        EngineError::Backend(_) | EngineError::Embed(_) | EngineError::Routing(_) => {
            CliError::Backend(e.to_string())
        }
        EngineError::MissingClient(_) | EngineError::NotCold { .. } => {
            CliError::Input(e.to_string())
        }
    }
}

fn d_config() -> NetworkConfig {
    NetworkConfig::default()
}

fn d_k_init() -> usize {
    d_config().k_init
}
fn d_tau() -> f64 {
    d_config().tau
}
fn d_buffer_capacity() -> usize {
    d_config().buffer_capacity
}
fn d_update_size() -> usize {
    d_config().update_size
}
fn d_embedding_dim() -> usize {
    d_config().embedding_dim
}
fn d_seed() -> u64 {
    d_config().seed
}
fn d_variant() -> String {
    d_config().variant.as_str().to_string()
}
fn d_split_threshold() -> usize {
    d_config().split_threshold
}
fn d_merge_threshold() -> f64 {
    d_config().merge_threshold
}
fn d_max_filter_rules() -> usize {
    d_config().max_filter_rules
}
fn d_neighbor_k() -> usize {
    d_config().neighbor_k
}
fn d_dataset_format() -> Format {
    Format::Recnet
}
fn d_output_dir() -> String {
    "recnet-out".to_string()
}
fn d_variants() -> Vec<String> {
    vec!["full".to_string()]
}
fn d_repetitions() -> usize {
    3
}
fn d_parallelism() -> usize {
    1
}
fn d_snapshot_every() -> u64 {
    1
}

/// The single JSON config document. Every key is optional; defaults are
/// applied at parse time so the resolved dump echoes them, and the dump is
/// itself a loadable config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfigFile {
    #[serde(default = "d_k_init")]
    pub k_init: usize,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_buffer_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "d_update_size")]
    pub update_size: usize,
    #[serde(default = "d_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_variant")]
    pub variant: String,
    #[serde(default)]
    pub backend: BackendSelector,
    #[serde(default = "d_split_threshold")]
    pub split_threshold: usize,
    #[serde(default = "d_merge_threshold")]
    pub merge_threshold: f64,
    #[serde(default = "d_max_filter_rules")]
    pub max_filter_rules: usize,
    #[serde(default = "d_neighbor_k")]
    pub neighbor_k: usize,
    #[serde(default)]
    pub dataset_path: Option<String>,
    #[serde(default = "d_dataset_format")]
    pub dataset_format: Format,
    #[serde(default = "d_output_dir")]
    pub output_dir: String,
    #[serde(default = "d_variants")]
    pub variants: Vec<String>,
    #[serde(default = "d_repetitions")]
    pub repetitions: usize,
    #[serde(default = "d_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub augment_cold: bool,
    /// Batches between snapshot writes during `run`.
    #[serde(default = "d_snapshot_every")]
    pub snapshot_every: u64,
}

impl Default for CliConfigFile {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses")
    }
}

impl CliConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&raw)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    /// The engine-facing slice of the config, validated.
    pub fn network(&self) -> Result<NetworkConfig, CliError> {
        let variant: Variant = self
            .variant
            .parse()
            .map_err(|e: String| CliError::Config(e))?;
        let config = NetworkConfig {
            k_init: self.k_init,
            tau: self.tau,
            buffer_capacity: self.buffer_capacity,
            update_size: self.update_size,
            embedding_dim: self.embedding_dim,
            seed: self.seed,
            variant,
            backend: self.backend.clone(),
            split_threshold: self.split_threshold,
            merge_threshold: self.merge_threshold,
            max_filter_rules: self.max_filter_rules,
            neighbor_k: self.neighbor_k,
        };
        let violations = config.violations();
        if !violations.is_empty() {
            let detail: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(CliError::Config(detail.join("; ")));
        }
        Ok(config)
    }

    pub fn variant_list(&self) -> Result<Vec<Variant>, CliError> {
        if self.variants.is_empty() {
            return Err(CliError::Config("variants list is empty".to_string()));
        }
        self.variants
            .iter()
            .map(|v| v.parse().map_err(|e: String| CliError::Config(e)))
            .collect()
    }

    fn dataset(&self) -> Result<Dataset, CliError> {
        let path = self.dataset_path.as_ref().ok_or_else(|| {
            CliError::Config("dataset_path is not set (config key or --dataset)".to_string())
        })?;
        eval::ingest(Path::new(path), self.dataset_format).map_err(|e| input_err(&e))
    }

    fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Flag-level overrides, one per config key.
#[derive(Debug, Clone, Args)]
pub struct ConfigOverrides {
    #[arg(long, help = "Dataset file, overrides dataset_path")]
    pub dataset: Option<PathBuf>,
    #[arg(long, help = "Dataset dialect: recnet or amazon")]
    pub dataset_format: Option<Format>,
    #[arg(long, help = "Directory for all outputs")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, help = "Network variant, e.g. full or no_router")]
    pub variant: Option<String>,
    #[arg(long, value_delimiter = ',', help = "Sweep variants, comma-separated")]
    pub variants: Option<Vec<String>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, help = "Fuse router messages into cold clients before ranking")]
    pub augment_cold: Option<bool>,
    #[arg(long)]
    pub k_init: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub buffer_capacity: Option<usize>,
    #[arg(long)]
    pub update_size: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub split_threshold: Option<usize>,
    #[arg(long)]
    pub merge_threshold: Option<f64>,
    #[arg(long)]
    pub max_filter_rules: Option<usize>,
    #[arg(long)]
    pub neighbor_k: Option<usize>,
    #[arg(long)]
    pub snapshot_every: Option<u64>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut CliConfigFile) {
        if let Some(v) = &self.dataset {
            cfg.dataset_path = Some(v.display().to_string());
        }
        if let Some(v) = self.dataset_format {
            cfg.dataset_format = v;
        }
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.display().to_string();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.variant {
            cfg.variant = v.clone();
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.clone();
        }
        if let Some(v) = self.repetitions {
            cfg.repetitions = v;
        }
        if let Some(v) = self.parallelism {
            cfg.parallelism = v;
        }
        if let Some(v) = self.augment_cold {
            cfg.augment_cold = v;
        }
        if let Some(v) = self.k_init {
            cfg.k_init = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.buffer_capacity {
            cfg.buffer_capacity = v;
        }
        if let Some(v) = self.update_size {
            cfg.update_size = v;
        }
        if let Some(v) = self.embedding_dim {
            cfg.embedding_dim = v;
        }
        if let Some(v) = self.split_threshold {
            cfg.split_threshold = v;
        }
        if let Some(v) = self.merge_threshold {
            cfg.merge_threshold = v;
        }
        if let Some(v) = self.max_filter_rules {
            cfg.max_filter_rules = v;
        }
        if let Some(v) = self.neighbor_k {
            cfg.neighbor_k = v;
        }
        if let Some(v) = self.snapshot_every {
            cfg.snapshot_every = v;
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "recnet", version, about = "Preference-propagation network runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a raw dataset file and print its statistics.
    Ingest(IngestArgs),
    /// Replay a dataset stream through the network, writing run artifacts.
    Run(RunArgs),
    /// Run the ablation sweep and write the metrics table.
    Eval(EvalArgs),
    /// Summarize a finished run directory.
    Report(ReportArgs),
    /// Generate a synthetic dataset fixture.
    GenSynth(GenSynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input JSONL file.
    pub path: PathBuf,
    #[arg(long, default_value = "recnet")]
    pub format: Format,
    /// Apply iterative five-core filtering.
    #[arg(long)]
    pub five_core: bool,
    /// Keep only N seeded-sampled users.
    #[arg(long)]
    pub sample_users: Option<usize>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Normalized output file.
    #[arg(long, default_value = "normalized.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from the snapshot in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory a previous `run` wrote into.
    #[arg(long)]
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Which fixture family: planted or cds.
    #[arg(long, default_value = "planted")]
    pub kind: String,
    #[arg(long, default_value_t = 4)]
    pub groups: usize,
    #[arg(long, default_value_t = 25)]
    pub users_per_group: usize,
    #[arg(long, default_value_t = 40)]
    pub items_per_group: usize,
    #[arg(long, default_value_t = 12)]
    pub vocab_per_group: usize,
    #[arg(long, default_value_t = 0.1)]
    pub crossover: f64,
    #[arg(long, default_value_t = 8)]
    pub events_per_user: usize,
    /// Make every user's final event a fresh, cold item.
    #[arg(long)]
    pub fresh_last: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                CliError::Input(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn append_or_create(path: &Path, contents: &str, append: bool) -> Result<(), CliError> {
    if append && path.exists() {
        use std::io::Write as _;
        let mut file = fs::OpenOptions::new().append(true).open(path).map_err(|e| {
            CliError::Input(format!("cannot append {}: {e}", path.display()))
        })?;
        file.write_all(contents.as_bytes())
            .map_err(|e| CliError::Input(format!("cannot append {}: {e}", path.display())))
    } else {
        write_file(path, contents)
    }
}

fn print_summary(ds: &Dataset) {
    let s = ds.summary();
    println!(
        "dataset {}: {} users, {} items, {} interactions, sparsity {:.2}%",
        s.name, s.users, s.items, s.interactions, s.sparsity
    );
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let mut ds = eval::ingest(&args.path, args.format).map_err(|e| input_err(&e))?;
    if args.five_core {
        ds = eval::five_core(&ds);
    }
    if let Some(n) = args.sample_users {
        ds = eval::sample_users(&ds, n, args.seed);
    }
    write_file(&args.out, &ds.to_jsonl())?;
    print_summary(&ds);
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn cmd_gen_synth(args: &GenSynthArgs) -> Result<(), CliError> {
    let (ds, default_name) = match args.kind.as_str() {
        "planted" => {
            let cfg = SynthConfig {
                groups: args.groups,
                users_per_group: args.users_per_group,
                items_per_group: args.items_per_group,
                vocab_per_group: args.vocab_per_group,
                crossover: args.crossover,
                events_per_user: args.events_per_user,
                fresh_last: args.fresh_last,
                seed: args.seed,
            };
            if cfg.groups < 2 {
                return Err(CliError::Config("need at least two groups".to_string()));
            }
            (eval::gen_synthetic(&cfg), "planted.jsonl")
        }
        "cds" => (eval::gen_cds_sample(args.seed), "cds_sample.jsonl"),
        other => {
            return Err(CliError::Config(format!(
                "unknown fixture kind '{other}' (expected planted or cds)"
            )))
        }
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(default_name));
    write_file(&out, &ds.to_jsonl())?;
    print_summary(&ds);
    println!("wrote {}", out.display());
    Ok(())
}

fn snapshot_path(dir: &Path) -> PathBuf {
    dir.join("snapshot.json")
}

fn write_snapshot(dir: &Path, engine: &Engine) -> Result<(), CliError> {
    let json = serde_json::to_string(engine.state()).expect("state serializes");
    write_file(&snapshot_path(dir), &json)
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = CliConfigFile::load(&args.config)?;
    args.overrides.apply(&mut cfg);
    let network = cfg.network()?;
    let dataset = cfg.dataset()?;
    let out_dir = PathBuf::from(&cfg.output_dir);
    let (backend, embedder) =
        eval::build_backends(&network).map_err(|e| CliError::Config(e.to_string()))?;

    write_file(&out_dir.join("resolved_config.json"), &cfg.dump())?;

    let (mut engine, skip) = if args.resume {
        let snap_file = snapshot_path(&out_dir);
        let raw = fs::read_to_string(&snap_file).map_err(|e| {
            CliError::Input(format!("cannot read snapshot {}: {e}", snap_file.display()))
        })?;
        let state: EngineState = serde_json::from_str(&raw).map_err(|e| {
            CliError::Input(format!("snapshot {}: {e}", snap_file.display()))
        })?;
        let done = state.accounting.interactions as usize;
        let mut engine = Engine::from_state(network.clone(), backend, embedder, state)
            .map_err(engine_cli_err)?;
        let profiles = eval::initial_profiles(&dataset).map_err(|e| input_err(&e))?;
        for (id, profile) in profiles {
            engine.admit(id, profile).map_err(engine_cli_err)?;
        }
        (engine, done)
    } else {
        let mut engine =
            Engine::new(network.clone(), backend, embedder).map_err(engine_cli_err)?;
        let profiles = eval::initial_profiles(&dataset).map_err(|e| input_err(&e))?;
        engine.initialize(profiles).map_err(engine_cli_err)?;
        (engine, 0)
    };

    let all: Vec<usize> = (0..dataset.events.len()).collect();
    let records =
        eval::build_records(&dataset, &all, network.seed).map_err(|e| input_err(&e))?;
    if skip > records.len() {
        return Err(CliError::Input(format!(
            "snapshot has {skip} interactions but the dataset has only {}",
            records.len()
        )));
    }

    write_snapshot(&out_dir, &engine)?;
    let mut deliveries = Vec::new();
    let mut lineage = Vec::new();
    let mut drive = || -> Result<(), EngineError> {
        for record in &records[skip..] {
            engine.step(record)?;
            if let Some(report) = engine.maybe_run_router_stage()? {
                deliveries.extend(report.deliveries);
                lineage.extend(report.lineage);
                if cfg.snapshot_every > 0 && report.batch % cfg.snapshot_every == 0 {
                    let json =
                        serde_json::to_string(engine.state()).expect("state serializes");
                    fs::write(snapshot_path(&out_dir), json).ok();
                }
            }
        }
        if let Some(report) = engine.flush_pending()? {
            deliveries.extend(report.deliveries);
            lineage.extend(report.lineage);
        }
        Ok(())
    };
    let outcome = drive();

    let mut delivery_lines = String::new();
    for d in &deliveries {
        delivery_lines.push_str(&serde_json::to_string(d).expect("delivery serializes"));
        delivery_lines.push('\n');
    }
    append_or_create(&out_dir.join("deliveries.jsonl"), &delivery_lines, args.resume)?;
    let mut lineage_lines = String::new();
    for l in &lineage {
        lineage_lines.push_str(&serde_json::to_string(l).expect("lineage serializes"));
        lineage_lines.push('\n');
    }
    append_or_create(&out_dir.join("lineage.jsonl"), &lineage_lines, args.resume)?;

    outcome.map_err(engine_cli_err)?;

    write_snapshot(&out_dir, &engine)?;
    let report = engine.report();
    write_file(
        &out_dir.join("run_report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    println!(
        "run complete: {} interactions, {} batches, lambda {:.3}, K {}",
        report.interactions,
        report.batches,
        report.lambda_observed,
        report.k_trajectory.last().copied().unwrap_or(0)
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut cfg = CliConfigFile::load(&args.config)?;
    args.overrides.apply(&mut cfg);
    let network = cfg.network()?;
    let variants = cfg.variant_list()?;
    let dataset = cfg.dataset()?;
    eval::build_backends(&network).map_err(|e| CliError::Config(e.to_string()))?;
    let out_dir = PathBuf::from(&cfg.output_dir);

    write_file(&out_dir.join("resolved_config.json"), &cfg.dump())?;
    let options = EvalOptions {
        repetitions: cfg.repetitions,
        augment_cold: cfg.augment_cold,
        parallelism: cfg.parallelism,
    };
    let report =
        eval::sweep(&dataset, &variants, &network, &options).map_err(|e| input_err(&e))?;

    write_file(&out_dir.join("metrics.csv"), &report.to_csv())?;
    write_file(&out_dir.join("metrics.json"), &report.to_json())?;
    print_sweep(&report);
    println!("metrics in {}", out_dir.display());

    if report.variants.is_empty() {
        return Err(CliError::Backend(format!(
            "all {} variant(s) failed",
            report.errors.len()
        )));
    }
    Ok(())
}

fn print_sweep(report: &SweepReport) {
    println!("{:<12} {:>8} {:>8} {:>8}", "variant", "n@1", "n@5", "n@10");
    for vr in &report.variants {
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4}",
            vr.variant, vr.avg.n1, vr.avg.n5, vr.avg.n10
        );
    }
    for (variant, error) in &report.errors {
        println!("{variant:<12} failed: {error}");
    }
}

fn stage_label(stage: Stage) -> &'static str {
    match stage {
        Stage::ClientCentric => "client-centric",
        Stage::RouterCentric => "router-centric",
    }
}

pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let report_file = args.run_dir.join("run_report.json");
    let raw = fs::read_to_string(&report_file).map_err(|e| {
        CliError::Input(format!("missing report {}: {e}", report_file.display()))
    })?;
    let report: RunReport = serde_json::from_str(&raw)
        .map_err(|e| CliError::Input(format!("report {}: {e}", report_file.display())))?;

    println!("interactions: {}", report.interactions);
    println!("batches:      {}", report.batches);
    for (stage, kinds) in &report.calls {
        let total: u64 = kinds.values().sum();
        println!("{} calls: {total}", stage_label(*stage));
        for (kind, n) in kinds {
            if *n > 0 {
                println!("  {kind:<10} {n}");
            }
        }
    }
    println!("lambda_observed: {:.4}", report.lambda_observed);
    let trajectory: Vec<String> =
        report.k_trajectory.iter().map(|k| k.to_string()).collect();
    println!("K trajectory: {}", trajectory.join(" -> "));

    let mut csv = String::from("batch,k\n");
    for (i, k) in report.k_trajectory.iter().enumerate() {
        csv.push_str(&format!("{i},{k}\n"));
    }
    let csv_path = args.run_dir.join("k_trajectory.csv");
    write_file(&csv_path, &csv)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
        Command::GenSynth(args) => cmd_gen_synth(args),
    }
}

/// Parse arguments and run; the returned code is ready for process::exit.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpdir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("recnet-cli-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).expect("create temp dir");
        dir
    }

    fn write(path: &Path, contents: &str) {
        let mut f = fs::File::create(path).expect("create file");
        f.write_all(contents.as_bytes()).expect("write file");
    }

    #[test]
    fn empty_config_parses_to_defaults() {
        let cfg = CliConfigFile::default();
        assert_eq!(cfg.k_init, NetworkConfig::default().k_init);
        assert_eq!(cfg.tau, NetworkConfig::default().tau);
        assert_eq!(cfg.variant, "full");
        assert_eq!(cfg.variants, vec!["full"]);
        assert_eq!(cfg.repetitions, 3);
        assert_eq!(cfg.snapshot_every, 1);
        assert!(cfg.dataset_path.is_none());
        assert_eq!(cfg.backend, BackendSelector::Mock);
    }

    #[test]
    fn resolved_dump_round_trips() {
        let cfg = CliConfigFile {
            dataset_path: Some("planted.jsonl".to_string()),
            seed: 7,
            ..CliConfigFile::default()
        };
        let reparsed: CliConfigFile = serde_json::from_str(&cfg.dump()).unwrap();
        assert_eq!(reparsed, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<CliConfigFile>(r#"{"tua": 0.5}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn bad_variant_is_a_config_error() {
        let mut cfg =
            CliConfigFile { variant: "bogus".to_string(), ..CliConfigFile::default() };
        match cfg.network() {
            Err(CliError::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
        cfg.variant = "full".to_string();
        cfg.variants = vec!["full".to_string(), "nope".to_string()];
        assert!(matches!(cfg.variant_list(), Err(CliError::Config(_))));
        cfg.variants.clear();
        assert!(matches!(cfg.variant_list(), Err(CliError::Config(_))));
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        let cfg = CliConfigFile { tau: 2.0, ..CliConfigFile::default() };
        assert!(matches!(cfg.network(), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_apply_one_to_one() {
        let mut cfg = CliConfigFile::default();
        let overrides = ConfigOverrides {
            dataset: Some(PathBuf::from("x.jsonl")),
            dataset_format: Some(Format::Amazon),
            output_dir: Some(PathBuf::from("out")),
            seed: Some(5),
            variant: Some("no_router".to_string()),
            variants: Some(vec!["full".to_string(), "no_fpo".to_string()]),
            repetitions: Some(2),
            parallelism: Some(4),
            augment_cold: Some(true),
            k_init: Some(3),
            tau: Some(0.1),
            buffer_capacity: Some(2),
            update_size: Some(8),
            embedding_dim: Some(64),
            split_threshold: Some(10),
            merge_threshold: Some(0.5),
            max_filter_rules: Some(4),
            neighbor_k: Some(2),
            snapshot_every: Some(3),
        };
        overrides.apply(&mut cfg);
        assert_eq!(cfg.dataset_path.as_deref(), Some("x.jsonl"));
        assert_eq!(cfg.dataset_format, Format::Amazon);
        assert_eq!(cfg.output_dir, "out");
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.variant, "no_router");
        assert_eq!(cfg.variants.len(), 2);
        assert_eq!(cfg.repetitions, 2);
        assert_eq!(cfg.parallelism, 4);
        assert!(cfg.augment_cold);
        assert_eq!(
            (cfg.k_init, cfg.buffer_capacity, cfg.update_size, cfg.embedding_dim),
            (3, 2, 8, 64)
        );
        assert_eq!((cfg.split_threshold, cfg.max_filter_rules, cfg.neighbor_k), (10, 4, 2));
        assert_eq!(cfg.snapshot_every, 3);
        cfg.network().unwrap();
    }

    #[test]
    fn ingest_command_writes_normalized_file() {
        let dir = tmpdir("ingest");
        let input = dir.join("raw.jsonl");
        write(
            &input,
            concat!(
                r#"{"user":"u1","item":"b","timestamp":9,"title":"late"}"#,
                "\n",
                r#"{"user":"u1","item":"a","timestamp":1,"title":"early"}"#,
                "\n",
            ),
        );
        let out = dir.join("norm.jsonl");
        let args = IngestArgs {
            path: input,
            format: Format::Recnet,
            five_core: false,
            sample_users: None,
            seed: 42,
            out: out.clone(),
        };
        cmd_ingest(&args).unwrap();
        let normalized = fs::read_to_string(&out).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(normalized.lines().next().unwrap()).unwrap();
        assert_eq!(first["item"], "a");
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ingest_command_maps_errors_to_input() {
        let args = IngestArgs {
            path: PathBuf::from("/nonexistent/raw.jsonl"),
            format: Format::Recnet,
            five_core: false,
            sample_users: None,
            seed: 42,
            out: PathBuf::from("unused.jsonl"),
        };
        match cmd_ingest(&args) {
            Err(e @ CliError::Input(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected input error, got {other:?}"),
        }
    }

    #[test]
    fn report_command_fails_without_report() {
        let dir = tmpdir("noreport");
        let args = ReportArgs { run_dir: dir.clone() };
        match cmd_report(&args) {
            Err(e @ CliError::Input(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected input error, got {other:?}"),
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn exit_codes_match_the_contract() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 2);
        assert_eq!(CliError::Backend("x".into()).exit_code(), 3);
        assert_eq!(CliError::Config("x".into()).exit_code(), 4);
    }
}
