//! End-to-end tests that drive the compiled binary the way an operator would.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_recnet"));
    cmd.env_remove("RECNET_API_KEY");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary spawns");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command, code: i32) -> Output {
    let out = cmd.output().expect("binary spawns");
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn small_run_config(dataset: &Path, out_dir: &Path) -> String {
    format!(
        r#"{{
  "k_init": 2,
  "tau": 0.2,
  "update_size": 2,
  "embedding_dim": 64,
  "seed": 42,
  "dataset_path": {dataset:?},
  "output_dir": {out:?}
}}"#,
        dataset = dataset.display().to_string(),
        out = out_dir.display().to_string()
    )
}

#[test]
fn gen_ingest_run_report_round_trip() {
    let tmp = TempDir::new().unwrap();
    let raw = tmp.path().join("raw.jsonl");
    run_ok(bin().args(["gen-synth", "--groups", "2", "--users-per-group", "3"]).args([
        "--items-per-group",
        "8",
        "--events-per-user",
        "4",
        "--out",
    ]).arg(&raw));

    let normalized = tmp.path().join("normalized.jsonl");
    let out = run_ok(bin().arg("ingest").arg(&raw).arg("--out").arg(&normalized));
    let stats = String::from_utf8_lossy(&out.stdout);
    assert!(stats.contains("6 users"), "stats line: {stats}");
    assert!(normalized.exists());

    let run_dir = tmp.path().join("run");
    let config = write_config(tmp.path(), &small_run_config(&normalized, &run_dir));
    run_ok(bin().args(["run", "--config"]).arg(&config));
    for artifact in [
        "resolved_config.json",
        "snapshot.json",
        "deliveries.jsonl",
        "lineage.jsonl",
        "run_report.json",
    ] {
        assert!(run_dir.join(artifact).exists(), "missing {artifact}");
    }

    let out = run_ok(bin().args(["report", "--run-dir"]).arg(&run_dir));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("lambda_observed"), "report output: {text}");
    assert!(run_dir.join("k_trajectory.csv").exists());
}

#[test]
fn resolved_config_reproduces_the_run_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let config = write_config(tmp.path(), &small_run_config(&fixture("six_clients.jsonl"), &dir_a));
    run_ok(bin().args(["run", "--config"]).arg(&config));
    run_ok(
        bin().args(["run", "--config"])
            .arg(dir_a.join("resolved_config.json"))
            .arg("--output-dir")
            .arg(&dir_b),
    );
    let a = fs::read(dir_a.join("run_report.json")).unwrap();
    let b = fs::read(dir_b.join("run_report.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_extends_the_run_with_monotonic_batches() {
    let tmp = TempDir::new().unwrap();
    let run_dir = tmp.path().join("run");
    let base = fixture("six_clients.jsonl");
    let extended = tmp.path().join("extended.jsonl");
    let mut text = fs::read_to_string(&base).unwrap();
    text.push_str(concat!(
        r#"{"user":"u1","item":"i5","timestamp":7,"title":"bebop piano sessions","review":"great live takes","negative":"i3"}"#,
        "\n",
        r#"{"user":"u2","item":"i6","timestamp":8,"title":"backcountry skiing maps","review":"detailed routes","negative":"i1"}"#,
        "\n",
        r#"{"user":"u1","item":"i6","timestamp":9,"title":"backcountry skiing maps","review":"bought for a friend","negative":"i2"}"#,
        "\n",
        r#"{"user":"u2","item":"i5","timestamp":10,"title":"bebop piano sessions","review":"surprisingly good","negative":"i4"}"#,
        "\n",
    ));
    fs::write(&extended, text).unwrap();

    let config = write_config(tmp.path(), &small_run_config(&base, &run_dir));
    run_ok(bin().args(["run", "--config"]).arg(&config));
    let first: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("run_report.json")).unwrap())
            .unwrap();
    let first_batches = first["batches"].as_u64().unwrap();
    assert!(first_batches > 0);

    run_ok(
        bin().args(["run", "--config"])
            .arg(&config)
            .arg("--resume")
            .arg("--dataset")
            .arg(&extended),
    );
    let second: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("run_report.json")).unwrap())
            .unwrap();
    assert_eq!(second["interactions"].as_u64(), Some(10));
    assert!(second["batches"].as_u64().unwrap() > first_batches);

    let mut last = -1i64;
    for line in fs::read_to_string(run_dir.join("deliveries.jsonl")).unwrap().lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        let batch = entry["batch"].as_i64().unwrap();
        assert!(batch >= last, "batch numbering went backwards: {batch} after {last}");
        last = batch;
    }
    assert!(last as u64 >= first_batches, "resumed run never passed the original batches");
}

#[test]
fn missing_dataset_file_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        &small_run_config(&tmp.path().join("nope.jsonl"), &tmp.path().join("out")),
    );
    run_err(bin().args(["run", "--config"]).arg(&config), 2);
}

#[test]
fn malformed_dataset_reports_the_line_number() {
    let tmp = TempDir::new().unwrap();
    let out = run_err(
        bin().arg("ingest").arg(fixture("malformed.jsonl")).arg("--out").arg(tmp.path().join("n.jsonl")),
        2,
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 7"), "stderr: {err}");
    assert!(!tmp.path().join("n.jsonl").exists(), "partial output was written");
}

#[test]
fn invalid_config_json_is_a_configuration_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "{ not json");
    run_err(bin().args(["run", "--config"]).arg(&config), 4);
}

#[test]
fn unknown_config_key_is_a_configuration_error() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), r#"{"k_innit": 20}"#);
    let out = run_err(bin().args(["run", "--config"]).arg(&config), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k_innit"), "stderr: {err}");
}

#[test]
fn http_backend_without_credential_fails_before_any_work() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let config = write_config(
        tmp.path(),
        &format!(
            r#"{{
  "dataset_path": {dataset:?},
  "output_dir": {out:?},
  "backend": {{
    "kind": "http",
    "base_url": "http://localhost:9",
    "model": "none",
    "credential_env": "RECNET_CLI_TEST_UNSET_CREDENTIAL"
  }}
}}"#,
            dataset = fixture("six_clients.jsonl").display().to_string(),
            out = out_dir.display().to_string()
        ),
    );
    let out = run_err(
        bin().args(["run", "--config"]).arg(&config).env_remove("RECNET_CLI_TEST_UNSET_CREDENTIAL"),
        4,
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("RECNET_CLI_TEST_UNSET_CREDENTIAL"), "stderr: {err}");
    assert!(!out_dir.join("snapshot.json").exists(), "work started despite missing credential");
}

#[test]
fn usage_errors_exit_2() {
    run_err(bin().arg("frobnicate"), 2);
    run_err(bin().args(["run", "--config", "x.json", "--no-such-flag"]), 2);
}

#[test]
fn report_on_missing_run_dir_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    run_err(bin().args(["report", "--run-dir"]).arg(tmp.path().join("ghost")), 2);
}

#[test]
fn eval_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let dataset = tmp.path().join("planted.jsonl");
    run_ok(
        bin().args([
            "gen-synth",
            "--groups",
            "2",
            "--users-per-group",
            "3",
            "--items-per-group",
            "12",
            "--events-per-user",
            "5",
            "--out",
        ])
        .arg(&dataset),
    );
    let eval_config = |out: &Path| {
        format!(
            r#"{{
  "k_init": 2,
  "tau": 0.2,
  "update_size": 4,
  "embedding_dim": 64,
  "dataset_path": {dataset:?},
  "output_dir": {out:?},
  "variants": ["full", "no_router"],
  "repetitions": 2,
  "parallelism": 2
}}"#,
            dataset = dataset.display().to_string(),
            out = out.display().to_string()
        )
    };
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let config_a = write_config(tmp.path(), &eval_config(&dir_a));
    run_ok(bin().args(["eval", "--config"]).arg(&config_a));
    let config_b = tmp.path().join("config_b.json");
    fs::write(&config_b, eval_config(&dir_b)).unwrap();
    run_ok(bin().args(["eval", "--config"]).arg(&config_b));
    assert_eq!(
        fs::read(dir_a.join("metrics.csv")).unwrap(),
        fs::read(dir_b.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir_a.join("metrics.json")).unwrap(),
        fs::read(dir_b.join("metrics.json")).unwrap()
    );
    let csv = fs::read_to_string(dir_a.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("dataset,variant,repetition,n1,n5,n10\n"), "csv: {csv}");
    assert!(csv.contains(",avg,"), "csv lacks the averaged row: {csv}");
}

#[test]
fn run_writes_nothing_outside_the_output_directory() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let config = write_config(tmp.path(), &small_run_config(&fixture("six_clients.jsonl"), &out_dir));
    let before: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    run_ok(bin().args(["run", "--config"]).arg(&config).current_dir(tmp.path()));
    let mut after: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    after.retain(|p| p != &out_dir);
    assert_eq!(before.len(), after.len(), "stray files appeared: {after:?}");
}
