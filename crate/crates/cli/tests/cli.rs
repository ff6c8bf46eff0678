//! End-to-end tests against the built binary: config resolution, exit
//! codes, artifact content, and the documented flag/env precedence.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aoi_edge::export::PolicyArtifact;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aoi-edge"));
    cmd.env_remove("AOI_EDGE_OUT");
    cmd
}

fn write_config(dir: &Path, config: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    path
}

fn small_sensor() -> Value {
    json!({
        "battery_capacity": 2,
        "aoi_max": 4,
        "harvest_prob": 0.4,
        "tx_success_prob": 0.8,
        "request_prob": 0.6,
    })
}

fn small_config() -> Value {
    json!({
        "sensors": [small_sensor()],
        "gamma": 0.9,
        "theta": 1e-9,
        "horizon": 2000,
        "episodes": 2,
        "seed": 7,
    })
}

fn load_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn empty_config_resolves_to_the_default_fleet() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let output = bin()
        .args(["export-policy", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    let artifact = load_json(&out.join("policy.json"));
    assert_eq!(artifact["params"]["battery_capacity"], json!(15));
    assert_eq!(artifact["params"]["aoi_max"], json!(127));
    assert_eq!(artifact["params"]["request_prob"], json!(0.15));
    assert_eq!(artifact["params"]["harvest_prob"], json!(0.04));
    assert_eq!(artifact["gamma"], json!(0.99));
    assert_eq!(artifact["theta"], json!(0.001));
    assert_eq!(artifact["provenance"]["seed"], json!(1));
    assert_eq!(artifact["v"].as_array().unwrap().len(), 16 * 127 * 2);
    let config = &artifact["provenance"]["config"];
    assert_eq!(config["env"]["sensors"].as_array().unwrap().len(), 3);
    assert_eq!(config["env"]["sensors"][1]["harvest_prob"], json!(0.05));
    assert_eq!(config["env"]["sensors"][2]["harvest_prob"], json!(0.06));
}

#[test]
fn invalid_values_exit_two_with_every_problem_listed() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &json!({
            "sensors": [{"harvest_prob": 1.5}],
            "gamma": 2.0,
        }),
    );
    let output = bin()
        .args(["solve-via", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("harvest_prob out of [0,1]"),
        "stderr: {stderr}"
    );
    assert!(stderr.contains("gamma out of [0,1)"), "stderr: {stderr}");
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &json!({"horizonn": 5}));
    let output = bin()
        .args(["solve-via", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("unknown field"), "stderr: {stderr}");
}

#[test]
fn threshold_one_report_matches_greedy_exactly() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_config());
    let greedy_out = dir.path().join("greedy");
    let output = bin()
        .args(["simulate", "--policy", "greedy", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&greedy_out)
        .output()
        .unwrap();
    assert_success(&output);
    let threshold_out = dir.path().join("threshold");
    let output = bin()
        .args([
            "simulate",
            "--policy",
            "greedy-threshold",
            "--bth",
            "1",
            "--config",
        ])
        .arg(&config)
        .arg("--out")
        .arg(&threshold_out)
        .output()
        .unwrap();
    assert_success(&output);
    let greedy = load_json(&greedy_out.join("report-greedy.json"));
    let threshold = load_json(&threshold_out.join("report-greedy-threshold.json"));
    assert_eq!(greedy["report"], threshold["report"]);
}

#[test]
fn exported_policies_survive_a_round_trip() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("out");
    let output = bin()
        .args(["export-policy", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    let path = out.join("policy.json");
    let original: PolicyArtifact<f64> = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    let provenance = original.provenance.clone();
    let (values, policy) = original.into_tables().unwrap();
    let rebuilt = PolicyArtifact::new(&values, &policy, provenance);
    assert_eq!(
        serde_json::to_value(&rebuilt).unwrap(),
        load_json(&path),
        "re-imported tables do not reproduce the document"
    );
}

#[test]
fn the_environment_variable_wins_the_output_directory() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_config());
    let flag_out = dir.path().join("flagged");
    let env_out = dir.path().join("enforced");
    let output = bin()
        .env("AOI_EDGE_OUT", &env_out)
        .args(["solve-via", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&flag_out)
        .output()
        .unwrap();
    assert_success(&output);
    assert!(env_out.join("policy-sensor1.json").exists());
    assert!(!flag_out.exists());
}

#[test]
fn seed_flag_overrides_the_config_file() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("out");
    let output = bin()
        .args(["export-policy", "--seed", "33", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    let artifact = load_json(&out.join("policy.json"));
    assert_eq!(artifact["provenance"]["seed"], json!(33));
}

#[test]
fn oversized_fleets_exit_three_on_coupled_runs() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &json!({
            "sensors": (0..13).map(|_| json!({
                "battery_capacity": 1,
                "aoi_max": 2,
                "harvest_prob": 0.5,
                "tx_success_prob": 0.8,
                "request_prob": 1.0,
            })).collect::<Vec<_>>(),
            "gamma": 0.9,
            "horizon": 100,
            "episodes": 1,
        }),
    );
    let out = dir.path().join("out");
    let output = bin()
        .args(["coupled", "--M", "1", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn sweeps_write_one_grid_per_value_and_a_summary() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("out");
    let output = bin()
        .args(["sweep", "--param", "xi", "--values", "0,1.0", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    assert!(out.join("grid-xi-0.csv").exists());
    assert!(out.join("grid-xi-1.0.csv").exists());
    assert!(out.join("policy-xi-0.json").exists());
    let summary = load_json(&out.join("sweep-summary.json"));
    assert_eq!(summary["points"].as_array().unwrap().len(), 2);
    // A dead link never commands, so its region sits inside any other.
    assert_eq!(summary["points"][0]["region_size"], json!(0));
    assert_eq!(summary["nested_increasing"], json!(true));
}

#[test]
fn trace_dumps_decompress_to_the_slot_log() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_config());
    let out = dir.path().join("out");
    let output = bin()
        .args(["simulate", "--policy", "random", "--trace", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    let mut text = String::new();
    flate2::read::GzDecoder::new(File::open(out.join("trace-random.csv.gz")).unwrap())
        .read_to_string(&mut text)
        .unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# build="));
    assert_eq!(
        lines[1],
        "slot,sensor,request,action,sensor_tx,channel_success,harvest,battery_before,aoi_after,cost"
    );
    // 2000 slots of one sensor plus the comment and header.
    assert_eq!(lines.len(), 2 + 2000);
}

#[test]
fn coupled_policy_names_are_refused_by_simulate() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_config());
    let output = bin()
        .args(["simulate", "--policy", "truncation", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("coupled"), "stderr: {stderr}");
}
