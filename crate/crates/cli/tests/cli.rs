use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ifdiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifdiv")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ifdiv-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn analytic_extreme_lifetimes() {
    let on = json(&ifdiv(&["analytic", "--agent", "fixed:(1,1)", "--eta", "0"]));
    let k = on["results"][0]["lifetime"].as_f64().unwrap();
    assert!((k / 5.0738e6 - 1.0).abs() < 0.01, "{k}");
    let wifi = json(&ifdiv(&["analytic", "--agent", "fixed:(0,1)", "--eta", "0"]));
    let k = wifi["results"][0]["lifetime"].as_f64().unwrap();
    assert!((k / 1.3633e5 - 1.0).abs() < 0.01, "{k}");
    let occupancy = wifi["results"][0]["occupancy"].as_array().unwrap();
    let total: f64 = occupancy.iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-8, "occupancies are fractions");
}

#[test]
fn analytic_non_absorbing_is_marked_infinite() {
    let dir = scratch("nonabsorbing");
    let cfg = write(&dir, "cfg.toml", "p1 = 0.0\np2 = 0.0\n");
    let out = ifdiv(&["--config", &cfg, "analytic", "--agent", "fixed:(1,1)", "--eta", "0"]);
    let doc = json(&out);
    assert_eq!(doc["results"][0]["lifetime"], "infinite");
    assert_eq!(doc["results"][0]["absorbing"], false);
}

#[test]
fn analytic_rejects_qmdp() {
    assert_eq!(ifdiv(&["analytic", "--agent", "qmdp"]).status.code(), Some(2));
}

#[test]
fn solve_free_energy_is_all_on() {
    let doc = json(&ifdiv(&["solve", "--model", "full", "--eta", "0"]));
    assert_eq!(doc["results"][0]["constant_action"], "(1,1)");
    let states = doc["results"][0]["states"].as_array().unwrap();
    assert_eq!(states.len(), 20);
    assert!(states.iter().filter(|s| !s["action"].is_null()).all(|s| s["action"] == "(1,1)"));
}

#[test]
fn solve_strict_reports_non_convergence() {
    let out = ifdiv(&["solve", "--model", "full", "--eta", "0", "--strict"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_max"));
    // A loose stop rule converges and exits cleanly.
    let dir = scratch("loose");
    let cfg = write(&dir, "cfg.toml", "gamma = 0.9\nepsilon = 1e-6\n");
    assert_eq!(ifdiv(&["--config", &cfg, "solve", "--eta", "0", "--strict"]).status.code(), Some(0));
}

#[test]
fn hmdp_policy_stable_over_cheap_costs() {
    let doc = json(&ifdiv(&["solve", "--model", "hmdp", "--eta", "0,0.03,0.07"]));
    assert_eq!(doc["identical_policies"], true);
    assert_eq!(doc["results"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_single_episode_is_deterministic() {
    let a = scratch("sim-a");
    let b = scratch("sim-b");
    for dir in [&a, &b] {
        let out = ifdiv(&[
            "simulate", "--agent", "fixed:(0,1)", "--eta", "0.07", "--episodes", "1", "--seed", "42", "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let name = "episodes_fixed01_eta0.07.csv";
    let csv_a = fs::read_to_string(a.join(name)).unwrap();
    assert_eq!(csv_a, fs::read_to_string(b.join(name)).unwrap());
    assert_eq!(
        fs::read(a.join("simulate.json")).unwrap(),
        fs::read(b.join("simulate.json")).unwrap()
    );
    let lines: Vec<&str> = csv_a.lines().collect();
    assert_eq!(lines[0], "episode,seed,lifetime,total_reward,n0,n1,n2,n3,lte_on,wifi_on");
    assert_eq!(lines.len(), 2);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[1], ifdiv::sim::episode_seed(42, 0).to_string());
    // Wi-Fi transmits every slot, LTE never.
    assert_eq!(cells[8], "0");
    assert_eq!(cells[9], cells[2]);
}

#[test]
fn sensitivity_scales_the_agent_model_only() {
    let doc = json(&ifdiv(&[
        "sensitivity", "--eta", "0.07", "--agent", "fullmdp", "--delta", "0,0.02", "--interfaces", "lte",
    ]));
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["delta_lifetime"].as_f64(), Some(0.0));
    assert_eq!(rows[0]["reward_loss"].as_f64(), Some(0.0));
    assert_eq!(rows[1]["model"]["p1"].as_f64(), Some(0.018156));
    assert_eq!(rows[1]["model"]["r1"].as_f64(), Some(0.262854));
    assert_eq!(rows[1]["model"]["p2"].as_f64(), Some(0.0515));
}

#[test]
fn sensitivity_rejects_delta_at_minus_one() {
    assert_eq!(ifdiv(&["sensitivity", "--delta", "-1", "--agent", "fullmdp"]).status.code(), Some(2));
}

#[test]
fn fit_five_sample_trace() {
    let dir = scratch("fit");
    let trace = write(&dir, "t.csv", "seq,latency_ms\n1,20\n2,45\n3,lost\n4,30\n5,12\n");
    let doc = json(&ifdiv(&["fit", &trace, "--theta", "38.25"]));
    let t = &doc["traces"][0];
    assert_eq!(t["p_hat"].as_f64(), Some(0.5));
    assert_eq!(t["r_hat"].as_f64(), Some(0.5));
    assert_eq!(t["reliability"].as_f64(), Some(0.6));
    assert_eq!(doc["e2e_error"].as_f64(), Some(0.4));
}

#[test]
fn fit_errors_exit_with_parse_status() {
    let dir = scratch("fit-err");
    let empty = write(&dir, "empty.csv", "");
    let out = ifdiv(&["fit", &empty]);
    assert_eq!(out.status.code(), Some(4));
    let broken = write(&dir, "broken.csv", "seq,latency_ms\n1,20\n2,fast\n");
    let out = ifdiv(&["fit", &broken]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn synthetic_trace_round_trip() {
    let dir = scratch("synth");
    let out = ifdiv(&["synth-trace", "--len", "100000", "--seed", "9", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let doc = json(&ifdiv(&["fit", dir.join("trace_lte.csv").to_str().unwrap()]));
    let p = doc["traces"][0]["p_hat"].as_f64().unwrap();
    let r = doc["traces"][0]["r_hat"].as_f64().unwrap();
    assert!((p / 0.0178 - 1.0).abs() < 0.1, "{p}");
    assert!((r / 0.2577 - 1.0).abs() < 0.1, "{r}");
}

#[test]
fn config_errors() {
    let dir = scratch("cfg");
    let unknown = write(&dir, "unknown.toml", "p3 = 0.1\n");
    assert_eq!(ifdiv(&["--config", &unknown, "analytic"]).status.code(), Some(4));
    let invalid = write(&dir, "invalid.toml", "p1 = 1.5\n");
    assert_eq!(ifdiv(&["--config", &invalid, "analytic"]).status.code(), Some(2));
    assert_eq!(ifdiv(&["analytic", "--eta", "cheap"]).status.code(), Some(2));
    assert_eq!(ifdiv(&["simulate", "--agent", "oracle"]).status.code(), Some(2));
    assert_eq!(ifdiv(&["--config", "/nonexistent/ifdiv.toml", "analytic"]).status.code(), Some(4));
}

#[test]
fn config_file_overrides_defaults() {
    let dir = scratch("cfg-override");
    let cfg = write(&dir, "cfg.toml", "N = 2\neta = 0.0\n");
    let doc = json(&ifdiv(&["--config", &cfg, "analytic", "--agent", "fixed:(0,1)"]));
    assert_eq!(doc["N"], 2);
    assert_eq!(doc["results"].as_array().unwrap().len(), 1);
    assert_eq!(doc["results"][0]["occupancy"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_writes_one_table_per_eta() {
    let dir = scratch("sweep");
    let out = ifdiv(&["sweep-eta", "--no-simulate", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    for eta in ["0", "0.03", "0.07", "0.2", "1"] {
        let table = fs::read_to_string(dir.join(format!("sweep_eta{eta}.csv"))).unwrap();
        assert_eq!(table.lines().count(), 5, "header plus four agents");
    }
}

#[test]
fn repro_empty_manifest_passes() {
    let dir = scratch("repro");
    let manifest = write(&dir, "empty.toml", "");
    let out = ifdiv(&["repro", "--manifest", &manifest]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("id,provenance,check"));
}
