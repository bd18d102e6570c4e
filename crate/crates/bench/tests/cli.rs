use std::path::Path;
use std::process::{Command, Output};

use amis_bench::output::{read_csv, CSV_HEADER};
use tempfile::TempDir;

const GOLDEN_HEADER: &str =
    "experiment,scheme,run,iteration,total_samples,psi_hat,ess_hat,j_hat,adapt_ns,generate_ns,reweight_ns";

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amis-bench"))
        .args(args)
        .env_remove("AMIS_SEED")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn small_config(scheme: &str, output: &Path) -> String {
    format!(
        r#"{{
  "experiment": "small",
  "problem": {{ "kind": "example71", "num_steps": 20 }},
  "scheme": {{ "kind": "{scheme}" }},
  "basis": {{ "kind": "constant" }},
  "schedule": {{ "batch_size": 3, "iterations": 6 }},
  "seeds": [4, 5, 6],
  "output": "{}"
}}"#,
        output.display()
    )
}

#[test]
fn header_matches_golden() {
    assert_eq!(CSV_HEADER, GOLDEN_HEADER);
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("small.csv");
    let cfg = write(dir.path(), "cfg.json", &small_config("balance", &out));
    let res = bench(&["run", "--config", &cfg]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), GOLDEN_HEADER);
    let rows = read_csv(&out).unwrap();
    assert_eq!(rows.len(), 18);
    for r in &rows {
        assert_eq!(r.total_samples, 3 * r.iteration);
        assert!(r.ess_hat >= 1.0 && r.ess_hat <= r.total_samples as f64);
    }
}

#[test]
fn reruns_are_byte_identical_without_timing() {
    let dir = TempDir::new().unwrap();
    for scheme in ["flat", "balance", "discard_fixed", "discard_optimized", "non_mixing"] {
        let a = dir.path().join(format!("{scheme}_a.csv"));
        let b = dir.path().join(format!("{scheme}_b.csv"));
        for out in [&a, &b] {
            let cfg = write(dir.path(), "cfg.json", &small_config(scheme, out));
            let res = bench(&["run", "--config", &cfg, "--no-timing"]);
            assert!(res.status.success());
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "{scheme}");
    }
}

#[test]
fn estimates_do_not_depend_on_timing() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let cfg = write(dir.path(), "a.json", &small_config("discard_optimized", &a));
    assert!(bench(&["run", "--config", &cfg]).status.success());
    let cfg = write(dir.path(), "b.json", &small_config("discard_optimized", &b));
    assert!(bench(&["run", "--config", &cfg, "--no-timing"]).status.success());
    let (ra, rb) = (read_csv(&a).unwrap(), read_csv(&b).unwrap());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.psi_hat.to_bits(), y.psi_hat.to_bits());
        assert_eq!(x.ess_hat.to_bits(), y.ess_hat.to_bits());
        assert_eq!((y.adapt_ns, y.generate_ns, y.reweight_ns), (0, 0, 0));
    }
}

#[test]
fn nonmixing_ess_never_exceeds_batch_size() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("nm.csv");
    let cfg = write(dir.path(), "cfg.json", &small_config("non_mixing", &out));
    assert!(bench(&["run", "--config", &cfg]).status.success());
    assert!(read_csv(&out).unwrap().iter().all(|r| r.ess_hat <= 3.0));
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.csv");
    let unknown = small_config("flat", &out).replace("\"experiment\"", "\"colour\": 1, \"experiment\"");
    let cases = [
        unknown,
        small_config("shuffle", &out),
        small_config("flat", &out).replace("\"batch_size\": 3", "\"batch_size\": 0"),
        small_config("flat", &out).replace("[4, 5, 6]", "[]"),
        "{ not json".to_string(),
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{i}.json"), text);
        let res = bench(&["run", "--config", &cfg]);
        assert_eq!(res.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&res.stderr));
    }
    let incremental_balance = small_config("balance", &out).replace(
        "\"schedule\"",
        "\"adaptation\": { \"kind\": \"path_integral\", \"mode\": \"incremental\" }, \"schedule\"",
    );
    let cfg = write(dir.path(), "inc.json", &incremental_balance);
    assert_eq!(bench(&["run", "--config", &cfg]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    let res = bench(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(bench(&["fig2", "--runs", "0"]).status.code(), Some(2));
    assert_eq!(bench(&["bogus"]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("nested.csv");
    let cfg = write(dir.path(), "cfg.json", &small_config("flat", &out));
    let res = bench(&["run", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn seed_environment_variable_sets_the_base() {
    let dir = TempDir::new().unwrap();
    let cfg_text = |out: &Path| {
        small_config("flat", out).replace("\"seeds\": [4, 5, 6]", "\"num_runs\": 2")
    };
    let a = dir.path().join("a.csv");
    let cfg = write(dir.path(), "a.json", &cfg_text(&a));
    let res = Command::new(env!("CARGO_BIN_EXE_amis-bench"))
        .args(["run", "--config", &cfg, "--no-timing"])
        .env("AMIS_SEED", "5")
        .output()
        .unwrap();
    assert!(res.status.success());
    let b = dir.path().join("b.csv");
    let cfg = write(dir.path(), "b.json", &cfg_text(&b));
    assert!(bench(&["run", "--config", &cfg, "--no-timing", "--seeds", "5,6"]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let res = Command::new(env!("CARGO_BIN_EXE_amis-bench"))
        .args(["run", "--config", &cfg])
        .env("AMIS_SEED", "five")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn experiment_subcommands_write_their_files() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = bench(&["fig2", "--out", out, "--runs", "2", "--iterations", "8", "--nonmixing-batch", "2"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_csv(&dir.path().join("fig2.csv")).unwrap();
    assert!(rows.iter().any(|r| r.scheme == "non_mixing"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig2_summary.json")).unwrap())
            .unwrap();
    for key in ["balance", "discard_optimized", "discard_fixed", "non_mixing", "upper_bound"] {
        assert!(summary[key]["slope"].is_number(), "{key}");
        assert!(summary[key]["final_ess_mean"].is_number(), "{key}");
    }
    assert_eq!(summary["upper_bound"]["slope"], 0.421875);

    assert!(bench(&["fig3", "--out", out, "--runs", "2", "--iterations", "6"]).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig3_summary.json")).unwrap())
            .unwrap();
    assert!(summary["balance"]["final_ess_stderr"].is_number());

    let res = bench(&["timing", "--out", out, "--runs", "2", "--total-samples", "20", "--iterations", "2,10"]);
    assert!(res.status.success());
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("timing.json")).unwrap()).unwrap();
    assert_eq!(table["schemes"].as_array().unwrap().len(), 2);

    assert!(bench(&["counterexample", "--out", out, "--runs", "3", "--iterations", "20"]).status.success());
    let rows = read_csv(&dir.path().join("counterexample.csv")).unwrap();
    assert_eq!(rows.len(), 60);
}
