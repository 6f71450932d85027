use std::fs;
use std::path::Path;
use std::process::Command;

use seqjde::cli::{cmd_design, cmd_generate, cmd_simulate, PolicyFile, RunConfig};
use seqjde::Error;

const SMALL: &str = r#"
[network]
nodes = 3
d_com = 0.7
seed = 4

[constraints]
alpha0 = 0.1
alpha1 = 0.1
beta0 = 0.22
beta1 = 0.22

[design]
horizon = 6
grid_points = 61
n_samp = 300
theta_bins = 61

[simulate]
runs = 3000
seed = 5
"#;

fn small() -> RunConfig {
    RunConfig::parse(SMALL, "small.toml").unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seqjde"))
}

fn pipeline(config: &RunConfig, out: &Path) {
    cmd_generate(config, out).unwrap();
    cmd_design(config, out, false, None).unwrap();
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let config = small();
    pipeline(&config, out);
    let summary = cmd_simulate(&config, out, true).unwrap();
    for f in ["network.txt", "weights.csv", "design_log.jsonl", "results.csv", "summary.json", "trials.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    for k in 0..3 {
        assert!(out.join(format!("policies/node_{k:03}.json")).is_file());
        assert!(out.join(format!("plots/policy_node_{k:03}.svg")).is_file());
    }
    assert!(out.join("plots/results.svg").is_file());
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with("node,alpha0,alpha1,mse0,mse1,asn,runs,seed\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("network,"));
    assert_eq!(summary.runs, 3000);
    assert_eq!(fs::read_to_string(out.join("design_log.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn results_are_byte_identical_across_workers_and_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let mut config = small();
    pipeline(&config, out);
    let mut csvs = Vec::new();
    for workers in [1, 4, 1] {
        config.simulate.workers = workers;
        cmd_simulate(&config, out, false).unwrap();
        csvs.push(fs::read(out.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}

#[test]
fn design_is_deterministic() {
    let config = small();
    let read = |dir: &Path| fs::read(dir.join("policies/node_001.json")).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(&config, a.path());
    pipeline(&config, b.path());
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn mismatched_policies_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let config = small();
    pipeline(&config, out);
    let mut other = config.clone();
    other.model.sigma = 3.0;
    match cmd_simulate(&other, out, false) {
        Err(Error::Mismatch(msg)) => assert!(msg.contains("different network, model, grid or horizon"), "{msg}"),
        other => panic!("expected a mismatch, got {other:?}"),
    }
    let file: PolicyFile = serde_json::from_str(&fs::read_to_string(out.join("policies/node_000.json")).unwrap()).unwrap();
    assert_eq!(file.fingerprint.len(), 64);
}

#[test]
fn single_run_csv_holds_one_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let mut config = small();
    pipeline(&config, out);
    config.simulate.runs = 1;
    let summary = cmd_simulate(&config, out, false).unwrap();
    assert_eq!(summary.hypothesis_counts.iter().sum::<u64>(), 1);
    for n in &summary.nodes {
        assert!(n.alpha.iter().all(|&a| a == 0.0 || a == 1.0));
        assert_eq!(n.asn.fract(), 0.0);
    }
}

#[test]
fn loose_constraints_log_zero_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let mut config = small();
    config.constraints.alpha0 = 0.45;
    config.constraints.alpha1 = 0.45;
    config.constraints.beta0 = 2.0;
    config.constraints.beta1 = 2.0;
    pipeline(&config, out);
    let log = fs::read_to_string(out.join("design_log.jsonl")).unwrap();
    for line in log.lines() {
        let r: seqjde::design::DesignReport = serde_json::from_str(line).unwrap();
        assert!(r.coefficients.as_array().iter().all(|&c| c < 1e-6), "{:?}", r.coefficients);
    }
}

#[test]
fn single_node_network_is_generated() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small();
    config.network.nodes = 1;
    cmd_generate(&config, dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("network.txt")).unwrap();
    let g = seqjde::network::NetworkGraph::parse_edge_list(&text).unwrap();
    assert_eq!(g.node_count(), 1);
    assert!(g.edges().is_empty());
}

#[test]
fn invalid_radius_is_rejected_with_its_line() {
    let text = SMALL.replace("d_com = 0.7", "d_com = 0.0");
    match RunConfig::parse(&text, "bad.toml") {
        Err(Error::Config { path, line, message }) => {
            assert_eq!(path, "bad.toml");
            assert_eq!(line, 4);
            assert!(message.starts_with("network.d_com"), "{message}");
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn missing_network_gives_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_design(&small(), dir.path(), false, None).unwrap_err();
    assert!(err.to_string().contains("seqjde generate"), "{err}");
}

#[test]
fn binary_runs_the_pipeline_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, SMALL).unwrap();
    let run = |args: &[&str]| {
        bin()
            .args(["--config", config.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()])
            .args(args)
            .output()
            .unwrap()
    };
    for cmd in [&["generate"][..], &["design"], &["simulate", "--runs", "200"], &["report"]] {
        let o = run(cmd);
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["design", "--fallback-dual", "--nodes", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("node   0"));

    // N = 1 cannot reach these error levels.
    let tight = SMALL.replace("horizon = 6", "horizon = 1").replace("beta0 = 0.22", "beta0 = 0.05");
    fs::write(&config, tight).unwrap();
    let o = run(&["design"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("design failed for nodes"));

    let o = bin().args(["--config", "/nonexistent/run.toml", "generate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reference_constraints_give_active_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(&small(), out);
    let file: PolicyFile = serde_json::from_str(&fs::read_to_string(out.join("policies/node_001.json")).unwrap()).unwrap();
    assert!(file.coefficients.as_array().iter().any(|&c| c > 1e-6), "{:?}", file.coefficients);
}
