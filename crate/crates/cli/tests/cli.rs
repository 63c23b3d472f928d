use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use sketchfl::fed::{communication_bits, run_many, SeedAverage};
use sketchfl_cli::config::ExperimentConfig;
use sketchfl_cli::experiment::guard_step;
use sketchfl_cli::output::read_csv;
use sketchfl_cli::sweep::sweep_communication;
use sketchfl_cli::{run_command, Command};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap()
}

fn sketchfl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Process::new(env!("CARGO_BIN_EXE_sketchfl"));
    cmd.args(args).env_remove("SKFL_SEED").env_remove("SKFL_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn minimal_config_passes_gd_equivalence() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config_path("minimal_gd.toml");
    let o = sketchfl(&["run-fl", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(out.path());
    assert_eq!(s["pass"], true);
    let names: Vec<&str> = s["assertions"].as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"gd_equivalence"));
}

#[test]
fn guard_violation_is_recorded_as_a_warning() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config_path("guard_violation.toml");
    let o = sketchfl(&["run-fl", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()], &[]);
    assert!(o.status.success());
    let s = summary(out.path());
    let warnings = s["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("guard")), "{warnings:?}");
}

#[test]
fn strongly_convex_reproduction_keeps_a_nonnegative_margin() {
    let a = run_command(Command::RunFl, &load("strongly_convex.toml"), 7).unwrap();
    assert!(a.summary.pass, "{:?}", a.summary.assertions);
    assert!(a.summary.warnings.is_empty(), "{:?}", a.summary.warnings);
    let (_, rows) = read_csv(a.file("bound.csv").unwrap()).unwrap();
    assert_eq!(rows.len(), 301);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn reruns_are_byte_identical() {
    for (sub, name) in [("run-dp-fl", "dp.toml"), ("run-fl", "nonconvex.toml"), ("attack", "attack_linear.toml")] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = config_path(name);
        for dir in [&a, &b] {
            let o = sketchfl(&[sub, "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
            assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert!(fa.len() >= 2);
        assert_eq!(fa, fb, "{name}");
    }
}

#[test]
fn trace_csv_reparses_to_the_in_memory_values() {
    let cfg = load("nonconvex.toml");
    let artifacts = run_command(Command::RunFl, &cfg, 7).unwrap();
    let obj = cfg.objective.as_ref().unwrap().build().unwrap();
    let mut run = cfg.run.clone().unwrap();
    run.sketch.master_seed = 7;
    run.eta_local = guard_step(&obj, &run);
    let avg = SeedAverage::new(&run_many(&obj, &run).unwrap());
    let (head, rows) = read_csv(artifacts.file("trace.csv").unwrap()).unwrap();
    assert_eq!(head, vec!["t", "f_gap", "dist_sq", "grad_norm_sq", "avg_gap", "bits"]);
    assert_eq!(rows.len(), avg.f_gap.len());
    for (t, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<usize>().unwrap(), t);
        for (cell, value) in row[1..4].iter().zip([avg.f_gap[t], avg.dist_sq[t], avg.grad_norm_sq[t]]) {
            assert_eq!(cell.parse::<f64>().unwrap().to_bits(), value.to_bits());
        }
        assert_eq!(row[4], "");
    }
}

#[test]
fn environment_overrides_seed_and_output() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config_path("privacy.toml");
    let o = sketchfl(
        &["account-privacy", "--config", cfg.to_str().unwrap()],
        &[("SKFL_SEED", "99"), ("SKFL_OUT", out.path().to_str().unwrap())],
    );
    assert!(o.status.success());
    assert_eq!(summary(out.path())["seed"], 99);
    let other = tempfile::tempdir().unwrap();
    let o = sketchfl(
        &["account-privacy", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", other.path().to_str().unwrap()],
        &[("SKFL_SEED", "99"), ("SKFL_OUT", out.path().to_str().unwrap())],
    );
    assert!(o.status.success());
    assert_eq!(summary(other.path())["seed"], 5);
}

#[test]
fn unknown_key_exits_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config_path("privacy.toml")).unwrap();
    std::fs::write(&bad, text.replace("k = 4", "k = 4\nkk = 4")).unwrap();
    let o = sketchfl(&["account-privacy", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kk"));
}

#[test]
fn failed_assertion_sets_the_exit_code_unless_disabled() {
    let dir = tempfile::tempdir().unwrap();
    let strict = dir.path().join("attack_strict.toml");
    let text = std::fs::read_to_string(config_path("attack_linear.toml")).unwrap();
    let observed = config_path("attack_linear_observed.csv");
    let text = text
        .replace("target_error = 1e-5", "target_error = 1e-30")
        .replace("multi_start = 8", "multi_start = 0")
        .replace("\"attack_linear_observed.csv\"", &format!("{:?}", observed.to_str().unwrap()));
    std::fs::write(&strict, text).unwrap();
    let out = dir.path().join("out");
    let args = ["attack", "--config", strict.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(sketchfl(&args, &[]).status.code(), Some(1));
    assert_eq!(summary(&out)["pass"], false);
    let mut relaxed = args.to_vec();
    relaxed.push("--no-assert");
    assert_eq!(sketchfl(&relaxed, &[]).status.code(), Some(0));
}

#[test]
fn attack_outputs_trajectory_and_conditions() {
    let a = run_command(Command::Attack, &load("attack_linear.toml"), 1).unwrap();
    assert!(a.summary.pass, "{:?}", a.summary.assertions);
    let (head, rows) = read_csv(a.file("trajectory.csv").unwrap()).unwrap();
    assert_eq!(head, vec!["step", "loss", "x0", "x1", "x2", "x3"]);
    assert!(rows.len() > 10);
    let report: serde_json::Value = serde_json::from_slice(a.file("conditions.json").unwrap()).unwrap();
    assert!(report["lemma_step_rule"]["error"].is_string());
    assert!(report["measured_step_rule"]["eta"].is_number());
    assert_eq!(report["probe"]["unique"], true);
}

#[test]
fn sweep_reaches_a_tiny_target_without_heterogeneity() {
    let mut cfg = load("sweep.toml");
    let spec = cfg.objective.as_mut().unwrap();
    spec.d = 16;
    spec.n_clients = 4;
    spec.n_per_client = 256;
    let obj = spec.build().unwrap();
    let mut run = cfg.run.clone().unwrap();
    run.n_seeds = 2;
    let result = sweep_communication(&obj, &run, &[16, 8, 4, 2], 1e-20, 20_000).unwrap();
    for p in &result.points {
        assert!(p.unreachable.is_none(), "{p:?}");
        assert_eq!(p.total_bits, Some(p.t_to_target.unwrap() as u64 * p.per_round_bits));
    }
}

#[test]
fn sweep_reports_an_unreachable_target_without_failing() {
    let mut cfg = load("sweep.toml");
    cfg.objective.as_mut().unwrap().heterogeneity = 5.0;
    cfg.sweep.as_mut().unwrap().target_eps = 1e-12;
    cfg.sweep.as_mut().unwrap().max_rounds = 10;
    cfg.sweep.as_mut().unwrap().b_values = Some(vec![8]);
    let a = run_command(Command::Sweep, &cfg, 1).unwrap();
    assert!(a.summary.warnings.iter().any(|w| w.contains("noise floor")), "{:?}", a.summary.warnings);
    let bits = a.summary.assertions.iter().find(|x| x.name == "bits_within_band").unwrap();
    assert!(!bits.pass);
}

#[test]
fn uplink_bits_double_with_the_client_count() {
    let run = load("sweep.toml").run.unwrap();
    let uplink = |n: usize| communication_bits(&run, n).0 - 64 * run.sketch.b_sketch as u64;
    assert_eq!(uplink(16), 2 * uplink(8));
    assert_eq!(communication_bits(&run, 8).0, 64 * 64 * 9);
}
