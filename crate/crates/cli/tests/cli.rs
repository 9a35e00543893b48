use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_condgap");

fn condgap(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn condgap")
}

fn ok(args: &[&str], dir: &Path) {
    let o = condgap(args, dir);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Every output file except the metadata, by name.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "metadata.json")
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn small_data(dir: &Path) {
    write(
        dir,
        "ds.json",
        r#"{"T": 12, "n_train": 60, "n_val": 20, "n_test": 10, "generator": {"kind": "branching"}}"#,
    );
    ok(&["gen-data", "--config", "ds.json", "--out", "data"], dir);
}

#[test]
fn univariate_report_values() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["demo-univariate", "--out", "u"], tmp.path());
    let r = json(&tmp.path().join("u/univariate.json"));
    let ml = r["ml_argmax"].as_f64().unwrap();
    assert!((ml - 0.9f64.sqrt()).abs() <= r["grid_step"].as_f64().unwrap() + 1e-12);
    assert_eq!(r["elbo_argmax_differs_from_ml"], Value::Bool(true));
    assert!((r["stated_formula_var_at_ml"].as_f64().unwrap() - 1.0 / 91.0).abs() < 1e-12);
}

#[test]
fn bimodal_report_values() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["demo-bimodal", "--out", "b"], tmp.path());
    let r = json(&tmp.path().join("b/bimodal.json"));
    let s = r["scenarios"].as_array().unwrap();
    let gap = |i: usize| s[i]["gap"].as_f64().unwrap();
    assert_eq!(s[0]["name"], "separated");
    assert!((gap(0) - 20.0).abs() < 1e-9);
    assert!(gap(1) < gap(0));
    for sc in s {
        for (k, m) in sc["grid_mass"].as_object().unwrap() {
            assert!((m.as_f64().unwrap() - 1.0).abs() < 1e-3, "{k}: {m}");
        }
    }
    assert!(tmp.path().join("b/bimodal_density_overlapping.csv").exists());
}

#[test]
fn gap_sweep_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["gap-lgssm", "--out", "g"], tmp.path());
    let text = fs::read_to_string(tmp.path().join("g/gap_sweep.csv")).unwrap();
    for kind in ["process", "observation"] {
        let gaps: Vec<f64> = text
            .lines()
            .filter(|l| l.starts_with(kind))
            .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
            .collect();
        assert!(gaps.len() >= 4);
        assert!(gaps.windows(2).all(|w| w[1] < w[0] || w[1] == 0.0), "{kind}: {gaps:?}");
        assert_eq!(*gaps.last().unwrap(), 0.0);
    }
}

#[test]
fn untrained_eval_is_finite_and_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_data(d);
    write(
        d,
        "model.json",
        r#"{"n_latent": 2, "conditioning": {"mode": "partial"}}"#,
    );
    write(
        d,
        "eval.json",
        r#"{"models": [{"model": "model.json"}], "splits": [{"name": "val", "data": "data/val.jsonl"}]}"#,
    );
    ok(&["eval-elbo", "--config", "eval.json", "--seed", "4", "--out", "a"], d);
    ok(&["eval-elbo", "--config", "eval.json", "--seed", "4", "--out", "b"], d);
    ok(&["eval-elbo", "--config", "eval.json", "--seed", "5", "--out", "c"], d);
    let a = fs::read_to_string(d.join("a/elbo_table.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(d.join("b/elbo_table.csv")).unwrap());
    assert_ne!(a, fs::read_to_string(d.join("c/elbo_table.csv")).unwrap());
    let row: Vec<&str> = a.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], &["partial", "partial"]);
    assert!(row[2..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
}

#[test]
fn train_eval_and_prefix_sample_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_data(d);
    write(
        d,
        "train.json",
        r#"{"model": {"n_latent": 2, "steps": 15, "batch_size": 8, "log_every": 5,
                      "conditioning": {"mode": "semi", "sneak_peek": 4}},
            "train_data": "data/train.jsonl", "val_data": "data/val.jsonl"}"#,
    );
    write(
        d,
        "prefix.json",
        r#"{"model": "run/model.json", "checkpoint": "run/checkpoint.json", "data": "data/test.jsonl",
            "prefix_len": 6, "n_particles": 64, "n_futures": 40, "max_sequences": 3}"#,
    );
    let mut runs = Vec::new();
    for _ in 0..2 {
        ok(&["train", "--config", "train.json", "--seed", "2", "--out", "run"], d);
        ok(
            &["prefix-sample", "--config", "prefix.json", "--seed", "2", "--out", "pf"],
            d,
        );
        runs.push((snapshot(&d.join("run")), snapshot(&d.join("pf"))));
    }
    assert_eq!(runs[0], runs[1]);
    let summary = json(&d.join("pf/summary.json"));
    assert_eq!(summary["n_sequences"], 3);
    assert!(summary["ppc_log_density"]["mean"].as_f64().unwrap().is_finite());
    let log = fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,elbo,recon,kl"));
    assert!(json(&d.join("run/metadata.json"))["timestamp_unix"].is_u64());
}

#[test]
fn thread_cap_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_data(d);
    let o = Command::new(BIN)
        .args(["gen-data", "--config", "ds.json", "--out", "capped"])
        .env("CONDGAP_THREADS", "1")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(snapshot(&d.join("data")), snapshot(&d.join("capped")));
}

#[test]
fn gen_data_seed_flag_overrides_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_data(d);
    ok(&["gen-data", "--config", "ds.json", "--seed", "9", "--out", "s9"], d);
    assert_ne!(
        fs::read(d.join("data/train.jsonl")).unwrap(),
        fs::read(d.join("s9/train.jsonl")).unwrap()
    );
    assert_eq!(json(&d.join("s9/dataset.json"))["seed"], 9);
}

#[test]
fn usage_errors_exit_1_and_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write(
        d,
        "bad.json",
        r#"{"model": {"optimizer": {"learning_rat": 0.1}}, "train_data": "x"}"#,
    );
    let o = condgap(&["train", "--config", "bad.json"], d);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model.optimizer.learning_rat"), "{err}");

    write(
        d,
        "gap.json",
        r#"{"model": {"a": [[1.0]], "q": [1.0], "h": [[1.0]], "r": [1.0], "m0": [0.0], "p0": [1.0], "horizon": 4}, "sweeps": []}"#,
    );
    let o = condgap(&["gap-lgssm", "--config", "gap.json"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweeps"));

    assert_eq!(condgap(&["train"], d).status.code(), Some(1));
    assert_eq!(condgap(&["no-such-command"], d).status.code(), Some(1));
    assert_eq!(condgap(&["demo-bimodal", "--bogus"], d).status.code(), Some(1));
    let o = Command::new(BIN)
        .args(["gap-lgssm"])
        .env("CONDGAP_THREADS", "many")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_2_with_a_description() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_data(d);
    write(d, "model.json", r#"{"n_latent": 2}"#);
    write(
        d,
        "eval.json",
        r#"{"models": [{"model": "model.json", "checkpoint": "gone.json"}], "splits": [{"name": "val", "data": "data/val.jsonl"}]}"#,
    );
    let o = condgap(&["eval-elbo", "--config", "eval.json"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gone.json"));

    write(d, "train.json", r#"{"model": {}, "train_data": "absent.jsonl"}"#);
    let o = condgap(&["train", "--config", "train.json"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.jsonl"));
}

#[test]
fn every_subcommand_documents_the_global_flags() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in [
        "demo-univariate",
        "demo-bimodal",
        "gap-lgssm",
        "gen-data",
        "train",
        "eval-elbo",
        "prefix-sample",
    ] {
        let o = condgap(&[cmd, "--help"], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let help = String::from_utf8_lossy(&o.stdout);
        for flag in ["--config", "--seed", "--out", "Config"] {
            assert!(help.contains(flag), "{cmd} help lacks {flag}");
        }
    }
}
