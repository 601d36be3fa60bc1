use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn reltask(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reltask"))
        .current_dir(dir)
        .env_remove("RELTASK_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = reltask(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn report(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["report"].clone()
}

#[test]
fn gen_writes_requested_rows_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["gen", "--builtin", "same_different", "--n", "512", "--seed", "7", "--out", "a"]);
    ok(d, &["gen", "--builtin", "same_different", "--n", "512", "--seed", "7", "--out", "b"]);
    let a = fs::read(d.join("a/dataset.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/dataset.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# manifest "));
    assert!(lines.next().unwrap().starts_with("idx,"));
    assert_eq!(lines.count(), 512);

    let m: Value = serde_json::from_str(&fs::read_to_string(d.join("a/manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in &files {
        assert!(d.join("a").join(f).exists(), "{f} listed but missing");
    }
    assert!(text.starts_with(&format!("# manifest {}", m["config_hash"].as_str().unwrap())));
}

#[test]
fn program_rows_have_constant_length_per_template() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen", "--builtin", "string_assign_program", "--n", "40", "--out", "p"]);
    let text = fs::read_to_string(tmp.path().join("p/dataset.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let width = lines.next().unwrap().split(',').count();
    assert!(lines.all(|l| l.split(',').count() == width));
}

#[test]
fn env_seed_is_a_default() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let run = |seed: &str, extra: &[&str], out: &str| {
        let mut args = vec!["gen", "--n", "20", "--out", out];
        args.extend_from_slice(extra);
        let o = Command::new(env!("CARGO_BIN_EXE_reltask")).current_dir(d).env("RELTASK_SEED", seed).args(&args).output().unwrap();
        assert!(o.status.success());
        fs::read(d.join(out).join("dataset.csv")).unwrap()
    };
    assert_eq!(run("5", &[], "a"), run("9", &["--seed", "5"], "b"));
    assert_ne!(run("5", &[], "c"), run("6", &[], "d"));
}

#[test]
fn nmatrix_inner_product_is_singular() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["nmatrix", "--builtin", "same_different", "--kernel", "mlp", "--out", "n"]);
    let r = report(&tmp.path().join("n/n_matrix.json"));
    assert_eq!(r["singular"], Value::Bool(true));
    assert_eq!(r["entries"].as_array().unwrap().len(), 2);
}

#[test]
fn fatal_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(reltask(d, &["nonsense"]).status.code(), Some(2));
    assert_eq!(reltask(d, &["gen", "--bogus-key", "1"]).status.code(), Some(2));
    assert_eq!(reltask(d, &["gen", "--builtin", "not_a_task"]).status.code(), Some(2));
    fs::write(d.join("c.json"), "{\"task\": {\"builtin\": \"aba_vs_abb\"}, \"n\": 5, \"extra\": 1}").unwrap();
    assert_eq!(reltask(d, &["gen", "--config", "c.json"]).status.code(), Some(2));
}

#[test]
fn resumed_checkpoint_reproduces_final_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["train", "--n", "64", "--epochs", "3", "--d-emb", "16", "--d-head", "8", "--d-mlp", "16", "--out", "t"]);
    ok(d, &["train", "--n", "64", "--epochs", "0", "--d-emb", "16", "--d-head", "8", "--d-mlp", "16", "--resume", "t/model.ckpt", "--out", "r"]);
    let log = fs::read_to_string(d.join("t/log.csv")).unwrap();
    let last: Vec<f64> = log.lines().last().unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    let resumed = fs::read_to_string(d.join("r/log.csv")).unwrap();
    let first: Vec<f64> = resumed.lines().last().unwrap().split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert_eq!(last, first, "validation and test loss of the saved model");
}

#[test]
fn mlp_arch_and_probe_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["train", "--arch", "mlp", "--n", "64", "--epochs", "2", "--out", "m"]);
    assert!(d.join("m/summary.json").exists());
    ok(d, &["probe", "--demb", "16,32", "--n-seeds", "2", "--value-identity", "--out", "p"]);
    let s = fs::read_to_string(d.join("p/probe_summary.csv")).unwrap();
    assert_eq!(s.lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn sweep_runs_in_parallel_with_identical_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let args = |jobs: &'static str, out: &'static str| {
        vec!["sweep", "--n-grid", "64", "--n-seeds", "2", "--epochs", "2", "--jobs", jobs, "--out", out]
    };
    ok(d, &args("1", "s1"));
    ok(d, &args("2", "s2"));
    assert_eq!(fs::read(d.join("s1/sweep.csv")).unwrap(), fs::read(d.join("s2/sweep.csv")).unwrap());
}
