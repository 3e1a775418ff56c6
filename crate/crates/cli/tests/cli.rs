use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn cpvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpvae")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = cpvae(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _root: tempfile::TempDir,
    dir: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// A two-epoch CP-VAE run shared by the tests that need a checkpoint.
fn trained() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let cfg = root.path().join("run.cfg");
        fs::write(&cfg, "profile = toy\nmax_epochs = 2\n").unwrap();
        let dir = root.path().join("train");
        ok(&["train", "--config", s(&cfg), "--seed", "5", "--output", s(&dir)]);
        Fixture { _root: root, dir }
    })
}

fn stderr_line(o: &Output) -> String {
    let e = String::from_utf8_lossy(&o.stderr).to_string();
    assert_eq!(e.trim_end().lines().count(), 1, "expected one line, got {e:?}");
    e
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let f = trained();
    assert!(f.path("model.ckpt").metadata().unwrap().len() > 0);
    let log = fs::read_to_string(f.path("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3, "{log}");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert!(manifest["config"].as_str().unwrap().contains("max_epochs = 2"));
    assert!(manifest["outputs"]["model.ckpt"].is_string());
}

#[test]
fn rerun_reproduces_outputs_bitwise() {
    let f = trained();
    let root = tempfile::tempdir().unwrap();
    let again = root.path().join("again");
    ok(&["rerun", "--manifest", s(&f.path("manifest.json")), "--output", s(&again)]);
    for name in ["model.ckpt", "train_log.csv"] {
        assert_eq!(fs::read(f.path(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
    let outputs = |d: &Path| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap()["outputs"].clone()
    };
    assert_eq!(outputs(&f.dir), outputs(&again));
}

#[test]
fn transfer_emits_one_row_per_sentence() {
    let f = trained();
    let root = tempfile::tempdir().unwrap();
    let input = root.path().join("in.txt");
    let lines = ["the food was great", "the service was slow", "i love this place", "the staff were rude", "terrible pizza"];
    fs::write(&input, lines.join("\n") + "\n").unwrap();
    let before = fs::read(&input).unwrap();
    let out = root.path().join("out");
    ok(&[
        "transfer",
        "--checkpoint",
        s(&f.path("model.ckpt")),
        "--input",
        s(&input),
        "--target",
        "negative",
        "--beam",
        "2",
        "--output",
        s(&out),
    ]);
    let tsv = fs::read_to_string(out.join("transfer.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), lines.len());
    assert!(rows.iter().all(|r| r.starts_with("0\t")));
    assert!(out.join("metrics.json").exists());
    assert_eq!(fs::read(&input).unwrap(), before, "inputs must not change");
}

#[test]
fn extremum_shift_on_baseline_is_positive() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("base.cfg");
    fs::write(&cfg, "profile = toy\nmax_epochs = 15\n").unwrap();
    let train = root.path().join("train");
    ok(&["train", "--baseline", "--config", s(&cfg), "--output", s(&train)]);
    let out = root.path().join("diag");
    ok(&[
        "diagnose",
        "--checkpoint",
        s(&train.join("model.ckpt")),
        "--strategy",
        "extremum",
        "--mixture-size",
        "1000",
        "--mapper-points",
        "400",
        "--intervals",
        "5",
        "--output",
        s(&out),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("nll_summary.json")).unwrap()).unwrap();
    assert!(summary["median_shift"].as_f64().unwrap() > 0.0, "{summary}");
    assert!(out.join("nll_shift.csv").exists() && out.join("mapper_n5.json").exists());
}

#[test]
fn diagnose_exports_simplex_for_cpvae() {
    let f = trained();
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("diag");
    ok(&[
        "diagnose",
        "--checkpoint",
        s(&f.path("model.ckpt")),
        "--mixture-size",
        "200",
        "--mapper-points",
        "200",
        "--intervals",
        "5,10",
        "--output",
        s(&out),
    ]);
    let csv = fs::read_to_string(out.join("simplex.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "p0,p1,p2,x,y");
    assert!(out.join("mapper_n10.json").exists() && out.join("coverage.json").exists());
}

#[test]
fn unknown_flag_fails_with_one_line() {
    let o = cpvae(&["train", "--bogus", "--output", "x"]);
    assert_eq!(o.status.code(), Some(2));
    stderr_line(&o);
}

#[test]
fn missing_file_fails_before_work() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let o = cpvae(&["transfer", "--checkpoint", "/no/such/model.ckpt", "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_line(&o).contains("/no/such/model.ckpt"));
    assert!(!out.exists());
}

#[test]
fn malformed_config_names_the_key() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("bad.cfg");
    fs::write(&cfg, "profile = toy\nmax_epochs = lots\n").unwrap();
    let out = root.path().join("out");
    let o = cpvae(&["train", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_line(&o).contains("max_epochs"));
    assert!(!out.exists());

    fs::write(&cfg, "profile = toy\nwidth_of_things = 3\n").unwrap();
    let o = cpvae(&["train", "--config", s(&cfg), "--output", s(&out)]);
    assert!(stderr_line(&o).contains("width_of_things"));
}

#[test]
fn failed_run_removes_partial_outputs() {
    let f = trained();
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("diag");
    // the NLL report is written before the mapper rejects zero intervals
    let o = cpvae(&[
        "diagnose",
        "--checkpoint",
        s(&f.path("model.ckpt")),
        "--mixture-size",
        "100",
        "--intervals",
        "0",
        "--output",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    stderr_line(&o);
    assert!(!out.exists());
}
