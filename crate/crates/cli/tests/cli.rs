use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_hoiprior");

const SMALL: &str = r#"{
  "seed": 3,
  "grid": { "resolution": 20, "center": [0.0, 0.1, 0.0], "half_extent": 1.2 },
  "synth": {
    "views": 12,
    "width": 96,
    "height": 96,
    "category": "ball",
    "objects": [
      {
        "prompt": "hold",
        "part": "rightHand",
        "primitives": [{ "shape": "sphere", "center": [-0.86, 0.49, 0.09], "radius": 0.12 }],
        "attachment": { "mode": "bone", "bone": 23 }
      }
    ]
  }
}"#;

fn hoiprior(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CHORUS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = hoiprior(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn failure(args: &[&str]) -> Value {
    let out = hoiprior(args);
    assert!(!out.status.success(), "{args:?} should fail");
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("stderr has a line");
    serde_json::from_str(last).expect("error line is JSON")
}

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("config.json");
        fs::write(&config, SMALL).unwrap();
        Self { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }

    fn dataset(&self) -> PathBuf {
        let ds = self.path("ds");
        if !ds.exists() {
            ok(&["synth-generate", "--config", self.cfg(), "--out", s(&ds)]);
        }
        ds
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_writes_every_artifact() {
    let ws = Workspace::new();
    let out = ws.path("run");
    let summary = ok(&["run", "--config", ws.cfg(), "--out", s(&out)]);
    for name in [
        "field.chor",
        "pap.csv",
        "summary.json",
        "mesh.obj",
        "diagnostics.json",
        "dataset/meta.json",
        "dataset/records.jsonl",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    for name in ["field.chor", "pap.csv", "summary.json", "mesh.obj"] {
        let stamp = read_json(&out.join(format!("{name}.meta.json")));
        assert_eq!(stamp["seed"], 3);
        assert_eq!(stamp["config_hash"].as_str().unwrap().len(), 64);
    }
    let pap = read_json(&out.join("summary.json"))["pap"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&pap));
    assert!(pap > 20.0, "pap {pap}");
    assert_eq!(summary["eval-pap"]["pap"].as_f64().unwrap(), pap);
    let csv = fs::read_to_string(out.join("pap.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("sample_id,ap"));
    assert_eq!(csv.lines().count(), 1 + 12);
    let diag = read_json(&out.join("diagnostics.json"));
    assert_eq!(diag["bin_counts"].as_array().unwrap().len(), 12);
    assert_eq!(diag["prompt_counts"]["hold"], 12);
    assert!(diag["camera_entropy_bits"].as_f64().unwrap() > 0.0);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let ws = Workspace::new();
    let mut fields = Vec::new();
    for (i, threads) in ["1", "3", "1"].iter().enumerate() {
        let ds = ws.path(&format!("ds{i}"));
        let field = ws.path(&format!("f{i}.chor"));
        ok(&["--threads", threads, "synth-generate", "--config", ws.cfg(), "--out", s(&ds)]);
        ok(&["--threads", threads, "aggregate", "--config", ws.cfg(), "--dataset", s(&ds), "--out", s(&field)]);
        let records = fs::read(ds.join("records.jsonl")).unwrap();
        fields.push((fs::read(&field).unwrap(), records));
    }
    assert!(fields.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn env_thread_count_is_validated() {
    let out = Command::new(BIN)
        .args(["diagnostics", "--dataset", "nowhere"])
        .env("CHORUS_THREADS", "many")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["stage"], "setup");
}

#[test]
fn semantic_tag_follows_the_field() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    let field = ws.path("hold.chor");
    let res = ok(&[
        "aggregate", "--config", ws.cfg(), "--dataset", s(&ds), "--out", s(&field),
        "--prompt", "hold", "--part", "rightHand",
    ]);
    assert!(res["used"].as_u64().unwrap() > 0);
    let tag = read_json(&ws.path("hold.chor.meta.json"))["tag"].clone();
    assert_eq!(tag["kind"], "semantic");
    assert_eq!(tag["prompt"], "hold");
    assert_eq!(tag["part"], "rightHand");

    let posed = ws.path("posed.chor");
    ok(&["infer", "--config", ws.cfg(), "--field", s(&field), "--dataset", s(&ds), "--view", "4", "--out", s(&posed)]);
    assert_eq!(read_json(&ws.path("posed.chor.meta.json"))["tag"], tag);

    let mesh = ws.path("hold.ply");
    let m = ok(&["export-mesh", "--field", s(&field), "--iso", "0.3", "--out", s(&mesh)]);
    assert_eq!(read_json(&ws.path("hold.ply.meta.json"))["tag"], tag);
    assert!(m["closed"].as_bool().unwrap());
    assert!(fs::read(&mesh).unwrap().starts_with(b"ply\n"));
}

#[test]
fn eval_pap_modes_and_per_sample_report() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    let field = ws.path("f.chor");
    ok(&["aggregate", "--config", ws.cfg(), "--dataset", s(&ds), "--out", s(&field)]);
    let csv = ws.path("ap.csv");
    let full = ok(&["eval-pap", "--config", ws.cfg(), "--field", s(&field), "--dataset", s(&ds), "--out", s(&csv)]);
    assert_eq!(full["n"], 12);
    let strict = ok(&["eval-pap", "--config", ws.cfg(), "--field", s(&field), "--dataset", s(&ds), "--mode", "strict"]);
    assert!(strict["pap"].as_f64().unwrap() <= full["pap"].as_f64().unwrap() + 1e-9);
    let hoa = ok(&["eval-pap", "--config", ws.cfg(), "--field", s(&field), "--dataset", s(&ds), "--hoa"]);
    assert_eq!(hoa["hoa"], true);

    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.lines().nth(1).unwrap().starts_with("00000,"));
    let mean: f64 = rows
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum::<f64>()
        / 12.0;
    assert!((100.0 * mean - full["pap"].as_f64().unwrap()).abs() < 1e-6);

    // An already posed field skips backward skinning.
    let posed = ws.path("v0.chor");
    ok(&["infer", "--config", ws.cfg(), "--field", s(&field), "--dataset", s(&ds), "--view", "0", "--out", s(&posed)]);
    let direct = ok(&["eval-pap", "--config", ws.cfg(), "--field", s(&posed), "--dataset", s(&ds), "--posed"]);
    assert_eq!(direct["n"], 12);
}

#[test]
fn filter_reports_rejections() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    let csv = ws.path("rejected.csv");
    let summary = ok(&[
        "filter", "--records", s(&ds.join("records.jsonl")), "--category", "ball", "--out", s(&csv),
    ]);
    assert_eq!(summary["records"], 12);
    let rejected = summary["rejected"].as_u64().unwrap();
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("image_id,reason"));
    assert_eq!(text.lines().count() as u64, 1 + rejected);
    let rate = summary["rejection_rate_percent"].as_f64().unwrap();
    assert!((rate - 100.0 * rejected as f64 / 12.0).abs() < 1e-9);

    // Every record names a ball, so asking for another category rejects all.
    let other = ok(&["filter", "--records", s(&ds.join("records.jsonl")), "--category", "kite"]);
    assert_eq!(other["rejected"], 12);
}

#[test]
fn calibrate_recovers_synthetic_cameras() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    let report = ws.path("cal.json");
    let summary = ok(&["calibrate", "--dataset", s(&ds), "--out", s(&report)]);
    assert_eq!(summary["views"], 12);
    assert_eq!(summary["failed"], 0);
    let entries = read_json(&report);
    for e in entries.as_array().unwrap() {
        assert!(e["rms"].as_f64().unwrap() < 1.0);
        assert!(e["azimuth_error_deg"].as_f64().unwrap() < 5.0);
    }
    let applied = ok(&["calibrate", "--dataset", s(&ds), "--apply", "--profile", "eval"]);
    assert_eq!(applied["applied"], true);
    ok(&["diagnostics", "--dataset", s(&ds)]);
}

#[test]
fn failures_name_their_stage() {
    let ws = Workspace::new();
    let bad = ws.path("bad.json");
    fs::write(&bad, r#"{"seeed": 1}"#).unwrap();
    let err = failure(&["aggregate", "--config", s(&bad), "--dataset", "x", "--out", "y"]);
    assert_eq!(err["stage"], "aggregate");
    assert!(err["error"].as_str().unwrap().contains("seeed"));

    let err = failure(&["eval-pap", "--field", "missing.chor", "--dataset", "missing"]);
    assert_eq!(err["stage"], "eval-pap");

    let err = failure(&["synth-generate", "--out", s(&ws.path("nothing"))]);
    assert_eq!(err["stage"], "synth-generate");
    assert!(err["error"].as_str().unwrap().contains("synth"));

    let ds = ws.dataset();
    let field = ws.path("f.chor");
    ok(&["aggregate", "--config", ws.cfg(), "--dataset", s(&ds), "--out", s(&field)]);
    let err = failure(&["export-mesh", "--field", s(&field), "--out", s(&ws.path("m.stl"))]);
    assert_eq!(err["stage"], "export-mesh");
    let err = failure(&["export-mesh", "--field", s(&field), "--iso", "2", "--out", s(&ws.path("m.obj"))]);
    assert_eq!(err["stage"], "export-mesh");

    let err = failure(&["run", "--config", s(&bad), "--out", s(&ws.path("r"))]);
    assert_eq!(err["stage"], "run");
}

#[test]
fn demo_config_loads() {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.json");
    let out = Command::new(BIN)
        .args(["diagnostics", "--config", s(&demo), "--dataset", "does-not-exist"])
        .output()
        .unwrap();
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["stage"], "diagnostics");
    assert!(err["error"].as_str().unwrap().contains("does-not-exist"));
}
