use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[synth]
sample_rate_hz = 20.0

[synth.schedule]
exposures = 9
min_nodes = 5
max_nodes = 60

[ingest]
downsample_factor = 4
folds = 2

[model]
encoder_blocks = 1
pooled_nodes = 4

[train]
epochs = 2
lr = 1e-3
"#;

fn gvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvit")).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config_path = root.join("run.toml");
        fs::write(&config_path, config).unwrap();
        Workspace {
            _dir: dir,
            root,
            config: config_path,
        }
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut all = vec!["--config", s(&self.config)];
        all.extend_from_slice(args);
        gvit(&all)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// synth, ingest and train; returns the run directory.
    fn pipeline(&self) -> PathBuf {
        ok(&self.run(&["synth", "--out", s(&self.path("synth"))]));
        ok(&self.run(&[
            "ingest",
            s(&self.path("synth/manifest.toml")),
            "--out",
            s(&self.path("data")),
        ]));
        ok(&self.run(&["train", s(&self.path("data")), "--out", s(&self.path("run"))]));
        self.path("run")
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let ws = Workspace::new(TINY);
    ok(&ws.run(&["synth", "--out", s(&ws.path("a"))]));
    ok(&ws.run(&["synth", "--out", s(&ws.path("b"))]));
    let a = fs::read(ws.path("a/stream.txt")).unwrap();
    assert!(a.len() > 1000);
    assert_eq!(a, fs::read(ws.path("b/stream.txt")).unwrap());
    let prov = json(&ws.path("a/provenance.json"));
    assert_eq!(prov["command"], "synth");
    assert_eq!(prov["seed"], 3);
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
    ok(&ws.run(&["--seed", "4", "synth", "--out", s(&ws.path("c"))]));
    assert_ne!(a, fs::read(ws.path("c/stream.txt")).unwrap());
}

#[test]
fn ingest_recovers_every_exposure() {
    let ws = Workspace::new(&TINY.replace("exposures = 9", "exposures = 6"));
    ok(&ws.run(&["synth", "--out", s(&ws.path("synth"))]));
    let out = ws.run(&["ingest", s(&ws.path("synth/manifest.toml")), "--out", s(&ws.path("data"))]);
    ok(&out);
    assert_eq!(json(&ws.path("data/dataset.json"))["graph_count"], 6);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("segment.count"), "{stdout}");
    assert!(stdout.contains("train-val"), "{stdout}");
}

#[test]
fn missing_inputs_and_bad_config_have_distinct_exit_codes() {
    let ws = Workspace::new(TINY);
    let out = ws.run(&["ingest", s(&ws.path("nope/manifest.toml")), "--out", s(&ws.path("data"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest not found"));

    fs::write(ws.path("bad.toml"), "[model]\nd_model = 50\n").unwrap();
    let out = gvit(&["--config", s(&ws.path("bad.toml")), "synth", "--out", s(&ws.path("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = gvit(&["train"]);
    assert_eq!(out.status.code(), Some(2));

    fs::create_dir_all(ws.path("empty")).unwrap();
    fs::write(ws.path("empty/stream.txt"), "").unwrap();
    fs::write(ws.path("empty/manifest.toml"), "[[streams]]\npath = \"stream.txt\"\ngroup = \"co_ethylene\"\n").unwrap();
    let out = ws.run(&["ingest", s(&ws.path("empty/manifest.toml")), "--out", s(&ws.path("d2"))]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn train_eval_predict_round_trip() {
    let ws = Workspace::new(TINY);
    let run = ws.pipeline();
    for k in 0..2 {
        assert!(run.join(format!("fold_{k}.json")).is_file());
        assert!(run.join(format!("history_fold_{k}.csv")).is_file());
    }

    // refuses to clobber a finished run
    let again = ws.run(&["train", s(&ws.path("data")), "--out", s(&run)]);
    assert_eq!(again.status.code(), Some(2));
    ok(&ws.run(&["train", s(&ws.path("data")), "--out", s(&run), "--fold", "1", "--overwrite"]));
    assert!(!run.join("fold_0.json").exists());

    let out = ws.run(&["eval", s(&run), "--with-knn"]);
    ok(&out);
    let summary = json(&run.join("eval/eval_summary.json"));
    assert_eq!(summary["fold"], 1);
    let stored = summary["stored_val_rmse"].as_f64().unwrap();
    let recomputed = summary["recomputed_val_rmse"].as_f64().unwrap();
    assert!((stored - recomputed).abs() <= 1e-9);
    assert!(summary["knn"].is_object());
    for name in ["gvit", "knn"] {
        let report = json(&run.join(format!("eval/{name}_report.json")));
        let n = report["n_samples"].as_u64().unwrap() as usize;
        let table = fs::read_to_string(run.join(format!("eval/{name}_predictions.csv"))).unwrap();
        assert_eq!(table.lines().count(), n + 1);
    }

    let stream = fs::read_to_string(ws.path("synth/stream.txt")).unwrap();
    let lines: Vec<&str> = stream.lines().collect();
    let air: Vec<&str> = lines[..41].to_vec();
    fs::write(ws.path("air.txt"), air.join("\n")).unwrap();
    let out = ws.run(&["predict", s(&run), "--input", s(&ws.path("air.txt")), "--out", s(&ws.path("pred"))]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("composition: none"));
    assert!(json(&ws.path("pred/prediction.json"))["composition"].is_null());

    // first exposure of the schedule: five nodes after downsampling
    let first_gas = 1 + lines[1..]
        .iter()
        .position(|l| l.split_whitespace().skip(1).take(2).any(|v| v.parse::<f64>().unwrap() > 0.0))
        .unwrap();
    let mut slice = lines[first_gas - 40..first_gas].to_vec();
    slice.extend_from_slice(&lines[first_gas..first_gas + 20]);
    fs::write(ws.path("slice.txt"), slice.join("\n")).unwrap();
    let out = ws.run(&["predict", s(&run), "--input", s(&ws.path("slice.txt")), "--out", s(&ws.path("pred"))]);
    ok(&out);
    let p = json(&ws.path("pred/prediction.json"));
    assert_eq!(p["nodes"], 5);
    let normalized = p["normalized"][1].as_f64().unwrap();
    let ppm = p["ppm"][1].as_f64().unwrap();
    assert!((ppm - normalized * 20.0).abs() < 1e-9);
}
