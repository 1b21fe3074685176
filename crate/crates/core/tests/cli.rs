use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gground::fusion::MetricsReport;

const TINY: &str = r#"{
  "synthetic": {
    "num_videos": 10,
    "frames_per_video": 200,
    "dims": { "visual": 16, "audio": 16, "text": 16 }
  },
  "guidance": { "d_model": 8, "layers": 1, "heads": 2, "window_len": 16 },
  "train": { "epochs": 2, "batch_size": 16, "lr": 0.001, "eval_every": 1 },
  "longform": { "window_len": 64 }
}"#;

fn gground(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gground"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gground(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn full_pipeline_writes_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.json"), TINY).unwrap();
    let cfg = ["--config", "run.json"];
    let with = |extra: &[&'static str]| -> Vec<&'static str> {
        let mut v: Vec<&str> = cfg.to_vec();
        v.extend_from_slice(extra);
        v
    };

    ok(dir, &with(&["gen-synth"]));
    let first = tree(&dir.join("data"));
    ok(dir, &with(&["gen-synth"]));
    assert_eq!(first, tree(&dir.join("data")));

    assert!(ok(dir, &with(&["train-guidance"])).contains("final loss"));
    ok(dir, &with(&["score-windows"]));
    ok(dir, &with(&["ground"]));
    ok(dir, &with(&["fuse"]));
    let guided = ok(dir, &with(&["eval"]));
    assert!(guided.contains("mR_all"));
    ok(dir, &with(&["bench"]));

    for name in [
        "model.bin",
        "loss.csv",
        "guidance.json",
        "predictions.jsonl",
        "ranked.jsonl",
        "metrics.json",
        "metrics.csv",
        "cost.json",
    ] {
        assert!(dir.join("out").join(name).is_file(), "missing {name}");
    }
    let report: MetricsReport =
        serde_json::from_str(&fs::read_to_string(dir.join("out/metrics.json")).unwrap()).unwrap();
    for row in &report.recall {
        assert!(row.windows(2).all(|w| w[0] <= w[1]));
        assert!(row.iter().all(|r| (0.0..=100.0).contains(r)));
    }
    for k in 0..report.ks.len() {
        assert!(report.recall.windows(2).all(|w| w[0][k] >= w[1][k]));
    }
    let loss = fs::read_to_string(dir.join("out/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);

    ok(dir, &with(&["fuse", "--unguided", "--output", "out/unguided.jsonl"]));
    ok(dir, &with(&["eval", "--predictions", "out/unguided.jsonl"]));
}

#[test]
fn reported_table_means() {
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/reported_mean_recall.json");
    let out = ok(Path::new("."), &["eval", "--table", fixture]);
    assert!(out.contains("VSL-Net mR_all 26.70"), "{out}");
    assert!(out.contains("Moment-DETR mR_all 18.73"), "{out}");
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let code = |args: &[&str]| {
        let out = gground(dir, args);
        let stderr = String::from_utf8(out.stderr).unwrap();
        assert_eq!(stderr.lines().count(), 1, "{stderr}");
        assert!(stderr.starts_with("error[E_"), "{stderr}");
        out.status.code().unwrap()
    };
    assert_eq!(code(&["--set", "train.learning_rate=1", "gen-synth"]), 2);
    assert_eq!(code(&["--set", "guidance.heads=3", "gen-synth"]), 2);
    assert_eq!(code(&["--dataset", "missing", "ground"]), 3);
    fs::write(dir.join("bad.json"), "{\"ks\":[1],\"rows\":[{\"name\":\"x\",\"mean_recall\":[]}]}")
        .unwrap();
    assert_eq!(code(&["eval", "--table", "bad.json"]), 3);
    fs::write(dir.join("empty.json"), "{\"ks\":[1],\"rows\":[{\"name\":\"x\",\"mean_recall\":[null]}]}")
        .unwrap();
    assert_eq!(code(&["eval", "--table", "empty.json"]), 2);
}
