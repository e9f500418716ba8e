use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn emoanno(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emoanno"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(root: &Path, n: usize) -> PathBuf {
    let mut manifest = String::from("segment_id,label,frames_dir\n");
    let labels = ["Angry", "Disgust", "Fear", "Happy", "Neutral", "Sad", "Surprise"];
    for i in 0..n {
        let dir = root.join(format!("frames/s{i}"));
        std::fs::create_dir_all(&dir).unwrap();
        for f in 0..6u8 {
            image::RgbImage::from_pixel(8, 6, image::Rgb([(i * 20) as u8, f * 40, 7]))
                .save(dir.join(format!("{f:03}.png")))
                .unwrap();
        }
        manifest.push_str(&format!("s{i},{},frames/s{i}\n", labels[i % 7]));
    }
    let path = root.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn unknown_flag_is_a_hard_error() {
    let o = emoanno(&["simulate", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--no-such-flag"));
}

#[test]
fn help_lists_every_subcommand() {
    let o = emoanno(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["annotate", "evaluate", "stats", "simulate", "cost"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn simulate_is_repeatable() {
    let args = [
        "simulate",
        "--segments",
        "300",
        "--labeler",
        "diagonal:0.6",
        "--seed",
        "3",
    ];
    let a = emoanno(&args);
    let b = emoanno(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("B1-A1"));
}

#[test]
fn cost_for_the_full_corpus() {
    let o = emoanno(&["cost", "--segments", "2339", "--strategy", "A1,D1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("11695"));
    assert!(text.contains("composite requests:    2339"));
}

#[test]
fn live_backend_needs_the_api_key() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 2);
    let store = dir.path().join("store.jsonl");
    let o = emoanno(&[
        "annotate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--store",
        store.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("OPENAI_API_KEY"));
}

#[test]
fn annotate_evaluate_stats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 12);
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "manifest = {:?}\nstore = {:?}\nout_dir = {:?}\n\n[backend]\nkind = \"simulated\"\nlabeler = \"diagonal:0.6\"\nseed = 5\n",
            manifest,
            dir.path().join("store.jsonl"),
            dir.path().join("out"),
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();

    let first = emoanno(&["--config", cfg, "annotate"]);
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(summary["backend_jobs"], 12 * 7);

    let again = emoanno(&["--config", cfg, "annotate"]);
    let summary: serde_json::Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(summary["backend_jobs"], 0);
    assert_eq!(summary["cached"], 12 * 7);

    let eval = emoanno(&["--config", cfg, "evaluate"]);
    assert_eq!(eval.status.code(), Some(0));
    let out = dir.path().join("out");
    for s in ["A1", "B1", "C1", "D1", "A2", "B2", "C2", "D2"] {
        assert!(out.join(format!("report_{s}.txt")).exists(), "{s}");
    }
    let before = std::fs::read(out.join("correctness.json")).unwrap();
    emoanno(&["--config", cfg, "aggregate"]);
    assert_eq!(before, std::fs::read(out.join("correctness.json")).unwrap());

    let stats = emoanno(&["--config", cfg, "stats"]);
    assert_eq!(stats.status.code(), Some(0));
    let text = stdout(&stats);
    assert!(text.contains("Correct_B1") && text.contains("Correct_D2"));
    assert!(text.contains("p-unc"));
}

#[test]
fn failed_segment_gives_partial_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 3);
    std::fs::remove_dir_all(dir.path().join("frames/s1")).unwrap();
    let store = dir.path().join("store.jsonl");
    let o = emoanno(&[
        "annotate",
        "--backend",
        "simulated",
        "--manifest",
        manifest.to_str().unwrap(),
        "--store",
        store.to_str().unwrap(),
        "--strategies",
        "D1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["failures"][0]["segment_id"], "s1");
    assert_eq!(summary["backend_jobs"], 2);
}

#[test]
fn evaluate_without_annotations_fails() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture(dir.path(), 2);
    let o = emoanno(&[
        "evaluate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--store",
        dir.path().join("empty.jsonl").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no annotations"));
}

#[test]
fn bad_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[backend]\napi_key = \"sk-x\"\n").unwrap();
    let o = emoanno(&["--config", config.to_str().unwrap(), "cost", "--segments", "1"]);
    assert_eq!(o.status.code(), Some(1));
}
