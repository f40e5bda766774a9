use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gsdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsdiff")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gsdiff(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_eval_render_preview() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--views",
        "6",
        "--size",
        "24",
        "--held-out",
        "1,4",
        "--depth",
    ]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"iterations": 12, "model": "direct", "checkpoint_every": 5}"#).unwrap();
    ok(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&run),
        "--oracle",
        "gt",
    ]);
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 12);
    assert!(run.join("checkpoint_000005.gsdf").exists());
    let ckpt = run.join("checkpoint.gsdf");

    let eval: Value = serde_json::from_str(&ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data)])).unwrap();
    assert_eq!(eval["split"], "test");
    assert_eq!(eval["views"].as_array().unwrap().len(), 2);

    let cams = std::fs::read_to_string(data.join("cameras.txt")).unwrap();
    let first: String = cams.lines().filter(|l| !l.starts_with('#')).take(1).collect();
    let poses = dir.path().join("one.txt");
    std::fs::write(&poses, first + "\n").unwrap();
    let frames = dir.path().join("frames");
    ok(&["render", "--ckpt", s(&ckpt), "--poses", s(&poses), "--out", s(&frames)]);
    assert_eq!(std::fs::read_dir(&frames).unwrap().count(), 1);
    assert!(frames.join("frame_0000.png").exists());

    let preview = dir.path().join("preview");
    let lines = ok(&[
        "augment-preview",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--oracle",
        "identity",
        "--out",
        s(&preview),
    ]);
    assert!(!lines.is_empty());
    for l in lines.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["active"], true);
        assert!(preview.join(v["file"].as_str().unwrap()).exists());
    }
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = gsdiff(&[
        "eval",
        "--ckpt",
        s(&dir.path().join("missing.gsdf")),
        "--data",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(v["error"].is_string() && v["message"].is_string());

    let bad = dir.path().join("bad.gsdf");
    std::fs::write(&bad, b"nope").unwrap();
    let out = gsdiff(&["eval", "--ckpt", s(&bad), "--data", s(dir.path())]);
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(v["error"], "checkpoint");
}
