use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thinkfirst_core::BinaryMask;

struct Demo {
    dir: tempfile::TempDir,
}

impl Demo {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(bin()).arg("demo").arg("--out").arg(dir.path()).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        Demo { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(bin())
            .arg("--config")
            .arg(self.path("thinkfirst.toml"))
            .args(args)
            .output()
            .unwrap()
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_thinkfirst")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn segment_writes_mask_and_transcript() {
    let d = Demo::new();
    let (mask, cot) = (d.path("mask.png"), d.path("cot.txt"));
    let out = d.run(&[
        "segment",
        "--image",
        s(&d.path("flatfish.png")),
        "--task-mode",
        "camouflage",
        "--out",
        s(&mask),
        "--cot-out",
        s(&cot),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mask = BinaryMask::from_path(&mask).unwrap();
    assert_eq!(mask.dimensions(), (64, 48));
    assert_eq!(mask.count(), 22 * 12);
    assert!(std::fs::read_to_string(&cot).unwrap().contains("Summary:"));
    assert!(stdout(&out).contains("prompt: The image showcases an underwater sandy environment"));
}

#[test]
fn eval_prints_percent_with_one_decimal() {
    let d = Demo::new();
    let report = d.path("report.json");
    let out = d.run(&["eval", "--manifest", s(&d.path("demo.tsv")), "--report", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let row = text.lines().find(|l| l.starts_with("full/implicit")).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[1], "44.4");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["per_sample"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = Command::new(bin()).args(["segment", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn exit_codes_follow_error_kind() {
    let d = Demo::new();
    let chair = d.path("chair.png");
    // no fixture for this annotation
    let out = d.run(&["refine", "--image", s(&chair), "--annotation", "box:1,1,5,5"]);
    assert_eq!(out.status.code(), Some(4));
    // out of bounds
    let out = d.run(&["refine", "--image", s(&chair), "--annotation", "circle:90,1,5,5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = d.run(&["segment", "--image", s(&d.path("missing.png")), "--query", "x"]);
    assert_eq!(out.status.code(), Some(2));
    // the scripted reply is not a transcript
    let fixtures = d.path("fixtures");
    for entry in std::fs::read_dir(&fixtures).unwrap() {
        std::fs::write(entry.unwrap().path(), "no list here").unwrap();
    }
    let out = d.run(&["waldo", "--image", s(&d.path("waldo.png"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ablate_lists_three_modes() {
    let d = Demo::new();
    let out = d.run(&[
        "ablate",
        "--image",
        s(&d.path("flatfish.png")),
        "--task-mode",
        "camouflage",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 3);
    let modes: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(modes, ["baseline", "describe", "full"]);
    // model calls per mode
    assert_eq!(rows[0][1], "0");
    assert_eq!(rows[1][1], "1");
    assert_eq!(rows[2][1], "1");
    assert_eq!(rows[2][2], (22 * 12).to_string());
}

#[test]
fn waldo_through_subprocess_segmenter() {
    let d = Demo::new();
    let mask = d.path("waldo_mask.png");
    let cmd = format!("{} mock-segmenter --out-dir {}", bin(), s(&d.path("agent")));
    let out = d.run(&[
        "--segmenter",
        "lisa",
        "--segmenter-cmd",
        &cmd,
        "waldo",
        "--image",
        s(&d.path("waldo.png")),
        "--out",
        s(&mask),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(BinaryMask::from_path(&mask).unwrap().count(), 6 * 12);
}

#[test]
fn offline_runs_are_byte_identical() {
    let d = Demo::new();
    let run = |tag: &str| {
        let mask = d.path(&format!("{tag}.png"));
        let cot = d.path(&format!("{tag}.txt"));
        let out = d.run(&[
            "segment",
            "--image",
            s(&d.path("flatfish.png")),
            "--task-mode",
            "camouflage",
            "--out",
            s(&mask),
            "--cot-out",
            s(&cot),
        ]);
        assert!(out.status.success());
        (std::fs::read(mask).unwrap(), std::fs::read(cot).unwrap(), out.stdout)
    };
    assert_eq!(run("a"), run("b"));
}
