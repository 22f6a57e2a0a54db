use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn ptlabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptlabel")).args(args).output().expect("binary runs")
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn synth(dir: &Path, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut args = vec!["synth", "--out", d, "--seed", "7", "--objects", "4", "--frames", "20"];
    args.extend_from_slice(extra);
    let out = ptlabel(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_identical_tracks_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let gt = dir.path().join("sequences/scene/ground_truth.json");
    let g = gt.to_str().unwrap();
    let out = ptlabel(&["--json", "eval", "f1", "--pred", g, "--gt", g, "--iou", "0.3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["overall"]["f1"], 1.0);
    assert_eq!(v["id_switches"], 0);
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), &["--dropout", "0.1", "--fp-rate", "0.5", "--box-noise", "0.1"]);
    synth(b.path(), &["--dropout", "0.1", "--fp-rate", "0.5", "--box-noise", "0.1"]);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    assert!(ta == tb);
}

#[test]
fn autolabel_then_refine() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let d = dir.path().to_str().unwrap();
    let out = ptlabel(&["--json", "autolabel", "--project", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["revision"], 1);
    let id = v["track_ids"][0].as_u64().unwrap().to_string();
    let out = ptlabel(&["--json", "refine", "--project", d, "smooth", "--track", &id]);
    assert!(out.status.success());
    let out = ptlabel(&["--json", "eval", "f1", "--project", d]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["overall"]["f1"].as_f64().unwrap() > 0.95);
}

#[test]
fn autolabel_without_detections_fails() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--no-detections"]);
    let out = ptlabel(&["autolabel", "--project", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_track_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let out = ptlabel(&["refine", "--project", dir.path().to_str().unwrap(), "interpolate", "--track", "99"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ptlabel(&["autolabel", "--bogus"]).status.code(), Some(2));
    assert_eq!(ptlabel(&["propagate", "--project", "x", "--frame", "0", "--box", "1,2,3", "--class", "vehicle"]).status.code(), Some(2));
    assert_eq!(ptlabel(&[]).status.code(), Some(2));
}
