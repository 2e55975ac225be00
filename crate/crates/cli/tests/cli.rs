use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn pcascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcascade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = pcascade(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path -> file contents, for comparing whole output trees.
fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn recall_values(curve: &Path) -> Vec<f64> {
    std::fs::read_to_string(curve)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let ann = data.join("annotations.json");
    let (bank, models, props) = (d.join("bank.json"), d.join("models"), d.join("props.csv"));
    ok(&["synth", "--seed", "2", "--images", "6", "--videos", "1", "--frames", "4", "--out", s(&data)]);
    ok(&["select-windows", "--annotations", s(&ann), "--count", "20", "--out", s(&bank)]);
    ok(&["train", "--tensors", s(&data), "--annotations", s(&ann), "--bank", s(&bank), "--out", s(&models)]);
    assert!(models.join("stage1_s0.json").is_file() && models.join("stage2_s2.json").is_file());
    ok(&["propose", "--tensors", s(&data), "--bank", s(&bank), "--models", s(&models), "--out", s(&props)]);

    let curve = d.join("recall.csv");
    let summary = d.join("summary.json");
    ok(&[
        "eval-recall", "--proposals", s(&props), "--annotations", s(&ann), "--budgets", "0,10,100",
        "--out", s(&curve), "--summary", s(&summary),
    ]);
    let r = recall_values(&curve);
    assert_eq!(r.len(), 3);
    assert_eq!(r[0], 0.0);
    assert!(r[0] <= r[1] && r[1] <= r[2] && r[2] > 0.5, "{r:?}");
    assert!(summary.is_file());

    // Linking takes video frames only.
    let text = std::fs::read_to_string(&props).unwrap();
    let mut lines = text.lines();
    let mut frames = format!("{}\n", lines.next().unwrap());
    lines.filter(|l| l.contains('/')).for_each(|l| frames.push_str(&format!("{l}\n")));
    let frame_props = d.join("frames.csv");
    std::fs::write(&frame_props, frames).unwrap();
    let tubes = d.join("tubes.json");
    ok(&["link-tubes", "--proposals", s(&frame_props), "--max-tubes", "3", "--out", s(&tubes)]);
    let report = d.join("tubes_eval.json");
    ok(&["eval-tubes", "--tubes", s(&tubes), "--annotations", s(&ann), "--out", s(&report)]);
    assert!(std::fs::read_to_string(&report).unwrap().contains("recall"));
}

#[test]
fn single_model_training_writes_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    let ann = data.join("annotations.json");
    let bank = d.join("bank.json");
    let model = d.join("only.json");
    ok(&["synth", "--seed", "3", "--images", "4", "--out", s(&data)]);
    ok(&["select-windows", "--annotations", s(&ann), "--count", "10", "--out", s(&bank)]);
    ok(&[
        "train", "--tensors", s(&data), "--annotations", s(&ann), "--bank", s(&bank), "--stage", "2",
        "--scale", "1", "--out", s(&model),
    ]);
    assert!(model.is_file());
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["synth", "--seed", "1", "--images", "3", "--out", s(&a)]);
    ok(&["synth", "--seed", "1", "--images", "3", "--out", s(&b)]);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.len() > 2);
    assert_eq!(sa, sb);
}

#[test]
fn malformed_input_fails_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("annotations.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = pcascade(&["select-windows", "--annotations", s(&bad), "--out", s(&dir.path().join("b.json"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");

    let missing = pcascade(&["propose", "--tensors", "/nonexistent", "--bank", "/nonexistent/b.json",
        "--models", "/nonexistent", "--out", s(&dir.path().join("p.csv"))]);
    assert!(!missing.status.success());
    assert!(String::from_utf8(missing.stderr).unwrap().starts_with("error: "));
}

#[test]
fn help_lists_subcommands_and_flags() {
    let out = pcascade(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["select-windows", "train", "propose", "link-tubes", "eval-recall", "eval-tubes", "synth"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    let out = pcascade(&["propose", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--tensors", "--bank", "--models", "--beta", "--edge-source", "--out"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}
