use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hwt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn hwt")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = hwt(dir, args);
    assert!(
        out.status.success(),
        "hwt {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_dataset(dir: &Path) {
    ok(
        dir,
        &["synth", "--out", "ds", "--seed", "5", "--train-ids", "4", "--test-ids", "4", "--pairs", "20", "--seconds", "12"],
    );
}

fn small_bundle(dir: &Path) {
    let out = hwt(dir, &["build-l2", "--dump-default-config"]);
    let mut cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    cfg["patches"]["crop_width"] = 24.into();
    cfg["patches"]["crop_height"] = 24.into();
    cfg["patches"]["rotations_deg"] = serde_json::json!([0.0]);
    cfg["patches"]["flip"] = false.into();
    cfg["base_count"] = 6.into();
    cfg["pyramid_ratios"] = serde_json::json!([0.5, 1.0]);
    fs::write(dir.join("l2.json"), cfg.to_string()).unwrap();
    ok(dir, &["build-l2", "--images", "ds/images.csv", "--config", "l2.json", "--seed", "1", "--out", "b2"]);
}

#[test]
fn verify_separable_signatures_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // Items of the same class share a direction; classes are orthogonal.
    let mut sigs = String::from("name,s0,s1,s2\n");
    for i in 0..12 {
        let v = match i % 3 {
            0 => "1,0,0",
            1 => "0,1,0",
            _ => "0,0,1",
        };
        sigs += &format!("x{i},{v}\n");
    }
    fs::write(d.join("s.csv"), sigs).unwrap();
    let mut train = String::from("itemA,itemB,label\n");
    let mut test = train.clone();
    for i in 0..6 {
        let (same, diff) = (format!("x{i},x{},same\n", i + 3), format!("x{i},x{},diff\n", i + 1));
        train += &same;
        train += &diff;
        test += &format!("x{},x{},same\n", i + 3, i + 6);
        test += &format!("x{},x{},diff\n", i + 3, i + 5);
    }
    fs::write(d.join("train.csv"), train).unwrap();
    fs::write(d.join("test.csv"), test).unwrap();
    ok(
        d,
        &["verify", "--signatures", "s.csv", "--train-pairs", "train.csv", "--test-pairs", "test.csv", "--out", "r.json", "--folds", "3"],
    );
    let r: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(r["accuracy"], 1.0);
    assert_eq!(r["train_accuracy"], 1.0);
    assert_eq!(r["folds"]["summary"], "100.00±0.00");
}

#[test]
fn full_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    small_bundle(d);
    ok(d, &["build-l3", "--bundle", "b2", "--videos", "ds/videos.json", "--window", "4", "--out", "b3"]);
    ok(d, &["signature", "--bundle", "b3", "--images", "ds/images.csv", "--out", "a.csv"]);
    ok(d, &["signature", "--bundle", "b3", "--images", "ds/images.csv", "--out", "b.csv"]);
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());
    let header = String::from_utf8(a).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header.split(',').count(), 1 + 3 * 4, "one cell per 4 s window per training video");

    ok(
        d,
        &["verify", "--signatures", "a.csv", "--train-pairs", "ds/pairs_train.csv", "--test-pairs", "ds/pairs_test.csv", "--out", "r.json", "--roc", "roc.csv"],
    );
    let roc = fs::read_to_string(d.join("roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold\n"));
}

#[test]
fn sweep_writes_one_row_per_window() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    ok(d, &["sweep-pooling", "--dataset", "ds", "--pixel", "--windows", "none,2,6", "--out", "sweep.csv"]);
    let text = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "window,window_seconds,cells,accuracy");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("none,0,"));
    assert!(rows[3].starts_with("6s,6,"));

    ok(d, &["scramble-control", "--dataset", "ds", "--pixel", "--window", "4", "--seed", "2", "--out", "sc.csv"]);
    let sc = fs::read_to_string(d.join("sc.csv")).unwrap();
    let conds: Vec<&str> = sc.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(conds, ["pooling", "no_pooling", "scrambled_pooling"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(hwt(d, &["verify", "--nope"]).status.code(), Some(2));
    assert_eq!(hwt(d, &["sweep-pooling", "--out", "x.csv"]).status.code(), Some(2));
    assert_eq!(
        hwt(d, &["verify", "--signatures", "missing.csv", "--train-pairs", "a", "--test-pairs", "b", "--out", "r.json"])
            .status
            .code(),
        Some(3)
    );
    small_dataset(d);
    small_bundle(d);
    let out = hwt(d, &["signature", "--bundle", "b2", "--images", "ds/images.csv", "--out", "s.csv", "--layer", "3"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layer 3"));
}
