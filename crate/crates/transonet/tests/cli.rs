use std::fs;
use std::path::Path;

use transonet::cli::dispatch;
use transonet::report::EffectiveConfig;
use transonet::volume_io::{load_mask, load_patient, load_volume};

fn run(args: &[&str]) -> transonet::cli::CommandResult {
    let argv: Vec<&str> = std::iter::once("transonet").chain(args.iter().copied()).collect();
    dispatch(argv)
}

fn ok(args: &[&str]) -> transonet::cli::CommandResult {
    let r = run(args);
    assert_eq!(r.exit_code, 0, "{args:?}: {:?}", r.message);
    assert!(r.message.is_none());
    r
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn phantom_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["phantom", "--out", s(out), "--seed", "7", "--slices", "64", "--size", "64", "--patient-id", "p"]);
    }
    for f in ["volume.raw", "mask.raw", "meta.json", "phantom.json", "effective_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(a.join("volume.raw")).unwrap().len(), 2 * 64 * 64 * 64);
    let c = dir.path().join("c");
    ok(&["phantom", "--out", s(&c), "--seed", "8", "--slices", "64", "--size", "64", "--patient-id", "p"]);
    assert_ne!(fs::read(a.join("volume.raw")).unwrap(), fs::read(c.join("volume.raw")).unwrap());
}

#[test]
fn phantom_flags_reach_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p1");
    ok(&[
        "phantom",
        "--out",
        s(&out),
        "--slices",
        "16",
        "--size",
        "32",
        "--occlusion",
        "4:8",
        "--bone",
        "5,5,3,0:16",
        "--mask-extent",
        "to-bifurcation",
    ]);
    let spec: serde_json::Value = serde_json::from_slice(&fs::read(out.join("phantom.json")).unwrap()).unwrap();
    assert_eq!(spec["patient_id"], "p1");
    assert_eq!(spec["occlusion_z_range"], serde_json::json!([4, 8]));
    assert_eq!(spec["bone_decoys"][0]["contact_z_range"], serde_json::json!([0, 16]));
    assert_eq!(spec["mask_extent"], "to_bifurcation");
    // bone is bright in every slice
    let v = load_volume(&out).unwrap();
    assert!((0..16).all(|z| v.slice(z)[5 * 32 + 5] > 600));

    let bad = run(&["phantom", "--out", s(&dir.path().join("x")), "--slices", "8", "--occlusion", "4:20"]);
    assert_eq!(bad.exit_code, 1);
    assert!(bad.message.unwrap().contains("occlusion"));
}

#[test]
fn train_eval_predict_track_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    for (i, id) in ["p0", "p1", "p2", "p3"].iter().enumerate() {
        let seed = i.to_string();
        ok(&["phantom", "--out", s(&root.join(id)), "--seed", &seed, "--slices", "8", "--size", "32"]);
    }
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"width_divisor": 8, "train": {"epochs": 1, "batch_size": 4}}"#).unwrap();

    let train_out = dir.path().join("run");
    let r = ok(&[
        "train",
        "--data",
        s(&root.join("p0")),
        "--data",
        s(&root.join("p1")),
        "--val",
        s(&root.join("p2")),
        "--config",
        s(&config),
        "--out",
        s(&train_out),
        "--seed",
        "3",
        "--bridge-layers",
        "1",
    ]);
    let ckpt = train_out.join("checkpoint.tonc");
    assert_eq!(r.report_path.as_deref(), Some(ckpt.as_path()));
    let log = fs::read_to_string(train_out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["seed"], 3);
    assert!(first["val_iou"].is_number());
    let eff: EffectiveConfig =
        serde_json::from_slice(&fs::read(train_out.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(eff.command, "train");
    assert_eq!(eff.config["model"]["bridge_layers"], 1);
    assert_eq!(eff.config["train"]["seed"], 3);

    // rerunning from the effective config alone reproduces the checkpoint
    let rerun_out = dir.path().join("rerun");
    ok(&[
        "train",
        "--data",
        s(&root.join("p0")),
        "--data",
        s(&root.join("p1")),
        "--val",
        s(&root.join("p2")),
        "--config",
        s(&train_out.join("effective_config.json")),
        "--out",
        s(&rerun_out),
    ]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(rerun_out.join("checkpoint.tonc")).unwrap());

    let report = dir.path().join("eval/report.json");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&root.join("p3")), "--report", s(&report)]);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["per_patient"][0]["patient_id"], "p3");
    assert_eq!(rep["per_patient"][0]["n_slices"], 8);
    let eval_cfg: EffectiveConfig =
        serde_json::from_slice(&fs::read(dir.path().join("eval/report.config.json")).unwrap()).unwrap();
    assert_eq!(rep["config_sha256"], eval_cfg.config_sha256.as_str());
    assert_eq!(eval_cfg.config_sha256.len(), 64);

    let pred = dir.path().join("pred");
    let overlays = dir.path().join("overlays");
    let before = fs::read(root.join("p3/volume.raw")).unwrap();
    ok(&[
        "predict",
        "--ckpt",
        s(&ckpt),
        "--volume",
        s(&root.join("p3")),
        "--out",
        s(&pred),
        "--overlay-dir",
        s(&overlays),
    ]);
    assert_eq!(fs::read(root.join("p3/volume.raw")).unwrap(), before, "input untouched");
    let mask = load_mask(&pred).unwrap();
    assert_eq!(mask.meta.num_slices, 8);
    assert_eq!(fs::read_dir(&overlays).unwrap().count(), 8);
    let ppm = fs::read(overlays.join("slice_0000.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ppm.len(), "P6\n32 32\n255\n".len() + 32 * 32 * 3);

    let track_out = dir.path().join("track");
    let events = dir.path().join("track/events.json");
    ok(&[
        "track",
        "--volume",
        s(&root.join("p3")),
        "--seed-point",
        "16,16",
        "--t-lo",
        "200",
        "--t-hi",
        "500",
        "--out",
        s(&track_out),
        "--events",
        s(&events),
    ]);
    let tracked = load_mask(&track_out).unwrap();
    let truth = load_patient(&root.join("p3")).unwrap().mask;
    assert_eq!(tracked.slice(0)[16 * 32 + 16], 1);
    assert!(tracked.count() > 0 && tracked.count() <= 8 * 32 * 32);
    assert_eq!(truth.meta, tracked.meta);
    let ev: serde_json::Value = serde_json::from_slice(&fs::read(&events).unwrap()).unwrap();
    assert!(ev.is_array());

    // seed outside the window is a validation error
    let r = run(&[
        "track",
        "--volume",
        s(&root.join("p3")),
        "--seed-point",
        "0,0",
        "--t-lo",
        "200",
        "--t-hi",
        "500",
        "--out",
        s(&track_out),
        "--events",
        s(&events),
    ]);
    assert_eq!(r.exit_code, 1);
}

#[test]
fn xval_reports_every_fold() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    for i in 0..4 {
        let seed = i.to_string();
        ok(&["phantom", "--out", s(&root.join(format!("p{i}"))), "--seed", &seed, "--slices", "4", "--size", "32"]);
    }
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"width_divisor": 8, "bridge_layers": 1, "train": {"epochs": 1, "batch_size": 4}}"#).unwrap();
    let report = dir.path().join("xval/report.json");
    ok(&[
        "xval",
        "--data-root",
        s(&root),
        "--folds",
        "1,1,1,1",
        "--val-per-fold",
        "0",
        "--config",
        s(&config),
        "--report",
        s(&report),
        "--seed",
        "5",
    ]);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let folds = rep["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 4);
    for (k, f) in folds.iter().enumerate() {
        assert_eq!(f["test_ids"], serde_json::json!([format!("p{k}")]));
        assert_eq!(f["log"]["seed"], 5 + k as u64);
    }
    assert_eq!(rep["seed"], 5);
    assert!(dir.path().join("xval/folds.json").is_file());
    assert!(dir.path().join("xval/train_log_fold3.jsonl").is_file());
    assert!(dir.path().join("xval/report.config.json").is_file());

    // default: the first id of each excluded group validates
    let report2 = dir.path().join("xval2/report.json");
    ok(&["xval", "--data-root", s(&root), "--folds", "2,2", "--config", s(&config), "--report", s(&report2)]);
    let rep: serde_json::Value = serde_json::from_slice(&fs::read(&report2).unwrap()).unwrap();
    assert_eq!(rep["folds"][1]["val_ids"], serde_json::json!(["p2"]));
    assert_eq!(rep["folds"][1]["test_ids"], serde_json::json!(["p3"]));

    let bad = run(&["xval", "--data-root", s(&root), "--folds", "3,3", "--config", s(&config), "--report", s(&report)]);
    assert_eq!(bad.exit_code, 1);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.tonc");
    fs::write(&bogus, b"nope").unwrap();
    let vol = dir.path().join("v");
    ok(&["phantom", "--out", s(&vol), "--slices", "2", "--size", "32"]);
    let r = run(&["predict", "--ckpt", s(&bogus), "--volume", s(&vol), "--out", s(&dir.path().join("o"))]);
    assert_eq!(r.exit_code, 2);
    assert!(r.message.unwrap().contains("magic"));
    let r = run(&["eval", "--ckpt", s(&dir.path().join("missing.tonc")), "--data", s(&vol), "--report", "r.json"]);
    assert_eq!(r.exit_code, 2);
}

#[test]
fn gradcheck_reports_to_stdout() {
    let r = ok(&["gradcheck", "--samples", "12", "--seed", "1"]);
    let v: serde_json::Value = serde_json::from_str(&r.stdout.unwrap()).unwrap();
    assert!(v["report"]["max_rel_err"].as_f64().unwrap() <= 1e-4);
    assert_eq!(v["report"]["samples"].as_array().unwrap().len(), 12);
    assert_eq!(v["effective_config"]["command"], "gradcheck");
}
