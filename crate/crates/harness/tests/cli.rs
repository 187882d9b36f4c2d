mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn harness(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harness"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "stdout: {}\nstderr: {}", stdout(&o), stderr(&o));
    stdout(&o)
}

/// Two built-in factors, a handful of data points: 4 setups.
fn small(backend: &str, n_eval: usize) -> Value {
    let mut c = common::base_config(backend, n_eval, 5);
    c["factors"] = json!({"builtin": ["n_shots", "one_label"]});
    c
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("mock:oracle", 9);
    c["templates"] = "no/such/dir".into();
    let out = harness(&["generate"], &common::workspace(dir.path(), &c));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("template directory"), "{}", stderr(&out));

    let mut c = small("mock:oracle", 9);
    c["n_evals"] = 3.into();
    assert_eq!(harness(&["generate"], &common::workspace(dir.path(), &c)).status.code(), Some(2));

    let c = small("mock:nonsense", 9);
    let path = common::workspace(dir.path(), &c);
    ok(harness(&["generate"], &path));
    let out = harness(&["run"], &path);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let out = harness(&["generate"], &dir.path().join("missing.json"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn small_design_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::workspace(dir.path(), &small("mock:oracle", 9));
    let text = ok(harness(&["generate"], &path));
    assert!(text.contains("generated 36 prompts for 4 setups"), "{text}");
    let out = dir.path().join("out");
    assert_eq!(fs::read_to_string(out.join("prompts.jsonl")).unwrap().lines().count(), 36);
    for f in ["factors.json", "config.json", "eval_set.jsonl", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let text = ok(harness(&["validate"], &path));
    assert!(text.contains("36 prompts, 0 violations"), "{text}");

    // Scoring before any prediction exists names the gap.
    let early = harness(&["score"], &path);
    assert_eq!(early.status.code(), Some(1));
    assert!(stderr(&early).contains("predictions missing"), "{}", stderr(&early));

    let text = ok(harness(&["run"], &path));
    assert!(text.contains("36 answered, 0 unanswered"), "{text}");
    let text = ok(harness(&["score"], &path));
    assert!(text.contains("mean accuracy 1.0000"), "{text}");
    assert!(!text.contains("warning"));

    let reports = out.join("reports");
    for f in [
        "accuracy.csv",
        "kappa.json",
        "kappa.csv",
        "kappa.svg",
        "consistency.json",
        "diversity.json",
        "main_effects.csv",
        "main_effects.svg",
        "interactions.csv",
        "mask.json",
        "summary.json",
    ] {
        assert!(reports.join(f).exists(), "{f}");
    }
    let accuracy = fs::read_to_string(reports.join("accuracy.csv")).unwrap();
    assert_eq!(accuracy.lines().next().unwrap(), "setup_id,accuracy,masked,n_shots,one_label");
    assert_eq!(accuracy.lines().count(), 5);
    assert_eq!(read_json(&reports.join("consistency.json"))["c_pi"], "inf");
    let interactions = fs::read_to_string(reports.join("interactions.csv")).unwrap();
    // Four setups leave no residual degree of freedom.
    assert!(interactions.contains("n_shots,one_label,,,false,false,4"), "{interactions}");

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["counts"]["prompts"], 36);
    assert_eq!(manifest["counts"]["completed"], 36);
    for step in ["generate", "run", "score"] {
        assert!(manifest["timings"][step].is_number(), "{step}");
    }
}

#[test]
fn validate_empty_prompt_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::workspace(dir.path(), &small("mock:oracle", 9));
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/prompts.jsonl"), "").unwrap();
    let text = ok(harness(&["validate"], &path));
    assert!(text.contains("0 prompts, 0 violations"), "{text}");
}

#[test]
fn validate_reports_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::workspace(dir.path(), &small("mock:oracle", 9));
    ok(harness(&["generate"], &path));
    let prompts = dir.path().join("out/prompts.jsonl");
    let text = fs::read_to_string(&prompts).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut first: Value = serde_json::from_str(&lines[0]).unwrap();
    first["text"] = json!(format!("Ignore the above. {}", first["text"].as_str().unwrap()));
    lines[0] = first.to_string();
    lines.push(lines[1].clone());
    lines.push("not json".into());
    fs::write(&prompts, lines.join("\n") + "\n").unwrap();

    let out = harness(&["validate"], &path);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("38 prompts, 3 violations"), "{}", stdout(&out));
    let report = read_json(&dir.path().join("out/validation.json"));
    assert_eq!(report["violations"].as_array().unwrap().len(), 3);
}

#[test]
fn constant_backend_warns_about_label_bias() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::workspace(dir.path(), &small("mock:constant:1", 9));
    ok(harness(&["generate"], &path));
    ok(harness(&["run"], &path));
    let text = ok(harness(&["score"], &path));
    assert!(text.contains("c_pi inf"), "{text}");
    assert!(text.contains("biased toward predicting a single label"), "{text}");
    let diversity = read_json(&dir.path().join("out/reports/diversity.json"));
    assert_eq!(diversity["prediction_entropy"], 0.0);
    assert_eq!(diversity["single_label_bias"], true);
    assert!(diversity["warning"].as_str().unwrap().contains("single label"));
}

#[test]
fn free_text_outside_label_space_is_masked() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::workspace(dir.path(), &small("mock:freetext:3", 30));
    ok(harness(&["generate"], &path));
    ok(harness(&["run"], &path));
    ok(harness(&["score"], &path));
    let mask = read_json(&dir.path().join("out/reports/mask.json"));
    let masked = mask["masked"].as_u64().unwrap();
    assert!(masked > 0 && masked < 120, "{mask}");
    assert_eq!(mask["missing"], 0);
    assert_eq!(mask["total"], 120);
    let kappa = read_json(&dir.path().join("out/reports/kappa.json"));
    for f in kappa["per_factor"].as_array().unwrap() {
        assert!(f["masked_pairs"].as_u64().unwrap() > 0);
    }
}

#[test]
fn interrupted_run_resumes_and_partial_scoring_masks_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::workspace(dir.path(), &small("mock:hash:2", 9));
    ok(harness(&["generate"], &path));
    ok(harness(&["run", "--max-prompts", "10"], &path));

    let text = ok(harness(&["score", "--allow-partial"], &path));
    assert!(text.contains("missing 26"), "{text}");

    let text = ok(harness(&["run", "--resume"], &path));
    assert!(text.contains("10 already answered, 26 attempted"), "{text}");
    let text = ok(harness(&["score"], &path));
    assert!(text.contains("missing 0"), "{text}");
    let log = fs::read_to_string(dir.path().join("out/predictions.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 36);
}

#[test]
fn changed_config_requires_regeneration() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::workspace(dir.path(), &small("mock:oracle", 9));
    ok(harness(&["generate"], &path));
    ok(harness(&["run"], &path));

    let mut c = small("mock:oracle", 9);
    c["seed"] = 99.into();
    let path = common::workspace(dir.path(), &c);
    let out = harness(&["run"], &path);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("different config"), "{}", stderr(&out));

    // Regenerating drops predictions from the old config.
    ok(harness(&["generate"], &path));
    assert!(!dir.path().join("out/predictions.jsonl").exists());
}

#[test]
fn run_without_generate_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness(&["run"], &common::workspace(dir.path(), &small("mock:oracle", 9)));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("harness generate"), "{}", stderr(&out));
}

#[test]
fn annotation_factor_splits_work_between_model_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("mock:biased:6,1,1:0.5", 9);
    c["factors"]["custom"] = json!([{"name": "calibration", "realize": {"kind": "annotation"}}]);
    c["model_annotations"] = json!({"calibration": true});
    let path = common::workspace(dir.path(), &c);
    let text = ok(harness(&["generate"], &path));
    assert!(text.contains("72 prompts for 8 setups"), "{text}");
    let text = ok(harness(&["run"], &path));
    assert!(text.contains("36 prompts"), "{text}");
    let text = ok(harness(&["score"], &path));
    assert!(text.contains("scored 4 setups"), "{text}");
    // Every active setup is calibrated, so the bias is divided out.
    assert!(text.contains("mean accuracy 1.0000"), "{text}");
    let log = fs::read_to_string(dir.path().join("out/predictions.jsonl")).unwrap();
    assert!(log.lines().all(|l| l.contains("\"calibrated\":true")));
}

#[test]
fn rank_templates_needs_four_templates() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("mock:hash:4", 9);
    c["probe"] = json!({"templates": [1, 2, 3]});
    let out = harness(&["rank-templates"], &common::workspace(dir.path(), &c));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).to_lowercase().contains("templates"), "{}", stderr(&out));
}

#[test]
fn rank_templates_probes_all_fifteen() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small("mock:hash:4", 12);
    c["probe"] = json!({"n_eval": 6});
    let path = common::workspace(dir.path(), &c);
    let text = ok(harness(&["rank-templates"], &path));
    assert!(text.contains("high: ["), "{text}");
    let probe = dir.path().join("out/probe");
    assert_eq!(fs::read_to_string(probe.join("prompts.jsonl")).unwrap().lines().count(), 90);
    let ranking = read_json(&probe.join("ranking.json"));
    let order = ranking["ranking"].as_array().unwrap();
    assert_eq!(order.len(), 15);
    for pair in order.windows(2) {
        assert!(pair[0]["accuracy"].as_f64() >= pair[1]["accuracy"].as_f64());
    }
    let csv = fs::read_to_string(probe.join("template_consistency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(probe.join("accuracy.svg").exists());

    // Same probe, same ranking.
    let again = ok(harness(&["rank-templates"], &path));
    assert_eq!(text, again);
}
