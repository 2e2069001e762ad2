mod common;

use std::net::TcpListener;
use std::path::Path;

use serde_json::Value;

use common::{code, deid, http, run_deid, snapshot, spawn_review, stderr};

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn fixtures(dir: &Path, cases: usize, frames: usize, size: u32) {
    let out = run_deid(&[
        "fixtures",
        "--out",
        &s(dir),
        "--cases",
        &cases.to_string(),
        "--frames",
        &frames.to_string(),
        "--size",
        &size.to_string(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn write_json(p: &Path, v: &Value) {
    std::fs::write(p, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

#[test]
fn corrupt_video_is_isolated_with_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    fixtures(&fx, 3, 6, 192);
    std::fs::write(fx.join("clips/case001.dfa"), b"DFA garbage, not a clip").unwrap();
    let run = dir.path().join("run");
    let out = run_deid(&["deidentify", "--manifest", &s(&fx.join("manifest.json")), "--out", &s(&run)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let derived = read_json(&run.join("manifest.json"));
    let ids: Vec<&str> = derived.as_array().unwrap().iter().map(|c| c["case_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["case000", "case002"]);
    assert!(run.join("clips/case000.syn.dfa").exists());
    assert!(!run.join("clips/case001.syn.dfa").exists());

    let ledger = read_json(&run.join("run.json"));
    let cases = ledger["steps"]["deidentify"]["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 3);
    assert_eq!(cases[1]["status"], "failed");
    assert!(cases[1]["error"].as_str().unwrap().contains("case001"));
    // Every file in the run directory is listed in the ledger.
    let listed: Vec<String> = ledger["steps"]["deidentify"]["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap().to_string())
        .collect();
    for (name, _) in snapshot(&run) {
        assert!(name == "run.json" || listed.contains(&name), "{name} not in run.json");
    }
}

#[test]
fn config_errors_are_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[backends]\nmotion = \"liveportrait\"\n").unwrap();
    let out = run_deid(&["deidentify", "--config", &s(&cfg), "--out", &s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("liveportrait"), "{}", stderr(&out));

    let out = run_deid(&["deidentify", "--out", &s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("manifest"));

    let out = run_deid(&["deidentify", "--manifest", &s(&dir.path().join("nope.json")), "--out", &s(dir.path())]);
    assert_eq!(code(&out), 1);
}

#[test]
fn default_config_round_trips_through_a_file() {
    let out = deid().arg("config").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("threshold = 0.68"), "{text}");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, &text).unwrap();
    // Report needs a ledger; a valid config must get past parsing to say so.
    let out = run_deid(&["report", "--config", &s(&cfg), "--out", &s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("run.json"), "{}", stderr(&out));
}

/// Fixture manifest whose synthetic paths point at the real clips.
fn self_paired_manifest(fx: &Path) -> std::path::PathBuf {
    let mut m = read_json(&fx.join("manifest.json"));
    for c in m.as_array_mut().unwrap() {
        c["syn_clip_path"] = c["real_clip_path"].clone();
    }
    let p = fx.join("paired.json");
    write_json(&p, &m);
    p
}

#[test]
fn triage_with_identical_sources_matches_across_schemes() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    fixtures(&fx, 10, 8, 128);
    let manifest = self_paired_manifest(&fx);
    let run = dir.path().join("run");
    let out = run_deid(&["eval-triage", "--manifest", &s(&manifest), "--out", &s(&run)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let csv = std::fs::read_to_string(run.join("reports/triage.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "scheme,Acc,Spec,Sens,F1,AUC,MSE");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r[1..6], rows[0][1..6], "{csv}");
        assert_eq!(r[6], "0.0000");
    }
    let report = read_json(&run.join("reports/triage.json"));
    assert_eq!(report["plan"]["folds"].as_array().unwrap().len(), 5);
}

#[test]
fn triage_excludes_unlabeled_cases() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    fixtures(&fx, 11, 6, 128);
    let manifest = self_paired_manifest(&fx);
    let mut m = read_json(&manifest);
    m[10].as_object_mut().unwrap().remove("label");
    write_json(&manifest, &m);
    let run = dir.path().join("run");
    let out = run_deid(&["eval-triage", "--manifest", &s(&manifest), "--out", &s(&run)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let ledger = read_json(&run.join("run.json"));
    let cases = ledger["steps"]["eval-triage"]["cases"].as_array().unwrap();
    assert_eq!(cases[10]["status"], "skipped");
    assert!(cases[10]["error"].as_str().unwrap().contains("label"));
    let report = read_json(&run.join("reports/triage.json"));
    let folded: usize = report["plan"]["folds"].as_array().unwrap().iter().map(|f| f.as_array().unwrap().len()).sum();
    assert_eq!(folded, 10);
}

#[test]
fn privacy_skips_cases_without_synthetic_clip_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    fixtures(&fx, 3, 6, 192);
    let manifest = self_paired_manifest(&fx);
    let mut m = read_json(&manifest);
    m[2].as_object_mut().unwrap().remove("syn_clip_path");
    write_json(&manifest, &m);

    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let run = dir.path().join(name);
        let out = run_deid(&["eval-privacy", "--manifest", &s(&manifest), "--out", &s(&run), "--n-pairs", "8"]);
        assert_eq!(code(&out), 2, "{}", stderr(&out));
        reports.push(std::fs::read(run.join("reports/privacy.json")).unwrap());
        assert!(run.join("reports/privacy/case000.json").exists());
        assert!(!run.join("reports/privacy/case002.json").exists());
    }
    assert_eq!(reports[0], reports[1]);
    let r: Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(r["threshold"], serde_json::json!(0.68));
    assert_eq!(r["pairs"].as_array().unwrap().len(), 2 * 2 * 8);
    let csv = std::fs::read_to_string(dir.path().join("a/reports/privacy.csv")).unwrap();
    assert!(csv.starts_with("case_id,group,clip_a,frame_a,clip_b,frame_b,csim"));
}

fn review_roster(dir: &Path) -> std::path::PathBuf {
    let clip = dir.join("v.bin");
    std::fs::write(&clip, b"0123456789").unwrap();
    let roster = serde_json::json!({
        "seed": 1,
        "raters": ["r1", "r2", "r3"],
        "videos": [
            {"id": "v1", "path": clip},
            {"id": "v2", "path": clip},
        ]
    });
    let p = dir.join("roster.json");
    write_json(&p, &roster);
    p
}

#[test]
fn review_reports_kappa_fixture_and_validates_raters() {
    let dir = tempfile::tempdir().unwrap();
    let roster = review_roster(dir.path());
    let (mut child, addr) = spawn_review(dir.path(), &["--roster", &s(&roster)]);
    for (r, v, o) in [("r1", "v1", "A"), ("r2", "v1", "A"), ("r3", "v1", "A"), ("r1", "v2", "A"), ("r2", "v2", "A"), ("r3", "v2", "B")] {
        let body = format!(r#"{{"rater_id":"{r}","video_id":"{v}","option":"{o}"}}"#);
        assert_eq!(http(&addr, "POST", "/api/ratings", Some(&body)).0, 200);
    }
    let (status, body) = http(&addr, "GET", "/api/reports/realism", None);
    assert_eq!(status, 200);
    let report: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(report["kappa"]["value"].as_f64().unwrap(), -0.2, "{body}");

    let (status, body) = http(
        &addr,
        "POST",
        "/api/ratings",
        Some(r#"{"rater_id":"eve","video_id":"v1","option":"A"}"#),
    );
    assert_eq!(status, 403);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["error"], "unknown_rater");

    let (status, body) = http(&addr, "GET", "/api/gate", None);
    assert_eq!(status, 200);
    assert_eq!(serde_json::from_str::<Value>(&body).unwrap()["selected"], serde_json::json!(["v1"]));
    let _ = child.kill();
    let _ = child.wait();
}

#[test]
fn review_refuses_corrupt_log_with_hint() {
    let dir = tempfile::tempdir().unwrap();
    let roster = review_roster(dir.path());
    std::fs::create_dir_all(dir.path().join("review")).unwrap();
    std::fs::write(dir.path().join("review/events.jsonl"), "{\"type\":\"rating\"\nnot json\n").unwrap();
    let out = run_deid(&["serve-review", "--out", &s(dir.path()), "--roster", &s(&roster), "--port", "0"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("hint:"), "{}", stderr(&out));
}

#[test]
fn review_port_in_use_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let roster = review_roster(dir.path());
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = run_deid(&["serve-review", "--out", &s(dir.path()), "--roster", &s(&roster), "--port", &port]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("binding"), "{}", stderr(&out));
}
