use std::collections::BTreeMap;

use anyhow::{Context, Result};
use tracing::{info, warn};

use deid_core::exec::Exec;
use deid_core::triage::{dataset, evaluate_schemes, sample_from_clip, ClassifierBackend, Label, TriageSample};
use deid_core::video::decode_video;

use super::{ensure_run_dir, for_cases, load_manifest};
use crate::manifest::{CaseEntry, Manifest};
use crate::run::{artifact, CaseOutcome, CaseStatus, RunManifest, StepRecord, REPORTS_DIR};
use crate::{EvalTriageArgs, Status};

fn load_case(
    manifest: &Manifest,
    case: &CaseEntry,
    downsample: (u32, u32),
) -> Result<(TriageSample, TriageSample)> {
    let label: Label = case.label.context("no label")?;
    let syn_path = manifest.syn_path(case).context("no synthetic clip in manifest")?;
    let real_path = manifest.real_path(case);
    let real = decode_video(&real_path).with_context(|| format!("decoding {}", real_path.display()))?;
    let syn = decode_video(&syn_path).with_context(|| format!("decoding {}", syn_path.display()))?;
    Ok((
        sample_from_clip(&case.case_id, label, &real, downsample)?,
        sample_from_clip(&case.case_id, label, &syn, downsample)?,
    ))
}

pub fn run(args: &EvalTriageArgs) -> Result<Status> {
    let mut cfg = args.common.resolve()?;
    if let Some(t) = args.fixed_threshold {
        cfg.triage.fixed_threshold = Some(t);
    }
    if let Some(t) = args.target_sensitivity {
        cfg.triage.target_sensitivity = t;
    }
    cfg.validate()?;
    let run_dir = cfg.out_dir()?.to_path_buf();
    ensure_run_dir(&run_dir)?;
    let manifest = load_manifest(&cfg, &run_dir)?;
    let reports = run_dir.join(REPORTS_DIR);
    std::fs::create_dir_all(&reports)?;
    let downsample = (cfg.triage.downsample[0], cfg.triage.downsample[1]);
    let backend = cfg.classifier();
    info!(cases = manifest.cases.len(), backend = backend.name(), "triage evaluation");

    let loaded = for_cases(cfg.workers, &manifest.cases, |case| load_case(&manifest, case, downsample))?;
    let mut real = Vec::new();
    let mut syn = Vec::new();
    let mut outcomes = Vec::new();
    let mut inputs = vec![artifact(&run_dir, &manifest.path)?];
    for (case, r) in manifest.cases.iter().zip(loaded) {
        match r {
            Ok((r, s)) => {
                real.push(r);
                syn.push(s);
                inputs.push(artifact(&run_dir, &manifest.real_path(case))?);
                inputs.push(artifact(&run_dir, &manifest.syn_path(case).expect("loaded"))?);
                outcomes.push(CaseOutcome::ok(&case.case_id, None));
            }
            Err(e) => {
                warn!(case = %case.case_id, error = %format!("{e:#}"), "case excluded");
                outcomes.push(CaseOutcome::failed(&case.case_id, CaseStatus::Skipped, format!("{e:#}")));
            }
        }
    }
    inputs.sort();
    inputs.dedup();

    let real = dataset(real)?;
    let syn = dataset(syn)?;
    let report = evaluate_schemes(&real, &syn, &backend, cfg.seed, cfg.operating_point(), Exec::default())
        .context("cross-validation")?;
    let json = reports.join("triage.json");
    let csv = reports.join("triage.csv");
    report.write_json(&json)?;
    report.write_csv(&csv)?;

    let excluded = outcomes.iter().filter(|o| o.status != CaseStatus::Ok).count();
    let mut backends = BTreeMap::new();
    backends.insert("classifier".to_string(), backend.name().to_string());
    RunManifest::record(
        &run_dir,
        "eval-triage",
        StepRecord {
            seed: cfg.seed,
            backends,
            parameters: serde_json::to_value(&cfg.triage)?,
            inputs,
            outputs: vec![artifact(&run_dir, &json)?, artifact(&run_dir, &csv)?],
            cases: outcomes,
        },
    )?;

    println!("{:<9} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8}", "scheme", "Acc", "Spec", "Sens", "F1", "AUC", "MSE");
    for (s, r) in &report.schemes {
        let m = &r.metrics;
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:<9} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>8}",
            s.as_str(),
            m.accuracy,
            m.specificity,
            m.sensitivity,
            m.f1,
            opt(m.auc),
            opt(m.mse_vs_baseline)
        );
    }
    println!("eval-triage: {} cases, {} excluded", real.len(), excluded);
    Ok(if excluded == 0 { Status::Ok } else { Status::Partial })
}
