use std::collections::BTreeMap;

use anyhow::{Context, Result};
use tracing::{info, warn};

use deid_core::exec::Exec;
use deid_core::privacy::{
    evaluate_cases, privacy_report, CaseClips, EmbeddingBackend, HandcraftedEmbedder, PairMode, SimilarityReport,
};
use deid_core::video::{decode_video, VideoClip};

use super::{ensure_run_dir, for_cases, load_manifest};
use crate::manifest::{CaseEntry, Manifest};
use crate::run::{artifact, case_seed, CaseOutcome, CaseStatus, RunManifest, StepRecord, REPORTS_DIR};
use crate::{EvalPrivacyArgs, Status};

fn load_pair(manifest: &Manifest, case: &CaseEntry) -> Result<(VideoClip, VideoClip)> {
    let syn_path = manifest.syn_path(case).context("no synthetic clip in manifest")?;
    let real_path = manifest.real_path(case);
    // Distinct ids even when both paths name the same file.
    let real = decode_video(&real_path)
        .with_context(|| format!("decoding {}", real_path.display()))?
        .with_id(format!("{}.real", case.case_id));
    let syn = decode_video(&syn_path)
        .with_context(|| format!("decoding {}", syn_path.display()))?
        .with_id(format!("{}.syn", case.case_id));
    Ok((real, syn))
}

pub fn run(args: &EvalPrivacyArgs) -> Result<Status> {
    let mut cfg = args.common.resolve()?;
    if let Some(n) = args.n_pairs {
        cfg.privacy.n_pairs = n;
    }
    if let Some(t) = args.threshold {
        cfg.privacy.threshold = t;
    }
    cfg.validate()?;
    let run_dir = cfg.out_dir()?.to_path_buf();
    ensure_run_dir(&run_dir)?;
    let manifest = load_manifest(&cfg, &run_dir)?;
    let reports = run_dir.join(REPORTS_DIR);
    let per_case_dir = reports.join("privacy");
    std::fs::create_dir_all(&per_case_dir)?;

    let embedder = HandcraftedEmbedder::with_palette_detector();
    let threshold = cfg.privacy.threshold;
    let n_pairs = cfg.privacy.n_pairs;
    info!(cases = manifest.cases.len(), backend = embedder.name(), "privacy evaluation");

    // Each case samples from its own seed stream, so the pooled report does
    // not depend on which other cases are present.
    let per_case = for_cases(cfg.workers, &manifest.cases, |case| -> Result<(u64, SimilarityReport)> {
        let (real, syn) = load_pair(&manifest, case)?;
        let seed = case_seed(cfg.seed, &case.case_id);
        let clips = [CaseClips {
            case_id: &case.case_id,
            real: &real,
            syn: Some(&syn),
        }];
        let r = evaluate_cases(&clips, &embedder, n_pairs, seed, threshold, Exec::default())?;
        Ok((seed, r))
    })?;

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    let mut outcomes = Vec::new();
    let mut outputs = Vec::new();
    let mut inputs = vec![artifact(&run_dir, &manifest.path)?];
    for (case, r) in manifest.cases.iter().zip(per_case) {
        match r {
            Ok((seed, report)) => {
                let p = per_case_dir.join(format!("{}.json", case.case_id));
                report.write_json(&p)?;
                outputs.push(artifact(&run_dir, &p)?);
                inputs.push(artifact(&run_dir, &manifest.real_path(case))?);
                if let Some(s) = manifest.syn_path(case) {
                    inputs.push(artifact(&run_dir, &s)?);
                }
                pairs.extend(report.pairs);
                skipped.extend(report.skipped);
                outcomes.push(CaseOutcome::ok(&case.case_id, Some(seed)));
            }
            Err(e) => {
                warn!(case = %case.case_id, error = %format!("{e:#}"), "case skipped");
                outcomes.push(CaseOutcome::failed(&case.case_id, CaseStatus::Skipped, format!("{e:#}")));
            }
        }
    }
    inputs.sort();
    inputs.dedup();

    let pooled = privacy_report(
        pairs,
        skipped,
        embedder.name(),
        threshold,
        cfg.seed,
        &[PairMode::RealReal, PairMode::RealSyn],
    )
    .context("pooled privacy report (no case produced scored pairs?)")?;
    let json = reports.join("privacy.json");
    let csv = reports.join("privacy.csv");
    pooled.write_json(&json)?;
    pooled.write_csv(&csv)?;
    outputs.push(artifact(&run_dir, &json)?);
    outputs.push(artifact(&run_dir, &csv)?);

    let n_skipped = outcomes.iter().filter(|o| o.status != CaseStatus::Ok).count();
    let mut backends = BTreeMap::new();
    backends.insert("embedding".to_string(), embedder.name().to_string());
    RunManifest::record(
        &run_dir,
        "eval-privacy",
        StepRecord {
            seed: cfg.seed,
            backends,
            parameters: serde_json::to_value(&cfg.privacy)?,
            inputs,
            outputs,
            cases: outcomes,
        },
    )?;

    for mode in [PairMode::RealReal, PairMode::RealSyn] {
        let g = pooled.group(mode).expect("required group");
        println!(
            "{:<9} n={:<5} q25={:.3} median={:.3} q75={:.3} below {:.2}: {:.1}%",
            mode.as_str(),
            g.values.len(),
            g.q25,
            g.median,
            g.q75,
            threshold,
            100.0 * g.fraction_below_threshold
        );
    }
    if !pooled.skipped.is_empty() {
        println!("{} pairs skipped (no face detected)", pooled.skipped.len());
    }
    println!("eval-privacy: {} cases, {} skipped", manifest.cases.len() - n_skipped, n_skipped);
    Ok(if n_skipped == 0 { Status::Ok } else { Status::Partial })
}
