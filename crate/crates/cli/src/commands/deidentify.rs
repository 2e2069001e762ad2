use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;
use tracing::{info, warn};

use deid_core::exec::Exec;
use deid_core::pipeline::{deidentify, Backends, DeidParams};
use deid_core::video::{decode_video, persist_clip, ClipSidecar};

use super::{backend_versions, ensure_run_dir, for_cases, make_backends};
use crate::manifest::{write_manifest, CaseEntry, Manifest};
use crate::run::{artifact, case_seed, display_path, Artifact, CaseOutcome, CaseStatus, RunManifest, StepRecord, CLIPS_DIR};
use crate::{DeidentifyArgs, Status};

pub const SUBJECTS_DIR: &str = "subjects";

struct CaseFiles {
    real: PathBuf,
    syn: PathBuf,
    subject: PathBuf,
}

impl CaseFiles {
    fn new(run_dir: &Path, case_id: &str) -> Self {
        let clips = run_dir.join(CLIPS_DIR);
        Self {
            real: clips.join(format!("{case_id}.real.dfa")),
            syn: clips.join(format!("{case_id}.syn.dfa")),
            subject: run_dir.join(SUBJECTS_DIR).join(format!("{case_id}.png")),
        }
    }

    /// Every file this case writes, sidecars included.
    fn all(&self) -> Vec<PathBuf> {
        vec![
            self.real.clone(),
            self.real.with_extension("json"),
            self.syn.clone(),
            self.syn.with_extension("json"),
            self.subject.clone(),
            self.subject.with_extension("json"),
        ]
    }
}

fn process_case(
    manifest: &Manifest,
    case: &CaseEntry,
    run_dir: &Path,
    backends: &Backends,
    params: &DeidParams,
) -> Result<Vec<PathBuf>> {
    let files = CaseFiles::new(run_dir, &case.case_id);
    let source = manifest.real_path(case);
    let clip = decode_video(&source)
        .with_context(|| format!("decoding {}", source.display()))?
        .with_id(format!("{}.real", case.case_id));
    let out = deidentify(&clip, backends, params, Exec::default())?;

    let mut real_car = ClipSidecar::for_clip(&out.preprocessed.clip);
    real_car.roll_deg = Some(out.preprocessed.roll.angle_deg);
    real_car.crop_window = Some(out.preprocessed.crop);
    real_car.provenance = json!({
        "source": case.real_clip_path,
        "source_frames": clip.frame_count(),
        "source_resolution": clip.resolution(),
        "margin_ratio": params.margin_ratio,
    });
    persist_clip(&files.real, &out.preprocessed.clip, &real_car)?;

    let syn = out.synthetic.clip.clone().with_id(format!("{}.syn", case.case_id));
    let mut syn_car = ClipSidecar::for_clip(&syn);
    let mut prov = out.synthetic.provenance(&out.subject, &out.preprocessed.clip);
    prov["seed"] = json!(params.seed);
    prov["candidates_generated"] = json!(out.candidates.len());
    syn_car.provenance = prov;
    persist_clip(&files.syn, &syn, &syn_car)?;

    out.subject.save(&files.subject)?;
    Ok(files.all())
}

pub fn run(args: &DeidentifyArgs) -> Result<Status> {
    let cfg = args.common.resolve()?;
    let run_dir = cfg.out_dir()?.to_path_buf();
    let manifest_path = cfg
        .manifest
        .clone()
        .context("deidentify needs an input manifest: pass --manifest or set manifest in the config")?;
    let manifest = Manifest::load(&manifest_path)?;
    ensure_run_dir(&run_dir)?;
    std::fs::create_dir_all(run_dir.join(CLIPS_DIR))?;
    std::fs::create_dir_all(run_dir.join(SUBJECTS_DIR))?;
    let backends = make_backends(&cfg);

    info!(cases = manifest.cases.len(), run_dir = %run_dir.display(), "de-identifying");
    let results = for_cases(cfg.workers, &manifest.cases, |case| {
        let seed = case_seed(cfg.seed, &case.case_id);
        let files = CaseFiles::new(&run_dir, &case.case_id);
        // Leftovers from an earlier run would otherwise look like outputs.
        for p in files.all() {
            let _ = std::fs::remove_file(p);
        }
        let r = process_case(&manifest, case, &run_dir, &backends, &cfg.deid_params(seed));
        if r.is_err() {
            for p in files.all() {
                let _ = std::fs::remove_file(p);
            }
        }
        (seed, r)
    })?;

    let mut inputs = vec![artifact(&run_dir, &manifest.path)?];
    let mut outputs: Vec<Artifact> = Vec::new();
    let mut cases = Vec::new();
    let mut derived = Vec::new();
    for (case, (seed, r)) in manifest.cases.iter().zip(results) {
        match r {
            Ok(paths) => {
                info!(case = %case.case_id, "ok");
                inputs.push(artifact(&run_dir, &manifest.real_path(case))?);
                for p in &paths {
                    outputs.push(artifact(&run_dir, p)?);
                }
                let files = CaseFiles::new(&run_dir, &case.case_id);
                derived.push(CaseEntry {
                    case_id: case.case_id.clone(),
                    label: case.label,
                    real_clip_path: PathBuf::from(display_path(&run_dir, &files.real)),
                    syn_clip_path: Some(PathBuf::from(display_path(&run_dir, &files.syn))),
                });
                cases.push(CaseOutcome::ok(&case.case_id, Some(seed)));
            }
            Err(e) => {
                warn!(case = %case.case_id, error = %format!("{e:#}"), "case failed");
                let mut o = CaseOutcome::failed(&case.case_id, CaseStatus::Failed, format!("{e:#}"));
                o.seed = Some(seed);
                cases.push(o);
            }
        }
    }
    let derived_path = run_dir.join("manifest.json");
    write_manifest(&derived_path, &derived)?;
    outputs.push(artifact(&run_dir, &derived_path)?);

    let failed = cases.iter().filter(|c| c.status != CaseStatus::Ok).count();
    RunManifest::record(
        &run_dir,
        "deidentify",
        StepRecord {
            seed: cfg.seed,
            backends: backend_versions(&backends, &cfg),
            parameters: serde_json::to_value(&cfg.deidentify)?,
            inputs,
            outputs,
            cases,
        },
    )?;
    println!(
        "deidentify: {} ok, {} failed -> {}",
        derived.len(),
        failed,
        run_dir.display()
    );
    Ok(if failed == 0 { Status::Ok } else { Status::Partial })
}
