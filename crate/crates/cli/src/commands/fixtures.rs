use std::path::PathBuf;

use anyhow::{bail, Result};
use serde_json::json;

use deid_core::exec::Exec;
use deid_core::fixtures::{render_exam, ExamSpec};
use deid_core::synth::Side;
use deid_core::triage::Label;
use deid_core::video::{persist_clip, ClipSidecar};

use crate::manifest::{write_manifest, CaseEntry};
use crate::run::{case_seed, write_atomic};
use crate::{FixturesArgs, Status};

/// Odd-numbered cases are stroke cases, alternating the weak side.
pub fn fixture_specs(args: &FixturesArgs) -> Vec<ExamSpec> {
    (0..args.cases)
        .map(|i| {
            let id = format!("case{i:03}");
            let mut spec = ExamSpec::new(id.clone(), case_seed(args.seed, &id));
            spec.n_frames = args.frames;
            spec.size = args.size;
            spec.roll_deg = args.roll;
            spec.affected = match i % 4 {
                1 => Some(Side::Left),
                3 => Some(Side::Right),
                _ => None,
            };
            spec
        })
        .collect()
}

pub fn run(args: &FixturesArgs) -> Result<Status> {
    if args.cases == 0 || args.frames < 2 {
        bail!("need at least one case and two frames");
    }
    if args.size < 128 {
        bail!("--size must be at least 128");
    }
    let clips = args.out.join("clips");
    let tracks = args.out.join("landmarks");
    std::fs::create_dir_all(&clips)?;
    std::fs::create_dir_all(&tracks)?;
    let mut entries = Vec::new();
    for spec in fixture_specs(args) {
        let exam = render_exam(&spec, Exec::default());
        let path = clips.join(format!("{}.dfa", spec.case_id));
        let mut car = ClipSidecar::for_clip(&exam.clip);
        car.roll_deg = Some(spec.roll_deg);
        car.provenance = json!({ "fixture": spec });
        persist_clip(&path, &exam.clip, &car)?;
        let points: Vec<Vec<(f64, f64)>> = exam
            .landmarks
            .iter()
            .map(|l| l.points().iter().map(|p| (p.x, p.y)).collect())
            .collect();
        let track = json!({
            "case_id": spec.case_id,
            "schema": exam.landmarks[0].schema().id(),
            "frame_size": exam.landmarks[0].frame_size(),
            "points": points,
        });
        write_atomic(
            &tracks.join(format!("{}.json", spec.case_id)),
            serde_json::to_string(&track)?.as_bytes(),
        )?;
        entries.push(CaseEntry {
            case_id: spec.case_id.clone(),
            label: Some(if spec.affected.is_some() { Label::Stroke } else { Label::NonStroke }),
            real_clip_path: PathBuf::from("clips").join(format!("{}.dfa", spec.case_id)),
            syn_clip_path: None,
        });
    }
    write_manifest(&args.out.join("manifest.json"), &entries)?;
    println!("fixtures: {} clips -> {}", entries.len(), args.out.display());
    Ok(Status::Ok)
}
