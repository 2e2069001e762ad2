use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};

use deid_core::privacy::{PairMode, SimilarityReport};
use deid_core::triage::TriageReport;

use crate::run::{artifact, write_atomic, CaseStatus, RunManifest, StepRecord, REPORTS_DIR};
use crate::{ReportArgs, Status};

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)?;
    Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
}

pub fn run(args: &ReportArgs) -> Result<Status> {
    let cfg = args.common.resolve()?;
    let run_dir = cfg.out_dir()?.to_path_buf();
    let Some(ledger) = RunManifest::load(&run_dir)? else {
        bail!("{} has no run.json; nothing to report", run_dir.display());
    };
    let reports = run_dir.join(REPORTS_DIR);
    std::fs::create_dir_all(&reports)?;
    let mut inputs = Vec::new();
    let mut s = String::new();
    writeln!(s, "# Run summary\n")?;

    writeln!(s, "## Steps\n")?;
    for (name, step) in &ledger.steps {
        if name == "report" {
            continue;
        }
        let count = |st| step.cases.iter().filter(|c| c.status == st).count();
        writeln!(
            s,
            "- {name}: seed {}, {} ok, {} failed, {} skipped",
            step.seed,
            count(CaseStatus::Ok),
            count(CaseStatus::Failed),
            count(CaseStatus::Skipped)
        )?;
        for c in step.cases.iter().filter(|c| c.status != CaseStatus::Ok) {
            writeln!(s, "  - {}: {}", c.case_id, c.error.as_deref().unwrap_or("?"))?;
        }
    }

    let privacy_path = reports.join("privacy.json");
    if let Some(p) = read_json::<SimilarityReport>(&privacy_path)? {
        inputs.push(artifact(&run_dir, &privacy_path)?);
        writeln!(s, "\n## Privacy ({}, threshold {})\n", p.backend, p.threshold)?;
        writeln!(s, "| group | n | q25 | median | q75 | below threshold |")?;
        writeln!(s, "|---|---|---|---|---|---|")?;
        for mode in [PairMode::RealReal, PairMode::RealSyn] {
            if let Some(g) = p.group(mode) {
                writeln!(
                    s,
                    "| {} | {} | {:.3} | {:.3} | {:.3} | {:.1}% |",
                    mode.as_str(),
                    g.values.len(),
                    g.q25,
                    g.median,
                    g.q75,
                    100.0 * g.fraction_below_threshold
                )?;
            }
        }
        if let (Some(rr), Some(rs)) = (p.group(PairMode::RealReal), p.group(PairMode::RealSyn)) {
            let gap = rr.median - rs.median;
            writeln!(
                s,
                "\nmedian gap {gap:.3} vs real_real IQR {:.3}: {}",
                rr.iqr(),
                if gap > rr.iqr() { "separated" } else { "NOT separated" }
            )?;
        }
    }

    let triage_path = reports.join("triage.json");
    if let Some(t) = read_json::<TriageReport>(&triage_path)? {
        inputs.push(artifact(&run_dir, &triage_path)?);
        writeln!(s, "\n## Triage ({}, seed {})\n", t.backend, t.seed)?;
        writeln!(s, "| scheme | Acc | Spec | Sens | F1 | AUC | MSE |")?;
        writeln!(s, "|---|---|---|---|---|---|---|")?;
        for (scheme, r) in &t.schemes {
            let m = &r.metrics;
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
            writeln!(
                s,
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {} | {} |",
                scheme.as_str(),
                m.accuracy,
                m.specificity,
                m.sensitivity,
                m.f1,
                opt(m.auc),
                opt(m.mse_vs_baseline)
            )?;
        }
    }

    let out = reports.join("summary.md");
    write_atomic(&out, s.as_bytes())?;
    RunManifest::record(
        &run_dir,
        "report",
        StepRecord {
            seed: cfg.seed,
            backends: BTreeMap::new(),
            parameters: serde_json::Value::Null,
            inputs,
            outputs: vec![artifact(&run_dir, &out)?],
            cases: vec![],
        },
    )?;
    print!("{s}");
    Ok(Status::Ok)
}
