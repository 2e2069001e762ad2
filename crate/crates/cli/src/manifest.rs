//! Case manifest shared by every subcommand: a JSON list of
//! `{case_id, label, real_clip_path, syn_clip_path}`. Relative paths resolve
//! against the manifest's own directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use deid_core::triage::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    #[serde(default)]
    pub label: Option<Label>,
    pub real_clip_path: PathBuf,
    #[serde(default)]
    pub syn_clip_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub cases: Vec<CaseEntry>,
}

/// Case ids become file names, so keep them to a safe alphabet.
pub fn check_case_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if !ok {
        bail!("case_id {id:?} must be 1-128 chars of [A-Za-z0-9._-] and not start with '.'");
    }
    Ok(())
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let cases: Vec<CaseEntry> =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        let mut seen = BTreeSet::new();
        for c in &cases {
            check_case_id(&c.case_id)?;
            if !seen.insert(c.case_id.as_str()) {
                bail!("duplicate case_id {:?} in {}", c.case_id, path.display());
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            cases,
        })
    }

    fn base(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base().join(p)
        }
    }

    pub fn real_path(&self, c: &CaseEntry) -> PathBuf {
        self.resolve(&c.real_clip_path)
    }

    pub fn syn_path(&self, c: &CaseEntry) -> Option<PathBuf> {
        c.syn_clip_path.as_deref().map(|p| self.resolve(p))
    }
}

pub fn write_manifest(path: &Path, cases: &[CaseEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(cases)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labels_and_optional_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(
            &p,
            r#"[{"case_id":"a","label":"stroke","real_clip_path":"a.dfa","syn_clip_path":"/abs/a.syn.dfa"},
                {"case_id":"b","real_clip_path":"b.dfa"}]"#,
        )
        .unwrap();
        let m = Manifest::load(&p).unwrap();
        assert_eq!(m.cases[0].label, Some(Label::Stroke));
        assert_eq!(m.cases[1].label, None);
        assert_eq!(m.real_path(&m.cases[0]), dir.path().join("a.dfa"));
        assert_eq!(m.syn_path(&m.cases[0]).unwrap(), PathBuf::from("/abs/a.syn.dfa"));
        assert!(m.syn_path(&m.cases[1]).is_none());
    }

    #[test]
    fn rejects_duplicates_and_unsafe_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"[{"case_id":"a","real_clip_path":"x"},{"case_id":"a","real_clip_path":"y"}]"#).unwrap();
        assert!(Manifest::load(&p).is_err());
        for bad in ["", "../x", "a/b", ".hidden"] {
            assert!(check_case_id(bad).is_err(), "{bad}");
        }
        check_case_id("case_01.v2").unwrap();
    }
}
