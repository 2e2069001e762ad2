//! Append-only JSON-lines event log with an in-memory projection.
//!
//! A submission is acknowledged only after its line (newline included) has
//! been written and fsynced. On start the log is replayed; a torn final
//! line without its newline was never acknowledged and is cut off, while
//! any malformed complete line is treated as corruption.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PairedJudgment, RatingRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(
        "event log {path} is corrupt at line {line}: {reason}\n\
         hint: move the log aside or truncate it before line {line} (every earlier line is intact), then restart"
    )]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("event log io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Rating(RatingRecord),
    Judgment(PairedJudgment),
}

/// Latest record per (rater, item).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Projection {
    pub ratings: BTreeMap<(String, String), RatingRecord>,
    pub judgments: BTreeMap<(String, String), PairedJudgment>,
}

impl Projection {
    pub fn apply(&mut self, e: &Event) {
        match e {
            Event::Rating(r) => {
                self.ratings.insert((r.rater_id.clone(), r.video_id.clone()), r.clone());
            }
            Event::Judgment(j) => {
                self.judgments.insert((j.clinician_id.clone(), j.pair_id.clone()), j.clone());
            }
        }
    }
}

pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Open (creating if needed) and replay the log.
    pub fn open(path: &Path) -> Result<(Self, Projection), StoreError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let mut projection = Projection::default();
        let mut reader = BufReader::new(&file);
        let mut good_len: u64 = 0;
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            if !line.ends_with('\n') {
                tracing::warn!(path = %path.display(), line = line_no, "dropping torn trailing record");
                break;
            }
            if !line.trim().is_empty() {
                let event: Event = serde_json::from_str(line.trim_end()).map_err(|e| StoreError::Corrupt {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: e.to_string(),
                })?;
                projection.apply(&event);
            }
            good_len += n as u64;
        }
        drop(reader);
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
            },
            projection,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably append one event.
    pub fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RealismOption;

    #[test]
    fn replay_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.jsonl");
        {
            let (mut log, proj) = EventLog::open(&p).unwrap();
            assert_eq!(proj, Projection::default());
            log.append(&Event::Rating(RatingRecord::new("r1", "v1", RealismOption::B, 1))).unwrap();
            log.append(&Event::Rating(RatingRecord::new("r1", "v1", RealismOption::A, 2))).unwrap();
        }
        std::fs::OpenOptions::new().append(true).open(&p).unwrap().write_all(b"{\"type\":\"rat").unwrap();
        let (_, proj) = EventLog::open(&p).unwrap();
        assert_eq!(proj.ratings.len(), 1);
        assert_eq!(proj.ratings[&("r1".into(), "v1".into())].option, RealismOption::A);
        assert!(std::fs::read_to_string(&p).unwrap().ends_with('\n'));
    }

    #[test]
    fn corrupt_line_refuses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("events.jsonl");
        std::fs::write(&p, "not json\n").unwrap();
        let err = EventLog::open(&p).err().unwrap();
        assert!(matches!(err, StoreError::Corrupt { line: 1, .. }));
        assert!(err.to_string().contains("hint:"));
    }
}
