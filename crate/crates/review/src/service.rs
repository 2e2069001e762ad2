//! Study state: roster checks, submissions, task assignment and reports.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Answer, PairedJudgment, RatingRecord, RealismOption, Roster, Side};
use crate::stats::{aggregate_scores, count_table, fleiss_kappa, gate_for_clinical_review, GateResult, Kappa};
use crate::store::{Event, EventLog, Projection, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("unknown rater {0}")]
    UnknownRater(String),
    #[error("pair {0} has not passed the realism gate")]
    NotGated(String),
    #[error("invalid roster: {0}")]
    InvalidRoster(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ServiceError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownVideo(_) => "unknown_video",
            ServiceError::UnknownRater(_) => "unknown_rater",
            ServiceError::NotGated(_) => "not_gated",
            ServiceError::InvalidRoster(_) => "invalid_roster",
            ServiceError::Store(_) => "storage_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitStatus {
    Stored,
    Replaced,
    /// Same answer as the stored record; nothing written.
    Unchanged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Realism,
    Paired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Realism {
        video_id: String,
    },
    Paired {
        pair_id: String,
        real_video_id: String,
        syn_video_id: String,
        left_video_id: String,
        right_video_id: String,
        real_side: Side,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTask {
    Task { task: Task, progress: Progress },
    Done { progress: Progress },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// Absent without at least two raters and one fully rated item.
    pub kappa: Option<Kappa>,
    pub mean_score: Option<f64>,
    pub std_score: Option<f64>,
    /// Items rated by every registered rater (used for kappa).
    pub n_items: usize,
    pub n_raters: usize,
    pub n_records: usize,
    pub categories: Vec<String>,
    pub category_proportions: Vec<f64>,
    /// Per item: counts per category (all records, complete or not).
    pub per_item: std::collections::BTreeMap<String, Vec<u32>>,
}

pub struct ReviewService {
    roster: Roster,
    log: Mutex<EventLog>,
    state: RwLock<Projection>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn rater_rng(seed: u64, salt: &str, rater: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.as_bytes());
    h.update([0]);
    h.update(rater.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
}

impl ReviewService {
    pub fn open(roster: Roster, log_path: &Path) -> Result<Self, ServiceError> {
        let mut ids = BTreeSet::new();
        for v in &roster.videos {
            if !ids.insert(v.id.as_str()) {
                return Err(ServiceError::InvalidRoster(format!("duplicate video id {}", v.id)));
            }
            if let Some(r) = &v.real {
                if !ids.insert(r.id.as_str()) {
                    return Err(ServiceError::InvalidRoster(format!("duplicate clip id {}", r.id)));
                }
            }
        }
        if roster.raters.is_empty() {
            return Err(ServiceError::InvalidRoster("no raters registered".into()));
        }
        let (log, projection) = EventLog::open(log_path)?;
        Ok(Self {
            roster,
            log: Mutex::new(log),
            state: RwLock::new(projection),
        })
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn snapshot(&self) -> Projection {
        self.state.read().expect("state lock").clone()
    }

    fn check_rater(&self, id: &str) -> Result<(), ServiceError> {
        if self.roster.raters.iter().any(|r| r == id) {
            Ok(())
        } else {
            Err(ServiceError::UnknownRater(id.into()))
        }
    }

    fn check_clinician(&self, id: &str) -> Result<(), ServiceError> {
        if self.roster.clinicians.iter().any(|r| r == id) {
            Ok(())
        } else {
            Err(ServiceError::UnknownRater(id.into()))
        }
    }

    /// Single writer: validate, append durably, then publish.
    fn commit(&self, event: Event, previous: impl Fn(&Projection) -> Option<bool>) -> Result<SubmitStatus, ServiceError> {
        let mut log = self.log.lock().expect("log lock");
        let status = match previous(&self.state.read().expect("state lock")) {
            None => SubmitStatus::Stored,
            Some(true) => return Ok(SubmitStatus::Unchanged),
            Some(false) => SubmitStatus::Replaced,
        };
        log.append(&event)?;
        self.state.write().expect("state lock").apply(&event);
        Ok(status)
    }

    pub fn submit_rating(
        &self,
        rater_id: &str,
        video_id: &str,
        option: RealismOption,
    ) -> Result<(SubmitStatus, RatingRecord), ServiceError> {
        self.check_rater(rater_id)?;
        if self.roster.video(video_id).is_none() {
            return Err(ServiceError::UnknownVideo(video_id.into()));
        }
        let record = RatingRecord::new(rater_id, video_id, option, now_ms());
        let key = (rater_id.to_string(), video_id.to_string());
        let status = self.commit(Event::Rating(record.clone()), |p| p.ratings.get(&key).map(|r| r.option == option))?;
        let stored = self.state.read().expect("state lock").ratings[&key].clone();
        Ok((status, stored))
    }

    pub fn submit_judgment(
        &self,
        clinician_id: &str,
        pair_id: &str,
        answer: Answer,
        real_side: Option<Side>,
    ) -> Result<(SubmitStatus, PairedJudgment), ServiceError> {
        self.check_clinician(clinician_id)?;
        let video = self.roster.video(pair_id).ok_or_else(|| ServiceError::UnknownVideo(pair_id.into()))?;
        if video.real.is_none() {
            return Err(ServiceError::UnknownVideo(format!("{pair_id} has no real counterpart")));
        }
        if !self.gate().selected.iter().any(|v| v == pair_id) {
            return Err(ServiceError::NotGated(pair_id.into()));
        }
        let side = real_side.unwrap_or_else(|| self.real_side(clinician_id, pair_id));
        let record = PairedJudgment::new(clinician_id, pair_id, answer, side, now_ms());
        let key = (clinician_id.to_string(), pair_id.to_string());
        let status = self.commit(Event::Judgment(record.clone()), |p| {
            p.judgments.get(&key).map(|j| j.answer == answer && j.real_side == side)
        })?;
        let stored = self.state.read().expect("state lock").judgments[&key].clone();
        Ok((status, stored))
    }

    /// Deterministic left/right placement of the real clip for one
    /// clinician and pair.
    pub fn real_side(&self, clinician_id: &str, pair_id: &str) -> Side {
        use rand::Rng;
        let mut rng = rater_rng(self.roster.seed, &format!("side:{pair_id}"), clinician_id);
        if rng.random_bool(0.5) {
            Side::Left
        } else {
            Side::Right
        }
    }

    fn task_order(&self, salt: &str, rater: &str, mut ids: Vec<String>) -> Vec<String> {
        ids.sort();
        ids.shuffle(&mut rater_rng(self.roster.seed, salt, rater));
        ids
    }

    pub fn gate(&self) -> GateResult {
        let state = self.state.read().expect("state lock");
        let ratings: Vec<RatingRecord> = state.ratings.values().cloned().collect();
        let roster: Vec<String> = self.roster.videos.iter().map(|v| v.id.clone()).collect();
        gate_for_clinical_review(&ratings, &roster, self.roster.raters.len())
    }

    pub fn next_task(&self, rater_id: &str, kind: TaskKind) -> Result<NextTask, ServiceError> {
        match kind {
            TaskKind::Realism => {
                self.check_rater(rater_id)?;
                let ids = self.roster.videos.iter().map(|v| v.id.clone()).collect();
                let order = self.task_order("realism", rater_id, ids);
                let state = self.state.read().expect("state lock");
                let pending: Vec<&String> = order
                    .iter()
                    .filter(|v| !state.ratings.contains_key(&(rater_id.to_string(), (*v).clone())))
                    .collect();
                let progress = Progress {
                    done: order.len() - pending.len(),
                    total: order.len(),
                };
                Ok(match pending.first() {
                    Some(v) => NextTask::Task {
                        task: Task::Realism { video_id: (*v).clone() },
                        progress,
                    },
                    None => NextTask::Done { progress },
                })
            }
            TaskKind::Paired => {
                self.check_clinician(rater_id)?;
                let gated: Vec<String> = self
                    .gate()
                    .selected
                    .into_iter()
                    .filter(|v| self.roster.video(v).is_some_and(|rv| rv.real.is_some()))
                    .collect();
                let order = self.task_order("paired", rater_id, gated);
                let state = self.state.read().expect("state lock");
                let pending: Vec<&String> = order
                    .iter()
                    .filter(|v| !state.judgments.contains_key(&(rater_id.to_string(), (*v).clone())))
                    .collect();
                let progress = Progress {
                    done: order.len() - pending.len(),
                    total: order.len(),
                };
                Ok(match pending.first() {
                    Some(v) => {
                        let rv = self.roster.video(v).expect("gated from roster");
                        let real = rv.real.as_ref().expect("filtered").id.clone();
                        let side = self.real_side(rater_id, v);
                        let (left, right) = match side {
                            Side::Left => (real.clone(), rv.id.clone()),
                            Side::Right => (rv.id.clone(), real.clone()),
                        };
                        NextTask::Task {
                            task: Task::Paired {
                                pair_id: rv.id.clone(),
                                real_video_id: real,
                                syn_video_id: rv.id.clone(),
                                left_video_id: left,
                                right_video_id: right,
                                real_side: side,
                            },
                            progress,
                        }
                    }
                    None => NextTask::Done { progress },
                })
            }
        }
    }

    /// Realism agreement over A/B/C; kappa uses items rated by every rater.
    pub fn realism_report(&self) -> AgreementReport {
        let state = self.state.read().expect("state lock");
        let votes = state
            .ratings
            .values()
            .map(|r| (r.video_id.as_str(), r.rater_id.as_str(), r.option.index()));
        let scores: Vec<f64> = state.ratings.values().map(|r| r.score as f64).collect();
        let raters: BTreeSet<&str> = self.roster.raters.iter().map(String::as_str).collect();
        let mut per_item = std::collections::BTreeMap::new();
        for r in state.ratings.values() {
            per_item.entry(r.video_id.clone()).or_insert_with(|| vec![0u32; 3])[r.option.index()] += 1;
        }
        report(votes, &raters, &scores, per_item, vec!["A".into(), "B".into(), "C".into()])
    }

    /// Paired-judgment agreement over yes/no among clinicians.
    pub fn paired_report(&self) -> AgreementReport {
        let state = self.state.read().expect("state lock");
        let idx = |a: Answer| usize::from(a == Answer::No);
        let votes = state
            .judgments
            .values()
            .map(|j| (j.pair_id.as_str(), j.clinician_id.as_str(), idx(j.answer)));
        let scores: Vec<f64> = state.judgments.values().map(|j| j.score as f64).collect();
        let raters: BTreeSet<&str> = self.roster.clinicians.iter().map(String::as_str).collect();
        let mut per_item = std::collections::BTreeMap::new();
        for j in state.judgments.values() {
            per_item.entry(j.pair_id.clone()).or_insert_with(|| vec![0u32; 2])[idx(j.answer)] += 1;
        }
        report(votes, &raters, &scores, per_item, vec!["yes".into(), "no".into()])
    }
}

fn report<'a>(
    votes: impl Iterator<Item = (&'a str, &'a str, usize)>,
    raters: &BTreeSet<&str>,
    scores: &[f64],
    per_item: std::collections::BTreeMap<String, Vec<u32>>,
    categories: Vec<String>,
) -> AgreementReport {
    let k = categories.len();
    let (items, table) = count_table(votes, raters, k);
    let kappa = if raters.len() >= 2 {
        fleiss_kappa(&table, raters.len() as u32).ok()
    } else {
        None
    };
    let all: Vec<u32> = (0..k).map(|j| per_item.values().map(|r| r[j]).sum()).collect();
    let total: u32 = all.iter().sum();
    let category_proportions = all
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    let agg = aggregate_scores(scores).ok();
    AgreementReport {
        kappa,
        mean_score: agg.map(|a| a.0),
        std_score: agg.map(|a| a.1),
        n_items: items.len(),
        n_raters: raters.len(),
        n_records: scores.len(),
        categories,
        category_proportions,
        per_item,
    }
}
