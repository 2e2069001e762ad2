use serde::{Deserialize, Serialize};

/// Answer to "Do you think this video is realistic?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RealismOption {
    /// Very realistic.
    A,
    /// Moderately realistic.
    B,
    /// Not realistic at all.
    C,
}

impl RealismOption {
    pub const ALL: [RealismOption; 3] = [RealismOption::A, RealismOption::B, RealismOption::C];

    pub fn score(self) -> u8 {
        match self {
            RealismOption::A => 3,
            RealismOption::B => 2,
            RealismOption::C => 1,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Answer to "are the diagnostic patterns of these two videos consistent?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn score(self) -> u8 {
        match self {
            Answer::Yes => 1,
            Answer::No => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub video_id: String,
    pub option: RealismOption,
    pub score: u8,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl RatingRecord {
    pub fn new(rater_id: impl Into<String>, video_id: impl Into<String>, option: RealismOption, timestamp: u64) -> Self {
        Self {
            rater_id: rater_id.into(),
            video_id: video_id.into(),
            option,
            score: option.score(),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedJudgment {
    pub clinician_id: String,
    /// The synthetic video's id; its real counterpart comes from the roster.
    pub pair_id: String,
    pub answer: Answer,
    pub score: u8,
    /// Where the real clip was shown.
    pub real_side: Side,
    pub timestamp: u64,
}

impl PairedJudgment {
    pub fn new(
        clinician_id: impl Into<String>,
        pair_id: impl Into<String>,
        answer: Answer,
        real_side: Side,
        timestamp: u64,
    ) -> Self {
        Self {
            clinician_id: clinician_id.into(),
            pair_id: pair_id.into(),
            answer,
            score: answer.score(),
            real_side,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipRef {
    pub id: String,
    pub path: std::path::PathBuf,
}

/// A synthetic video under review and, optionally, the real clip it was
/// generated from (needed for paired review).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterVideo {
    pub id: String,
    pub path: std::path::PathBuf,
    #[serde(default)]
    pub real: Option<ClipRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    /// Seed for per-rater task order and side placement.
    #[serde(default)]
    pub seed: u64,
    pub raters: Vec<String>,
    #[serde(default)]
    pub clinicians: Vec<String>,
    pub videos: Vec<RosterVideo>,
}

impl Roster {
    pub fn video(&self, id: &str) -> Option<&RosterVideo> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Path of any streamable clip, synthetic or real.
    pub fn clip_path(&self, id: &str) -> Option<&std::path::Path> {
        self.videos.iter().find_map(|v| {
            if v.id == id {
                Some(v.path.as_path())
            } else {
                v.real.as_ref().filter(|r| r.id == id).map(|r| r.path.as_path())
            }
        })
    }
}
