//! Deterministic procedural exam clips with exact landmark tracks, used by
//! the `fixtures` CLI command, the acceptance suite and the benches.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::landmarks::{LandmarkSchema, LandmarkSet};
use crate::synth::{exam_script, render_script, Background, FaceScene, HeadPose, Identity, Side};
use crate::video::{ClipRole, VideoClip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamSpec {
    pub case_id: String,
    pub identity_seed: u64,
    pub n_frames: usize,
    pub size: u32,
    /// Camera roll applied to the whole clip.
    pub roll_deg: f64,
    /// Weak side for stroke cases; `None` for symmetric (non-stroke) cases.
    pub affected: Option<Side>,
    pub fps: f64,
}

impl ExamSpec {
    pub fn new(case_id: impl Into<String>, identity_seed: u64) -> Self {
        Self {
            case_id: case_id.into(),
            identity_seed,
            n_frames: 48,
            size: 384,
            roll_deg: 0.0,
            affected: None,
            fps: 30.0,
        }
    }

    pub fn label(&self) -> u8 {
        u8::from(self.affected.is_some())
    }
}

pub struct ExamClip {
    pub clip: VideoClip,
    /// Exact per-frame landmarks in clip coordinates.
    pub landmarks: Vec<LandmarkSet>,
    pub scene: FaceScene,
}

pub fn render_exam(spec: &ExamSpec, exec: Exec) -> ExamClip {
    let size = (spec.size, spec.size);
    let scene = FaceScene::new(
        Identity::random(spec.identity_seed),
        Background::random(spec.identity_seed),
        size,
    );
    let mut base = HeadPose::centered(size, spec.size as f64 * 0.21);
    base.roll_deg = spec.roll_deg;
    let script = exam_script(spec.n_frames, base, spec.affected, spec.identity_seed);
    let (frames, landmarks) = render_script(&scene, &script, Arc::new(LandmarkSchema::face33()), exec)
        .expect("scripted face stays in frame");
    let clip = VideoClip::new(spec.case_id.clone(), ClipRole::Driving, frames, spec.fps).expect("non-empty clip");
    ExamClip { clip, landmarks, scene }
}
