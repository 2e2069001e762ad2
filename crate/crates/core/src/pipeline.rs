//! End-to-end de-identification of one driving clip:
//! ingest → conditions → candidates → selection → enhancement → retarget.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::PaletteDetector;
use crate::exec::Exec;
use crate::features::{build_condition_maps, ConditionMaps, ConditionParams, FeatureError};
use crate::landmarks::{detect_landmarks, LandmarkBackend, LandmarkError};
use crate::motion::{retarget_video, MotionError, MotionTransferBackend, ReferenceWarpBackend, RetargetOutput};
use crate::prompt::{
    enhance, generate_candidates, select_prompt, BicubicUnsharpEnhancer, EnhancerBackend, GeneratorBackend, PoseCheck,
    PromptError, QualityBackend, SharpnessFaceScorer, SubjectImage, TemplateWarpGenerator, DEFAULT_CANDIDATES,
    DEFAULT_QUALITY_THRESHOLD, DEFAULT_ROLL_TOLERANCE_DEG,
};
use crate::video::{ingest_driving, PreprocessedClip, VideoClip, VideoError, DEFAULT_MARGIN_RATIO};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest: {0}")]
    Video(#[from] VideoError),
    #[error("landmarks: {0}")]
    Landmarks(#[from] LandmarkError),
    #[error("conditions: {0}")]
    Features(#[from] FeatureError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("motion transfer: {0}")]
    Motion(#[from] MotionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeidParams {
    pub margin_ratio: f64,
    pub conditions: ConditionParams,
    pub candidates: usize,
    pub quality_threshold: f64,
    pub roll_tolerance_deg: f64,
    /// Further candidate batches tried when none qualifies.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for DeidParams {
    fn default() -> Self {
        Self {
            margin_ratio: DEFAULT_MARGIN_RATIO,
            conditions: ConditionParams::default(),
            candidates: DEFAULT_CANDIDATES,
            quality_threshold: DEFAULT_QUALITY_THRESHOLD,
            roll_tolerance_deg: DEFAULT_ROLL_TOLERANCE_DEG,
            max_attempts: 3,
            seed: 0,
        }
    }
}

#[derive(Clone)]
pub struct Backends {
    pub landmarks: Arc<dyn LandmarkBackend>,
    pub generator: Arc<dyn GeneratorBackend>,
    pub quality: Arc<dyn QualityBackend>,
    pub enhancer: Arc<dyn EnhancerBackend>,
    pub motion: Arc<dyn MotionTransferBackend>,
}

impl Backends {
    /// The self-contained reference stack.
    pub fn reference() -> Self {
        let det: Arc<dyn LandmarkBackend> = Arc::new(PaletteDetector::new());
        Self {
            landmarks: det.clone(),
            generator: Arc::new(TemplateWarpGenerator::new(crate::features::CONDITION_SIZE)),
            quality: Arc::new(SharpnessFaceScorer::new()),
            enhancer: Arc::new(BicubicUnsharpEnhancer::default()),
            motion: Arc::new(ReferenceWarpBackend::new(det)),
        }
    }
}

pub struct DeidResult {
    pub preprocessed: PreprocessedClip,
    pub conditions: ConditionMaps,
    pub candidates: Vec<SubjectImage>,
    pub subject: SubjectImage,
    pub synthetic: RetargetOutput,
}

/// Prompt stage only: conditions from the preprocessed first frame, then a
/// qualifying, enhanced subject image.
pub fn make_subject(
    preprocessed: &PreprocessedClip,
    backends: &Backends,
    params: &DeidParams,
    exec: Exec,
) -> Result<(ConditionMaps, Vec<SubjectImage>, SubjectImage), PipelineError> {
    let frame0 = preprocessed.clip.frame(0);
    // Detected on the actual preprocessed pixels rather than the
    // analytically transformed landmarks.
    let lm0 = detect_landmarks(frame0, backends.landmarks.as_ref())?;
    let conditions = build_condition_maps(frame0, &lm0, params.conditions)?;
    let pose = PoseCheck {
        detector: backends.landmarks.as_ref(),
        roll_tolerance_deg: params.roll_tolerance_deg,
    };
    let mut all = Vec::new();
    let mut last_err = PromptError::NoQualifyingCandidate;
    for attempt in 0..params.max_attempts.max(1) {
        let batch_seed = params.seed.wrapping_add((attempt * params.candidates) as u64);
        let cands = generate_candidates(
            &conditions,
            params.candidates,
            backends.generator.as_ref(),
            batch_seed,
            backends.quality.as_ref(),
            &pose,
            exec,
        )?;
        let pick = select_prompt(&cands, params.quality_threshold, batch_seed ^ 0x5e1e_c7);
        all.extend(cands);
        match pick {
            Ok(s) => {
                return Ok((conditions, all, enhance(&s, backends.enhancer.as_ref())?));
            }
            Err(e @ PromptError::NoQualifyingCandidate) => last_err = e,
            Err(e) => return Err(e.into()),
        }
    }
    Err(last_err.into())
}

pub fn deidentify(
    clip: &VideoClip,
    backends: &Backends,
    params: &DeidParams,
    exec: Exec,
) -> Result<DeidResult, PipelineError> {
    let preprocessed = ingest_driving(clip, backends.landmarks.as_ref(), params.margin_ratio)?;
    let (conditions, candidates, subject) = make_subject(&preprocessed, backends, params, exec)?;
    let synthetic = retarget_video(&subject, &preprocessed.clip, backends.motion.as_ref(), exec)?;
    Ok(DeidResult {
        preprocessed,
        conditions,
        candidates,
        subject,
        synthetic,
    })
}
