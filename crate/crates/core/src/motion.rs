//! Motion retargeting: landmark correspondences, TPS deformation flow, warp
//! and inpainting, behind a backend interface.

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::imaging::{sample_bilinear, to_rgb8, Mask};
use crate::landmarks::{detect_landmarks, Concurrency, LandmarkBackend, LandmarkError, LandmarkSet};
use crate::prompt::{border_anchors, SubjectImage, PROMPT_SIZE};
use crate::tps::{merge_coincident, Tps, TpsError};
use crate::video::{ClipRole, VideoClip, VideoError, DRIVING_SIZE};

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("landmark schemas differ: {0}")]
    SchemaMismatch(String),
    #[error("degenerate correspondence configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("deformation system is singular: {0}")]
    SingularSystem(String),
    #[error("landmark tracking lost at frame {frame}: {source}")]
    LandmarkTrackingLost { frame: usize, source: LandmarkError },
    #[error("motion backend {backend} failed: {reason}")]
    BackendFailure { backend: String, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Video(#[from] VideoError),
}

/// Matched points: `subject` in the subject image, `target` where that point
/// should appear in the output frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub subject: Vec<(f64, f64)>,
    pub target: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn new(subject: Vec<(f64, f64)>, target: Vec<(f64, f64)>, weights: Vec<f64>) -> Result<Self, MotionError> {
        if subject.len() != target.len() || subject.len() != weights.len() {
            return Err(MotionError::InvalidInput("correspondence lists differ in length".into()));
        }
        if !spans_plane(&subject) || !spans_plane(&target) {
            return Err(MotionError::DegenerateConfiguration(
                "need at least 3 non-collinear points".into(),
            ));
        }
        Ok(Self { subject, target, weights })
    }

    pub fn len(&self) -> usize {
        self.subject.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject.is_empty()
    }

    /// Append pairs fixed to themselves (e.g. frame anchors).
    pub fn with_fixed(mut self, points: &[(f64, f64)]) -> Self {
        for &p in points {
            self.subject.push(p);
            self.target.push(p);
            self.weights.push(1.0);
        }
        self
    }
}

/// True when some triple of points has non-negligible area.
fn spans_plane(pts: &[(f64, f64)]) -> bool {
    if pts.len() < 3 {
        return false;
    }
    let a = pts[0];
    let Some(&b) = pts.iter().max_by(|p, q| {
        let dp = (p.0 - a.0).hypot(p.1 - a.1);
        let dq = (q.0 - a.0).hypot(q.1 - a.1);
        dp.total_cmp(&dq)
    }) else {
        return false;
    };
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    if len < 1e-9 {
        return false;
    }
    pts.iter()
        .any(|p| ((b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)).abs() / len > 1e-6)
}

/// Relative-motion transfer: subject landmark `i` moves by the driving
/// displacement `d_i - d0_i`, scaled by the subject/driving inter-ocular
/// ratio.
pub fn compute_correspondences(
    s_landmarks: &LandmarkSet,
    d_landmarks: &LandmarkSet,
    d0_landmarks: &LandmarkSet,
) -> Result<CorrespondenceSet, MotionError> {
    let id = s_landmarks.schema().id();
    for other in [d_landmarks, d0_landmarks] {
        if other.schema().id() != id || other.len() != s_landmarks.len() {
            return Err(MotionError::SchemaMismatch(format!("{id} vs {}", other.schema().id())));
        }
    }
    let iod_s = s_landmarks
        .inter_ocular()
        .map_err(|e| MotionError::DegenerateConfiguration(e.to_string()))?;
    let iod_d = d0_landmarks
        .inter_ocular()
        .map_err(|e| MotionError::DegenerateConfiguration(e.to_string()))?;
    if !(iod_s > 0.0 && iod_d > 0.0) {
        return Err(MotionError::DegenerateConfiguration("zero inter-ocular distance".into()));
    }
    let ratio = iod_s / iod_d;
    let mut subject = Vec::with_capacity(s_landmarks.len());
    let mut target = Vec::with_capacity(s_landmarks.len());
    let mut weights = Vec::with_capacity(s_landmarks.len());
    for i in 0..s_landmarks.len() {
        let s = s_landmarks.points()[i];
        let d = d_landmarks.points()[i];
        let d0 = d0_landmarks.points()[i];
        subject.push((s.x, s.y));
        target.push((s.x + ratio * (d.x - d0.x), s.y + ratio * (d.y - d0.y)));
        weights.push(s_landmarks.confidence()[i].min(d_landmarks.confidence()[i]));
    }
    CorrespondenceSet::new(subject, target, weights)
}

/// Backward map from output pixels to subject locations.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    width: usize,
    height: usize,
    flow: Vec<[f64; 2]>,
    occlusion: Mask,
}

impl DeformationField {
    pub fn from_parts(width: usize, height: usize, flow: Vec<[f64; 2]>, occlusion: Mask) -> Result<Self, MotionError> {
        if flow.len() != width * height || occlusion.width() != width || occlusion.height() != height {
            return Err(MotionError::InvalidInput("flow and mask sizes disagree".into()));
        }
        if flow.iter().any(|f| !f[0].is_finite() || !f[1].is_finite()) {
            return Err(MotionError::InvalidInput("flow must be finite".into()));
        }
        Ok(Self { width, height, flow, occlusion })
    }

    /// Pure translation: output `p` samples `p - t`, with out-of-range
    /// samples occluded.
    pub fn translation(width: usize, height: usize, t: (f64, f64)) -> Self {
        let flow: Vec<[f64; 2]> = (0..width * height)
            .map(|i| [(i % width) as f64 - t.0, (i / width) as f64 - t.1])
            .collect();
        let occ = flow.iter().map(|f| out_of_bounds(f[0], f[1], width, height)).collect();
        Self {
            width,
            height,
            flow,
            occlusion: Mask::from_vec(width, height, occ),
        }
    }

    pub fn identity(width: usize, height: usize) -> Self {
        Self::translation(width, height, (0.0, 0.0))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let f = self.flow[y * self.width + x];
        (f[0], f[1])
    }

    pub fn occlusion(&self) -> &Mask {
        &self.occlusion
    }

    pub fn occlusion_mut(&mut self) -> &mut Mask {
        &mut self.occlusion
    }
}

fn out_of_bounds(x: f64, y: f64, w: usize, h: usize) -> bool {
    const EPS: f64 = 1e-6;
    !(x >= -EPS && y >= -EPS && x <= (w - 1) as f64 + EPS && y <= (h - 1) as f64 + EPS)
}

/// Thin-plate spline through the correspondences (target → subject),
/// evaluated densely. Occluded: samples outside the subject frame and
/// fold-over (negative Jacobian determinant).
pub fn estimate_deformation(
    corr: &CorrespondenceSet,
    out_size: (u32, u32),
    regularization: f64,
    exec: Exec,
) -> Result<DeformationField, MotionError> {
    if !(regularization >= 0.0) {
        return Err(MotionError::InvalidInput("regularization must be >= 0".into()));
    }
    let tps = Tps::fit(&corr.target, &corr.subject, regularization).map_err(|e| match e {
        TpsError::SingularSystem(_) => MotionError::SingularSystem(e.to_string()),
        other => MotionError::DegenerateConfiguration(other.to_string()),
    })?;
    Ok(dense_field(&tps, out_size, exec))
}

fn dense_field(tps: &Tps, out_size: (u32, u32), exec: Exec) -> DeformationField {
    let (w, h) = (out_size.0 as usize, out_size.1 as usize);
    let rows = exec.map_range(h, |y| {
        (0..w)
            .map(|x| {
                let (fx, fy) = tps.eval(x as f64, y as f64);
                let j = tps.jacobian(x as f64, y as f64);
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                ([fx, fy], out_of_bounds(fx, fy, w, h) || det < 0.0)
            })
            .collect::<Vec<_>>()
    });
    let mut flow = Vec::with_capacity(w * h);
    let mut occ = Vec::with_capacity(w * h);
    for row in rows {
        for (f, o) in row {
            flow.push(f);
            occ.push(o);
        }
    }
    DeformationField {
        width: w,
        height: h,
        flow,
        occlusion: Mask::from_vec(w, h, occ),
    }
}

/// Bilinear backward warp. Occluded output pixels are black and the mask
/// is passed through unchanged.
pub fn warp(subject: &RgbImage, field: &DeformationField) -> (RgbImage, Mask) {
    let mut out = RgbImage::new(field.width as u32, field.height as u32);
    let mut mask = field.occlusion.clone();
    for y in 0..field.height {
        for x in 0..field.width {
            if mask.get(x, y) {
                continue;
            }
            let (sx, sy) = field.at(x, y);
            match sample_bilinear(subject, sx, sy) {
                Some(c) => out.put_pixel(x as u32, y as u32, to_rgb8(c)),
                // Subject smaller than the field: defer to inpainting.
                None => mask.set(x, y, true),
            }
        }
    }
    (out, mask)
}

const SOR_OMEGA: f32 = 1.9;
const INPAINT_TOL: f32 = 1e-3;
const INPAINT_MAX_SWEEPS: usize = 20_000;

/// Harmonic fill of masked pixels: onion-peel initialisation from the known
/// boundary, then successive over-relaxation of the 4-neighbour Laplace
/// equation until the largest update falls below a tolerance. A fully
/// masked frame has no data and is filled with black.
pub fn inpaint(frame: &RgbImage, mask: &Mask) -> RgbImage {
    let (w, h) = (frame.width() as usize, frame.height() as usize);
    assert_eq!((mask.width(), mask.height()), (w, h), "mask must match the frame");
    if mask.is_empty() {
        return frame.clone();
    }
    if mask.count() == w * h {
        return RgbImage::new(w as u32, h as u32);
    }
    let mut val: Vec<[f32; 3]> = frame
        .pixels()
        .map(|p| [p.0[0] as f32, p.0[1] as f32, p.0[2] as f32])
        .collect();
    let mut known: Vec<bool> = mask.data().iter().map(|&m| !m).collect();
    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if x > 0 {
            n[0] = i - 1;
        }
        if x + 1 < w {
            n[1] = i + 1;
        }
        if y > 0 {
            n[2] = i - w;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };
    // Onion peel: repeatedly fill the masked pixels touching known ones.
    let mut todo: Vec<usize> = (0..w * h).filter(|&i| mask.data()[i]).collect();
    let unknown = todo.clone();
    while !todo.is_empty() {
        let mut layer = Vec::new();
        let mut rest = Vec::new();
        for &i in &todo {
            let mut acc = [0.0f32; 3];
            let mut n = 0;
            for j in neighbours(i) {
                if j != usize::MAX && known[j] {
                    for k in 0..3 {
                        acc[k] += val[j][k];
                    }
                    n += 1;
                }
            }
            if n > 0 {
                layer.push((i, [acc[0] / n as f32, acc[1] / n as f32, acc[2] / n as f32]));
            } else {
                rest.push(i);
            }
        }
        for (i, v) in layer {
            val[i] = v;
            known[i] = true;
        }
        todo = rest;
    }
    for _ in 0..INPAINT_MAX_SWEEPS {
        let mut delta = 0.0f32;
        for &i in &unknown {
            let mut acc = [0.0f32; 3];
            let mut n = 0;
            for j in neighbours(i) {
                if j != usize::MAX {
                    for k in 0..3 {
                        acc[k] += val[j][k];
                    }
                    n += 1;
                }
            }
            for k in 0..3 {
                let target = acc[k] / n as f32;
                let step = SOR_OMEGA * (target - val[i][k]);
                val[i][k] += step;
                delta = delta.max(step.abs());
            }
        }
        if delta < INPAINT_TOL {
            break;
        }
    }
    let mut out = frame.clone();
    for &i in &unknown {
        out.put_pixel((i % w) as u32, (i / w) as u32, to_rgb8(val[i]));
    }
    out
}

/// A synthetic clip plus per-frame occluded fractions.
#[derive(Debug, Clone)]
pub struct RetargetOutput {
    pub clip: VideoClip,
    pub occlusion_fraction: Vec<f64>,
    pub backend: String,
}

impl RetargetOutput {
    /// Sidecar provenance for the synthetic clip.
    pub fn provenance(&self, subject: &SubjectImage, driving: &VideoClip) -> serde_json::Value {
        serde_json::json!({
            "subject_pseudo_id": subject.pseudo_id,
            "driving_clip_id": driving.clip_id(),
            "backend": self.backend,
            "generator": subject.provenance,
            "occlusion_fraction": self.occlusion_fraction,
        })
    }
}

/// Motion transfer model.
pub trait MotionTransferBackend: Send + Sync {
    fn name(&self) -> &str;
    fn retarget(&self, subject: &SubjectImage, driving: &VideoClip, exec: Exec) -> Result<RetargetOutput, MotionError>;
}

/// Per-frame landmark correspondences → TPS flow → warp → inpaint.
pub struct ReferenceWarpBackend {
    pub detector: Arc<dyn LandmarkBackend>,
    pub regularization: f64,
    /// Pin frame corners and edge midpoints so the background stays put.
    pub anchor_border: bool,
}

impl ReferenceWarpBackend {
    pub fn new(detector: Arc<dyn LandmarkBackend>) -> Self {
        Self {
            detector,
            regularization: 0.0,
            anchor_border: true,
        }
    }

    /// One output frame from precomputed landmarks.
    pub fn render_frame(
        &self,
        subject: &RgbImage,
        s_lm: &LandmarkSet,
        d_lm: &LandmarkSet,
        d0_lm: &LandmarkSet,
        exec: Exec,
    ) -> Result<(RgbImage, f64), MotionError> {
        let mut corr = compute_correspondences(s_lm, d_lm, d0_lm)?;
        if self.anchor_border {
            corr = corr.with_fixed(&border_anchors(subject.width(), subject.height()));
        }
        let (t, s) = merge_coincident(&corr.target, &corr.subject, 1e-9);
        let tps = Tps::fit(&t, &s, self.regularization)
            .map_err(|e| MotionError::SingularSystem(e.to_string()))?;
        let field = dense_field(&tps, subject.dimensions(), exec);
        let (warped, mask) = warp(subject, &field);
        Ok((inpaint(&warped, &mask), mask.fraction()))
    }
}

impl MotionTransferBackend for ReferenceWarpBackend {
    fn name(&self) -> &str {
        "reference-warp"
    }

    fn retarget(&self, subject: &SubjectImage, driving: &VideoClip, exec: Exec) -> Result<RetargetOutput, MotionError> {
        let s_lm = detect_landmarks(&subject.pixels, self.detector.as_ref()).map_err(|e| MotionError::BackendFailure {
            backend: self.name().into(),
            reason: format!("no face in subject image: {e}"),
        })?;
        let detect_exec = match self.detector.concurrency() {
            Concurrency::ThreadSafe => exec,
            Concurrency::Serialized => Exec::Sequential,
        };
        let indices: Vec<usize> = (0..driving.frame_count()).collect();
        let tracks = detect_exec.try_map(&indices, |&i| {
            detect_landmarks(driving.frame(i), self.detector.as_ref())
                .map_err(|source| MotionError::LandmarkTrackingLost { frame: i, source })
        })?;
        let frames = exec.try_map(&indices, |&i| {
            self.render_frame(&subject.pixels, &s_lm, &tracks[i], &tracks[0], Exec::Sequential)
        })?;
        let (frames, occlusion_fraction): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
        let clip = VideoClip::new(
            format!("{}__{}", driving.clip_id(), subject.pseudo_id),
            ClipRole::Synthetic,
            frames,
            driving.fps(),
        )?;
        Ok(RetargetOutput {
            clip,
            occlusion_fraction,
            backend: self.name().into(),
        })
    }
}

/// Retarget a preprocessed driving clip onto a 512x512 subject and check
/// the output contract.
pub fn retarget_video(
    subject: &SubjectImage,
    driving: &VideoClip,
    backend: &dyn MotionTransferBackend,
    exec: Exec,
) -> Result<RetargetOutput, MotionError> {
    let want = (DRIVING_SIZE, DRIVING_SIZE);
    if driving.resolution() != want {
        return Err(MotionError::InvalidInput(format!(
            "driving clip is {:?}, expected preprocessed 512x512",
            driving.resolution()
        )));
    }
    if subject.pixels.dimensions() != (PROMPT_SIZE, PROMPT_SIZE) {
        return Err(MotionError::InvalidInput("subject image must be 512x512".into()));
    }
    let mut out = backend.retarget(subject, driving, exec)?;
    if out.clip.frame_count() != driving.frame_count() || out.clip.resolution() != want {
        return Err(MotionError::BackendFailure {
            backend: backend.name().into(),
            reason: format!(
                "returned {} frames at {:?} for {} input frames",
                out.clip.frame_count(),
                out.clip.resolution(),
                driving.frame_count()
            ),
        });
    }
    out.clip = out.clip.with_role(ClipRole::Synthetic);
    Ok(out)
}
