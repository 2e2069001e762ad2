//! Pseudo-identity subject images: conditioned generation, quality filtering,
//! seeded selection and enhancement to 512x512.

use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::PaletteDetector;
use crate::exec::Exec;
use crate::features::{canny, ConditionMaps};
use crate::imaging::{blur_rgb, laplacian_variance, resize_bicubic, sample_bilinear, to_rgb8, Mask, Plane};
use crate::landmarks::{detect_landmarks, face33, LandmarkBackend, LandmarkSchema, LandmarkSet, Point};
use crate::synth::{Background, Expression, FaceScene, HeadPose, Identity};
use crate::tps::Tps;
use crate::video::estimate_camera_roll;

pub const PROMPT_SIZE: u32 = 512;
pub const DEFAULT_CANDIDATES: usize = 8;
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ROLL_TOLERANCE_DEG: f64 = 5.0;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("generator backend {backend} failed: {reason}")]
    BackendFailure { backend: String, reason: String },
    #[error("no candidate passed the quality and pose filters")]
    NoQualifyingCandidate,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_name: String,
    pub backend_version: String,
    pub seed: u64,
    pub condition_hash: String,
    #[serde(default)]
    pub post: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectImage {
    pub pixels: RgbImage,
    pub pseudo_id: String,
    pub quality_score: f64,
    pub pose_mismatch: bool,
    /// Roll measured on the candidate itself, when its face was found.
    pub roll_deg: Option<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct SubjectSidecar {
    pseudo_id: String,
    quality_score: f64,
    pose_mismatch: bool,
    roll_deg: Option<f64>,
    width: u32,
    height: u32,
    provenance: Provenance,
}

impl SubjectImage {
    /// Save as PNG plus a JSON sidecar next to it.
    pub fn save(&self, png_path: &Path) -> Result<(), PromptError> {
        self.pixels
            .save(png_path)
            .map_err(|e| PromptError::Io(std::io::Error::other(e)))?;
        let side = SubjectSidecar {
            pseudo_id: self.pseudo_id.clone(),
            quality_score: self.quality_score,
            pose_mismatch: self.pose_mismatch,
            roll_deg: self.roll_deg,
            width: self.pixels.width(),
            height: self.pixels.height(),
            provenance: self.provenance.clone(),
        };
        std::fs::write(
            png_path.with_extension("json"),
            serde_json::to_vec_pretty(&side).expect("sidecar serializes"),
        )?;
        Ok(())
    }

    pub fn load(png_path: &Path) -> Result<Self, PromptError> {
        let pixels = image::open(png_path)
            .map_err(|e| PromptError::Io(std::io::Error::other(e)))?
            .to_rgb8();
        let side: SubjectSidecar = serde_json::from_slice(&std::fs::read(png_path.with_extension("json"))?)
            .map_err(|e| PromptError::Io(std::io::Error::other(e)))?;
        Ok(Self {
            pixels,
            pseudo_id: side.pseudo_id,
            quality_score: side.quality_score,
            pose_mismatch: side.pose_mismatch,
            roll_deg: side.roll_deg,
            provenance: side.provenance,
        })
    }
}

/// Conditional face generator.
pub trait GeneratorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    /// Deterministic in `(conditions, seed)`.
    fn generate(&self, conditions: &ConditionMaps, seed: u64) -> Result<RgbImage, String>;
}

/// Image quality assessment; higher is better.
pub trait QualityBackend: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, image: &RgbImage) -> f64;
}

/// Face restoration / upsampling stage.
pub trait EnhancerBackend: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str;
    fn enhance(&self, image: &RgbImage) -> Result<RgbImage, String>;
}

fn pseudo_id(backend: &str, seed: u64, condition_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(backend.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(condition_hash.as_bytes());
    format!("pid-{}", &hex::encode(h.finalize())[..12])
}

/// Roll of the eye line decoded from the condition heatmap peaks.
pub fn condition_roll(conditions: &ConditionMaps) -> Option<f64> {
    let peaks = conditions.peak_points();
    if peaks.len() != face33::LEN {
        return None;
    }
    let l = peaks[face33::LEFT_EYE_CENTER];
    let r = peaks[face33::RIGHT_EYE_CENTER];
    let (dx, dy) = (r.0 as f64 - l.0 as f64, r.1 as f64 - l.1 as f64);
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    let mut a = (-dy).atan2(dx).to_degrees();
    if a > 90.0 {
        a -= 180.0;
    } else if a <= -90.0 {
        a += 180.0;
    }
    Some(a)
}

/// How candidates' head pose is checked against the conditions.
pub struct PoseCheck<'a> {
    pub detector: &'a dyn LandmarkBackend,
    pub roll_tolerance_deg: f64,
}

/// `k` candidates from seeds `seed..seed+k`, each scored and pose-checked.
/// Candidates whose roll differs from the conditions by more than the
/// tolerance (or whose face cannot be found) are kept but flagged.
pub fn generate_candidates(
    conditions: &ConditionMaps,
    k: usize,
    backend: &dyn GeneratorBackend,
    seed: u64,
    scorer: &dyn QualityBackend,
    pose: &PoseCheck<'_>,
    exec: Exec,
) -> Result<Vec<SubjectImage>, PromptError> {
    if k == 0 {
        return Err(PromptError::InvalidArgument("k must be at least 1".into()));
    }
    let target_roll = condition_roll(conditions);
    let hash = conditions.condition_hash();
    let seeds: Vec<u64> = (0..k as u64).map(|i| seed.wrapping_add(i)).collect();
    exec.try_map(&seeds, |&s| {
        let pixels = backend.generate(conditions, s).map_err(|reason| PromptError::BackendFailure {
            backend: backend.name().to_string(),
            reason,
        })?;
        let roll = detect_landmarks(&pixels, pose.detector)
            .ok()
            .and_then(|lm| estimate_camera_roll(&lm).ok())
            .map(|r| r.angle_deg);
        let pose_mismatch = match (roll, target_roll) {
            (Some(r), Some(t)) => (r - t).abs() > pose.roll_tolerance_deg,
            _ => true,
        };
        let quality_score = scorer.score(&pixels);
        Ok(SubjectImage {
            pixels,
            pseudo_id: pseudo_id(backend.name(), s, &hash),
            quality_score,
            pose_mismatch,
            roll_deg: roll,
            provenance: Provenance {
                backend_name: backend.name().to_string(),
                backend_version: backend.version().to_string(),
                seed: s,
                condition_hash: hash.clone(),
                post: Vec::new(),
            },
        })
    })
}

pub fn score_quality(image: &SubjectImage, scorer: &dyn QualityBackend) -> f64 {
    scorer.score(&image.pixels)
}

/// Uniform seeded choice among candidates scoring at least `threshold`
/// without a pose mismatch.
pub fn select_prompt(candidates: &[SubjectImage], threshold: f64, rng_seed: u64) -> Result<SubjectImage, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::InvalidArgument("no candidates".into()));
    }
    let eligible: Vec<&SubjectImage> = candidates
        .iter()
        .filter(|c| c.quality_score >= threshold && !c.pose_mismatch)
        .collect();
    if eligible.is_empty() {
        return Err(PromptError::NoQualifyingCandidate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(eligible[rng.random_range(0..eligible.len())].clone())
}

/// Run the enhancer and record it in the provenance.
pub fn enhance(image: &SubjectImage, enhancer: &dyn EnhancerBackend) -> Result<SubjectImage, PromptError> {
    let pixels = enhancer.enhance(&image.pixels).map_err(|reason| PromptError::BackendFailure {
        backend: enhancer.name().to_string(),
        reason,
    })?;
    if pixels.dimensions() != (PROMPT_SIZE, PROMPT_SIZE) {
        return Err(PromptError::BackendFailure {
            backend: enhancer.name().to_string(),
            reason: format!("produced {:?}, expected 512x512", pixels.dimensions()),
        });
    }
    let mut out = image.clone();
    out.pixels = pixels;
    out.provenance.post.push(StageRecord {
        name: enhancer.name().to_string(),
        version: enhancer.version().to_string(),
    });
    Ok(out)
}

/// Sharpness plus face-detector confidence:
/// `0.4 * v / (v + 100) + 0.6 * confidence`, `v` the Laplacian variance of luma.
#[derive(Debug, Default)]
pub struct SharpnessFaceScorer {
    detector: PaletteDetector,
}

impl SharpnessFaceScorer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl QualityBackend for SharpnessFaceScorer {
    fn name(&self) -> &str {
        "sharpness-face"
    }

    fn score(&self, image: &RgbImage) -> f64 {
        let v = laplacian_variance(&Plane::luma(image));
        let conf = self.detector.detect_scored(image).map(|d| d.score).unwrap_or(0.0);
        0.4 * v / (v + 100.0) + 0.6 * conf
    }
}

/// Bicubic upsampling to 512x512 followed by an unsharp mask.
#[derive(Debug, Clone)]
pub struct BicubicUnsharpEnhancer {
    pub sigma: f32,
    pub amount: f32,
}

impl Default for BicubicUnsharpEnhancer {
    fn default() -> Self {
        Self { sigma: 1.0, amount: 0.5 }
    }
}

impl EnhancerBackend for BicubicUnsharpEnhancer {
    fn name(&self) -> &str {
        "bicubic-unsharp"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn enhance(&self, image: &RgbImage) -> Result<RgbImage, String> {
        let up = if image.dimensions() == (PROMPT_SIZE, PROMPT_SIZE) {
            image.clone()
        } else {
            resize_bicubic(image, PROMPT_SIZE, PROMPT_SIZE)
        };
        let soft = blur_rgb(&up, self.sigma);
        Ok(RgbImage::from_fn(PROMPT_SIZE, PROMPT_SIZE, |x, y| {
            let (a, b) = (up.get_pixel(x, y).0, soft.get_pixel(x, y).0);
            to_rgb8(std::array::from_fn(|k| {
                a[k] as f32 + self.amount * (a[k] as f32 - b[k] as f32)
            }))
        }))
    }
}

/// A stored face with integer landmarks.
#[derive(Debug, Clone)]
pub struct Template {
    pub image: RgbImage,
    pub landmarks: Vec<(f64, f64)>,
}

pub const TEMPLATE_BANK_SIZE: usize = 24;
const TEMPLATE_SEED_BASE: u64 = 0x7e4d_0000;
/// Side of the landmark bounding box in a 256px template.
const TEMPLATE_FACE_SPAN: f64 = 142.0;
const EDGE_DARKEN: f32 = 0.55;

/// Deterministic generator: TPS-warp a seed-chosen template so its landmarks
/// land on the condition landmarks, then darken condition edge pixels the
/// warped face does not already reproduce.
#[derive(Debug, Clone)]
pub struct TemplateWarpGenerator {
    templates: Vec<Template>,
    size: u32,
}

impl TemplateWarpGenerator {
    /// Build the default bank of rendered neutral faces.
    pub fn new(size: u32) -> Self {
        let schema = Arc::new(LandmarkSchema::face33());
        let templates = Exec::default().map_range(TEMPLATE_BANK_SIZE, |i| {
            let seed = TEMPLATE_SEED_BASE + i as u64;
            render_template(Identity::random(seed), Background::random(seed), size, schema.clone())
        });
        Self { templates, size }
    }

    pub fn from_templates(templates: Vec<Template>, size: u32) -> Result<Self, PromptError> {
        if templates.is_empty() {
            return Err(PromptError::InvalidArgument("empty template bank".into()));
        }
        for t in &templates {
            if t.image.dimensions() != (size, size) || t.landmarks.len() != face33::LEN {
                return Err(PromptError::InvalidArgument("template has wrong size or landmark count".into()));
            }
        }
        Ok(Self { templates, size })
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn template_index(&self, seed: u64) -> usize {
        ChaCha8Rng::seed_from_u64(seed).random_range(0..self.templates.len())
    }
}

/// Render a neutral, upright face filling the template frame the way a
/// preprocessed driving face fills its crop.
pub fn render_template(identity: Identity, background: Background, size: u32, schema: Arc<LandmarkSchema>) -> Template {
    let scene = FaceScene::new(identity, background, (size, size));
    let neutral = Expression::neutral();
    let local = scene.local_landmarks(&neutral);
    let (x0, x1) = local.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
    let (y0, y1) = local.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
    let iod = TEMPLATE_FACE_SPAN / (x1 - x0).max(y1 - y0);
    let c = (size as f64 - 1.0) / 2.0;
    let pose = HeadPose {
        cx: c - iod * (x0 + x1) / 2.0,
        cy: c - iod * (y0 + y1) / 2.0,
        iod,
        roll_deg: 0.0,
    };
    let image = scene.render(&pose, &neutral, Exec::Sequential);
    let landmarks = scene
        .landmarks(&pose, &neutral, schema)
        .expect("template landmarks in frame")
        .points()
        .iter()
        .map(|p| (p.x.round(), p.y.round()))
        .collect();
    Template { image, landmarks }
}

/// The 8 frame anchors (corners and edge midpoints) that pin the border.
pub fn border_anchors(w: u32, h: u32) -> Vec<(f64, f64)> {
    let (mx, my) = (w as f64 - 1.0, h as f64 - 1.0);
    vec![
        (0.0, 0.0),
        (mx / 2.0, 0.0),
        (mx, 0.0),
        (0.0, my / 2.0),
        (mx, my / 2.0),
        (0.0, my),
        (mx / 2.0, my),
        (mx, my),
    ]
}

impl GeneratorBackend for TemplateWarpGenerator {
    fn name(&self) -> &str {
        "template-warp"
    }

    fn version(&self) -> &str {
        "1"
    }

    fn generate(&self, conditions: &ConditionMaps, seed: u64) -> Result<RgbImage, String> {
        if conditions.resolution() != (self.size, self.size) {
            return Err(format!(
                "conditions at {:?}, generator runs at {}",
                conditions.resolution(),
                self.size
            ));
        }
        let peaks = conditions.peak_points();
        if peaks.len() != face33::LEN {
            return Err(format!("expected {} landmark channels, got {}", face33::LEN, peaks.len()));
        }
        let template = &self.templates[self.template_index(seed)];
        let anchors = border_anchors(self.size, self.size);
        let mut dst: Vec<(f64, f64)> = peaks.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        let mut src = template.landmarks.clone();
        dst.extend(&anchors);
        src.extend(&anchors);
        // Output position -> template position.
        let tps = Tps::fit_merged(&dst, &src, 0.0, 1e-9).map_err(|e| e.to_string())?;
        let n = self.size as usize;
        let max = (n - 1) as f64;
        let mut warped = RgbImage::new(self.size, self.size);
        for y in 0..n {
            for x in 0..n {
                let (sx, sy) = tps.eval(x as f64, y as f64);
                let c = sample_bilinear(&template.image, sx.clamp(0.0, max), sy.clamp(0.0, max))
                    .expect("clamped inside");
                warped.put_pixel(x as u32, y as u32, to_rgb8(c));
            }
        }
        let own = canny(&warped, conditions.params.canny).map_err(|e| e.to_string())?;
        let missing = missing_edges(&conditions.edge_map, &own, 1);
        for y in 0..n {
            for x in 0..n {
                if missing.get(x, y) {
                    let p = warped.get_pixel_mut(x as u32, y as u32);
                    for v in p.0.iter_mut() {
                        *v = (*v as f32 * EDGE_DARKEN).round() as u8;
                    }
                }
            }
        }
        Ok(warped)
    }
}

/// Pixels set in `wanted` with no pixel of `have` within Chebyshev radius `r`.
pub fn missing_edges(wanted: &Mask, have: &Mask, r: usize) -> Mask {
    let (w, h) = (wanted.width(), wanted.height());
    let mut out = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !wanted.get(x, y) {
                continue;
            }
            let near = (y.saturating_sub(r)..=(y + r).min(h - 1))
                .any(|yy| (x.saturating_sub(r)..=(x + r).min(w - 1)).any(|xx| have.get(xx, yy)));
            if !near {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Fraction of condition edge pixels within Euclidean distance `radius` of
/// an edge of `generated`, both restricted to the organ boxes.
pub fn edge_fidelity(conditions: &ConditionMaps, generated: &RgbImage, radius: f64) -> Result<f64, PromptError> {
    if generated.dimensions() != conditions.resolution() {
        return Err(PromptError::InvalidArgument(format!(
            "image is {:?}, conditions are {:?}",
            generated.dimensions(),
            conditions.resolution()
        )));
    }
    let own = canny(generated, conditions.params.canny).map_err(|e| PromptError::InvalidArgument(e.to_string()))?;
    let inside = conditions.boxes.union_mask();
    let (w, h) = (own.width(), own.height());
    let r = radius.ceil() as isize;
    let (mut total, mut hit) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if !conditions.edge_map.get(x, y) {
                continue;
            }
            total += 1;
            let found = (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    xx >= 0
                        && yy >= 0
                        && (xx as usize) < w
                        && (yy as usize) < h
                        && ((dx * dx + dy * dy) as f64) <= radius * radius
                        && own.get(xx as usize, yy as usize)
                        && inside.get(xx as usize, yy as usize)
                })
            });
            hit += found as usize;
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}

/// Landmarks of a template as a set on its own frame.
pub fn template_landmarks(t: &Template) -> LandmarkSet {
    let pts = t.landmarks.iter().map(|&(x, y)| Point::new(x, y)).collect();
    LandmarkSet::from_points(pts, t.image.dimensions(), Arc::new(LandmarkSchema::face33()))
        .expect("template landmarks valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_condition_maps, ConditionParams};
    use crate::imaging::rotate_ccw;

    fn subject(q: f64, mismatch: bool) -> SubjectImage {
        SubjectImage {
            pixels: RgbImage::new(4, 4),
            pseudo_id: format!("p{q}"),
            quality_score: q,
            pose_mismatch: mismatch,
            roll_deg: Some(0.0),
            provenance: Provenance {
                backend_name: "b".into(),
                backend_version: "1".into(),
                seed: 0,
                condition_hash: "h".into(),
                post: vec![],
            },
        }
    }

    #[test]
    fn selection_filters_then_draws() {
        let c = vec![subject(0.9, false), subject(0.2, false), subject(0.8, false)];
        for seed in 0..50 {
            let s = select_prompt(&c, 0.5, seed).unwrap();
            assert!(s.pseudo_id == "p0.9" || s.pseudo_id == "p0.8");
            assert_eq!(select_prompt(&c, 0.5, seed).unwrap(), s);
        }
        let low = vec![subject(0.1, false), subject(0.4, false)];
        assert!(matches!(select_prompt(&low, 0.5, 1), Err(PromptError::NoQualifyingCandidate)));
        let flagged = vec![subject(0.9, true)];
        assert!(matches!(select_prompt(&flagged, 0.5, 1), Err(PromptError::NoQualifyingCandidate)));
    }

    #[test]
    fn identity_conditions_reproduce_the_template() {
        let g = TemplateWarpGenerator::new(256);
        let seed = 11;
        let t = &g.templates()[g.template_index(seed)];
        let cond = build_condition_maps(&t.image, &template_landmarks(t), ConditionParams::default()).unwrap();
        let out = g.generate(&cond, seed).unwrap();
        assert_eq!(out, t.image);
    }

    #[test]
    fn candidates_carry_distinct_seeds_and_are_deterministic() {
        let g = TemplateWarpGenerator::new(256);
        let t = &g.templates()[0];
        let cond = build_condition_maps(&t.image, &template_landmarks(t), ConditionParams::default()).unwrap();
        let det = PaletteDetector::new();
        let pose = PoseCheck { detector: &det, roll_tolerance_deg: 5.0 };
        let scorer = SharpnessFaceScorer::new();
        let a = generate_candidates(&cond, 5, &g, 40, &scorer, &pose, Exec::default()).unwrap();
        let seeds: Vec<u64> = a.iter().map(|c| c.provenance.seed).collect();
        assert_eq!(seeds, vec![40, 41, 42, 43, 44]);
        let b = generate_candidates(&cond, 5, &g, 40, &scorer, &pose, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert_eq!(c.provenance.condition_hash, cond.condition_hash());
            assert!(!c.pose_mismatch, "roll {:?}", c.roll_deg);
        }
    }

    #[test]
    fn rolled_conditions_give_rolled_candidates() {
        let g = TemplateWarpGenerator::new(256);
        let t = &g.templates()[3];
        let rolled = rotate_ccw(&t.image, -20.0);
        let det = PaletteDetector::new();
        let lm = detect_landmarks(&rolled, &det).unwrap();
        let cond = build_condition_maps(&rolled, &lm, ConditionParams::default()).unwrap();
        let target = condition_roll(&cond).unwrap();
        assert!((target + 20.0).abs() < 2.0, "{target}");
        for seed in 0..4 {
            let img = g.generate(&cond, seed).unwrap();
            let roll = estimate_camera_roll(&detect_landmarks(&img, &det).unwrap()).unwrap().angle_deg;
            assert!((-25.0..=-15.0).contains(&roll), "seed {seed}: {roll}");
        }
    }

    #[test]
    fn blur_lowers_quality_and_noise_fails() {
        let g = TemplateWarpGenerator::new(256);
        let scorer = SharpnessFaceScorer::new();
        let sharp = &g.templates()[5].image;
        let s0 = scorer.score(sharp);
        let s1 = scorer.score(&blur_rgb(sharp, 3.0));
        assert!(s1 < s0, "{s1} !< {s0}");
        assert!(s0 >= DEFAULT_QUALITY_THRESHOLD);
        assert_eq!(scorer.score(sharp), s0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = RgbImage::from_fn(256, 256, |_, _| image::Rgb(std::array::from_fn(|_| rng.random())));
        assert!(scorer.score(&noise) < DEFAULT_QUALITY_THRESHOLD);
    }

    #[test]
    fn enhancer_sizes_and_provenance() {
        let g = TemplateWarpGenerator::new(256);
        let mut s = subject(0.9, false);
        s.pixels = g.templates()[0].image.clone();
        let e = BicubicUnsharpEnhancer::default();
        let out = enhance(&s, &e).unwrap();
        assert_eq!(out.pixels.dimensions(), (512, 512));
        assert_eq!(out.pseudo_id, s.pseudo_id);
        assert_eq!(out.provenance.post.len(), 1);
        let again = enhance(&out, &e).unwrap();
        assert_eq!(again.pixels.dimensions(), (512, 512));
        assert_ne!(again.pixels, out.pixels);
        assert_eq!(again.provenance.post.len(), 2);
        assert_eq!(again.provenance.backend_name, s.provenance.backend_name);
    }
}
