//! Identity-similarity evaluation: face embeddings, cosine similarity over
//! sampled frame pairs, and real-real vs real-synthetic reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::PaletteDetector;
use crate::exec::Exec;
use crate::features::{organ_bounding_boxes, Organ};
use crate::imaging::sample_bilinear;
use crate::landmarks::{detect_landmarks, face33, LandmarkBackend, LandmarkError, LandmarkSchema, LandmarkSet};
use crate::synth::{Background, Expression, FaceScene, HeadPose, Identity};
use crate::video::VideoClip;

/// Default verification threshold of the reference face recognizer.
pub const DEFAULT_VERIFICATION_THRESHOLD: f64 = 0.68;
pub const DEFAULT_PAIRS_PER_MODE: usize = 50;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("no face detected: {0}")]
    NoFaceDetected(String),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embeddings come from different backends ({0} vs {1})")]
    BackendMismatch(String, String),
    #[error("clip has {0} frame(s); need two distinct frames")]
    InsufficientFrames(usize),
    #[error("group {0} is empty")]
    EmptyGroup(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub clip_id: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub backend_name: String,
    pub frame_ref: Option<FrameRef>,
}

/// Face recognition embedding model.
pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Deterministic per frame.
    fn embed(&self, frame: &RgbImage) -> Result<Vec<f64>, PrivacyError>;
}

pub fn embed_face(frame: &RgbImage, backend: &dyn EmbeddingBackend) -> Result<EmbeddingVector, PrivacyError> {
    let values = backend.embed(frame)?;
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(PrivacyError::InvalidArgument(format!(
            "backend {} returned an empty or non-finite vector",
            backend.name()
        )));
    }
    Ok(EmbeddingVector {
        values,
        backend_name: backend.name().to_string(),
        frame_ref: None,
    })
}

/// `a·b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, PrivacyError> {
    if a.backend_name != b.backend_name {
        return Err(PrivacyError::BackendMismatch(a.backend_name.clone(), b.backend_name.clone()));
    }
    cosine(&a.values, &b.values)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, PrivacyError> {
    if a.len() != b.len() {
        return Err(PrivacyError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(PrivacyError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    RealReal,
    RealSyn,
}

impl PairMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PairMode::RealReal => "real_real",
            PairMode::RealSyn => "real_syn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePair {
    pub a: FrameRef,
    pub b: FrameRef,
}

/// Seeded uniform pairs. Real-real pairs use two distinct frames of the
/// real clip; real-syn pairs take one frame from each clip.
pub fn sample_frame_pairs(
    real: &VideoClip,
    syn: Option<&VideoClip>,
    n_pairs: usize,
    mode: PairMode,
    seed: u64,
) -> Result<Vec<FramePair>, PrivacyError> {
    if n_pairs == 0 {
        return Err(PrivacyError::InvalidArgument("n_pairs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = |i: usize| FrameRef {
        clip_id: real.clip_id().to_string(),
        frame_index: i,
    };
    let n = real.frame_count();
    match mode {
        PairMode::RealReal => {
            if n < 2 {
                return Err(PrivacyError::InsufficientFrames(n));
            }
            Ok((0..n_pairs)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    let mut j = rng.random_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    FramePair { a: r(i), b: r(j) }
                })
                .collect())
        }
        PairMode::RealSyn => {
            let syn = syn.ok_or_else(|| PrivacyError::InvalidArgument("real_syn needs a synthetic clip".into()))?;
            let m = syn.frame_count();
            Ok((0..n_pairs)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    let j = rng.random_range(0..m);
                    FramePair {
                        a: r(i),
                        b: FrameRef {
                            clip_id: syn.clip_id().to_string(),
                            frame_index: j,
                        },
                    }
                })
                .collect())
        }
    }
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n-1) q`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty set");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub values: Vec<f64>,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub fraction_below_threshold: f64,
}

impl GroupStats {
    pub fn from_values(values: Vec<f64>, threshold: f64) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let below = values.iter().filter(|&&v| v < threshold).count();
        Some(Self {
            q25: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q75: quantile(&sorted, 0.75),
            fraction_below_threshold: below as f64 / values.len() as f64,
            values,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub case_id: String,
    pub mode: PairMode,
    pub pair: FramePair,
    pub csim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub backend: String,
    pub threshold: f64,
    pub seed: u64,
    pub groups: BTreeMap<PairMode, GroupStats>,
    pub pairs: Vec<ScoredPair>,
    /// Pairs dropped because a frame had no detectable face.
    pub skipped: Vec<(String, FramePair, String)>,
}

impl SimilarityReport {
    pub fn group(&self, mode: PairMode) -> Option<&GroupStats> {
        self.groups.get(&mode)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), PrivacyError> {
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("report serializes"))?;
        Ok(())
    }

    /// One row per scored pair, for violin/KDE plotting.
    pub fn write_csv(&self, path: &Path) -> Result<(), PrivacyError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["case_id", "group", "clip_a", "frame_a", "clip_b", "frame_b", "csim"])?;
        for p in &self.pairs {
            w.write_record([
                p.case_id.as_str(),
                p.mode.as_str(),
                p.pair.a.clip_id.as_str(),
                &p.pair.a.frame_index.to_string(),
                p.pair.b.clip_id.as_str(),
                &p.pair.b.frame_index.to_string(),
                &format!("{:.17}", p.csim),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Assemble a report from already-scored pairs. Both groups must be
/// non-empty unless listed in `allow_empty`.
pub fn privacy_report(
    pairs: Vec<ScoredPair>,
    skipped: Vec<(String, FramePair, String)>,
    backend: &str,
    threshold: f64,
    seed: u64,
    required: &[PairMode],
) -> Result<SimilarityReport, PrivacyError> {
    let mut by_mode: BTreeMap<PairMode, Vec<f64>> = BTreeMap::new();
    for p in &pairs {
        if !(-1.0..=1.0).contains(&p.csim) {
            return Err(PrivacyError::InvalidArgument(format!("CSIM {} outside [-1, 1]", p.csim)));
        }
        by_mode.entry(p.mode).or_default().push(p.csim);
    }
    for m in required {
        if !by_mode.contains_key(m) {
            return Err(PrivacyError::EmptyGroup(m.as_str().into()));
        }
    }
    let groups = by_mode
        .into_iter()
        .map(|(m, v)| (m, GroupStats::from_values(v, threshold).expect("non-empty")))
        .collect();
    Ok(SimilarityReport {
        backend: backend.to_string(),
        threshold,
        seed,
        groups,
        pairs,
        skipped,
    })
}

/// One case: a real clip and (optionally) its synthetic counterpart.
pub struct CaseClips<'a> {
    pub case_id: &'a str,
    pub real: &'a VideoClip,
    pub syn: Option<&'a VideoClip>,
}

/// Sample, embed and score pairs for every case. Each case uses its own
/// seed stream derived from `seed` and the case position.
pub fn evaluate_cases(
    cases: &[CaseClips<'_>],
    backend: &dyn EmbeddingBackend,
    n_pairs: usize,
    seed: u64,
    threshold: f64,
    exec: Exec,
) -> Result<SimilarityReport, PrivacyError> {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (ci, case) in cases.iter().enumerate() {
        let case_seed = seed.wrapping_add((ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut wanted: Vec<(PairMode, FramePair)> = sample_frame_pairs(case.real, None, n_pairs, PairMode::RealReal, case_seed)?
            .into_iter()
            .map(|p| (PairMode::RealReal, p))
            .collect();
        if let Some(syn) = case.syn {
            wanted.extend(
                sample_frame_pairs(case.real, Some(syn), n_pairs, PairMode::RealSyn, case_seed ^ 1)?
                    .into_iter()
                    .map(|p| (PairMode::RealSyn, p)),
            );
        }
        let mut frames: Vec<FrameRef> = wanted.iter().flat_map(|(_, p)| [p.a.clone(), p.b.clone()]).collect();
        frames.sort();
        frames.dedup();
        let lookup = |r: &FrameRef| -> &RgbImage {
            if r.clip_id == case.real.clip_id() {
                case.real.frame(r.frame_index)
            } else {
                case.syn.expect("syn frame requested").frame(r.frame_index)
            }
        };
        let embedded = exec.map(&frames, |r| backend.embed(lookup(r)).map_err(|e| e.to_string()));
        let table: BTreeMap<&FrameRef, &Result<Vec<f64>, String>> = frames.iter().zip(&embedded).collect();
        for (mode, pair) in wanted {
            match (table[&pair.a], table[&pair.b]) {
                (Ok(a), Ok(b)) => pairs.push(ScoredPair {
                    case_id: case.case_id.to_string(),
                    mode,
                    csim: cosine(a, b)?,
                    pair,
                }),
                (Err(e), _) | (_, Err(e)) => skipped.push((case.case_id.to_string(), pair, e.clone())),
            }
        }
    }
    let required: Vec<PairMode> = if cases.iter().any(|c| c.syn.is_some()) {
        vec![PairMode::RealReal, PairMode::RealSyn]
    } else {
        vec![PairMode::RealReal]
    };
    privacy_report(pairs, skipped, backend.name(), threshold, seed, &required)
}

const CROP: usize = 24;
const CHROMA_GRID: usize = 6;
const POPULATION_SIZE: u64 = 24;
const POPULATION_SEED: u64 = 0x51a7_0000;

/// Relative weights of the descriptor blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorWeights {
    pub luma: f64,
    pub chroma: f64,
    pub geometry: f64,
}

impl Default for DescriptorWeights {
    fn default() -> Self {
        Self {
            luma: 1.0,
            chroma: 1.0,
            geometry: 0.5,
        }
    }
}

/// Deterministic face descriptor: a 24x24 z-normalised luma crop of the
/// organ-box union (grown by 25%), a coarse chroma grid with crop colour
/// statistics, and landmark geometry ratios. Each block is centred on a
/// fixed population of rendered faces and scaled to unit mean norm, then
/// weighted.
pub struct HandcraftedEmbedder {
    detector: Arc<dyn LandmarkBackend>,
    weights: DescriptorWeights,
    mean: Vec<f64>,
    block_scale: [f64; 3],
}

impl HandcraftedEmbedder {
    pub fn new(detector: Arc<dyn LandmarkBackend>) -> Self {
        Self::with_weights(detector, DescriptorWeights::default())
    }

    pub fn with_weights(detector: Arc<dyn LandmarkBackend>, weights: DescriptorWeights) -> Self {
        let schema = Arc::new(LandmarkSchema::face33());
        let raw: Vec<Vec<f64>> = Exec::default().map_range(POPULATION_SIZE as usize, |i| {
            let seed = POPULATION_SEED + i as u64;
            let scene = FaceScene::new(Identity::random(seed), Background::random(seed), (256, 256));
            let pose = HeadPose::centered((256, 256), 80.0);
            let img = scene.render(&pose, &Expression::neutral(), Exec::Sequential);
            let lm = scene
                .landmarks(&pose, &Expression::neutral(), schema.clone())
                .expect("population face in frame");
            raw_descriptor(&img, &lm).expect("population face crop")
        });
        let dim = raw[0].len();
        let mean: Vec<f64> = (0..dim)
            .map(|k| raw.iter().map(|v| v[k]).sum::<f64>() / raw.len() as f64)
            .collect();
        let blocks = block_ranges(dim);
        let block_scale = std::array::from_fn(|b| {
            let r = blocks[b].clone();
            let mean_norm = raw
                .iter()
                .map(|v| r.clone().map(|k| (v[k] - mean[k]).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / raw.len() as f64;
            if mean_norm > 0.0 {
                1.0 / mean_norm
            } else {
                1.0
            }
        });
        Self {
            detector,
            weights,
            mean,
            block_scale,
        }
    }

    pub fn with_palette_detector() -> Self {
        Self::new(Arc::new(PaletteDetector::new()))
    }

    /// Descriptor from known landmarks (skips detection).
    pub fn embed_with_landmarks(&self, frame: &RgbImage, lm: &LandmarkSet) -> Result<Vec<f64>, PrivacyError> {
        let raw = raw_descriptor(frame, lm)?;
        let blocks = block_ranges(raw.len());
        let w = [self.weights.luma, self.weights.chroma, self.weights.geometry];
        let mut out = vec![0.0; raw.len()];
        for (b, r) in blocks.iter().enumerate() {
            for k in r.clone() {
                out[k] = (raw[k] - self.mean[k]) * self.block_scale[b] * w[b];
            }
        }
        Ok(out)
    }
}

const LUMA_DIM: usize = CROP * CROP;
const CHROMA_DIM: usize = CHROMA_GRID * CHROMA_GRID * 2 + 6;

fn block_ranges(dim: usize) -> [std::ops::Range<usize>; 3] {
    [0..LUMA_DIM, LUMA_DIM..LUMA_DIM + CHROMA_DIM, LUMA_DIM + CHROMA_DIM..dim]
}

fn raw_descriptor(frame: &RgbImage, lm: &LandmarkSet) -> Result<Vec<f64>, PrivacyError> {
    let boxes = organ_bounding_boxes(lm, 0.0).map_err(|e| PrivacyError::NoFaceDetected(e.to_string()))?;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for o in Organ::ALL {
        let b = boxes.get(o);
        x0 = x0.min(b.x0);
        y0 = y0.min(b.y0);
        x1 = x1.max(b.x1);
        y1 = y1.max(b.y1);
    }
    let (gx, gy) = (0.125 * (x1 - x0), 0.125 * (y1 - y0));
    let (x0, y0, x1, y1) = (x0 - gx, y0 - gy, x1 + gx, y1 + gy);
    let (w, h) = frame.dimensions();
    let (maxx, maxy) = ((w - 1) as f64, (h - 1) as f64);
    // Average a 3x3 sub-grid per output cell so the crop is area-like.
    let mut rgb = vec![[0.0f64; 3]; CROP * CROP];
    for cy in 0..CROP {
        for cx in 0..CROP {
            let mut acc = [0.0; 3];
            for sy in 0..3 {
                for sx in 0..3 {
                    let u = (cx as f64 + (sx as f64 + 0.5) / 3.0) / CROP as f64;
                    let v = (cy as f64 + (sy as f64 + 0.5) / 3.0) / CROP as f64;
                    let px = (x0 + u * (x1 - x0)).clamp(0.0, maxx);
                    let py = (y0 + v * (y1 - y0)).clamp(0.0, maxy);
                    let c = sample_bilinear(frame, px, py).expect("clamped");
                    for k in 0..3 {
                        acc[k] += c[k] as f64 / 9.0;
                    }
                }
            }
            rgb[cy * CROP + cx] = acc;
        }
    }
    let luma: Vec<f64> = rgb
        .iter()
        .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
        .collect();
    let mean = luma.iter().sum::<f64>() / luma.len() as f64;
    let sd = (luma.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / luma.len() as f64).sqrt();
    if sd < 1e-6 {
        return Err(PrivacyError::NoFaceDetected("featureless face crop".into()));
    }
    let mut out: Vec<f64> = luma.iter().map(|v| (v - mean) / sd).collect();

    let cell = CROP / CHROMA_GRID;
    for gy in 0..CHROMA_GRID {
        for gx in 0..CHROMA_GRID {
            let (mut rg, mut gb) = (0.0, 0.0);
            for y in gy * cell..(gy + 1) * cell {
                for x in gx * cell..(gx + 1) * cell {
                    let c = rgb[y * CROP + x];
                    rg += (c[0] - c[1]) / 255.0;
                    gb += (c[1] - c[2]) / 255.0;
                }
            }
            let n = (cell * cell) as f64;
            out.push(rg / n);
            out.push(gb / n);
        }
    }
    for k in 0..3 {
        let m = rgb.iter().map(|c| c[k]).sum::<f64>() / rgb.len() as f64;
        let s = (rgb.iter().map(|c| (c[k] - m).powi(2)).sum::<f64>() / rgb.len() as f64).sqrt();
        out.push(m / 255.0);
        out.push(s / 255.0);
    }

    let p = lm.points();
    let iod = lm.inter_ocular().map_err(|e| PrivacyError::NoFaceDetected(e.to_string()))?;
    if iod <= 0.0 {
        return Err(PrivacyError::NoFaceDetected("zero inter-ocular distance".into()));
    }
    let d = |a: usize, b: usize| p[a].dist(p[b]) / iod;
    let eye_mid = p[face33::LEFT_EYE_CENTER].midpoint(p[face33::RIGHT_EYE_CENTER]);
    let mouth_mid = p[face33::MOUTH_LEFT].midpoint(p[face33::MOUTH_RIGHT]);
    let nostril_mid = p[face33::NOSE[2]].midpoint(p[face33::NOSE[3]]);
    out.extend([
        d(face33::LEFT_EYE[0], face33::LEFT_EYE[2]),
        d(face33::RIGHT_EYE[0], face33::RIGHT_EYE[2]),
        d(face33::MOUTH_LEFT, face33::MOUTH_RIGHT),
        d(face33::NOSE[2], face33::NOSE[3]),
        eye_mid.dist(nostril_mid) / iod,
        eye_mid.dist(mouth_mid) / iod,
        d(face33::JAW[0], face33::JAW[6]),
        eye_mid.dist(p[face33::JAW[3]]) / iod,
        d(face33::LEFT_BROW[1], face33::LEFT_EYE_CENTER),
        d(face33::RIGHT_BROW[1], face33::RIGHT_EYE_CENTER),
        d(face33::LIP_CONTOUR[0], face33::LIP_CONTOUR[1]),
    ]);
    Ok(out)
}

impl EmbeddingBackend for HandcraftedEmbedder {
    fn name(&self) -> &str {
        "handcrafted-v1"
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn embed(&self, frame: &RgbImage) -> Result<Vec<f64>, PrivacyError> {
        let lm = detect_landmarks(frame, self.detector.as_ref()).map_err(|e| match e {
            LandmarkError::NoFaceDetected => PrivacyError::NoFaceDetected("detector found no face".into()),
            other => PrivacyError::NoFaceDetected(other.to_string()),
        })?;
        self.embed_with_landmarks(frame, &lm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector {
            values: v.to_vec(),
            backend_name: "t".into(),
            frame_ref: None,
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&ev(&[3.0, 4.0]), &ev(&[3.0, 4.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&ev(&[1.0, 2.0, 2.0]), &ev(&[2.0, 1.0, 2.0])).unwrap();
        assert!((c - 8.0 / 9.0).abs() < 1e-12);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(PrivacyError::ZeroVector)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(PrivacyError::DimensionMismatch(1, 2))));
        let mut other = ev(&[1.0]);
        other.backend_name = "u".into();
        assert!(cosine_similarity(&ev(&[1.0]), &other).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let g = GroupStats::from_values(vec![0.9, 0.8], 0.68).unwrap();
        assert!((g.median - 0.85).abs() < 1e-15);
        let g = GroupStats::from_values(vec![0.3, 0.5], 0.68).unwrap();
        assert!((g.median - 0.4).abs() < 1e-15);
        let g = GroupStats::from_values(vec![0.7, 0.6], 0.68).unwrap();
        assert_eq!(g.fraction_below_threshold, 0.5);
        let g = GroupStats::from_values(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0.0).unwrap();
        assert_eq!((g.q25, g.median, g.q75), (2.0, 3.0, 4.0));
    }

    fn clip(n: usize, id: &str) -> VideoClip {
        VideoClip::new(id, crate::video::ClipRole::Driving, vec![RgbImage::new(2, 2); n], 30.0).unwrap()
    }

    #[test]
    fn pair_sampling_contracts() {
        let two = clip(2, "r");
        let p = sample_frame_pairs(&two, None, 1, PairMode::RealReal, 9).unwrap();
        let mut idx = [p[0].a.frame_index, p[0].b.frame_index];
        idx.sort();
        assert_eq!(idx, [0, 1]);
        assert!(matches!(
            sample_frame_pairs(&clip(1, "r"), None, 1, PairMode::RealReal, 0),
            Err(PrivacyError::InsufficientFrames(1))
        ));
        let hundred = clip(100, "r");
        let a = sample_frame_pairs(&hundred, None, 10_000, PairMode::RealReal, 5).unwrap();
        assert_eq!(a, sample_frame_pairs(&hundred, None, 10_000, PairMode::RealReal, 5).unwrap());
        assert!(a.iter().all(|p| p.a.frame_index != p.b.frame_index));
        let mut counts = [0usize; 100];
        for p in &a {
            counts[p.a.frame_index] += 1;
            counts[p.b.frame_index] += 1;
        }
        for c in counts {
            let f = c as f64 / 20_000.0;
            assert!((f - 0.01).abs() <= 0.005, "{f}");
        }
        let syn = clip(30, "s");
        let rs = sample_frame_pairs(&hundred, Some(&syn), 200, PairMode::RealSyn, 1).unwrap();
        assert!(rs.iter().all(|p| p.a.clip_id == "r" && p.b.clip_id == "s" && p.b.frame_index < 30));
    }

    #[test]
    fn report_groups_and_self_pairs() {
        let fr = |i| FrameRef { clip_id: "r".into(), frame_index: i };
        let pairs: Vec<ScoredPair> = (0..4)
            .map(|i| ScoredPair {
                case_id: "c".into(),
                mode: PairMode::RealReal,
                pair: FramePair { a: fr(i), b: fr(i) },
                csim: 1.0,
            })
            .collect();
        let r = privacy_report(pairs.clone(), vec![], "t", DEFAULT_VERIFICATION_THRESHOLD, 0, &[PairMode::RealReal]).unwrap();
        let g = r.group(PairMode::RealReal).unwrap();
        assert_eq!(g.fraction_below_threshold, 0.0);
        assert_eq!(r.threshold, 0.68);
        assert!(matches!(
            privacy_report(pairs, vec![], "t", 0.68, 0, &[PairMode::RealReal, PairMode::RealSyn]),
            Err(PrivacyError::EmptyGroup(_))
        ));
    }

    #[test]
    fn embedder_is_deterministic_and_rejects_blank() {
        let e = HandcraftedEmbedder::with_palette_detector();
        let scene = FaceScene::new(Identity::random(3), Background::random(3), (256, 256));
        let img = scene.render(&HeadPose::centered((256, 256), 70.0), &Expression::neutral(), Exec::Sequential);
        let a = embed_face(&img, &e).unwrap();
        let b = embed_face(&img, &e).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), e.dim());
        assert!(matches!(
            embed_face(&crate::synth::blank_frame((128, 128)), &e),
            Err(PrivacyError::NoFaceDetected(_))
        ));
    }
}
