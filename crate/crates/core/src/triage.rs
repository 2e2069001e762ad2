//! Triage harness: frame-difference features, a temporal-averaging linear
//! classifier, stratified five-fold cross-validation under the four
//! real/synthetic train-test schemes, and classification metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::imaging::{luma_of, resize_area};
use crate::video::VideoClip;

pub const DEFAULT_DOWNSAMPLE: (u32, u32) = (64, 64);
pub const N_FOLDS: usize = 5;
/// Human triage sensitivity used for operating-point matching.
pub const HUMAN_TRIAGE_SENSITIVITY: f64 = 0.7019;

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("clip has {0} frame(s); need at least 2")]
    TooFewFrames(usize),
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("test set contains a single class; AUC undefined")]
    SingleClassTestSet,
    #[error("feature dimension {got} does not match model dimension {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("need at least {N_FOLDS} cases with both classes present, got {0}")]
    TooFewCases(usize),
    #[error("real and synthetic datasets differ: {0}")]
    DatasetMismatch(String),
    #[error("prediction sets cover different cases: {0}")]
    CaseMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonStroke,
    Stroke,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Stroke
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageSample {
    pub case_id: String,
    pub label: Label,
    /// `N - 1` adjacent-frame difference vectors.
    pub features: Vec<Vec<f32>>,
}

impl TriageSample {
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

fn gray_downsampled(frame: &image::RgbImage, (h, w): (u32, u32)) -> Vec<f32> {
    let small = if frame.dimensions() == (w, h) {
        frame.clone()
    } else {
        resize_area(frame, w, h)
    };
    small.pixels().map(|p| luma_of(p.0)).collect()
}

/// Vector `i` is `gray(frame[i+1]) - gray(frame[i])` at `downsample = (h, w)`.
pub fn frame_difference_features(clip: &VideoClip, downsample: (u32, u32)) -> Result<Vec<Vec<f32>>, TriageError> {
    if clip.frame_count() < 2 {
        return Err(TriageError::TooFewFrames(clip.frame_count()));
    }
    if downsample.0 == 0 || downsample.1 == 0 {
        return Err(TriageError::InvalidArgument("downsample size must be positive".into()));
    }
    let gray: Vec<Vec<f32>> = clip.frames().iter().map(|f| gray_downsampled(f, downsample)).collect();
    Ok(gray
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect())
}

pub fn sample_from_clip(
    case_id: impl Into<String>,
    label: Label,
    clip: &VideoClip,
    downsample: (u32, u32),
) -> Result<TriageSample, TriageError> {
    Ok(TriageSample {
        case_id: case_id.into(),
        label,
        features: frame_difference_features(clip, downsample)?,
    })
}

/// Frame-level classifier producing 2-vectors of logits
/// `[non_stroke, stroke]`.
pub trait FrameModel: Send + Sync {
    fn dim(&self) -> usize;
    fn frame_logits(&self, x: &[f32]) -> [f64; 2];
    /// Flattened parameters, for determinism checks and persistence.
    fn parameters(&self) -> Vec<f64>;
}

pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;
    /// Every frame inherits its case label.
    fn train(&self, train: &[&TriageSample], seed: u64) -> Result<Box<dyn FrameModel>, TriageError>;
}

pub fn train_classifier(
    train: &[&TriageSample],
    backend: &dyn ClassifierBackend,
    seed: u64,
) -> Result<Box<dyn FrameModel>, TriageError> {
    if train.is_empty() {
        return Err(TriageError::InvalidArgument("empty training set".into()));
    }
    let classes: BTreeSet<Label> = train.iter().map(|s| s.label).collect();
    if classes.len() < 2 {
        return Err(TriageError::SingleClassTrainingSet);
    }
    let dim = train[0].dim();
    if let Some(bad) = train.iter().flat_map(|s| &s.features).find(|v| v.len() != dim) {
        return Err(TriageError::DimensionMismatch { want: dim, got: bad.len() });
    }
    backend.train(train, seed)
}

/// Softmax over two logits with an L2-regularised, standardised linear map,
/// trained by seeded mini-batch SGD on frame-level cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBackend {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for LinearBackend {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.05,
            l2: 1e-3,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    weights: [Vec<f64>; 2],
    bias: [f64; 2],
}

impl FrameModel for LinearModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn frame_logits(&self, x: &[f32]) -> [f64; 2] {
        let mut z = self.bias;
        for (k, &v) in x.iter().enumerate() {
            let s = (v as f64 - self.mean[k]) * self.inv_std[k];
            z[0] += self.weights[0][k] * s;
            z[1] += self.weights[1][k] * s;
        }
        z
    }

    fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(4 * self.mean.len() + 2);
        p.extend(&self.mean);
        p.extend(&self.inv_std);
        p.extend(&self.weights[0]);
        p.extend(&self.weights[1]);
        p.extend(self.bias);
        p
    }
}

impl ClassifierBackend for LinearBackend {
    fn name(&self) -> &str {
        "linear-bce"
    }

    fn train(&self, train: &[&TriageSample], seed: u64) -> Result<Box<dyn FrameModel>, TriageError> {
        let frames: Vec<(&[f32], usize)> = train
            .iter()
            .flat_map(|s| s.features.iter().map(move |v| (v.as_slice(), usize::from(s.label.is_positive()))))
            .collect();
        let dim = frames[0].0.len();
        let n = frames.len() as f64;
        let mut mean = vec![0.0; dim];
        for (x, _) in &frames {
            for (m, &v) in mean.iter_mut().zip(*x) {
                *m += v as f64 / n;
            }
        }
        let mut var = vec![0.0; dim];
        for (x, _) in &frames {
            for k in 0..dim {
                var[k] += (x[k] as f64 - mean[k]).powi(2) / n;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 }).collect();
        let xs: Vec<Vec<f64>> = frames
            .iter()
            .map(|(x, _)| x.iter().enumerate().map(|(k, &v)| (v as f64 - mean[k]) * inv_std[k]).collect())
            .collect();
        let ys: Vec<usize> = frames.iter().map(|(_, y)| *y).collect();

        let mut w = [vec![0.0; dim], vec![0.0; dim]];
        let mut b = [0.0; 2];
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bs = self.batch_size.max(1);
        // Weight steps shrink with sqrt(dim) so wide standardised inputs
        // don't blow up the logits in the first epoch.
        let lr = self.learning_rate / (dim as f64).sqrt();
        let mut gw = [vec![0.0; dim], vec![0.0; dim]];
        for _ in 0..self.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(bs) {
                gw[0].iter_mut().for_each(|g| *g = 0.0);
                gw[1].iter_mut().for_each(|g| *g = 0.0);
                let mut gb = [0.0; 2];
                for &i in batch {
                    let x = &xs[i];
                    let z0 = b[0] + dot(&w[0], x);
                    let z1 = b[1] + dot(&w[1], x);
                    let p = softmax([z0, z1]);
                    for c in 0..2 {
                        let g = p[c] - f64::from(u8::from(ys[i] == c));
                        gb[c] += g;
                        for (gk, xk) in gw[c].iter_mut().zip(x) {
                            *gk += g * xk;
                        }
                    }
                }
                let m = batch.len() as f64;
                for c in 0..2 {
                    for k in 0..dim {
                        w[c][k] -= lr * (gw[c][k] / m + self.l2 * w[c][k]);
                    }
                    b[c] -= self.learning_rate * gb[c] / m;
                }
            }
        }
        Ok(Box::new(LinearModel {
            mean,
            inv_std,
            weights: w,
            bias: b,
        }))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub case_id: String,
    pub logits: [f64; 2],
    pub frame_logit_count: usize,
}

impl CasePrediction {
    /// Softmax probability of the stroke class.
    pub fn stroke_score(&self) -> f64 {
        softmax(self.logits)[1]
    }
}

pub fn average_logits(frame_logits: &[[f64; 2]]) -> [f64; 2] {
    let n = frame_logits.len() as f64;
    let s = frame_logits.iter().fold([0.0, 0.0], |a, l| [a[0] + l[0], a[1] + l[1]]);
    [s[0] / n, s[1] / n]
}

/// Case logits are the mean of the frame logits.
pub fn predict_case(model: &dyn FrameModel, sample: &TriageSample) -> Result<CasePrediction, TriageError> {
    if sample.features.is_empty() {
        return Err(TriageError::TooFewFrames(1));
    }
    let mut frame_logits = Vec::with_capacity(sample.features.len());
    for v in &sample.features {
        if v.len() != model.dim() {
            return Err(TriageError::DimensionMismatch {
                want: model.dim(),
                got: v.len(),
            });
        }
        frame_logits.push(model.frame_logits(v));
    }
    Ok(CasePrediction {
        case_id: sample.case_id.clone(),
        logits: average_logits(&frame_logits),
        frame_logit_count: frame_logits.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn fold_of(&self, case_id: &str) -> Option<usize> {
        self.folds.iter().position(|f| f.iter().any(|c| c == case_id))
    }
}

/// Stratified split: each class is shuffled and dealt round-robin, with the
/// dealing position carried over between classes so fold sizes stay even.
pub fn make_fold_plan(cases: &[(String, Label)], seed: u64) -> Result<FoldPlan, TriageError> {
    let classes: BTreeSet<Label> = cases.iter().map(|c| c.1).collect();
    if cases.len() < N_FOLDS || classes.len() < 2 {
        return Err(TriageError::TooFewCases(cases.len()));
    }
    let unique: BTreeSet<&str> = cases.iter().map(|c| c.0.as_str()).collect();
    if unique.len() != cases.len() {
        return Err(TriageError::InvalidArgument("duplicate case ids".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); N_FOLDS];
    let mut slot = 0;
    for class in classes {
        let mut ids: Vec<String> = cases.iter().filter(|c| c.1 == class).map(|c| c.0.clone()).collect();
        ids.sort();
        ids.shuffle(&mut rng);
        for id in ids {
            folds[slot % N_FOLDS].push(id);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(FoldPlan {
        seed,
        folds,
        stratified: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    RealReal,
    SynReal,
    RealSyn,
    SynSyn,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::RealReal, Scheme::SynReal, Scheme::RealSyn, Scheme::SynSyn];

    /// `(train_on_synthetic, test_on_synthetic)`.
    pub fn sources(self) -> (bool, bool) {
        match self {
            Scheme::RealReal => (false, false),
            Scheme::SynReal => (true, false),
            Scheme::RealSyn => (false, true),
            Scheme::SynSyn => (true, true),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::RealReal => "real_real",
            Scheme::SynReal => "syn_real",
            Scheme::RealSyn => "real_syn",
            Scheme::SynSyn => "syn_syn",
        }
    }
}

/// Samples keyed by case id.
pub type Dataset = BTreeMap<String, TriageSample>;

pub fn dataset(samples: Vec<TriageSample>) -> Result<Dataset, TriageError> {
    let mut out = Dataset::new();
    for s in samples {
        let id = s.case_id.clone();
        if out.insert(id.clone(), s).is_some() {
            return Err(TriageError::InvalidArgument(format!("duplicate case id {id}")));
        }
    }
    Ok(out)
}

fn check_pairing(real: &Dataset, syn: &Dataset) -> Result<(), TriageError> {
    if !real.keys().eq(syn.keys()) {
        return Err(TriageError::DatasetMismatch("case-id sets differ".into()));
    }
    if let Some((id, _)) = real.iter().find(|(id, s)| syn[*id].label != s.label) {
        return Err(TriageError::DatasetMismatch(format!("label of {id} differs")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRun {
    pub scheme: Scheme,
    /// Predictions per fold, in fold order.
    pub folds: Vec<Vec<CasePrediction>>,
}

impl SchemeRun {
    /// All predictions ordered by case id.
    pub fn pooled(&self) -> Vec<CasePrediction> {
        let mut all: Vec<CasePrediction> = self.folds.iter().flatten().cloned().collect();
        all.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        all
    }
}

/// Train on the scheme's train source outside each fold and predict the
/// test source inside it. Fold `f` trains with seed `seed + f` in every
/// scheme.
pub fn run_scheme(
    real: &Dataset,
    syn: &Dataset,
    scheme: Scheme,
    plan: &FoldPlan,
    backend: &dyn ClassifierBackend,
    seed: u64,
    exec: Exec,
) -> Result<SchemeRun, TriageError> {
    check_pairing(real, syn)?;
    let planned: BTreeSet<&str> = plan.folds.iter().flatten().map(String::as_str).collect();
    let ids: BTreeSet<&str> = real.keys().map(String::as_str).collect();
    if planned != ids || plan.folds.iter().map(Vec::len).sum::<usize>() != ids.len() {
        return Err(TriageError::DatasetMismatch("fold plan does not partition the dataset".into()));
    }
    let (train_syn, test_syn) = scheme.sources();
    let train_src = if train_syn { syn } else { real };
    let test_src = if test_syn { syn } else { real };
    let folds = exec.try_map_range(plan.folds.len(), |f| {
        let held: BTreeSet<&str> = plan.folds[f].iter().map(String::as_str).collect();
        let train: Vec<&TriageSample> = train_src
            .iter()
            .filter(|(id, _)| !held.contains(id.as_str()))
            .map(|(_, s)| s)
            .collect();
        let model = train_classifier(&train, backend, seed.wrapping_add(f as u64))?;
        plan.folds[f]
            .iter()
            .map(|id| predict_case(model.as_ref(), &test_src[id]))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(SchemeRun { scheme, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, positive_label: bool, predicted_positive: bool) {
        match (positive_label, predicted_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageMetrics {
    pub scheme: Option<Scheme>,
    pub accuracy: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub f1: f64,
    /// Absent when the test set has a single class.
    pub auc: Option<f64>,
    pub mse_vs_baseline: Option<f64>,
    pub operating_threshold: f64,
    pub confusion: Confusion,
}

impl TriageMetrics {
    /// Ratios are 0 when their denominator is empty.
    pub fn from_confusion(c: Confusion, auc: Option<f64>, threshold: f64) -> Self {
        Self {
            scheme: None,
            accuracy: ratio(c.tp + c.tn, c.total()),
            specificity: ratio(c.tn, c.tn + c.fp),
            sensitivity: ratio(c.tp, c.tp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            auc,
            mse_vs_baseline: None,
            operating_threshold: threshold,
            confusion: c,
        }
    }
}

/// Pair-counting AUC (ties count one half). `None` without both classes.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| !p).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Metrics over raw stroke scores; a case is called positive when
/// `score >= threshold`.
pub fn metrics_from_scores(scores: &[f64], positive: &[bool], threshold: f64) -> Result<TriageMetrics, TriageError> {
    if scores.len() != positive.len() || scores.is_empty() {
        return Err(TriageError::InvalidArgument("scores and labels must be aligned and non-empty".into()));
    }
    let mut c = Confusion::default();
    for (&s, &p) in scores.iter().zip(positive) {
        c.add(p, s >= threshold);
    }
    Ok(TriageMetrics::from_confusion(c, auc(scores, positive), threshold))
}

/// Metrics for case predictions; `labels` must cover every predicted case.
pub fn compute_metrics(
    preds: &[CasePrediction],
    labels: &BTreeMap<String, Label>,
    operating_threshold: f64,
) -> Result<TriageMetrics, TriageError> {
    let (scores, positive) = scored(preds, labels)?;
    metrics_from_scores(&scores, &positive, operating_threshold)
}

fn scored(preds: &[CasePrediction], labels: &BTreeMap<String, Label>) -> Result<(Vec<f64>, Vec<bool>), TriageError> {
    preds
        .iter()
        .map(|p| {
            labels
                .get(&p.case_id)
                .map(|l| (p.stroke_score(), l.is_positive()))
                .ok_or_else(|| TriageError::CaseMismatch(format!("no label for {}", p.case_id)))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(|v| v.into_iter().unzip())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// Set when no threshold reaches the target; the threshold is then 0.
    pub unreachable: bool,
}

/// Largest threshold `t` with sensitivity(`score >= t`) at least `target`.
pub fn sensitivity_matched_threshold(scores: &[f64], positive: &[bool], target: f64) -> Result<ThresholdChoice, TriageError> {
    let mut pos: Vec<f64> = scores.iter().zip(positive).filter(|(_, &p)| p).map(|(s, _)| *s).collect();
    if pos.is_empty() {
        return Err(TriageError::InvalidArgument("no positive cases".into()));
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    let need = (target * pos.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    if need == 0 {
        return Ok(ThresholdChoice {
            threshold: 1.0_f64.max(pos[0]),
            unreachable: false,
        });
    }
    if need > pos.len() {
        return Ok(ThresholdChoice {
            threshold: 0.0,
            unreachable: true,
        });
    }
    Ok(ThresholdChoice {
        threshold: pos[need - 1],
        unreachable: false,
    })
}

/// Mean over cases of the per-element squared logit difference.
pub fn logit_mse(baseline: &[CasePrediction], other: &[CasePrediction]) -> Result<f64, TriageError> {
    let a: BTreeMap<&str, [f64; 2]> = baseline.iter().map(|p| (p.case_id.as_str(), p.logits)).collect();
    let b: BTreeMap<&str, [f64; 2]> = other.iter().map(|p| (p.case_id.as_str(), p.logits)).collect();
    if a.len() != baseline.len() || b.len() != other.len() || !a.keys().eq(b.keys()) {
        return Err(TriageError::CaseMismatch("baseline and comparison cover different cases".into()));
    }
    if a.is_empty() {
        return Err(TriageError::CaseMismatch("no cases".into()));
    }
    let total: f64 = a
        .iter()
        .map(|(id, x)| {
            let y = b[id];
            ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)) / 2.0
        })
        .sum();
    Ok(total / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum OperatingPoint {
    Fixed { threshold: f64 },
    /// Match `target` sensitivity on the pooled predictions, or separately
    /// inside each fold.
    MatchSensitivity { target: f64, per_fold: bool },
}

impl Default for OperatingPoint {
    fn default() -> Self {
        OperatingPoint::MatchSensitivity {
            target: HUMAN_TRIAGE_SENSITIVITY,
            per_fold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub metrics: TriageMetrics,
    pub fold_thresholds: Vec<f64>,
    pub threshold_unreachable: bool,
    pub predictions: Vec<CasePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub backend: String,
    pub seed: u64,
    pub operating_point: OperatingPoint,
    pub plan: FoldPlan,
    pub schemes: BTreeMap<Scheme, SchemeResult>,
}

fn score_run(run: &SchemeRun, labels: &BTreeMap<String, Label>, op: OperatingPoint) -> Result<SchemeResult, TriageError> {
    let pooled = run.pooled();
    let (scores, positive) = scored(&pooled, labels)?;
    let (metrics, fold_thresholds, unreachable) = match op {
        OperatingPoint::Fixed { threshold } => (metrics_from_scores(&scores, &positive, threshold)?, vec![], false),
        OperatingPoint::MatchSensitivity { target, per_fold: false } => {
            let t = sensitivity_matched_threshold(&scores, &positive, target)?;
            (metrics_from_scores(&scores, &positive, t.threshold)?, vec![], t.unreachable)
        }
        OperatingPoint::MatchSensitivity { target, per_fold: true } => {
            let mut c = Confusion::default();
            let mut ts = Vec::new();
            let mut unreachable = false;
            for fold in &run.folds {
                let (s, p) = scored(fold, labels)?;
                let t = sensitivity_matched_threshold(&s, &p, target)?;
                unreachable |= t.unreachable;
                for (si, pi) in s.iter().zip(&p) {
                    c.add(*pi, *si >= t.threshold);
                }
                ts.push(t.threshold);
            }
            let mean_t = ts.iter().sum::<f64>() / ts.len() as f64;
            (TriageMetrics::from_confusion(c, auc(&scores, &positive), mean_t), ts, unreachable)
        }
    };
    Ok(SchemeResult {
        metrics: TriageMetrics {
            scheme: Some(run.scheme),
            ..metrics
        },
        fold_thresholds,
        threshold_unreachable: unreachable,
        predictions: pooled,
    })
}

/// All four schemes on one shared fold plan, with logit MSE against the
/// real-real predictions.
pub fn evaluate_schemes(
    real: &Dataset,
    syn: &Dataset,
    backend: &dyn ClassifierBackend,
    seed: u64,
    operating_point: OperatingPoint,
    exec: Exec,
) -> Result<TriageReport, TriageError> {
    check_pairing(real, syn)?;
    let cases: Vec<(String, Label)> = real.iter().map(|(id, s)| (id.clone(), s.label)).collect();
    let plan = make_fold_plan(&cases, seed)?;
    let labels: BTreeMap<String, Label> = cases.into_iter().collect();
    let runs = exec.try_map(&Scheme::ALL, |&s| run_scheme(real, syn, s, &plan, backend, seed, exec))?;
    let baseline = runs[0].pooled();
    let mut schemes = BTreeMap::new();
    for run in &runs {
        let mut r = score_run(run, &labels, operating_point)?;
        r.metrics.mse_vs_baseline = Some(logit_mse(&baseline, &r.predictions)?);
        schemes.insert(run.scheme, r);
    }
    Ok(TriageReport {
        backend: backend.name().to_string(),
        seed,
        operating_point,
        plan,
        schemes,
    })
}

impl TriageReport {
    pub fn write_json(&self, path: &Path) -> Result<(), TriageError> {
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("report serializes"))?;
        Ok(())
    }

    /// One row per scheme: `scheme,Acc,Spec,Sens,F1,AUC,MSE`.
    pub fn write_csv(&self, path: &Path) -> Result<(), TriageError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scheme", "Acc", "Spec", "Sens", "F1", "AUC", "MSE"])?;
        for (s, r) in &self.schemes {
            let m = &r.metrics;
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
            w.write_record([
                s.as_str().to_string(),
                format!("{:.4}", m.accuracy),
                format!("{:.4}", m.specificity),
                format!("{:.4}", m.sensitivity),
                format!("{:.4}", m.f1),
                opt(m.auc),
                opt(m.mse_vs_baseline),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::ClipRole;
    use image::{Rgb, RgbImage};

    fn flat_clip(levels: &[u8]) -> VideoClip {
        let frames = levels.iter().map(|&l| RgbImage::from_pixel(8, 8, Rgb([l, l, l]))).collect();
        VideoClip::new("c", ClipRole::Driving, frames, 30.0).unwrap()
    }

    #[test]
    fn difference_features() {
        let f = frame_difference_features(&flat_clip(&[10, 30]), (4, 4)).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].len(), 16);
        assert!(f[0].iter().all(|v| (v - 20.0).abs() < 1e-4));
        let z = frame_difference_features(&flat_clip(&[7, 7]), (4, 4)).unwrap();
        assert!(z[0].iter().all(|&v| v == 0.0));
        assert_eq!(frame_difference_features(&flat_clip(&[1, 2, 3, 4, 5]), (4, 4)).unwrap().len(), 4);
        assert!(matches!(
            frame_difference_features(&flat_clip(&[1]), (4, 4)),
            Err(TriageError::TooFewFrames(1))
        ));
    }

    struct Fixed(Vec<[f64; 2]>);
    impl FrameModel for Fixed {
        fn dim(&self) -> usize {
            1
        }
        fn frame_logits(&self, x: &[f32]) -> [f64; 2] {
            self.0[x[0] as usize]
        }
        fn parameters(&self) -> Vec<f64> {
            vec![]
        }
    }

    #[test]
    fn case_logits_average_frames() {
        let m = Fixed(vec![[2.0, 0.0], [0.0, 2.0]]);
        let s = |idx: &[f32]| TriageSample {
            case_id: "c".into(),
            label: Label::Stroke,
            features: idx.iter().map(|&i| vec![i]).collect(),
        };
        let p = predict_case(&m, &s(&[0.0, 1.0])).unwrap();
        assert_eq!(p.logits, [1.0, 1.0]);
        assert_eq!(p.frame_logit_count, 2);
        assert_eq!(predict_case(&m, &s(&[1.0, 0.0])).unwrap().logits, [1.0, 1.0]);
        assert_eq!(predict_case(&m, &s(&[1.0])).unwrap().logits, [0.0, 2.0]);
        let wide = TriageSample {
            features: vec![vec![0.0, 0.0]],
            ..s(&[0.0])
        };
        assert!(matches!(predict_case(&m, &wide), Err(TriageError::DimensionMismatch { .. })));
    }

    #[test]
    fn metric_examples() {
        let m = metrics_from_scores(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false], 0.5).unwrap();
        assert_eq!((m.accuracy, m.sensitivity, m.specificity, m.f1, m.auc), (1.0, 1.0, 1.0, 1.0, Some(1.0)));
        assert_eq!(auc(&[0.8, 0.5, 0.5, 0.2], &[true, true, false, false]), Some(0.875));
        let m = metrics_from_scores(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false], 0.0).unwrap();
        assert_eq!((m.sensitivity, m.specificity), (1.0, 0.0));
        assert_eq!(metrics_from_scores(&[0.2, 0.4], &[true, true], 0.5).unwrap().auc, None);
    }

    #[test]
    fn threshold_matching() {
        let s = [0.9, 0.7, 0.4];
        let p = [true; 3];
        let t = sensitivity_matched_threshold(&s, &p, 0.66).unwrap().threshold;
        assert!(t > 0.4 && t <= 0.7);
        assert!(sensitivity_matched_threshold(&s, &p, 1.0).unwrap().threshold <= 0.4);
        assert_eq!(sensitivity_matched_threshold(&s, &p, 0.0).unwrap().threshold, 1.0);
        assert!(sensitivity_matched_threshold(&s, &p, 1.5).unwrap().unreachable);
    }

    #[test]
    fn mse_examples() {
        let p = |l: [f64; 2]| CasePrediction {
            case_id: "a".into(),
            logits: l,
            frame_logit_count: 1,
        };
        assert_eq!(logit_mse(&[p([1.0, 0.0])], &[p([0.0, 1.0])]).unwrap(), 1.0);
        assert_eq!(logit_mse(&[p([1.0, 0.0])], &[p([1.0, 0.0])]).unwrap(), 0.0);
        let mut q = p([0.0, 0.0]);
        q.case_id = "b".into();
        assert!(matches!(logit_mse(&[p([1.0, 0.0])], &[q]), Err(TriageError::CaseMismatch(_))));
    }

    #[test]
    fn stratified_folds() {
        let cases: Vec<(String, Label)> = (0..10)
            .map(|i| (format!("c{i}"), if i < 5 { Label::Stroke } else { Label::NonStroke }))
            .collect();
        for seed in 0..20 {
            let plan = make_fold_plan(&cases, seed).unwrap();
            assert_eq!(plan, make_fold_plan(&cases, seed).unwrap());
            for f in &plan.folds {
                assert_eq!(f.len(), 2);
                let strokes = f.iter().filter(|id| cases.iter().any(|c| &c.0 == *id && c.1 == Label::Stroke)).count();
                assert_eq!(strokes, 1);
            }
        }
        assert!(matches!(make_fold_plan(&cases[..4], 0), Err(TriageError::TooFewCases(4))));
        assert!(matches!(make_fold_plan(&cases[..5], 0), Err(TriageError::TooFewCases(5))));
    }

    #[test]
    fn single_class_training_rejected() {
        let s = TriageSample {
            case_id: "a".into(),
            label: Label::Stroke,
            features: vec![vec![1.0]],
        };
        assert!(matches!(
            train_classifier(&[&s, &s], &LinearBackend::default(), 0),
            Err(TriageError::SingleClassTrainingSet)
        ));
    }
}
