//! Run configuration: one TOML file, overridden by command-line flags.
//! Environment variables are deliberately not consulted.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use deid_core::features::{CannyParams, ConditionParams};
use deid_core::pipeline::DeidParams;
use deid_core::privacy::{DEFAULT_PAIRS_PER_MODE, DEFAULT_VERIFICATION_THRESHOLD};
use deid_core::triage::{LinearBackend, OperatingPoint, DEFAULT_DOWNSAMPLE, HUMAN_TRIAGE_SENSITIVITY};

/// Registered backend names, per slot. Only the self-contained reference
/// stack ships with this build; other names are rejected at validation.
pub const LANDMARK_BACKENDS: &[&str] = &["palette"];
pub const GENERATOR_BACKENDS: &[&str] = &["template-warp"];
pub const QUALITY_BACKENDS: &[&str] = &["sharpness-face"];
pub const ENHANCER_BACKENDS: &[&str] = &["bicubic-unsharp"];
pub const MOTION_BACKENDS: &[&str] = &["reference-warp"];
pub const EMBEDDING_BACKENDS: &[&str] = &["handcrafted-v1"];
pub const CLASSIFIER_BACKENDS: &[&str] = &["linear-bce"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Cases processed concurrently; 0 picks the thread count.
    pub workers: usize,
    pub backends: BackendSelection,
    pub deidentify: DeidSection,
    pub privacy: PrivacySection,
    pub triage: TriageSection,
    pub review: ReviewSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSelection {
    pub landmark: String,
    pub generator: String,
    pub quality: String,
    pub enhancer: String,
    pub motion: String,
    pub embedding: String,
    pub classifier: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeidSection {
    pub margin_ratio: f64,
    pub heatmap_sigma: f64,
    pub box_pad: f64,
    pub canny_sigma: f32,
    pub canny_low: f32,
    pub canny_high: f32,
    pub candidates: usize,
    pub quality_threshold: f64,
    pub roll_tolerance_deg: f64,
    pub max_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub n_pairs: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageSection {
    /// `[height, width]` of the frame-difference grid.
    pub downsample: [u32; 2],
    /// Sensitivity to match; ignored when `fixed_threshold` is set.
    pub target_sensitivity: f64,
    pub per_fold_threshold: bool,
    pub fixed_threshold: Option<f64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub bind: String,
    pub port: u16,
    pub roster: Option<PathBuf>,
    pub raters: Vec<String>,
    pub clinicians: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            out_dir: None,
            seed: 0,
            workers: 0,
            backends: BackendSelection::default(),
            deidentify: DeidSection::default(),
            privacy: PrivacySection::default(),
            triage: TriageSection::default(),
            review: ReviewSection::default(),
        }
    }
}

impl Default for BackendSelection {
    fn default() -> Self {
        Self {
            landmark: LANDMARK_BACKENDS[0].into(),
            generator: GENERATOR_BACKENDS[0].into(),
            quality: QUALITY_BACKENDS[0].into(),
            enhancer: ENHANCER_BACKENDS[0].into(),
            motion: MOTION_BACKENDS[0].into(),
            embedding: EMBEDDING_BACKENDS[0].into(),
            classifier: CLASSIFIER_BACKENDS[0].into(),
        }
    }
}

impl Default for DeidSection {
    fn default() -> Self {
        let p = DeidParams::default();
        Self {
            margin_ratio: p.margin_ratio,
            heatmap_sigma: p.conditions.heatmap_sigma,
            box_pad: p.conditions.box_pad,
            canny_sigma: p.conditions.canny.sigma,
            canny_low: p.conditions.canny.low,
            canny_high: p.conditions.canny.high,
            candidates: p.candidates,
            quality_threshold: p.quality_threshold,
            roll_tolerance_deg: p.roll_tolerance_deg,
            max_attempts: p.max_attempts,
        }
    }
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self {
            n_pairs: DEFAULT_PAIRS_PER_MODE,
            threshold: DEFAULT_VERIFICATION_THRESHOLD,
        }
    }
}

impl Default for TriageSection {
    fn default() -> Self {
        let l = LinearBackend::default();
        Self {
            downsample: [DEFAULT_DOWNSAMPLE.0, DEFAULT_DOWNSAMPLE.1],
            target_sensitivity: HUMAN_TRIAGE_SENSITIVITY,
            per_fold_threshold: false,
            fixed_threshold: None,
            epochs: l.epochs,
            learning_rate: l.learning_rate,
            l2: l.l2,
            batch_size: l.batch_size,
        }
    }
}

impl Default for ReviewSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            roster: None,
            raters: Vec::new(),
            clinicians: Vec::new(),
        }
    }
}

fn check_backend(slot: &str, name: &str, registered: &[&str]) -> Result<()> {
    if !registered.contains(&name) {
        bail!("unknown {slot} backend {name:?}; registered: {}", registered.join(", "));
    }
    Ok(())
}

fn check_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(v.is_finite() && v >= lo && v <= hi) {
        bail!("{name} = {v} is outside [{lo}, {hi}]");
    }
    Ok(())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.backends;
        check_backend("landmark", &b.landmark, LANDMARK_BACKENDS)?;
        check_backend("generator", &b.generator, GENERATOR_BACKENDS)?;
        check_backend("quality", &b.quality, QUALITY_BACKENDS)?;
        check_backend("enhancer", &b.enhancer, ENHANCER_BACKENDS)?;
        check_backend("motion", &b.motion, MOTION_BACKENDS)?;
        check_backend("embedding", &b.embedding, EMBEDDING_BACKENDS)?;
        check_backend("classifier", &b.classifier, CLASSIFIER_BACKENDS)?;

        let d = &self.deidentify;
        check_range("deidentify.margin_ratio", d.margin_ratio, 0.0, 4.0)?;
        check_range("deidentify.heatmap_sigma", d.heatmap_sigma, 0.1, 64.0)?;
        check_range("deidentify.box_pad", d.box_pad, 0.0, 1.0)?;
        check_range("deidentify.canny_sigma", d.canny_sigma as f64, 0.0, 16.0)?;
        check_range("deidentify.canny_low", d.canny_low as f64, 0.0, f64::MAX)?;
        check_range("deidentify.canny_high", d.canny_high as f64, d.canny_low as f64, f64::MAX)?;
        check_range("deidentify.quality_threshold", d.quality_threshold, 0.0, 1.0)?;
        check_range("deidentify.roll_tolerance_deg", d.roll_tolerance_deg, 0.0, 90.0)?;
        if d.candidates == 0 {
            bail!("deidentify.candidates must be at least 1");
        }
        if d.max_attempts == 0 {
            bail!("deidentify.max_attempts must be at least 1");
        }

        if self.privacy.n_pairs == 0 {
            bail!("privacy.n_pairs must be at least 1");
        }
        check_range("privacy.threshold", self.privacy.threshold, -1.0, 1.0)?;

        let t = &self.triage;
        if t.downsample[0] == 0 || t.downsample[1] == 0 {
            bail!("triage.downsample must be positive");
        }
        check_range("triage.target_sensitivity", t.target_sensitivity, 0.0, 1.0)?;
        if let Some(th) = t.fixed_threshold {
            check_range("triage.fixed_threshold", th, 0.0, 1.0)?;
        }
        if t.epochs == 0 || t.batch_size == 0 {
            bail!("triage.epochs and triage.batch_size must be at least 1");
        }
        check_range("triage.learning_rate", t.learning_rate, f64::MIN_POSITIVE, 10.0)?;
        check_range("triage.l2", t.l2, 0.0, 10.0)?;
        Ok(())
    }

    pub fn deid_params(&self, seed: u64) -> DeidParams {
        let d = &self.deidentify;
        DeidParams {
            margin_ratio: d.margin_ratio,
            conditions: ConditionParams {
                heatmap_sigma: d.heatmap_sigma,
                box_pad: d.box_pad,
                canny: CannyParams {
                    sigma: d.canny_sigma,
                    low: d.canny_low,
                    high: d.canny_high,
                },
                ..ConditionParams::default()
            },
            candidates: d.candidates,
            quality_threshold: d.quality_threshold,
            roll_tolerance_deg: d.roll_tolerance_deg,
            max_attempts: d.max_attempts,
            seed,
        }
    }

    pub fn classifier(&self) -> LinearBackend {
        let t = &self.triage;
        LinearBackend {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            l2: t.l2,
            batch_size: t.batch_size,
        }
    }

    pub fn operating_point(&self) -> OperatingPoint {
        match self.triage.fixed_threshold {
            Some(threshold) => OperatingPoint::Fixed { threshold },
            None => OperatingPoint::MatchSensitivity {
                target: self.triage.target_sensitivity,
                per_fold: self.triage.per_fold_threshold,
            },
        }
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .context("no output directory: pass --out or set out_dir in the config")
    }
}
