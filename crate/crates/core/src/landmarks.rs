//! Facial landmark sets, the landmark schema, and the landmark backend
//! adapter.
//!
//! "Left" and "right" follow image coordinates: the left eye is the one with
//! the smaller x in an upright frame.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandmarkError {
    #[error("no face detected")]
    NoFaceDetected,
    #[error("{0} faces detected; caller must select one")]
    MultipleFaces(usize),
    #[error("missing landmarks for {0}")]
    MissingLandmarks(String),
    #[error("landmark {index} at ({x:.2}, {y:.2}) lies outside the {width}x{height} frame")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("landmark schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid landmark input: {0}")]
    Invalid(String),
    #[error("landmark backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn midpoint(self, o: Point) -> Point {
        Point::new((self.x + o.x) / 2.0, (self.y + o.y) / 2.0)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Named landmark groups a schema must (or may) provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    LeftBrow,
    RightBrow,
    LeftEye,
    RightEye,
    LeftEyeCenter,
    RightEyeCenter,
    Nose,
    LeftMouthCorner,
    RightMouthCorner,
    LipContour,
    Jaw,
}

impl Region {
    /// Regions every usable schema must cover.
    pub const REQUIRED: [Region; 9] = [
        Region::LeftBrow,
        Region::RightBrow,
        Region::LeftEye,
        Region::RightEye,
        Region::LeftEyeCenter,
        Region::RightEyeCenter,
        Region::Nose,
        Region::LeftMouthCorner,
        Region::RightMouthCorner,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSchema {
    pub name: String,
    pub version: u32,
    pub len: usize,
    pub regions: BTreeMap<Region, Vec<usize>>,
    /// `mirror[i]` is the index that point `i` becomes after a horizontal flip.
    pub mirror: Vec<usize>,
}

/// Index layout of the built-in 33-point schema.
pub mod face33 {
    pub const LEFT_BROW: [usize; 3] = [0, 1, 2]; // outer, mid, inner
    pub const RIGHT_BROW: [usize; 3] = [3, 4, 5]; // inner, mid, outer
    pub const LEFT_EYE: [usize; 5] = [6, 7, 8, 9, 10]; // outer, top, inner, bottom, centre
    pub const RIGHT_EYE: [usize; 5] = [11, 12, 13, 14, 15]; // inner, top, outer, bottom, centre
    pub const LEFT_EYE_CENTER: usize = 10;
    pub const RIGHT_EYE_CENTER: usize = 15;
    pub const NOSE: [usize; 4] = [16, 17, 18, 19]; // bridge, tip, left nostril, right nostril
    pub const MOUTH_LEFT: usize = 20;
    pub const MOUTH_RIGHT: usize = 21;
    pub const LIP_CONTOUR: [usize; 4] = [22, 23, 24, 25]; // upper outer, lower outer, upper inner, lower inner
    pub const JAW: [usize; 7] = [26, 27, 28, 29, 30, 31, 32]; // left temple .. chin .. right temple
    pub const LEN: usize = 33;
}

impl LandmarkSchema {
    pub fn face33() -> Self {
        use face33::*;
        let mut regions = BTreeMap::new();
        regions.insert(Region::LeftBrow, LEFT_BROW.to_vec());
        regions.insert(Region::RightBrow, RIGHT_BROW.to_vec());
        regions.insert(Region::LeftEye, LEFT_EYE.to_vec());
        regions.insert(Region::RightEye, RIGHT_EYE.to_vec());
        regions.insert(Region::LeftEyeCenter, vec![LEFT_EYE_CENTER]);
        regions.insert(Region::RightEyeCenter, vec![RIGHT_EYE_CENTER]);
        regions.insert(Region::Nose, NOSE.to_vec());
        regions.insert(Region::LeftMouthCorner, vec![MOUTH_LEFT]);
        regions.insert(Region::RightMouthCorner, vec![MOUTH_RIGHT]);
        regions.insert(Region::LipContour, LIP_CONTOUR.to_vec());
        regions.insert(Region::Jaw, JAW.to_vec());
        let mirror = vec![
            5, 4, 3, 2, 1, 0, // brows swap, order reverses
            13, 12, 11, 14, 15, // left eye -> right eye (outer<->outer)
            8, 7, 6, 9, 10, // right eye -> left eye
            16, 17, 19, 18, // nostrils swap
            21, 20, 22, 23, 24, 25, // mouth corners swap
            32, 31, 30, 29, 28, 27, 26, // jaw reverses
        ];
        Self {
            name: "face33".into(),
            version: 1,
            len: LEN,
            regions,
            mirror,
        }
    }

    pub fn id(&self) -> String {
        format!("{}/v{}", self.name, self.version)
    }

    pub fn indices(&self, region: Region) -> &[usize] {
        self.regions.get(&region).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<(), LandmarkError> {
        for r in Region::REQUIRED {
            if self.indices(r).is_empty() {
                return Err(LandmarkError::SchemaMismatch(format!(
                    "schema {} lacks required region {r:?}",
                    self.id()
                )));
            }
        }
        if self.regions.values().flatten().any(|&i| i >= self.len) {
            return Err(LandmarkError::SchemaMismatch("region index out of range".into()));
        }
        let mut seen = vec![false; self.len];
        if self.mirror.len() != self.len {
            return Err(LandmarkError::SchemaMismatch("mirror table length".into()));
        }
        for &m in &self.mirror {
            if m >= self.len || std::mem::replace(&mut seen[m], true) {
                return Err(LandmarkError::SchemaMismatch("mirror table is not a permutation".into()));
            }
        }
        Ok(())
    }
}

/// Landmarks for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    points: Vec<Point>,
    confidence: Vec<f64>,
    /// `(width, height)` of the frame the points refer to.
    frame_size: (u32, u32),
    schema: Arc<LandmarkSchema>,
}

impl LandmarkSet {
    pub fn new(
        points: Vec<Point>,
        confidence: Vec<f64>,
        frame_size: (u32, u32),
        schema: Arc<LandmarkSchema>,
    ) -> Result<Self, LandmarkError> {
        if points.len() != schema.len {
            return Err(LandmarkError::SchemaMismatch(format!(
                "{} points for schema {} of length {}",
                points.len(),
                schema.id(),
                schema.len
            )));
        }
        if confidence.len() != points.len() {
            return Err(LandmarkError::Invalid("confidence length".into()));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(LandmarkError::Invalid("confidence outside [0, 1]".into()));
        }
        let (w, h) = frame_size;
        for (index, p) in points.iter().enumerate() {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && p.x >= 0.0
                && p.y >= 0.0
                && p.x < w as f64
                && p.y < h as f64;
            if !inside {
                return Err(LandmarkError::OutOfBounds {
                    index,
                    x: p.x,
                    y: p.y,
                    width: w,
                    height: h,
                });
            }
        }
        Ok(Self {
            points,
            confidence,
            frame_size,
            schema,
        })
    }

    /// Full-confidence set.
    pub fn from_points(
        points: Vec<Point>,
        frame_size: (u32, u32),
        schema: Arc<LandmarkSchema>,
    ) -> Result<Self, LandmarkError> {
        let n = points.len();
        Self::new(points, vec![1.0; n], frame_size, schema)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn frame_size(&self) -> (u32, u32) {
        self.frame_size
    }

    pub fn schema(&self) -> &Arc<LandmarkSchema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn region(&self, region: Region) -> Vec<Point> {
        self.schema
            .indices(region)
            .iter()
            .map(|&i| self.points[i])
            .collect()
    }

    fn single(&self, region: Region) -> Result<Point, LandmarkError> {
        self.schema
            .indices(region)
            .first()
            .map(|&i| self.points[i])
            .ok_or_else(|| LandmarkError::MissingLandmarks(format!("{region:?}")))
    }

    /// `(left, right)` eye centres.
    pub fn eye_centers(&self) -> Result<(Point, Point), LandmarkError> {
        Ok((self.single(Region::LeftEyeCenter)?, self.single(Region::RightEyeCenter)?))
    }

    pub fn inter_ocular(&self) -> Result<f64, LandmarkError> {
        let (l, r) = self.eye_centers()?;
        Ok(l.dist(r))
    }

    /// Axis-aligned bounding box `(x0, y0, x1, y1)` of all points.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
        )
    }

    /// Apply a point map, re-validating against a new frame size.
    pub fn map_points(
        &self,
        frame_size: (u32, u32),
        f: impl Fn(Point) -> Point,
    ) -> Result<Self, LandmarkError> {
        Self::new(
            self.points.iter().map(|&p| f(p)).collect(),
            self.confidence.clone(),
            frame_size,
            self.schema.clone(),
        )
    }

    /// Rescale into a frame of a different resolution (pixel-centre aligned).
    pub fn rescaled(&self, frame_size: (u32, u32)) -> Result<Self, LandmarkError> {
        let sx = frame_size.0 as f64 / self.frame_size.0 as f64;
        let sy = frame_size.1 as f64 / self.frame_size.1 as f64;
        self.map_points(frame_size, |p| {
            Point::new((p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5)
        })
    }

    /// Landmarks of the horizontally mirrored frame.
    pub fn mirrored(&self) -> Result<Self, LandmarkError> {
        let w = self.frame_size.0 as f64;
        let mut points = vec![Point::default(); self.points.len()];
        let mut confidence = vec![0.0; self.points.len()];
        for (i, p) in self.points.iter().enumerate() {
            let j = self.schema.mirror[i];
            points[j] = Point::new(w - 1.0 - p.x, p.y);
            confidence[j] = self.confidence[i];
        }
        Self::new(points, confidence, self.frame_size, self.schema.clone())
    }
}

/// Whether a backend may be called concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    ThreadSafe,
    Serialized,
}

/// Adapter over a landmark detector.
pub trait LandmarkBackend: Send + Sync {
    fn name(&self) -> &str;
    fn version(&self) -> &str {
        "1"
    }
    fn schema(&self) -> Arc<LandmarkSchema>;
    fn concurrency(&self) -> Concurrency {
        Concurrency::ThreadSafe
    }
    fn detect(&self, frame: &RgbImage) -> Result<LandmarkSet, LandmarkError>;
}

pub fn detect_landmarks(
    frame: &RgbImage,
    backend: &dyn LandmarkBackend,
) -> Result<LandmarkSet, LandmarkError> {
    if frame.width() == 0 || frame.height() == 0 {
        return Err(LandmarkError::Invalid("empty frame".into()));
    }
    backend.detect(frame)
}

/// Wraps a detector that is not safe for concurrent use behind a mutex so it
/// can still be shared across worker threads.
pub struct SerialGate<B> {
    inner: Mutex<B>,
    name: String,
    version: String,
    schema: Arc<LandmarkSchema>,
}

/// Minimal single-threaded detector interface for [`SerialGate`].
pub trait SerialDetector: Send {
    fn name(&self) -> String;
    fn schema(&self) -> Arc<LandmarkSchema>;
    fn detect(&mut self, frame: &RgbImage) -> Result<LandmarkSet, LandmarkError>;
}

impl<B: SerialDetector> SerialGate<B> {
    pub fn new(inner: B) -> Self {
        Self {
            name: inner.name(),
            version: "1".into(),
            schema: inner.schema(),
            inner: Mutex::new(inner),
        }
    }
}

impl<B: SerialDetector> LandmarkBackend for SerialGate<B> {
    fn name(&self) -> &str {
        &self.name
    }
    fn version(&self) -> &str {
        &self.version
    }
    fn schema(&self) -> Arc<LandmarkSchema> {
        self.schema.clone()
    }
    fn concurrency(&self) -> Concurrency {
        Concurrency::Serialized
    }
    fn detect(&self, frame: &RgbImage) -> Result<LandmarkSet, LandmarkError> {
        let mut guard = self
            .inner
            .lock()
            .map_err(|_| LandmarkError::Backend("detector mutex poisoned".into()))?;
        guard.detect(frame)
    }
}

pub fn frame_digest(frame: &RgbImage) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(frame.width().to_le_bytes());
    h.update(frame.height().to_le_bytes());
    h.update(frame.as_raw());
    h.finalize().into()
}

/// Replays stored landmark sets keyed by exact frame content. A frame whose
/// horizontal mirror was registered gets the mirrored landmarks.
pub struct FixtureBackend {
    schema: Arc<LandmarkSchema>,
    table: HashMap<[u8; 32], LandmarkSet>,
}

impl FixtureBackend {
    pub fn new(schema: Arc<LandmarkSchema>) -> Self {
        Self {
            schema,
            table: HashMap::new(),
        }
    }

    pub fn register(&mut self, frame: &RgbImage, landmarks: LandmarkSet) {
        self.table.insert(frame_digest(frame), landmarks);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl LandmarkBackend for FixtureBackend {
    fn name(&self) -> &str {
        "fixture"
    }

    fn schema(&self) -> Arc<LandmarkSchema> {
        self.schema.clone()
    }

    fn detect(&self, frame: &RgbImage) -> Result<LandmarkSet, LandmarkError> {
        if let Some(l) = self.table.get(&frame_digest(frame)) {
            return Ok(l.clone());
        }
        let flipped = image::imageops::flip_horizontal(frame);
        if let Some(l) = self.table.get(&frame_digest(&flipped)) {
            return l.mirrored();
        }
        Err(LandmarkError::NoFaceDetected)
    }
}
