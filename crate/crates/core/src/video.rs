//! Video clips, container decoding, the lossless frame archive, and driving
//! clip preprocessing (roll removal, square face crop, 512x512 resize).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{AnimationDecoder, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::imaging::{resize, rotate_ccw, rotate_point_ccw};
use crate::landmarks::{detect_landmarks, LandmarkBackend, LandmarkError, LandmarkSet, Point};

/// Side length of preprocessed driving frames.
pub const DRIVING_SIZE: u32 = 512;
/// Default border added around the face box, as a fraction of its side.
pub const DEFAULT_MARGIN_RATIO: f64 = 0.4;

const ARCHIVE_MAGIC: &[u8; 5] = b"DFA1\n";

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("unsupported codec or container: {0}")]
    UnsupportedCodec(String),
    #[error("video has no frames")]
    EmptyVideo,
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("face box is only {visible_fraction:.2} inside the frame")]
    FaceOutOfFrame { visible_fraction: f64 },
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipRole {
    Driving,
    Synthetic,
    SubjectStill,
}

/// A decoded frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    clip_id: String,
    role: ClipRole,
    frames: Vec<RgbImage>,
    fps: f64,
}

impl VideoClip {
    pub fn new(
        clip_id: impl Into<String>,
        role: ClipRole,
        frames: Vec<RgbImage>,
        fps: f64,
    ) -> Result<Self, VideoError> {
        if frames.is_empty() {
            return Err(VideoError::EmptyVideo);
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(VideoError::InvalidClip(format!("fps must be positive, got {fps}")));
        }
        let dims = frames[0].dimensions();
        if dims.0 == 0 || dims.1 == 0 {
            return Err(VideoError::InvalidClip("zero-sized frames".into()));
        }
        if let Some(i) = frames.iter().position(|f| f.dimensions() != dims) {
            return Err(VideoError::InvalidClip(format!(
                "frame {i} is {:?}, expected {dims:?}",
                frames[i].dimensions()
            )));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            role,
            frames,
            fps,
        })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn role(&self) -> ClipRole {
        self.role
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &RgbImage {
        &self.frames[i]
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// `(width, height)`.
    pub fn resolution(&self) -> (u32, u32) {
        self.frames[0].dimensions()
    }

    pub fn with_id(mut self, clip_id: impl Into<String>) -> Self {
        self.clip_id = clip_id.into();
        self
    }

    pub fn with_role(mut self, role: ClipRole) -> Self {
        self.role = role;
        self
    }

    pub fn into_frames(self) -> Vec<RgbImage> {
        self.frames
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveHeader {
    clip_id: String,
    role: ClipRole,
    fps: f64,
    width: u32,
    height: u32,
    frame_count: usize,
}

/// Write a clip as a lossless frame archive: a magic line, a length-prefixed
/// JSON header, then one length-prefixed PNG per frame.
pub fn write_archive(path: &Path, clip: &VideoClip) -> Result<(), VideoError> {
    let mut out = BufWriter::new(File::create(path)?);
    let (width, height) = clip.resolution();
    let header = serde_json::to_vec(&ArchiveHeader {
        clip_id: clip.clip_id.clone(),
        role: clip.role,
        fps: clip.fps,
        width,
        height,
        frame_count: clip.frame_count(),
    })
    .expect("header serializes");
    out.write_all(ARCHIVE_MAGIC)?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for frame in &clip.frames {
        let mut png = Vec::new();
        image::codecs::png::PngEncoder::new(&mut png)
            .write_image_rgb(frame)
            .map_err(|e| VideoError::InvalidClip(e.to_string()))?;
        out.write_all(&(png.len() as u32).to_le_bytes())?;
        out.write_all(&png)?;
    }
    out.flush()?;
    Ok(())
}

trait PngRgb {
    fn write_image_rgb(self, img: &RgbImage) -> image::ImageResult<()>;
}

impl<W: Write> PngRgb for image::codecs::png::PngEncoder<W> {
    fn write_image_rgb(self, img: &RgbImage) -> image::ImageResult<()> {
        use image::ImageEncoder;
        self.write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
    }
}

fn unreadable(path: &Path, reason: impl Into<String>) -> VideoError {
    VideoError::UnreadableFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_archive(path: &Path) -> Result<VideoClip, VideoError> {
    let mut r = BufReader::new(File::open(path).map_err(|e| unreadable(path, e.to_string()))?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|e| unreadable(path, e.to_string()))?;
    if &magic != ARCHIVE_MAGIC {
        return Err(unreadable(path, "bad archive magic"));
    }
    let read_chunk = |r: &mut BufReader<File>| -> Result<Vec<u8>, VideoError> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|e| unreadable(path, e.to_string()))?;
        let len = u32::from_le_bytes(len) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|e| unreadable(path, format!("truncated: {e}")))?;
        Ok(buf)
    };
    let header: ArchiveHeader = serde_json::from_slice(&read_chunk(&mut r)?)
        .map_err(|e| unreadable(path, format!("bad header: {e}")))?;
    if header.frame_count == 0 {
        return Err(VideoError::EmptyVideo);
    }
    let mut frames = Vec::with_capacity(header.frame_count);
    for i in 0..header.frame_count {
        let bytes = read_chunk(&mut r)?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| unreadable(path, format!("frame {i}: {e}")))?
            .to_rgb8();
        if img.dimensions() != (header.width, header.height) {
            return Err(unreadable(path, format!("frame {i} has wrong dimensions")));
        }
        frames.push(img);
    }
    VideoClip::new(header.clip_id, header.role, frames, header.fps)
}

fn read_gif(path: &Path, clip_id: String) -> Result<VideoClip, VideoError> {
    let file = BufReader::new(File::open(path).map_err(|e| unreadable(path, e.to_string()))?);
    let decoder = image::codecs::gif::GifDecoder::new(file)
        .map_err(|e| unreadable(path, e.to_string()))?;
    let frames = decoder
        .into_frames()
        .collect_frames()
        .map_err(|e| unreadable(path, e.to_string()))?;
    if frames.is_empty() {
        return Err(VideoError::EmptyVideo);
    }
    let (num, den) = frames[0].delay().numer_denom_ms();
    let delay_ms = if num == 0 { 100.0 } else { num as f64 / den as f64 };
    let fps = 1000.0 / delay_ms;
    let images = frames
        .into_iter()
        .map(|f| image::DynamicImage::ImageRgba8(f.into_buffer()).to_rgb8())
        .collect();
    VideoClip::new(clip_id, ClipRole::Driving, images, fps)
}

/// Directory of PNG frames (sorted by file name) with a `clip.json` sidecar
/// carrying at least `fps`.
fn read_frame_dir(path: &Path, clip_id: String) -> Result<VideoClip, VideoError> {
    let meta = path.join("clip.json");
    let fps = std::fs::read(&meta)
        .ok()
        .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
        .and_then(|v| v.get("fps").and_then(|f| f.as_f64()))
        .ok_or_else(|| VideoError::UnsupportedCodec(format!("{} has no clip.json with fps", path.display())))?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| unreadable(path, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(VideoError::EmptyVideo);
    }
    let frames = names
        .iter()
        .map(|p| {
            image::open(p)
                .map(|i| i.to_rgb8())
                .map_err(|e| unreadable(p, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    VideoClip::new(clip_id, ClipRole::Driving, frames, fps)
}

fn ffmpeg_available() -> bool {
    Command::new("ffprobe")
        .arg("-version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Decode a general container through the ffmpeg command-line tools.
fn read_with_ffmpeg(path: &Path, clip_id: String) -> Result<VideoClip, VideoError> {
    let probe = Command::new("ffprobe")
        .args(["-v", "error", "-select_streams", "v:0", "-show_entries"])
        .arg("stream=width,height,avg_frame_rate")
        .args(["-of", "json"])
        .arg(path)
        .output()?;
    if !probe.status.success() {
        return Err(unreadable(path, String::from_utf8_lossy(&probe.stderr).to_string()));
    }
    let v: serde_json::Value = serde_json::from_slice(&probe.stdout)
        .map_err(|e| unreadable(path, e.to_string()))?;
    let stream = v["streams"]
        .get(0)
        .ok_or_else(|| VideoError::UnsupportedCodec("no video stream".into()))?;
    let width = stream["width"].as_u64().unwrap_or(0) as u32;
    let height = stream["height"].as_u64().unwrap_or(0) as u32;
    let fps = stream["avg_frame_rate"]
        .as_str()
        .and_then(|r| {
            let (n, d) = r.split_once('/')?;
            let (n, d): (f64, f64) = (n.parse().ok()?, d.parse().ok()?);
            (d > 0.0).then_some(n / d)
        })
        .unwrap_or(30.0);
    let out = Command::new("ffmpeg")
        .args(["-v", "error", "-i"])
        .arg(path)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .output()?;
    if !out.status.success() {
        return Err(VideoError::UnsupportedCodec(String::from_utf8_lossy(&out.stderr).to_string()));
    }
    let frame_len = (width * height * 3) as usize;
    if frame_len == 0 || out.stdout.is_empty() {
        return Err(VideoError::EmptyVideo);
    }
    let frames = out
        .stdout
        .chunks_exact(frame_len)
        .map(|c| RgbImage::from_raw(width, height, c.to_vec()).expect("chunk sized to frame"))
        .collect();
    VideoClip::new(clip_id, ClipRole::Driving, frames, fps)
}

/// Decode a video into a driving clip. Supported inputs: the native frame
/// archive, animated GIF, PNG frame directories, and (when the ffmpeg tools
/// are on `PATH`) common containers such as MP4, AVI, MKV and MOV.
pub fn decode_video(path: &Path) -> Result<VideoClip, VideoError> {
    let clip_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    if !path.exists() {
        return Err(unreadable(path, "no such file"));
    }
    if path.is_dir() {
        return read_frame_dir(path, clip_id);
    }
    let mut head = [0u8; 12];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| unreadable(path, e.to_string()))?;
    let head = &head[..n];
    if head.starts_with(ARCHIVE_MAGIC) {
        return read_archive(path).map(|c| c.with_role(ClipRole::Driving));
    }
    if head.starts_with(b"GIF8") {
        return read_gif(path, clip_id);
    }
    let known_container = (n >= 8 && &head[4..8] == b"ftyp")
        || head.starts_with(b"RIFF")
        || head.starts_with(&[0x1a, 0x45, 0xdf, 0xa3]);
    if known_container {
        if ffmpeg_available() {
            return read_with_ffmpeg(path, clip_id);
        }
        return Err(VideoError::UnsupportedCodec(format!(
            "{}: container needs the ffmpeg tools, which are not installed",
            path.display()
        )));
    }
    if n == 0 {
        return Err(VideoError::EmptyVideo);
    }
    Err(unreadable(path, "unrecognised or corrupt container"))
}

/// Read a clip archive keeping its stored role.
pub fn read_clip(path: &Path) -> Result<VideoClip, VideoError> {
    read_archive(path)
}

/// Camera roll measured from the inter-eye line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollEstimate {
    /// Signed, counterclockwise-positive as displayed; in `(-90, 90]`.
    pub angle_deg: f64,
    pub source_frame_index: usize,
}

/// Roll of the line from the left to the right eye centre against the image
/// horizontal.
pub fn estimate_camera_roll(landmarks: &LandmarkSet) -> Result<RollEstimate, VideoError> {
    let (l, r) = landmarks.eye_centers()?;
    if l.dist(r) == 0.0 {
        return Err(VideoError::Landmarks(LandmarkError::MissingLandmarks(
            "coincident eye centres".into(),
        )));
    }
    let mut angle = (-(r.y - l.y)).atan2(r.x - l.x).to_degrees();
    if angle > 90.0 {
        angle -= 180.0;
    } else if angle <= -90.0 {
        angle += 180.0;
    }
    Ok(RollEstimate {
        angle_deg: angle,
        source_frame_index: 0,
    })
}

/// Square crop window in source-frame pixels; may extend past the frame, in
/// which case the outside is zero-padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: i64,
    pub y0: i64,
    pub side: u32,
}

impl CropWindow {
    /// Square around a face box grown by `margin_ratio` of its longer side on
    /// every side.
    pub fn around(face_box: (f64, f64, f64, f64), margin_ratio: f64) -> Self {
        let (x0, y0, x1, y1) = face_box;
        let side = ((x1 - x0).max(y1 - y0) * (1.0 + 2.0 * margin_ratio)).round().max(1.0);
        let cx = (x0 + x1) / 2.0;
        let cy = (y0 + y1) / 2.0;
        Self {
            x0: (cx - side / 2.0).round() as i64,
            y0: (cy - side / 2.0).round() as i64,
            side: side as u32,
        }
    }

    pub fn apply(&self, frame: &RgbImage) -> RgbImage {
        let (w, h) = frame.dimensions();
        RgbImage::from_fn(self.side, self.side, |x, y| {
            let sx = self.x0 + x as i64;
            let sy = self.y0 + y as i64;
            if sx >= 0 && sy >= 0 && (sx as u32) < w && (sy as u32) < h {
                *frame.get_pixel(sx as u32, sy as u32)
            } else {
                image::Rgb([0, 0, 0])
            }
        })
    }
}

/// Output of [`preprocess_driving`].
#[derive(Debug, Clone)]
pub struct PreprocessedClip {
    pub clip: VideoClip,
    pub roll: RollEstimate,
    pub crop: CropWindow,
    /// First-frame landmarks carried into output coordinates.
    pub first_frame_landmarks: LandmarkSet,
}

fn visible_fraction(face_box: (f64, f64, f64, f64), w: u32, h: u32) -> f64 {
    let (x0, y0, x1, y1) = face_box;
    let area = (x1 - x0).max(0.0) * (y1 - y0).max(0.0);
    if area == 0.0 {
        return 1.0;
    }
    let ix = (x1.min(w as f64) - x0.max(0.0)).max(0.0);
    let iy = (y1.min(h as f64) - y0.max(0.0)).max(0.0);
    ix * iy / area
}

/// Derotate every frame by the first-frame roll, crop one fixed square around
/// the (derotated) face box, and resize to 512x512.
pub fn preprocess_driving(
    clip: &VideoClip,
    landmarks_first_frame: &LandmarkSet,
    margin_ratio: f64,
) -> Result<PreprocessedClip, VideoError> {
    preprocess_with_crop_landmarks(clip, landmarks_first_frame, None, margin_ratio)
}

fn preprocess_with_crop_landmarks(
    clip: &VideoClip,
    roll_landmarks: &LandmarkSet,
    derotated_landmarks: Option<&LandmarkSet>,
    margin_ratio: f64,
) -> Result<PreprocessedClip, VideoError> {
    if clip.role != ClipRole::Driving {
        return Err(VideoError::InvalidClip("preprocessing expects a driving clip".into()));
    }
    if !(margin_ratio >= 0.0 && margin_ratio.is_finite()) {
        return Err(VideoError::InvalidClip(format!("margin_ratio {margin_ratio} < 0")));
    }
    let (w, h) = clip.resolution();
    if roll_landmarks.frame_size() != (w, h) {
        return Err(VideoError::InvalidClip("landmarks refer to a different frame size".into()));
    }
    let roll = estimate_camera_roll(roll_landmarks)?;
    let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let rot = |p: Point| {
        let (x, y) = rotate_point_ccw((p.x, p.y), center, -roll.angle_deg);
        Point::new(x, y)
    };
    let derotated: Vec<Point> = match derotated_landmarks {
        Some(l) => l.points().to_vec(),
        None => roll_landmarks.points().iter().map(|&p| rot(p)).collect(),
    };
    let face_box = derotated.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(x0, y0, x1, y1), p| (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y)),
    );
    let visible = visible_fraction(face_box, w, h);
    if visible < 0.5 {
        return Err(VideoError::FaceOutOfFrame {
            visible_fraction: visible,
        });
    }
    let crop = CropWindow::around(face_box, margin_ratio);
    let frames = Exec::default().map(&clip.frames, |f| {
        let upright = rotate_ccw(f, -roll.angle_deg);
        resize(&crop.apply(&upright), DRIVING_SIZE, DRIVING_SIZE)
    });
    let out = VideoClip::new(clip.clip_id.clone(), ClipRole::Driving, frames, clip.fps)?;
    let scale = DRIVING_SIZE as f64 / crop.side as f64;
    let max = DRIVING_SIZE as f64 - 1e-6;
    let first = LandmarkSet::new(
        derotated
            .iter()
            .map(|p| {
                Point::new(
                    ((p.x - crop.x0 as f64 + 0.5) * scale - 0.5).clamp(0.0, max),
                    ((p.y - crop.y0 as f64 + 0.5) * scale - 0.5).clamp(0.0, max),
                )
            })
            .collect(),
        roll_landmarks.confidence().to_vec(),
        (DRIVING_SIZE, DRIVING_SIZE),
        roll_landmarks.schema().clone(),
    )?;
    Ok(PreprocessedClip {
        clip: out,
        roll,
        crop,
        first_frame_landmarks: first,
    })
}

/// Detect on the first frame, derotate it, re-detect to place the crop, then
/// preprocess the whole clip.
pub fn ingest_driving(
    clip: &VideoClip,
    backend: &dyn LandmarkBackend,
    margin_ratio: f64,
) -> Result<PreprocessedClip, VideoError> {
    let first = detect_landmarks(clip.frame(0), backend)?;
    let roll = estimate_camera_roll(&first)?;
    let upright = rotate_ccw(clip.frame(0), -roll.angle_deg);
    let redetected = detect_landmarks(&upright, backend)?;
    preprocess_with_crop_landmarks(clip, &first, Some(&redetected), margin_ratio)
}

/// JSON sidecar stored next to a clip archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSidecar {
    pub clip_id: String,
    pub role: ClipRole,
    pub fps: f64,
    #[serde(rename = "N")]
    pub frame_count: usize,
    pub roll_deg: Option<f64>,
    pub crop_window: Option<CropWindow>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub provenance: serde_json::Value,
}

impl ClipSidecar {
    pub fn for_clip(clip: &VideoClip) -> Self {
        Self {
            clip_id: clip.clip_id.clone(),
            role: clip.role,
            fps: clip.fps,
            frame_count: clip.frame_count(),
            roll_deg: None,
            crop_window: None,
            provenance: serde_json::Value::Null,
        }
    }
}

/// Persist `clip` at `path` with its sidecar at `path.with_extension("json")`.
pub fn persist_clip(path: &Path, clip: &VideoClip, sidecar: &ClipSidecar) -> Result<(), VideoError> {
    write_archive(path, clip)?;
    let json = serde_json::to_vec_pretty(sidecar).expect("sidecar serializes");
    std::fs::write(path.with_extension("json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{face33, LandmarkSchema};
    use std::sync::Arc;

    fn schema() -> Arc<LandmarkSchema> {
        Arc::new(LandmarkSchema::face33())
    }

    /// Landmarks filling the box `[x0, x1] x [y0, y1]` with eyes at the given
    /// centres.
    fn boxed_landmarks(
        size: (u32, u32),
        bx: (f64, f64, f64, f64),
        le: Point,
        re: Point,
    ) -> LandmarkSet {
        let mut pts = vec![Point::new((bx.0 + bx.2) / 2.0, (bx.1 + bx.3) / 2.0); face33::LEN];
        pts[face33::LEFT_EYE_CENTER] = le;
        pts[face33::RIGHT_EYE_CENTER] = re;
        pts[face33::JAW[0]] = Point::new(bx.0, bx.1);
        pts[face33::JAW[6]] = Point::new(bx.2, bx.3);
        LandmarkSet::from_points(pts, size, schema()).unwrap()
    }

    fn clip_of(frames: Vec<RgbImage>) -> VideoClip {
        VideoClip::new("c", ClipRole::Driving, frames, 30.0).unwrap()
    }

    #[test]
    fn clip_invariants() {
        assert!(matches!(
            VideoClip::new("x", ClipRole::Driving, vec![], 30.0),
            Err(VideoError::EmptyVideo)
        ));
        let a = RgbImage::new(4, 4);
        let b = RgbImage::new(4, 5);
        assert!(matches!(
            VideoClip::new("x", ClipRole::Driving, vec![a.clone(), b], 30.0),
            Err(VideoError::InvalidClip(_))
        ));
        assert!(VideoClip::new("x", ClipRole::Driving, vec![a], 0.0).is_err());
    }

    #[test]
    fn roll_of_horizontal_and_diagonal_eye_lines() {
        let l = boxed_landmarks((400, 400), (0.0, 0.0, 399.0, 399.0), Point::new(100.0, 200.0), Point::new(300.0, 200.0));
        assert_eq!(estimate_camera_roll(&l).unwrap().angle_deg, 0.0);
        let l = boxed_landmarks((400, 400), (0.0, 0.0, 399.0, 399.0), Point::new(0.0, 0.0), Point::new(10.0, 10.0));
        assert!((estimate_camera_roll(&l).unwrap().angle_deg + 45.0).abs() < 1e-12);
    }

    #[test]
    fn roll_is_folded_into_half_open_range() {
        // Eyes labelled in reverse order: the raw angle is 180 degrees.
        let l = boxed_landmarks((400, 400), (0.0, 0.0, 399.0, 399.0), Point::new(300.0, 200.0), Point::new(100.0, 200.0));
        assert_eq!(estimate_camera_roll(&l).unwrap().angle_deg, 0.0);
        let l = boxed_landmarks((400, 400), (0.0, 0.0, 399.0, 399.0), Point::new(200.0, 300.0), Point::new(200.0, 100.0));
        assert_eq!(estimate_camera_roll(&l).unwrap().angle_deg, 90.0);
    }

    #[test]
    fn crop_side_for_centered_face_box() {
        // Face box of side 200 centred in a 1920x1200 frame, margin 0.5.
        let bx = (860.0, 500.0, 1060.0, 700.0);
        let w = CropWindow::around(bx, 0.5);
        assert_eq!(w.side, 400);
        assert_eq!((w.x0, w.y0), (760, 400));
    }

    #[test]
    fn identity_preprocessing_of_square_512_clip() {
        let frames: Vec<RgbImage> = (0..3)
            .map(|k| RgbImage::from_fn(512, 512, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, k * 40])))
            .collect();
        let clip = clip_of(frames.clone());
        // Box [128, 384]^2 grown by 0.5 per side spans exactly the frame.
        let lm = boxed_landmarks((512, 512), (128.0, 128.0, 384.0, 384.0), Point::new(200.0, 250.0), Point::new(312.0, 250.0));
        let out = preprocess_driving(&clip, &lm, 0.5).unwrap();
        assert_eq!(out.crop, CropWindow { x0: 0, y0: 0, side: 512 });
        assert_eq!(out.clip.frames(), &frames[..]);
    }

    #[test]
    fn frame_count_preserved_and_output_is_512() {
        let frames = vec![RgbImage::from_pixel(320, 240, image::Rgb([9, 9, 9])); 7];
        let clip = clip_of(frames);
        let lm = boxed_landmarks((320, 240), (110.0, 70.0, 210.0, 170.0), Point::new(130.0, 100.0), Point::new(190.0, 104.0));
        let out = preprocess_driving(&clip, &lm, 0.4).unwrap();
        assert_eq!(out.clip.frame_count(), 7);
        assert_eq!(out.clip.resolution(), (512, 512));
    }

    #[test]
    fn face_mostly_outside_frame_is_rejected() {
        let clip = clip_of(vec![RgbImage::new(200, 200)]);
        let inside = boxed_landmarks((200, 200), (150.0, 50.0, 199.0, 150.0), Point::new(160.0, 90.0), Point::new(190.0, 90.0));
        // Derotated landmarks can leave the frame; box [150, 350] x [50, 150]
        // is only a quarter visible.
        let mut pts = inside.points().to_vec();
        pts[face33::JAW[6]] = Point::new(350.0, 150.0);
        let derot = LandmarkSet::from_points(pts, (400, 200), inside.schema().clone()).unwrap();
        let err = preprocess_with_crop_landmarks(&clip, &inside, Some(&derot), 0.4);
        assert!(matches!(err, Err(VideoError::FaceOutOfFrame { .. })));
    }

    #[test]
    fn archive_round_trip_preserves_frames() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<RgbImage> = (0..10)
            .map(|k| RgbImage::from_fn(32, 24, |x, y| image::Rgb([x as u8 * 5, y as u8 * 7, k as u8])))
            .collect();
        let clip = clip_of(frames);
        let path = dir.path().join("c.dfa");
        persist_clip(&path, &clip, &ClipSidecar::for_clip(&clip)).unwrap();
        let back = decode_video(&path).unwrap();
        assert_eq!(back.frame_count(), 10);
        assert_eq!(back.fps(), 30.0);
        assert_eq!(back, clip);
        let side: ClipSidecar = serde_json::from_slice(&std::fs::read(path.with_extension("json")).unwrap()).unwrap();
        assert_eq!(side.frame_count, 10);
    }

    #[test]
    fn decode_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(decode_video(&dir.path().join("nope.mp4")), Err(VideoError::UnreadableFile { .. })));
        let empty = dir.path().join("empty.bin");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(decode_video(&empty), Err(VideoError::EmptyVideo)));
        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"not a video at all").unwrap();
        assert!(matches!(decode_video(&junk), Err(VideoError::UnreadableFile { .. })));
        let truncated = dir.path().join("t.dfa");
        std::fs::write(&truncated, b"DFA1\n\x10\x00\x00\x00{").unwrap();
        assert!(matches!(decode_video(&truncated), Err(VideoError::UnreadableFile { .. })));
        let zero = dir.path().join("z.dfa");
        let header = br#"{"clip_id":"z","role":"driving","fps":30.0,"width":4,"height":4,"frame_count":0}"#;
        let mut bytes = b"DFA1\n".to_vec();
        bytes.extend((header.len() as u32).to_le_bytes());
        bytes.extend(header);
        std::fs::write(&zero, bytes).unwrap();
        assert!(matches!(decode_video(&zero), Err(VideoError::EmptyVideo)));
    }

    #[test]
    fn mp4_without_ffmpeg_is_unsupported() {
        if ffmpeg_available() {
            return;
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mp4");
        std::fs::write(&p, b"\x00\x00\x00\x18ftypmp42rest").unwrap();
        assert!(matches!(decode_video(&p), Err(VideoError::UnsupportedCodec(_))));
    }

    #[test]
    fn gif_decodes_with_frame_rate() {
        use image::codecs::gif::GifEncoder;
        use image::{Delay, Frame, RgbaImage};
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.gif");
        {
            let mut enc = GifEncoder::new(File::create(&p).unwrap());
            for k in 0..4u8 {
                let img = RgbaImage::from_pixel(8, 8, image::Rgba([k * 50, 0, 0, 255]));
                enc.encode_frame(Frame::from_parts(img, 0, 0, Delay::from_numer_denom_ms(40, 1)))
                    .unwrap();
            }
        }
        let clip = decode_video(&p).unwrap();
        assert_eq!(clip.frame_count(), 4);
        assert!((clip.fps() - 25.0).abs() < 1e-9);
    }
}
