//! Conditioning features taken from the first driving frame: landmark
//! heatmaps, organ boxes and box-masked Canny edges.

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufReader, Cursor};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{gaussian_blur, resize, sobel, Mask, Plane};
use crate::landmarks::{face33, LandmarkError, LandmarkSet, Region};

/// Generator input resolution.
pub const CONDITION_SIZE: u32 = 256;
pub const DEFAULT_HEATMAP_SIGMA: f64 = 2.0;
pub const DEFAULT_CANNY_SIGMA: f32 = 1.4;
pub const DEFAULT_CANNY_LOW: f32 = 50.0;
pub const DEFAULT_CANNY_HIGH: f32 = 150.0;
pub const DEFAULT_BOX_PAD: f64 = 0.15;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Landmarks(#[from] LandmarkError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("condition file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Render one unnormalised Gaussian per landmark. Landmarks are rescaled to
/// `out_size` and rounded to the nearest pixel, so each channel peaks at
/// exactly 1.
pub fn render_heatmaps(
    landmarks: &LandmarkSet,
    sigma_px: f64,
    out_size: (u32, u32),
) -> Result<Vec<Plane>, FeatureError> {
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(FeatureError::InvalidParameter(format!("sigma {sigma_px} must be > 0")));
    }
    let (w, h) = (out_size.0 as usize, out_size.1 as usize);
    let lm = if landmarks.frame_size() == out_size {
        landmarks.clone()
    } else {
        landmarks.rescaled(out_size)?
    };
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    // exp(-(dx^2 + dy^2) k) = exp(-dx^2 k) exp(-dy^2 k): two 1-D tables per channel.
    let profile = |c: f64, n: usize| -> Vec<f64> {
        (0..n).map(|i| (-(i as f64 - c).powi(2) * inv).exp()).collect()
    };
    Ok(lm
        .points()
        .iter()
        .map(|p| {
            let gx = profile(p.x.round(), w);
            let gy = profile(p.y.round(), h);
            Plane::from_fn(w, h, |x, y| (gx[x] * gy[y]) as f32)
        })
        .collect())
}

/// Pixel of the maximum of a heatmap channel (first in raster order on ties).
pub fn heatmap_peak(channel: &Plane) -> (usize, usize) {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, &v) in channel.data().iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    (best.0 % channel.width(), best.0 / channel.width())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Organ {
    LeftEye,
    RightEye,
    Nose,
    Mouth,
    LeftCheek,
    RightCheek,
}

impl Organ {
    pub const ALL: [Organ; 6] = [
        Organ::LeftEye,
        Organ::RightEye,
        Organ::Nose,
        Organ::Mouth,
        Organ::LeftCheek,
        Organ::RightCheek,
    ];
}

/// Axis-aligned box in pixel-centre coordinates, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// Grow by `pad` of the width/height on each side.
    fn padded(self, pad: f64) -> Self {
        let (dx, dy) = (pad * self.width(), pad * self.height());
        Self {
            x0: self.x0 - dx,
            y0: self.y0 - dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    /// Clip to `[0, w-1] x [0, h-1]`, keeping at least one pixel of extent.
    fn clipped(self, w: u32, h: u32) -> Self {
        let fit = |a: f64, b: f64, n: u32| -> (f64, f64) {
            let max = (n as f64 - 1.0).max(1.0);
            let (mut a, mut b) = (a.clamp(0.0, max), b.clamp(0.0, max));
            if b - a < 1.0 {
                let c = ((a + b) / 2.0).clamp(0.5, max - 0.5);
                a = c - 0.5;
                b = c + 0.5;
            }
            (a, b)
        };
        let (x0, x1) = fit(self.x0, self.x1, w);
        let (y0, y1) = fit(self.y0, self.y1, h);
        Self { x0, y0, x1, y1 }
    }

    fn hull(points: impl IntoIterator<Item = (f64, f64)>) -> Option<Self> {
        let mut it = points.into_iter().peekable();
        it.peek()?;
        Some(it.fold(
            Self {
                x0: f64::INFINITY,
                y0: f64::INFINITY,
                x1: f64::NEG_INFINITY,
                y1: f64::NEG_INFINITY,
            },
            |b, (x, y)| Self {
                x0: b.x0.min(x),
                y0: b.y0.min(y),
                x1: b.x1.max(x),
                y1: b.y1.max(y),
            },
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrganBoxes {
    pub boxes: BTreeMap<Organ, PixelBox>,
    pub frame_size: (u32, u32),
}

impl OrganBoxes {
    pub fn get(&self, organ: Organ) -> PixelBox {
        self.boxes[&organ]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.boxes.values().any(|b| b.contains(x, y))
    }

    /// Pixels covered by at least one box.
    pub fn union_mask(&self) -> Mask {
        let (w, h) = (self.frame_size.0 as usize, self.frame_size.1 as usize);
        let mut m = Mask::new(w, h);
        for b in self.boxes.values() {
            let (xa, xb) = (b.x0.ceil().max(0.0) as usize, (b.x1.floor() as usize).min(w - 1));
            let (ya, yb) = (b.y0.ceil().max(0.0) as usize, (b.y1.floor() as usize).min(h - 1));
            for y in ya..=yb {
                for x in xa..=xb {
                    m.set(x, y, true);
                }
            }
        }
        m
    }
}

/// Eye, nose and mouth boxes are landmark hulls; each cheek spans from the
/// jaw contour to the nostril horizontally and from the eye bottom to the
/// mouth top vertically. Every box is padded by `pad_ratio` per side and
/// clipped to the frame.
pub fn organ_bounding_boxes(landmarks: &LandmarkSet, pad_ratio: f64) -> Result<OrganBoxes, FeatureError> {
    if !(pad_ratio >= 0.0 && pad_ratio.is_finite()) {
        return Err(FeatureError::InvalidParameter(format!("pad_ratio {pad_ratio} < 0")));
    }
    let schema = landmarks.schema();
    let pts = landmarks.points();
    let region_hull = |regions: &[Region], name: &str| -> Result<PixelBox, FeatureError> {
        PixelBox::hull(
            regions
                .iter()
                .flat_map(|r| schema.indices(*r).iter())
                .map(|&i| (pts[i].x, pts[i].y)),
        )
        .ok_or_else(|| FeatureError::Landmarks(LandmarkError::MissingLandmarks(name.into())))
    };
    let left_eye = region_hull(&[Region::LeftEye], "left_eye")?;
    let right_eye = region_hull(&[Region::RightEye], "right_eye")?;
    let nose = region_hull(&[Region::Nose], "nose")?;
    let mouth = region_hull(
        &[Region::LeftMouthCorner, Region::RightMouthCorner, Region::LipContour],
        "mouth",
    )?;
    let jaw = schema.indices(Region::Jaw);
    if jaw.len() < 2 {
        return Err(LandmarkError::MissingLandmarks("jaw".into()).into());
    }
    let half = jaw.len() / 2;
    let jaw_left = jaw[..half].iter().map(|&i| pts[i].x).fold(f64::INFINITY, f64::min);
    let jaw_right = jaw[jaw.len() - half..].iter().map(|&i| pts[i].x).fold(f64::NEG_INFINITY, f64::max);
    let (nose_left, nose_right) = if schema.name == "face33" {
        (pts[face33::NOSE[2]].x, pts[face33::NOSE[3]].x)
    } else {
        (nose.x0, nose.x1)
    };
    let mouth_top = mouth.y0;
    let cheek = |xa: f64, xb: f64, eye_bottom: f64| PixelBox {
        x0: xa.min(xb),
        x1: xa.max(xb),
        y0: eye_bottom.min(mouth_top),
        y1: eye_bottom.max(mouth_top),
    };
    let (w, h) = landmarks.frame_size();
    let mut boxes = BTreeMap::new();
    boxes.insert(Organ::LeftEye, left_eye);
    boxes.insert(Organ::RightEye, right_eye);
    boxes.insert(Organ::Nose, nose);
    boxes.insert(Organ::Mouth, mouth);
    boxes.insert(Organ::LeftCheek, cheek(jaw_left, nose_left, left_eye.y1));
    boxes.insert(Organ::RightCheek, cheek(nose_right, jaw_right, right_eye.y1));
    for b in boxes.values_mut() {
        *b = b.padded(pad_ratio).clipped(w, h);
    }
    Ok(OrganBoxes {
        boxes,
        frame_size: (w, h),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub sigma: f32,
    pub low: f32,
    pub high: f32,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_CANNY_SIGMA,
            low: DEFAULT_CANNY_LOW,
            high: DEFAULT_CANNY_HIGH,
        }
    }
}

/// Full-frame Canny: luma, Gaussian smoothing, Sobel, non-maximum
/// suppression, then 8-connected hysteresis. Thresholds apply to the Sobel
/// magnitude of 8-bit intensity.
pub fn canny(frame: &RgbImage, params: CannyParams) -> Result<Mask, FeatureError> {
    if !(params.low > 0.0 && params.low < params.high) {
        return Err(FeatureError::InvalidParameter(format!(
            "need 0 < low < high, got {} and {}",
            params.low, params.high
        )));
    }
    let gray = Plane::luma(frame);
    let smooth = if params.sigma > 0.0 {
        gaussian_blur(&gray, params.sigma)
    } else {
        gray
    };
    let (gx, gy) = sobel(&smooth);
    let (w, h) = (smooth.width(), smooth.height());
    // Quantised so that mirror-symmetric profiles produce exact ties.
    let mag = Plane::from_fn(w, h, |x, y| {
        let m = (gx.get(x, y) as f64).hypot(gy.get(x, y) as f64);
        ((m * 256.0).round() / 256.0) as f32
    });
    let mut nms = Plane::new(w, h);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let m = mag.get(x, y);
            if m < params.low {
                continue;
            }
            let mut a = (gy.get(x, y) as f64).atan2(gx.get(x, y) as f64).to_degrees();
            if a < 0.0 {
                a += 180.0;
            }
            let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&a) {
                (1, 0)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let ahead = mag.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            let behind = mag.get((x as isize - dx) as usize, (y as isize - dy) as usize);
            if m > behind && m >= ahead {
                nms.set(x, y, m);
            }
        }
    }
    let mut out = Mask::new(w, h);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if nms.get(x, y) >= params.high {
                out.set(x, y, true);
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                if !out.get(nx, ny) && nms.get(nx, ny) >= params.low {
                    out.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(out)
}

/// Canny on the whole frame, masked to the union of organ boxes.
pub fn extract_edge_map(frame: &RgbImage, boxes: &OrganBoxes, params: CannyParams) -> Result<Mask, FeatureError> {
    if frame.dimensions() != boxes.frame_size {
        return Err(FeatureError::InvalidParameter("boxes belong to a different frame size".into()));
    }
    let edges = canny(frame, params)?;
    let inside = boxes.union_mask();
    let data = edges.data().iter().zip(inside.data()).map(|(&e, &i)| e && i).collect();
    Ok(Mask::from_vec(edges.width(), edges.height(), data))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionParams {
    pub size: u32,
    pub heatmap_sigma: f64,
    pub box_pad: f64,
    pub canny: CannyParams,
}

impl Default for ConditionParams {
    fn default() -> Self {
        Self {
            size: CONDITION_SIZE,
            heatmap_sigma: DEFAULT_HEATMAP_SIGMA,
            box_pad: DEFAULT_BOX_PAD,
            canny: CannyParams::default(),
        }
    }
}

/// Generator conditioning built from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMaps {
    pub heatmaps: Vec<Plane>,
    pub edge_map: Mask,
    pub boxes: OrganBoxes,
    pub params: ConditionParams,
    pub schema_id: String,
}

impl ConditionMaps {
    /// `(width, height)`.
    pub fn resolution(&self) -> (u32, u32) {
        self.boxes.frame_size
    }

    /// Landmark positions recovered from the heatmap peaks.
    pub fn peak_points(&self) -> Vec<(usize, usize)> {
        self.heatmaps.iter().map(heatmap_peak).collect()
    }

    /// SHA-256 over resolution, heatmap values and edge pixels.
    pub fn condition_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let (w, h) = self.resolution();
        hasher.update(w.to_le_bytes());
        hasher.update(h.to_le_bytes());
        hasher.update((self.heatmaps.len() as u32).to_le_bytes());
        for c in &self.heatmaps {
            for v in c.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.update(self.edge_map.data().iter().map(|&b| b as u8).collect::<Vec<u8>>());
        hex::encode(hasher.finalize())
    }
}

/// Resize `frame` to the generator resolution and derive heatmaps, boxes and
/// masked edges there.
pub fn build_condition_maps(
    frame: &RgbImage,
    landmarks: &LandmarkSet,
    params: ConditionParams,
) -> Result<ConditionMaps, FeatureError> {
    if landmarks.frame_size() != frame.dimensions() {
        return Err(FeatureError::InvalidParameter("landmarks belong to a different frame size".into()));
    }
    let size = (params.size, params.size);
    let small = if frame.dimensions() == size {
        frame.clone()
    } else {
        resize(frame, size.0, size.1)
    };
    let lm = if landmarks.frame_size() == size {
        landmarks.clone()
    } else {
        landmarks.rescaled(size)?
    };
    let heatmaps = render_heatmaps(&lm, params.heatmap_sigma, size)?;
    let boxes = organ_bounding_boxes(&lm, params.box_pad)?;
    let edge_map = extract_edge_map(&small, &boxes, params.canny)?;
    Ok(ConditionMaps {
        heatmaps,
        edge_map,
        boxes,
        params,
        schema_id: lm.schema().id(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConditionSidecar {
    heatmap_sigma: f64,
    box_pad: f64,
    canny: CannyParams,
    size: u32,
    boxes: OrganBoxes,
    landmark_schema: String,
    channels: usize,
    condition_hash: String,
}

/// Paths of the persisted condition files for `stem` in `dir`.
pub fn condition_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{stem}.heatmaps.npy")),
        dir.join(format!("{stem}.edges.png")),
        dir.join(format!("{stem}.conditions.json")),
    )
}

/// Write heatmaps as a `(K, H, W)` little-endian f32 `.npy` array, edges as a
/// 1-bit grayscale PNG, and a JSON sidecar.
pub fn write_condition_maps(dir: &Path, stem: &str, maps: &ConditionMaps) -> Result<(), FeatureError> {
    let (npy, png_path, json) = condition_paths(dir, stem);
    let (w, h) = maps.resolution();
    let mut flat = Vec::with_capacity(maps.heatmaps.len() * (w * h) as usize);
    for c in &maps.heatmaps {
        flat.extend_from_slice(c.data());
    }
    std::fs::write(&npy, encode_npy_f32(&[maps.heatmaps.len(), h as usize, w as usize], &flat))?;
    std::fs::write(&png_path, encode_bitmap(&maps.edge_map).map_err(|e| FeatureError::Format {
        path: png_path.clone(),
        reason: e.to_string(),
    })?)?;
    let side = ConditionSidecar {
        heatmap_sigma: maps.params.heatmap_sigma,
        box_pad: maps.params.box_pad,
        canny: maps.params.canny,
        size: maps.params.size,
        boxes: maps.boxes.clone(),
        landmark_schema: maps.schema_id.clone(),
        channels: maps.heatmaps.len(),
        condition_hash: maps.condition_hash(),
    };
    std::fs::write(json, serde_json::to_vec_pretty(&side).expect("sidecar serializes"))?;
    Ok(())
}

pub fn read_condition_maps(dir: &Path, stem: &str) -> Result<ConditionMaps, FeatureError> {
    let (npy, png_path, json) = condition_paths(dir, stem);
    let bad = |p: &Path, r: String| FeatureError::Format {
        path: p.to_path_buf(),
        reason: r,
    };
    let side: ConditionSidecar =
        serde_json::from_slice(&std::fs::read(&json)?).map_err(|e| bad(&json, e.to_string()))?;
    let (shape, data) = decode_npy_f32(&std::fs::read(&npy)?).map_err(|e| bad(&npy, e))?;
    let (w, h) = side.boxes.frame_size;
    if shape != [side.channels, h as usize, w as usize] {
        return Err(bad(&npy, format!("shape {shape:?} disagrees with sidecar")));
    }
    let plane = (w * h) as usize;
    let heatmaps = data
        .chunks_exact(plane)
        .map(|c| Plane::from_vec(w as usize, h as usize, c.to_vec()))
        .collect();
    let edge_map = decode_bitmap(&std::fs::read(&png_path)?).map_err(|e| bad(&png_path, e))?;
    if (edge_map.width() as u32, edge_map.height() as u32) != (w, h) {
        return Err(bad(&png_path, "edge map size disagrees with sidecar".into()));
    }
    let maps = ConditionMaps {
        heatmaps,
        edge_map,
        boxes: side.boxes,
        params: ConditionParams {
            size: side.size,
            heatmap_sigma: side.heatmap_sigma,
            box_pad: side.box_pad,
            canny: side.canny,
        },
        schema_id: side.landmark_schema,
    };
    if maps.condition_hash() != side.condition_hash {
        return Err(bad(&json, "condition hash mismatch".into()));
    }
    Ok(maps)
}

fn encode_npy_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape_txt = if dims.len() == 1 {
        format!("({},)", dims[0])
    } else {
        format!("({})", dims.join(", "))
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // Magic (6) + version (2) + length (2) + header, padded to 64 bytes.
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 4);
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_npy_f32(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>), String> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err("not an npy file".into());
    }
    let (hlen, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12),
        v => return Err(format!("unsupported npy version {v}")),
    };
    let header = std::str::from_utf8(bytes.get(start..start + hlen).ok_or("truncated header")?)
        .map_err(|e| e.to_string())?;
    if !header.contains("'<f4'") || header.contains("'fortran_order': True") {
        return Err("expected C-order little-endian f32".into());
    }
    let open = header.find("'shape': (").ok_or("no shape")? + 10;
    let close = open + header[open..].find(')').ok_or("bad shape")?;
    let shape = header[open..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let body = &bytes[start + hlen..];
    let n: usize = shape.iter().product();
    if body.len() != n * 4 {
        return Err(format!("expected {} data bytes, found {}", n * 4, body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((shape, data))
}

fn encode_bitmap(mask: &Mask) -> Result<Vec<u8>, png::EncodingError> {
    let (w, h) = (mask.width(), mask.height());
    let row_bytes = w.div_ceil(8);
    let mut packed = vec![0u8; row_bytes * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                packed[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&packed)?;
        writer.finish()?;
    }
    Ok(out)
}

fn decode_bitmap(bytes: &[u8]) -> Result<Mask, String> {
    let mut dec = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::One {
        return Err("edge map must be a 1-bit grayscale PNG".into());
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size().ok_or("image too large")?];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let row_bytes = frame.line_size;
    let mut m = Mask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            m.set(x, y, buf[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::{LandmarkSchema, Point};
    use std::sync::Arc;

    fn schema() -> Arc<LandmarkSchema> {
        Arc::new(LandmarkSchema::face33())
    }

    /// A plausible upright face33 layout in a 512x512 frame.
    pub(crate) fn face_points() -> Vec<Point> {
        let mut p = vec![Point::new(0.0, 0.0); face33::LEN];
        let set = |p: &mut Vec<Point>, i: usize, x: f64, y: f64| p[i] = Point::new(x, y);
        for (k, &i) in face33::LEFT_BROW.iter().enumerate() {
            set(&mut p, i, 170.0 + 30.0 * k as f64, 180.0 - 5.0 * (k == 1) as u8 as f64);
        }
        for (k, &i) in face33::RIGHT_BROW.iter().enumerate() {
            set(&mut p, i, 282.0 + 30.0 * k as f64, 180.0 - 5.0 * (k == 1) as u8 as f64);
        }
        let eye = |p: &mut Vec<Point>, idx: [usize; 5], cx: f64, outer_left: bool| {
            let (o, i) = if outer_left { (cx - 25.0, cx + 25.0) } else { (cx + 25.0, cx - 25.0) };
            let order = if outer_left { [o, cx, i, cx, cx] } else { [i, cx, o, cx, cx] };
            let ys = [210.0, 200.0, 210.0, 220.0, 210.0];
            for k in 0..5 {
                p[idx[k]] = Point::new(order[k], ys[k]);
            }
        };
        eye(&mut p, face33::LEFT_EYE, 200.0, true);
        eye(&mut p, face33::RIGHT_EYE, 312.0, false);
        set(&mut p, face33::NOSE[0], 256.0, 230.0);
        set(&mut p, face33::NOSE[1], 256.0, 280.0);
        set(&mut p, face33::NOSE[2], 240.0, 290.0);
        set(&mut p, face33::NOSE[3], 272.0, 290.0);
        set(&mut p, face33::MOUTH_LEFT, 216.0, 330.0);
        set(&mut p, face33::MOUTH_RIGHT, 296.0, 330.0);
        set(&mut p, face33::LIP_CONTOUR[0], 256.0, 318.0);
        set(&mut p, face33::LIP_CONTOUR[1], 256.0, 346.0);
        set(&mut p, face33::LIP_CONTOUR[2], 256.0, 328.0);
        set(&mut p, face33::LIP_CONTOUR[3], 256.0, 334.0);
        for (k, &i) in face33::JAW.iter().enumerate() {
            let t = std::f64::consts::PI - k as f64 * std::f64::consts::PI / 6.0;
            set(&mut p, i, 256.0 + 120.0 * t.cos(), 250.0 + 150.0 * t.sin().abs() * (k != 0 && k != 6) as u8 as f64);
        }
        p
    }

    fn face_set(size: u32) -> LandmarkSet {
        let s = size as f64 / 512.0;
        let pts = face_points().into_iter().map(|p| Point::new(p.x * s, p.y * s)).collect();
        LandmarkSet::from_points(pts, (size, size), schema()).unwrap()
    }

    #[test]
    fn heatmap_peak_and_one_sigma_value() {
        let lm = face_set(256);
        let maps = render_heatmaps(&lm, 2.0, (256, 256)).unwrap();
        assert_eq!(maps.len(), face33::LEN);
        for (c, p) in maps.iter().zip(lm.points()) {
            let (px, py) = (p.x.round() as usize, p.y.round() as usize);
            assert_eq!(c.get(px, py), 1.0);
            assert_eq!(heatmap_peak(c), (px, py));
            assert!(c.max() <= 1.0);
        }
        let c = &maps[face33::LEFT_EYE_CENTER];
        let p = lm.points()[face33::LEFT_EYE_CENTER];
        let (px, py) = (p.x.round() as usize, p.y.round() as usize);
        assert!((c.get(px + 2, py) as f64 - (-0.5f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn heatmap_mass_shrinks_with_sigma() {
        let lm = face_set(256);
        let a = render_heatmaps(&lm, 3.0, (256, 256)).unwrap();
        let b = render_heatmaps(&lm, 2.0, (256, 256)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(y.sum() < x.sum());
        }
        assert!(render_heatmaps(&lm, 0.0, (256, 256)).is_err());
    }

    #[test]
    fn heatmaps_rescale_landmarks() {
        let lm = face_set(512);
        let maps = render_heatmaps(&lm, 2.0, (256, 256)).unwrap();
        let p = lm.points()[face33::NOSE[1]];
        let expect = (((p.x + 0.5) / 2.0 - 0.5).round() as usize, ((p.y + 0.5) / 2.0 - 0.5).round() as usize);
        assert_eq!(heatmap_peak(&maps[face33::NOSE[1]]), expect);
    }

    #[test]
    fn mouth_box_is_hull_of_mouth_points() {
        let mut pts = face_points();
        pts[face33::MOUTH_LEFT] = Point::new(100.0, 300.0);
        pts[face33::MOUTH_RIGHT] = Point::new(200.0, 300.0);
        pts[face33::LIP_CONTOUR[0]] = Point::new(150.0, 280.0);
        pts[face33::LIP_CONTOUR[1]] = Point::new(150.0, 320.0);
        pts[face33::LIP_CONTOUR[2]] = Point::new(150.0, 298.0);
        pts[face33::LIP_CONTOUR[3]] = Point::new(150.0, 302.0);
        let lm = LandmarkSet::from_points(pts, (512, 512), schema()).unwrap();
        let b = organ_bounding_boxes(&lm, 0.0).unwrap().get(Organ::Mouth);
        assert_eq!((b.x0, b.y0, b.x1, b.y1), (100.0, 280.0, 200.0, 320.0));
        let b = organ_bounding_boxes(&lm, 0.1).unwrap().get(Organ::Mouth);
        assert!((b.width() - 120.0).abs() < 1e-9);
    }

    #[test]
    fn cheek_boxes_sit_between_eye_mouth_jaw_and_nose() {
        let lm = face_set(512);
        let boxes = organ_bounding_boxes(&lm, 0.0).unwrap();
        let lc = boxes.get(Organ::LeftCheek);
        let rc = boxes.get(Organ::RightCheek);
        assert_eq!(lc.x1, 240.0);
        assert_eq!(rc.x0, 272.0);
        assert_eq!(lc.y0, 220.0);
        assert_eq!(lc.y1, 318.0);
        assert!(lc.x0 < 150.0 && rc.x1 > 362.0);
    }

    #[test]
    fn constant_frame_has_no_edges() {
        let f = RgbImage::from_pixel(64, 64, image::Rgb([120, 90, 60]));
        assert!(canny(&f, CannyParams::default()).unwrap().is_empty());
    }

    #[test]
    fn step_edge_gives_one_pixel_line_inside_boxes_only() {
        let lm = face_set(512);
        let boxes = organ_bounding_boxes(&lm, 0.0).unwrap();
        let mouth = boxes.get(Organ::Mouth);
        let step_x = 256u32;
        let frame = RgbImage::from_fn(512, 512, |x, _| {
            if x < step_x { image::Rgb([0, 0, 0]) } else { image::Rgb([255, 255, 255]) }
        });
        let edges = extract_edge_map(&frame, &boxes, CannyParams::default()).unwrap();
        let inside = boxes.union_mask();
        for y in 0..512 {
            let cols: Vec<usize> = (0..512).filter(|&x| edges.get(x, y)).collect();
            if inside.get(255, y) {
                assert_eq!(cols, vec![255], "row {y}");
            } else {
                assert!(cols.is_empty(), "row {y}");
            }
        }
        assert!(edges.get(255, mouth.y0.ceil() as usize));
    }

    #[test]
    fn threshold_order_is_checked() {
        let f = RgbImage::new(8, 8);
        let bad = CannyParams { sigma: 1.4, low: 150.0, high: 50.0 };
        assert!(canny(&f, bad).is_err());
    }

    #[test]
    fn bitmap_and_npy_round_trip() {
        let m = Mask::from_vec(13, 3, (0..39).map(|i| i % 3 == 0).collect());
        assert_eq!(decode_bitmap(&encode_bitmap(&m).unwrap()).unwrap(), m);
        let d: Vec<f32> = (0..24).map(|i| i as f32 * 0.5).collect();
        let bytes = encode_npy_f32(&[2, 3, 4], &d);
        assert_eq!((10 + u16::from_le_bytes([bytes[8], bytes[9]]) as usize) % 64, 0);
        assert_eq!(decode_npy_f32(&bytes).unwrap(), (vec![2, 3, 4], d));
    }

    #[test]
    fn condition_maps_persist() {
        let lm = face_set(512);
        let frame = RgbImage::from_fn(512, 512, |x, y| image::Rgb([(x / 2) as u8, (y / 2) as u8, ((x + y) / 4) as u8]));
        let maps = build_condition_maps(&frame, &lm, ConditionParams::default()).unwrap();
        assert_eq!(maps.resolution(), (256, 256));
        let dir = tempfile::tempdir().unwrap();
        write_condition_maps(dir.path(), "c", &maps).unwrap();
        let back = read_condition_maps(dir.path(), "c").unwrap();
        assert_eq!(back, maps);
        assert_eq!(back.condition_hash(), maps.condition_hash());
    }
}
