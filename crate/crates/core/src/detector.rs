//! Reference landmark detector for the procedural face palette.
//!
//! Pixels are classified by colour (skin, lip, sclera, other). The face is the
//! dominant skin/lip component; eyes, brows, nostrils and the mouth interior
//! are the holes inside it. Landmarks are read off component extents measured
//! along the inter-eye axis, so the detector is rotation-aware and works on
//! warped or regenerated faces as long as the palette survives.

use std::sync::Arc;

use image::RgbImage;

use crate::landmarks::{face33, LandmarkBackend, LandmarkError, LandmarkSchema, LandmarkSet, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Skin,
    Lip,
    Sclera,
    Other,
}

#[inline]
fn classify(p: [u8; 3]) -> Class {
    let (r, g, b) = (p[0] as i32, p[1] as i32, p[2] as i32);
    if r > 120 && r - g > 70 && r - b > 50 {
        Class::Lip
    } else if r > 80 && r - b > 25 {
        Class::Skin
    } else if r.min(g).min(b) > 175 && r.max(g).max(b) - r.min(g).min(b) < 45 {
        Class::Sclera
    } else {
        Class::Other
    }
}

/// Connected components of `mask` (8-connected), as lists of pixel indices.
pub(crate) fn components(mask: &[bool], w: usize, h: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Pixels of `!solid` not 4-connected to the image border.
fn holes(solid: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut outside = vec![false; solid.len()];
    let mut stack: Vec<usize> = Vec::new();
    let push = |i: usize, outside: &mut Vec<bool>, stack: &mut Vec<usize>| {
        if !solid[i] && !outside[i] {
            outside[i] = true;
            stack.push(i);
        }
    };
    for x in 0..w {
        push(x, &mut outside, &mut stack);
        push((h - 1) * w + x, &mut outside, &mut stack);
    }
    for y in 0..h {
        push(y * w, &mut outside, &mut stack);
        push(y * w + w - 1, &mut outside, &mut stack);
    }
    while let Some(i) = stack.pop() {
        let (x, y) = (i % w, i / w);
        if x > 0 {
            push(i - 1, &mut outside, &mut stack);
        }
        if x + 1 < w {
            push(i + 1, &mut outside, &mut stack);
        }
        if y > 0 {
            push(i - w, &mut outside, &mut stack);
        }
        if y + 1 < h {
            push(i + w, &mut outside, &mut stack);
        }
    }
    solid
        .iter()
        .zip(&outside)
        .map(|(&s, &o)| !s && !o)
        .collect()
}

struct Blob {
    pixels: Vec<Point>,
    centroid: Point,
    sclera: usize,
}

impl Blob {
    fn new(idx: &[usize], w: usize, classes: &[Class]) -> Self {
        let pixels: Vec<Point> = idx
            .iter()
            .map(|&i| Point::new((i % w) as f64, (i / w) as f64))
            .collect();
        let n = pixels.len() as f64;
        let cx = pixels.iter().map(|p| p.x).sum::<f64>() / n;
        let cy = pixels.iter().map(|p| p.y).sum::<f64>() / n;
        let sclera = idx.iter().filter(|&&i| classes[i] == Class::Sclera).count();
        Self {
            pixels,
            centroid: Point::new(cx, cy),
            sclera,
        }
    }

    fn area(&self) -> usize {
        self.pixels.len()
    }
}

/// Orthonormal face frame: `a` runs from the left to the right eye, `n`
/// points down the face.
#[derive(Clone, Copy)]
struct Frame {
    origin: Point,
    a: Point,
    n: Point,
}

impl Frame {
    fn ts(&self, p: Point) -> (f64, f64) {
        let d = p - self.origin;
        (d.x * self.a.x + d.y * self.a.y, d.x * self.n.x + d.y * self.n.y)
    }

    fn at(&self, t: f64, s: f64) -> Point {
        self.origin + self.a * t + self.n * s
    }

    fn recentered(&self, origin: Point) -> Frame {
        Frame { origin, ..*self }
    }
}

/// Detection result with an overall plausibility score in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct FaceDetection {
    pub landmarks: LandmarkSet,
    pub score: f64,
}

/// Detector for faces drawn with the procedural palette.
#[derive(Debug, Clone)]
pub struct PaletteDetector {
    schema: Arc<LandmarkSchema>,
}

impl Default for PaletteDetector {
    fn default() -> Self {
        Self::new()
    }
}

impl PaletteDetector {
    pub fn new() -> Self {
        Self {
            schema: Arc::new(LandmarkSchema::face33()),
        }
    }

    pub fn detect_scored(&self, frame: &RgbImage) -> Result<FaceDetection, LandmarkError> {
        let (w, h) = (frame.width() as usize, frame.height() as usize);
        if w < 8 || h < 8 {
            return Err(LandmarkError::NoFaceDetected);
        }
        let classes: Vec<Class> = frame.pixels().map(|p| classify(p.0)).collect();
        let facey: Vec<bool> = classes
            .iter()
            .map(|c| matches!(c, Class::Skin | Class::Lip))
            .collect();
        let min_area = (0.003 * (w * h) as f64).max(200.0) as usize;
        let mut comps = components(&facey, w, h);
        comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
        let face = match comps.first() {
            Some(c) if c.len() >= min_area => c,
            _ => return Err(LandmarkError::NoFaceDetected),
        };
        let faces = comps
            .iter()
            .filter(|c| c.len() >= min_area && c.len() * 10 >= face.len() * 3)
            .count();
        if faces > 1 {
            return Err(LandmarkError::MultipleFaces(faces));
        }
        let mut solid = vec![false; w * h];
        for &i in face {
            solid[i] = true;
        }
        let hole_mask = holes(&solid, w, h);
        let hole_blobs: Vec<Blob> = components(&hole_mask, w, h)
            .iter()
            .filter(|c| c.len() >= 2)
            .map(|c| Blob::new(c, w, &classes))
            .collect();

        // Eyes: the two holes with the most sclera.
        let mut eye_ids: Vec<usize> = (0..hole_blobs.len())
            .filter(|&i| hole_blobs[i].sclera >= 3)
            .collect();
        eye_ids.sort_by_key(|&i| std::cmp::Reverse(hole_blobs[i].sclera));
        if eye_ids.len() < 2 {
            return Err(LandmarkError::NoFaceDetected);
        }
        eye_ids.truncate(2);
        if hole_blobs[eye_ids[0]].centroid.x > hole_blobs[eye_ids[1]].centroid.x {
            eye_ids.swap(0, 1);
        }
        let (le, re) = (&hole_blobs[eye_ids[0]], &hole_blobs[eye_ids[1]]);
        let iod = le.centroid.dist(re.centroid);
        if iod < 4.0 {
            return Err(LandmarkError::NoFaceDetected);
        }
        let a = (re.centroid - le.centroid) * (1.0 / iod);
        let n = Point::new(-a.y, a.x);
        let mid = le.centroid.midpoint(re.centroid);
        let frame_mid = Frame { origin: mid, a, n };

        let mut pts = vec![Point::default(); face33::LEN];
        let mut conf = vec![1.0; face33::LEN];

        let left_eye = eye_points(le, frame_mid.recentered(le.centroid));
        let right_eye = eye_points(re, frame_mid.recentered(re.centroid));
        pts[6] = left_eye.0;
        pts[7] = left_eye.2;
        pts[8] = left_eye.1;
        pts[9] = left_eye.3;
        pts[10] = le.centroid;
        pts[11] = right_eye.0;
        pts[12] = right_eye.2;
        pts[13] = right_eye.1;
        pts[14] = right_eye.3;
        pts[15] = re.centroid;

        // Brows: largest non-eye hole above each eye.
        let used_eye = |i: usize| eye_ids.contains(&i);
        let brow_for = |eye: &Blob| -> Option<usize> {
            let f = frame_mid.recentered(eye.centroid);
            (0..hole_blobs.len())
                .filter(|&i| !used_eye(i) && hole_blobs[i].sclera == 0)
                .filter(|&i| {
                    let (t, s) = f.ts(hole_blobs[i].centroid);
                    s < -0.08 * iod && s > -0.7 * iod && t.abs() < 0.45 * iod
                })
                .max_by_key(|&i| hole_blobs[i].area())
        };
        let lb = brow_for(le).ok_or_else(|| LandmarkError::MissingLandmarks("left brow".into()))?;
        let rb = brow_for(re).ok_or_else(|| LandmarkError::MissingLandmarks("right brow".into()))?;
        let (lo, lm, li) = brow_points(&hole_blobs[lb], frame_mid.recentered(le.centroid));
        pts[0] = lo;
        pts[1] = lm;
        pts[2] = li;
        let (ri_, rm, ro) = brow_points(&hole_blobs[rb], frame_mid.recentered(re.centroid));
        pts[3] = ri_;
        pts[4] = rm;
        pts[5] = ro;

        // Nostrils: the largest hole on each side of the midline between the
        // eyes and the mouth. Found before the mouth so low-set nostrils are
        // not mistaken for mouth interior.
        let side = |left: bool| {
            (0..hole_blobs.len())
                .filter(|&i| !used_eye(i) && i != lb && i != rb)
                .filter(|&i| {
                    let (t, s) = frame_mid.ts(hole_blobs[i].centroid);
                    s > 0.2 * iod && s < 0.68 * iod && t.abs() < 0.4 * iod && (t < 0.0) == left
                })
                .max_by_key(|&i| hole_blobs[i].area())
        };
        let (ln, rn) = match (side(true), side(false)) {
            (Some(l), Some(r)) => (l, r),
            _ => return Err(LandmarkError::MissingLandmarks("nose".into())),
        };
        let (nl, nr) = (hole_blobs[ln].centroid, hole_blobs[rn].centroid);

        // Mouth: lip pixels plus interior holes below the nose.
        let in_mouth_zone = |p: Point| {
            let (t, s) = frame_mid.ts(p);
            s > 0.55 * iod && s < 1.45 * iod && t.abs() < 0.7 * iod
        };
        let lip_mask: Vec<bool> = (0..w * h)
            .map(|i| solid[i] && classes[i] == Class::Lip)
            .collect();
        let mut mouth: Vec<Point> = Vec::new();
        for c in components(&lip_mask, w, h) {
            let b = Blob::new(&c, w, &classes);
            if b.area() >= 3 && in_mouth_zone(b.centroid) {
                mouth.extend(b.pixels);
            }
        }
        if mouth.len() < 6 {
            return Err(LandmarkError::MissingLandmarks("mouth".into()));
        }
        let interior: Vec<usize> = (0..hole_blobs.len())
            .filter(|&i| !used_eye(i) && i != lb && i != rb && i != ln && i != rn && in_mouth_zone(hole_blobs[i].centroid))
            .collect();
        let interior_px: Vec<Point> = interior
            .iter()
            .flat_map(|&i| hole_blobs[i].pixels.iter().copied())
            .collect();
        let all_mouth: Vec<Point> = mouth.iter().chain(interior_px.iter()).copied().collect();
        let (mouth_l, mouth_r, tmid) = mouth_corners(&all_mouth, frame_mid);
        pts[20] = mouth_l;
        pts[21] = mouth_r;
        let band = |set: &[Point]| -> Option<(f64, f64)> {
            let ss: Vec<f64> = set
                .iter()
                .map(|&p| frame_mid.ts(p))
                .filter(|(t, _)| (t - tmid).abs() < 1.0)
                .map(|(_, s)| s)
                .collect();
            if ss.is_empty() {
                None
            } else {
                Some((
                    ss.iter().copied().fold(f64::INFINITY, f64::min),
                    ss.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                ))
            }
        };
        let (outer_top, outer_bot) =
            band(&all_mouth).ok_or_else(|| LandmarkError::MissingLandmarks("lip contour".into()))?;
        pts[22] = frame_mid.at(tmid, outer_top - 0.5);
        pts[23] = frame_mid.at(tmid, outer_bot + 0.5);
        match band(&interior_px) {
            Some((it, ib)) => {
                pts[24] = frame_mid.at(tmid, it - 0.5);
                pts[25] = frame_mid.at(tmid, ib + 0.5);
            }
            None => {
                let c = (outer_top + outer_bot) / 2.0;
                pts[24] = frame_mid.at(tmid, c);
                pts[25] = frame_mid.at(tmid, c);
                conf[24] = 0.8;
                conf[25] = 0.8;
            }
        }

        pts[16] = mid + n * (0.12 * iod);
        pts[17] = nl.midpoint(nr) - n * (0.07 * iod);
        pts[18] = nl;
        pts[19] = nr;
        conf[16] = 0.9;
        conf[17] = 0.9;

        // Jaw: ellipse fitted to the filled face by second moments.
        let filled: Vec<Point> = (0..w * h)
            .filter(|&i| solid[i] || hole_mask[i])
            .map(|i| Point::new((i % w) as f64, (i / w) as f64))
            .collect();
        let cnt = filled.len() as f64;
        let c = Point::new(
            filled.iter().map(|p| p.x).sum::<f64>() / cnt,
            filled.iter().map(|p| p.y).sum::<f64>() / cnt,
        );
        let fc = frame_mid.recentered(c);
        let (mut vt, mut vs) = (0.0, 0.0);
        for &p in &filled {
            let (t, s) = fc.ts(p);
            vt += t * t;
            vs += s * s;
        }
        let semi_a = 2.0 * (vt / cnt).sqrt();
        let semi_b = 2.0 * (vs / cnt).sqrt();
        for k in 0..7 {
            let th = std::f64::consts::PI - k as f64 * std::f64::consts::PI / 6.0;
            pts[26 + k] = fc.at(semi_a * th.cos(), semi_b * th.sin());
            conf[26 + k] = 0.9;
        }

        let (fw, fh) = (w as f64, h as f64);
        for p in pts.iter_mut() {
            p.x = p.x.clamp(0.0, fw - 1e-6);
            p.y = p.y.clamp(0.0, fh - 1e-6);
        }
        let eye_ratio = ratio(le.area(), re.area());
        let brow_ratio = ratio(hole_blobs[lb].area(), hole_blobs[rb].area());
        let score = 0.4 + 0.3 * eye_ratio + 0.3 * brow_ratio;
        let landmarks = LandmarkSet::new(pts, conf, (w as u32, h as u32), self.schema.clone())?;
        Ok(FaceDetection { landmarks, score })
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    a.min(b) as f64 / a.max(b).max(1) as f64
}

/// `(outer/left-extreme, right-extreme, top, bottom)` of an eye blob.
fn eye_points(b: &Blob, f: Frame) -> (Point, Point, Point, Point) {
    let ts: Vec<(f64, f64)> = b.pixels.iter().map(|&p| f.ts(p)).collect();
    let near_axis = ts.iter().filter(|(_, s)| s.abs() < 1.5);
    let (tmin, tmax) = near_axis.fold((0.0f64, 0.0f64), |(lo, hi), &(t, _)| (lo.min(t), hi.max(t)));
    let near_col = ts.iter().filter(|(t, _)| t.abs() < 1.5);
    let (smin, smax) = near_col.fold((0.0f64, 0.0f64), |(lo, hi), &(_, s)| (lo.min(s), hi.max(s)));
    (
        f.at(tmin - 0.5, 0.0),
        f.at(tmax + 0.5, 0.0),
        f.at(0.0, smin - 0.5),
        f.at(0.0, smax + 0.5),
    )
}

/// `(low-t end, middle above eye centre, high-t end)` of a brow blob.
fn brow_points(b: &Blob, f: Frame) -> (Point, Point, Point) {
    let ts: Vec<(f64, f64)> = b.pixels.iter().map(|&p| f.ts(p)).collect();
    let tmin = ts.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let tmax = ts.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
    let thick = (b.area() as f64 / (tmax - tmin + 1.0)).max(1.0);
    let mean_s = |sel: &dyn Fn(f64) -> bool| -> Option<f64> {
        let v: Vec<f64> = ts.iter().filter(|(t, _)| sel(*t)).map(|x| x.1).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let all = ts.iter().map(|x| x.1).sum::<f64>() / ts.len() as f64;
    let s_lo = mean_s(&|t| t < tmin + thick).unwrap_or(all);
    let s_hi = mean_s(&|t| t > tmax - thick).unwrap_or(all);
    let s_mid = mean_s(&|t| t.abs() < 1.0).unwrap_or(all);
    (
        f.at(tmin - 0.5 + thick / 2.0, s_lo),
        f.at(0.0, s_mid),
        f.at(tmax + 0.5 - thick / 2.0, s_hi),
    )
}

/// Left and right mouth corners plus the mid-mouth `t` coordinate.
fn mouth_corners(px: &[Point], f: Frame) -> (Point, Point, f64) {
    let ts: Vec<(f64, f64)> = px.iter().map(|&p| f.ts(p)).collect();
    let tmin = ts.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let tmax = ts.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
    let mean_s = |sel: &dyn Fn(f64) -> bool| -> f64 {
        let v: Vec<f64> = ts.iter().filter(|(t, _)| sel(*t)).map(|x| x.1).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    let sl = mean_s(&|t| t < tmin + 1.5);
    let sr = mean_s(&|t| t > tmax - 1.5);
    (f.at(tmin - 0.5, sl), f.at(tmax + 0.5, sr), (tmin + tmax) / 2.0)
}

impl LandmarkBackend for PaletteDetector {
    fn name(&self) -> &str {
        "palette"
    }

    fn schema(&self) -> Arc<LandmarkSchema> {
        self.schema.clone()
    }

    fn detect(&self, frame: &RgbImage) -> Result<LandmarkSet, LandmarkError> {
        self.detect_scored(frame).map(|d| d.landmarks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Exec;
    use crate::synth::{blank_frame, Background, Expression, FaceScene, HeadPose, Identity};

    fn max_err(a: &LandmarkSet, b: &LandmarkSet, idx: &[usize]) -> f64 {
        idx.iter()
            .map(|&i| a.points()[i].dist(b.points()[i]))
            .fold(0.0, f64::max)
    }

    #[test]
    fn detects_rendered_faces_close_to_truth() {
        let det = PaletteDetector::new();
        for seed in 0..6u64 {
            let scene = FaceScene::new(Identity::random(seed), Background::random(seed), (384, 384));
            let mut pose = HeadPose::centered(scene.size, 100.0);
            pose.roll_deg = (seed as f64 - 2.5) * 6.0;
            let expr = Expression {
                mouth_open: 0.12 * (seed % 2) as f64,
                smile_left: 0.05,
                ..Expression::neutral()
            };
            let img = scene.render(&pose, &expr, Exec::default());
            let truth = scene.landmarks(&pose, &expr, det.schema()).unwrap();
            let got = det.detect(&img).unwrap();
            // Directly measured points.
            let measured: Vec<usize> = (0..face33::LEN).collect();
            let err = max_err(&got, &truth, &measured);
            assert!(err < 3.5, "seed {seed}: max landmark error {err:.2}px");
            let eyes = max_err(&got, &truth, &[10, 15]);
            assert!(eyes < 0.5, "seed {seed}: eye centre error {eyes:.3}px");
        }
    }

    #[test]
    fn blank_frame_has_no_face() {
        let det = PaletteDetector::new();
        assert_eq!(det.detect(&blank_frame((128, 128))), Err(LandmarkError::NoFaceDetected));
    }

    #[test]
    fn two_faces_are_ambiguous() {
        let det = PaletteDetector::new();
        let scene = FaceScene::new(Identity::random(1), Background::random(1), (200, 200));
        let pose = HeadPose::centered(scene.size, 55.0);
        let one = scene.render(&pose, &Expression::neutral(), Exec::default());
        let mut two = RgbImage::new(400, 200);
        image::imageops::replace(&mut two, &one, 0, 0);
        image::imageops::replace(&mut two, &one, 200, 0);
        assert_eq!(det.detect(&two), Err(LandmarkError::MultipleFaces(2)));
    }
}
