//! Procedural face model used for fixtures, the template bank of the
//! reference generator, and the embedding population.
//!
//! A face is an [`Identity`] (appearance and proportions) posed by a
//! [`HeadPose`] and deformed by an [`Expression`]. Geometry lives in a
//! face-local frame whose unit is the inter-ocular distance, with the origin at
//! the centre of the face ellipse and `v` pointing down. Because the renderer
//! owns the geometry it also emits exact landmarks, which makes it the ground
//! truth oracle for detector and motion tests.
//!
//! The palette is constrained so that pixel classes are separable by colour:
//! skin is warm (R well above B), lips are saturated red, and brows, eyes,
//! nostrils and the mouth interior are neither. The reference detector relies
//! on this.

use std::f64::consts::PI;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::landmarks::{face33, LandmarkError, LandmarkSchema, LandmarkSet, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amp: f32,
    pub fu: f64,
    pub fv: f64,
    pub phase: f64,
}

impl Wave {
    #[inline]
    fn eval(&self, u: f64, v: f64) -> f32 {
        self.amp * (2.0 * PI * (self.fu * u + self.fv * v) + self.phase).sin() as f32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub seed: u64,
    pub skin: [f32; 3],
    pub lip: [f32; 3],
    pub brow: [f32; 3],
    pub iris: [f32; 3],
    pub face_half_w: f64,
    pub face_half_h: f64,
    pub eye_y: f64,
    pub eye_half_w: f64,
    pub eye_half_h: f64,
    pub iris_r: f64,
    pub brow_gap: f64,
    pub brow_arch: f64,
    pub brow_half_thick: f64,
    pub nostril_y: f64,
    pub nostril_dx: f64,
    pub mouth_y: f64,
    pub mouth_half_w: f64,
    pub lip_thick: f64,
    pub texture: Vec<Wave>,
}

const SCLERA: [f32; 3] = [236.0, 234.0, 228.0];
const PUPIL: [f32; 3] = [18.0, 18.0, 24.0];
const NOSTRIL: [f32; 3] = [68.0, 40.0, 38.0];
const MOUTH_INNER: [f32; 3] = [66.0, 24.0, 34.0];

impl Identity {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d3a_7f00_c0ff_ee00);
        let r = rng.random_range(170.0..235.0f32);
        let skin = [r, r - rng.random_range(35.0..52.0), r - rng.random_range(55.0..80.0)];
        let lip = [
            rng.random_range(170.0..205.0),
            rng.random_range(55.0..80.0),
            rng.random_range(65.0..90.0),
        ];
        let br = rng.random_range(40.0..66.0f32);
        let brow = [br, br - rng.random_range(3.0..10.0), br - rng.random_range(5.0..15.0)];
        let iris = [
            rng.random_range(40.0..72.0),
            rng.random_range(50.0..85.0),
            rng.random_range(60.0..110.0),
        ];
        let texture = (0..6)
            .map(|_| {
                let f = rng.random_range(0.5..2.2);
                let a = rng.random_range(0.0..PI);
                Wave {
                    amp: rng.random_range(3.0..6.0),
                    fu: f * a.cos(),
                    fv: f * a.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Self {
            seed,
            skin,
            lip,
            brow,
            iris,
            face_half_w: rng.random_range(0.9..1.02),
            face_half_h: rng.random_range(1.18..1.32),
            eye_y: rng.random_range(-0.24..-0.16),
            eye_half_w: rng.random_range(0.19..0.23),
            eye_half_h: rng.random_range(0.085..0.105),
            iris_r: rng.random_range(0.065..0.08),
            brow_gap: rng.random_range(0.22..0.30),
            brow_arch: rng.random_range(0.02..0.05),
            brow_half_thick: rng.random_range(0.028..0.04),
            nostril_y: rng.random_range(0.26..0.34),
            nostril_dx: rng.random_range(0.09..0.12),
            mouth_y: rng.random_range(0.58..0.68),
            mouth_half_w: rng.random_range(0.27..0.34),
            lip_thick: rng.random_range(0.055..0.075),
            texture,
        }
    }

    fn skin_at(&self, u: f64, v: f64) -> [f32; 3] {
        let t: f32 = self.texture.iter().map(|w| w.eval(u, v)).sum();
        let r2 = (u / self.face_half_w).powi(2) + (v / self.face_half_h).powi(2);
        let shade = 1.0 - 0.12 * r2.min(1.0) as f32;
        [
            (self.skin[0] + t) * shade,
            (self.skin[1] + 0.9 * t) * shade,
            (self.skin[2] + 0.8 * t) * shade,
        ]
    }
}

/// Expression controls; "left"/"right" are image sides of an upright face.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Expression {
    pub mouth_open: f64,
    pub smile_left: f64,
    pub smile_right: f64,
    pub brow_left: f64,
    pub brow_right: f64,
    pub blink_left: f64,
    pub blink_right: f64,
}

impl Expression {
    pub fn neutral() -> Self {
        Self::default()
    }
}

/// Placement of the face in the image: centre of the face ellipse, scale in
/// pixels per inter-ocular unit, and on-screen counterclockwise roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub cx: f64,
    pub cy: f64,
    pub iod: f64,
    pub roll_deg: f64,
}

impl HeadPose {
    pub fn centered(size: (u32, u32), iod: f64) -> Self {
        Self {
            cx: (size.0 as f64 - 1.0) / 2.0,
            cy: (size.1 as f64 - 1.0) / 2.0,
            iod,
            roll_deg: 0.0,
        }
    }

    #[inline]
    fn to_image(&self, u: f64, v: f64) -> Point {
        let (s, c) = self.roll_deg.to_radians().sin_cos();
        Point::new(
            self.cx + self.iod * (c * u + s * v),
            self.cy + self.iod * (-s * u + c * v),
        )
    }

    #[inline]
    fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.roll_deg.to_radians().sin_cos();
        let dx = (x - self.cx) / self.iod;
        let dy = (y - self.cy) / self.iod;
        (c * dx - s * dy, s * dx + c * dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub base: [f32; 3],
    pub waves: Vec<Wave>,
}

impl Background {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb4c6_0000_0000_0001);
        let r = rng.random_range(95.0..140.0f32);
        let base = [r, r + rng.random_range(5.0..15.0), r + rng.random_range(18.0..35.0)];
        let waves = (0..3)
            .map(|_| {
                let f = rng.random_range(1.0 / 450.0..1.0 / 200.0);
                let a = rng.random_range(0.0..PI);
                Wave {
                    amp: rng.random_range(2.0..4.0),
                    fu: f * a.cos(),
                    fv: f * a.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect();
        Self { base, waves }
    }

    pub fn flat(base: [f32; 3]) -> Self {
        Self {
            base,
            waves: Vec::new(),
        }
    }

    fn at(&self, x: f64, y: f64) -> [f32; 3] {
        let t: f32 = self.waves.iter().map(|w| w.eval(x, y)).sum();
        [self.base[0] + t, self.base[1] + t, self.base[2] + t]
    }
}

/// Resolved face-local geometry for one (identity, expression) pair.
#[derive(Debug, Clone)]
struct Geometry {
    a: f64,
    b: f64,
    eyes: [(Point, f64, f64); 2], // centre, half width, half height
    iris_r: f64,
    brows: [[Point; 3]; 2],       // left: outer, mid, inner / right: inner, mid, outer
    brow_half_thick: f64,
    nostrils: [Point; 2],
    mouth_left: Point,
    mouth_right: Point,
    mouth_open: f64,
    lip_thick: f64,
    nose_bridge: Point,
    nose_tip: Point,
}

impl Geometry {
    fn new(id: &Identity, e: &Expression) -> Self {
        let ew = id.eye_half_w;
        let ey = id.eye_y;
        let eh_l = id.eye_half_h * (1.0 - e.blink_left.clamp(0.0, 0.8));
        let eh_r = id.eye_half_h * (1.0 - e.blink_right.clamp(0.0, 0.8));
        let by = ey - id.brow_gap;
        let left_brow = [
            Point::new(-0.5 - ew * 1.15, by + 0.03 - e.brow_left),
            Point::new(-0.5, by - id.brow_arch - e.brow_left),
            Point::new(-0.5 + ew * 0.95, by + 0.01 - e.brow_left),
        ];
        let right_brow = [
            Point::new(0.5 - ew * 0.95, by + 0.01 - e.brow_right),
            Point::new(0.5, by - id.brow_arch - e.brow_right),
            Point::new(0.5 + ew * 1.15, by + 0.03 - e.brow_right),
        ];
        // Keep the outer brow tips a stroke width inside the face outline.
        let tip = |p: Point| {
            let room = 1.0 - (p.y / id.face_half_h).powi(2);
            let max_x = id.face_half_w * room.max(0.0).sqrt() - 1.5 * id.brow_half_thick;
            Point::new(p.x.clamp(-max_x, max_x), p.y)
        };
        let left_brow = [tip(left_brow[0]), left_brow[1], left_brow[2]];
        let right_brow = [right_brow[0], right_brow[1], tip(right_brow[2])];
        Self {
            a: id.face_half_w,
            b: id.face_half_h,
            eyes: [(Point::new(-0.5, ey), ew, eh_l), (Point::new(0.5, ey), ew, eh_r)],
            iris_r: id.iris_r,
            brows: [left_brow, right_brow],
            brow_half_thick: id.brow_half_thick,
            nostrils: [
                Point::new(-id.nostril_dx, id.nostril_y),
                Point::new(id.nostril_dx, id.nostril_y),
            ],
            mouth_left: Point::new(
                -id.mouth_half_w - 0.25 * e.smile_left,
                id.mouth_y - e.smile_left,
            ),
            mouth_right: Point::new(
                id.mouth_half_w + 0.25 * e.smile_right,
                id.mouth_y - e.smile_right,
            ),
            mouth_open: e.mouth_open.max(0.0),
            lip_thick: id.lip_thick,
            nose_bridge: Point::new(0.0, ey + 0.12),
            nose_tip: Point::new(0.0, id.nostril_y - 0.07),
        }
    }

    fn landmarks_local(&self) -> Vec<Point> {
        let mut p = vec![Point::default(); face33::LEN];
        p[0..3].copy_from_slice(&self.brows[0]);
        p[3..6].copy_from_slice(&self.brows[1]);
        let (lc, lw, lh) = self.eyes[0];
        p[6] = Point::new(lc.x - lw, lc.y);
        p[7] = Point::new(lc.x, lc.y - lh);
        p[8] = Point::new(lc.x + lw, lc.y);
        p[9] = Point::new(lc.x, lc.y + lh);
        p[10] = lc;
        let (rc, rw, rh) = self.eyes[1];
        p[11] = Point::new(rc.x - rw, rc.y);
        p[12] = Point::new(rc.x, rc.y - rh);
        p[13] = Point::new(rc.x + rw, rc.y);
        p[14] = Point::new(rc.x, rc.y + rh);
        p[15] = rc;
        p[16] = self.nose_bridge;
        p[17] = self.nose_tip;
        p[18] = self.nostrils[0];
        p[19] = self.nostrils[1];
        p[20] = self.mouth_left;
        p[21] = self.mouth_right;
        let mid = self.mouth_left.midpoint(self.mouth_right);
        let oh = self.mouth_open / 2.0;
        p[22] = Point::new(mid.x, mid.y - oh - self.lip_thick);
        p[23] = Point::new(mid.x, mid.y + oh + self.lip_thick);
        p[24] = Point::new(mid.x, mid.y - oh);
        p[25] = Point::new(mid.x, mid.y + oh);
        for (k, slot) in p[26..33].iter_mut().enumerate() {
            let th = PI - k as f64 * PI / 6.0;
            *slot = Point::new(self.a * th.cos(), self.b * th.sin());
        }
        p
    }

    #[inline]
    fn classify(&self, u: f64, v: f64) -> Layer {
        if (u / self.a).powi(2) + (v / self.b).powi(2) > 1.0 {
            return Layer::Background;
        }
        for brow in &self.brows {
            if seg_dist(u, v, brow[0], brow[1]).min(seg_dist(u, v, brow[1], brow[2]))
                <= self.brow_half_thick
            {
                return Layer::Brow;
            }
        }
        for &(c, ew, eh) in &self.eyes {
            let du = u - c.x;
            let dv = v - c.y;
            if (du / ew).powi(2) + (dv / eh).powi(2) <= 1.0 {
                let r = du.hypot(dv);
                return if r <= 0.45 * self.iris_r {
                    Layer::Pupil
                } else if r <= self.iris_r {
                    Layer::Iris
                } else {
                    Layer::Sclera
                };
            }
        }
        for n in &self.nostrils {
            if ((u - n.x) / 0.05).powi(2) + ((v - n.y) / 0.03).powi(2) <= 1.0 {
                return Layer::Nostril;
            }
        }
        let (l, r) = (self.mouth_left, self.mouth_right);
        if u > l.x && u < r.x {
            let t = (u - l.x) / (r.x - l.x);
            let yb = l.y + t * (r.y - l.y);
            let g = (4.0 * t * (1.0 - t)).sqrt();
            let oh = self.mouth_open / 2.0 * g;
            let lip = self.lip_thick * g;
            if v > yb - oh - lip && v < yb + oh + lip {
                return if v > yb - oh && v < yb + oh {
                    Layer::MouthInner
                } else {
                    Layer::Lip
                };
            }
        }
        Layer::Skin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Background,
    Skin,
    Brow,
    Sclera,
    Iris,
    Pupil,
    Nostril,
    Lip,
    MouthInner,
}

fn seg_dist(u: f64, v: f64, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((u - a.x) * dx + (v - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (u - a.x - t * dx).hypot(v - a.y - t * dy)
}

/// Everything needed to draw one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceScene {
    pub identity: Identity,
    pub background: Background,
    pub size: (u32, u32),
}

impl FaceScene {
    pub fn new(identity: Identity, background: Background, size: (u32, u32)) -> Self {
        Self {
            identity,
            background,
            size,
        }
    }

    /// Render with 3x3 supersampling at feature boundaries.
    pub fn render(&self, pose: &HeadPose, expr: &Expression, exec: Exec) -> RgbImage {
        let geo = Geometry::new(&self.identity, expr);
        let (w, h) = self.size;
        let mut buf = vec![0u8; (w * h * 3) as usize];
        let id = &self.identity;
        let reach = 1.0 + 3.0 / (pose.iod * geo.a.min(geo.b));
        exec.for_each_row(&mut buf, (w * 3) as usize, |y, row| {
            for x in 0..w as usize {
                let (xf, yf) = (x as f64, y as f64);
                let (u0, v0) = pose.to_local(xf, yf);
                let out = if (u0 / geo.a).powi(2) + (v0 / geo.b).powi(2) > reach * reach {
                    self.background.at(xf, yf)
                } else {
                    let skin = id.skin_at(u0, v0);
                    let bg = self.background.at(xf, yf);
                    let mut acc = [0.0f32; 3];
                    for sy in [-1.0 / 3.0, 0.0, 1.0 / 3.0] {
                        for sx in [-1.0 / 3.0, 0.0, 1.0 / 3.0] {
                            let (u, v) = pose.to_local(xf + sx, yf + sy);
                            let c = match geo.classify(u, v) {
                                Layer::Background => bg,
                                Layer::Skin => skin,
                                Layer::Brow => id.brow,
                                Layer::Sclera => SCLERA,
                                Layer::Iris => id.iris,
                                Layer::Pupil => PUPIL,
                                Layer::Nostril => NOSTRIL,
                                Layer::Lip => id.lip,
                                Layer::MouthInner => MOUTH_INNER,
                            };
                            for k in 0..3 {
                                acc[k] += c[k];
                            }
                        }
                    }
                    [acc[0] / 9.0, acc[1] / 9.0, acc[2] / 9.0]
                };
                for k in 0..3 {
                    row[x * 3 + k] = out[k].round().clamp(0.0, 255.0) as u8;
                }
            }
        });
        RgbImage::from_raw(w, h, buf).expect("buffer sized to frame")
    }

    /// Landmarks in face-local units (inter-ocular distance 1, eye midpoint
    /// at the origin, upright).
    pub fn local_landmarks(&self, expr: &Expression) -> Vec<Point> {
        Geometry::new(&self.identity, expr).landmarks_local()
    }

    /// Exact landmarks of the rendered face.
    pub fn landmarks(
        &self,
        pose: &HeadPose,
        expr: &Expression,
        schema: Arc<LandmarkSchema>,
    ) -> Result<LandmarkSet, LandmarkError> {
        let geo = Geometry::new(&self.identity, expr);
        let pts = geo
            .landmarks_local()
            .into_iter()
            .map(|p| pose.to_image(p.x, p.y))
            .collect();
        LandmarkSet::from_points(pts, self.size, schema)
    }
}

/// Which side of the face a unilateral weakness affects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// One frame of a scripted performance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub pose: HeadPose,
    pub expr: Expression,
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Scripted facial-exam performance: rest, then a smile with raised brows
/// held to the end, a short mouth opening, idle head sway and blinks. An
/// affected side moves at a fraction of the healthy amplitude.
pub fn exam_script(
    n_frames: usize,
    base: HeadPose,
    affected: Option<Side>,
    seed: u64,
) -> Vec<Keyframe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5c41_9700_0000_0000);
    let smile = rng.random_range(0.07..0.1);
    let brow = rng.random_range(0.05..0.08);
    let open = rng.random_range(0.1..0.18);
    let weak = 0.15;
    let (ls, rs) = match affected {
        Some(Side::Left) => (weak, 1.0),
        Some(Side::Right) => (1.0, weak),
        None => (1.0, 1.0),
    };
    let sway = base.iod * rng.random_range(0.02..0.05);
    let sway_f = rng.random_range(0.6..1.4);
    let sway_ph = rng.random_range(0.0..2.0 * PI);
    let blinks: Vec<f64> = (0..2).map(|_| rng.random_range(0.1..0.9)).collect();
    (0..n_frames)
        .map(|i| {
            let t = if n_frames > 1 {
                i as f64 / (n_frames - 1) as f64
            } else {
                0.0
            };
            let env = smoothstep(0.15, 0.45, t);
            let bump = smoothstep(0.5, 0.58, t) * (1.0 - smoothstep(0.62, 0.7, t));
            let blink = blinks
                .iter()
                .map(|&bt| (1.0 - ((t - bt) * n_frames as f64 / 3.0).abs()).max(0.0))
                .fold(0.0, f64::max)
                * 0.6;
            let wobble = (2.0 * PI * sway_f * t + sway_ph).sin();
            Keyframe {
                pose: HeadPose {
                    cx: base.cx + sway * wobble,
                    cy: base.cy + 0.5 * sway * (2.0 * PI * sway_f * t).sin(),
                    ..base
                },
                expr: Expression {
                    mouth_open: open * bump,
                    smile_left: smile * env * ls,
                    smile_right: smile * env * rs,
                    brow_left: brow * env * ls,
                    brow_right: brow * env * rs,
                    blink_left: blink,
                    blink_right: blink,
                },
            }
        })
        .collect()
}

/// Render a scripted clip and its exact landmarks.
pub fn render_script(
    scene: &FaceScene,
    script: &[Keyframe],
    schema: Arc<LandmarkSchema>,
    exec: Exec,
) -> Result<(Vec<RgbImage>, Vec<LandmarkSet>), LandmarkError> {
    let frames = exec.map(script, |k| scene.render(&k.pose, &k.expr, Exec::Sequential));
    let lms = script
        .iter()
        .map(|k| scene.landmarks(&k.pose, &k.expr, schema.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((frames, lms))
}

/// Plain mid-gray frame, handy as a degenerate "no face" input.
pub fn blank_frame(size: (u32, u32)) -> RgbImage {
    RgbImage::from_pixel(size.0, size.1, Rgb([128, 128, 128]))
}
