//! Pixel-level primitives shared by every stage: float planes, resampling,
//! rotation, separable Gaussian smoothing and Sobel gradients.
//!
//! Frames are stored as [`image::RgbImage`] (8-bit RGB). Anything numeric runs
//! on [`Plane`], a dense row-major `f32` grid.

use image::{imageops, Rgb, RgbImage};

/// Single-channel `f32` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Clamp-to-edge access with signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Luma plane (ITU-R BT.601 weights) of an RGB frame, 0..255 scale.
    pub fn luma(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| luma_of(p.0))
            .collect::<Vec<f32>>();
        Self::from_vec(w as usize, h as usize, data)
    }

    pub fn to_gray_u8(&self) -> image::GrayImage {
        let buf = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("dimensions match buffer")
    }
}

#[inline]
pub fn luma_of(p: [u8; 3]) -> f32 {
    0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32
}

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

/// Bilinear sample of an RGB image at a continuous pixel location.
///
/// Pixel centres sit at integer coordinates. Returns `None` when the point
/// falls outside `[0, W-1] x [0, H-1]` by more than a rounding tolerance.
#[inline]
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> Option<[f32; 3]> {
    const EPS: f64 = 1e-6;
    let (w, h) = img.dimensions();
    let (wf, hf) = ((w - 1) as f64, (h - 1) as f64);
    if !(x >= -EPS && y >= -EPS && x <= wf + EPS && y <= hf + EPS) {
        return None;
    }
    let x = x.clamp(0.0, wf);
    let y = y.clamp(0.0, hf);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64) as f32;
    let fy = (y - y0 as f64) as f32;
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = p00[c] as f32 * (1.0 - fx) + p10[c] as f32 * fx;
        let bot = p01[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    Some(out)
}

#[inline]
pub fn to_rgb8(c: [f32; 3]) -> Rgb<u8> {
    Rgb([
        c[0].round().clamp(0.0, 255.0) as u8,
        c[1].round().clamp(0.0, 255.0) as u8,
        c[2].round().clamp(0.0, 255.0) as u8,
    ])
}

/// Rotate image content counterclockwise (as displayed, y axis pointing down)
/// by `deg` about the image centre. Uncovered pixels become black.
pub fn rotate_ccw(img: &RgbImage, deg: f64) -> RgbImage {
    if deg == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (s, c) = deg.to_radians().sin_cos();
    RgbImage::from_fn(w, h, |x, y| {
        // Inverse map: output pixel -> source pixel (rotate clockwise on screen).
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + c * dx - s * dy;
        let sy = cy + s * dx + c * dy;
        sample_bilinear(img, sx, sy)
            .map(to_rgb8)
            .unwrap_or(Rgb([0, 0, 0]))
    })
}

/// Rotate a point the same way [`rotate_ccw`] moves image content.
pub fn rotate_point_ccw(p: (f64, f64), center: (f64, f64), deg: f64) -> (f64, f64) {
    let (s, c) = deg.to_radians().sin_cos();
    let dx = p.0 - center.0;
    let dy = p.1 - center.1;
    (center.0 + c * dx + s * dy, center.1 - s * dx + c * dy)
}

/// Resize with area averaging when shrinking and bilinear interpolation when
/// enlarging (per axis pair: shrink if the target is not larger on both axes).
pub fn resize(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    if (w, h) == (width, height) {
        img.clone()
    } else if width <= w && height <= h {
        resize_area(img, width, height)
    } else {
        resize_bilinear(img, width, height)
    }
}

/// Box-filter downscale with exact fractional pixel coverage.
pub fn resize_area(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let sx = w as f64 / width as f64;
    let sy = h as f64 / height as f64;
    let xs = coverage_table(w, width, sx);
    let ys = coverage_table(h, height, sy);
    RgbImage::from_fn(width, height, |x, y| {
        let mut acc = [0.0f64; 3];
        let mut total = 0.0;
        for &(iy, wy) in &ys[y as usize] {
            for &(ix, wx) in &xs[x as usize] {
                let p = img.get_pixel(ix, iy).0;
                let wgt = wx * wy;
                for c in 0..3 {
                    acc[c] += p[c] as f64 * wgt;
                }
                total += wgt;
            }
        }
        to_rgb8([
            (acc[0] / total) as f32,
            (acc[1] / total) as f32,
            (acc[2] / total) as f32,
        ])
    })
}

fn coverage_table(src: u32, dst: u32, scale: f64) -> Vec<Vec<(u32, f64)>> {
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = ((o + 1) as f64 * scale).min(src as f64);
            let mut v = Vec::new();
            let mut i = lo.floor() as u32;
            while (i as f64) < hi && i < src {
                let a = lo.max(i as f64);
                let b = hi.min(i as f64 + 1.0);
                if b > a {
                    v.push((i, b - a));
                }
                i += 1;
            }
            v
        })
        .collect()
}

/// Bilinear resize using pixel-centre alignment.
pub fn resize_bilinear(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let sx = w as f64 / width as f64;
    let sy = h as f64 / height as f64;
    RgbImage::from_fn(width, height, |x, y| {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        to_rgb8(sample_bilinear(img, fx, fy).expect("clamped inside"))
    })
}

/// Bicubic (Catmull-Rom) resize.
pub fn resize_bicubic(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    imageops::resize(img, width, height, imageops::FilterType::CatmullRom)
}

/// Normalised 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let two_s2 = 2.0 * sigma * sigma;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / two_s2).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(plane: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return plane.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (plane.width(), plane.height());
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane.get_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp.get_clamped(x as isize, y as isize + i as isize - r);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// 3x3 Sobel gradients `(gx, gy)` with clamp-to-edge borders.
pub fn sobel(plane: &Plane) -> (Plane, Plane) {
    let (w, h) = (plane.width(), plane.height());
    let mut gx = Plane::new(w, h);
    let mut gy = Plane::new(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| plane.get_clamped(x + dx, y + dy);
            let vx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let vy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx.set(x as usize, y as usize, vx);
            gy.set(x as usize, y as usize, vy);
        }
    }
    (gx, gy)
}

/// Variance of the 4-neighbour Laplacian (interior pixels only).
pub fn laplacian_variance(plane: &Plane) -> f64 {
    let (w, h) = (plane.width(), plane.height());
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut sum = 0.0f64;
    let mut sum2 = 0.0f64;
    let mut n = 0.0f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let l = (plane.get(x - 1, y) + plane.get(x + 1, y) + plane.get(x, y - 1)
                + plane.get(x, y + 1)
                - 4.0 * plane.get(x, y)) as f64;
            sum += l;
            sum2 += l * l;
            n += 1.0;
        }
    }
    let mean = sum / n;
    (sum2 / n - mean * mean).max(0.0)
}

/// Gaussian blur of each channel of an RGB image.
pub fn blur_rgb(img: &RgbImage, sigma: f32) -> RgbImage {
    let (w, h) = img.dimensions();
    let channels: Vec<Plane> = (0..3)
        .map(|c| {
            let p = Plane::from_vec(
                w as usize,
                h as usize,
                img.pixels().map(|px| px.0[c] as f32).collect(),
            );
            gaussian_blur(&p, sigma)
        })
        .collect();
    RgbImage::from_fn(w, h, |x, y| {
        to_rgb8([
            channels[0].get(x as usize, y as usize),
            channels[1].get(x as usize, y as usize),
            channels[2].get(x as usize, y as usize),
        ])
    })
}

/// Mean absolute difference between two equally sized images over pixels
/// where `include` is true, on the 0..255 scale, averaged over channels.
pub fn mean_abs_diff(a: &RgbImage, b: &RgbImage, include: Option<&Mask>) -> f64 {
    assert_eq!(a.dimensions(), b.dimensions());
    let w = a.width() as usize;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.pixels().zip(b.pixels()).enumerate() {
        if let Some(m) = include {
            if !m.get(i % w, i / w) {
                continue;
            }
        }
        for c in 0..3 {
            sum += (pa.0[c] as f64 - pb.0[c] as f64).abs();
        }
        n += 3;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = ((x * 7 + y * 13) % 251) as u8;
            Rgb([v, v.wrapping_mul(3), 255 - v])
        })
    }

    #[test]
    fn area_resize_of_constant_is_constant() {
        let img = RgbImage::from_pixel(37, 23, Rgb([10, 200, 77]));
        let out = resize_area(&img, 11, 7);
        assert!(out.pixels().all(|p| p.0 == [10, 200, 77]));
    }

    #[test]
    fn area_resize_halves_by_averaging_blocks() {
        let img = RgbImage::from_fn(4, 2, |x, _| Rgb([(x * 10) as u8, 0, 0]));
        let out = resize_area(&img, 2, 1);
        assert_eq!(out.get_pixel(0, 0).0[0], 5);
        assert_eq!(out.get_pixel(1, 0).0[0], 25);
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = checker(16, 9);
        assert_eq!(resize(&img, 16, 9), img);
    }

    #[test]
    fn zero_rotation_is_identity_and_full_turn_close() {
        let img = checker(21, 21);
        assert_eq!(rotate_ccw(&img, 0.0), img);
        let back = rotate_ccw(&rotate_ccw(&img, 90.0), -90.0);
        // Interior survives two exact quarter turns.
        for y in 2..19 {
            for x in 2..19 {
                assert_eq!(back.get_pixel(x, y), img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn rotate_point_matches_image_rotation() {
        let mut img = RgbImage::new(41, 41);
        img.put_pixel(30, 20, Rgb([255, 255, 255]));
        let rot = rotate_ccw(&img, 90.0);
        let (px, py) = rotate_point_ccw((30.0, 20.0), (20.0, 20.0), 90.0);
        assert!((px - 20.0).abs() < 1e-9 && (py - 10.0).abs() < 1e-9);
        assert_eq!(rot.get_pixel(20, 10).0, [255, 255, 255]);
    }

    #[test]
    fn gaussian_kernel_is_normalised() {
        let k = gaussian_kernel(1.4);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn laplacian_variance_drops_after_blur() {
        let p = Plane::luma(&checker(32, 32));
        let b = gaussian_blur(&p, 2.0);
        assert!(laplacian_variance(&b) < laplacian_variance(&p));
    }

    #[test]
    fn bilinear_sample_bounds() {
        let img = checker(4, 4);
        assert!(sample_bilinear(&img, 3.0, 3.0).is_some());
        assert!(sample_bilinear(&img, 3.01, 0.0).is_none());
        assert!(sample_bilinear(&img, -0.01, 0.0).is_none());
        let mid = sample_bilinear(&img, 0.5, 0.0).unwrap();
        let a = img.get_pixel(0, 0).0[0] as f32;
        let b = img.get_pixel(1, 0).0[0] as f32;
        assert!((mid[0] - (a + b) / 2.0).abs() < 1e-4);
    }
}
