//! Thin-plate spline interpolation in 2-D.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TpsError {
    #[error("need at least 3 control points, got {0}")]
    TooFewPoints(usize),
    #[error("source and target lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite control point or regularization")]
    NonFinite,
    #[error("thin-plate system is rank deficient (condition {0:.3e})")]
    SingularSystem(f64),
}

/// `f(p) = a0 + A p + sum_i w_i U(|p - c_i|)` with `U(r) = r^2 ln r`, fitted in
/// normalised coordinates.
#[derive(Debug, Clone)]
pub struct Tps {
    centers: Vec<[f64; 2]>,
    weights: Vec<[f64; 2]>,
    affine: [[f64; 2]; 3],
    origin: [f64; 2],
    scale: f64,
}

fn kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

impl Tps {
    /// Fit `f(src_i) ≈ dst_i`; exact interpolation when `regularization == 0`.
    pub fn fit(src: &[(f64, f64)], dst: &[(f64, f64)], regularization: f64) -> Result<Self, TpsError> {
        let n = src.len();
        if n != dst.len() {
            return Err(TpsError::LengthMismatch(n, dst.len()));
        }
        if n < 3 {
            return Err(TpsError::TooFewPoints(n));
        }
        let finite = |p: &(f64, f64)| p.0.is_finite() && p.1.is_finite();
        if !src.iter().chain(dst).all(finite) || !(regularization >= 0.0 && regularization.is_finite()) {
            return Err(TpsError::NonFinite);
        }
        // Shifting and scaling the inputs leaves the interpolant unchanged
        // (the extra r^2 term is absorbed by the side conditions) but keeps
        // the system well scaled.
        let origin = [
            src.iter().map(|p| p.0).sum::<f64>() / n as f64,
            src.iter().map(|p| p.1).sum::<f64>() / n as f64,
        ];
        let spread = src
            .iter()
            .map(|p| ((p.0 - origin[0]).powi(2) + (p.1 - origin[1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        let scale = if spread > 0.0 { spread } else { 1.0 };
        let centers: Vec<[f64; 2]> = src
            .iter()
            .map(|p| [(p.0 - origin[0]) / scale, (p.1 - origin[1]) / scale])
            .collect();

        let m = n + 3;
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                let dx = centers[i][0] - centers[j][0];
                let dy = centers[i][1] - centers[j][1];
                a[(i, j)] = kernel(dx * dx + dy * dy);
            }
            // Regularization is specified in pixel^2 units of bending energy;
            // carry it into normalised coordinates.
            a[(i, i)] += regularization / (scale * scale);
            a[(i, n)] = 1.0;
            a[(i, n + 1)] = centers[i][0];
            a[(i, n + 2)] = centers[i][1];
            a[(n, i)] = 1.0;
            a[(n + 1, i)] = centers[i][0];
            a[(n + 2, i)] = centers[i][1];
        }
        let svd = a.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin / smax < 1e-12 {
            return Err(TpsError::SingularSystem(if smax > 0.0 { smax / smin } else { f64::INFINITY }));
        }
        let lu = a.lu();
        let mut rhs = DMatrix::<f64>::zeros(m, 2);
        for (i, p) in dst.iter().enumerate() {
            rhs[(i, 0)] = p.0;
            rhs[(i, 1)] = p.1;
        }
        let sol = lu
            .solve(&rhs)
            .ok_or(TpsError::SingularSystem(f64::INFINITY))?;
        let weights = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
        let affine = [
            [sol[(n, 0)], sol[(n, 1)]],
            [sol[(n + 1, 0)], sol[(n + 1, 1)]],
            [sol[(n + 2, 0)], sol[(n + 2, 1)]],
        ];
        Ok(Self {
            centers,
            weights,
            affine,
            origin,
            scale,
        })
    }

    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let u = (x - self.origin[0]) / self.scale;
        let v = (y - self.origin[1]) / self.scale;
        let a = &self.affine;
        let mut fx = a[0][0] + a[1][0] * u + a[2][0] * v;
        let mut fy = a[0][1] + a[1][1] * u + a[2][1] * v;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let k = kernel((u - c[0]).powi(2) + (v - c[1]).powi(2));
            fx += w[0] * k;
            fy += w[1] * k;
        }
        (fx, fy)
    }

    /// `[[dfx/dx, dfx/dy], [dfy/dx, dfy/dy]]`.
    pub fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let u = (x - self.origin[0]) / self.scale;
        let v = (y - self.origin[1]) / self.scale;
        let a = &self.affine;
        let mut j = [[a[1][0], a[2][0]], [a[1][1], a[2][1]]];
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let (du, dv) = (u - c[0], v - c[1]);
            let r2 = du * du + dv * dv;
            if r2 > 0.0 {
                // d/du of r^2 ln r = du (2 ln r + 1) = du (ln r^2 + 1)
                let g = r2.ln() + 1.0;
                j[0][0] += w[0] * du * g;
                j[0][1] += w[0] * dv * g;
                j[1][0] += w[1] * du * g;
                j[1][1] += w[1] * dv * g;
            }
        }
        for row in &mut j {
            for v in row.iter_mut() {
                *v /= self.scale;
            }
        }
        j
    }

    /// Bending energy of the fitted spline (zero for affine maps), in
    /// normalised coordinates.
    pub fn bending_energy(&self) -> f64 {
        let n = self.centers.len();
        let mut e = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dx = self.centers[i][0] - self.centers[j][0];
                let dy = self.centers[i][1] - self.centers[j][1];
                let k = kernel(dx * dx + dy * dy);
                e += k * (self.weights[i][0] * self.weights[j][0] + self.weights[i][1] * self.weights[j][1]);
            }
        }
        e
    }
}

/// Merge control points closer than `tol`, averaging their targets. A
/// closed mouth, for instance, puts both inner-lip landmarks on one pixel.
pub fn merge_coincident(src: &[(f64, f64)], dst: &[(f64, f64)], tol: f64) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let mut groups: Vec<((f64, f64), (f64, f64), usize)> = Vec::new();
    for (s, d) in src.iter().zip(dst) {
        match groups
            .iter_mut()
            .find(|(g, _, _)| (g.0 - s.0).hypot(g.1 - s.1) <= tol)
        {
            Some((_, acc, n)) => {
                acc.0 += d.0;
                acc.1 += d.1;
                *n += 1;
            }
            None => groups.push((*s, *d, 1)),
        }
    }
    groups
        .into_iter()
        .map(|(s, d, n)| (s, (d.0 / n as f64, d.1 / n as f64)))
        .unzip()
}

impl Tps {
    /// [`Tps::fit`] after [`merge_coincident`].
    pub fn fit_merged(src: &[(f64, f64)], dst: &[(f64, f64)], regularization: f64, tol: f64) -> Result<Self, TpsError> {
        if src.len() != dst.len() {
            return Err(TpsError::LengthMismatch(src.len(), dst.len()));
        }
        let (s, d) = merge_coincident(src, dst, tol);
        Self::fit(&s, &d, regularization)
    }
}

/// Largest distance between `f(src_i)` and `dst_i`.
pub fn max_residual(tps: &Tps, src: &[(f64, f64)], dst: &[(f64, f64)]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(s, d)| {
            let (x, y) = tps.eval(s.0, s.1);
            (x - d.0).hypot(y - d.1)
        })
        .fold(0.0, f64::max)
}
