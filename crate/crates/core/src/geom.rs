//! Planar geometry: poses, angles, and the small amount of 2x2 linear
//! algebra the position distributions need.

use serde::{Deserialize, Serialize};

/// Wrap an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Robot pose on the map plane. Units are centimeters and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading, kept in `(-pi, pi]`.
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta: normalize_angle(theta) }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Euclidean distance in the xy plane.
    pub fn distance_xy(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Symmetric 2x2 matrix stored row-major; covariance of a position
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { m: [[a, b], [c, d]] }
    }

    pub fn diag(a: f64, d: f64) -> Self {
        Mat2::new(a, 0.0, 0.0, d)
    }

    pub fn identity() -> Self {
        Mat2::diag(1.0, 1.0)
    }

    pub fn zeros() -> Self {
        Mat2::new(0.0, 0.0, 0.0, 0.0)
    }

    /// Outer product `v v^T`.
    pub fn outer(v: [f64; 2]) -> Self {
        Mat2::new(v[0] * v[0], v[0] * v[1], v[1] * v[0], v[1] * v[1])
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] - o.m[0][0],
            self.m[0][1] - o.m[0][1],
            self.m[1][0] - o.m[1][0],
            self.m[1][1] - o.m[1][1],
        )
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.m[0][0] * s, self.m[0][1] * s, self.m[1][0] * s, self.m[1][1] * s)
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Mat2::new(
            self.m[1][1] / d,
            -self.m[0][1] / d,
            -self.m[1][0] / d,
            self.m[0][0] / d,
        ))
    }

    /// True when symmetric (to rounding) and positive-definite.
    pub fn is_spd(&self) -> bool {
        let sym = (self.m[0][1] - self.m[1][0]).abs()
            <= 1e-9 * (1.0 + self.m[0][1].abs().max(self.m[1][0].abs()));
        sym && self.m[0][0] > 0.0 && self.det() > 0.0
    }

    /// Lower-triangular Cholesky factor; `None` when not positive-definite.
    pub fn cholesky(&self) -> Option<Mat2> {
        if self.m[0][0] <= 0.0 {
            return None;
        }
        let l00 = self.m[0][0].sqrt();
        let l10 = self.m[1][0] / l00;
        let rest = self.m[1][1] - l10 * l10;
        if rest <= 0.0 {
            return None;
        }
        Some(Mat2::new(l00, 0.0, l10, rest.sqrt()))
    }

    /// `L v` for a lower-triangular `L = self`.
    pub fn tri_mul(&self, v: [f64; 2]) -> [f64; 2] {
        [self.m[0][0] * v[0], self.m[1][0] * v[0] + self.m[1][1] * v[1]]
    }
}

/// Log-density of a bivariate Gaussian at `x`.
///
/// Returns `f64::NEG_INFINITY` when the covariance is singular.
pub fn gaussian2_logpdf(x: [f64; 2], mean: [f64; 2], cov: &Mat2) -> f64 {
    let det = cov.det();
    if det <= 0.0 || !det.is_finite() {
        return f64::NEG_INFINITY;
    }
    let inv = match cov.inverse() {
        Some(i) => i,
        None => return f64::NEG_INFINITY,
    };
    let d = [x[0] - mean[0], x[1] - mean[1]];
    let quad = d[0] * (inv.m[0][0] * d[0] + inv.m[0][1] * d[1])
        + d[1] * (inv.m[1][0] * d[0] + inv.m[1][1] * d[1]);
    -0.5 * (quad + det.ln() + 2.0 * (2.0 * std::f64::consts::PI).ln())
}

/// Log-density of a univariate Gaussian.
pub fn gaussian_logpdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// `log(sum(exp(values)))` with the usual max shift; `-inf` for an empty or
/// all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
