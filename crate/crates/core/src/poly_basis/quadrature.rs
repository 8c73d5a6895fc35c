//! Quadrature on polygons and straight faces.
//!
//! Cells are fan-triangulated from their area centroid; each sub-triangle carries a
//! collapsed (Duffy) Gauss rule built from Gauss–Legendre and Gauss–Jacobi(1, 0)
//! nodes, so every weight is positive and any exactness degree is available.

use nalgebra::{DMatrix, Point2, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mesh::{polygon_area_centroid, Mesh};

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Point2<f64>>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&Point2<f64>) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point2<f64>, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Gauss–Jacobi nodes and weights on `[-1, 1]` for the weight `(1 - x)^alpha (1 + x)^beta`,
/// computed with the Golub–Welsch algorithm.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let fi = i as f64;
        jac[(i, i)] = if i == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * fi + ab) * (2.0 * fi + ab + 2.0))
        };
        if i > 0 {
            let num = 4.0 * fi * (fi + alpha) * (fi + beta) * (fi + ab);
            let s = 2.0 * fi + ab;
            let den = s * s * (s + 1.0) * (s - 1.0);
            let b = (num / den).sqrt();
            jac[(i, i - 1)] = b;
            jac[(i - 1, i)] = b;
        }
    }
    let mu0 = 2f64.powf(ab + 1.0) * gamma_int(alpha + 1.0) * gamma_int(beta + 1.0)
        / gamma_int(ab + 2.0);
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

// Gamma on the small non-negative integers used by the Jacobi weights.
fn gamma_int(x: f64) -> f64 {
    let k = x.round();
    debug_assert!((x - k).abs() < 1e-14 && k >= 1.0);
    (1..k as u64).map(|i| i as f64).product()
}

/// Gauss–Legendre rule on `[0, 1]` exact for polynomials of degree `exactness`.
pub fn gauss_legendre_unit(exactness: usize) -> (Vec<f64>, Vec<f64>) {
    let n = exactness / 2 + 1;
    let (x, w) = gauss_jacobi(n, 0.0, 0.0);
    (
        x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Collapsed Gauss rule on the triangle `(a, b, c)`.
pub fn triangle_rule(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, exactness: usize) -> QuadratureRule {
    let n = exactness / 2 + 1;
    let (xs, ws) = gauss_jacobi(n, 0.0, 0.0);
    let (ys, vs) = gauss_jacobi(n, 1.0, 0.0);
    let (e1, e2) = (b - a, c - a);
    let jac = (e1.x * e2.y - e1.y * e2.x).abs();
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (y, v) in ys.iter().zip(&vs) {
        let eta = 0.5 * (1.0 + y);
        let w_eta = 0.25 * v;
        for (x, w) in xs.iter().zip(&ws) {
            let xi = 0.5 * (1.0 + x);
            let u = xi * (1.0 - eta);
            points.push(a + e1 * u + e2 * eta);
            weights.push(jac * 0.5 * w * w_eta);
        }
    }
    QuadratureRule {
        points,
        weights,
        exactness: 2 * n - 1,
    }
}

/// Fan quadrature of a star-shaped polygon (counter-clockwise vertices).
pub fn polygon_quadrature(pts: &[Point2<f64>], exactness: usize) -> Option<QuadratureRule> {
    let (area, centroid) = polygon_area_centroid(pts);
    if area <= 0.0 {
        return None;
    }
    let m = pts.len();
    let mut rule = QuadratureRule {
        points: Vec::new(),
        weights: Vec::new(),
        exactness: 0,
    };
    for i in 0..m {
        let sub = triangle_rule(centroid, pts[i], pts[(i + 1) % m], exactness);
        rule.exactness = sub.exactness;
        rule.points.extend(sub.points);
        rule.weights.extend(sub.weights);
    }
    Some(rule)
}

pub fn cell_quadrature(mesh: &Mesh, c: usize, exactness: usize) -> Result<QuadratureRule> {
    polygon_quadrature(&mesh.cell_points(c), exactness).ok_or(Error::DegenerateCell { cell: c })
}

/// Gauss–Legendre rule mapped onto the segment `[a, b]`.
pub fn segment_quadrature(a: Point2<f64>, b: Point2<f64>, exactness: usize) -> QuadratureRule {
    let (xs, ws) = gauss_legendre_unit(exactness);
    let len = (b - a).norm();
    QuadratureRule {
        points: xs.iter().map(|&s| a + (b - a) * s).collect(),
        weights: ws.iter().map(|w| w * len).collect(),
        exactness: 2 * (exactness / 2 + 1) - 1,
    }
}

pub fn face_quadrature(mesh: &Mesh, f: usize, exactness: usize) -> QuadratureRule {
    let [a, b] = mesh.face_points(f);
    segment_quadrature(a, b, exactness)
}
