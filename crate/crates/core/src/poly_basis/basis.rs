//! Scaled monomial bases on cells and faces.
//!
//! Cell monomials are `((x - x_T) / h_T)^a ((y - y_T) / h_T)^b` in graded order, face
//! monomials are powers of the arc-length coordinate centred at the face midpoint and
//! scaled by `h_F`. The orthonormal variant applies the inverse Cholesky factor of the
//! monomial Gram matrix; since the transform is lower triangular, the first
//! `dim P^l` functions of a degree-`m` orthonormal basis span `P^l` for every `l <= m`.

use nalgebra::{DMatrix, DVector, Matrix2, Point2, Vector2};

use super::quadrature::{cell_quadrature, face_quadrature, QuadratureRule};
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Dimension of `P^l` in two variables.
pub const fn dim_cell(l: usize) -> usize {
    (l + 1) * (l + 2) / 2
}

/// Dimension of `P^l` on a segment.
pub const fn dim_face(l: usize) -> usize {
    l + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Monomial,
    Orthonormal,
}

/// Exponents of the graded monomial ordering of `P^l(R^2)`.
pub fn monomial_exponents(l: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::with_capacity(dim_cell(l));
    for d in 0..=l {
        for b in 0..=d {
            e.push((d - b, b));
        }
    }
    e
}

#[derive(Debug, Clone)]
pub struct CellBasis {
    degree: usize,
    center: Point2<f64>,
    scale: f64,
    exps: Vec<(usize, usize)>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    transform: Option<DMatrix<f64>>,
}

impl CellBasis {
    pub fn new(mesh: &Mesh, c: usize, degree: usize, kind: BasisKind) -> Result<Self> {
        let cell = mesh.cell(c);
        let mut basis = Self {
            degree,
            center: cell.centroid,
            scale: cell.diameter,
            exps: monomial_exponents(degree),
            transform: None,
        };
        if kind == BasisKind::Orthonormal {
            let rule = cell_quadrature(mesh, c, 2 * degree)?;
            basis.transform = Some(inverse_cholesky(&mass_matrix(&basis, &rule), "cell Gram")?);
        }
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    pub fn center(&self) -> Point2<f64> {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_orthonormal(&self) -> bool {
        self.transform.is_some()
    }

    fn powers(&self, x: &Point2<f64>) -> (Vec<f64>, Vec<f64>) {
        let xi = (x.x - self.center.x) / self.scale;
        let eta = (x.y - self.center.y) / self.scale;
        let mut px = vec![1.0; self.degree + 1];
        let mut py = vec![1.0; self.degree + 1];
        for i in 1..=self.degree {
            px[i] = px[i - 1] * xi;
            py[i] = py[i - 1] * eta;
        }
        (px, py)
    }

    fn apply(&self, mono: DVector<f64>) -> DVector<f64> {
        match &self.transform {
            Some(t) => t * mono,
            None => mono,
        }
    }

    /// Values of all basis functions at `x`.
    pub fn eval(&self, x: &Point2<f64>) -> DVector<f64> {
        let (px, py) = self.powers(x);
        self.apply(DVector::from_iterator(
            self.dim(),
            self.exps.iter().map(|&(a, b)| px[a] * py[b]),
        ))
    }

    /// Values and the two partial derivatives of all basis functions at `x`.
    pub fn eval_with_grad(&self, x: &Point2<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let (px, py) = self.powers(x);
        let n = self.dim();
        let inv = 1.0 / self.scale;
        let mut v = DVector::zeros(n);
        let mut dx = DVector::zeros(n);
        let mut dy = DVector::zeros(n);
        for (i, &(a, b)) in self.exps.iter().enumerate() {
            v[i] = px[a] * py[b];
            if a > 0 {
                dx[i] = a as f64 * px[a - 1] * py[b] * inv;
            }
            if b > 0 {
                dy[i] = b as f64 * px[a] * py[b - 1] * inv;
            }
        }
        (self.apply(v), self.apply(dx), self.apply(dy))
    }

    /// Evaluates the polynomial with coefficients `coef` (a prefix of the basis).
    pub fn eval_poly(&self, coef: &[f64], x: &Point2<f64>) -> f64 {
        let v = self.eval(x);
        coef.iter().zip(v.iter()).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FaceBasis {
    degree: usize,
    center: Point2<f64>,
    tangent: Vector2<f64>,
    scale: f64,
    transform: Option<DMatrix<f64>>,
}

impl FaceBasis {
    pub fn new(mesh: &Mesh, f: usize, degree: usize, kind: BasisKind) -> Result<Self> {
        let face = mesh.face(f);
        let mut basis = Self {
            degree,
            center: face.midpoint,
            tangent: face.tangent,
            scale: face.length,
            transform: None,
        };
        if kind == BasisKind::Orthonormal {
            let rule = face_quadrature(mesh, f, 2 * degree);
            basis.transform = Some(inverse_cholesky(&face_mass_matrix(&basis, &rule), "face Gram")?);
        }
        Ok(basis)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.degree + 1
    }

    pub fn eval(&self, x: &Point2<f64>) -> DVector<f64> {
        let s = (x - self.center).dot(&self.tangent) / self.scale;
        let mut mono = DVector::zeros(self.dim());
        let mut p = 1.0;
        for i in 0..self.dim() {
            mono[i] = p;
            p *= s;
        }
        match &self.transform {
            Some(t) => t * mono,
            None => mono,
        }
    }
}

fn inverse_cholesky(gram: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = gram.clone().cholesky().ok_or(Error::Singular(what))?;
    let l = chol.l();
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::Singular(what))
}

/// `M_ij = (phi_i, phi_j)_T`.
pub fn mass_matrix(basis: &CellBasis, rule: &QuadratureRule) -> DMatrix<f64> {
    let n = basis.dim();
    let mut m = DMatrix::zeros(n, n);
    for (x, w) in rule.iter() {
        let v = basis.eval(x);
        m.syger(w, &v, &v, 1.0);
    }
    m.fill_upper_triangle_with_lower_triangle();
    m
}

/// `S_ij = (K grad phi_j, grad phi_i)_T`, with `K = Id` when `weight` is `None`.
pub fn stiffness_matrix(basis: &CellBasis, rule: &QuadratureRule, weight: Option<&Matrix2<f64>>) -> DMatrix<f64> {
    let n = basis.dim();
    let k = weight.copied().unwrap_or_else(Matrix2::identity);
    let mut s = DMatrix::zeros(n, n);
    for (x, w) in rule.iter() {
        let (_, dx, dy) = basis.eval_with_grad(x);
        let kx = &dx * k[(0, 0)] + &dy * k[(0, 1)];
        let ky = &dx * k[(1, 0)] + &dy * k[(1, 1)];
        s.ger(w, &kx, &dx, 1.0);
        s.ger(w, &ky, &dy, 1.0);
    }
    s
}

pub fn face_mass_matrix(basis: &FaceBasis, rule: &QuadratureRule) -> DMatrix<f64> {
    let n = basis.dim();
    let mut m = DMatrix::zeros(n, n);
    for (x, w) in rule.iter() {
        let v = basis.eval(x);
        m.syger(w, &v, &v, 1.0);
    }
    m.fill_upper_triangle_with_lower_triangle();
    m
}

/// Coefficients of the `L^2(T)`-orthogonal projection of `f` onto the span of `basis`.
pub fn l2_project_cell(
    f: impl Fn(&Point2<f64>) -> f64,
    basis: &CellBasis,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    let mut rhs = DVector::zeros(basis.dim());
    for (x, w) in rule.iter() {
        rhs.axpy(w * f(x), &basis.eval(x), 1.0);
    }
    if basis.is_orthonormal() {
        return Ok(rhs);
    }
    mass_matrix(basis, rule)
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::Singular("cell projection Gram"))
}

/// Coefficients of the `L^2(F)`-orthogonal projection of `f` onto the span of `basis`.
pub fn l2_project_face(
    f: impl Fn(&Point2<f64>) -> f64,
    basis: &FaceBasis,
    rule: &QuadratureRule,
) -> Result<DVector<f64>> {
    let mut rhs = DVector::zeros(basis.dim());
    for (x, w) in rule.iter() {
        rhs.axpy(w * f(x), &basis.eval(x), 1.0);
    }
    face_mass_matrix(basis, rule)
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::Singular("face projection Gram"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_trapezoidal_mesh;
    use std::f64::consts::PI;

    #[test]
    fn orthonormal_gram_is_identity() {
        let mesh = build_trapezoidal_mesh(4, 0.1).unwrap();
        for deg in 0..=4 {
            let b = CellBasis::new(&mesh, 6, deg, BasisKind::Orthonormal).unwrap();
            let rule = cell_quadrature(&mesh, 6, 2 * deg + 2).unwrap();
            let m = mass_matrix(&b, &rule);
            assert!((m - DMatrix::identity(b.dim(), b.dim())).amax() < 1e-10);
            let fb = FaceBasis::new(&mesh, 3, deg, BasisKind::Orthonormal).unwrap();
            let fm = face_mass_matrix(&fb, &face_quadrature(&mesh, 3, 2 * deg));
            assert!((fm - DMatrix::identity(deg + 1, deg + 1)).amax() < 1e-10);
        }
    }

    #[test]
    fn hierarchical_prefix_spans_lower_degree() {
        let mesh = build_trapezoidal_mesh(2, 0.2).unwrap();
        let hi = CellBasis::new(&mesh, 1, 3, BasisKind::Orthonormal).unwrap();
        let rule = cell_quadrature(&mesh, 1, 8).unwrap();
        // x*y has degree 2: projecting on the full degree-3 basis leaves only the first six modes
        let coef = l2_project_cell(|p| p.x * p.y, &hi, &rule).unwrap();
        for i in dim_cell(2)..dim_cell(3) {
            assert!(coef[i].abs() < 1e-13);
        }
    }

    #[test]
    fn monomial_basis_reproduces_scaled_coordinates() {
        let mesh = build_trapezoidal_mesh(2, 0.0).unwrap();
        let b = CellBasis::new(&mesh, 0, 2, BasisKind::Monomial).unwrap();
        let x = b.center() + Vector2::new(0.1, -0.05);
        let v = b.eval(&x);
        let h = b.scale();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!((v[1] - 0.1 / h).abs() < 1e-15);
        assert!((v[2] + 0.05 / h).abs() < 1e-15);
    }

    #[test]
    fn projection_of_sine_mean() {
        let mesh = build_trapezoidal_mesh(1, 0.0).unwrap();
        let b = CellBasis::new(&mesh, 0, 0, BasisKind::Monomial).unwrap();
        let rule = cell_quadrature(&mesh, 0, 20).unwrap();
        let c = l2_project_cell(|p| (PI * p.x).sin() * (PI * p.y).sin(), &b, &rule).unwrap();
        assert!((c[0] - 4.0 / (PI * PI)).abs() < 1e-12);
    }

    #[test]
    fn projection_reproduces_polynomials_and_is_idempotent() {
        let mesh = build_trapezoidal_mesh(4, 0.1).unwrap();
        let rule = cell_quadrature(&mesh, 9, 8).unwrap();
        for kind in [BasisKind::Monomial, BasisKind::Orthonormal] {
            let b = CellBasis::new(&mesh, 9, 2, kind).unwrap();
            let f = |p: &Point2<f64>| 1.0 + 2.0 * p.x - p.y * p.x + 0.5 * p.y * p.y;
            let c = l2_project_cell(f, &b, &rule).unwrap();
            for (x, _) in rule.iter() {
                assert!((b.eval_poly(c.as_slice(), x) - f(x)).abs() < 1e-12);
            }
            let again = l2_project_cell(|x| b.eval_poly(c.as_slice(), x), &b, &rule).unwrap();
            assert!((again - &c).amax() < 1e-12);
        }
    }

    #[test]
    fn quartic_projection_matches_least_squares_oracle() {
        let mesh = build_trapezoidal_mesh(4, 0.1).unwrap();
        let c = 10;
        let rule = cell_quadrature(&mesh, c, 16).unwrap();
        let mono = CellBasis::new(&mesh, c, 2, BasisKind::Monomial).unwrap();
        let ortho = CellBasis::new(&mesh, c, 2, BasisKind::Orthonormal).unwrap();
        // oracle: normal equations in the raw monomial basis at high quadrature order
        let g = mass_matrix(&mono, &rule);
        let mut b = DVector::zeros(6);
        for (x, w) in rule.iter() {
            b.axpy(w * x.x.powi(4), &mono.eval(x), 1.0);
        }
        let oracle = g.lu().solve(&b).unwrap();
        let coef = l2_project_cell(|p| p.x.powi(4), &ortho, &rule).unwrap();
        for (x, _) in rule.iter() {
            let a = mono.eval_poly(oracle.as_slice(), x);
            let bb = ortho.eval_poly(coef.as_slice(), x);
            assert!((a - bb).abs() < 1e-10, "{a} {bb}");
        }
    }

    #[test]
    fn stiffness_on_unit_square() {
        let mesh = build_trapezoidal_mesh(1, 0.0).unwrap();
        let b = CellBasis::new(&mesh, 0, 1, BasisKind::Monomial).unwrap();
        let rule = cell_quadrature(&mesh, 0, 2).unwrap();
        let s = stiffness_matrix(&b, &rule, None);
        // gradients of 1, x/h, y/h with h = sqrt(2): only the linear block is nonzero
        let h2 = 2.0;
        assert!(s.row(0).amax() < 1e-15);
        assert!((s[(1, 1)] - 1.0 / h2).abs() < 1e-14);
        assert!((s[(2, 2)] - 1.0 / h2).abs() < 1e-14);
        assert!(s[(1, 2)].abs() < 1e-15);
        let w = stiffness_matrix(&b, &rule, Some(&Matrix2::new(1.0, 0.0, 0.0, 1e-6)));
        assert!((w[(1, 1)] - s[(1, 1)]).abs() < 1e-15);
        assert!((w[(2, 2)] - 1e-6 * s[(2, 2)]).abs() < 1e-20);
    }
}
