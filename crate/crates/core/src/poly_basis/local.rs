//! Per-cell tabulations shared by the local operator builders.
//!
//! Every cell carries an orthonormal basis of `P^{k+1}(T)` whose first `dim P^k(T)`
//! functions span `P^k(T)`; every face carries an orthonormal basis of `P^{k+1}(F)`
//! shared by both neighbours. With these choices all cell and face mass matrices are
//! identities and truncating a coefficient vector is the `L^2` projector.

use nalgebra::{DMatrix, DVector, Point2, Vector2};

use super::basis::{dim_cell, dim_face, BasisKind, CellBasis, FaceBasis};
use super::quadrature::{cell_quadrature, face_quadrature, QuadratureRule};
use crate::error::Result;
use crate::mesh::Mesh;

/// Orthonormal face bases of degree `k + 1` for every face of a mesh.
#[derive(Debug, Clone)]
pub struct FaceBases {
    degree: usize,
    bases: Vec<FaceBasis>,
}

impl FaceBases {
    pub fn new(mesh: &Mesh, degree: usize) -> Result<Self> {
        let bases = (0..mesh.num_faces())
            .map(|f| FaceBasis::new(mesh, f, degree + 1, BasisKind::Orthonormal))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { degree, bases })
    }

    /// The discretisation degree `k` (bases have degree `k + 1`).
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn get(&self, f: usize) -> &FaceBasis {
        &self.bases[f]
    }
}

/// Tabulation of one face of a cell.
#[derive(Debug, Clone)]
pub struct FaceFrame {
    pub face: usize,
    /// Outward normal `n_TF`.
    pub normal: Vector2<f64>,
    pub diameter: f64,
    pub rule: QuadratureRule,
    /// Cell basis values and gradients at the face nodes (`nq x dim P^{k+1}(T)`).
    pub cell_values: DMatrix<f64>,
    pub cell_grad_x: DMatrix<f64>,
    pub cell_grad_y: DMatrix<f64>,
    /// Face basis values at the face nodes (`nq x dim P^{k+1}(F)`).
    pub face_values: DMatrix<f64>,
    /// `proj[(m, j)] = (psi_m, phi_j)_F`: coefficients of the face projection of cell functions.
    pub proj: DMatrix<f64>,
}

/// Tabulation of a cell and its faces at the assembly quadrature.
#[derive(Debug, Clone)]
pub struct CellFrame {
    pub cell: usize,
    pub degree: usize,
    pub basis: CellBasis,
    pub area: f64,
    pub rule: QuadratureRule,
    pub values: DMatrix<f64>,
    pub grad_x: DMatrix<f64>,
    pub grad_y: DMatrix<f64>,
    pub faces: Vec<FaceFrame>,
}

impl CellFrame {
    /// Tabulates cell `c` for discretisation degree `k` with quadrature exactness `2(k + 2)`.
    pub fn new(mesh: &Mesh, face_bases: &FaceBases, c: usize, k: usize) -> Result<Self> {
        let basis = CellBasis::new(mesh, c, k + 1, BasisKind::Orthonormal)?;
        let exactness = 2 * (k + 2);
        let rule = cell_quadrature(mesh, c, exactness)?;
        let (values, grad_x, grad_y) = tabulate(&basis, &rule);
        let cell = mesh.cell(c);
        let faces = cell
            .faces
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let rule = face_quadrature(mesh, f, exactness);
                let (cell_values, cell_grad_x, cell_grad_y) = tabulate(&basis, &rule);
                let fb = face_bases.get(f);
                let mut face_values = DMatrix::zeros(rule.len(), fb.dim());
                for (q, x) in rule.points.iter().enumerate() {
                    face_values.row_mut(q).tr_copy_from(&fb.eval(x));
                }
                let weighted = DMatrix::from_fn(rule.len(), fb.dim(), |q, m| {
                    rule.weights[q] * face_values[(q, m)]
                });
                let proj = weighted.transpose() * &cell_values;
                FaceFrame {
                    face: f,
                    normal: mesh.cell_face_normal(c, i),
                    diameter: mesh.face(f).diameter(),
                    rule,
                    cell_values,
                    cell_grad_x,
                    cell_grad_y,
                    face_values,
                    proj,
                }
            })
            .collect();
        Ok(Self {
            cell: c,
            degree: k,
            basis,
            area: cell.area,
            rule,
            values,
            grad_x,
            grad_y,
            faces,
        })
    }

    /// `dim P^k(T)`.
    pub fn nk(&self) -> usize {
        dim_cell(self.degree)
    }

    /// `dim P^{k+1}(T)`.
    pub fn nk1(&self) -> usize {
        dim_cell(self.degree + 1)
    }

    /// `dim P^k(F)`.
    pub fn nf(&self) -> usize {
        dim_face(self.degree)
    }

    /// `(grad_a phi_i, phi_j)_T` for `a = x, y`, over the full `P^{k+1}` basis.
    pub fn grad_value_moments(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let w = DVector::from_column_slice(&self.rule.weights);
        let wv = DMatrix::from_fn(self.values.nrows(), self.values.ncols(), |q, j| {
            w[q] * self.values[(q, j)]
        });
        (self.grad_x.transpose() * &wv, self.grad_y.transpose() * &wv)
    }

    /// Integrals `(phi_j, 1)_T`.
    pub fn means(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.nk1());
        for (q, w) in self.rule.weights.iter().enumerate() {
            m.axpy(*w, &self.values.row(q).transpose(), 1.0);
        }
        m
    }
}

fn tabulate(basis: &CellBasis, rule: &QuadratureRule) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = basis.dim();
    let mut v = DMatrix::zeros(rule.len(), n);
    let mut gx = DMatrix::zeros(rule.len(), n);
    let mut gy = DMatrix::zeros(rule.len(), n);
    for (q, x) in rule.points.iter().enumerate() {
        let (a, b, c) = basis.eval_with_grad(x);
        v.row_mut(q).tr_copy_from(&a);
        gx.row_mut(q).tr_copy_from(&b);
        gy.row_mut(q).tr_copy_from(&c);
    }
    (v, gx, gy)
}

/// Quadrature nodes with pre-weighted basis values, used to project data.
#[derive(Debug, Clone)]
pub struct WeightedNodes {
    pub points: Vec<Point2<f64>>,
    /// `weighted[(q, i)] = w_q * phi_i(x_q)`.
    pub weighted: DMatrix<f64>,
}

impl WeightedNodes {
    /// Coefficients `(f, phi_i)` of a scalar function.
    pub fn moments(&self, f: impl Fn(&Point2<f64>) -> f64) -> DVector<f64> {
        let vals = DVector::from_iterator(self.points.len(), self.points.iter().map(f));
        self.weighted.tr_mul(&vals)
    }

    /// Coefficients of both components of a vector function, stacked `[x; y]`.
    pub fn vector_moments(&self, f: impl Fn(&Point2<f64>) -> Vector2<f64>) -> DVector<f64> {
        let nq = self.points.len();
        let mut vals = DMatrix::zeros(nq, 2);
        for (q, x) in self.points.iter().enumerate() {
            let v = f(x);
            vals[(q, 0)] = v.x;
            vals[(q, 1)] = v.y;
        }
        let m = self.weighted.tr_mul(&vals);
        let n = m.nrows();
        DVector::from_fn(2 * n, |i, _| if i < n { m[(i, 0)] } else { m[(i - n, 1)] })
    }
}

/// Persistent data-projection nodes (exactness `2(k + 3)`) for all cells and faces,
/// restricted to the degree-`k` bases.
#[derive(Debug, Clone)]
pub struct ProjectionNodes {
    pub cells: Vec<WeightedNodes>,
    pub faces: Vec<WeightedNodes>,
}

impl ProjectionNodes {
    pub fn new(mesh: &Mesh, face_bases: &FaceBases, k: usize) -> Result<Self> {
        let exactness = 2 * (k + 3);
        let nk = dim_cell(k);
        let nf = dim_face(k);
        let cells = (0..mesh.num_cells())
            .map(|c| {
                let basis = CellBasis::new(mesh, c, k + 1, BasisKind::Orthonormal)?;
                let rule = cell_quadrature(mesh, c, exactness)?;
                let mut weighted = DMatrix::zeros(rule.len(), nk);
                for (q, (x, w)) in rule.iter().enumerate() {
                    let v = basis.eval(x);
                    for i in 0..nk {
                        weighted[(q, i)] = w * v[i];
                    }
                }
                Ok(WeightedNodes {
                    points: rule.points,
                    weighted,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let faces = (0..mesh.num_faces())
            .map(|f| {
                let rule = face_quadrature(mesh, f, exactness);
                let basis = face_bases.get(f);
                let mut weighted = DMatrix::zeros(rule.len(), nf);
                for (q, (x, w)) in rule.iter().enumerate() {
                    let v = basis.eval(x);
                    for i in 0..nf {
                        weighted[(q, i)] = w * v[i];
                    }
                }
                WeightedNodes {
                    points: rule.points,
                    weighted,
                }
            })
            .collect();
        Ok(Self { cells, faces })
    }
}
