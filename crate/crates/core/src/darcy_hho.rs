//! Hybrid discretisation of the Darcy operator.
//!
//! Local pressure unknowns are ordered `[q_T, q_F1, q_F2, ...]` in the orthonormal
//! degree-`k` cell and face bases.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Matrix2, Point2};

use crate::error::{Error, Result};
use crate::linalg::{SparseLu, Triplets};
use crate::mesh::{BcKind, Mesh, PermeabilityField};
use crate::poly_basis::{dim_cell, dim_face, CellFrame, FaceBases, ProjectionNodes};

/// Global hybrid pressure unknowns: face blocks first, then cell blocks.
#[derive(Debug, Clone)]
pub struct PressureSpaceHho {
    degree: usize,
    num_faces: usize,
    num_cells: usize,
    dirichlet: Vec<bool>,
}

impl PressureSpaceHho {
    pub fn new(mesh: &Mesh, k: usize) -> Self {
        let dirichlet = mesh
            .faces()
            .iter()
            .map(|f| f.bc.is_some_and(|bc| bc.p == BcKind::Dirichlet))
            .collect();
        Self {
            degree: k,
            num_faces: mesh.num_faces(),
            num_cells: mesh.num_cells(),
            dirichlet,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn nk(&self) -> usize {
        dim_cell(self.degree)
    }

    pub fn nf(&self) -> usize {
        dim_face(self.degree)
    }

    pub fn num_face_dofs(&self) -> usize {
        self.nf() * self.num_faces
    }

    pub fn len(&self) -> usize {
        self.num_face_dofs() + self.nk() * self.num_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn face_range(&self, f: usize) -> Range<usize> {
        f * self.nf()..(f + 1) * self.nf()
    }

    pub fn cell_range(&self, c: usize) -> Range<usize> {
        let o = self.num_face_dofs() + c * self.nk();
        o..o + self.nk()
    }

    pub fn is_dirichlet_face(&self, f: usize) -> bool {
        self.dirichlet[f]
    }

    pub fn local_dofs(&self, mesh: &Mesh, c: usize) -> Vec<usize> {
        let mut dofs: Vec<usize> = self.cell_range(c).collect();
        for &f in &mesh.cell(c).faces {
            dofs.extend(self.face_range(f));
        }
        dofs
    }

    /// Vector `m` with `m . q = int_Omega q_h` (cell unknowns only).
    pub fn mean_functional(&self, mesh: &Mesh) -> DVector<f64> {
        let mut m = DVector::zeros(self.len());
        for c in 0..self.num_cells {
            m[self.cell_range(c).start] = mesh.cell(c).area.sqrt();
        }
        m
    }
}

/// Local operators of one cell.
#[derive(Debug, Clone)]
pub struct DarcyHhoLocal {
    /// Pressure reconstruction `p_T` into `P^{k+1}(T)`.
    pub reconstruction: DMatrix<f64>,
    /// `Delta_TF`, one per face, `dim P^k(F)` rows.
    pub differences: Vec<DMatrix<f64>>,
    /// `kappa_TF = K_T n_TF . n_TF` per face.
    pub kappa: Vec<f64>,
    /// Weighted stabilisation.
    pub stabilisation: DMatrix<f64>,
    /// Local `c_T`.
    pub matrix: DMatrix<f64>,
    /// `K_T`-weighted stiffness on `P^{k+1}(T)`.
    pub weighted_stiffness: DMatrix<f64>,
}

/// `(K grad psi_i, grad psi_j)_T` over the full frame basis.
pub fn weighted_stiffness(frame: &CellFrame, perm: &Matrix2<f64>, n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, n);
    for (q, &w) in frame.rule.weights.iter().enumerate() {
        let gx = frame.grad_x.row(q).columns(0, n).transpose();
        let gy = frame.grad_y.row(q).columns(0, n).transpose();
        let kx = &gx * perm[(0, 0)] + &gy * perm[(0, 1)];
        let ky = &gx * perm[(1, 0)] + &gy * perm[(1, 1)];
        s.ger(w, &kx, &gx, 1.0);
        s.ger(w, &ky, &gy, 1.0);
    }
    s
}

pub fn build_local(frame: &CellFrame, perm: &Matrix2<f64>) -> Result<DarcyHhoLocal> {
    let nk = frame.nk();
    let nk1 = frame.nk1();
    let nf = frame.nf();
    let nfaces = frame.faces.len();
    let n = nk + nf * nfaces;
    let sk = weighted_stiffness(frame, perm, nk1);

    let mut rhs = DMatrix::zeros(nk1 + 1, n);
    rhs.view_mut((0, 0), (nk1, nk)).copy_from(&sk.columns(0, nk));
    for (fi, ff) in frame.faces.iter().enumerate() {
        let kn = perm * ff.normal;
        let flux = &ff.cell_grad_x * kn.x + &ff.cell_grad_y * kn.y;
        for (q, &w) in ff.rule.weights.iter().enumerate() {
            for j in 0..nk1 {
                let wf = w * flux[(q, j)];
                for i in 0..nk {
                    rhs[(j, i)] -= wf * ff.cell_values[(q, i)];
                }
                for m in 0..nf {
                    rhs[(j, nk + fi * nf + m)] += wf * ff.face_values[(q, m)];
                }
            }
        }
    }
    let means = frame.means();
    let mut aug = DMatrix::zeros(nk1 + 1, nk1 + 1);
    aug.view_mut((0, 0), (nk1, nk1)).copy_from(&sk);
    for j in 0..nk1 {
        aug[(nk1, j)] = means[j];
        aug[(j, nk1)] = means[j];
    }
    for i in 0..nk {
        rhs[(nk1, i)] = means[i];
    }
    let sol = aug
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("pressure reconstruction"))?;
    let r = sol.rows(0, nk1).into_owned();

    let mut differences = Vec::with_capacity(nfaces);
    let mut kappa = Vec::with_capacity(nfaces);
    let mut stab = DMatrix::zeros(n, n);
    for (fi, ff) in frame.faces.iter().enumerate() {
        let pk = ff.proj.view((0, 0), (nf, nk1));
        let pkk = ff.proj.view((0, 0), (nf, nk));
        let mut cell_defect = r.rows(0, nk).into_owned();
        for i in 0..nk {
            cell_defect[(i, i)] -= 1.0;
        }
        let mut delta = pk * &r - pkk * cell_defect;
        for m in 0..nf {
            delta[(m, nk + fi * nf + m)] -= 1.0;
        }
        let k_tf = ff.normal.dot(&(perm * ff.normal));
        stab += delta.tr_mul(&delta) * (k_tf / ff.diameter);
        kappa.push(k_tf);
        differences.push(delta);
    }
    let mut matrix = r.tr_mul(&(&sk * &r)) + &stab;
    matrix = (&matrix + matrix.transpose()) * 0.5;
    Ok(DarcyHhoLocal {
        reconstruction: r,
        differences,
        kappa,
        stabilisation: stab,
        matrix,
        weighted_stiffness: sk,
    })
}

/// Hybrid Darcy operators on a whole mesh.
#[derive(Debug, Clone)]
pub struct DarcyHhoOperators {
    pub space: PressureSpaceHho,
    pub locals: Vec<DarcyHhoLocal>,
    pub local_dofs: Vec<Vec<usize>>,
}

impl DarcyHhoOperators {
    pub fn new(mesh: &Mesh, k: usize, perm: &PermeabilityField) -> Result<Self> {
        let fb = FaceBases::new(mesh, k)?;
        let locals = (0..mesh.num_cells())
            .map(|c| build_local(&CellFrame::new(mesh, &fb, c, k)?, perm.tensor(c)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_locals(mesh, k, locals))
    }

    pub fn from_locals(mesh: &Mesh, k: usize, locals: Vec<DarcyHhoLocal>) -> Self {
        let space = PressureSpaceHho::new(mesh, k);
        let local_dofs = (0..mesh.num_cells()).map(|c| space.local_dofs(mesh, c)).collect();
        Self {
            space,
            locals,
            local_dofs,
        }
    }

    /// Global matrix of `c_h^hho`.
    pub fn assemble(&self) -> Triplets {
        let n = self.space.len();
        let mut t = Triplets::new(n, n);
        for (loc, dofs) in self.locals.iter().zip(&self.local_dofs) {
            t.add_block(dofs, dofs, &loc.matrix);
        }
        t
    }

    fn gather(&self, v: &DVector<f64>, c: usize) -> DVector<f64> {
        let dofs = &self.local_dofs[c];
        DVector::from_iterator(dofs.len(), dofs.iter().map(|&i| v[i]))
    }

    /// `c_h(q, q)`.
    pub fn energy(&self, q: &DVector<f64>) -> f64 {
        (0..self.locals.len())
            .map(|c| {
                let x = self.gather(q, c);
                x.dot(&(&self.locals[c].matrix * &x))
            })
            .sum()
    }

    /// `s_{K,h}(q, q)` as a sum of squared face differences.
    pub fn stabilisation_energy(&self, mesh: &Mesh, q: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for (c, loc) in self.locals.iter().enumerate() {
            let x = self.gather(q, c);
            for ((d, &kap), &f) in loc.differences.iter().zip(&loc.kappa).zip(&mesh.cell(c).faces) {
                s += kap / mesh.face(f).diameter() * (d * &x).norm_squared();
            }
        }
        s
    }

    /// Coefficients of `p_T q_T` in the degree-`k + 1` cell basis.
    pub fn reconstruct(&self, q: &DVector<f64>, c: usize) -> DVector<f64> {
        &self.locals[c].reconstruction * self.gather(q, c)
    }
}

/// Global interpolate `I_h^k q`.
pub fn interpolate_pressure(
    space: &PressureSpaceHho,
    nodes: &ProjectionNodes,
    q: impl Fn(&Point2<f64>) -> f64,
) -> DVector<f64> {
    let mut out = DVector::zeros(space.len());
    for (f, wn) in nodes.faces.iter().enumerate() {
        out.rows_mut(space.face_range(f).start, space.nf())
            .copy_from(&wn.moments(&q));
    }
    for (c, wn) in nodes.cells.iter().enumerate() {
        out.rows_mut(space.cell_range(c).start, space.nk())
            .copy_from(&wn.moments(&q));
    }
    out
}

/// Solution of a pure-Neumann projection problem and its multiplier.
#[derive(Debug, Clone)]
pub struct ProjectionSolution {
    pub coefficients: DVector<f64>,
    pub multiplier: f64,
}

/// Solves `c(r, q) = (load, q)` for all `q` subject to `mean . r = mean_value`,
/// bordering the singular matrix with one row and column.
pub(crate) fn solve_bordered(
    matrix: &Triplets,
    load: &DVector<f64>,
    mean: &DVector<f64>,
    mean_value: f64,
) -> Result<ProjectionSolution> {
    let n = matrix.nrows;
    let mut t = Triplets {
        nrows: n + 1,
        ncols: n + 1,
        entries: matrix.entries.clone(),
    };
    for (i, &m) in mean.iter().enumerate() {
        if m != 0.0 {
            t.push(n, i, m);
            t.push(i, n, m);
        }
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(load);
    rhs[n] = mean_value;
    let x = SparseLu::new(&t.to_csc()?)?.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("bordered projection system"));
    }
    Ok(ProjectionSolution {
        coefficients: x.rows(0, n).into_owned(),
        multiplier: x[n],
    })
}

/// Rejects a pure-Neumann datum whose integral does not vanish.
pub(crate) fn check_compatible(load: &DVector<f64>, mean: &DVector<f64>) -> Result<()> {
    // cell moments tested against the constant 1
    let total = load.dot(mean);
    if total.abs() > 1e-10 * load.amax().max(1.0) {
        return Err(Error::Incompatible(format!(
            "projection datum has nonzero integral {total:e}"
        )));
    }
    Ok(())
}

/// Pure-Neumann projection: `c_h(r_h, q_h) = (datum, q_T)` with prescribed `int r_h`.
/// `datum` plays the role of `-div(K grad r)`.
pub fn solve_hho_projection(
    mesh: &Mesh,
    ops: &DarcyHhoOperators,
    nodes: &ProjectionNodes,
    datum: impl Fn(&Point2<f64>) -> f64,
    mean_value: f64,
) -> Result<ProjectionSolution> {
    let space = &ops.space;
    let mut load = DVector::zeros(space.len());
    for (c, wn) in nodes.cells.iter().enumerate() {
        load.rows_mut(space.cell_range(c).start, space.nk())
            .copy_from(&wn.moments(&datum));
    }
    let mean = space.mean_functional(mesh);
    check_compatible(&load, &mean)?;
    solve_bordered(&ops.assemble(), &load, &mean, mean_value)
}
