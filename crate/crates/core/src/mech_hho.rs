//! Hybrid discretisation of linear elasticity.
//!
//! Local displacement unknowns are ordered `[v_T^x, v_T^y, v_F1^x, v_F1^y, ...]`, each
//! block holding coefficients in the orthonormal cell (degree `k`) or face (degree `k`)
//! bases. Symmetric tensors use the orthonormal basis `e1 e1^T`, `e2 e2^T`,
//! `(e1 e2^T + e2 e1^T) / sqrt 2`, so tensor coefficients live in blocks `[xx, yy, xy]`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, Point2, Vector2};

use crate::error::{Error, Result};
use crate::linalg::Triplets;
use crate::mesh::{BcKind, Mesh};
use crate::poly_basis::{dim_cell, dim_face, CellFrame, FaceBases, ProjectionNodes};

/// Global displacement unknowns: all face blocks first, then all cell blocks.
#[derive(Debug, Clone)]
pub struct DisplacementSpace {
    degree: usize,
    num_faces: usize,
    num_cells: usize,
    dirichlet: Vec<bool>,
}

impl DisplacementSpace {
    pub fn new(mesh: &Mesh, k: usize) -> Self {
        let dirichlet = mesh
            .faces()
            .iter()
            .map(|f| f.bc.is_some_and(|bc| bc.u == BcKind::Dirichlet))
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
        2 * self.nf() * self.num_faces
    }

    pub fn len(&self) -> usize {
        self.num_face_dofs() + 2 * self.nk() * self.num_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn face_range(&self, f: usize) -> Range<usize> {
        let b = 2 * self.nf();
        f * b..(f + 1) * b
    }

    pub fn cell_range(&self, c: usize) -> Range<usize> {
        let b = 2 * self.nk();
        let o = self.num_face_dofs() + c * b;
        o..o + b
    }

    pub fn is_dirichlet_face(&self, f: usize) -> bool {
        self.dirichlet[f]
    }

    /// Indices of the unknowns of the clamped subspace `U_{h,0}`.
    pub fn free_dofs(&self) -> Vec<usize> {
        let mut free: Vec<usize> = (0..self.num_faces)
            .filter(|&f| !self.dirichlet[f])
            .flat_map(|f| self.face_range(f))
            .collect();
        free.extend(self.num_face_dofs()..self.len());
        free
    }

    /// Global indices of the local unknowns of cell `c`.
    pub fn local_dofs(&self, mesh: &Mesh, c: usize) -> Vec<usize> {
        let mut dofs: Vec<usize> = self.cell_range(c).collect();
        for &f in &mesh.cell(c).faces {
            dofs.extend(self.face_range(f));
        }
        dofs
    }
}

/// Local mechanical operators of one cell.
#[derive(Debug, Clone)]
pub struct MechLocal {
    /// Strain reconstruction `E_T`: `3 dim P^k(T)` rows.
    pub strain: DMatrix<f64>,
    /// Discrete divergence `tr E_T`: `dim P^k(T)` rows.
    pub divergence: DMatrix<f64>,
    /// Displacement reconstruction `r_T`: `2 dim P^{k+1}(T)` rows, `[x; y]`.
    pub reconstruction: DMatrix<f64>,
    /// Difference operators, one per face, `2 dim P^k(F)` rows.
    pub differences: Vec<DMatrix<f64>>,
    /// Stabilisation `s_T` including the `2 mu` factor.
    pub stabilisation: DMatrix<f64>,
    /// Local `a_T` without the jump penalisation.
    pub stiffness: DMatrix<f64>,
    /// Cell part of the strain seminorm.
    pub seminorm: DMatrix<f64>,
    /// Traces of `r_T` on each face in `P^{k+1}(F)^2` (only kept for `k = 0`).
    pub traces: Vec<DMatrix<f64>>,
}

/// Local unknown layout helper.
#[derive(Debug, Clone, Copy)]
struct Layout {
    nk: usize,
    nf: usize,
}

impl Layout {
    fn ux(&self, j: usize) -> usize {
        j
    }
    fn uy(&self, j: usize) -> usize {
        self.nk + j
    }
    fn fx(&self, i: usize, m: usize) -> usize {
        2 * self.nk + 2 * self.nf * i + m
    }
    fn fy(&self, i: usize, m: usize) -> usize {
        2 * self.nk + 2 * self.nf * i + self.nf + m
    }
    fn len(&self, nfaces: usize) -> usize {
        2 * self.nk + 2 * self.nf * nfaces
    }
}

/// Number of local unknowns of a cell with `nfaces` faces.
pub fn local_len(k: usize, nfaces: usize) -> usize {
    Layout {
        nk: dim_cell(k),
        nf: dim_face(k),
    }
    .len(nfaces)
}

/// Symmetric-gradient Gram matrix on `P^{l}(T)^2` from the first `n` basis functions.
fn sym_grad_gram(frame: &CellFrame, n: usize) -> DMatrix<f64> {
    let mut sxx = DMatrix::zeros(n, n);
    let mut syy = DMatrix::zeros(n, n);
    let mut sxy = DMatrix::zeros(n, n);
    for (q, &w) in frame.rule.weights.iter().enumerate() {
        let gx = frame.grad_x.row(q).columns(0, n).transpose();
        let gy = frame.grad_y.row(q).columns(0, n).transpose();
        sxx.ger(w, &gx, &gx, 1.0);
        syy.ger(w, &gy, &gy, 1.0);
        sxy.ger(w, &gx, &gy, 1.0);
    }
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    k.view_mut((0, 0), (n, n)).copy_from(&(&sxx + &syy * 0.5));
    k.view_mut((n, n), (n, n)).copy_from(&(&syy + &sxx * 0.5));
    // (x,i)-(y,j): int d_y psi_i d_x psi_j / 2
    let cross = sxy.transpose() * 0.5;
    k.view_mut((0, n), (n, n)).copy_from(&cross);
    k.view_mut((n, 0), (n, n)).copy_from(&cross.transpose());
    k
}

/// Builds the local operators of the cell described by `frame`.
pub fn build_local(frame: &CellFrame, mu: f64, lambda: f64) -> Result<MechLocal> {
    let k = frame.degree;
    let nk = frame.nk();
    let nk1 = frame.nk1();
    let nf = frame.nf();
    let lay = Layout { nk, nf };
    let nfaces = frame.faces.len();
    let n = lay.len(nfaces);
    let (gxm, gym) = frame.grad_value_moments();

    // strain reconstruction
    let mut e = DMatrix::zeros(3 * nk, n);
    for i in 0..nk {
        for j in 0..nk {
            e[(i, lay.ux(j))] = -gxm[(i, j)];
            e[(nk + i, lay.uy(j))] = -gym[(i, j)];
            e[(2 * nk + i, lay.ux(j))] = -gym[(i, j)] * FRAC_1_SQRT_2;
            e[(2 * nk + i, lay.uy(j))] = -gxm[(i, j)] * FRAC_1_SQRT_2;
        }
        for (fi, ff) in frame.faces.iter().enumerate() {
            let (nx, ny) = (ff.normal.x, ff.normal.y);
            for m in 0..nf {
                let p = ff.proj[(m, i)];
                e[(i, lay.fx(fi, m))] = nx * p;
                e[(nk + i, lay.fy(fi, m))] = ny * p;
                e[(2 * nk + i, lay.fx(fi, m))] = ny * p * FRAC_1_SQRT_2;
                e[(2 * nk + i, lay.fy(fi, m))] = nx * p * FRAC_1_SQRT_2;
            }
        }
    }
    let divergence = e.rows(0, nk) + e.rows(nk, nk);

    // displacement reconstruction through the augmented system
    let kr = sym_grad_gram(frame, nk1);
    let mut g = DMatrix::zeros(2 * nk1, 3 * nk);
    for j in 0..nk1 {
        for i in 0..nk {
            g[(j, i)] = gxm[(j, i)];
            g[(j, 2 * nk + i)] = gym[(j, i)] * FRAC_1_SQRT_2;
            g[(nk1 + j, nk + i)] = gym[(j, i)];
            g[(nk1 + j, 2 * nk + i)] = gxm[(j, i)] * FRAC_1_SQRT_2;
        }
    }
    let means = frame.means();
    let mut dmeans = (DVector::zeros(nk1), DVector::zeros(nk1));
    for (q, &w) in frame.rule.weights.iter().enumerate() {
        dmeans.0.axpy(w, &frame.grad_x.row(q).transpose(), 1.0);
        dmeans.1.axpy(w, &frame.grad_y.row(q).transpose(), 1.0);
    }
    let na = 2 * nk1 + 3;
    let mut aug = DMatrix::zeros(na, na);
    aug.view_mut((0, 0), (2 * nk1, 2 * nk1)).copy_from(&kr);
    for j in 0..nk1 {
        let c = [
            (0, j, means[j]),
            (1, nk1 + j, means[j]),
            (2, j, dmeans.1[j]),
            (2, nk1 + j, -dmeans.0[j]),
        ];
        for (r, col, v) in c {
            aug[(2 * nk1 + r, col)] = v;
            aug[(col, 2 * nk1 + r)] = v;
        }
    }
    let mut rhs = DMatrix::zeros(na, n);
    rhs.rows_mut(0, 2 * nk1).copy_from(&(&g * &e));
    for j in 0..nk {
        rhs[(2 * nk1, lay.ux(j))] = means[j];
        rhs[(2 * nk1 + 1, lay.uy(j))] = means[j];
    }
    for (fi, ff) in frame.faces.iter().enumerate() {
        for m in 0..nf {
            let integral: f64 = ff
                .rule
                .weights
                .iter()
                .enumerate()
                .map(|(q, w)| w * ff.face_values[(q, m)])
                .sum();
            rhs[(2 * nk1 + 2, lay.fx(fi, m))] = integral * ff.normal.y;
            rhs[(2 * nk1 + 2, lay.fy(fi, m))] = -integral * ff.normal.x;
        }
    }
    let sol = aug
        .lu()
        .solve(&rhs)
        .ok_or(Error::RankDeficient {
            what: "displacement reconstruction",
            expected: 3,
            found: 4,
        })?;
    let r = sol.rows(0, 2 * nk1).into_owned();

    // difference operators and stabilisation
    let mut differences = Vec::with_capacity(nfaces);
    let mut traces = Vec::new();
    let mut stab = DMatrix::zeros(n, n);
    let mut face_seminorm = DMatrix::zeros(n, n);
    for (fi, ff) in frame.faces.iter().enumerate() {
        let pk = ff.proj.view((0, 0), (nf, nk1));
        let pkk = ff.proj.view((0, 0), (nf, nk));
        let mut delta = DMatrix::zeros(2 * nf, n);
        let mut jump = DMatrix::zeros(2 * nf, n);
        for c in 0..2 {
            let rc = r.rows(c * nk1, nk1);
            let mut cell_defect = rc.rows(0, nk).into_owned();
            for j in 0..nk {
                cell_defect[(j, c * nk + j)] -= 1.0;
            }
            let mut block = pk * rc - pkk * cell_defect;
            let mut jblock = DMatrix::zeros(nf, n);
            for m in 0..nf {
                let col = if c == 0 { lay.fx(fi, m) } else { lay.fy(fi, m) };
                block[(m, col)] -= 1.0;
                jblock[(m, col)] = 1.0;
                for j in 0..nk {
                    jblock[(m, c * nk + j)] -= pkk[(m, j)];
                }
            }
            delta.rows_mut(c * nf, nf).copy_from(&block);
            jump.rows_mut(c * nf, nf).copy_from(&jblock);
        }
        let inv_h = 1.0 / ff.diameter;
        stab += delta.tr_mul(&delta) * (2.0 * mu * inv_h);
        if k == 0 {
            face_seminorm += delta.tr_mul(&delta) * inv_h;
            let nf1 = ff.proj.nrows();
            let mut tr = DMatrix::zeros(2 * nf1, n);
            for c in 0..2 {
                tr.rows_mut(c * nf1, nf1)
                    .copy_from(&(&ff.proj * r.rows(c * nk1, nk1)));
            }
            traces.push(tr);
        } else {
            face_seminorm += jump.tr_mul(&jump) * inv_h;
        }
        differences.push(delta);
    }

    let stiffness = e.tr_mul(&e) * (2.0 * mu) + divergence.tr_mul(&divergence) * lambda + &stab;
    let seminorm = if k == 0 {
        r.tr_mul(&(&kr * &r)) + face_seminorm
    } else {
        let mut sel = DMatrix::zeros(2 * nk, n);
        for j in 0..2 * nk {
            sel[(j, j)] = 1.0;
        }
        let mut krk = DMatrix::zeros(2 * nk, 2 * nk);
        for a in 0..2 {
            for b in 0..2 {
                krk.view_mut((a * nk, b * nk), (nk, nk))
                    .copy_from(&kr.view((a * nk1, b * nk1), (nk, nk)));
            }
        }
        sel.tr_mul(&(&krk * &sel)) + face_seminorm
    };

    Ok(MechLocal {
        strain: e,
        divergence,
        reconstruction: r,
        differences,
        stabilisation: stab,
        stiffness,
        seminorm,
        traces,
    })
}

/// One jump-penalisation face term for `k = 0`: `h_F^{-1} ([r v], [r w])_F` over the
/// concatenated local unknowns of the listed cells.
#[derive(Debug, Clone)]
pub struct JumpElement {
    pub face: usize,
    pub cells: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

fn jump_elements(mesh: &Mesh, locals: &[MechLocal]) -> Vec<JumpElement> {
    (0..mesh.num_faces())
        .map(|f| {
            let face = mesh.face(f);
            let mut cells = vec![face.cells.0];
            cells.extend(face.cells.1);
            let blocks: Vec<DMatrix<f64>> = cells
                .iter()
                .enumerate()
                .map(|(s, &c)| {
                    let i = mesh.cell(c).faces.iter().position(|&g| g == f).unwrap();
                    let sign = if s == 0 { 1.0 } else { -1.0 };
                    &locals[c].traces[i] * sign
                })
                .collect();
            let rows = blocks[0].nrows();
            let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut jump = DMatrix::zeros(rows, cols);
            let mut o = 0;
            for b in &blocks {
                jump.columns_mut(o, b.ncols()).copy_from(b);
                o += b.ncols();
            }
            JumpElement {
                face: f,
                cells,
                matrix: jump.tr_mul(&jump) / face.diameter(),
            }
        })
        .collect()
}

/// Mechanical operators on a whole mesh.
#[derive(Debug, Clone)]
pub struct MechOperators {
    pub space: DisplacementSpace,
    pub mu: f64,
    pub lambda: f64,
    pub locals: Vec<MechLocal>,
    /// Global indices of each cell's local unknowns.
    pub local_dofs: Vec<Vec<usize>>,
    /// Jump penalisation terms (empty for `k >= 1`).
    pub jumps: Vec<JumpElement>,
}

impl MechOperators {
    pub fn new(mesh: &Mesh, k: usize, mu: f64, lambda: f64) -> Result<Self> {
        let fb = FaceBases::new(mesh, k)?;
        let locals = (0..mesh.num_cells())
            .map(|c| build_local(&CellFrame::new(mesh, &fb, c, k)?, mu, lambda))
            .collect::<Result<Vec<_>>>()?;
        Self::from_locals(mesh, k, mu, lambda, locals)
    }

    pub fn from_locals(mesh: &Mesh, k: usize, mu: f64, lambda: f64, locals: Vec<MechLocal>) -> Result<Self> {
        if mu <= 0.0 || mu + lambda < 0.0 {
            return Err(Error::Unsupported(format!(
                "Lame parameters mu = {mu}, lambda = {lambda}"
            )));
        }
        let space = DisplacementSpace::new(mesh, k);
        let local_dofs = (0..mesh.num_cells()).map(|c| space.local_dofs(mesh, c)).collect();
        let jumps = if k == 0 { jump_elements(mesh, &locals) } else { Vec::new() };
        Ok(Self {
            space,
            mu,
            lambda,
            locals,
            local_dofs,
            jumps,
        })
    }

    fn assemble(&self, cell: impl Fn(&MechLocal) -> &DMatrix<f64>, jump_scale: f64) -> Triplets {
        let n = self.space.len();
        let mut t = Triplets::new(n, n);
        for (loc, dofs) in self.locals.iter().zip(&self.local_dofs) {
            t.add_block(dofs, dofs, cell(loc));
        }
        for j in &self.jumps {
            let dofs: Vec<usize> = j
                .cells
                .iter()
                .flat_map(|&c| self.local_dofs[c].iter().copied())
                .collect();
            t.add_block(&dofs, &dofs, &(&j.matrix * jump_scale));
        }
        t
    }

    /// Global matrix of `a_h` on the full (unconstrained) space.
    pub fn assemble_ah(&self) -> Triplets {
        self.assemble(|l| &l.stiffness, 2.0 * self.mu)
    }

    /// Global matrix of the squared strain seminorm.
    pub fn assemble_seminorm(&self) -> Triplets {
        self.assemble(|l| &l.seminorm, 1.0)
    }

    fn quadratic(&self, v: &DVector<f64>, cell: impl Fn(&MechLocal) -> &DMatrix<f64>, jump_scale: f64) -> f64 {
        let gather = |dofs: &[usize]| DVector::from_iterator(dofs.len(), dofs.iter().map(|&i| v[i]));
        let mut s = 0.0;
        for (loc, dofs) in self.locals.iter().zip(&self.local_dofs) {
            let x = gather(dofs);
            s += x.dot(&(cell(loc) * &x));
        }
        for j in &self.jumps {
            let dofs: Vec<usize> = j
                .cells
                .iter()
                .flat_map(|&c| self.local_dofs[c].iter().copied())
                .collect();
            let x = gather(&dofs);
            s += jump_scale * x.dot(&(&j.matrix * &x));
        }
        s
    }

    /// `a_h(v, v)`.
    pub fn energy(&self, v: &DVector<f64>) -> f64 {
        self.quadratic(v, |l| &l.stiffness, 2.0 * self.mu)
    }

    /// `||v||_{eps,h}^2`.
    pub fn seminorm_sq(&self, v: &DVector<f64>) -> f64 {
        self.quadratic(v, |l| &l.seminorm, 1.0)
    }

    /// `s_{mu,h}(v, v)`, summed from squared face differences so that it vanishes to
    /// roundoff squared on consistent vectors.
    pub fn stabilisation_energy(&self, mesh: &Mesh, v: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for (c, (loc, dofs)) in self.locals.iter().zip(&self.local_dofs).enumerate() {
            let x = DVector::from_iterator(dofs.len(), dofs.iter().map(|&i| v[i]));
            for (d, &f) in loc.differences.iter().zip(&mesh.cell(c).faces) {
                s += 2.0 * self.mu / mesh.face(f).diameter() * (d * &x).norm_squared();
            }
        }
        s
    }

    /// Cellwise coefficients of `D_h v`, concatenated cell by cell.
    pub fn divergence(&self, v: &DVector<f64>) -> DVector<f64> {
        let nk = self.space.nk();
        let mut out = DVector::zeros(nk * self.locals.len());
        for (c, (loc, dofs)) in self.locals.iter().zip(&self.local_dofs).enumerate() {
            let x = DVector::from_iterator(dofs.len(), dofs.iter().map(|&i| v[i]));
            out.rows_mut(c * nk, nk).copy_from(&(&loc.divergence * x));
        }
        out
    }
}

/// Global interpolate `I_h^k v`: `L^2` projections on every cell and face.
pub fn interpolate_displacement(
    space: &DisplacementSpace,
    nodes: &ProjectionNodes,
    v: impl Fn(&Point2<f64>) -> Vector2<f64>,
) -> DVector<f64> {
    let mut out = DVector::zeros(space.len());
    for (f, wn) in nodes.faces.iter().enumerate() {
        out.rows_mut(space.face_range(f).start, 2 * space.nf())
            .copy_from(&wn.vector_moments(&v));
    }
    for (c, wn) in nodes.cells.iter().enumerate() {
        out.rows_mut(space.cell_range(c).start, 2 * space.nk())
            .copy_from(&wn.vector_moments(&v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{generalized_eigenvalues, principal_submatrix};
    use crate::mesh::build_trapezoidal_mesh;
    use crate::poly_basis::{BasisKind, CellBasis};

    fn setup(n: usize, k: usize) -> (Mesh, MechOperators, ProjectionNodes) {
        let mesh = build_trapezoidal_mesh(n, 0.1).unwrap();
        let ops = MechOperators::new(&mesh, k, 1.0, 1.0).unwrap();
        let fb = FaceBases::new(&mesh, k).unwrap();
        let nodes = ProjectionNodes::new(&mesh, &fb, k).unwrap();
        (mesh, ops, nodes)
    }

    // A fixed polynomial field of total degree `deg`.
    fn poly_field(deg: usize) -> impl Fn(&Point2<f64>) -> Vector2<f64> {
        move |p: &Point2<f64>| {
            let mut v = Vector2::new(0.3, -0.2);
            for d in 1..=deg {
                let a = (p.x - 0.4).powi(d as i32);
                let b = (p.y - 0.3).powi(d as i32 - 1) * p.x;
                v += Vector2::new(a + 0.5 * b, b - 0.7 * a) / d as f64;
            }
            v
        }
    }

    fn sym_grad(f: &impl Fn(&Point2<f64>) -> Vector2<f64>, p: &Point2<f64>) -> [[f64; 2]; 2] {
        let h = 1e-5;
        let dx = (f(&(p + Vector2::new(h, 0.0))) - f(&(p - Vector2::new(h, 0.0)))) / (2.0 * h);
        let dy = (f(&(p + Vector2::new(0.0, h))) - f(&(p - Vector2::new(0.0, h)))) / (2.0 * h);
        let off = 0.5 * (dx.y + dy.x);
        [[dx.x, off], [off, dy.y]]
    }

    fn strain_at(frame: &CellFrame, coef: &DVector<f64>, p: &Point2<f64>) -> [[f64; 2]; 2] {
        let nk = frame.nk();
        let v = frame.basis.eval(p);
        let s = |a: usize| (0..nk).map(|i| coef[a * nk + i] * v[i]).sum::<f64>();
        let off = s(2) * FRAC_1_SQRT_2;
        [[s(0), off], [off, s(1)]]
    }

    #[test]
    fn rigid_motion_has_zero_strain() {
        for k in 0..=3 {
            let (mesh, ops, nodes) = setup(3, k);
            let rigid = |p: &Point2<f64>| Vector2::new(0.2 - 0.7 * p.y, -0.4 + 0.7 * p.x);
            let v = interpolate_displacement(&ops.space, &nodes, rigid);
            for c in 0..mesh.num_cells() {
                let x = DVector::from_iterator(ops.local_dofs[c].len(), ops.local_dofs[c].iter().map(|&i| v[i]));
                assert!((&ops.locals[c].strain * x).amax() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn polynomial_consistency_for_all_degrees() {
        for k in 0..=3 {
            let (mesh, ops, nodes) = setup(3, k);
            let fb = FaceBases::new(&mesh, k).unwrap();
            let w = poly_field(k + 1);
            let v = interpolate_displacement(&ops.space, &nodes, &w);
            for c in 0..mesh.num_cells() {
                let frame = CellFrame::new(&mesh, &fb, c, k).unwrap();
                let loc = &ops.locals[c];
                let x = DVector::from_iterator(ops.local_dofs[c].len(), ops.local_dofs[c].iter().map(|&i| v[i]));
                let e = &loc.strain * &x;
                let r = &loc.reconstruction * &x;
                for p in frame.rule.points.iter().take(7) {
                    let exact = sym_grad(&w, p);
                    let got = strain_at(&frame, &e, p);
                    for a in 0..2 {
                        for b in 0..2 {
                            assert!((got[a][b] - exact[a][b]).abs() < 1e-8, "k={k}");
                        }
                    }
                    let phi = frame.basis.eval(p);
                    let nk1 = frame.nk1();
                    let rx: f64 = (0..nk1).map(|j| r[j] * phi[j]).sum();
                    let ry: f64 = (0..nk1).map(|j| r[nk1 + j] * phi[j]).sum();
                    assert!((rx - w(p).x).abs() < 1e-10 && (ry - w(p).y).abs() < 1e-10);
                }
            }
            let scale = ops.energy(&v);
            assert!(ops.stabilisation_energy(&mesh, &v) <= 1e-20 * scale, "k={k}");
        }
    }

    #[test]
    fn constant_dofs_reconstruct_constant() {
        let (mesh, ops, nodes) = setup(2, 2);
        let v = interpolate_displacement(&ops.space, &nodes, |_| Vector2::new(1.5, -0.5));
        let fb = FaceBases::new(&mesh, 2).unwrap();
        let frame = CellFrame::new(&mesh, &fb, 1, 2).unwrap();
        let x = DVector::from_iterator(ops.local_dofs[1].len(), ops.local_dofs[1].iter().map(|&i| v[i]));
        let r = &ops.locals[1].reconstruction * x;
        let nk1 = frame.nk1();
        for p in &frame.rule.points {
            let phi = frame.basis.eval(p);
            let rx: f64 = (0..nk1).map(|j| r[j] * phi[j]).sum();
            let ry: f64 = (0..nk1).map(|j| r[nk1 + j] * phi[j]).sum();
            assert!((rx - 1.5).abs() < 1e-12 && (ry + 0.5).abs() < 1e-12);
        }
    }

    // Independent evaluation of a local unknown vector at points.
    struct LocalField<'a> {
        frame: &'a CellFrame,
        x: DVector<f64>,
        fb: &'a FaceBases,
    }

    impl LocalField<'_> {
        fn cell(&self, p: &Point2<f64>) -> Vector2<f64> {
            let nk = self.frame.nk();
            let v = self.frame.basis.eval(p);
            Vector2::new(
                (0..nk).map(|i| self.x[i] * v[i]).sum(),
                (0..nk).map(|i| self.x[nk + i] * v[i]).sum(),
            )
        }
        fn face(&self, i: usize, p: &Point2<f64>) -> Vector2<f64> {
            let nk = self.frame.nk();
            let nf = self.frame.nf();
            let psi = self.fb.get(self.frame.faces[i].face).eval(p);
            let o = 2 * nk + 2 * nf * i;
            Vector2::new(
                (0..nf).map(|m| self.x[o + m] * psi[m]).sum(),
                (0..nf).map(|m| self.x[o + nf + m] * psi[m]).sum(),
            )
        }
    }

    #[test]
    fn strain_matches_monomial_oracle_on_random_dofs() {
        let mesh = build_trapezoidal_mesh(4, 0.1).unwrap();
        let k = 2;
        let fb = FaceBases::new(&mesh, k).unwrap();
        let c = 6;
        let frame = CellFrame::new(&mesh, &fb, c, k).unwrap();
        let loc = build_local(&frame, 1.0, 1.0).unwrap();
        let n = loc.strain.ncols();
        let x = DVector::from_fn(n, |i, _| ((i * 37 % 11) as f64 - 5.0) / 7.0);
        let field = LocalField { frame: &frame, x: x.clone(), fb: &fb };
        // oracle: raw monomial test tensors, moments from pointwise values, dense solve
        let mono = CellBasis::new(&mesh, c, k, BasisKind::Monomial).unwrap();
        let nk = mono.dim();
        let rule = crate::poly_basis::cell_quadrature(&mesh, c, 2 * k + 4).unwrap();
        let tensors: [[[f64; 2]; 2]; 3] = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]], [[0.0, 1.0], [1.0, 0.0]]];
        let nt = 3 * nk;
        let mut gram = DMatrix::<f64>::zeros(nt, nt);
        let mut rhs = DVector::<f64>::zeros(nt);
        for (p, w) in rule.iter() {
            let (v, dx, dy) = mono.eval_with_grad(p);
            let vt = field.cell(p);
            for a in 0..3 {
                for i in 0..nk {
                    let s = tensors[a];
                    // div(S phi) = S grad phi
                    let div = Vector2::new(s[0][0] * dx[i] + s[0][1] * dy[i], s[1][0] * dx[i] + s[1][1] * dy[i]);
                    rhs[a * nk + i] -= w * vt.dot(&div);
                    for b in 0..3 {
                        let t = tensors[b];
                        let dd: f64 = (0..2).flat_map(|r| (0..2).map(move |q| (r, q))).map(|(r, q)| s[r][q] * t[r][q]).sum();
                        for j in 0..nk {
                            gram[(a * nk + i, b * nk + j)] += w * dd * v[i] * v[j];
                        }
                    }
                }
            }
        }
        for (fi, ff) in frame.faces.iter().enumerate() {
            for (p, w) in ff.rule.iter() {
                let vf = field.face(fi, p);
                let v = mono.eval(p);
                for a in 0..3 {
                    let s = tensors[a];
                    let sn = Vector2::new(s[0][0] * ff.normal.x + s[0][1] * ff.normal.y, s[1][0] * ff.normal.x + s[1][1] * ff.normal.y);
                    for i in 0..nk {
                        rhs[a * nk + i] += w * vf.dot(&sn) * v[i];
                    }
                }
            }
        }
        let coef = gram.lu().solve(&rhs).unwrap();
        let e = &loc.strain * &x;
        for p in frame.rule.points.iter().step_by(5) {
            let v = mono.eval(p);
            let s = |a: usize| (0..nk).map(|i| coef[a * nk + i] * v[i]).sum::<f64>();
            let oracle = [[s(0), s(2)], [s(2), s(1)]];
            let got = strain_at(&frame, &e, p);
            for a in 0..2 {
                for b in 0..2 {
                    assert!((oracle[a][b] - got[a][b]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn reconstruction_closure_conditions() {
        let mesh = build_trapezoidal_mesh(4, 0.1).unwrap();
        let k = 1;
        let fb = FaceBases::new(&mesh, k).unwrap();
        let frame = CellFrame::new(&mesh, &fb, 9, k).unwrap();
        let loc = build_local(&frame, 1.0, 1.0).unwrap();
        let n = loc.strain.ncols();
        let x = DVector::from_fn(n, |i, _| (i as f64 * 0.77).sin());
        let field = LocalField { frame: &frame, x: x.clone(), fb: &fb };
        let r = &loc.reconstruction * &x;
        let nk1 = frame.nk1();
        let (mut int_r, mut int_v, mut skew) = (Vector2::zeros(), Vector2::zeros(), 0.0);
        for (p, w) in frame.rule.iter() {
            let (phi, dx, dy) = frame.basis.eval_with_grad(p);
            int_r += w * Vector2::new((0..nk1).map(|j| r[j] * phi[j]).sum(), (0..nk1).map(|j| r[nk1 + j] * phi[j]).sum());
            int_v += w * field.cell(p);
            let dyrx: f64 = (0..nk1).map(|j| r[j] * dy[j]).sum();
            let dxry: f64 = (0..nk1).map(|j| r[nk1 + j] * dx[j]).sum();
            skew += w * 0.5 * (dyrx - dxry);
        }
        let mut skew_faces = 0.0;
        for (fi, ff) in frame.faces.iter().enumerate() {
            for (p, w) in ff.rule.iter() {
                let vf = field.face(fi, p);
                skew_faces += w * 0.5 * (vf.x * ff.normal.y - vf.y * ff.normal.x);
            }
        }
        assert!((int_r - int_v).amax() < 1e-12);
        assert!((skew - skew_faces).abs() < 1e-12);
    }

    #[test]
    fn seminorm_of_linear_field() {
        let (_, ops, nodes) = setup(2, 1);
        let v = interpolate_displacement(&ops.space, &nodes, |p| Vector2::new(p.x, -p.y));
        assert!((ops.seminorm_sq(&v) - 2.0).abs() < 1e-10);
        assert_eq!(ops.seminorm_sq(&DVector::zeros(ops.space.len())), 0.0);
        let t = ops.assemble_seminorm();
        assert!((t.mul_vec(&v).dot(&v) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn seminorm_matches_term_by_term_oracle() {
        let mesh = build_trapezoidal_mesh(2, 0.1).unwrap();
        let k = 1;
        let ops = MechOperators::new(&mesh, k, 1.0, 1.0).unwrap();
        let fb = FaceBases::new(&mesh, k).unwrap();
        let v = DVector::from_fn(ops.space.len(), |i, _| ((i * 13 % 7) as f64 - 3.0) * 0.1);
        let mut oracle = 0.0;
        for c in 0..mesh.num_cells() {
            let frame = CellFrame::new(&mesh, &fb, c, k).unwrap();
            let x = DVector::from_iterator(ops.local_dofs[c].len(), ops.local_dofs[c].iter().map(|&i| v[i]));
            let field = LocalField { frame: &frame, x, fb: &fb };
            let nk = frame.nk();
            for (p, w) in frame.rule.iter() {
                let (_, dx, dy) = frame.basis.eval_with_grad(p);
                let gxx: f64 = (0..nk).map(|i| field.x[i] * dx[i]).sum();
                let gxy: f64 = (0..nk).map(|i| field.x[i] * dy[i]).sum();
                let gyx: f64 = (0..nk).map(|i| field.x[nk + i] * dx[i]).sum();
                let gyy: f64 = (0..nk).map(|i| field.x[nk + i] * dy[i]).sum();
                let off = 0.5 * (gxy + gyx);
                oracle += w * (gxx * gxx + gyy * gyy + 2.0 * off * off);
            }
            for (fi, ff) in frame.faces.iter().enumerate() {
                for (p, w) in ff.rule.iter() {
                    oracle += w / ff.diameter * (field.face(fi, p) - field.cell(p)).norm_squared();
                }
            }
        }
        assert!((ops.seminorm_sq(&v) - oracle).abs() < 1e-11 * oracle);
    }

    #[test]
    fn energy_of_interpolated_polynomial() {
        for k in 1..=3 {
            let (mesh, ops, nodes) = setup(2, k);
            let w = poly_field(k + 1);
            let v = interpolate_displacement(&ops.space, &nodes, &w);
            let mut exact = 0.0;
            for c in 0..mesh.num_cells() {
                let rule = crate::poly_basis::cell_quadrature(&mesh, c, 2 * k).unwrap();
                for (p, wq) in rule.iter() {
                    let g = sym_grad(&w, p);
                    let tr = g[0][0] + g[1][1];
                    let gg = g[0][0].powi(2) + g[1][1].powi(2) + 2.0 * g[0][1].powi(2);
                    exact += wq * (2.0 * gg + tr * tr);
                }
            }
            let got = ops.energy(&v);
            assert!((got - exact).abs() < 1e-8 * exact, "k={k}: {got} vs {exact}");
        }
    }

    #[test]
    fn ah_positive_on_clamped_space_and_symmetric() {
        let (_, ops, _) = setup(2, 1);
        let a = ops.assemble_ah().to_dense();
        assert_eq!(a, a.transpose());
        let free = ops.space.free_dofs();
        let af = principal_submatrix(&a, &free);
        let ev = nalgebra::SymmetricEigen::new(af.clone()).eigenvalues;
        let lmin = ev.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(lmin > 0.0);
        // oracle: inverse iteration with a dense LU
        let lu = af.clone().lu();
        let mut x = DVector::from_element(af.nrows(), 1.0);
        for _ in 0..500 {
            x = lu.solve(&x).unwrap();
            x /= x.norm();
        }
        let rq = x.dot(&(&af * &x));
        assert!((rq - lmin).abs() < 1e-8 * lmin);
    }

    #[test]
    fn k0_jump_term_needed_for_coercivity() {
        let (_, ops, _) = setup(2, 0);
        assert_eq!(ops.jumps.len(), 12);
        let a = ops.assemble_ah().to_dense();
        let free = ops.space.free_dofs();
        let ev = nalgebra::SymmetricEigen::new(principal_submatrix(&a, &free)).eigenvalues;
        assert!(ev.iter().all(|&l| l > 1e-8));
    }

    #[test]
    fn coercivity_brackets_are_mesh_stable() {
        let mut brackets = Vec::new();
        for n in [2, 4, 8] {
            let (_, ops, _) = setup(n, 1);
            let free = ops.space.free_dofs();
            let a = principal_submatrix(&ops.assemble_ah().to_dense(), &free);
            let s = principal_submatrix(&ops.assemble_seminorm().to_dense(), &free);
            let ev = generalized_eigenvalues(&a, &s).unwrap();
            brackets.push((ev[0], *ev.last().unwrap()));
        }
        for w in brackets.windows(2) {
            assert!((w[1].0 / w[0].0 - 1.0).abs() < 0.25, "{brackets:?}");
            assert!((w[1].1 / w[0].1 - 1.0).abs() < 0.25, "{brackets:?}");
        }
    }

    #[test]
    fn interpolate_reproduces_cellwise_polynomials() {
        let (mesh, ops, nodes) = setup(2, 2);
        let w = poly_field(2);
        let v = interpolate_displacement(&ops.space, &nodes, &w);
        let fb = FaceBases::new(&mesh, 2).unwrap();
        let frame = CellFrame::new(&mesh, &fb, 3, 2).unwrap();
        let x = DVector::from_iterator(ops.local_dofs[3].len(), ops.local_dofs[3].iter().map(|&i| v[i]));
        let field = LocalField { frame: &frame, x, fb: &fb };
        for p in &frame.rule.points {
            assert!((field.cell(p) - w(p)).amax() < 1e-12);
        }
        assert_eq!(interpolate_displacement(&ops.space, &nodes, |_| Vector2::zeros()).amax(), 0.0);
    }
}
