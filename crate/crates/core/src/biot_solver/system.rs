use faer::sparse::SparseColMat;
use nalgebra::{DMatrix, DVector};

use super::{BiotConfig, BiotData, Scheme};
use crate::darcy_dg::{default_penalty, DarcyDgOperators};
use crate::darcy_hho::DarcyHhoOperators;
use crate::error::{Error, Result};
use crate::linalg::{condense, csc_mul, Condensed, SparseLu, Triplets};
use crate::mech_hho::MechOperators;
use crate::mesh::{BcKind, Mesh};
use crate::poly_basis::{dim_cell, dim_face, FaceBases, ProjectionNodes};

/// Global unknown layout `[u faces | p exterior | lambda | u cells | p cells]`.
///
/// The exterior pressure block holds face unknowns for the hybrid scheme and all cell
/// unknowns for the DG scheme. When cell unknowns are condensed, only the prefix up to
/// and including `lambda` enters the factorised system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub u_faces: usize,
    pub p_exterior: usize,
    pub multiplier: bool,
    pub u_cells: usize,
    /// Cell pressure unknowns placed after the displacement cells (hybrid scheme only).
    pub p_cells: usize,
    pub condensed: bool,
}

impl Layout {
    /// Unknown counts of `config` on `mesh`, without assembling anything.
    pub fn new(mesh: &Mesh, config: &BiotConfig) -> Self {
        let k = config.degree;
        let (nk, nf) = (dim_cell(k), dim_face(k));
        let (p_exterior, p_cells) = match config.scheme {
            Scheme::HhoHho => (nf * mesh.num_faces(), nk * mesh.num_cells()),
            Scheme::HhoDg => (nk * mesh.num_cells(), 0),
        };
        Self {
            u_faces: 2 * nf * mesh.num_faces(),
            p_exterior,
            multiplier: config.storage == 0.0 && !mesh.has_dirichlet_pressure() && !mesh.has_neumann_displacement(),
            u_cells: 2 * nk * mesh.num_cells(),
            p_cells,
            condensed: config.condense && k > 0,
        }
    }

    /// Length of the exterior prefix.
    pub fn prefix(&self) -> usize {
        self.u_faces + self.p_exterior + usize::from(self.multiplier)
    }

    pub fn total(&self) -> usize {
        self.prefix() + self.u_cells + self.p_cells
    }

    /// Size of the factorised system.
    pub fn system_size(&self) -> usize {
        if self.condensed {
            self.prefix()
        } else {
            self.total()
        }
    }

    /// Position of displacement unknown `i` (displacement-space numbering).
    pub fn u_index(&self, i: usize) -> usize {
        if i < self.u_faces {
            i
        } else {
            self.prefix() + i - self.u_faces
        }
    }

    /// Position of pressure unknown `i` (pressure-space numbering, faces first for the
    /// hybrid scheme).
    pub fn p_index(&self, i: usize) -> usize {
        if self.p_cells == 0 || i < self.p_exterior {
            self.u_faces + i
        } else {
            self.prefix() + self.u_cells + i - self.p_exterior
        }
    }

    pub fn multiplier_index(&self) -> Option<usize> {
        self.multiplier.then_some(self.u_faces + self.p_exterior)
    }
}

/// Pressure discretisation kept alongside the assembled system.
#[derive(Debug, Clone)]
pub enum Darcy {
    Hho(DarcyHhoOperators),
    Dg(DarcyDgOperators),
}

impl Darcy {
    pub fn len(&self) -> usize {
        match self {
            Darcy::Hho(d) => d.space.len(),
            Darcy::Dg(d) => d.space.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of the cell unknowns in pressure-space numbering.
    pub fn cell_offset(&self) -> usize {
        match self {
            Darcy::Hho(d) => d.space.num_face_dofs(),
            Darcy::Dg(_) => 0,
        }
    }
}

#[derive(Debug, Clone)]
struct CellBlock {
    global: Vec<usize>,
    interior: Vec<usize>,
    exterior: Vec<usize>,
    condensed: Option<Condensed>,
}

/// Data-dependent loads sampled at one time, before scaling.
#[derive(Debug, Clone)]
pub struct Loads {
    /// Displacement-space numbering: `(f, v_T)` and Neumann tractions.
    pub mech: DVector<f64>,
    /// Pressure-space numbering: `(g, q_T)` and Neumann fluxes.
    pub flow: DVector<f64>,
}

impl Loads {
    pub fn axpy(&mut self, a: f64, other: &Loads) {
        self.mech.axpy(a, &other.mech, 1.0);
        self.flow.axpy(a, &other.flow, 1.0);
    }
}

/// The constant-in-time algebraic system of one BDF order.
pub struct BiotSystem {
    pub config: BiotConfig,
    pub layout: Layout,
    /// Mechanical operators, reduced to what norms and divergences need.
    pub mech: MechOperators,
    pub darcy: Darcy,
    pub nodes: ProjectionNodes,
    /// `tau / a0`.
    pub theta: f64,
    pub bdf: Vec<f64>,
    cells: Vec<CellBlock>,
    dirichlet: Vec<bool>,
    lifting: Vec<(usize, usize, f64)>,
    nnz: usize,
    matrix: SparseColMat<usize, f64>,
    lu: SparseLu,
}

fn compact(mech: &mut MechOperators) {
    for loc in &mut mech.locals {
        loc.strain = DMatrix::zeros(0, 0);
        loc.reconstruction = DMatrix::zeros(0, 0);
        loc.differences.clear();
        loc.stabilisation = DMatrix::zeros(0, 0);
        loc.stiffness = DMatrix::zeros(0, 0);
        loc.traces.clear();
    }
}

impl BiotSystem {
    /// Assembles and factorises the system for BDF order `order` (which may be lower than
    /// `config.bdf_order` during a ramped start).
    pub fn assemble(mesh: &Mesh, config: &BiotConfig, order: usize) -> Result<Self> {
        config.validate()?;
        let k = config.degree;
        if config.permeability.len() != mesh.num_cells() {
            return Err(Error::Unsupported(format!(
                "permeability field has {} cells, mesh has {}",
                config.permeability.len(),
                mesh.num_cells()
            )));
        }
        let bdf = super::bdf_coefficients(order)?;
        let theta = config.tau / bdf[0];
        let mut mech = MechOperators::new(mesh, k, config.mu, config.lambda)?;
        let darcy = match config.scheme {
            Scheme::HhoHho => Darcy::Hho(DarcyHhoOperators::new(mesh, k, &config.permeability)?),
            Scheme::HhoDg => {
                let eta = config.penalty.unwrap_or_else(|| default_penalty(k));
                Darcy::Dg(DarcyDgOperators::new(mesh, k, &config.permeability, eta)?)
            }
        };
        let fb = FaceBases::new(mesh, k)?;
        let nodes = ProjectionNodes::new(mesh, &fb, k)?;

        let layout = Layout::new(mesh, config);
        let space = &mech.space;
        let nk = space.nk();
        let n_sys = layout.system_size();
        let mut sys = Triplets::new(n_sys, n_sys);
        let mut cells = Vec::with_capacity(mesh.num_cells());

        for c in 0..mesh.num_cells() {
            let (local, global, n_u) = cell_element(mesh, config, &mech, &darcy, &layout, c, theta);
            let is_interior = |a: usize| {
                layout.condensed && (a < 2 * nk || (layout.p_cells > 0 && a >= n_u && a < n_u + nk))
            };
            let interior: Vec<usize> = (0..global.len()).filter(|&a| is_interior(a)).collect();
            let exterior: Vec<usize> = (0..global.len()).filter(|&a| !is_interior(a)).collect();
            let ext_global: Vec<usize> = exterior.iter().map(|&a| global[a]).collect();
            let condensed = if interior.is_empty() {
                sys.add_block(&ext_global, &ext_global, &local);
                None
            } else {
                let (schur, cond) = condense(&local, &interior, &exterior)?;
                sys.add_block(&ext_global, &ext_global, &schur);
                Some(cond)
            };
            cells.push(CellBlock {
                global,
                interior,
                exterior,
                condensed,
            });
        }

        match &darcy {
            Darcy::Dg(d) => {
                let map = |r: std::ops::Range<usize>| r.map(|i| layout.p_index(i)).collect::<Vec<_>>();
                for e in &d.interior {
                    let dofs: Vec<usize> = map(d.space.cell_range(e.cells[0]))
                        .into_iter()
                        .chain(map(d.space.cell_range(e.cells[1])))
                        .collect();
                    sys.add_block(&dofs, &dofs, &(&e.matrix * -theta));
                }
                for b in d.boundary.iter().filter(|b| b.kind == BcKind::Dirichlet) {
                    let dofs = map(d.space.cell_range(b.cell));
                    sys.add_block(&dofs, &dofs, &(&b.matrix * -theta));
                }
            }
            Darcy::Hho(_) => {}
        }
        for j in &mech.jumps {
            let dofs: Vec<usize> = j
                .cells
                .iter()
                .flat_map(|&c| mech.local_dofs[c].iter().map(|&i| layout.u_index(i)))
                .collect();
            sys.add_block(&dofs, &dofs, &(&j.matrix * (2.0 * config.mu)));
        }

        let nnz = sys.structural_nnz();
        let mut dirichlet = vec![false; n_sys];
        for f in 0..mesh.num_faces() {
            if space.is_dirichlet_face(f) {
                for i in space.face_range(f) {
                    dirichlet[layout.u_index(i)] = true;
                }
            }
            if let Darcy::Hho(d) = &darcy {
                if d.space.is_dirichlet_face(f) {
                    for i in d.space.face_range(f) {
                        dirichlet[layout.p_index(i)] = true;
                    }
                }
            }
        }
        let mut bc = Triplets::new(n_sys, n_sys);
        let mut lifting = Vec::new();
        for &(i, j, v) in &sys.entries {
            if dirichlet[i] {
                continue;
            }
            if dirichlet[j] {
                lifting.push((i, j, v));
            } else {
                bc.push(i, j, v);
            }
        }
        drop(sys);
        for (d, _) in dirichlet.iter().enumerate().filter(|(_, &is)| is) {
            bc.push(d, d, 1.0);
        }
        let matrix = bc.to_csc()?;
        drop(bc);
        let lu = SparseLu::new(&matrix)?;

        compact(&mut mech);
        Ok(Self {
            config: config.clone(),
            layout,
            mech,
            darcy,
            nodes,
            theta,
            bdf,
            cells,
            dirichlet,
            lifting,
            nnz,
            matrix,
            lu,
        })
    }

    /// Size of the factorised system, Dirichlet unknowns included.
    pub fn num_dofs(&self) -> usize {
        self.layout.system_size()
    }

    /// Structural nonzeros of the factorised operator before boundary rows are replaced.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// Factorised operator (Dirichlet rows replaced by identity rows).
    pub fn matrix(&self) -> &SparseColMat<usize, f64> {
        &self.matrix
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        i < self.dirichlet.len() && self.dirichlet[i]
    }

    /// Right-hand side of the factorised system from a full-length load vector whose
    /// Dirichlet positions hold the prescribed values.
    pub fn system_rhs(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.layout.system_size();
        let mut b = rhs.rows(0, n).into_owned();
        for cell in &self.cells {
            if let Some(cond) = &cell.condensed {
                let bi = DVector::from_iterator(cell.interior.len(), cell.interior.iter().map(|&a| rhs[cell.global[a]]));
                let r = cond.reduce_rhs(&bi);
                for (e, &a) in cell.exterior.iter().enumerate() {
                    b[cell.global[a]] += r[e];
                }
            }
        }
        for &(i, j, v) in &self.lifting {
            b[i] -= v * rhs[j];
        }
        for (d, _) in self.dirichlet.iter().enumerate().filter(|(_, &is)| is) {
            b[d] = rhs[d];
        }
        b
    }

    /// Solves for the full unknown vector.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let xs = self.lu.solve(&self.system_rhs(rhs));
        let mut x = DVector::zeros(self.layout.total());
        x.rows_mut(0, xs.len()).copy_from(&xs);
        for cell in &self.cells {
            if let Some(cond) = &cell.condensed {
                let bi = DVector::from_iterator(cell.interior.len(), cell.interior.iter().map(|&a| rhs[cell.global[a]]));
                let xe = DVector::from_iterator(cell.exterior.len(), cell.exterior.iter().map(|&a| x[cell.global[a]]));
                let xi = cond.recover(&bi, &xe);
                for (m, &a) in cell.interior.iter().enumerate() {
                    x[cell.global[a]] = xi[m];
                }
            }
        }
        x
    }

    /// `matrix * x - system_rhs(rhs)` on the factorised unknowns.
    pub fn residual(&self, x: &DVector<f64>, rhs: &DVector<f64>) -> DVector<f64> {
        let n = self.layout.system_size();
        csc_mul(&self.matrix, &x.rows(0, n).into_owned()) - self.system_rhs(rhs)
    }

    /// Displacement unknowns in displacement-space numbering.
    pub fn displacement(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.mech.space.len(), |i, _| x[self.layout.u_index(i)])
    }

    /// Pressure unknowns in pressure-space numbering.
    pub fn pressure(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.darcy.len(), |i, _| x[self.layout.p_index(i)])
    }

    /// Cell pressure coefficients, `dim P^k(T)` per cell.
    pub fn cell_pressure(&self, x: &DVector<f64>) -> DVector<f64> {
        let off = self.darcy.cell_offset();
        let n = self.darcy.len() - off;
        DVector::from_fn(n, |i, _| x[self.layout.p_index(off + i)])
    }

    /// Cellwise porosity coefficients `C0 p_T + D_T u_T`.
    pub fn porosity(&self, x: &DVector<f64>) -> DVector<f64> {
        let nk = self.mech.space.nk();
        let mut phi = self.cell_pressure(x) * self.config.storage;
        for (c, cell) in self.cells.iter().enumerate() {
            let div = &self.mech.locals[c].divergence;
            let u = DVector::from_iterator(div.ncols(), cell.global[..div.ncols()].iter().map(|&g| x[g]));
            let mut seg = phi.rows_mut(c * nk, nk);
            seg += div * u;
        }
        phi
    }

    /// Porosity of interpolated exact fields at time `t`.
    pub fn interpolated_porosity(&self, data: &dyn BiotData, t: f64) -> DVector<f64> {
        let nk = self.mech.space.nk();
        let mut phi = DVector::zeros(nk * self.cells.len());
        for (c, wn) in self.nodes.cells.iter().enumerate() {
            let p = wn.moments(|x| data.pressure(x, t));
            let mut seg = phi.rows_mut(c * nk, nk);
            seg += p * self.config.storage;
        }
        let u = crate::mech_hho::interpolate_displacement(&self.mech.space, &self.nodes, |x| data.displacement(x, t));
        phi + self.mech.divergence(&u)
    }

    /// Sources, loads, tractions and fluxes at time `t`.
    pub fn loads(&self, mesh: &Mesh, data: &dyn BiotData, t: f64) -> Loads {
        let space = &self.mech.space;
        let mut mech = DVector::zeros(space.len());
        for (c, wn) in self.nodes.cells.iter().enumerate() {
            mech.rows_mut(space.cell_range(c).start, 2 * space.nk())
                .copy_from(&wn.vector_moments(|x| data.load(x, t)));
        }
        for (f, face) in mesh.faces().iter().enumerate() {
            if face.bc.is_some_and(|bc| bc.u == BcKind::Neumann) {
                let n = face.normal;
                mech.rows_mut(space.face_range(f).start, 2 * space.nf())
                    .copy_from(&self.nodes.faces[f].vector_moments(|x| data.traction(x, &n, t)));
            }
        }
        let mut flow = DVector::zeros(self.darcy.len());
        let off = self.darcy.cell_offset();
        let nk = space.nk();
        for (c, wn) in self.nodes.cells.iter().enumerate() {
            flow.rows_mut(off + c * nk, nk).copy_from(&wn.moments(|x| data.source(x, t)));
        }
        match &self.darcy {
            Darcy::Hho(d) => {
                for (f, face) in mesh.faces().iter().enumerate() {
                    if face.bc.is_some_and(|bc| bc.p == BcKind::Neumann) {
                        let n = face.normal;
                        flow.rows_mut(d.space.face_range(f).start, d.space.nf())
                            .copy_from(&self.nodes.faces[f].moments(|x| data.flux(x, &n, t)));
                    }
                }
            }
            Darcy::Dg(d) => flow += d.neumann_rhs(mesh, |x, n| data.flux(x, n, t)),
        }
        Loads { mech, flow }
    }

    /// Full-length right-hand side: `loads` (already time-sampled), Dirichlet data at the
    /// new time `t` and the porosity history (most recent first).
    pub fn rhs(
        &self,
        mesh: &Mesh,
        data: &dyn BiotData,
        loads: &Loads,
        t: f64,
        history: &[&DVector<f64>],
    ) -> DVector<f64> {
        let layout = &self.layout;
        let mut b = DVector::zeros(layout.total());
        for (i, &v) in loads.mech.iter().enumerate() {
            b[layout.u_index(i)] = v;
        }
        let mut flow = loads.flow.clone();
        if let Darcy::Dg(d) = &self.darcy {
            flow += d.dirichlet_rhs(|x| data.pressure(x, t));
        }
        for (i, &v) in flow.iter().enumerate() {
            b[layout.p_index(i)] = -self.theta * v;
        }
        let off = self.darcy.cell_offset();
        for (j, phi) in history.iter().enumerate() {
            let a = self.bdf[j + 1] / self.bdf[0];
            for (i, &v) in phi.iter().enumerate() {
                b[layout.p_index(off + i)] += a * v;
            }
        }
        let space = &self.mech.space;
        for f in 0..mesh.num_faces() {
            if space.is_dirichlet_face(f) {
                let vals = self.nodes.faces[f].vector_moments(|x| data.displacement(x, t));
                for (m, i) in space.face_range(f).enumerate() {
                    b[layout.u_index(i)] = vals[m];
                }
            }
            if let Darcy::Hho(d) = &self.darcy {
                if d.space.is_dirichlet_face(f) {
                    let vals = self.nodes.faces[f].moments(|x| data.pressure(x, t));
                    for (m, i) in d.space.face_range(f).enumerate() {
                        b[layout.p_index(i)] = vals[m];
                    }
                }
            }
        }
        if let Some(l) = layout.multiplier_index() {
            b[l] = self
                .nodes
                .cells
                .iter()
                .enumerate()
                .map(|(c, wn)| mesh.cell(c).area.sqrt() * wn.moments(|x| data.pressure(x, t))[0])
                .sum();
        }
        b
    }

    /// With the multiplier active, the pressure rows tested with constants must balance
    /// the boundary displacement flux: `1^T rhs_p + int D_h u_D = 0`.
    pub(crate) fn check_compatible(&self, mesh: &Mesh, rhs: &DVector<f64>) -> Result<()> {
        if !self.layout.multiplier {
            return Ok(());
        }
        let nk = self.mech.space.nk();
        let off = self.darcy.cell_offset();
        let mut total = 0.0;
        let mut scale: f64 = 1.0;
        for c in 0..mesh.num_cells() {
            let v = rhs[self.layout.p_index(off + c * nk)] * mesh.cell(c).area.sqrt();
            total += v;
            scale = scale.max(v.abs());
        }
        if let Darcy::Hho(d) = &self.darcy {
            // constant face unknowns: first face mode equals sqrt(|F|)
            for f in 0..mesh.num_faces() {
                let v = rhs[self.layout.p_index(d.space.face_range(f).start)] * mesh.face(f).length.sqrt();
                total += v;
                scale = scale.max(v.abs());
            }
        }
        let mut ud = DVector::zeros(self.mech.space.len());
        for f in 0..mesh.num_faces() {
            if self.mech.space.is_dirichlet_face(f) {
                for i in self.mech.space.face_range(f) {
                    ud[i] = rhs[self.layout.u_index(i)];
                }
            }
        }
        let div = self.mech.divergence(&ud);
        for c in 0..mesh.num_cells() {
            let v = div[c * nk] * mesh.cell(c).area.sqrt();
            total += v;
            scale = scale.max(v.abs());
        }
        if total.abs() > 1e-10 * scale {
            return Err(Error::Incompatible(format!(
                "flow data violate the zero-mean condition (residual {total:.3e})"
            )));
        }
        Ok(())
    }
}

/// Local saddle-point matrix of cell `c` with its global map; returns the number of
/// local displacement unknowns as well.
fn cell_element(
    mesh: &Mesh,
    config: &BiotConfig,
    mech: &MechOperators,
    darcy: &Darcy,
    layout: &Layout,
    c: usize,
    theta: f64,
) -> (DMatrix<f64>, Vec<usize>, usize) {
    let loc = &mech.locals[c];
    let n_u = loc.stiffness.nrows();
    let nk = mech.space.nk();
    let mut global: Vec<usize> = mech.local_dofs[c].iter().map(|&i| layout.u_index(i)).collect();
    let (pressure, n_p) = match darcy {
        Darcy::Hho(d) => {
            global.extend(d.local_dofs[c].iter().map(|&i| layout.p_index(i)));
            let mut m = &d.locals[c].matrix * -theta;
            for i in 0..nk {
                m[(i, i)] -= config.storage;
            }
            (m, d.locals[c].matrix.nrows())
        }
        Darcy::Dg(d) => {
            global.extend(d.space.cell_range(c).map(|i| layout.p_index(i)));
            let mut m = &d.stiffness[c] * -theta;
            for i in 0..nk {
                m[(i, i)] -= config.storage;
            }
            (m, nk)
        }
    };
    let mult = layout.multiplier_index();
    let n = n_u + n_p + usize::from(mult.is_some());
    let mut local = DMatrix::zeros(n, n);
    local.view_mut((0, 0), (n_u, n_u)).copy_from(&loc.stiffness);
    local.view_mut((n_u, n_u), (n_p, n_p)).copy_from(&pressure);
    // b_T = -D_T acts on the cell pressure modes, the first nk local pressure unknowns
    let b = -&loc.divergence;
    local.view_mut((n_u, 0), (nk, n_u)).copy_from(&b);
    local.view_mut((0, n_u), (n_u, nk)).copy_from(&b.transpose());
    if let Some(l) = mult {
        let s = mesh.cell(c).area.sqrt();
        local[(n - 1, n_u)] = s;
        local[(n_u, n - 1)] = s;
        global.push(l);
    }
    (local, global, n_u)
}
