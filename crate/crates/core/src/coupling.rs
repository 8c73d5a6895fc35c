//! Displacement–pressure coupling `b_h(v, q) = -(D_h v, q)` and its diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{complement_basis, Triplets};
use crate::mech_hho::MechOperators;
use crate::mesh::Mesh;
use crate::poly_basis::{cell_quadrature, dim_cell, dim_face, face_quadrature, BasisKind, CellBasis, FaceBasis};

/// Local coupling block of one cell: rows are cell pressure modes, columns the local
/// displacement unknowns.
#[derive(Debug, Clone)]
pub struct LocalCouplingMatrix {
    pub cell: usize,
    pub matrix: DMatrix<f64>,
}

/// `b_T = -D_T` for every cell (orthonormal pressure bases make the mass matrix the identity).
pub fn local_coupling(mech: &MechOperators) -> Vec<LocalCouplingMatrix> {
    mech.locals
        .iter()
        .enumerate()
        .map(|(cell, loc)| LocalCouplingMatrix {
            cell,
            matrix: -&loc.divergence,
        })
        .collect()
}

/// Global `b_h` with rows numbered `c * dim P^k(T) + i` over cell pressure modes.
pub fn assemble_bh(mech: &MechOperators, pressure_degree: usize) -> Result<Triplets> {
    let k = mech.space.degree();
    if pressure_degree != k {
        return Err(Error::Unsupported(format!(
            "displacement degree {k} and pressure degree {pressure_degree} differ"
        )));
    }
    let nk = dim_cell(k);
    let mut t = Triplets::new(nk * mech.locals.len(), mech.space.len());
    for lc in local_coupling(mech) {
        let rows: Vec<usize> = (lc.cell * nk..(lc.cell + 1) * nk).collect();
        t.add_block(&rows, &mech.local_dofs[lc.cell], &lc.matrix);
    }
    Ok(t)
}

/// Cross-check path: `-[(div v_T, q)_T + sum_F ((v_F - v_T) . n_TF, q)_F]` assembled by
/// direct quadrature, without going through the strain reconstruction.
pub fn assemble_bh_facewise(mesh: &Mesh, mech: &MechOperators) -> Result<DMatrix<f64>> {
    let space = &mech.space;
    let k = space.degree();
    let nk = dim_cell(k);
    let nf = dim_face(k);
    let mut b = DMatrix::zeros(nk * mesh.num_cells(), space.len());
    for c in 0..mesh.num_cells() {
        let basis = CellBasis::new(mesh, c, k + 1, BasisKind::Orthonormal)?;
        let cell_dofs = space.cell_range(c);
        let (ux, uy) = (cell_dofs.start, cell_dofs.start + nk);
        for (x, w) in cell_quadrature(mesh, c, 2 * k)?.iter() {
            let (v, dx, dy) = basis.eval_with_grad(x);
            for i in 0..nk {
                for j in 0..nk {
                    b[(c * nk + i, ux + j)] -= w * dx[j] * v[i];
                    b[(c * nk + i, uy + j)] -= w * dy[j] * v[i];
                }
            }
        }
        for (fi, &f) in mesh.cell(c).faces.iter().enumerate() {
            let n = mesh.cell_face_normal(c, fi);
            let fbasis = FaceBasis::new(mesh, f, k + 1, BasisKind::Orthonormal)?;
            let fr = space.face_range(f);
            for (x, w) in face_quadrature(mesh, f, 2 * k + 1).iter() {
                let v = basis.eval(x);
                let psi = fbasis.eval(x);
                for i in 0..nk {
                    let wq = w * v[i];
                    for m in 0..nf {
                        b[(c * nk + i, fr.start + m)] -= wq * psi[m] * n.x;
                        b[(c * nk + i, fr.start + nf + m)] -= wq * psi[m] * n.y;
                    }
                    for j in 0..nk {
                        b[(c * nk + i, ux + j)] += wq * v[j] * n.x;
                        b[(c * nk + i, uy + j)] += wq * v[j] * n.y;
                    }
                }
            }
        }
    }
    Ok(b)
}

/// Spectrum of `B N^{-1} B^T` on free displacements, with `N` the strain-seminorm Gram.
fn coupling_schur(mech: &MechOperators, cap: usize) -> Result<DMatrix<f64>> {
    let free = mech.space.free_dofs();
    if free.len() > cap {
        return Err(Error::TooLarge {
            dofs: free.len(),
            cap,
        });
    }
    let b = assemble_bh(mech, mech.space.degree())?.to_dense();
    let n = mech.assemble_seminorm().to_dense();
    let nf = DMatrix::from_fn(free.len(), free.len(), |a, c| n[(free[a], free[c])]);
    let bf = DMatrix::from_fn(b.nrows(), free.len(), |i, a| b[(i, free[a])]);
    let chol = nf
        .cholesky()
        .ok_or(Error::Singular("strain seminorm on clamped displacements"))?;
    let x = chol.solve(&bf.transpose());
    let s = &bf * x;
    Ok((&s + s.transpose()) * 0.5)
}

/// Discrete inf-sup constant: smallest singular value of `b_h` between the strain
/// seminorm on clamped displacements and `L^2` on zero-mean cell pressures.
pub fn infsup_constant(mesh: &Mesh, mech: &MechOperators, cap: usize) -> Result<f64> {
    let s = coupling_schur(mech, cap)?;
    let nk = mech.space.nk();
    let mut mean = DVector::zeros(s.nrows());
    for c in 0..mesh.num_cells() {
        mean[c * nk] = mesh.cell(c).area.sqrt();
    }
    let q = complement_basis(&mean);
    let reduced = q.tr_mul(&(&s * &q));
    let ev = reduced.symmetric_eigenvalues();
    Ok(ev.min().max(0.0).sqrt())
}

/// Boundedness constant `sup |b_h(v, q)| / (||v||_{eps,h} ||q||)` on clamped displacements.
pub fn boundedness_constant(mech: &MechOperators, cap: usize) -> Result<f64> {
    let s = coupling_schur(mech, cap)?;
    Ok(s.symmetric_eigenvalues().max().max(0.0).sqrt())
}
