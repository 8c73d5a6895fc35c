//! Sparse assembly buffers, a sparse LU wrapper and small dense helpers.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Thread count used by the sparse factorisation; `0` or `1` runs sequentially.
pub fn set_thread_count(threads: usize) {
    faer::set_global_parallelism(if threads <= 1 { Par::Seq } else { Par::rayon(threads) });
}

/// Coordinate-format accumulator; duplicate entries are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.entries.push((i, j, v));
    }

    /// Scatters a dense block with row map `rows` and column map `cols`.
    pub fn add_block(&mut self, rows: &[usize], cols: &[usize], block: &DMatrix<f64>) {
        for (b, &j) in cols.iter().enumerate() {
            for (a, &i) in rows.iter().enumerate() {
                self.push(i, j, block[(a, b)]);
            }
        }
    }

    pub fn to_csc(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self
            .entries
            .iter()
            .map(|&(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::Factorisation(format!("{e:?}")))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    /// Number of distinct structural positions.
    pub fn structural_nnz(&self) -> usize {
        let mut pos: Vec<(usize, usize)> = self.entries.iter().map(|&(i, j, _)| (i, j)).collect();
        pos.sort_unstable();
        pos.dedup();
        pos.len()
    }

    /// `y = M x` without forming the compressed matrix.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.nrows);
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }
}

/// Compressed matrix with a general sparse LU factorisation.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(matrix: &SparseColMat<usize, f64>) -> Result<Self> {
        let n = matrix.nrows();
        let lu = matrix
            .sp_lu()
            .map_err(|e| Error::Factorisation(format!("{e:?}")))?;
        Ok(Self { n, lu })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(x.as_mut());
        DVector::from_fn(self.n, |i, _| x[(i, 0)])
    }
}

/// Compressed sparse matrix-vector product `y = M x`.
pub fn csc_mul(m: &SparseColMat<usize, f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut y = DVector::zeros(m.nrows());
    let sym = m.symbolic();
    let vals = m.val();
    let col_ptr = sym.col_ptr();
    let row_idx = sym.row_idx();
    for j in 0..m.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for p in col_ptr[j]..col_ptr[j + 1] {
            y[row_idx[p]] += vals[p] * xj;
        }
    }
    y
}

/// Eigenvalues (ascending) of the symmetric-definite pencil `(a, b)`.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let l = b
        .clone()
        .cholesky()
        .ok_or(Error::Singular("generalized eigenproblem metric"))?
        .l();
    let n = l.nrows();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(Error::Singular("generalized eigenproblem metric"))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Restriction `M[idx, idx]` of a dense matrix.
pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| m[(idx[a], idx[b])])
}

/// Orthonormal basis (as columns) of the orthogonal complement of `v`, via one
/// Householder reflection.
pub fn complement_basis(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let mut u = v.normalize();
    // reflect onto -sign(u_0) e_0 to avoid cancellation
    u[0] += if u[0] >= 0.0 { 1.0 } else { -1.0 };
    let norm = u.norm();
    let mut h = DMatrix::identity(n, n);
    if norm > 0.0 {
        u /= norm;
        h.ger(-2.0, &u, &u, 1.0);
    }
    h.columns(1, n - 1).into_owned()
}

/// Elimination data of the interior unknowns of one local system.
#[derive(Debug, Clone)]
pub struct Condensed {
    /// `K_II^{-1}`.
    pub interior_inverse: DMatrix<f64>,
    /// `K_II^{-1} K_IE`.
    pub coupling: DMatrix<f64>,
}

impl Condensed {
    /// Contribution `-K_EI K_II^{-1} b_I` of interior loads to the exterior rows.
    pub fn reduce_rhs(&self, b_interior: &DVector<f64>) -> DVector<f64> {
        -self.coupling.tr_mul(b_interior)
    }

    /// Interior unknowns from interior loads and exterior unknowns.
    pub fn recover(&self, b_interior: &DVector<f64>, x_exterior: &DVector<f64>) -> DVector<f64> {
        &self.interior_inverse * b_interior - &self.coupling * x_exterior
    }
}

/// Schur complement `K_EE - K_EI K_II^{-1} K_IE` of a symmetric local matrix.
pub fn condense(local: &DMatrix<f64>, interior: &[usize], exterior: &[usize]) -> Result<(DMatrix<f64>, Condensed)> {
    let kii = DMatrix::from_fn(interior.len(), interior.len(), |a, b| local[(interior[a], interior[b])]);
    let kie = DMatrix::from_fn(interior.len(), exterior.len(), |a, b| local[(interior[a], exterior[b])]);
    let kee = DMatrix::from_fn(exterior.len(), exterior.len(), |a, b| local[(exterior[a], exterior[b])]);
    let interior_inverse = kii
        .lu()
        .try_inverse()
        .ok_or(Error::Singular("static condensation interior block"))?;
    let coupling = &interior_inverse * &kie;
    let schur = kee - kie.tr_mul(&coupling);
    Ok((
        schur,
        Condensed {
            interior_inverse,
            coupling,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_small_indefinite_system() {
        let mut t = Triplets::new(3, 3);
        t.push(0, 0, 2.0);
        t.push(0, 2, 1.0);
        t.push(2, 0, 1.0);
        t.push(1, 1, 4.0);
        t.push(2, 2, -1.0);
        t.push(1, 1, 1.0);
        let m = t.to_csc().unwrap();
        assert_eq!(t.structural_nnz(), 5);
        let lu = SparseLu::new(&m).unwrap();
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = lu.solve(&b);
        assert!((csc_mul(&m, &x) - &b).amax() < 1e-14);
        assert!((t.mul_vec(&x) - &b).amax() < 1e-14);
        assert!((t.to_dense() * &x - b).amax() < 1e-14);
    }

    #[test]
    fn condensation_matches_direct_solve() {
        let n = 6;
        let mut m = DMatrix::from_fn(n, n, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        m += DMatrix::identity(n, n) * 2.0;
        m[(4, 4)] = -3.0;
        let b = DVector::from_fn(n, |i, _| i as f64 - 2.0);
        let direct = m.clone().lu().solve(&b).unwrap();
        let interior = [0, 2, 4];
        let exterior = [1, 3, 5];
        let (s, c) = condense(&m, &interior, &exterior).unwrap();
        let bi = DVector::from_fn(3, |a, _| b[interior[a]]);
        let be = DVector::from_fn(3, |a, _| b[exterior[a]]) + c.reduce_rhs(&bi);
        let xe = s.lu().solve(&be).unwrap();
        let xi = c.recover(&bi, &xe);
        for a in 0..3 {
            assert!((xe[a] - direct[exterior[a]]).abs() < 1e-12);
            assert!((xi[a] - direct[interior[a]]).abs() < 1e-12);
        }
    }

    #[test]
    fn complement_basis_is_orthonormal_and_orthogonal() {
        for v in [vec![1.0, 2.0, -0.5, 0.0], vec![-3.0, 0.1, 0.0, 1.0]] {
            let v = DVector::from_vec(v);
            let q = complement_basis(&v);
            assert_eq!(q.ncols(), 3);
            assert!((q.tr_mul(&q) - DMatrix::identity(3, 3)).amax() < 1e-14);
            assert!(q.tr_mul(&v).amax() < 1e-14);
        }
    }

    #[test]
    fn generalized_eigenvalues_of_scaled_identity() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 6.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let ev = generalized_eigenvalues(&a, &b).unwrap();
        assert!((ev[0] - 2.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }
}
