//! Polynomial bases, quadrature rules, Gram matrices and `L^2` projectors.

mod basis;
mod local;
mod quadrature;

pub use basis::{
    dim_cell, dim_face, face_mass_matrix, l2_project_cell, l2_project_face, mass_matrix,
    monomial_exponents, stiffness_matrix, BasisKind, CellBasis, FaceBasis,
};
pub use local::{CellFrame, FaceBases, FaceFrame, ProjectionNodes, WeightedNodes};
pub use quadrature::{
    cell_quadrature, face_quadrature, gauss_jacobi, gauss_legendre_unit, polygon_quadrature,
    segment_quadrature, triangle_rule, QuadratureRule,
};
