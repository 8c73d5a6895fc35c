//! Hybrid high-order discretisation of the quasi-static Biot consolidation problem on
//! general polygonal meshes, with hybrid (HHO) or discontinuous Galerkin (DG)
//! approximations of the Darcy flow.

pub mod biot_solver;
pub mod coupling;
pub mod darcy_dg;
pub mod darcy_hho;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mech_hho;
pub mod mesh;
pub mod poly_basis;

pub use error::{Error, Result};
