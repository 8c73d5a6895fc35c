//! Monolithic time stepping for the coupled displacement–pressure problem.
//!
//! Each step solves the symmetric indefinite system
//!
//! ```text
//! [ A    B^T              ] [u]   [ f                                        ]
//! [ B   -(C0 M + theta C) ] [p] = [ -theta g + (1/a0) sum_{j>=1} a_j phi^{n-j} ]
//! ```
//!
//! with `theta = tau / a0`, `a_j` the BDF weights and `phi = C0 p_T + D_h u` the discrete
//! porosity. Cell displacement unknowns (and cell pressure unknowns for the hybrid
//! Darcy scheme) are eliminated cell by cell before factorisation.

mod energy;
mod system;
mod time;

pub use energy::{run_energy_diagnostic, EnergyReport};
pub use system::{BiotSystem, Darcy, Layout, Loads};
pub use time::{bdf_coefficients, run, time_average, time_average_sources, Observer, StepView, TimeState};

use nalgebra::{Point2, Vector2};

use crate::error::{Error, Result};
use crate::mesh::PermeabilityField;

/// Discretisation of the Darcy term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    HhoHho,
    HhoDg,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::HhoHho => "hho-hho",
            Scheme::HhoDg => "hho-dg",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hho-hho" => Ok(Scheme::HhoHho),
            "hho-dg" => Ok(Scheme::HhoDg),
            other => Err(Error::Unsupported(format!("unknown scheme `{other}`"))),
        }
    }
}

/// How the BDF history is filled before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Startup {
    /// Projections of the exact solution at `0, -tau, ..., -(m - 1) tau`.
    ExactHistory,
    /// Only the state at `t = 0`; orders `1, 2, ..., m` are used on the first steps.
    Ramp,
}

#[derive(Debug, Clone)]
pub struct BiotConfig {
    pub scheme: Scheme,
    pub degree: usize,
    pub mu: f64,
    pub lambda: f64,
    /// Storage coefficient `C0 >= 0`.
    pub storage: f64,
    pub permeability: PermeabilityField,
    pub tau: f64,
    pub final_time: f64,
    pub bdf_order: usize,
    /// DG penalty; `None` selects the default.
    pub penalty: Option<f64>,
    /// Eliminate cell unknowns before factorising (ignored for `k = 0`).
    pub condense: bool,
    pub startup: Startup,
}

impl BiotConfig {
    pub fn num_steps(&self) -> usize {
        (self.final_time / self.tau).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme == Scheme::HhoDg && self.degree == 0 {
            return Err(Error::Unsupported("the DG Darcy scheme needs k >= 1".into()));
        }
        if self.degree > 3 {
            return Err(Error::Unsupported(format!("degree {} > 3", self.degree)));
        }
        if !(1..=4).contains(&self.bdf_order) {
            return Err(Error::Unsupported(format!("BDF order {}", self.bdf_order)));
        }
        if self.storage < 0.0 || !self.storage.is_finite() {
            return Err(Error::Unsupported(format!("storage coefficient {}", self.storage)));
        }
        if !(self.tau > 0.0 && self.final_time > 0.0) {
            return Err(Error::Unsupported("time step and final time must be positive".into()));
        }
        let n = self.num_steps();
        if n == 0 || (n as f64 * self.tau - self.final_time).abs() > 1e-9 * self.final_time {
            return Err(Error::Unsupported(format!(
                "final time {} is not a multiple of the time step {}",
                self.final_time, self.tau
            )));
        }
        Ok(())
    }
}

/// Exact or prescribed data of a run.
pub trait BiotData {
    fn displacement(&self, x: &Point2<f64>, t: f64) -> Vector2<f64>;
    fn pressure(&self, x: &Point2<f64>, t: f64) -> f64;
    /// Volumetric load `f`.
    fn load(&self, x: &Point2<f64>, t: f64) -> Vector2<f64>;
    /// Fluid source `g`.
    fn source(&self, x: &Point2<f64>, t: f64) -> f64;
    /// Total traction `(sigma - p Id) n` on Neumann displacement faces.
    fn traction(&self, x: &Point2<f64>, normal: &Vector2<f64>, t: f64) -> Vector2<f64>;
    /// Darcy flux `K grad p . n` on Neumann pressure faces.
    fn flux(&self, x: &Point2<f64>, normal: &Vector2<f64>, t: f64) -> f64;
}

/// Identically vanishing data.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroData;

impl BiotData for ZeroData {
    fn displacement(&self, _: &Point2<f64>, _: f64) -> Vector2<f64> {
        Vector2::zeros()
    }
    fn pressure(&self, _: &Point2<f64>, _: f64) -> f64 {
        0.0
    }
    fn load(&self, _: &Point2<f64>, _: f64) -> Vector2<f64> {
        Vector2::zeros()
    }
    fn source(&self, _: &Point2<f64>, _: f64) -> f64 {
        0.0
    }
    fn traction(&self, _: &Point2<f64>, _: &Vector2<f64>, _: f64) -> Vector2<f64> {
        Vector2::zeros()
    }
    fn flux(&self, _: &Point2<f64>, _: &Vector2<f64>, _: f64) -> f64 {
        0.0
    }
}
