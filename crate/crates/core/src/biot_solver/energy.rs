//! Runtime check of the discrete energy estimate with numerically measured stability
//! constants, for clamped/impermeable boundaries and implicit Euler.

use nalgebra::DVector;

use super::system::Darcy;
use super::time::{run, StepView};
use super::{BiotConfig, BiotData, BiotSystem};
use crate::coupling::infsup_constant;
use crate::error::{Error, Result};
use crate::linalg::{generalized_eigenvalues, principal_submatrix};
use crate::mech_hho::MechOperators;
use crate::mesh::{BcKind, Mesh};

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    /// `None` when the storage coefficient vanishes and the mean terms are dropped.
    pub c3: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

impl EnergyReport {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-12) + f64::MIN_POSITIVE
    }

    /// `rhs / lhs` (infinite when the left side vanishes).
    pub fn slack(&self) -> f64 {
        if self.lhs > 0.0 {
            self.rhs / self.lhs
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Default)]
struct Sums {
    displacement: f64,
    storage: f64,
    zero_mean: f64,
    load_dual: f64,
    cumulative_source: Option<DVector<f64>>,
    source_sq: f64,
    source_mean_sq: f64,
    pressure_sum: Option<DVector<f64>>,
    final_pressure_term: f64,
}

/// Runs `config` on `mesh` and evaluates both sides of the energy estimate. Dense
/// eigenproblems are capped at `cap` unknowns.
pub fn run_energy_diagnostic(mesh: &Mesh, config: &BiotConfig, data: &dyn BiotData, cap: usize) -> Result<EnergyReport> {
    let clamped = mesh
        .faces()
        .iter()
        .filter_map(|f| f.bc)
        .all(|bc| bc.u == BcKind::Dirichlet && bc.p == BcKind::Neumann);
    if !clamped {
        return Err(Error::Unsupported(
            "the energy diagnostic needs clamped, impermeable boundaries".into(),
        ));
    }
    if config.bdf_order != 1 {
        return Err(Error::Unsupported("the energy diagnostic needs BDF1".into()));
    }

    let mech = MechOperators::new(mesh, config.degree, config.mu, config.lambda)?;
    let free = mech.space.free_dofs();
    if free.len() > cap {
        return Err(Error::TooLarge { dofs: free.len(), cap });
    }
    let a = principal_submatrix(&mech.assemble_ah().to_dense(), &free);
    let metric = principal_submatrix(&mech.assemble_seminorm().to_dense(), &free);
    let ev = generalized_eigenvalues(&a, &metric)?;
    let alpha_low = ev[0];
    let alpha_high = *ev.last().expect("nonempty spectrum");
    let beta = infsup_constant(mesh, &mech, cap)?;
    drop(a);
    let metric_chol = metric
        .cholesky()
        .ok_or(Error::Singular("strain seminorm on clamped displacements"))?;

    let storage = config.storage;
    let area: f64 = mesh.cells().iter().map(|c| c.area).sum();
    let sqrt_areas: Vec<f64> = mesh.cells().iter().map(|c| c.area.sqrt()).collect();
    let tau = config.tau;
    let mut sums = Sums::default();
    let mut gamma = 1.0;
    let mut phi0 = None;
    let num_steps = config.num_steps();

    let mut observer = |sys: &BiotSystem, view: &StepView<'_>| -> Result<()> {
        let nk = sys.mech.space.nk();
        let mean_of = |v: &DVector<f64>| -> f64 { sqrt_areas.iter().enumerate().map(|(c, s)| s * v[c * nk]).sum() };
        if phi0.is_none() {
            phi0 = Some(sys.interpolated_porosity(data, 0.0));
            if let Darcy::Dg(d) = &sys.darcy {
                gamma = d.coercivity_constant(mesh, cap)?;
            }
        }
        let u = sys.displacement(view.solution);
        sums.displacement += tau * sys.mech.seminorm_sq(&u);
        let p = sys.cell_pressure(view.solution);
        let p_sq = p.norm_squared();
        let p_mean = mean_of(&p);
        sums.storage += tau * storage * p_sq;
        sums.zero_mean += tau * (p_sq - p_mean * p_mean / area).max(0.0);
        let f = DVector::from_iterator(free.len(), free.iter().map(|&i| view.mech_load[i]));
        sums.load_dual += tau * f.dot(&metric_chol.solve(&f));
        let g = sums
            .cumulative_source
            .get_or_insert_with(|| DVector::zeros(view.source.len()));
        g.axpy(tau, &view.source, 1.0);
        let g_mean = mean_of(g);
        sums.source_sq += tau * g.norm_squared();
        sums.source_mean_sq += tau * g_mean * g_mean / area;
        let pressure = sys.pressure(view.solution);
        sums.pressure_sum
            .get_or_insert_with(|| DVector::zeros(pressure.len()))
            .axpy(tau, &pressure, 1.0);
        if view.step == num_steps {
            let s = sums.pressure_sum.as_ref().expect("accumulated above");
            sums.final_pressure_term = match &sys.darcy {
                Darcy::Hho(d) => d.energy(s),
                Darcy::Dg(d) => d.dg_norm(s).powi(2),
            };
        }
        Ok(())
    };
    run(mesh, config, data, &mut observer)?;
    let phi0 = phi0.unwrap_or_else(|| DVector::zeros(0));
    let nk = crate::poly_basis::dim_cell(config.degree);
    let phi0_sq = phi0.norm_squared();
    let phi0_mean = if phi0.is_empty() {
        0.0
    } else {
        sqrt_areas.iter().enumerate().map(|(c, s)| s * phi0[c * nk]).sum::<f64>()
    };
    let final_time = num_steps as f64 * tau;

    let c1 = (4.0 * alpha_high.powi(2) + 2.0 * alpha_low.powi(2)) / (alpha_low * alpha_high.powi(2));
    let c2 = 16.0 * alpha_high.powi(2) / (alpha_low * beta * beta);
    let c3 = (storage > 0.0).then(|| 4.0 / storage);
    let lhs = alpha_low * sums.displacement
        + sums.storage
        + beta * beta * alpha_low / (2.0 * alpha_high.powi(2)) * sums.zero_mean
        + gamma * sums.final_pressure_term;
    let mut rhs = c1 * sums.load_dual + c2 * (sums.source_sq + final_time * phi0_sq);
    if let Some(c3) = c3 {
        rhs += c3 * (sums.source_mean_sq + final_time * phi0_mean * phi0_mean / area);
    }
    Ok(EnergyReport {
        alpha_low,
        alpha_high,
        beta,
        gamma,
        c1,
        c2,
        c3,
        lhs,
        rhs,
    })
}
