use std::collections::VecDeque;

use nalgebra::DVector;

use super::system::{BiotSystem, Loads};
use super::{BiotConfig, BiotData, Startup};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::poly_basis::gauss_legendre_unit;

/// BDF weights `a_0, ..., a_m` with `d/dt y(t^n) ~ (1/tau) sum_j a_j y^{n-j}`.
pub fn bdf_coefficients(order: usize) -> Result<Vec<f64>> {
    Ok(match order {
        1 => vec![1.0, -1.0],
        2 => vec![1.5, -2.0, 0.5],
        3 => vec![11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0],
        4 => vec![25.0 / 12.0, -4.0, 3.0, -4.0 / 3.0, 0.25],
        _ => return Err(Error::Unsupported(format!("BDF order {order}"))),
    })
}

/// Time-quadrature exactness used for load averaging with BDF order `order`; never below
/// 7 so that smooth data are averaged to roundoff at practical step sizes.
fn averaging_exactness(order: usize) -> usize {
    (2 * order + 1).max(7)
}

/// `(1 / (t1 - t0)) int_{t0}^{t1} f(t) dt` by Gauss–Legendre quadrature.
pub fn time_average(t0: f64, t1: f64, order: usize, f: impl Fn(f64) -> DVector<f64>) -> DVector<f64> {
    let (nodes, weights) = gauss_legendre_unit(averaging_exactness(order));
    let mut acc: Option<DVector<f64>> = None;
    for (s, w) in nodes.iter().zip(&weights) {
        let v = f(t0 + s * (t1 - t0)) * *w;
        match acc.as_mut() {
            Some(a) => *a += v,
            None => acc = Some(v),
        }
    }
    acc.expect("at least one Gauss node")
}

/// Time-averaged loads on `[t0, t1]`: the right-hand side used by the implicit Euler step.
pub fn time_average_sources(system: &BiotSystem, mesh: &Mesh, data: &dyn BiotData, t0: f64, t1: f64) -> Loads {
    let (nodes, weights) = gauss_legendre_unit(averaging_exactness(1));
    let mut acc = system.loads(mesh, data, t0 + nodes[0] * (t1 - t0));
    acc.mech *= weights[0];
    acc.flow *= weights[0];
    for (s, w) in nodes.iter().zip(&weights).skip(1) {
        acc.axpy(*w, &system.loads(mesh, data, t0 + s * (t1 - t0)));
    }
    acc
}

/// What an observer sees after each step.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    pub time: f64,
    /// Full unknown vector in the system layout.
    pub solution: &'a DVector<f64>,
    /// Mechanical load moments used in this step (displacement-space numbering).
    pub mech_load: &'a DVector<f64>,
    /// Fluid source moments used in this step, `dim P^k(T)` per cell.
    pub source: DVector<f64>,
}

pub trait Observer {
    fn observe(&mut self, system: &BiotSystem, view: &StepView<'_>) -> Result<()>;
}

impl<F> Observer for F
where
    F: FnMut(&BiotSystem, &StepView<'_>) -> Result<()>,
{
    fn observe(&mut self, system: &BiotSystem, view: &StepView<'_>) -> Result<()> {
        self(system, view)
    }
}

/// State after the last completed step.
#[derive(Debug, Clone)]
pub struct TimeState {
    pub step: usize,
    pub time: f64,
    pub solution: DVector<f64>,
    /// Porosity history, most recent first.
    pub porosity: VecDeque<DVector<f64>>,
}

/// Runs the full time loop. One factorisation is computed per BDF order in use: a single
/// one with exact history, at most `bdf_order` with a ramped start.
pub fn run(mesh: &Mesh, config: &BiotConfig, data: &dyn BiotData, observer: &mut dyn Observer) -> Result<TimeState> {
    config.validate()?;
    let m = config.bdf_order;
    let tau = config.tau;
    let mut systems: Vec<Option<BiotSystem>> = (0..=m).map(|_| None).collect();
    let first_order = match config.startup {
        Startup::ExactHistory => m,
        Startup::Ramp => 1,
    };
    systems[first_order] = Some(BiotSystem::assemble(mesh, config, first_order)?);
    let mut porosity = VecDeque::with_capacity(m + 1);
    {
        let sys = systems[first_order].as_ref().expect("assembled");
        let depth = if config.startup == Startup::ExactHistory { m } else { 1 };
        for j in 0..depth {
            porosity.push_back(sys.interpolated_porosity(data, -(j as f64) * tau));
        }
    }
    let mut state = TimeState {
        step: 0,
        time: 0.0,
        solution: DVector::zeros(0),
        porosity,
    };
    for n in 1..=config.num_steps() {
        let order = if config.startup == Startup::ExactHistory { m } else { n.min(m) };
        if systems[order].is_none() {
            systems[order] = Some(BiotSystem::assemble(mesh, config, order)?);
        }
        if order == m {
            for s in systems.iter_mut().take(m) {
                *s = None;
            }
        }
        let sys = systems[order].as_ref().expect("assembled");
        let t = n as f64 * tau;
        let loads = if m == 1 {
            time_average_sources(sys, mesh, data, t - tau, t)
        } else {
            sys.loads(mesh, data, t)
        };
        let history: Vec<&DVector<f64>> = state.porosity.iter().take(order).collect();
        let rhs = sys.rhs(mesh, data, &loads, t, &history);
        sys.check_compatible(mesh, &rhs)?;
        let x = sys.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        state.porosity.push_front(sys.porosity(&x));
        state.porosity.truncate(m);
        let off = sys.darcy.cell_offset();
        let source = loads.flow.rows(off, loads.flow.len() - off).into_owned();
        observer.observe(
            sys,
            &StepView {
                step: n,
                time: t,
                solution: &x,
                mech_load: &loads.mech,
                source,
            },
        )?;
        state.step = n;
        state.time = t;
        state.solution = x;
    }
    Ok(state)
}
