//! Manufactured-solution convergence studies and their CSV tables.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, Matrix2, Point2, Vector2};

use crate::biot_solver::{run, BiotConfig, BiotData, BiotSystem, Scheme, Startup, StepView};
use crate::error::{Error, Result};
use crate::mech_hho::{interpolate_displacement, MechOperators};
use crate::mesh::{build_trapezoidal_mesh, BoundaryLayout, Mesh, PermeabilityField};
use crate::poly_basis::{FaceBases, ProjectionNodes};

/// The smooth test case on the unit square:
/// `u = sin(pi t) (-cos(pi x) cos(pi y), sin(pi x) sin(pi y))`,
/// `p = -cos(pi t) sin(pi x) cos(pi y)`, with `K = kappa Id`.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedSolution {
    pub mu: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub storage: f64,
}

impl ManufacturedSolution {
    pub fn new(kappa: f64) -> Self {
        Self {
            mu: 1.0,
            lambda: 1.0,
            kappa,
            storage: 0.0,
        }
    }

    fn shape(x: &Point2<f64>) -> Vector2<f64> {
        let (sx, cx) = (PI * x.x).sin_cos();
        let (sy, cy) = (PI * x.y).sin_cos();
        Vector2::new(-cx * cy, sx * sy)
    }

    /// `sigma(grad_s u)` at `(x, t)`.
    pub fn stress(&self, x: &Point2<f64>, t: f64) -> Matrix2<f64> {
        let (sx, cx) = (PI * x.x).sin_cos();
        let (sy, cy) = (PI * x.y).sin_cos();
        let st = (PI * t).sin();
        let diag = 2.0 * PI * (self.mu + self.lambda) * sx * cy * st;
        let off = 2.0 * PI * self.mu * cx * sy * st;
        Matrix2::new(diag, off, off, diag)
    }

    pub fn pressure_gradient(&self, x: &Point2<f64>, t: f64) -> Vector2<f64> {
        PI * (PI * t).cos() * Self::shape(x)
    }
}

impl BiotData for ManufacturedSolution {
    fn displacement(&self, x: &Point2<f64>, t: f64) -> Vector2<f64> {
        (PI * t).sin() * Self::shape(x)
    }

    fn pressure(&self, x: &Point2<f64>, t: f64) -> f64 {
        -(PI * t).cos() * (PI * x.x).sin() * (PI * x.y).cos()
    }

    fn load(&self, x: &Point2<f64>, t: f64) -> Vector2<f64> {
        let a = 2.0 * PI * PI * (2.0 * self.mu + self.lambda) * (PI * t).sin() + PI * (PI * t).cos();
        a * Self::shape(x)
    }

    fn source(&self, x: &Point2<f64>, t: f64) -> f64 {
        let base = (PI * x.x).sin() * (PI * x.y).cos();
        let (st, ct) = (PI * t).sin_cos();
        (2.0 * (1.0 - self.kappa) * PI * PI * ct + self.storage * PI * st) * base
    }

    fn traction(&self, x: &Point2<f64>, n: &Vector2<f64>, t: f64) -> Vector2<f64> {
        self.stress(x, t) * n - n * self.pressure(x, t)
    }

    fn flux(&self, x: &Point2<f64>, n: &Vector2<f64>, t: f64) -> f64 {
        self.kappa * self.pressure_gradient(x, t).dot(n)
    }
}

/// Clamped, impermeable data for the energy diagnostic: the displacement vanishes on the
/// boundary and the source has zero mean on the unit square, so `C0 = 0` is admissible.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClampedData;

impl BiotData for ClampedData {
    fn displacement(&self, x: &Point2<f64>, _: f64) -> Vector2<f64> {
        let b = (PI * x.x).sin() * (PI * x.y).sin();
        Vector2::new(b, -0.5 * b)
    }
    fn pressure(&self, x: &Point2<f64>, _: f64) -> f64 {
        (PI * x.x).cos() * (PI * x.y).cos()
    }
    fn load(&self, x: &Point2<f64>, t: f64) -> Vector2<f64> {
        Vector2::new(1.0 + t * x.y, x.x - 2.0 * t)
    }
    fn source(&self, x: &Point2<f64>, t: f64) -> f64 {
        (1.0 + t) * (PI * x.x).cos() * (2.0 * PI * x.y).cos()
    }
    fn traction(&self, _: &Point2<f64>, _: &Vector2<f64>, _: f64) -> Vector2<f64> {
        Vector2::zeros()
    }
    fn flux(&self, _: &Point2<f64>, _: &Vector2<f64>, _: f64) -> f64 {
        0.0
    }
}

/// Largest cellwise coefficient defect of `D_h I_h v - pi_h div v` over a fixed family of
/// trigonometric and polynomial fields, relative to the size of `pi_h div v`.
pub fn commutation_defect(mesh: &Mesh, k: usize) -> Result<f64> {
    let mech = MechOperators::new(mesh, k, 1.0, 1.0)?;
    let nodes = ProjectionNodes::new(mesh, &FaceBases::new(mesh, k)?, k)?;
    let nk = mech.space.nk();
    let mut worst: f64 = 0.0;
    let waves = [(0.5, 1.0, 0.75, 0.25), (1.0, -0.5, 0.35, 0.65), (0.25, 0.75, -0.5, 1.0)];
    for (a, b, c, d) in waves {
        let field = |p: &Point2<f64>| Vector2::new((a * p.x + b * p.y).sin() + p.x * p.y * p.y, (c * p.x - d * p.y).cos() - p.y.powi(3));
        let div = |p: &Point2<f64>| a * (a * p.x + b * p.y).cos() + p.y * p.y + d * (c * p.x - d * p.y).sin() - 3.0 * p.y * p.y;
        let projected = mech.divergence(&interpolate_displacement(&mech.space, &nodes, field));
        for (cell, wn) in nodes.cells.iter().enumerate() {
            let exact = wn.moments(div);
            let scale = exact.amax().max(1.0);
            worst = worst.max((projected.rows(cell * nk, nk) - exact).amax() / scale);
        }
    }
    Ok(worst)
}

/// Squared errors accumulated over sampled steps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorNorms {
    pub strain: f64,
    pub l2_displacement: f64,
    pub pressure: f64,
}

impl ErrorNorms {
    pub fn sqrt(self) -> Self {
        Self {
            strain: self.strain.sqrt(),
            l2_displacement: self.l2_displacement.sqrt(),
            pressure: self.pressure.sqrt(),
        }
    }
}

/// Errors of one discrete state against node interpolates of the exact fields at `t`:
/// strain seminorm of `u_h - I_h u`, broken `L^2` of the cell displacement error and
/// `L^2` of `p_T - pi_h p`. Returned squared.
pub fn step_errors(system: &BiotSystem, exact: &dyn BiotData, solution: &DVector<f64>, t: f64) -> ErrorNorms {
    let space = &system.mech.space;
    let iu = interpolate_displacement(space, &system.nodes, |x| exact.displacement(x, t));
    let eu = system.displacement(solution) - iu;
    let cells = space.num_face_dofs();
    let nk = space.nk();
    let mut ep = system.cell_pressure(solution);
    for (c, wn) in system.nodes.cells.iter().enumerate() {
        let mut seg = ep.rows_mut(c * nk, nk);
        seg -= wn.moments(|x| exact.pressure(x, t));
    }
    ErrorNorms {
        strain: system.mech.seminorm_sq(&eu).max(0.0),
        l2_displacement: eu.rows(cells, eu.len() - cells).norm_squared(),
        pressure: ep.norm_squared(),
    }
}

/// Accumulates `sum_n tau ||e^n||^2` over every `stride`-th step, weighting each sample
/// by `stride * tau` (the trailing partial window gets its own length).
#[derive(Debug, Clone)]
pub struct ErrorAccumulator {
    pub stride: usize,
    pub tau: f64,
    pub num_steps: usize,
    pub sums: ErrorNorms,
}

impl ErrorAccumulator {
    pub fn new(stride: usize, tau: f64, num_steps: usize) -> Self {
        Self {
            stride: stride.max(1),
            tau,
            num_steps,
            sums: ErrorNorms::default(),
        }
    }

    /// Sampling weight of step `n`, zero when the step is skipped.
    pub fn weight(&self, n: usize) -> f64 {
        if n % self.stride == 0 {
            self.stride as f64 * self.tau
        } else if n == self.num_steps {
            (n % self.stride) as f64 * self.tau
        } else {
            0.0
        }
    }

    pub fn observe(&mut self, system: &BiotSystem, exact: &dyn BiotData, view: &StepView<'_>) {
        let w = self.weight(view.step);
        if w > 0.0 {
            let e = step_errors(system, exact, view.solution, view.time);
            self.sums.strain += w * e.strain;
            self.sums.l2_displacement += w * e.l2_displacement;
            self.sums.pressure += w * e.pressure;
        }
    }

    /// Accumulated norms `(sum tau ||e||^2)^{1/2}`.
    pub fn norms(&self) -> ErrorNorms {
        self.sums.sqrt()
    }
}

/// Settings shared by all rows of a study.
#[derive(Debug, Clone)]
pub struct StudyParams {
    pub distortion: f64,
    pub tau: f64,
    pub final_time: f64,
    /// `None` selects `k + 1`.
    pub bdf_order: Option<usize>,
    pub kappa: f64,
    pub storage: f64,
    pub mu: f64,
    pub lambda: f64,
    pub penalty: Option<f64>,
    pub boundary: BoundaryLayout,
    /// `None` selects 1 for `n <= 16` and 5 above.
    pub stride: Option<usize>,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            distortion: 0.1,
            tau: 1e-3,
            final_time: 1.0,
            bdf_order: None,
            kappa: 1.0,
            storage: 0.0,
            mu: 1.0,
            lambda: 1.0,
            penalty: None,
            boundary: BoundaryLayout::Mixed { split: 0.5 },
            stride: None,
        }
    }
}

impl StudyParams {
    pub fn stride_for(&self, n: usize) -> usize {
        self.stride.unwrap_or(if n <= 16 { 1 } else { 5 })
    }

    pub fn exact(&self) -> ManufacturedSolution {
        ManufacturedSolution {
            mu: self.mu,
            lambda: self.lambda,
            kappa: self.kappa,
            storage: self.storage,
        }
    }

    pub fn config(&self, scheme: Scheme, k: usize, mesh: &Mesh) -> Result<BiotConfig> {
        Ok(BiotConfig {
            scheme,
            degree: k,
            mu: self.mu,
            lambda: self.lambda,
            storage: self.storage,
            permeability: PermeabilityField::isotropic(self.kappa, mesh.num_cells())?,
            tau: self.tau,
            final_time: self.final_time,
            bdf_order: self.bdf_order.unwrap_or((k + 1).min(4)),
            penalty: self.penalty,
            condense: true,
            startup: Startup::ExactHistory,
        })
    }

    pub fn mesh(&self, n: usize) -> Result<Mesh> {
        Ok(build_trapezoidal_mesh(n, self.distortion)?.with_boundary(self.boundary))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub scheme: Scheme,
    pub k: usize,
    pub n: usize,
    pub dofs: usize,
    pub nnz: usize,
    pub errors: ErrorNorms,
    pub eoc: Option<ErrorNorms>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

/// `log(e_prev / e) / log(n / n_prev)`: the observed order for mesh sizes `1 / n`.
pub fn eoc(prev_err: f64, err: f64, prev_n: usize, n: usize) -> f64 {
    (prev_err / err).ln() / (n as f64 / prev_n as f64).ln()
}

impl ConvergenceReport {
    /// Appends a row and fills its EOCs from the previous row of the same scheme and degree.
    pub fn push(&mut self, mut row: ConvergenceRow) {
        if let Some(prev) = self
            .rows
            .iter()
            .rev()
            .find(|r| r.scheme == row.scheme && r.k == row.k && r.n < row.n)
        {
            let (a, b) = (prev.errors, row.errors);
            row.eoc = Some(ErrorNorms {
                strain: eoc(a.strain, b.strain, prev.n, row.n),
                l2_displacement: eoc(a.l2_displacement, b.l2_displacement, prev.n, row.n),
                pressure: eoc(a.pressure, b.pressure, prev.n, row.n),
            });
        }
        self.rows.push(row);
    }

    pub const HEADER: &'static str = "scheme,k,n,dofs,nnz,err_strain,eoc_strain,err_l2u,eoc_l2u,err_p,eoc_p,wall_s";

    pub fn to_csv(&self) -> String {
        let sci = |x: f64| format!("{x:.3e}");
        let opt = |x: Option<f64>| x.map(sci).unwrap_or_default();
        let mut s = String::new();
        s.push_str(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scheme.name(),
                r.k,
                r.n,
                r.dofs,
                r.nnz,
                sci(r.errors.strain),
                opt(r.eoc.map(|e| e.strain)),
                sci(r.errors.l2_displacement),
                opt(r.eoc.map(|e| e.l2_displacement)),
                sci(r.errors.pressure),
                opt(r.eoc.map(|e| e.pressure)),
                sci(r.wall_seconds),
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// One row: full run on the `n x n` mesh with errors accumulated along the way.
pub fn run_row(scheme: Scheme, k: usize, n: usize, params: &StudyParams) -> Result<ConvergenceRow> {
    let start = Instant::now();
    let mesh = params.mesh(n)?;
    let config = params.config(scheme, k, &mesh)?;
    let exact = params.exact();
    let mut acc = ErrorAccumulator::new(params.stride_for(n), config.tau, config.num_steps());
    let mut counts = (0, 0);
    let mut observer = |sys: &BiotSystem, view: &StepView<'_>| -> Result<()> {
        if view.step == 1 {
            counts = (sys.num_dofs(), sys.nnz());
        }
        acc.observe(sys, &exact, view);
        Ok(())
    };
    run(&mesh, &config, &exact, &mut observer)?;
    Ok(ConvergenceRow {
        scheme,
        k,
        n,
        dofs: counts.0,
        nnz: counts.1,
        errors: acc.norms(),
        eoc: None,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every mesh of `meshes` in order; a failing row is reported with its mesh size.
pub fn run_convergence_study(scheme: Scheme, k: usize, meshes: &[usize], params: &StudyParams) -> Result<ConvergenceReport> {
    let mut report = ConvergenceReport::default();
    for &n in meshes {
        let row = run_row(scheme, k, n, params).map_err(|e| Error::Study {
            scheme: scheme.name(),
            k,
            n,
            source: Box::new(e),
        })?;
        report.push(row);
    }
    Ok(report)
}
