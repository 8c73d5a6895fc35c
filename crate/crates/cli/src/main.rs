//! Command-line driver: convergence studies and stability diagnostics.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use biot_hho::biot_solver::{run_energy_diagnostic, BiotConfig, Scheme, Startup};
use biot_hho::coupling::infsup_constant;
use biot_hho::darcy_dg::{default_penalty, DarcyDgOperators};
use biot_hho::harness::{commutation_defect, run_row, ClampedData, ConvergenceReport, StudyParams};
use biot_hho::linalg::{generalized_eigenvalues, principal_submatrix, set_thread_count};
use biot_hho::mech_hho::MechOperators;
use biot_hho::mesh::{build_trapezoidal_mesh, BoundaryLayout, PermeabilityField};
use clap::{Args, Parser, Subcommand, ValueEnum};

const THREADS_VAR: &str = "BIOT_HHO_THREADS";

#[derive(Parser)]
#[command(name = "biot-hho", version, about = "HHO discretisations of the Biot problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Manufactured-solution convergence study written as CSV.
    Run(RunArgs),
    /// Measures a stability or consistency constant on a mesh sequence.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    HhoHho,
    HhoDg,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::HhoHho => Scheme::HhoHho,
            SchemeArg::HhoDg => Scheme::HhoDg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BcArg {
    Mixed,
    Homogeneous,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "hho-hho")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    mesh_seq: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    distortion: f64,
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    tf: f64,
    /// BDF order, or `auto` for k + 1.
    #[arg(long, default_value = "auto", value_parser = parse_auto)]
    bdf: Auto,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0.0)]
    c0: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// DG penalty (default depends on k).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_enum, default_value = "mixed")]
    bc: BcArg,
    /// Error sampling stride, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_auto)]
    stride: Auto,
    /// Output file; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write 0 in the wall-time column so that repeated runs give identical bytes.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    Infsup,
    Coercivity,
    Energy,
    Commutation,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long, value_enum)]
    check: Check,
    #[arg(long, value_enum, default_value = "hho-hho")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    mesh_seq: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    distortion: f64,
    #[arg(long, default_value_t = 0.0)]
    c0: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long)]
    eta: Option<f64>,
    /// Time step of the energy check (implicit Euler).
    #[arg(long, default_value_t = 0.05)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    tf: f64,
    /// Largest dense eigenproblem attempted.
    #[arg(long, default_value_t = 20_000)]
    cap: usize,
}

/// `auto` or a positive integer.
#[derive(Clone, Copy, Debug)]
struct Auto(Option<usize>);

fn parse_auto(value: &str) -> Result<Auto, String> {
    if value == "auto" {
        return Ok(Auto(None));
    }
    match value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(Auto(Some(v))),
        _ => Err(format!("expected `auto` or a positive integer, got `{value}`")),
    }
}

fn run_study(args: &RunArgs) -> anyhow::Result<()> {
    let params = StudyParams {
        distortion: args.distortion,
        tau: args.tau,
        final_time: args.tf,
        bdf_order: args.bdf.0,
        kappa: args.kappa,
        storage: args.c0,
        mu: args.mu,
        lambda: args.lambda,
        penalty: args.eta,
        boundary: match args.bc {
            BcArg::Mixed => BoundaryLayout::Mixed { split: 0.5 },
            BcArg::Homogeneous => BoundaryLayout::Homogeneous,
        },
        stride: args.stride.0,
    };
    let scheme = Scheme::from(args.scheme);
    let mut report = ConvergenceReport::default();
    for &n in &args.mesh_seq {
        let mut row = run_row(scheme, args.k, n, &params).map_err(|e| biot_hho::Error::Study {
            scheme: scheme.name(),
            k: args.k,
            n,
            source: Box::new(e),
        })?;
        eprintln!(
            "{} k={} n={}: {} dofs, {:.2} s",
            scheme.name(),
            args.k,
            n,
            row.dofs,
            row.wall_seconds
        );
        if args.no_timing {
            row.wall_seconds = 0.0;
        }
        report.push(row);
    }
    match &args.out {
        Some(path) => report
            .write_csv(path)
            .with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(report.to_csv().as_bytes())?,
    }
    Ok(())
}

/// Returns whether every measured value passed its check.
fn diagnose(args: &DiagnoseArgs) -> anyhow::Result<bool> {
    let scheme = Scheme::from(args.scheme);
    let k = args.k;
    let mut ok = true;
    match args.check {
        Check::Infsup => println!("n,beta"),
        Check::Coercivity => println!("n,alpha_low,alpha_high,gamma_dg"),
        Check::Energy => println!("n,lhs,rhs,slack,alpha_low,alpha_high,beta,gamma"),
        Check::Commutation => println!("n,defect"),
    }
    for &n in &args.mesh_seq {
        let mesh = build_trapezoidal_mesh(n, args.distortion)?.with_boundary(BoundaryLayout::Homogeneous);
        match args.check {
            Check::Infsup => {
                let mech = MechOperators::new(&mesh, k, 1.0, 1.0)?;
                let beta = infsup_constant(&mesh, &mech, args.cap)?;
                ok &= beta > 0.0;
                println!("{n},{beta:.6e}");
            }
            Check::Coercivity => {
                let mech = MechOperators::new(&mesh, k, 1.0, 1.0)?;
                let free = mech.space.free_dofs();
                if free.len() > args.cap {
                    return Err(biot_hho::Error::TooLarge { dofs: free.len(), cap: args.cap }.into());
                }
                let a = principal_submatrix(&mech.assemble_ah().to_dense(), &free);
                let metric = principal_submatrix(&mech.assemble_seminorm().to_dense(), &free);
                let ev = generalized_eigenvalues(&a, &metric)?;
                let (low, high) = (ev[0], ev[ev.len() - 1]);
                ok &= low > 0.0;
                let gamma = if scheme == Scheme::HhoDg {
                    let perm = PermeabilityField::isotropic(args.kappa, mesh.num_cells())?;
                    let eta = args.eta.unwrap_or_else(|| default_penalty(k));
                    let gamma = DarcyDgOperators::new(&mesh, k, &perm, eta)?.coercivity_constant(&mesh, args.cap)?;
                    ok &= gamma > 0.0;
                    format!("{gamma:.6e}")
                } else {
                    String::new()
                };
                println!("{n},{low:.6e},{high:.6e},{gamma}");
            }
            Check::Energy => {
                let config = BiotConfig {
                    scheme,
                    degree: k,
                    mu: 1.0,
                    lambda: 1.0,
                    storage: args.c0,
                    permeability: PermeabilityField::isotropic(args.kappa, mesh.num_cells())?,
                    tau: args.tau,
                    final_time: args.tf,
                    bdf_order: 1,
                    penalty: args.eta,
                    condense: true,
                    startup: Startup::ExactHistory,
                };
                let r = run_energy_diagnostic(&mesh, &config, &ClampedData, args.cap)?;
                ok &= r.holds();
                println!(
                    "{n},{:.6e},{:.6e},{:.4},{:.6e},{:.6e},{:.6e},{:.6e}",
                    r.lhs,
                    r.rhs,
                    r.slack(),
                    r.alpha_low,
                    r.alpha_high,
                    r.beta,
                    r.gamma
                );
            }
            Check::Commutation => {
                let defect = commutation_defect(&mesh, k)?;
                ok &= defect <= 1e-10;
                println!("{n},{defect:.3e}");
            }
        }
    }
    Ok(ok)
}

fn failure_line(kind: &str, message: &str) {
    eprintln!("status=error kind={kind} message={message:?}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var(THREADS_VAR) {
        match threads.parse() {
            Ok(t) => set_thread_count(t),
            Err(_) => {
                failure_line("usage", &format!("{THREADS_VAR} must be an integer, got `{threads}`"));
                return ExitCode::from(2);
            }
        }
    } else {
        set_thread_count(1);
    }
    let outcome = match &cli.command {
        Command::Run(args) => run_study(args).map(|()| true),
        Command::Diagnose(args) => diagnose(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            failure_line("check-failed", "a diagnostic value is outside its admissible range");
            ExitCode::from(3)
        }
        Err(e) => {
            match e.downcast_ref::<biot_hho::Error>() {
                Some(inner) => failure_line(inner.kind(), &inner.to_string()),
                None => failure_line("runtime", &format!("{e:#}")),
            }
            ExitCode::from(1)
        }
    }
}
