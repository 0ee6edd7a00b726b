//! `dnlab`: meshes, DN matrices, operator norms, analytic oracles, and
//! scripted experiments from the command line.
//!
//! Exit codes: 0 success (and, for `experiment`, all verdicts passed),
//! 1 experiment ran but a verdict failed, 2 any error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dnlab_core::conductivity::ConductivityField;
use dnlab_core::dn::{compute_dn, op_norm, DnMatrix};
use dnlab_core::error::{Error, Result};
use dnlab_core::experiments::{run as run_experiment, ExperimentConfig, Scenario};
use dnlab_core::fem::{solve_dirichlet, StiffnessSystem};
use dnlab_core::mesh::{build_polar_mesh, TriangleMesh};
use dnlab_core::oracles::{
    critical_mode, defect_lower_bound, laminate_g_limit, layered_spectrum, m_k, RadialLayers,
};

#[derive(Parser)]
#[command(
    name = "dnlab",
    version,
    about = "Dirichlet-to-Neumann laboratory for conductivities on the unit disc"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a polar disc mesh and write it as text.
    Mesh {
        /// Number of concentric rings.
        #[arg(long)]
        rings: usize,
        /// Number of angular sectors.
        #[arg(long)]
        sectors: usize,
        /// Radii to snap rings onto (conductivity interfaces).
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        snap: Vec<f64>,
        /// Output mesh file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the DN matrix of a conductivity on a mesh.
    Dn {
        /// Conductivity descriptor file (key=value text).
        #[arg(long)]
        sigma: PathBuf,
        /// Mesh file produced by `dnlab mesh`.
        #[arg(long)]
        mesh: PathBuf,
        /// Highest boundary Fourier mode.
        #[arg(long)]
        kmax: usize,
        /// Output CSV for the DN matrix.
        #[arg(long)]
        out: PathBuf,
        /// Also dump the FEM solution for boundary data cos(theta)
        /// to <out>.solution.csv.
        #[arg(long)]
        dump_solution: bool,
    },
    /// Operator norm of a DN matrix (or difference of two) between
    /// Sobolev indices.
    Norm {
        /// DN matrix CSV.
        #[arg(long)]
        dn: PathBuf,
        /// Optional second DN matrix CSV to subtract first.
        #[arg(long)]
        minus: Option<PathBuf>,
        /// Source Sobolev index s (H^s).
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        from: f64,
        /// Target Sobolev index s (H^s).
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        to: f64,
    },
    /// Closed-form radial oracles, printed as CSV.
    Oracle {
        #[command(subcommand)]
        which: OracleCmd,
    },
    /// Run a named experiment scenario and write its report.
    Experiment {
        /// One of: calibration, counterexample, cloaking, laminate-interior,
        /// laminate-boundary, qc-invariance, delta-scan.
        scenario: String,
        /// Optional key=value config overriding scenario defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report directory (report.json plus one CSV per table).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Per-mode DN eigenvalues of an isotropic radially layered field.
    Layered {
        /// Interface radii, strictly increasing in (0,1).
        #[arg(long, value_delimiter = ',', required = true)]
        radii: Vec<f64>,
        /// Layer values, innermost first (one more than radii).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 16)]
        kmax: usize,
    },
    /// Per-mode DN defect of the ring conductivity against free space.
    Mk {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 32)]
        kmax: usize,
    },
    /// Critical mode of the ring defect and its lower-bound check.
    Kstar {
        #[arg(long)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
    },
    /// Homogenized limit matrix of a two-phase laminate.
    Laminate {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        /// Lamination direction (normal to the layers).
        #[arg(long, value_delimiter = ',', default_value = "1,0")]
        direction: Vec<f64>,
    },
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .map_err(|e| with_path(path, e))?
        .read_to_string(&mut s)
        .map_err(|e| with_path(path, e))?;
    Ok(s)
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| with_path(path, e))?,
    ))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| with_path(path, e))?,
    ))
}

fn cmd_mesh(rings: usize, sectors: usize, snap: &[f64], out: &Path) -> Result<i32> {
    let mesh = build_polar_mesh(rings, sectors, snap)?;
    let mut w = create_writer(out)?;
    mesh.write_text(&mut w)?;
    w.flush()?;
    println!(
        "mesh: {} vertices, {} triangles, {} boundary nodes, h = {:.6}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.boundary.len(),
        mesh.h()
    );
    Ok(0)
}

fn dump_solution(mesh: &TriangleMesh, sigma: &ConductivityField, path: &Path) -> Result<()> {
    let sys = StiffnessSystem::assemble(mesh, sigma)?;
    let boundary: Vec<f64> = mesh
        .boundary
        .iter()
        .map(|&v| {
            let p = mesh.vertices[v];
            p[1].atan2(p[0]).cos()
        })
        .collect();
    let sol = solve_dirichlet(&sys, &boundary)?;
    let mut w = create_writer(path)?;
    writeln!(w, "vertex,x,y,value")?;
    for (i, p) in mesh.vertices.iter().enumerate() {
        writeln!(w, "{i},{},{},{}", p[0], p[1], sol.values[i])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_dn(sigma_path: &Path, mesh_path: &Path, kmax: usize, out: &Path, dump: bool) -> Result<i32> {
    let sigma = ConductivityField::from_config_text(&read_to_string(sigma_path)?)?;
    let mesh = TriangleMesh::read_text(open_reader(mesh_path)?)?;
    let dn = compute_dn(&mesh, &sigma, kmax)?;
    let mut w = create_writer(out)?;
    dn.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "dn: {} modes (k <= {}), {}",
        dn.entries().nrows(),
        dn.k_max(),
        dn.provenance()
    );
    if dump {
        let mut sol_path = out.as_os_str().to_owned();
        sol_path.push(".solution.csv");
        let sol_path = PathBuf::from(sol_path);
        dump_solution(&mesh, &sigma, &sol_path)?;
        println!(
            "solution for cos(theta) data written to {}",
            sol_path.display()
        );
    }
    Ok(0)
}

fn cmd_norm(dn: &Path, minus: Option<&Path>, from: f64, to: f64) -> Result<i32> {
    let a = DnMatrix::read_csv(open_reader(dn)?)?;
    let m = match minus {
        Some(p) => a.sub(&DnMatrix::read_csv(open_reader(p)?)?)?,
        None => a,
    };
    println!("{}", op_norm(&m, from, to));
    Ok(0)
}

fn cmd_oracle(which: &OracleCmd) -> Result<i32> {
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    match which {
        OracleCmd::Layered {
            radii,
            values,
            kmax,
        } => {
            let layers = RadialLayers::new(radii.clone(), values.clone())?;
            let spectrum = layered_spectrum(&layers, *kmax)?;
            writeln!(w, "k,lambda_k")?;
            for (k, lam) in spectrum.eigenvalues.iter().enumerate() {
                writeln!(w, "{k},{lam}")?;
            }
        }
        OracleCmd::Mk { alpha, r, kmax } => {
            writeln!(w, "k,m_k")?;
            for k in 1..=*kmax {
                writeln!(w, "{k},{}", m_k(*alpha, *r, k as i64)?)?;
            }
        }
        OracleCmd::Kstar { r, alpha } => {
            let k_star = critical_mode(*r)?;
            let m_star = m_k(*alpha, *r, k_star as i64)?;
            let bound = defect_lower_bound(*alpha);
            writeln!(w, "r,alpha,k_star,m_at_k_star,bound,exceeds")?;
            writeln!(
                w,
                "{r},{alpha},{k_star},{m_star},{bound},{}",
                m_star > bound
            )?;
        }
        OracleCmd::Laminate { a, b, direction } => {
            if direction.len() != 2 {
                return Err(Error::Config("direction must be dx,dy".into()));
            }
            let g = laminate_g_limit(*a, *b, [direction[0], direction[1]])?;
            writeln!(w, "m00,m01,m11")?;
            writeln!(w, "{},{},{}", g[(0, 0)], g[(0, 1)], g[(1, 1)])?;
        }
    }
    Ok(0)
}

fn cmd_experiment(scenario: &str, config: Option<&Path>, out: &Path) -> Result<i32> {
    let scenario = Scenario::from_name(scenario)?;
    let cfg = match config {
        Some(path) => ExperimentConfig::from_config_text(scenario, &read_to_string(path)?)?,
        None => ExperimentConfig::default_for(scenario),
    };
    let report = run_experiment(&cfg)?;
    report.write_to_dir(out)?;
    for v in &report.verdicts {
        println!(
            "{} {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.criterion,
            v.detail
        );
    }
    println!(
        "report written to {} ({:.1}s)",
        out.display(),
        report.wall_clock_seconds
    );
    Ok(if report.passed() { 0 } else { 1 })
}

fn dispatch(cli: Cli) -> Result<i32> {
    match &cli.cmd {
        Cmd::Mesh {
            rings,
            sectors,
            snap,
            out,
        } => cmd_mesh(*rings, *sectors, snap, out),
        Cmd::Dn {
            sigma,
            mesh,
            kmax,
            out,
            dump_solution,
        } => cmd_dn(sigma, mesh, *kmax, out, *dump_solution),
        Cmd::Norm {
            dn,
            minus,
            from,
            to,
        } => cmd_norm(dn, minus.as_deref(), *from, *to),
        Cmd::Oracle { which } => cmd_oracle(which),
        Cmd::Experiment {
            scenario,
            config,
            out,
        } => cmd_experiment(scenario, config.as_deref(), out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        // A closed stdout (e.g. piping into `head`) is not an error.
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
