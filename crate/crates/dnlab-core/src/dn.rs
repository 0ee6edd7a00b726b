//! Discrete Dirichlet-to-Neumann operators in the orthonormal boundary
//! Fourier basis, fractional Sobolev weights, and operator norms.
//!
//! Basis ordering: index 0 is the constant `1/sqrt(2 pi)`; for `k >= 1`,
//! index `2k-1` is `cos(k theta)/sqrt(pi)` and index `2k` is
//! `sin(k theta)/sqrt(pi)`. With this normalization matrix entries are the
//! L2 boundary pairings `<DN f_k, f_l>` with no extra 2 pi factors.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::conductivity::ConductivityField;
use crate::error::{Error, Result};
use crate::fem::{FactorizedSystem, StiffnessSystem};
use crate::mesh::TriangleMesh;
use crate::oracles::ModeSpectrum;

/// One boundary Fourier basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisFn {
    Const,
    Cos(usize),
    Sin(usize),
}

pub fn basis_size(k_max: usize) -> usize {
    2 * k_max + 1
}

pub fn basis_of_index(j: usize) -> BasisFn {
    if j == 0 {
        BasisFn::Const
    } else if j % 2 == 1 {
        BasisFn::Cos(j / 2 + 1)
    } else {
        BasisFn::Sin(j / 2)
    }
}

pub fn index_of_basis(b: BasisFn) -> usize {
    match b {
        BasisFn::Const => 0,
        BasisFn::Cos(k) => 2 * k - 1,
        BasisFn::Sin(k) => 2 * k,
    }
}

/// Mode number of a basis index (0 for the constant).
pub fn mode_of_index(j: usize) -> usize {
    match basis_of_index(j) {
        BasisFn::Const => 0,
        BasisFn::Cos(k) | BasisFn::Sin(k) => k,
    }
}

/// DN (or DN-difference) matrix over the truncated Fourier basis.
#[derive(Debug, Clone)]
pub struct DnMatrix {
    entries: DMatrix<f64>,
    k_max: usize,
    provenance: String,
}

/// Tolerances of the structural invariants checked on computed DN matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;
pub const CONSTANT_KERNEL_TOL: f64 = 1e-8;
pub const PSD_FLOOR: f64 = -1e-8;

impl DnMatrix {
    /// Wraps raw entries without invariant checks; for differences, oracle
    /// references, and I/O.
    pub fn from_entries_unchecked(entries: DMatrix<f64>, provenance: String) -> Result<DnMatrix> {
        if entries.nrows() != entries.ncols() || entries.nrows().is_multiple_of(2) {
            return Err(Error::Dn(format!(
                "entries must be square of odd size, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let k_max = (entries.nrows() - 1) / 2;
        Ok(DnMatrix {
            entries,
            k_max,
            provenance,
        })
    }

    /// Diagonal DN matrix from per-mode eigenvalues `[lambda_0..lambda_K]`
    /// (cos and sin share the eigenvalue of their mode).
    pub fn from_spectrum(spectrum: &ModeSpectrum, provenance: String) -> Result<DnMatrix> {
        let k_max =
            spectrum.eigenvalues.len().checked_sub(1).ok_or_else(|| {
                Error::Dn("spectrum must contain at least the constant mode".into())
            })?;
        let m = basis_size(k_max);
        let mut entries = DMatrix::zeros(m, m);
        for j in 0..m {
            entries[(j, j)] = spectrum.eigenvalues[mode_of_index(j)];
        }
        Self::from_entries_unchecked(entries, provenance)
    }

    /// Projects a dense boundary-node bilinear form onto the Fourier basis:
    /// `entries[l][k] = I_h(f_l)^T S I_h(f_k)` with nodal interpolation at
    /// the boundary vertices. Checks the structural invariants.
    pub fn from_boundary_form(
        s: &DMatrix<f64>,
        mesh: &TriangleMesh,
        k_max: usize,
        provenance: String,
    ) -> Result<DnMatrix> {
        let f = boundary_fourier_matrix(mesh, k_max)?;
        if s.nrows() != f.nrows() || s.ncols() != f.nrows() {
            return Err(Error::Dn(format!(
                "boundary form is {}x{} for {} boundary nodes",
                s.nrows(),
                s.ncols(),
                f.nrows()
            )));
        }
        let entries = f.transpose() * s * &f;
        let dn = Self::from_entries_unchecked(entries, provenance)?;
        dn.validate()?;
        Ok(dn)
    }

    /// Computes the DN matrix from a factorized system with `2 k_max + 1`
    /// interior solves, avoiding the dense Schur complement.
    pub fn from_factorized(
        fact: &FactorizedSystem<'_>,
        mesh: &TriangleMesh,
        k_max: usize,
        provenance: String,
    ) -> Result<DnMatrix> {
        let f = boundary_fourier_matrix(mesh, k_max)?;
        if fact.system().n_boundary() != f.nrows() {
            return Err(Error::Dn(format!(
                "system has {} boundary nodes, mesh has {}",
                fact.system().n_boundary(),
                f.nrows()
            )));
        }
        let sf = fact.schur_product(&f)?;
        let entries = f.transpose() * sf;
        let dn = Self::from_entries_unchecked(entries, provenance)?;
        dn.validate()?;
        Ok(dn)
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Checks self-adjointness, the constant kernel, and positive
    /// semidefiniteness at the documented tolerances.
    pub fn validate(&self) -> Result<()> {
        let m = self.entries.nrows();
        let mut asym = 0.0_f64;
        for i in 0..m {
            for j in (i + 1)..m {
                asym = asym.max((self.entries[(i, j)] - self.entries[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(Error::Dn(format!(
                "asymmetry {asym:e} above {SYMMETRY_TOL:e} ({})",
                self.provenance
            )));
        }
        let const_col = self.entries.column(0).norm();
        if const_col > CONSTANT_KERNEL_TOL {
            return Err(Error::Dn(format!(
                "constant-mode column norm {const_col:e} above {CONSTANT_KERNEL_TOL:e} ({})",
                self.provenance
            )));
        }
        let sym = 0.5 * (&self.entries + self.entries.transpose());
        let eigs = sym.symmetric_eigenvalues();
        let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eig < PSD_FLOOR {
            return Err(Error::Dn(format!(
                "eigenvalue {min_eig:e} below {PSD_FLOOR:e} ({})",
                self.provenance
            )));
        }
        Ok(())
    }

    /// Entrywise difference (no invariant checks: differences are indefinite).
    pub fn sub(&self, other: &DnMatrix) -> Result<DnMatrix> {
        if self.k_max != other.k_max {
            return Err(Error::Dn(format!(
                "mode truncations differ: {} vs {}",
                self.k_max, other.k_max
            )));
        }
        Self::from_entries_unchecked(
            &self.entries - &other.entries,
            format!("({}) - ({})", self.provenance, other.provenance),
        )
    }

    /// Diagonal entries `(cos, sin)` of one mode `1 <= k <= k_max`.
    pub fn mode_diagonal(&self, k: usize) -> (f64, f64) {
        assert!(k >= 1 && k <= self.k_max);
        (
            self.entries[(2 * k - 1, 2 * k - 1)],
            self.entries[(2 * k, 2 * k)],
        )
    }

    /// Largest absolute off-diagonal entry.
    pub fn max_offdiagonal(&self) -> f64 {
        let m = self.entries.nrows();
        let mut worst = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    worst = worst.max(self.entries[(i, j)].abs());
                }
            }
        }
        worst
    }

    /// Writes the matrix as CSV with header `k_type l_type k l value`;
    /// `k` indexes the column basis function and `l` the row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "k_type l_type k l value")?;
        let m = self.entries.nrows();
        for l in 0..m {
            for k in 0..m {
                let (kt, kk) = type_and_mode(basis_of_index(k));
                let (lt, lk) = type_and_mode(basis_of_index(l));
                writeln!(w, "{kt} {lt} {kk} {lk} {}", self.entries[(l, k)])?;
            }
        }
        Ok(())
    }

    /// Reads a matrix written by [`DnMatrix::write_csv`]. Invariants are not
    /// checked: the file may hold a DN difference.
    pub fn read_csv(r: impl BufRead) -> Result<DnMatrix> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty DN CSV".into()))??;
        if header.split_whitespace().collect::<Vec<_>>() != ["k_type", "l_type", "k", "l", "value"]
        {
            return Err(Error::Format(format!(
                "unexpected DN CSV header {header:?}"
            )));
        }
        let mut cells: Vec<(usize, usize, f64)> = Vec::new();
        let mut max_index = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::Format(format!("bad DN CSV row {line:?}")));
            }
            let k = parse_basis(parts[0], parts[2])?;
            let l = parse_basis(parts[1], parts[3])?;
            let value: f64 = parts[4]
                .parse()
                .map_err(|_| Error::Format(format!("bad value in row {line:?}")))?;
            max_index = max_index.max(k).max(l);
            cells.push((l, k, value));
        }
        let m = max_index + 1;
        if m.is_multiple_of(2) {
            return Err(Error::Format(format!(
                "incomplete basis: {m} functions (expected odd count)"
            )));
        }
        if cells.len() != m * m {
            return Err(Error::Format(format!(
                "{} rows for a {m}x{m} matrix",
                cells.len()
            )));
        }
        let mut entries = DMatrix::from_element(m, m, f64::NAN);
        for (l, k, v) in cells {
            if !entries[(l, k)].is_nan() {
                return Err(Error::Format(format!("duplicate entry for ({l}, {k})")));
            }
            entries[(l, k)] = v;
        }
        Self::from_entries_unchecked(entries, "csv".into())
    }
}

fn type_and_mode(b: BasisFn) -> (&'static str, usize) {
    match b {
        BasisFn::Const => ("const", 0),
        BasisFn::Cos(k) => ("cos", k),
        BasisFn::Sin(k) => ("sin", k),
    }
}

fn parse_basis(ty: &str, k: &str) -> Result<usize> {
    let k: usize = k
        .parse()
        .map_err(|_| Error::Format(format!("bad mode number {k:?}")))?;
    let b = match ty {
        "const" if k == 0 => BasisFn::Const,
        "cos" if k >= 1 => BasisFn::Cos(k),
        "sin" if k >= 1 => BasisFn::Sin(k),
        _ => return Err(Error::Format(format!("bad basis function {ty} {k}"))),
    };
    Ok(index_of_basis(b))
}

/// Nodal interpolation of the orthonormal Fourier basis at the boundary
/// vertices: a `B x (2 K_max + 1)` matrix. Enforces the anti-aliasing rule
/// `K_max <= B/4`.
pub fn boundary_fourier_matrix(mesh: &TriangleMesh, k_max: usize) -> Result<DMatrix<f64>> {
    let b = mesh.boundary.len();
    if k_max == 0 {
        return Err(Error::Dn("K_max must be at least 1".into()));
    }
    if 4 * k_max > b {
        return Err(Error::Dn(format!(
            "K_max {k_max} needs at least {} boundary nodes (4 per period), mesh has {b}",
            4 * k_max
        )));
    }
    let mut f = DMatrix::zeros(b, basis_size(k_max));
    let c0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let c1 = 1.0 / std::f64::consts::PI.sqrt();
    for (bi, &v) in mesh.boundary.iter().enumerate() {
        let p = mesh.vertices[v];
        let theta = p[1].atan2(p[0]);
        f[(bi, 0)] = c0;
        for k in 1..=k_max {
            let (s, c) = (k as f64 * theta).sin_cos();
            f[(bi, 2 * k - 1)] = c1 * c;
            f[(bi, 2 * k)] = c1 * s;
        }
    }
    Ok(f)
}

/// Dense discrete DN form over boundary nodes (Schur complement). Quadratic
/// in the boundary size; intended for moderate meshes and cross-checks.
pub fn schur_dn(sys: &StiffnessSystem) -> Result<DMatrix<f64>> {
    sys.factorize()?.schur_complement()
}

/// Assembles, factorizes and extracts the Fourier DN matrix in one call.
pub fn compute_dn(
    mesh: &TriangleMesh,
    sigma: &ConductivityField,
    k_max: usize,
) -> Result<DnMatrix> {
    let sys = StiffnessSystem::assemble(mesh, sigma)?;
    let fact = sys.factorize()?;
    let provenance = format!(
        "fem: sigma=[{}], rings={}, sectors={}, kmax={k_max}",
        sigma.description(),
        mesh.n_rings(),
        mesh.n_sectors()
    );
    DnMatrix::from_factorized(&fact, mesh, k_max, provenance)
}

/// Richardson-extrapolated DN matrix: computes the map on `mesh` and on its
/// uniform refinement, then returns `2 * DN_{h/2} - DN_h`. For conductivities
/// whose discontinuity lines are not mesh-aligned (laminates), the plain
/// Galerkin DN entries carry an O(h) interface error that this extrapolation
/// cancels, leaving the higher-order remainder.
pub fn compute_dn_extrapolated(
    mesh: &TriangleMesh,
    sigma: &ConductivityField,
    k_max: usize,
) -> Result<DnMatrix> {
    let coarse = compute_dn(mesh, sigma, k_max)?;
    let fine_mesh = mesh.refine()?;
    let fine = compute_dn(&fine_mesh, sigma, k_max)?;
    let entries = 2.0 * &fine.entries - &coarse.entries;
    let provenance = format!(
        "richardson: sigma=[{}], rings={}/{}, sectors={}/{}, kmax={k_max}",
        sigma.description(),
        mesh.n_rings(),
        fine_mesh.n_rings(),
        mesh.n_sectors(),
        fine_mesh.n_sectors()
    );
    DnMatrix::from_entries_unchecked(entries, provenance)
}

/// Fourier weights `w_k = max(|k|, 1)^{2s}` of the `H^s` boundary norm.
#[derive(Debug, Clone)]
pub struct SobolevWeights {
    pub s: f64,
    weights: Vec<f64>,
}

impl SobolevWeights {
    pub fn new(s: f64, k_max: usize) -> SobolevWeights {
        let weights = (0..basis_size(k_max))
            .map(|j| (mode_of_index(j).max(1) as f64).powf(2.0 * s))
            .collect();
        SobolevWeights { s, weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `H^s` norm of a Fourier coefficient vector.
    pub fn norm(&self, coeffs: &[f64]) -> Result<f64> {
        if coeffs.len() != self.weights.len() {
            return Err(Error::Dn(format!(
                "{} coefficients for {} weights",
                coeffs.len(),
                self.weights.len()
            )));
        }
        Ok(coeffs
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c * c)
            .sum::<f64>()
            .sqrt())
    }
}

/// Operator norm of `A: H^{from_s} -> H^{to_s}`: the largest singular value
/// of `D2 A D1` with `D1 = diag(max(|k|,1)^{-from_s})` and
/// `D2 = diag(max(|k|,1)^{to_s})`.
pub fn op_norm(a: &DnMatrix, from_s: f64, to_s: f64) -> f64 {
    let m = a.entries().nrows();
    let mut scaled = a.entries().clone();
    for j in 0..m {
        let k = mode_of_index(j).max(1) as f64;
        let d1 = k.powf(-from_s);
        let d2 = k.powf(to_s);
        for i in 0..m {
            scaled[(i, j)] *= d1;
        }
        for i in 0..m {
            scaled[(j, i)] *= d2;
        }
    }
    let svd = scaled.svd(false, false);
    svd.singular_values.iter().copied().fold(0.0_f64, f64::max)
}

/// Bilinear pairing `psi^T A phi` of Fourier coefficient vectors.
pub fn weak_pairing(a: &DnMatrix, phi: &[f64], psi: &[f64]) -> Result<f64> {
    let m = a.entries().nrows();
    if phi.len() != m || psi.len() != m {
        return Err(Error::Dn(format!(
            "coefficient lengths {} and {} for basis size {m}",
            phi.len(),
            psi.len()
        )));
    }
    let mut acc = 0.0;
    for l in 0..m {
        let mut row = 0.0;
        for k in 0..m {
            row += a.entries()[(l, k)] * phi[k];
        }
        acc += psi[l] * row;
    }
    Ok(acc)
}
