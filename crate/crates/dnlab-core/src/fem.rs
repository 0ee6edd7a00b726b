//! P1 finite elements for the conductivity equation on the disc: assembly,
//! Dirichlet solves through a sparse Cholesky factorization of the interior
//! block, Schur-complement products on boundary data, and energy diagnostics.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, Matrix2};

use crate::conductivity::ConductivityField;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Relative residual allowed on the interior equations.
pub const SOLVE_TOL: f64 = 1e-10;

/// Element stiffness of one P1 triangle with constant coefficient `sigma`:
/// `K_ij = area * grad(l_i)^T sigma grad(l_j)`. Returns the signed area and
/// the 3x3 matrix; errors on degenerate triangles.
pub fn element_stiffness(p: [[f64; 2]; 3], sigma: &Matrix2<f64>) -> Result<(f64, [[f64; 3]; 3])> {
    let area = 0.5
        * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    if !(area > 1e-16) {
        return Err(Error::Mesh(format!("degenerate triangle, area {area}")));
    }
    // grad(l_i) = (b_i, c_i) / (2 area), cyclic differences of coordinates.
    let mut g = [[0.0_f64; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        g[i][0] = p[j][1] - p[k][1];
        g[i][1] = p[k][0] - p[j][0];
    }
    let (m00, m01, m11) = (sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 1)]);
    let mut ke = [[0.0_f64; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            // Symmetric in (i, j) exactly, including floating point.
            let q = m00 * g[i][0] * g[j][0]
                + m01 * (g[i][0] * g[j][1] + g[i][1] * g[j][0])
                + m11 * g[i][1] * g[j][1];
            let v = q / (4.0 * area);
            ke[i][j] = v;
            ke[j][i] = v;
        }
    }
    Ok((area, ke))
}

#[derive(Debug, Clone, Copy)]
enum Dof {
    Interior(usize),
    Boundary(usize),
}

/// Assembled stiffness matrix with the interior/boundary DOF split.
///
/// The full matrix is stored in CSR form and is exactly symmetric: the upper
/// triangle is assembled in deterministic element order and mirrored.
#[derive(Debug, Clone)]
pub struct StiffnessSystem {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
    dof: Vec<Dof>,
    sigma_description: String,
}

impl StiffnessSystem {
    pub fn assemble(mesh: &TriangleMesh, sigma: &ConductivityField) -> Result<StiffnessSystem> {
        let n = mesh.vertices.len();
        let mut upper: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.triangles.len() * 6);
        for tri in &mesh.triangles {
            let p = [
                mesh.vertices[tri[0]],
                mesh.vertices[tri[1]],
                mesh.vertices[tri[2]],
            ];
            let (_, ke) = element_stiffness(p, &sigma.element_average(&p))?;
            for i in 0..3 {
                for j in i..3 {
                    let (gi, gj) = (tri[i], tri[j]);
                    let (r, c) = if gi <= gj { (gi, gj) } else { (gj, gi) };
                    upper.push((r, c, ke[i][j]));
                }
            }
        }
        // Stable sort keeps element order within duplicates, so the merged
        // sums are deterministic.
        upper.sort_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(upper.len() / 3);
        for (r, c, v) in upper {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }

        let mut counts = vec![0usize; n];
        for &(r, c, _) in &merged {
            counts[r] += 1;
            if r != c {
                counts[c] += 1;
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0usize; nnz];
        let mut vals = vec![0.0_f64; nnz];
        let mut cursor = row_ptr[..n].to_vec();
        // Mirror pass: upper entries land in both rows; within a row the
        // column indices arrive sorted because `merged` is (row, col) sorted.
        for &(r, c, v) in &merged {
            col_idx[cursor[r]] = c;
            vals[cursor[r]] = v;
            cursor[r] += 1;
        }
        for &(r, c, v) in &merged {
            if r != c {
                col_idx[cursor[c]] = r;
                vals[cursor[c]] = v;
                cursor[c] += 1;
            }
        }
        for i in 0..n {
            let s = row_ptr[i]..row_ptr[i + 1];
            let mut pairs: Vec<(usize, f64)> = col_idx[s.clone()]
                .iter()
                .copied()
                .zip(vals[s.clone()].iter().copied())
                .collect();
            pairs.sort_by_key(|&(c, _)| c);
            for (off, (c, v)) in pairs.into_iter().enumerate() {
                col_idx[row_ptr[i] + off] = c;
                vals[row_ptr[i] + off] = v;
            }
        }

        let mut dof = vec![Dof::Interior(usize::MAX); n];
        let boundary = mesh.boundary.clone();
        for (bi, &v) in boundary.iter().enumerate() {
            dof[v] = Dof::Boundary(bi);
        }
        let mut interior = Vec::with_capacity(n - boundary.len());
        for v in 0..n {
            if let Dof::Interior(_) = dof[v] {
                dof[v] = Dof::Interior(interior.len());
                interior.push(v);
            }
        }

        Ok(StiffnessSystem {
            n,
            row_ptr,
            col_idx,
            vals,
            interior,
            boundary,
            dof,
            sigma_description: sigma.description().to_string(),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary
    }

    pub fn sigma_description(&self) -> &str {
        &self.sigma_description
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[s.clone()]
            .iter()
            .copied()
            .zip(self.vals[s].iter().copied())
    }

    /// Entry `A[i][j]` of the full matrix (vertex indices).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let s = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[s.clone()].binary_search(&j) {
            Ok(pos) => self.vals[s.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Full matrix-vector product over all vertices.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.n);
        let mut out = vec![0.0_f64; self.n];
        for i in 0..self.n {
            let mut acc = 0.0;
            for (j, v) in self.row(i) {
                acc += v * u[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Dirichlet energy `u^T A u` of a full nodal vector.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let au = self.apply(u);
        let mut e = 0.0;
        for i in 0..self.n {
            e += u[i] * au[i];
        }
        e
    }

    /// Largest absolute row sum; zero for the full Neumann form since
    /// constants are in the kernel.
    pub fn max_abs_row_sum(&self) -> f64 {
        let ones = vec![1.0_f64; self.n];
        self.apply(&ones)
            .into_iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute asymmetry `|A[i][j] - A[j][i]|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if j > i {
                    worst = worst.max((v - self.entry(j, i)).abs());
                }
            }
        }
        worst
    }

    /// Dense boundary-boundary block in boundary order.
    pub fn boundary_block(&self) -> DMatrix<f64> {
        let nb = self.boundary.len();
        let mut a = DMatrix::zeros(nb, nb);
        for (bi, &v) in self.boundary.iter().enumerate() {
            for (j, val) in self.row(v) {
                if let Dof::Boundary(bj) = self.dof[j] {
                    a[(bi, bj)] = val;
                }
            }
        }
        a
    }

    /// Factorizes the interior block; fails if it is not positive definite.
    pub fn factorize(&self) -> Result<FactorizedSystem<'_>> {
        let ni = self.interior.len();
        let mut triplets = Vec::new();
        for (il, &v) in self.interior.iter().enumerate() {
            for (j, val) in self.row(v) {
                if let Dof::Interior(jl) = self.dof[j] {
                    triplets.push(Triplet::new(il, jl, val));
                }
            }
        }
        let a_ii =
            SparseColMat::<usize, f64>::try_new_from_triplets(ni, ni, &triplets).map_err(|e| {
                Error::Solver {
                    message: format!("interior block construction failed: {e:?}"),
                    residual: f64::INFINITY,
                }
            })?;
        let llt = a_ii
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| Error::Solver {
                message: format!("sparse Cholesky factorization failed: {e:?}"),
                residual: f64::INFINITY,
            })?;
        Ok(FactorizedSystem { sys: self, llt })
    }
}

/// Sparse Cholesky factorization of the interior block of a system.
pub struct FactorizedSystem<'a> {
    sys: &'a StiffnessSystem,
    llt: Llt<usize, f64>,
}

impl FactorizedSystem<'_> {
    pub fn system(&self) -> &StiffnessSystem {
        self.sys
    }

    /// Solves `A_ii X = RHS`, checking the relative residual.
    fn solve_interior(&self, rhs: faer::Mat<f64>) -> Result<faer::Mat<f64>> {
        let sys = self.sys;
        let (ni, m) = (rhs.nrows(), rhs.ncols());
        let mut x = rhs.clone();
        self.llt.solve_in_place(x.as_mut());
        let mut rhs_norm2 = 0.0_f64;
        let mut res_norm2 = 0.0_f64;
        for (il, &v) in sys.interior.iter().enumerate() {
            for c in 0..m {
                let mut acc = 0.0;
                for (j, val) in sys.row(v) {
                    if let Dof::Interior(jl) = sys.dof[j] {
                        acc += val * x[(jl, c)];
                    }
                }
                let r = acc - rhs[(il, c)];
                res_norm2 += r * r;
                rhs_norm2 += rhs[(il, c)] * rhs[(il, c)];
            }
        }
        let residual = res_norm2.sqrt() / rhs_norm2.sqrt().max(1e-300);
        if !(residual <= SOLVE_TOL) && rhs_norm2 > 0.0 {
            return Err(Error::Solver {
                message: format!("interior solve residual {residual:e} above {SOLVE_TOL:e}"),
                residual,
            });
        }
        let _ = ni;
        Ok(x)
    }

    /// Builds `-A_ib G` as a dense right-hand side block.
    fn lift_rhs(&self, g: &DMatrix<f64>) -> faer::Mat<f64> {
        let sys = self.sys;
        let m = g.ncols();
        let mut rhs = faer::Mat::<f64>::zeros(sys.interior.len(), m);
        for (il, &v) in sys.interior.iter().enumerate() {
            for (j, val) in sys.row(v) {
                if let Dof::Boundary(bj) = sys.dof[j] {
                    for c in 0..m {
                        rhs[(il, c)] -= val * g[(bj, c)];
                    }
                }
            }
        }
        rhs
    }

    /// Discrete harmonic extension of nodal boundary values.
    pub fn harmonic_extension(&self, boundary_values: &[f64]) -> Result<DiscreteSolution> {
        let sys = self.sys;
        if boundary_values.len() != sys.boundary.len() {
            return Err(Error::Solver {
                message: format!(
                    "boundary data has {} values for {} boundary nodes",
                    boundary_values.len(),
                    sys.boundary.len()
                ),
                residual: 0.0,
            });
        }
        let g = DMatrix::from_column_slice(boundary_values.len(), 1, boundary_values);
        let x = self.solve_interior(self.lift_rhs(&g))?;
        let mut values = vec![0.0_f64; sys.n];
        for (bi, &v) in sys.boundary.iter().enumerate() {
            values[v] = boundary_values[bi];
        }
        for (il, &v) in sys.interior.iter().enumerate() {
            values[v] = x[(il, 0)];
        }
        let energy = sys.energy(&values).max(0.0);
        Ok(DiscreteSolution {
            values,
            boundary_values: boundary_values.to_vec(),
            energy,
        })
    }

    /// Schur-complement product `(A_bb - A_bi A_ii^{-1} A_ib) G` on boundary
    /// column blocks; this is the discrete DN action on nodal traces.
    pub fn schur_product(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let sys = self.sys;
        if g.nrows() != sys.boundary.len() {
            return Err(Error::Solver {
                message: format!(
                    "trace block has {} rows for {} boundary nodes",
                    g.nrows(),
                    sys.boundary.len()
                ),
                residual: 0.0,
            });
        }
        let m = g.ncols();
        let x = self.solve_interior(self.lift_rhs(g))?;
        let mut out = DMatrix::zeros(sys.boundary.len(), m);
        for (bi, &v) in sys.boundary.iter().enumerate() {
            for (j, val) in sys.row(v) {
                match sys.dof[j] {
                    Dof::Boundary(bj) => {
                        for c in 0..m {
                            out[(bi, c)] += val * g[(bj, c)];
                        }
                    }
                    Dof::Interior(jl) => {
                        // X already carries the minus sign of -A_ii^{-1} A_ib G.
                        for c in 0..m {
                            out[(bi, c)] += val * x[(jl, c)];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Dense Schur complement over all boundary nodes. Quadratic in the
    /// boundary size; meant for moderate meshes and cross-checks.
    pub fn schur_complement(&self) -> Result<DMatrix<f64>> {
        let nb = self.sys.boundary.len();
        self.schur_product(&DMatrix::identity(nb, nb))
    }
}

/// Nodal solution of a Dirichlet problem.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    /// Values over all mesh vertices.
    pub values: Vec<f64>,
    /// Prescribed trace, in boundary-node order.
    pub boundary_values: Vec<f64>,
    /// Dirichlet energy `u^T A u`.
    pub energy: f64,
}

/// One-shot assemble-free Dirichlet solve on an already assembled system.
pub fn solve_dirichlet(sys: &StiffnessSystem, boundary_values: &[f64]) -> Result<DiscreteSolution> {
    sys.factorize()?.harmonic_extension(boundary_values)
}

/// Discrete Caccioppoli quotient
/// `[integral of |grad w|^2 over the width-delta boundary layer] /
///  [delta^{-2} integral of w^2 over the width-2*delta layer]`.
///
/// Element sets are selected by centroid radius. The input should be a
/// difference of solutions of the same equation near the boundary with equal
/// traces; `0/0` is reported as `0`.
pub fn caccioppoli_ratio(mesh: &TriangleMesh, sol: &DiscreteSolution, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Mesh(format!("layer width {delta} outside (0, 0.5)")));
    }
    if sol.values.len() != mesh.vertices.len() {
        return Err(Error::Mesh(format!(
            "solution has {} values for {} vertices",
            sol.values.len(),
            mesh.vertices.len()
        )));
    }
    let mut grad_thin = 0.0_f64;
    let mut mass_wide = 0.0_f64;
    let mut thin_elements = 0usize;
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let c = mesh.centroid(ti);
        let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
        if r <= 1.0 - 2.0 * delta {
            continue;
        }
        let p = [
            mesh.vertices[tri[0]],
            mesh.vertices[tri[1]],
            mesh.vertices[tri[2]],
        ];
        let w = [sol.values[tri[0]], sol.values[tri[1]], sol.values[tri[2]]];
        let area = 0.5
            * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
        // Exact P1 mass: area/6 * (sum w_i^2 + sum_{i<j} w_i w_j).
        mass_wide += area / 6.0
            * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2] + w[0] * w[1] + w[0] * w[2] + w[1] * w[2]);
        if r > 1.0 - delta {
            thin_elements += 1;
            let mut gx = 0.0;
            let mut gy = 0.0;
            for i in 0..3 {
                let j = (i + 1) % 3;
                let k = (i + 2) % 3;
                gx += w[i] * (p[j][1] - p[k][1]);
                gy += w[i] * (p[k][0] - p[j][0]);
            }
            grad_thin += (gx * gx + gy * gy) / (4.0 * area);
        }
    }
    if thin_elements == 0 {
        return Err(Error::Mesh(format!(
            "no elements with centroid in the width-{delta} boundary layer"
        )));
    }
    if grad_thin == 0.0 && mass_wide == 0.0 {
        return Ok(0.0);
    }
    if mass_wide <= 0.0 {
        return Err(Error::Mesh(format!(
            "zero mass in the width-{} layer with nonzero gradient energy",
            2.0 * delta
        )));
    }
    Ok(grad_thin / (mass_wide / (delta * delta)))
}
