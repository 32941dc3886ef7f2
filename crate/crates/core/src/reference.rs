//! Fine-grid finite-difference oracle. Solves the transformed linear
//! boundary value problem `(L − f/ε)φ = 0`, `φ = 1` on A, reflecting on
//! ∂𝒮, recovers the value function `W = −ε log φ` and the feedback control
//! `u* = −2∇W`, and computes committor functions and mean hitting times.
//!
//! The generator `L = εΔ − ∇V·∇` is discretized in divergence form,
//! `Lφ = ε e^{V/ε} ∇·(e^{−V/ε} ∇φ)`, with the Boltzmann factor evaluated
//! at cell faces. This makes the discrete operator symmetric with respect
//! to the μ-weighted inner product exactly (not just to O(h²)), so the
//! discrete problem inherits reversibility, the maximum principle and the
//! M-matrix structure of the continuous one. Dirichlet data on node sets
//! is imposed at the cell faces separating fixed from free cells, which
//! keeps the scheme second-order accurate.

use std::io::Write;

use crate::linalg::{conjugate_gradient, Csr, TriDiag};
use crate::model::{ControlProblem, QuadratureGrid, Region};
use crate::{Error, Result};

/// Discrete generator on a cell-centered grid, stored as per-axis face
/// Boltzmann factors plus node Boltzmann factors.
pub struct GridOperator {
    dim: usize,
    shape: [usize; 2],
    spacing: [f64; 2],
    epsilon: f64,
    /// Unnormalized e^{−V/ε} at the nodes.
    node_boltz: Vec<f64>,
    /// Unnormalized e^{−V/ε} at interior faces, one array per axis.
    face_boltz: Vec<Vec<f64>>,
}

impl GridOperator {
    pub fn new(problem: &ControlProblem, grid: &QuadratureGrid) -> Self {
        let dim = grid.dim();
        let axes = grid.axes();
        let nx = axes[0].n;
        let ny = if dim == 2 { axes[1].n } else { 1 };
        let eps = problem.epsilon;
        let mut coords = vec![0.0; dim];
        let node_boltz: Vec<f64> = (0..grid.n_nodes())
            .map(|i| {
                grid.node_into(i, &mut coords);
                (-problem.potential.evaluate(&coords) / eps).exp()
            })
            .collect();
        let mut face_boltz = Vec::with_capacity(dim);
        // axis 0 faces: between (ix, iy) and (ix+1, iy)
        let mut fx = Vec::with_capacity((nx.saturating_sub(1)) * ny);
        for iy in 0..ny {
            for ix in 0..nx.saturating_sub(1) {
                let mut c = vec![axes[0].lo + (ix as f64 + 1.0) * axes[0].h];
                if dim == 2 {
                    c.push(axes[1].node(iy));
                }
                fx.push((-problem.potential.evaluate(&c) / eps).exp());
            }
        }
        face_boltz.push(fx);
        if dim == 2 {
            let mut fy = Vec::with_capacity(nx * (ny - 1));
            for iy in 0..ny - 1 {
                for ix in 0..nx {
                    let c = vec![axes[0].node(ix), axes[1].lo + (iy as f64 + 1.0) * axes[1].h];
                    fy.push((-problem.potential.evaluate(&c) / eps).exp());
                }
            }
            face_boltz.push(fy);
        }
        Self {
            dim,
            shape: [nx, ny],
            spacing: [axes[0].h, if dim == 2 { axes[1].h } else { 1.0 }],
            epsilon: eps,
            node_boltz,
            face_boltz,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.node_boltz.len()
    }

    /// Iterate the couplings of node `i`: `(neighbor, c_ij)` with the
    /// convention `(Lu)_i = Σ_j c_ij (u_j − u_i)`.
    fn for_each_coupling(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        let [nx, _ny] = self.shape;
        let ix = i % nx;
        let iy = i / nx;
        let eps = self.epsilon;
        // axis 0
        let h2 = self.spacing[0] * self.spacing[0];
        if ix > 0 {
            let face = self.face_boltz[0][iy * (nx - 1) + ix - 1];
            f(i - 1, eps * face / (h2 * self.node_boltz[i]));
        }
        if ix + 1 < nx {
            let face = self.face_boltz[0][iy * (nx - 1) + ix];
            f(i + 1, eps * face / (h2 * self.node_boltz[i]));
        }
        if self.dim == 2 {
            let h2 = self.spacing[1] * self.spacing[1];
            if iy > 0 {
                let face = self.face_boltz[1][(iy - 1) * nx + ix];
                f(i - nx, eps * face / (h2 * self.node_boltz[i]));
            }
            if iy + 1 < self.shape[1] {
                let face = self.face_boltz[1][iy * nx + ix];
                f(i + nx, eps * face / (h2 * self.node_boltz[i]));
            }
        }
    }

    /// (Lu)_i for all nodes; reflecting boundary (zero flux through ∂𝒮).
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.n_nodes() {
            let mut acc = 0.0;
            self.for_each_coupling(i, |j, c| acc += c * (u[j] - u[i]));
            out[i] = acc;
        }
    }

    /// Largest total jump rate max_i Σ_j c_ij; dominates |L_ii| for
    /// uniformization.
    pub fn max_rate(&self) -> f64 {
        (0..self.n_nodes())
            .map(|i| {
                let mut acc = 0.0;
                self.for_each_coupling(i, |_, c| acc += c);
                acc
            })
            .fold(0.0, f64::max)
    }

    /// Dense matrix of the operator; test and small-grid use only.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n_nodes();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            self.for_each_coupling(i, |j, c| {
                m[(i, j)] += c;
                m[(i, i)] -= c;
            });
        }
        m
    }

    /// Solve `(L + diag(extra))u = rhs` on free nodes with `u` pinned to
    /// `values` on masked nodes. The Dirichlet datum is imposed on the
    /// face between a free and a masked cell (ghost at distance h/2), so
    /// face-aligned regions are resolved to second order.
    pub fn solve_dirichlet(
        &self,
        grid: &QuadratureGrid,
        mask: &[bool],
        values: &[f64],
        extra_diag: Option<&[f64]>,
        rhs: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        if mask.len() != n || values.len() != n || rhs.len() != n {
            return Err(Error::InvalidArgument("solve_dirichlet length mismatch".into()));
        }
        if self.dim == 1 {
            self.solve_dirichlet_1d(mask, values, extra_diag, rhs)
        } else {
            self.solve_dirichlet_cg(grid, mask, values, extra_diag, rhs)
        }
    }

    fn solve_dirichlet_1d(
        &self,
        mask: &[bool],
        values: &[f64],
        extra_diag: Option<&[f64]>,
        rhs: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        let mut m = TriDiag::zeros(n);
        let mut b = vec![0.0; n];
        for i in 0..n {
            if mask[i] {
                m.diag[i] = 1.0;
                b[i] = values[i];
                continue;
            }
            b[i] = rhs[i];
            let mut diag = extra_diag.map_or(0.0, |e| e[i]);
            self.for_each_coupling(i, |j, c| {
                let c = if mask[j] { 2.0 * c } else { c };
                diag -= c;
                if mask[j] {
                    b[i] -= c * values[j];
                } else if j + 1 == i {
                    m.lower[j] = c;
                } else {
                    m.upper[i] = c;
                }
            });
            m.diag[i] = diag;
        }
        m.solve(&b)
    }

    fn solve_dirichlet_cg(
        &self,
        grid: &QuadratureGrid,
        mask: &[bool],
        values: &[f64],
        extra_diag: Option<&[f64]>,
        rhs: &[f64],
    ) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        let free: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
        let mut red_index = vec![usize::MAX; n];
        for (r, &i) in free.iter().enumerate() {
            red_index[i] = r;
        }
        let w = grid.weights();
        // Reduced symmetric positive definite system: row i of the original
        // equations multiplied by −w_i (μ-symmetry of L makes w_i c_ij
        // symmetric in (i,j)).
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(free.len());
        let mut b = Vec::with_capacity(free.len());
        let mut diag = Vec::with_capacity(free.len());
        for (r, &i) in free.iter().enumerate() {
            let mut row = Vec::with_capacity(5);
            let mut d = -extra_diag.map_or(0.0, |e| e[i]) * w[i];
            let mut bi = -rhs[i] * w[i];
            self.for_each_coupling(i, |j, c| {
                let c = if mask[j] { 2.0 * c } else { c };
                d += c * w[i];
                if mask[j] {
                    bi += c * w[i] * values[j];
                } else {
                    row.push((red_index[j], -c * w[i]));
                }
            });
            row.push((r, d));
            diag.push(d);
            rows.push(row);
            b.push(bi);
        }
        let csr = Csr::from_rows(rows);
        let (x, _iters) =
            conjugate_gradient(|p, out| csr.apply(p, out), &diag, &b, 1e-12, 200_000)?;
        let mut full = values.to_vec();
        for (r, &i) in free.iter().enumerate() {
            full[i] = x[r];
        }
        Ok(full)
    }
}

/// Solution of the linear boundary value problem on a fine grid.
pub struct ReferenceSolution {
    pub grid: QuadratureGrid,
    /// φ at the nodes, in (0, 1].
    pub phi: Vec<f64>,
    /// Value function W = −ε log φ, zero on the target.
    pub w: Vec<f64>,
    /// Optimal feedback u* = −2∇W, one array per axis.
    pub u_star: Vec<Vec<f64>>,
    /// V at the nodes (for effective-potential output U = V + 2W).
    pub potential_values: Vec<f64>,
}

impl ReferenceSolution {
    /// CSV with columns x[,y],V,phi,W,u_star[,u_star_y].
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        let dim = self.grid.dim();
        if dim == 1 {
            writeln!(out, "x,V,phi,W,u_star")?;
        } else {
            writeln!(out, "x0,x1,V,phi,W,u_star_0,u_star_1")?;
        }
        let mut coords = vec![0.0; dim];
        for i in 0..self.grid.n_nodes() {
            self.grid.node_into(i, &mut coords);
            for c in &coords {
                write!(out, "{:.16e},", c)?;
            }
            write!(
                out,
                "{:.16e},{:.16e},{:.16e}",
                self.potential_values[i], self.phi[i], self.w[i]
            )?;
            for g in &self.u_star {
                write!(out, ",{:.16e}", g[i])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Committor functions χ_i of a family of core sets C_1..C_{n+1}, with the
/// last core equal to the target set A by convention.
#[derive(Clone)]
pub struct CommittorSet {
    pub grid: QuadratureGrid,
    pub cores: Vec<Region>,
    /// chi[i][node] = χ_i; rows sum to one at every node.
    pub chi: Vec<Vec<f64>>,
}

impl CommittorSet {
    pub fn n_states(&self) -> usize {
        self.chi.len()
    }
}

/// Discretize and solve `(L − f/ε)φ = 0`, `φ = 1` on the target,
/// reflecting on ∂𝒮, and return φ, W, u*.
pub fn solve_linear_bvp(problem: &ControlProblem, h: f64) -> Result<ReferenceSolution> {
    let grid = QuadratureGrid::new(problem, &vec![h; problem.dim()])?;
    solve_linear_bvp_on(problem, &grid)
}

/// Same as [`solve_linear_bvp`] on a caller-provided grid.
pub fn solve_linear_bvp_on(problem: &ControlProblem, grid: &QuadratureGrid) -> Result<ReferenceSolution> {
    let mask = grid.mask(&problem.target);
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument(
            "target region contains no grid node; decrease h".into(),
        ));
    }
    let f = grid.sample(|x| problem.running_cost.evaluate(x));
    if f.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidProblem("running cost is negative at a grid node".into()));
    }
    let op = GridOperator::new(problem, grid);
    let extra: Vec<f64> = f.iter().map(|&v| -v / problem.epsilon).collect();
    let ones = vec![1.0; grid.n_nodes()];
    let rhs = vec![0.0; grid.n_nodes()];
    let phi = op.solve_dirichlet(grid, &mask, &ones, Some(&extra), &rhs)?;
    if phi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::DiscretizationFault(
            "computed φ is not strictly positive; the maximum principle is violated".into(),
        ));
    }
    let w: Vec<f64> = phi
        .iter()
        .map(|&p| -problem.epsilon * p.max(1e-300).ln())
        .collect();
    let u_star: Vec<Vec<f64>> = grid
        .gradient(&w)
        .into_iter()
        .map(|g| g.into_iter().map(|v| -2.0 * v).collect())
        .collect();
    let potential_values = grid.sample(|x| problem.potential.evaluate(x));
    Ok(ReferenceSolution { grid: grid.clone(), phi, w, u_star, potential_values })
}

/// Solve `Lχ_i = 0` outside the cores with `χ_i = δ_ij` on core `C_j` for
/// every core; the last core is the target set A.
pub fn compute_committors(problem: &ControlProblem, cores: &[Region], h: f64) -> Result<CommittorSet> {
    let grid = QuadratureGrid::new(problem, &vec![h; problem.dim()])?;
    compute_committors_on(problem, &grid, cores)
}

pub fn compute_committors_on(
    problem: &ControlProblem,
    grid: &QuadratureGrid,
    cores: &[Region],
) -> Result<CommittorSet> {
    if cores.is_empty() {
        return Err(Error::InvalidArgument("need at least one core set".into()));
    }
    for (a, ca) in cores.iter().enumerate() {
        if !ca.strictly_inside(&problem.domain) {
            return Err(Error::InvalidProblem(format!(
                "core {a} is not strictly inside the domain interior"
            )));
        }
        for cb in cores.iter().skip(a + 1) {
            if !ca.disjoint_from(cb) {
                return Err(Error::InvalidProblem("core sets overlap".into()));
            }
        }
    }
    let core_masks: Vec<Vec<bool>> = cores.iter().map(|c| grid.mask(c)).collect();
    let mut union = vec![false; grid.n_nodes()];
    for m in &core_masks {
        if !m.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("a core set contains no grid node".into()));
        }
        for (u, &b) in union.iter_mut().zip(m) {
            *u |= b;
        }
    }
    let op = GridOperator::new(problem, grid);
    let rhs = vec![0.0; grid.n_nodes()];
    let mut chi = Vec::with_capacity(cores.len());
    for m in &core_masks {
        let values: Vec<f64> = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        chi.push(op.solve_dirichlet(grid, &union, &values, None, &rhs)?);
    }
    Ok(CommittorSet { grid: grid.clone(), cores: cores.to_vec(), chi })
}

/// Expected hitting time of `region`: solves `Lt = −1` outside, `t = 0`
/// inside, reflecting on ∂𝒮.
pub fn mean_hitting_time(problem: &ControlProblem, region: &Region, h: f64) -> Result<Vec<f64>> {
    let grid = QuadratureGrid::new(problem, &vec![h; problem.dim()])?;
    mean_hitting_time_on(problem, &grid, region)
}

pub fn mean_hitting_time_on(
    problem: &ControlProblem,
    grid: &QuadratureGrid,
    region: &Region,
) -> Result<Vec<f64>> {
    let mask = grid.mask(region);
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("hitting region contains no grid node".into()));
    }
    let op = GridOperator::new(problem, grid);
    let zeros = vec![0.0; grid.n_nodes()];
    let rhs = vec![-1.0; grid.n_nodes()];
    op.solve_dirichlet(grid, &mask, &zeros, None, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Domain, Potential, RunningCost};
    use approx::assert_relative_eq;

    fn flat_problem(sigma: f64) -> ControlProblem {
        // right edge inset below 1.0 so the target stays strictly inside
        // the domain; every grid node of [0.9, 1] is still covered
        ControlProblem::new(
            Potential::zero(1),
            Domain::interval(0.0, 1.0).unwrap(),
            0.5,
            Region::interval(0.9, 1.0 - 1e-12).unwrap(),
            RunningCost::Constant(sigma),
        )
        .unwrap()
    }

    #[test]
    fn zero_cost_gives_constant_solution() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.0).unwrap();
        let sol = solve_linear_bvp(&problem, 0.05).unwrap();
        for i in 0..sol.grid.n_nodes() {
            assert!((sol.phi[i] - 1.0).abs() <= 1e-12);
            assert!(sol.w[i].abs() <= 1e-12);
            assert!(sol.u_star[0][i].abs() <= 1e-10);
        }
    }

    #[test]
    fn flat_potential_matches_cosh_oracle() {
        // oracle: εφ'' = (σ/ε)φ with φ'(0) = 0, φ(0.9) = 1 has the closed
        // form φ(x) = cosh(sx)/cosh(0.9s), s = sqrt(σ)/ε
        let sigma = 0.08;
        let problem = flat_problem(sigma);
        let eps = problem.epsilon;
        let s = (sigma / (eps * eps)).sqrt();
        let sol = solve_linear_bvp(&problem, 1e-3).unwrap();
        let mask = sol.grid.mask(&problem.target);
        let mut max_rel = 0.0_f64;
        for i in 0..sol.grid.n_nodes() {
            if mask[i] {
                continue;
            }
            let x = sol.grid.node_1d(i);
            let exact = (s * x).cosh() / (0.9 * s).cosh();
            max_rel = max_rel.max((sol.phi[i] - exact).abs() / exact);
        }
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn grid_convergence_is_second_order() {
        let sigma = 0.08;
        let problem = flat_problem(sigma);
        let eps = problem.epsilon;
        let s = (sigma / (eps * eps)).sqrt();
        let err = |h: f64| {
            let sol = solve_linear_bvp(&problem, h).unwrap();
            let mask = sol.grid.mask(&problem.target);
            (0..sol.grid.n_nodes())
                .filter(|&i| !mask[i])
                .map(|i| {
                    let x = sol.grid.node_1d(i);
                    (sol.phi[i] - (s * x).cosh() / (0.9 * s).cosh()).abs()
                })
                .fold(0.0, f64::max)
        };
        let e1 = err(0.005);
        let e2 = err(0.0025);
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "observed order {order} (errors {e1}, {e2})");
    }

    #[test]
    fn effective_potential_lifts_nontarget_wells() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.08).unwrap();
        let sol = solve_linear_bvp(&problem, 0.01).unwrap();
        let at = |x: f64| {
            let axis = &sol.grid.axes()[0];
            (((x - axis.lo) / axis.h - 0.5).round() as usize).min(axis.n - 1)
        };
        let lift = |x: f64| 2.0 * sol.w[at(x)]; // U − V = 2W
        assert!(lift(0.0) > lift(-3.4), "U should rise over the non-target wells");
        assert!(lift(3.4) > lift(0.0));
        assert!(lift(-3.4).abs() <= 1e-12, "W = 0 on the target core");
    }

    #[test]
    fn maximum_principle_and_self_adjointness() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.08).unwrap();
        let sol = solve_linear_bvp(&problem, 0.02).unwrap();
        let min = sol.phi.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = sol.phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min > 0.0);
        assert!((max - 1.0).abs() <= 1e-12, "max φ attained on A");

        let grid = QuadratureGrid::new(&problem, &[0.05]).unwrap();
        let op = GridOperator::new(&problem, &grid);
        let dense = op.to_dense();
        let w = grid.weights();
        let mut defect = 0.0_f64;
        for i in 0..grid.n_nodes() {
            for j in 0..grid.n_nodes() {
                let a = w[i] * dense[(i, j)];
                let b = w[j] * dense[(j, i)];
                let scale = a.abs().max(b.abs()).max(1e-30);
                if i != j && (a != 0.0 || b != 0.0) {
                    defect = defect.max((a - b).abs() / scale);
                }
            }
        }
        assert!(defect <= 1e-10, "self-adjointness defect {defect}");
    }

    #[test]
    fn committor_partition_of_unity_and_monotonicity() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.08).unwrap();
        let cores = [
            Region::interval(-0.2, 0.2).unwrap(),
            Region::interval(3.2, 3.6).unwrap(),
            Region::interval(-3.6, -3.2).unwrap(), // target last
        ];
        let set = compute_committors(&problem, &cores, 0.01).unwrap();
        let n = set.grid.n_nodes();
        for i in 0..n {
            let s: f64 = set.chi.iter().map(|c| c[i]).sum();
            assert!((s - 1.0).abs() <= 1e-10, "partition of unity violated: {s}");
            for c in &set.chi {
                assert!(c[i] >= -1e-12 && c[i] <= 1.0 + 1e-12);
            }
        }
        // 1-D maximum principle: each committor is monotone between
        // adjacent cores. Check χ of the center core rises on the left
        // transition region (-3.2, -0.2).
        let chi_c = &set.chi[0];
        let mut prev = f64::NEG_INFINITY;
        for i in 0..n {
            let x = set.grid.node_1d(i);
            if x > -3.2 && x < -0.2 {
                assert!(chi_c[i] >= prev - 1e-12, "not monotone at x = {x}");
                prev = chi_c[i];
            }
        }
    }

    #[test]
    fn single_core_committor_is_one() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.0).unwrap();
        let cores = [Region::interval(-4.0, 4.0).unwrap()];
        let set = compute_committors(&problem, &cores, 0.05).unwrap();
        for &v in &set.chi[0] {
            assert!((v - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_cores_split_committors_at_midpoint() {
        let problem = ControlProblem::new(
            Potential::double_well(),
            Domain::interval(-2.0, 2.0).unwrap(),
            0.5,
            Region::interval(0.8, 1.2).unwrap(),
            RunningCost::Constant(0.0),
        )
        .unwrap();
        let cores = [
            Region::interval(-1.2, -0.8).unwrap(),
            Region::interval(0.8, 1.2).unwrap(),
        ];
        let set = compute_committors(&problem, &cores, 0.001).unwrap();
        let n = set.grid.n_nodes();
        // midpoint x = 0 lies between nodes; average the two neighbors
        let mid = n / 2;
        let val = 0.5 * (set.chi[0][mid - 1] + set.chi[0][mid]);
        assert!((val - 0.5).abs() <= 1e-6, "committor at midpoint: {val}");
    }

    #[test]
    fn overlapping_cores_are_rejected() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.08).unwrap();
        let cores = [
            Region::interval(-0.5, 0.5).unwrap(),
            Region::interval(0.4, 1.0).unwrap(),
        ];
        assert!(compute_committors(&problem, &cores, 0.05).is_err());
    }

    #[test]
    fn hitting_time_of_whole_domain_is_zero() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.0).unwrap();
        let region = Region::interval(-4.99, 4.99).unwrap();
        let t = mean_hitting_time(&problem, &region, 0.05).unwrap();
        // every node lies in the region (it spans all node coordinates)
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hitting_time_matches_reflected_brownian_oracle() {
        // V = 0 on [0,1], target {x >= 1-h}: analytic t(x) = (1−x²)/(2ε)
        // for the interface at 1 − h (where the Dirichlet face sits)
        let h = 1e-3;
        let eps = 0.5;
        let problem = ControlProblem::new(
            Potential::zero(1),
            Domain::interval(0.0, 1.0).unwrap(),
            eps,
            Region::interval(0.5, 0.6).unwrap(), // placeholder target, unused
            RunningCost::Constant(0.0),
        )
        .unwrap();
        let region = Region::interval(1.0 - h, 1.0).unwrap();
        let t = mean_hitting_time(&problem, &region, h).unwrap();
        let expected = 1.0 / (2.0 * eps);
        assert!(
            (t[0] - expected).abs() / expected <= 0.01,
            "t(0) = {}, expected {expected}",
            t[0]
        );
    }

    #[test]
    fn two_dimensional_bvp_flat_potential() {
        // product structure: with V = 0 on [0,1]² and a target strip in x,
        // φ only depends on x and matches the 1-D cosh oracle
        let sigma = 0.05;
        let eps = 0.5;
        let problem = ControlProblem::new(
            Potential::zero(2),
            Domain::new(vec![[0.0, 1.0], [0.0, 1.0]]).unwrap(),
            eps,
            Region::new(vec![vec![[0.9, 1.0 - 1e-9], [1e-9, 1.0 - 1e-9]]]).unwrap(),
            RunningCost::Constant(sigma),
        )
        .unwrap();
        let sol = solve_linear_bvp(&problem, 0.02).unwrap();
        let s = (sigma / (eps * eps)).sqrt();
        let mask = sol.grid.mask(&problem.target);
        for i in 0..sol.grid.n_nodes() {
            if mask[i] {
                continue;
            }
            let x = sol.grid.node(i)[0];
            let exact = (s * x).cosh() / (0.9 * s).cosh();
            assert_relative_eq!(sol.phi[i], exact, epsilon = 2e-4);
        }
    }
}
