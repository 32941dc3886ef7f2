//! Galerkin projection of the linear boundary value problem onto a
//! partition-of-unity basis. The projection produces the matrices of a
//! Markov jump process:
//!
//! ```text
//! K_ij = ⟨χ_i, Lχ_j⟩_μ / ⟨χ_i, 1⟩_μ      (rate matrix)
//! F_ij = ⟨χ_i, f χ_j⟩_μ / ⟨χ_i, 1⟩_μ     (cost matrix)
//! Λ_ii = Σ_j F_ij,   G = K − ε⁻¹(F − Λ),  π_i = ⟨χ_i, 1⟩_μ
//! ```
//!
//! and the discrete problem `Σ_j (G_ij − ε⁻¹Λ_ij) φ̂_j = 0` for i ≤ n with
//! `φ̂_{n+1} = 1`. Two bases are supported: indicators of a full box
//! partition, whose rate matrix is assembled by the finite volume
//! approximation (the Dirichlet form of a step function is not defined,
//! and the finite volume matrix is exactly what the projection yields for
//! midpoint quadrature), and committor functions of core sets, assembled
//! through the bilinear-form identity `⟨χ_i, Lχ_j⟩_μ = −ε⟨∇χ_i, ∇χ_j⟩_μ`,
//! which stays well defined although committors are only continuous at
//! core boundaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::solve_dense;
use crate::model::{ControlProblem, QuadratureGrid};
use crate::reference::CommittorSet;
use crate::{Error, Result};

/// Tolerance for the partition-of-unity (S1) and boundary-adaptation (S2)
/// checks; committors come from a grid solve, so exact algebraic
/// identities are unattainable.
pub const BASIS_TOLERANCE: f64 = 1e-8;

/// Uniform box partition of the domain.
#[derive(Debug, Clone)]
pub struct CellPartition {
    lo: Vec<f64>,
    width: Vec<f64>,
    counts: Vec<usize>,
}

impl CellPartition {
    pub fn new(problem: &ControlProblem, counts: &[usize]) -> Result<Self> {
        if counts.len() != problem.dim() || counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument(
                "cell counts must match the domain dimension and be positive".into(),
            ));
        }
        let bounds = problem.domain.bounds();
        Ok(Self {
            lo: bounds.iter().map(|b| b[0]).collect(),
            width: bounds
                .iter()
                .zip(counts)
                .map(|(b, &c)| (b[1] - b[0]) / c as f64)
                .collect(),
            counts: counts.to_vec(),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn widths(&self) -> &[f64] {
        &self.width
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let mut rem = cell;
        let mut out = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            let k = rem % self.counts[a];
            rem /= self.counts[a];
            out.push(self.lo[a] + (k as f64 + 0.5) * self.width[a]);
        }
        out
    }

    /// Index of the cell containing a point.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for a in 0..self.dim() {
            let k = (((x[a] - self.lo[a]) / self.width[a]).floor() as isize)
                .clamp(0, self.counts[a] as isize - 1) as usize;
            idx += k * stride;
            stride *= self.counts[a];
        }
        idx
    }

    /// Neighbor pairs sharing a face, with the face midpoint.
    fn neighbor_pairs(&self) -> Vec<(usize, usize, Vec<f64>)> {
        let mut pairs = Vec::new();
        let n = self.n_cells();
        let mut strides = vec![1usize; self.dim()];
        for a in 1..self.dim() {
            strides[a] = strides[a - 1] * self.counts[a - 1];
        }
        for i in 0..n {
            let mut rem = i;
            let mut coords = Vec::with_capacity(self.dim());
            for a in 0..self.dim() {
                coords.push(rem % self.counts[a]);
                rem /= self.counts[a];
            }
            for a in 0..self.dim() {
                if coords[a] + 1 < self.counts[a] {
                    let j = i + strides[a];
                    let mut mid = self.center(i);
                    mid[a] += 0.5 * self.width[a];
                    pairs.push((i, j, mid));
                }
            }
        }
        pairs
    }
}

/// Finite volume approximation of the generator on a uniform box
/// partition:
///
/// ```text
/// K_ij = Δ_ij⁻¹ exp(−ε⁻¹(V(x̄_ij) − V(x_i)))    for face neighbors,
/// Δ_ij⁻¹ = ε m(S_ij) / (m(h_ij) m(A_i)),        K_ii = −Σ_{j≠i} K_ij,
/// ```
///
/// with stationary vector `π_i ∝ m(A_i) exp(−V(x_i)/ε)`.
pub fn fva_generator(
    problem: &ControlProblem,
    partition: &CellPartition,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = partition.n_cells();
    let eps = problem.epsilon;
    let cell_vol: f64 = partition.width.iter().product();
    let mut k = DMatrix::zeros(n, n);
    for (i, j, face_mid) in partition.neighbor_pairs() {
        // axis of the pair: the coordinate where centers differ
        let ci = partition.center(i);
        let cj = partition.center(j);
        let axis = (0..partition.dim())
            .find(|&a| (ci[a] - cj[a]).abs() > 1e-12)
            .expect("neighbor cells share all coordinates");
        let w_axis = partition.width[axis];
        let face_area = cell_vol / w_axis;
        let delta_inv = eps * face_area / (w_axis * cell_vol);
        let v_face = problem.potential.evaluate(&face_mid);
        let vi = problem.potential.evaluate(&ci);
        let vj = problem.potential.evaluate(&cj);
        k[(i, j)] = delta_inv * (-(v_face - vi) / eps).exp();
        k[(j, i)] = delta_inv * (-(v_face - vj) / eps).exp();
    }
    for i in 0..n {
        k[(i, i)] = -k.row(i).sum();
    }
    let mut pi = DVector::from_iterator(
        n,
        (0..n).map(|i| cell_vol * (-problem.potential.evaluate(&partition.center(i)) / eps).exp()),
    );
    let z = pi.sum();
    pi /= z;
    Ok((k, pi))
}

/// Lump a set of states of a reversible generator into a single state
/// (appended last), using π-weighted average outgoing rates. Detailed
/// balance is preserved exactly.
pub fn lump_states(
    k: &DMatrix<f64>,
    pi: &DVector<f64>,
    merge: &[bool],
) -> (DMatrix<f64>, DVector<f64>, Vec<usize>) {
    let keep: Vec<usize> = (0..k.nrows()).filter(|&i| !merge[i]).collect();
    let merged: Vec<usize> = (0..k.nrows()).filter(|&i| merge[i]).collect();
    let n = keep.len() + 1;
    let mut out = DMatrix::zeros(n, n);
    let pi_merged: f64 = merged.iter().map(|&i| pi[i]).sum();
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            if a != b {
                out[(a, b)] = k[(i, j)];
            }
        }
        out[(a, n - 1)] = merged.iter().map(|&j| k[(i, j)]).sum();
        out[(n - 1, a)] = merged.iter().map(|&j| pi[j] * k[(j, i)]).sum::<f64>() / pi_merged;
    }
    for a in 0..n {
        let mut row_sum = 0.0;
        for b in 0..n {
            if b != a {
                row_sum += out[(a, b)];
            }
        }
        out[(a, a)] = -row_sum;
    }
    let mut pi_out = DVector::zeros(n);
    for (a, &i) in keep.iter().enumerate() {
        pi_out[a] = pi[i];
    }
    pi_out[n - 1] = pi_merged;
    (out, pi_out, keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    Indicator,
    Committor,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Indicator => "indicator",
            BasisKind::Committor => "committor",
        }
    }
}

/// Partition-of-unity basis sampled on a quadrature grid. State `n+1`
/// (the last row) is the target state: χ_{n+1} = 1 on A and χ_i = 0 on A
/// for i ≤ n.
pub struct Basis {
    pub kind: BasisKind,
    pub grid: QuadratureGrid,
    /// chi[state][node]; the last state is the target.
    pub chi: Vec<Vec<f64>>,
    /// Indicator bases keep their partition for finite-volume assembly.
    indicator: Option<IndicatorLayout>,
}

struct IndicatorLayout {
    partition: CellPartition,
    target_cells: Vec<bool>,
}

impl Basis {
    /// Indicator basis of a uniform box partition. Cells whose center lies
    /// in the target set are merged into the single target state; the
    /// partition must be aligned with the target region and with the grid.
    pub fn indicator(problem: &ControlProblem, grid: &QuadratureGrid, counts: &[usize]) -> Result<Self> {
        let partition = CellPartition::new(problem, counts)?;
        let n_cells = partition.n_cells();
        let target_cells: Vec<bool> = (0..n_cells)
            .map(|c| problem.target.contains(&partition.center(c)))
            .collect();
        if !target_cells.iter().any(|&t| t) {
            return Err(Error::InvalidBasis("no cell lies inside the target set".into()));
        }
        let target_mask = grid.mask(&problem.target);
        let mut cell_of_node = vec![0usize; grid.n_nodes()];
        let mut coords = vec![0.0; grid.dim()];
        for i in 0..grid.n_nodes() {
            grid.node_into(i, &mut coords);
            let c = partition.cell_of(&coords);
            cell_of_node[i] = c;
            if target_mask[i] != target_cells[c] {
                return Err(Error::InvalidBasis(
                    "partition is not aligned with the target set on the grid".into(),
                ));
            }
        }
        let keep: Vec<usize> = (0..n_cells).filter(|&c| !target_cells[c]).collect();
        let mut state_of_cell = vec![usize::MAX; n_cells];
        for (s, &c) in keep.iter().enumerate() {
            state_of_cell[c] = s;
        }
        let n_states = keep.len() + 1;
        let mut chi = vec![vec![0.0; grid.n_nodes()]; n_states];
        for i in 0..grid.n_nodes() {
            let c = cell_of_node[i];
            let state = if target_cells[c] { n_states - 1 } else { state_of_cell[c] };
            chi[state][i] = 1.0;
        }
        for (s, row) in chi.iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidBasis(format!(
                    "basis state {s} contains no grid node; refine the grid"
                )));
            }
        }
        Ok(Self {
            kind: BasisKind::Indicator,
            grid: grid.clone(),
            chi,
            indicator: Some(IndicatorLayout { partition, target_cells }),
        })
    }

    /// Committor basis; the committor set's last core must be the target.
    pub fn committor(set: CommittorSet) -> Self {
        Self {
            kind: BasisKind::Committor,
            grid: set.grid,
            chi: set.chi,
            indicator: None,
        }
    }

    pub fn n_states(&self) -> usize {
        self.chi.len()
    }

    /// Node values of `Σ_i coeffs_i χ_i`.
    pub fn interpolate(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        let n = self.grid.n_nodes();
        let mut out = vec![0.0; n];
        for (c, row) in coeffs.iter().zip(&self.chi) {
            for i in 0..n {
                out[i] += c * row[i];
            }
        }
        out
    }

    /// Check (S1) partition of unity and (S2) boundary adaptation against
    /// the problem's target set.
    pub fn validate(&self, problem: &ControlProblem) -> Result<()> {
        let n = self.grid.n_nodes();
        for i in 0..n {
            let s: f64 = self.chi.iter().map(|c| c[i]).sum();
            if (s - 1.0).abs() > BASIS_TOLERANCE {
                return Err(Error::InvalidBasis(format!(
                    "partition of unity violated at node {i}: Σχ = {s}"
                )));
            }
        }
        let mask = self.grid.mask(&problem.target);
        let last = self.n_states() - 1;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            if (self.chi[last][i] - 1.0).abs() > BASIS_TOLERANCE {
                return Err(Error::InvalidBasis(
                    "target basis function is not 1 on the target set".into(),
                ));
            }
            for (s, row) in self.chi.iter().enumerate().take(last) {
                if row[i].abs() > BASIS_TOLERANCE {
                    return Err(Error::InvalidBasis(format!(
                        "basis function {s} does not vanish on the target set"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The matrices of the discretized problem; see the module docs.
#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub epsilon: f64,
    pub basis_kind: BasisKind,
    pub k: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub g: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub m_hat: DMatrix<f64>,
}

impl GeneratorModel {
    /// Assemble a model from rate and cost matrices, deriving Λ and G.
    pub fn from_matrices(
        k: DMatrix<f64>,
        f: DMatrix<f64>,
        pi: DVector<f64>,
        m_hat: DMatrix<f64>,
        epsilon: f64,
        basis_kind: BasisKind,
    ) -> Result<Self> {
        let n = k.nrows();
        if k.ncols() != n || f.nrows() != n || f.ncols() != n || pi.len() != n
            || m_hat.nrows() != n || m_hat.ncols() != n
        {
            return Err(Error::InvalidArgument("inconsistent matrix dimensions".into()));
        }
        let lambda = DVector::from_iterator(n, (0..n).map(|i| f.row(i).sum()));
        let mut g = k.clone();
        for i in 0..n {
            for j in 0..n {
                let l = if i == j { lambda[i] } else { 0.0 };
                g[(i, j)] -= (f[(i, j)] - l) / epsilon;
            }
        }
        Ok(Self { epsilon, basis_kind, k, f, lambda, g, pi, m_hat })
    }

    /// Number of non-target states n; the model has n+1 including the
    /// target.
    pub fn n(&self) -> usize {
        self.k.nrows() - 1
    }

    pub fn n_states(&self) -> usize {
        self.k.nrows()
    }

    /// Discrete running cost f̂(i) = Λ_ii.
    pub fn f_hat(&self) -> DVector<f64> {
        self.lambda.clone()
    }

    /// Worst violations of the structural identities; all should be at
    /// rounding level for a correctly assembled model.
    pub fn invariant_defects(&self) -> StructuralDefects {
        let n = self.n_states();
        let mut d = StructuralDefects::default();
        for i in 0..n {
            d.k_row_sum = d.k_row_sum.max(self.k.row(i).sum().abs());
            d.g_row_sum = d.g_row_sum.max(self.g.row(i).sum().abs());
            for j in 0..n {
                if i != j {
                    d.k_detailed_balance = d
                        .k_detailed_balance
                        .max((self.pi[i] * self.k[(i, j)] - self.pi[j] * self.k[(j, i)]).abs());
                    d.g_detailed_balance = d
                        .g_detailed_balance
                        .max((self.pi[i] * self.g[(i, j)] - self.pi[j] * self.g[(j, i)]).abs());
                    d.f_symmetry = d
                        .f_symmetry
                        .max((self.pi[i] * self.f[(i, j)] - self.pi[j] * self.f[(j, i)]).abs());
                }
                d.f_nonnegative = d.f_nonnegative.max(-self.f[(i, j)]);
            }
        }
        for j in 0..n {
            let col: f64 = (0..n).map(|i| self.pi[i] * self.g[(i, j)]).sum();
            d.pi_g = d.pi_g.max(col.abs());
        }
        d.pi_sum = (self.pi.sum() - 1.0).abs();
        d
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.n(),
            "epsilon": self.epsilon,
            "basis": self.basis_kind.as_str(),
            "k": matrix_rows(&self.k),
            "f": matrix_rows(&self.f),
            "lambda": self.lambda.iter().cloned().collect::<Vec<f64>>(),
            "g": matrix_rows(&self.g),
            "pi": self.pi.iter().cloned().collect::<Vec<f64>>(),
            "m_hat": matrix_rows(&self.m_hat),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::InvalidArgument("model JSON must be an object".into()))?;
        let epsilon = obj
            .get("epsilon")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::InvalidArgument("missing epsilon".into()))?;
        let basis_kind = match obj.get("basis").and_then(|v| v.as_str()) {
            Some("indicator") => BasisKind::Indicator,
            Some("committor") => BasisKind::Committor,
            other => {
                return Err(Error::InvalidArgument(format!("unknown basis kind {other:?}")))
            }
        };
        let k = rows_matrix(obj.get("k"))?;
        let f = rows_matrix(obj.get("f"))?;
        let pi = DVector::from_vec(
            serde_json::from_value::<Vec<f64>>(obj.get("pi").cloned().unwrap_or_default())
                .map_err(|e| Error::InvalidArgument(format!("bad pi: {e}")))?,
        );
        let m_hat = rows_matrix(obj.get("m_hat"))?;
        Self::from_matrices(k, f, pi, m_hat, epsilon, basis_kind)
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(value: Option<&serde_json::Value>) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(
        value.cloned().ok_or_else(|| Error::InvalidArgument("missing matrix".into()))?,
    )
    .map_err(|e| Error::InvalidArgument(format!("bad matrix: {e}")))?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidArgument("matrix is not square".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StructuralDefects {
    pub k_row_sum: f64,
    pub g_row_sum: f64,
    pub k_detailed_balance: f64,
    pub g_detailed_balance: f64,
    pub f_symmetry: f64,
    pub f_nonnegative: f64,
    pub pi_g: f64,
    pub pi_sum: f64,
}

impl StructuralDefects {
    pub fn max(&self) -> f64 {
        [
            self.k_row_sum,
            self.g_row_sum,
            self.k_detailed_balance,
            self.g_detailed_balance,
            self.f_symmetry,
            self.f_nonnegative,
            self.pi_g,
            self.pi_sum,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Assemble the Galerkin matrices for a basis.
pub fn assemble(problem: &ControlProblem, basis: &Basis) -> Result<GeneratorModel> {
    basis.validate(problem)?;
    let grid = &basis.grid;
    let n1 = basis.n_states();
    let eps = problem.epsilon;
    let f_nodes = grid.sample(|x| problem.running_cost.evaluate(x));
    if f_nodes.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidProblem("running cost is negative at a grid node".into()));
    }

    let mut m_hat = DMatrix::zeros(n1, n1);
    let mut f_num = DMatrix::zeros(n1, n1);
    for i in 0..n1 {
        for j in i..n1 {
            let m = grid.dot(&basis.chi[i], &basis.chi[j]);
            let fij = grid.dot(
                &basis.chi[i],
                &basis.chi[j]
                    .iter()
                    .zip(&f_nodes)
                    .map(|(&c, &fv)| c * fv)
                    .collect::<Vec<f64>>(),
            );
            m_hat[(i, j)] = m;
            m_hat[(j, i)] = m;
            f_num[(i, j)] = fij;
            f_num[(j, i)] = fij;
        }
    }

    let (k, pi) = match basis.kind {
        BasisKind::Committor => {
            let pi = DVector::from_iterator(n1, basis.chi.iter().map(|c| grid.mean(c)));
            let grads: Vec<Vec<Vec<f64>>> =
                basis.chi.iter().map(|c| grid.gradient(c)).collect();
            let mut num = DMatrix::zeros(n1, n1);
            for i in 0..n1 {
                for j in i..n1 {
                    let mut acc = 0.0;
                    for a in 0..grid.dim() {
                        acc += grid.dot(&grads[i][a], &grads[j][a]);
                    }
                    num[(i, j)] = -eps * acc;
                    num[(j, i)] = num[(i, j)];
                }
            }
            let mut k = DMatrix::zeros(n1, n1);
            for i in 0..n1 {
                for j in 0..n1 {
                    if i != j {
                        k[(i, j)] = num[(i, j)] / pi[i];
                    }
                }
            }
            for i in 0..n1 {
                k[(i, i)] = -k.row(i).sum();
            }
            (k, pi)
        }
        BasisKind::Indicator => {
            let layout = basis
                .indicator
                .as_ref()
                .expect("indicator basis carries its partition");
            let (k_cells, pi_cells) = fva_generator(problem, &layout.partition)?;
            let (k, pi, _keep) = lump_states(&k_cells, &pi_cells, &layout.target_cells);
            (k, pi)
        }
    };

    // F_ij = ⟨χ_i, f χ_j⟩ / π_i. The indicator path takes π from the FVA
    // midpoint rule, which differs from the quadrature mass at O(h²) and
    // would break the exact π-symmetry of F; normalizing by the quadrature
    // mass ⟨χ_i, 1⟩ keeps π_i F_ij = π_j F_ji at rounding level for both
    // bases.
    let quad_pi: Vec<f64> = basis.chi.iter().map(|c| grid.mean(c)).collect();
    let mut f = DMatrix::zeros(n1, n1);
    for i in 0..n1 {
        for j in 0..n1 {
            f[(i, j)] = f_num[(i, j)] / quad_pi[i];
        }
    }

    GeneratorModel::from_matrices(k, f, pi, m_hat, eps, basis.kind)
}

/// Result of the generator-condition diagnostic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeneratorCheck {
    pub is_generator: bool,
    /// Most negative off-diagonal entry of G (0 if all are nonnegative).
    pub min_off_diagonal: f64,
}

/// Check whether G has nonnegative off-diagonal entries, which is what
/// gives the discrete problem its Markov-decision interpretation.
pub fn check_generator_condition(model: &GeneratorModel) -> GeneratorCheck {
    let n = model.n_states();
    let mut min_off = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                min_off = min_off.min(model.g[(i, j)]);
            }
        }
    }
    GeneratorCheck { is_generator: min_off >= -1e-12, min_off_diagonal: min_off }
}

/// For a constant running cost f ≡ σ the off-diagonal entries of G are
/// `K_ij − (σ/ε)·M̂_ij/π_i`, so the condition fails first at
/// `σ* = ε · min_{i≠j, M̂_ij>0} K_ij π_i / M̂_ij`. Returns `None` when no
/// off-diagonal overlap exists (indicator bases), i.e. the condition holds
/// for every σ.
pub fn constant_cost_threshold(model: &GeneratorModel) -> Option<f64> {
    let n = model.n_states();
    let mut best: Option<f64> = None;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let overlap = model.m_hat[(i, j)];
            let scale = (model.m_hat[(i, i)] * model.m_hat[(j, j)]).sqrt();
            if overlap <= 1e-12 * scale {
                continue;
            }
            let sigma = model.epsilon * model.k[(i, j)] * model.pi[i] / overlap;
            best = Some(best.map_or(sigma, |b: f64| b.min(sigma)));
        }
    }
    best
}

/// Solve the discrete problem: `Σ_j (K − ε⁻¹F)_ij φ̂_j = 0` for i ≤ n with
/// `φ̂_{n+1} = 1`. Solvable even when G is not a generator; only the
/// Galerkin meaning holds then.
pub fn solve_discrete_system(model: &GeneratorModel) -> Result<DVector<f64>> {
    let n = model.n();
    let eps = model.epsilon;
    if n == 0 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = model.k[(i, j)] - model.f[(i, j)] / eps;
        }
        b[i] = -(model.k[(i, n)] - model.f[(i, n)] / eps);
    }
    let reduced = solve_dense(a, b)?;
    let mut phi = DVector::zeros(n + 1);
    phi.rows_mut(0, n).copy_from(&reduced);
    phi[n] = 1.0;
    Ok(phi)
}
