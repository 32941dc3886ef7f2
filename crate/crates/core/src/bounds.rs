//! Computable a-priori error bounds for the Galerkin scheme.
//!
//! Two error measures are tracked in the μ-weighted L² norm: the Galerkin
//! error `ε = ‖φ − φ̂‖_μ` and the best-approximation error
//! `ε₀ = inf_{ψ∈D} ‖φ − ψ‖_μ` over the admissible affine space
//! `D = χ_{n+1} + span{χ_1..χ_n}`. Their ratio, the performance
//! `p = ε/ε₀`, is bounded by
//!
//! ```text
//! p² ≤ 1 + ‖QBQ⊥‖²/α₂²            (projection bound)
//! ‖QBQ⊥‖ ≤ (δ_L + δ_f)·√(n/m)     (projection-defect bound)
//! ```
//!
//! with Q the μ-orthogonal projection onto span{χ_1..χ_n}, B the operator
//! of the bilinear form `ℬ(u,v) = ε⁻¹⟨fu,v⟩_μ + ε⟨∇u,∇v⟩_μ` (that is,
//! `B = ε⁻¹f − L`), α₂ its ellipticity constant, and m the smallest
//! eigenvalue of the mass matrix. For committor bases of metastable core
//! sets, ε₀ itself is bounded by
//!
//! ```text
//! ε₀ ≤ ‖P⊥φ‖_μ + μ(T)^{1/2} [κ‖f‖_∞ + 2‖P⊥φ‖_∞]
//! ```
//!
//! where P averages over each core (identity on the transition region T)
//! and κ is the worst expected time of hitting the core region from T.
//! Everything here is computed on a reference grid, so all operator norms
//! are finite-dimensional surrogates whose resolution is recorded in the
//! report.

use nalgebra::{DMatrix, DVector, LU};

use crate::galerkin::{assemble, solve_discrete_system, Basis};
use crate::model::{ControlProblem, QuadratureGrid, Region};
use crate::reference::{mean_hitting_time_on, CommittorSet, GridOperator, ReferenceSolution};
use crate::{Error, Result};

/// μ-orthogonal projector onto the span of the non-target basis
/// functions.
pub struct Projector<'a> {
    basis: &'a Basis,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Projector<'a> {
    pub fn new(basis: &'a Basis) -> Result<Self> {
        let n = basis.n_states() - 1;
        let grid = &basis.grid;
        let mut m0 = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = grid.dot(&basis.chi[i], &basis.chi[j]);
                m0[(i, j)] = v;
                m0[(j, i)] = v;
            }
        }
        let lu = m0.lu();
        if lu.determinant().abs() <= 1e-300 {
            return Err(Error::SingularSystem("mass matrix is singular".into()));
        }
        Ok(Self { basis, lu })
    }

    /// Qu = Σ_{ij} (M̂₀⁻¹)_ij ⟨χ_j, u⟩_μ χ_i.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.basis.n_states() - 1;
        let grid = &self.basis.grid;
        if u.len() != grid.n_nodes() {
            return Err(Error::InvalidArgument("projection length mismatch".into()));
        }
        let rhs = DVector::from_iterator(n, (0..n).map(|j| grid.dot(&self.basis.chi[j], u)));
        let coeffs = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("mass matrix solve failed".into()))?;
        let mut out = vec![0.0; u.len()];
        for (c, chi) in coeffs.iter().zip(&self.basis.chi) {
            for (o, &x) in out.iter_mut().zip(chi) {
                *o += c * x;
            }
        }
        Ok(out)
    }

    /// Q⊥u = u − Qu.
    pub fn complement(&self, u: &[f64]) -> Result<Vec<f64>> {
        let qu = self.apply(u)?;
        Ok(u.iter().zip(&qu).map(|(a, b)| a - b).collect())
    }
}

/// μ-orthogonal projection onto span{χ_1..χ_n} of a node-value vector.
pub fn orthogonal_projection(basis: &Basis, u: &[f64]) -> Result<Vec<f64>> {
    Projector::new(basis)?.apply(u)
}

/// All quantities entering the performance bound.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// ‖φ − φ̂‖_μ.
    pub eps_galerkin: f64,
    /// ‖Q⊥(φ − χ_{n+1})‖_μ, the best-approximation error over D.
    pub eps_best: f64,
    /// ε/ε₀ (1 by convention when ε₀ vanishes).
    pub p: f64,
    /// √(1 + ‖QBQ⊥‖²/α₂²).
    pub p_bound: f64,
    /// √(1 + (n/m)(δ_L + δ_f)²/α₂²), the looser projection-defect bound.
    pub p_bound_loose: f64,
    pub qbq_norm: f64,
    pub delta_l: f64,
    pub delta_f: f64,
    pub n: usize,
    /// Smallest eigenvalue of the (non-target) mass matrix.
    pub m_min_eig: f64,
    /// Ellipticity constant: smallest Rayleigh quotient of ℬ on the grid.
    pub alpha2: f64,
    /// Resolution of the reference grid the surrogates live on.
    pub h_ref: f64,
    /// Whether p ≤ p_bound held numerically.
    pub holds: bool,
}

fn check_same_grid(a: &QuadratureGrid, b: &QuadratureGrid) -> Result<()> {
    let same = a.dim() == b.dim()
        && a.n_nodes() == b.n_nodes()
        && a.axes().iter().zip(b.axes()).all(|(x, y)| {
            (x.lo - y.lo).abs() <= 1e-12 && (x.h - y.h).abs() <= 1e-12 && x.n == y.n
        });
    if same {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "basis and reference must share the same quadrature grid".into(),
        ))
    }
}

/// Apply B = ε⁻¹f − L on the grid.
struct FormOperator<'a> {
    op: GridOperator,
    f_over_eps: Vec<f64>,
    grid: &'a QuadratureGrid,
}

impl<'a> FormOperator<'a> {
    fn new(problem: &ControlProblem, grid: &'a QuadratureGrid) -> Self {
        let f_over_eps: Vec<f64> = grid
            .sample(|x| problem.running_cost.evaluate(x))
            .into_iter()
            .map(|v| v / problem.epsilon)
            .collect();
        Self { op: GridOperator::new(problem, grid), f_over_eps, grid }
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut lu = vec![0.0; u.len()];
        self.op.apply(u, &mut lu);
        (0..u.len()).map(|i| self.f_over_eps[i] * u[i] - lu[i]).collect()
    }

    /// Solve B y = x; fails when B is singular (f ≡ 0).
    fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        let extra: Vec<f64> = self.f_over_eps.iter().map(|&v| -v).collect();
        let rhs: Vec<f64> = x.iter().map(|&v| -v).collect();
        let mask = vec![false; x.len()];
        let values = vec![0.0; x.len()];
        self.op.solve_dirichlet(self.grid, &mask, &values, Some(&extra), &rhs)
    }
}

fn deterministic_seed_vector(n: usize, salt: u64) -> Vec<f64> {
    // cheap splitmix-style fill; only needs to be generic position
    let mut state = salt.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    (0..n)
        .map(|_| {
            state ^= state >> 30;
            state = state.wrapping_mul(0xbf58_476d_1ce4_e5b9);
            state ^= state >> 27;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

/// Power iteration for ‖QBQ⊥‖ in the μ-norm via the self-adjoint operator
/// T = Q⊥BQBQ⊥.
fn qbq_operator_norm(
    form: &FormOperator,
    projector: &Projector,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let n = grid.n_nodes();
    let mut x = deterministic_seed_vector(n, 12345);
    let mut lambda = 0.0_f64;
    for iter in 0..400 {
        let y = projector.complement(&x)?;
        let by = form.apply(&y);
        let qby = projector.apply(&by)?;
        let bqby = form.apply(&qby);
        let tx = projector.complement(&bqby)?;
        let norm = grid.norm(&tx);
        if norm <= 1e-300 {
            return Ok(0.0);
        }
        let new_lambda = grid.dot(&x, &tx) / grid.dot(&x, &x);
        let converged = iter > 10 && (new_lambda - lambda).abs() <= 1e-12 * new_lambda.abs();
        lambda = new_lambda;
        for (xi, ti) in x.iter_mut().zip(&tx) {
            *xi = ti / norm;
        }
        if converged {
            break;
        }
    }
    Ok(lambda.max(0.0).sqrt())
}

/// Smallest Rayleigh quotient ℬ(u,u)/‖u‖²_μ by inverse power iteration.
fn smallest_rayleigh(form: &FormOperator, grid: &QuadratureGrid) -> Result<f64> {
    let n = grid.n_nodes();
    let mut x = deterministic_seed_vector(n, 999);
    let norm0 = grid.norm(&x);
    for xi in x.iter_mut() {
        *xi /= norm0;
    }
    let mut lambda = f64::INFINITY;
    for iter in 0..200 {
        let y = match form.solve(&x) {
            Ok(y) => y,
            Err(_) => return Ok(0.0), // singular form: f vanishes identically
        };
        let norm = grid.norm(&y);
        if !(norm > 0.0) || !norm.is_finite() {
            return Ok(0.0);
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        let bx = form.apply(&x);
        let new_lambda = grid.dot(&x, &bx) / grid.dot(&x, &x);
        let converged = iter > 5 && (new_lambda - lambda).abs() <= 1e-12 * new_lambda.abs();
        lambda = new_lambda;
        if converged {
            break;
        }
    }
    Ok(lambda.max(0.0))
}

/// Compute the Galerkin error, the best-approximation error and the
/// performance bound of the projection theorem, all on the reference
/// grid.
pub fn galerkin_error_report(
    problem: &ControlProblem,
    basis: &Basis,
    reference: &ReferenceSolution,
) -> Result<ErrorReport> {
    check_same_grid(&basis.grid, &reference.grid)?;
    let grid = &basis.grid;
    let n = basis.n_states() - 1;

    let model = assemble(problem, basis)?;
    let phi_hat = solve_discrete_system(&model)?;
    let interp = basis.interpolate(&phi_hat);
    let diff: Vec<f64> = reference.phi.iter().zip(&interp).map(|(a, b)| a - b).collect();
    let eps_galerkin = grid.norm(&diff);

    let projector = Projector::new(basis)?;
    let shifted: Vec<f64> = reference
        .phi
        .iter()
        .zip(&basis.chi[n])
        .map(|(a, b)| a - b)
        .collect();
    let eps_best = grid.norm(&projector.complement(&shifted)?);

    let scale = grid.norm(&reference.phi).max(1e-300);
    let p = if eps_best <= 1e-14 * scale { 1.0 } else { eps_galerkin / eps_best };

    let form = FormOperator::new(problem, grid);
    let qbq_norm = qbq_operator_norm(&form, &projector, grid)?;
    let alpha2 = smallest_rayleigh(&form, grid)?;

    let mut delta_l = 0.0_f64;
    let mut delta_f = 0.0_f64;
    for k in 0..n {
        let mut l_chi = vec![0.0; grid.n_nodes()];
        form.op.apply(&basis.chi[k], &mut l_chi);
        delta_l = delta_l.max(grid.norm(&projector.complement(&l_chi)?));
        let f_chi: Vec<f64> = basis.chi[k]
            .iter()
            .zip(&form.f_over_eps)
            .map(|(&c, &fe)| c * fe)
            .collect();
        delta_f = delta_f.max(grid.norm(&projector.complement(&f_chi)?));
    }

    let mut m0 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m0[(i, j)] = grid.dot(&basis.chi[i], &basis.chi[j]);
        }
    }
    let m_min_eig = m0.symmetric_eigenvalues().min();

    let (p_bound, p_bound_loose) = if alpha2 > 0.0 {
        (
            (1.0 + (qbq_norm / alpha2).powi(2)).sqrt(),
            (1.0 + n as f64 / m_min_eig * ((delta_l + delta_f) / alpha2).powi(2)).sqrt(),
        )
    } else {
        (f64::INFINITY, f64::INFINITY)
    };

    Ok(ErrorReport {
        eps_galerkin,
        eps_best,
        p,
        p_bound,
        p_bound_loose,
        qbq_norm,
        delta_l,
        delta_f,
        n,
        m_min_eig,
        alpha2,
        h_ref: grid.axes()[0].h,
        holds: p <= p_bound,
    })
}

/// Terms of the committor-basis best-approximation bound.
#[derive(Debug, Clone)]
pub struct CoreApproxBound {
    pub eps_best: f64,
    /// ‖P⊥φ‖_μ — how far φ is from being constant on the cores.
    pub p_perp_l2: f64,
    pub p_perp_inf: f64,
    /// Worst expected hitting time of the core region from T.
    pub kappa: f64,
    /// μ-mass of the transition region.
    pub mu_t: f64,
    pub f_inf: f64,
    /// ‖P⊥φ‖ + √μ(T)·(κ‖f‖_∞ + 2‖P⊥φ‖_∞).
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluate both sides of the best-approximation bound for a committor
/// basis. P averages φ over each core and acts as the identity on the
/// transition region.
pub fn core_best_approx_bound(
    problem: &ControlProblem,
    committors: &CommittorSet,
    reference: &ReferenceSolution,
) -> Result<CoreApproxBound> {
    check_same_grid(&committors.grid, &reference.grid)?;
    let grid = &committors.grid;
    let phi = &reference.phi;
    let n_nodes = grid.n_nodes();

    let core_masks: Vec<Vec<bool>> = committors.cores.iter().map(|c| grid.mask(c)).collect();
    let mut p_phi = phi.clone();
    let w = grid.weights();
    let vol = grid.cell_volume();
    for mask in &core_masks {
        let mut mass = 0.0;
        let mut avg = 0.0;
        for i in 0..n_nodes {
            if mask[i] {
                mass += w[i] * vol;
                avg += w[i] * vol * phi[i];
            }
        }
        let avg = avg / mass;
        for i in 0..n_nodes {
            if mask[i] {
                p_phi[i] = avg;
            }
        }
    }
    let p_perp: Vec<f64> = phi.iter().zip(&p_phi).map(|(a, b)| a - b).collect();
    let p_perp_l2 = grid.norm(&p_perp);
    let p_perp_inf = p_perp.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));

    let union = Region::new(
        committors
            .cores
            .iter()
            .flat_map(|c| c.boxes().to_vec())
            .collect(),
    )?;
    let hitting = mean_hitting_time_on(problem, grid, &union)?;
    let in_union = grid.mask(&union);
    let kappa = (0..n_nodes)
        .filter(|&i| !in_union[i])
        .map(|i| hitting[i])
        .fold(0.0, f64::max);
    let mu_t: f64 = (0..n_nodes)
        .filter(|&i| !in_union[i])
        .map(|i| w[i] * vol)
        .sum();
    let f_values = grid.sample(|x| problem.running_cost.evaluate(x));
    let f_inf = f_values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));

    let rhs = p_perp_l2 + mu_t.sqrt() * (kappa * f_inf + 2.0 * p_perp_inf);

    let basis = Basis::committor(committors.clone());
    let projector = Projector::new(&basis)?;
    let n = basis.n_states() - 1;
    let shifted: Vec<f64> = phi.iter().zip(&basis.chi[n]).map(|(a, b)| a - b).collect();
    let eps_best = grid.norm(&projector.complement(&shifted)?);

    Ok(CoreApproxBound {
        eps_best,
        p_perp_l2,
        p_perp_inf,
        kappa,
        mu_t,
        f_inf,
        rhs,
        holds: rhs >= eps_best - 1e-12,
    })
}

/// Value-function error with the Lipschitz factor of the logarithmic
/// transformation.
#[derive(Debug, Clone, Copy)]
pub struct ValueFunctionError {
    /// ‖W − Ŵ‖_μ.
    pub error_l2: f64,
    /// ε / min(φ, φ̂): the effective Lipschitz constant of −ε log on the
    /// range of the two solutions.
    pub lipschitz_factor: f64,
    /// ‖φ − φ̂‖_μ.
    pub phi_error_l2: f64,
    /// lipschitz_factor · ‖φ − φ̂‖_μ.
    pub bound_rhs: f64,
    pub holds: bool,
}

/// Compare value functions obtained from two positive φ fields on the
/// same grid.
pub fn value_function_error(
    grid: &QuadratureGrid,
    phi_ref: &[f64],
    phi_hat: &[f64],
    epsilon: f64,
) -> Result<ValueFunctionError> {
    if phi_ref.len() != grid.n_nodes() || phi_hat.len() != grid.n_nodes() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    let min_ref = phi_ref.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_hat = phi_hat.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_ref > 0.0) || !(min_hat > 0.0) {
        return Err(Error::InvalidArgument(
            "both φ fields must be bounded away from zero".into(),
        ));
    }
    let w_diff: Vec<f64> = phi_ref
        .iter()
        .zip(phi_hat)
        .map(|(&a, &b)| -epsilon * (a.ln() - b.ln()))
        .collect();
    let phi_diff: Vec<f64> = phi_ref.iter().zip(phi_hat).map(|(&a, &b)| a - b).collect();
    let error_l2 = grid.norm(&w_diff);
    let phi_error_l2 = grid.norm(&phi_diff);
    let lipschitz_factor = epsilon / min_ref.min(min_hat);
    let bound_rhs = lipschitz_factor * phi_error_l2;
    Ok(ValueFunctionError {
        error_l2,
        lipschitz_factor,
        phi_error_l2,
        bound_rhs,
        holds: error_l2 <= bound_rhs + 1e-14,
    })
}
