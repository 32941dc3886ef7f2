//! The dual Markov decision problem on the discretized jump process.
//!
//! A strategy is a componentwise positive vector v acting on the rates by
//! `G^v_ij = G_ij v(j)/v(i)`. Steering the chain this way is paid for by
//! the entropic running cost
//!
//! ```text
//! k^v(i) = ε Σ_{j≠i} G_ij { (v_j/v_i)[log(v_j/v_i) − 1] + 1 },
//! ```
//!
//! and the dynamic programming equation
//! `min_v {(G^v Ŵ)(i) + k^v(i) + f̂(i)} = 0` (i ≤ n, Ŵ(n+1) = 0) is solved
//! in closed form by the logarithmic transformation: `v* = φ̂` with φ̂ the
//! solution of the discrete linear problem and `Ŵ = −ε log φ̂`.

use nalgebra::{DMatrix, DVector};

use crate::galerkin::{
    check_generator_condition, solve_discrete_system, GeneratorCheck, GeneratorModel,
};
use crate::linalg::solve_dense;
use crate::{Error, Result};

/// Full solution of the Markov decision problem.
#[derive(Debug, Clone)]
pub struct MdpSolution {
    /// φ̂ > 0 componentwise, φ̂(n+1) = 1.
    pub phi_hat: DVector<f64>,
    /// Value vector Ŵ = −ε log φ̂, zero at the target state.
    pub w_hat: DVector<f64>,
    /// Optimal strategy v* = φ̂.
    pub v_star: DVector<f64>,
    /// Controlled generator G^{v*}.
    pub g_v: DMatrix<f64>,
    /// Running cost of the optimal strategy, k^{v*}.
    pub k_v: DVector<f64>,
    /// Tilted stationary law π^{v*} ∝ v*² π.
    pub pi_v: DVector<f64>,
}

/// What [`solve_mdp`] produces: the Galerkin solution always, the MDP
/// interpretation only when the generator condition holds.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub check: GeneratorCheck,
    pub phi_hat: DVector<f64>,
    /// −ε log φ̂, present whenever φ̂ came out positive.
    pub w_hat: Option<DVector<f64>>,
    /// Present iff the generator condition holds.
    pub mdp: Option<MdpSolution>,
}

fn check_positive(v: &DVector<f64>) -> Result<()> {
    if v.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidArgument(
            "strategy vector must be strictly positive".into(),
        ));
    }
    Ok(())
}

/// `G^v_ij = G_ij v(j)/v(i)` off the diagonal, diagonal set to minus the
/// row sum.
pub fn controlled_generator(g: &DMatrix<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_positive(v)?;
    let n = g.nrows();
    if v.len() != n {
        return Err(Error::InvalidArgument("strategy length mismatch".into()));
    }
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j {
                let val = g[(i, j)] * v[j] / v[i];
                out[(i, j)] = val;
                row_sum += val;
            }
        }
        out[(i, i)] = -row_sum;
    }
    Ok(out)
}

/// Entropic running cost of a strategy. Also verifies the algebraic
/// identity `k^v = ε(G^v log v) − ε(Gv)/v` that the cost formula is
/// derived from; a mismatch indicates a bug.
pub fn running_cost(g: &DMatrix<f64>, v: &DVector<f64>, epsilon: f64) -> Result<DVector<f64>> {
    check_positive(v)?;
    let n = g.nrows();
    let mut k = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            if i != j {
                let r: f64 = v[j] / v[i];
                acc += g[(i, j)] * (r * (r.ln() - 1.0) + 1.0);
            }
        }
        k[i] = epsilon * acc;
    }
    // identity route: ε (G^v log v) − ε (G v)/v
    let g_v = controlled_generator(g, v)?;
    let log_v = DVector::from_iterator(n, v.iter().map(|&x: &f64| x.ln()));
    let lhs = &g_v * &log_v;
    let gv = g * v;
    let mut defect = 0.0_f64;
    for i in 0..n {
        let alt = epsilon * lhs[i] - epsilon * gv[i] / v[i];
        defect = defect.max((alt - k[i]).abs());
    }
    let scale = k.amax().max(1.0);
    if defect > 1e-10 * scale {
        return Err(Error::Internal(format!(
            "running-cost identity violated by {defect:e}"
        )));
    }
    Ok(k)
}

/// Dynamic-programming residual `r(i) = (G^v Ŵ)(i) + k^v(i) + f̂(i)` for
/// the non-target states. At v = v* the residual vanishes; for any other
/// positive strategy it is nonnegative.
pub fn bellman_residual(
    model: &GeneratorModel,
    w_hat: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_positive(v)?;
    let n = model.n();
    let g_v = controlled_generator(&model.g, v)?;
    let k_v = running_cost(&model.g, v, model.epsilon)?;
    let gw = &g_v * w_hat;
    Ok(DVector::from_iterator(
        n,
        (0..n).map(|i| gw[i] + k_v[i] + model.lambda[i]),
    ))
}

/// Tilted stationary law `π^v ∝ v² π`.
pub fn tilted_stationary(pi: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_positive(v)?;
    if pi.len() != v.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    let mut out =
        DVector::from_iterator(pi.len(), pi.iter().zip(v.iter()).map(|(&p, &x)| p * x * x));
    let z = out.sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidArgument("degenerate tilted normalization".into()));
    }
    out /= z;
    Ok(out)
}

/// Solve the discrete problem and, when G is a generator, the full dual
/// decision problem. A violated generator condition is non-fatal: the
/// Galerkin solution (and Ŵ, if φ̂ > 0) is still returned.
pub fn solve_mdp(model: &GeneratorModel) -> Result<SolveOutcome> {
    let check = check_generator_condition(model);
    let phi_hat = solve_discrete_system(model)?;
    let positive = phi_hat.iter().all(|&p| p > 0.0);
    let w_hat = positive.then(|| {
        DVector::from_iterator(phi_hat.len(), phi_hat.iter().map(|&p| -model.epsilon * p.ln()))
    });
    if !check.is_generator || !positive {
        return Ok(SolveOutcome { check, phi_hat, w_hat, mdp: None });
    }
    let v_star = phi_hat.clone();
    let g_v = controlled_generator(&model.g, &v_star)?;
    let k_v = running_cost(&model.g, &v_star, model.epsilon)?;
    let pi_v = tilted_stationary(&model.pi, &v_star)?;
    let w = w_hat.clone().expect("phi_hat > 0 was just checked");
    Ok(SolveOutcome {
        check,
        phi_hat: phi_hat.clone(),
        w_hat,
        mdp: Some(MdpSolution { phi_hat, w_hat: w, v_star, g_v, k_v, pi_v }),
    })
}

/// Mean first passage times: solves `(G t̂)(i) = −1` outside the target
/// states with `t̂ = 0` on them.
pub fn mfpt(generator: &DMatrix<f64>, target_states: &[usize]) -> Result<DVector<f64>> {
    let n = generator.nrows();
    if target_states.is_empty() {
        return Err(Error::InvalidArgument("target state set is empty".into()));
    }
    if target_states.iter().any(|&t| t >= n) {
        return Err(Error::InvalidArgument("target state out of range".into()));
    }
    let mut is_target = vec![false; n];
    for &t in target_states {
        is_target[t] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !is_target[i]).collect();
    let m = free.len();
    if m == 0 {
        return Ok(DVector::zeros(n));
    }
    let mut a = DMatrix::zeros(m, m);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = generator[(i, j)];
        }
    }
    let b = DVector::from_element(m, -1.0);
    let t_free = solve_dense(a, b).map_err(|_| {
        Error::SingularSystem(
            "MFPT system is singular; an absorbing state exists outside the target".into(),
        )
    })?;
    let mut t = DVector::zeros(n);
    for (r, &i) in free.iter().enumerate() {
        t[i] = t_free[r];
    }
    Ok(t)
}

/// Stationary distribution of a generator: solves πᵀG = 0, Σπ = 1.
pub fn stationary_distribution(generator: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = generator.nrows();
    let mut a = generator.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    solve_dense(a, b)
}

/// One row of the small-cost consistency table.
#[derive(Debug, Clone)]
pub struct SmallCostRow {
    pub sigma: f64,
    /// Ŵ_σ(i)/σ per state (target entry 0).
    pub w_over_sigma: DVector<f64>,
    /// Worst relative deviation from the MFPT over non-target states.
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct SmallCostTable {
    pub t_hat: DVector<f64>,
    pub rows: Vec<SmallCostRow>,
}

/// Consistency check connecting the cost functional with hitting times:
/// for constant running cost σ the value Ŵ_σ = −ε log E[e^{−στ/ε}]
/// expands to σ·E[τ] + O(σ²), so Ŵ_σ/σ approaches the MFPT as σ → 0.
/// The model's own cost matrix is ignored; F is rebuilt per σ.
pub fn small_cost_limit_check(model: &GeneratorModel, sigmas: &[f64]) -> Result<SmallCostTable> {
    let n1 = model.n_states();
    let n = model.n();
    let t_hat = mfpt(&model.k, &[n])?;
    // quadrature masses ⟨χ_i, 1⟩ = Σ_j M̂_ij recover the normalization
    // that the assembly used for F
    let mass: Vec<f64> = (0..n1).map(|i| model.m_hat.row(i).sum()).collect();
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        let mut f = DMatrix::zeros(n1, n1);
        for i in 0..n1 {
            for j in 0..n1 {
                f[(i, j)] = sigma * model.m_hat[(i, j)] / mass[i];
            }
        }
        let sub = GeneratorModel::from_matrices(
            model.k.clone(),
            f,
            model.pi.clone(),
            model.m_hat.clone(),
            model.epsilon,
            model.basis_kind,
        )?;
        let phi = solve_discrete_system(&sub)?;
        if phi.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::DiscretizationFault(
                "small-cost solution is not positive".into(),
            ));
        }
        let w_over_sigma =
            DVector::from_iterator(n1, phi.iter().map(|&p| -model.epsilon * p.ln() / sigma));
        let max_rel_err = (0..n)
            .map(|i| (w_over_sigma[i] - t_hat[i]).abs() / t_hat[i].abs().max(1e-300))
            .fold(0.0, f64::max);
        rows.push(SmallCostRow { sigma, w_over_sigma, max_rel_err });
    }
    Ok(SmallCostTable { t_hat, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::BasisKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_state_model(a: f64, b: f64, sigma: f64, eps: f64) -> GeneratorModel {
        let k = DMatrix::from_row_slice(2, 2, &[-a, a, b, -b]);
        let f = DMatrix::from_row_slice(2, 2, &[sigma, 0.0, 0.0, 0.0]);
        let pi = DVector::from_vec(vec![b / (a + b), a / (a + b)]);
        let m_hat = DMatrix::from_diagonal(&pi);
        GeneratorModel::from_matrices(k, f, pi, m_hat, eps, BasisKind::Indicator).unwrap()
    }

    #[test]
    fn controlled_generator_identity_strategy() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let gv = controlled_generator(&g, &v).unwrap();
        assert!((gv - g).amax() <= 1e-15);
    }

    #[test]
    fn controlled_generator_two_state_example() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let gv = controlled_generator(&g, &v).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 1.0, -1.0]);
        assert!((gv - expected).amax() <= 1e-14);
    }

    #[test]
    fn controlled_generator_rejects_nonpositive_strategy() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert!(controlled_generator(&g, &v).is_err());
    }

    #[test]
    fn running_cost_vanishes_for_constant_strategies() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        for c in [1.0, 3.7] {
            let v = DVector::from_element(2, c);
            let k = running_cost(&g, &v, 0.5).unwrap();
            assert!(k.amax() <= 1e-14);
        }
    }

    #[test]
    fn running_cost_two_state_example() {
        let eps = 0.5;
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let k = running_cost(&g, &v, eps).unwrap();
        let expected = eps * 1.0 * (2.0 * (2.0_f64.ln() - 1.0) + 1.0);
        assert_relative_eq!(k[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn tilted_stationary_two_state_example() {
        let pi = DVector::from_vec(vec![2.0 / 3.0, 1.0 / 3.0]);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let pv = tilted_stationary(&pi, &v).unwrap();
        assert_relative_eq!(pv[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(pv[1], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn tilted_law_is_stationary_and_reversible_for_controlled_chain() {
        let g = DMatrix::from_row_slice(3, 3, &[-1.2, 0.8, 0.4, 0.6, -0.9, 0.3, 0.5, 0.5, -1.0]);
        // make it reversible: symmetrize rates against its stationary law
        let pi0 = stationary_distribution(&g).unwrap();
        let mut rev = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    rev[(i, j)] = 0.5 * (g[(i, j)] + pi0[j] * g[(j, i)] / pi0[i]);
                }
            }
        }
        for i in 0..3 {
            rev[(i, i)] = -rev.row(i).sum();
        }
        let pi = stationary_distribution(&rev).unwrap();
        let v = DVector::from_vec(vec![0.7, 1.4, 2.2]);
        let g_v = controlled_generator(&rev, &v).unwrap();
        let pi_v = tilted_stationary(&pi, &v).unwrap();
        let res = g_v.transpose() * &pi_v;
        assert!(res.amax() <= 1e-10, "π^v G^v = {res:?}");
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (pi_v[i] * g_v[(i, j)] - pi_v[j] * g_v[(j, i)]).abs() <= 1e-12,
                    "detailed balance of the tilted law fails"
                );
            }
        }
    }

    #[test]
    fn solve_mdp_zero_cost() {
        let model = two_state_model(0.7, 0.3, 0.0, 0.5);
        let out = solve_mdp(&model).unwrap();
        let sol = out.mdp.expect("zero cost keeps the generator condition");
        assert!(sol.w_hat.amax() <= 1e-12);
        assert!((sol.v_star.clone() - DVector::from_element(2, 1.0)).amax() <= 1e-12);
        assert!((sol.g_v.clone() - model.g.clone()).amax() <= 1e-12);
        assert!(sol.k_v.amax() <= 1e-13);
    }

    #[test]
    fn solve_mdp_two_state_closed_form() {
        let (a, sigma, eps) = (1.0, 0.08, 0.5);
        let model = two_state_model(a, 0.5, sigma, eps);
        let out = solve_mdp(&model).unwrap();
        let sol = out.mdp.unwrap();
        let phi1 = a / (a + sigma / eps);
        assert_relative_eq!(sol.phi_hat[0], phi1, epsilon = 1e-12);
        assert_relative_eq!(sol.w_hat[0], -eps * phi1.ln(), epsilon = 1e-12);
        assert_relative_eq!(sol.w_hat[0], -0.5 * (1.0_f64 / 1.16).ln(), epsilon = 1e-12);
    }

    #[test]
    fn bellman_residual_vanishes_at_optimum_and_is_nonnegative_elsewhere() {
        use rand::Rng;
        use rand::SeedableRng;
        let model = two_state_model(1.0, 0.5, 0.08, 0.5);
        let out = solve_mdp(&model).unwrap();
        let sol = out.mdp.unwrap();
        let r = bellman_residual(&model, &sol.w_hat, &sol.v_star).unwrap();
        assert!(r.amax() <= 1e-12, "residual at the optimum: {r:?}");

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v = DVector::from_iterator(
                2,
                sol.v_star
                    .iter()
                    .map(|&x| x * (1.0 + 0.1 * rng.random_range(-1.0..1.0))),
            );
            let r = bellman_residual(&model, &sol.w_hat, &v).unwrap();
            assert!(r.min() >= -1e-10, "residual dipped below zero: {r:?}");
        }
    }

    #[test]
    fn mfpt_trivial_and_exponential_cases() {
        let g = DMatrix::from_row_slice(2, 2, &[-0.8, 0.8, 0.2, -0.2]);
        let t = mfpt(&g, &[0, 1]).unwrap();
        assert!(t.amax() == 0.0);
        let t = mfpt(&g, &[1]).unwrap();
        assert_relative_eq!(t[0], 1.0 / 0.8, epsilon = 1e-12);
    }

    #[test]
    fn mfpt_detects_absorbing_state_outside_target() {
        // state 0 is absorbing, target is {2}: the system is singular
        let g =
            DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.5, -1.0, 0.5, 0.2, 0.3, -0.5]);
        assert!(mfpt(&g, &[2]).is_err());
    }

    #[test]
    fn small_cost_ratio_matches_taylor_expansion() {
        let (a, eps) = (0.9, 0.5);
        let model = two_state_model(a, 0.4, 0.0, eps);
        let table = small_cost_limit_check(&model, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert_relative_eq!(table.t_hat[0], 1.0 / a, epsilon = 1e-12);
        // Ŵ(1)/σ = (1/a)(1 + O(σ)): the error decreases monotonically
        let errs: Vec<f64> = table.rows.iter().map(|r| r.max_rel_err).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?}");
        assert!(errs[2] <= 1e-3);
    }

    proptest! {
        #[test]
        fn strategy_scaling_invariance(
            rates in proptest::collection::vec(0.05f64..2.0, 6),
            vs in proptest::collection::vec(0.1f64..5.0, 3),
            c in 0.01f64..100.0,
        ) {
            let g = DMatrix::from_row_slice(3, 3, &[
                -(rates[0] + rates[1]), rates[0], rates[1],
                rates[2], -(rates[2] + rates[3]), rates[3],
                rates[4], rates[5], -(rates[4] + rates[5]),
            ]);
            let v = DVector::from_vec(vs.clone());
            let cv = DVector::from_vec(vs.iter().map(|x| c * x).collect());
            let g1 = controlled_generator(&g, &v).unwrap();
            let g2 = controlled_generator(&g, &cv).unwrap();
            prop_assert!((g1 - g2).amax() <= 1e-9);
            let k1 = running_cost(&g, &v, 0.7).unwrap();
            let k2 = running_cost(&g, &cv, 0.7).unwrap();
            prop_assert!((k1 - k2).amax() <= 1e-9);
            let pi = stationary_distribution(&g).unwrap();
            let p1 = tilted_stationary(&pi, &v).unwrap();
            let p2 = tilted_stationary(&pi, &cv).unwrap();
            prop_assert!((p1 - p2).amax() <= 1e-9);
        }
    }
}
