//! Command implementations. Every command validates its inputs before
//! writing anything, writes only into the configured output directory,
//! and embeds the config hash (and seed, where one is used) in each file
//! so reruns are reproducible byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use kramers::bounds::{core_best_approx_bound, galerkin_error_report};
use kramers::galerkin::{assemble, constant_cost_threshold, solve_discrete_system, Basis};
use kramers::linalg::fit_order;
use kramers::mca::{mca_bellman_solve, mca_cost_gap, mca_equivalence_gap, mca_generator, strategy_map};
use kramers::mdp::solve_mdp;
use kramers::model::{ControlProblem, QuadratureGrid, RunningCost};
use kramers::reference::{compute_committors_on, solve_linear_bvp_on, CommittorSet};
use kramers::sampler::{
    estimate_core_msm, estimate_cost_matrix, feynman_kac_sde, milestone_trace, simulate_sde_strided,
};
use kramers::{Error, Result};

use crate::config::{BasisConfig, ExperimentConfig};

/// Outcome a command reports to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// Galerkin solution written, but G violated the generator condition.
    GalerkinOnly,
}

pub struct Context {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed_override
            .or(self.config.sampling.as_ref().map(|s| s.seed))
            .unwrap_or(0)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_json(&self, name: &str, value: serde_json::Value) -> Result<()> {
        if !self.config.output.wants("json") {
            return Ok(());
        }
        let mut root = serde_json::Map::new();
        root.insert("config_sha256".into(), json!(self.config_hash));
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                root.insert(k, v);
            }
        }
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(root))
            .map_err(|e| Error::Internal(format!("JSON serialization failed: {e}")))?;
        write_file(&self.path(name), text.as_bytes())
    }

    fn write_csv(&self, name: &str, header: &str, rows: &[Vec<f64>]) -> Result<()> {
        if !self.config.output.wants("csv") {
            return Ok(());
        }
        let mut text = format!("# config_sha256={}\n{header}\n", self.config_hash);
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        write_file(&self.path(name), text.as_bytes())
    }
}

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::InvalidArgument(format!("cannot write {}: {e}", path.display())))
}

fn build_basis(ctx: &Context, problem: &ControlProblem, grid: &QuadratureGrid) -> Result<Basis> {
    match ctx.config.method.basis {
        BasisConfig::Indicator => {
            let counts = ctx
                .config
                .method
                .cells_per_axis
                .clone()
                .ok_or_else(|| Error::InvalidArgument("missing cells_per_axis".into()))?;
            Basis::indicator(problem, grid, &counts)
        }
        BasisConfig::Committor => {
            let cores = ctx.config.core_regions()?;
            let set = compute_committors_on(problem, grid, &cores)?;
            Ok(Basis::committor(set))
        }
    }
}

fn committors_for(ctx: &Context, problem: &ControlProblem, grid: &QuadratureGrid) -> Result<CommittorSet> {
    let cores = ctx.config.core_regions()?;
    compute_committors_on(problem, grid, &cores)
}

fn vec_json(v: &DVector<f64>) -> serde_json::Value {
    json!(v.iter().cloned().collect::<Vec<f64>>())
}

fn mat_json(m: &DMatrix<f64>) -> serde_json::Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<f64>>())
        .collect::<Vec<Vec<f64>>>())
}

/// Solve the reference problem and export φ, W, u*.
pub fn cmd_reference(ctx: &Context) -> Result<Outcome> {
    let problem = ctx.config.problem()?;
    let grid = QuadratureGrid::new(&problem, &vec![ctx.config.method.h_ref; problem.dim()])?;
    let solution = solve_linear_bvp_on(&problem, &grid)?;
    if ctx.config.output.wants("csv") {
        let mut buf = format!("# config_sha256={}\n", ctx.config_hash).into_bytes();
        solution
            .write_csv(&mut buf)
            .map_err(|e| Error::Internal(format!("CSV write failed: {e}")))?;
        write_file(&ctx.path("reference.csv"), &buf)?;
    }
    ctx.write_json(
        "reference_meta.json",
        json!({
            "h_ref": grid.axes()[0].h,
            "epsilon": problem.epsilon,
            "n_nodes": grid.n_nodes(),
            "phi_min": solution.phi.iter().cloned().fold(f64::INFINITY, f64::min),
            "phi_max": solution.phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }),
    )?;
    Ok(Outcome::Ok)
}

/// Assemble the model, solve the dual problem, export matrices, solution
/// and plot-ready effective-potential data; optionally sweep σ.
pub fn cmd_solve(ctx: &Context) -> Result<Outcome> {
    let problem = ctx.config.problem()?;
    let grid = QuadratureGrid::new(&problem, &vec![ctx.config.method.h; problem.dim()])?;
    let basis = build_basis(ctx, &problem, &grid)?;
    let model = assemble(&problem, &basis)?;
    ctx.write_json("model.json", model.to_json())?;

    let outcome = solve_mdp(&model)?;
    let n1 = model.n_states();
    let mut solution = serde_json::Map::new();
    solution.insert("generator_ok".into(), json!(outcome.check.is_generator));
    solution.insert(
        "min_off_diagonal".into(),
        json!(outcome.check.min_off_diagonal),
    );
    solution.insert("phi_hat".into(), vec_json(&outcome.phi_hat));
    solution.insert("pi".into(), vec_json(&model.pi));
    if let Some(w) = &outcome.w_hat {
        solution.insert("w_hat".into(), vec_json(w));
    }
    if let Some(mdp) = &outcome.mdp {
        solution.insert("v_star".into(), vec_json(&mdp.v_star));
        solution.insert("k_v".into(), vec_json(&mdp.k_v));
        solution.insert("pi_v".into(), vec_json(&mdp.pi_v));
        solution.insert("g_v".into(), mat_json(&mdp.g_v));
    }
    if let Some(sigma_star) = constant_cost_threshold(&model) {
        solution.insert("constant_cost_threshold".into(), json!(sigma_star));
    }
    ctx.write_json("solution.json", serde_json::Value::Object(solution))?;

    let nan = f64::NAN;
    let rows: Vec<Vec<f64>> = (0..n1)
        .map(|i| {
            vec![
                i as f64,
                model.pi[i],
                outcome.phi_hat[i],
                outcome.w_hat.as_ref().map_or(nan, |w| w[i]),
                outcome.mdp.as_ref().map_or(nan, |m| m.v_star[i]),
                outcome.mdp.as_ref().map_or(nan, |m| m.k_v[i]),
            ]
        })
        .collect();
    ctx.write_csv("solution.csv", "state,pi,phi_hat,w_hat,v_star,k_v", &rows)?;

    // effective potential Û = V + 2Ŵ and control û* = −2∇Ŵ of the
    // interpolant, on the method grid (1-D output)
    if problem.dim() == 1 {
        if let Some(_w) = &outcome.w_hat {
            let interp = basis.interpolate(&outcome.phi_hat);
            let w_nodes: Vec<f64> = interp
                .iter()
                .map(|&p| -problem.epsilon * p.max(1e-300).ln())
                .collect();
            let grad = grid.gradient(&w_nodes);
            let rows: Vec<Vec<f64>> = (0..grid.n_nodes())
                .map(|i| {
                    let x = grid.node_1d(i);
                    let v = problem.potential.evaluate(&[x]);
                    vec![x, v, v + 2.0 * w_nodes[i], -2.0 * grad[0][i]]
                })
                .collect();
            ctx.write_csv("effective_potential.csv", "x,V,U_hat,u_hat", &rows)?;
        }
    }

    // optional Ŵ-vs-σ sweep (constant running cost)
    if let Some(sigmas) = &ctx.config.method.sigma_sweep {
        let mut rows = Vec::new();
        for &sigma in sigmas {
            let swept = ControlProblem::new(
                problem.potential.clone(),
                problem.domain.clone(),
                problem.epsilon,
                problem.target.clone(),
                RunningCost::Constant(sigma),
            )?;
            let model = assemble(&swept, &basis)?;
            let out = solve_mdp(&model)?;
            let mut row = vec![sigma, out.check.is_generator as u8 as f64];
            for i in 0..n1 {
                row.push(out.w_hat.as_ref().map_or(f64::NAN, |w| w[i]));
            }
            rows.push(row);
        }
        let mut header = String::from("sigma,generator_ok");
        for i in 0..n1 {
            header.push_str(&format!(",w_hat_{i}"));
        }
        ctx.write_csv("sweep.csv", &header, &rows)?;
    }

    Ok(if outcome.check.is_generator { Outcome::Ok } else { Outcome::GalerkinOnly })
}

/// Simulate, milestone, and estimate the core-MSM matrices.
pub fn cmd_sample(ctx: &Context) -> Result<Outcome> {
    let sampling = ctx
        .config
        .sampling
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("command `sample` needs a [sampling] section".into()))?;
    let problem = ctx.config.problem()?;
    let cores = ctx.config.core_regions()?;
    let seed = ctx.seed();

    let n_steps = (sampling.t_max / sampling.dt).round() as usize;
    let x0 = vec![0.5 * (problem.domain.bounds()[0][0] + problem.domain.bounds()[0][1]); problem.dim()];
    let path = simulate_sde_strided(
        &problem,
        sampling.dt,
        n_steps,
        sampling.output_stride,
        &x0,
        seed,
        None,
    )?;
    if sampling.dump_trajectory {
        let mut buf = Vec::new();
        path.write_binary(&mut buf)
            .map_err(|e| Error::Internal(format!("trajectory dump failed: {e}")))?;
        write_file(&ctx.path("trajectory.bin"), &buf)?;
        if ctx.config.output.wants("csv") {
            let mut csv = format!("# config_sha256={} seed={seed}\n", ctx.config_hash).into_bytes();
            path.write_csv(&mut csv)
                .map_err(|e| Error::Internal(format!("trajectory dump failed: {e}")))?;
            write_file(&ctx.path("trajectory.csv"), &csv)?;
        }
    }
    let trace = milestone_trace(&path, &cores)?;
    let est = estimate_core_msm(&trace, &sampling.tau_list, sampling.n_batches)?;
    let f_values: Vec<f64> = {
        let mut vals = Vec::with_capacity(trace.n_frames());
        for t in 0..trace.n_frames() {
            vals.push(problem.running_cost.evaluate(path.frame(t)));
        }
        vals
    };
    let cost = estimate_cost_matrix(&trace, &f_values, sampling.n_batches)?;

    let mut body = serde_json::Map::new();
    body.insert("seed".into(), json!(seed));
    body.insert("dt".into(), json!(sampling.dt));
    body.insert("t_max".into(), json!(sampling.t_max));
    body.insert("taus".into(), json!(est.taus));
    body.insert("n_batches".into(), json!(est.n_batches));
    body.insert("m".into(), mat_json(&est.m));
    body.insert("m_se".into(), mat_json(&est.m_se));
    body.insert("pi".into(), vec_json(&est.pi));
    body.insert("pi_se".into(), vec_json(&est.pi_se));
    body.insert(
        "k_est".into(),
        json!(est.k_est.iter().map(|m| mat_json(m)).collect::<Vec<_>>()),
    );
    body.insert(
        "k_est_se".into(),
        json!(est.k_est_se.iter().map(|m| mat_json(m)).collect::<Vec<_>>()),
    );
    body.insert("k_extrapolated".into(), mat_json(&est.k_extrapolated));
    body.insert("k_extrapolated_se".into(), mat_json(&est.k_extrapolated_se));
    body.insert("f_est".into(), mat_json(&cost.f));
    body.insert("f_est_se".into(), mat_json(&cost.f_se));
    if let Some(x_start) = &sampling.fk_start {
        let fk = feynman_kac_sde(&problem, x_start, sampling.dt, n_steps, sampling.n_paths, seed)?;
        body.insert(
            "feynman_kac".into(),
            json!({
                "x0": x_start,
                "estimate": fk.estimate,
                "std_error": fk.std_error,
                "n_paths": fk.n_paths,
                "censored": fk.censored,
            }),
        );
    }
    ctx.write_json("msm_estimates.json", serde_json::Value::Object(body))?;

    let ns = trace.n_cores;
    let mut rows = Vec::new();
    for i in 0..ns {
        for j in 0..ns {
            rows.push(vec![
                i as f64,
                j as f64,
                est.k_extrapolated[(i, j)],
                est.k_extrapolated_se[(i, j)],
                cost.f[(i, j)],
                cost.f_se[(i, j)],
            ]);
        }
    }
    ctx.write_csv("msm_k_f.csv", "i,j,k_extrapolated,k_se,f_est,f_se", &rows)?;
    Ok(Outcome::Ok)
}

/// Compute the a-priori error report on the reference grid.
pub fn cmd_bounds(ctx: &Context) -> Result<Outcome> {
    let problem = ctx.config.problem()?;
    let grid = QuadratureGrid::new(&problem, &vec![ctx.config.method.h_ref; problem.dim()])?;
    let set = committors_for(ctx, &problem, &grid)?;
    let reference = solve_linear_bvp_on(&problem, &grid)?;
    let basis = Basis::committor(set.clone());
    let report = galerkin_error_report(&problem, &basis, &reference)?;
    let core = core_best_approx_bound(&problem, &set, &reference)?;
    ctx.write_json(
        "error_report.json",
        json!({
            "eps_galerkin": report.eps_galerkin,
            "eps_best": report.eps_best,
            "p": report.p,
            "p_bound": report.p_bound,
            "p_bound_loose": report.p_bound_loose,
            "qbq_norm": report.qbq_norm,
            "delta_l": report.delta_l,
            "delta_f": report.delta_f,
            "n": report.n,
            "m_min_eig": report.m_min_eig,
            "alpha2": report.alpha2,
            "h_ref": report.h_ref,
            "p_bound_holds": report.holds,
            "core_bound": {
                "eps_best": core.eps_best,
                "p_perp_l2": core.p_perp_l2,
                "p_perp_inf": core.p_perp_inf,
                "kappa": core.kappa,
                "mu_t": core.mu_t,
                "f_inf": core.f_inf,
                "rhs": core.rhs,
                "holds": core.holds,
            },
        }),
    )?;
    // bound-vs-actual table: one row per σ of the sweep (or the single
    // configured cost when no sweep is requested)
    let mut rows = vec![vec![
        match &ctx.config.problem.cost {
            crate::config::CostConfig::Constant { sigma } => *sigma,
            crate::config::CostConfig::Quadratic { .. } => f64::NAN,
        },
        report.eps_galerkin,
        report.eps_best,
        report.p,
        report.p_bound,
        report.p_bound_loose,
        core.rhs,
        core.kappa,
        core.mu_t,
    ]];
    if let Some(sigmas) = &ctx.config.method.sigma_sweep {
        for &sigma in sigmas {
            let swept = ControlProblem::new(
                problem.potential.clone(),
                problem.domain.clone(),
                problem.epsilon,
                problem.target.clone(),
                RunningCost::Constant(sigma),
            )?;
            let reference = solve_linear_bvp_on(&swept, &grid)?;
            let report = galerkin_error_report(&swept, &basis, &reference)?;
            let core = core_best_approx_bound(&swept, &set, &reference)?;
            rows.push(vec![
                sigma,
                report.eps_galerkin,
                report.eps_best,
                report.p,
                report.p_bound,
                report.p_bound_loose,
                core.rhs,
                core.kappa,
                core.mu_t,
            ]);
        }
    }
    ctx.write_csv(
        "bounds.csv",
        "sigma,eps_galerkin,eps_best,p,p_bound,p_bound_loose,core_rhs,kappa,mu_t",
        &rows,
    )?;
    Ok(Outcome::Ok)
}

/// Lattice sweep: MCA equivalence, cost identity and Bellman solution
/// against the box-basis and reference values.
pub fn cmd_mca(ctx: &Context) -> Result<Outcome> {
    let problem = ctx.config.problem()?;
    if problem.dim() != 1 {
        return Err(Error::InvalidArgument("the MCA sweep is one-dimensional".into()));
    }
    let eps = problem.epsilon;
    let hs = ctx
        .config
        .mca
        .as_ref()
        .map(|m| m.h_values.clone())
        .unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    let ref_grid = QuadratureGrid::new(&problem, &[ctx.config.method.h_ref])?;
    let reference = solve_linear_bvp_on(&problem, &ref_grid)?;

    let mut rows = Vec::new();
    let mut equiv_gaps = Vec::new();
    let mut cost_gaps = Vec::new();
    let mut w_fva_errs = Vec::new();
    let mut w_ref_errs = Vec::new();
    for &h in &hs {
        let lattice = QuadratureGrid::new(&problem, &[h])?;
        let n = lattice.n_nodes();
        let partition = kramers::galerkin::CellPartition::new(&problem, &[n])?;
        let (k, _pi) = kramers::galerkin::fva_generator(&problem, &partition)?;
        let v: Vec<f64> = (0..n)
            .map(|i| (-lattice.node_1d(i).powi(2) / (4.0 * eps)).exp())
            .collect();
        let g_v = kramers::mdp::controlled_generator(&k, &DVector::from_vec(v.clone()))?;
        let alpha = strategy_map(&v, h, eps)?;
        let (g_mca, _positive) = mca_generator(&problem, &lattice, &alpha, eps)?;
        let equiv = mca_equivalence_gap(&g_v, &g_mca, h, eps);
        let cost = mca_cost_gap(&k, &v, eps, h)?;

        let sol = mca_bellman_solve(&problem, h)?;
        // box-basis value on the same lattice
        let basis = Basis::indicator(&problem, &lattice, &[n])?;
        let model = assemble(&problem, &basis)?;
        let phi = solve_discrete_system(&model)?;
        let target = lattice.mask(&problem.target);
        let mut w_fva_err = 0.0_f64;
        let mut state = 0usize;
        for i in 0..n {
            if target[i] {
                continue;
            }
            let w_fva = -eps * phi[state].ln();
            w_fva_err = w_fva_err.max((sol.w[i] - w_fva).abs());
            state += 1;
        }
        // reference value interpolated onto the lattice
        let axis = &ref_grid.axes()[0];
        let mut w_ref_err = 0.0_f64;
        for i in 0..n {
            if target[i] {
                continue;
            }
            let x = lattice.node_1d(i);
            let t = ((x - axis.lo) / axis.h - 0.5).clamp(0.0, (axis.n - 1) as f64);
            let k0 = (t as usize).min(axis.n - 2);
            let frac = t - k0 as f64;
            let w_ref = reference.w[k0] * (1.0 - frac) + reference.w[k0 + 1] * frac;
            w_ref_err = w_ref_err.max((sol.w[i] - w_ref).abs());
        }
        rows.push(vec![h, equiv, cost, w_fva_err, w_ref_err]);
        equiv_gaps.push(equiv);
        cost_gaps.push(cost);
        w_fva_errs.push(w_fva_err);
        w_ref_errs.push(w_ref_err);
    }
    let order_equiv = fit_order(&hs, &equiv_gaps)?;
    let order_cost = fit_order(&hs, &cost_gaps)?;
    let order_bellman = fit_order(&hs, &w_fva_errs)?;
    let orders = json!({
        "equivalence": order_equiv,
        "cost_identity": order_cost,
        "bellman_vs_box_basis": order_bellman,
    });
    ctx.write_csv(
        "mca_orders.csv",
        &format!(
            "# fitted orders: equivalence={} cost={} bellman_vs_box_basis={}\nh,equivalence_gap,cost_gap,w_vs_box_basis,w_vs_reference",
            fmt_f64(order_equiv), fmt_f64(order_cost), fmt_f64(order_bellman)
        ),
        &rows,
    )?;
    ctx.write_json(
        "mca_orders.json",
        json!({
            "h_values": hs,
            "orders": orders,
            "w_vs_reference": w_ref_errs,
        }),
    )?;
    Ok(Outcome::Ok)
}

/// Run every stage that the config supports.
pub fn cmd_all(ctx: &Context) -> Result<Outcome> {
    cmd_reference(ctx)?;
    let mut outcome = cmd_solve(ctx)?;
    if ctx.config.method.basis == BasisConfig::Committor {
        cmd_bounds(ctx)?;
    }
    if ctx.config.problem.domain.len() == 1 {
        cmd_mca(ctx)?;
    }
    if ctx.config.sampling.is_some() && ctx.config.method.cores.is_some() {
        let sample_outcome = cmd_sample(ctx)?;
        if outcome == Outcome::Ok {
            outcome = sample_outcome;
        }
    }
    Ok(outcome)
}
