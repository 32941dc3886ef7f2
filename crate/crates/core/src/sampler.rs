//! Stochastic simulation and Monte-Carlo estimation: reflected
//! Euler-Maruyama paths, Gillespie jump paths, Feynman-Kac estimators,
//! core-MSM/milestoning estimation and lag-time extrapolation, and the
//! pathwise Kullback-Leibler check of the entropic running cost.
//!
//! Every estimator is a pure function of its inputs and a seed. Path
//! ensembles use one ChaCha stream per path index and reduce with pairwise
//! summation, so results are independent of thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::linalg::{fit_line, pairwise_map_sum, pairwise_sum};
use crate::mdp::{controlled_generator, running_cost};
use crate::model::{ControlProblem, Region};
use crate::{Error, Result};

const UNDEFINED: u32 = u32::MAX;

/// A discretized diffusion path; `states` holds frames of `dim`
/// coordinates each, `dt` is the spacing between stored frames.
#[derive(Debug, Clone)]
pub struct SdePath {
    pub dt: f64,
    pub dim: usize,
    pub states: Vec<f64>,
    pub seed: u64,
}

impl SdePath {
    pub fn n_frames(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    /// Binary dump: little-endian header (dim: u64, n_frames: u64,
    /// dt: f64, seed: u64) followed by the frames as f64 values.
    pub fn write_binary(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        out.write_all(&(self.dim as u64).to_le_bytes())?;
        out.write_all(&(self.n_frames() as u64).to_le_bytes())?;
        out.write_all(&self.dt.to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for v in &self.states {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(input: &mut impl std::io::Read) -> std::io::Result<Self> {
        let mut u = [0u8; 8];
        let mut next_u64 = |input: &mut dyn std::io::Read| -> std::io::Result<u64> {
            input.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let dim = next_u64(input)? as usize;
        let n_frames = next_u64(input)? as usize;
        let mut f = [0u8; 8];
        input.read_exact(&mut f)?;
        let dt = f64::from_le_bytes(f);
        let seed = next_u64(input)?;
        let mut states = vec![0.0; dim * n_frames];
        for v in states.iter_mut() {
            input.read_exact(&mut f)?;
            *v = f64::from_le_bytes(f);
        }
        Ok(Self { dt, dim, states, seed })
    }

    /// CSV dump with a time column and one column per coordinate.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        write!(out, "t")?;
        for a in 0..self.dim {
            write!(out, ",x{a}")?;
        }
        writeln!(out)?;
        for k in 0..self.n_frames() {
            write!(out, "{:.16e}", k as f64 * self.dt)?;
            for v in self.frame(k) {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn reflect(x: &mut [f64], bounds: &[[f64; 2]]) -> Result<()> {
    for (xi, b) in x.iter_mut().zip(bounds) {
        if *xi < b[0] {
            *xi = 2.0 * b[0] - *xi;
        } else if *xi > b[1] {
            *xi = 2.0 * b[1] - *xi;
        }
        if *xi < b[0] || *xi > b[1] {
            return Err(Error::StepOutsideDomain);
        }
    }
    Ok(())
}

type ExtraDrift<'a> = Option<&'a (dyn Fn(&[f64], &mut [f64]) + Sync)>;

fn em_step(
    problem: &ControlProblem,
    dt: f64,
    x: &mut [f64],
    grad: &mut [f64],
    extra: ExtraDrift,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let dim = x.len();
    problem.potential.gradient_into(x, grad);
    let noise_scale = (2.0 * problem.epsilon * dt).sqrt();
    let mut u = [0.0; 2];
    if let Some(f) = extra {
        f(x, &mut u[..dim]);
    }
    for a in 0..dim {
        let xi: f64 = rng.sample(StandardNormal);
        x[a] += (u[a] - grad[a]) * dt + noise_scale * xi;
    }
    reflect(x, problem.domain.bounds())
}

/// Euler-Maruyama with mirror reflection at the domain boundary:
/// `x' = x + (u(x) − ∇V(x))dt + √(2ε dt)·ξ`. The optional `drift_extra`
/// closure writes the control u(x) into its output slice.
pub fn simulate_sde(
    problem: &ControlProblem,
    dt: f64,
    n_steps: usize,
    x0: &[f64],
    seed: u64,
    drift_extra: ExtraDrift,
) -> Result<SdePath> {
    simulate_sde_strided(problem, dt, n_steps, 1, x0, seed, drift_extra)
}

/// Same dynamics, storing every `output_stride`-th frame (frame 0
/// included). The stored frame spacing is `dt · output_stride`.
pub fn simulate_sde_strided(
    problem: &ControlProblem,
    dt: f64,
    n_steps: usize,
    output_stride: usize,
    x0: &[f64],
    seed: u64,
    drift_extra: ExtraDrift,
) -> Result<SdePath> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    if output_stride == 0 {
        return Err(Error::InvalidArgument("output stride must be positive".into()));
    }
    let dim = problem.dim();
    if x0.len() != dim || !problem.domain.contains(x0) {
        return Err(Error::InvalidArgument("x0 must lie inside the domain".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; dim];
    let mut states = Vec::with_capacity((n_steps / output_stride + 1) * dim);
    states.extend_from_slice(&x);
    for step in 1..=n_steps {
        em_step(problem, dt, &mut x, &mut grad, drift_extra, &mut rng)?;
        if step % output_stride == 0 {
            states.extend_from_slice(&x);
        }
    }
    Ok(SdePath { dt: dt * output_stride as f64, dim, states, seed })
}

/// Continuous-time jump path: `states[k]` is occupied on
/// `[times[k], times[k+1])`, the last state until `t_end`.
#[derive(Debug, Clone)]
pub struct JumpPath {
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub t_end: f64,
    pub seed: u64,
}

/// Stopping rule for jump-path simulation.
#[derive(Debug, Clone, Copy)]
pub enum JumpStop {
    Time(f64),
    State(usize),
}

fn sample_exponential(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Gillespie simulation of the jump process with generator G: holding
/// times are exponential with rate −G_ii, the next state is drawn
/// proportionally to the off-diagonal rates.
pub fn simulate_jump(g: &DMatrix<f64>, i0: usize, stop: JumpStop, seed: u64) -> Result<JumpPath> {
    simulate_jump_stream(g, i0, stop, seed, 0)
}

/// [`simulate_jump`] with an explicit RNG stream (one per path index in
/// ensembles).
pub fn simulate_jump_stream(
    g: &DMatrix<f64>,
    i0: usize,
    stop: JumpStop,
    seed: u64,
    stream: u64,
) -> Result<JumpPath> {
    let n = g.nrows();
    if i0 >= n {
        return Err(Error::InvalidArgument("start state out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut times = vec![0.0];
    let mut states = vec![i0];
    let mut t = 0.0;
    let mut state = i0;
    let max_jumps = 50_000_000usize;
    for _ in 0..max_jumps {
        if let JumpStop::State(target) = stop {
            if state == target {
                return Ok(JumpPath { times, states, t_end: t, seed });
            }
        }
        let rate = -g[(state, state)];
        if rate <= 1e-300 {
            return match stop {
                JumpStop::Time(t_max) => Ok(JumpPath { times, states, t_end: t_max, seed }),
                JumpStop::State(_) => Err(Error::InvalidArgument(
                    "absorbing state reached before the target".into(),
                )),
            };
        }
        let hold = sample_exponential(&mut rng, rate);
        if let JumpStop::Time(t_max) = stop {
            if t + hold >= t_max {
                return Ok(JumpPath { times, states, t_end: t_max, seed });
            }
        }
        t += hold;
        // next state proportional to the off-diagonal rates
        let u: f64 = rng.random::<f64>() * rate;
        let mut acc = 0.0;
        let mut next = state;
        for j in 0..n {
            if j != state && g[(state, j)] > 0.0 {
                acc += g[(state, j)];
                if u < acc {
                    next = j;
                    break;
                }
            }
        }
        if next == state {
            // rounding pushed u past the last bucket; take the largest rate
            next = (0..n)
                .filter(|&j| j != state && g[(state, j)] > 0.0)
                .max_by(|&a, &b| g[(state, a)].total_cmp(&g[(state, b)]))
                .ok_or_else(|| Error::Internal("positive exit rate without exits".into()))?;
        }
        state = next;
        times.push(t);
        states.push(state);
    }
    Err(Error::NoConvergence("jump path exceeded the jump budget".into()))
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Paths that exhausted their step budget before hitting the target;
    /// they contribute their accumulated weight (an overestimate bound)
    /// and should prompt a budget review.
    pub censored: usize,
}

fn summarize(values: &[f64], censored: usize) -> MonteCarloEstimate {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let var = pairwise_map_sum(n, |i| (values[i] - mean) * (values[i] - mean))
        / (n.saturating_sub(1).max(1)) as f64;
    MonteCarloEstimate {
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
        n_paths: n,
        censored,
    }
}

/// Feynman-Kac estimator on the jump process:
/// `φ̂(i0) = E[exp(−ε⁻¹ ∫₀^τ f̂(X̂_s) ds)]` with exact holding-time
/// weighting of the integral.
pub fn feynman_kac_jump(
    g: &DMatrix<f64>,
    f_hat: &[f64],
    epsilon: f64,
    i0: usize,
    target: usize,
    n_paths: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let values: Vec<Result<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path = simulate_jump_stream(g, i0, JumpStop::State(target), seed, p as u64)?;
            let mut acc = 0.0;
            for k in 0..path.states.len() - 1 {
                acc += f_hat[path.states[k]] * (path.times[k + 1] - path.times[k]);
            }
            Ok((-acc / epsilon).exp())
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(summarize(&values, 0))
}

/// Feynman-Kac estimator for the diffusion:
/// `φ(x0) = E[exp(−ε⁻¹ ∫₀^τ f(X_s) ds)]` along reflected Euler-Maruyama
/// paths, the integral by the left-endpoint rule. Paths that do not reach
/// the target within `max_steps` are included with their accumulated
/// weight and counted as censored.
pub fn feynman_kac_sde(
    problem: &ControlProblem,
    x0: &[f64],
    dt: f64,
    max_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    if x0.len() != problem.dim() || !problem.domain.contains(x0) {
        return Err(Error::InvalidArgument("x0 must lie inside the domain".into()));
    }
    let results: Vec<Result<(f64, bool)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut x = x0.to_vec();
            let mut grad = vec![0.0; x.len()];
            let mut acc = 0.0;
            if problem.target.contains(&x) {
                return Ok((1.0, false));
            }
            for _ in 0..max_steps {
                acc += problem.running_cost.evaluate(&x) * dt;
                em_step(problem, dt, &mut x, &mut grad, None, &mut rng)?;
                if problem.target.contains(&x) {
                    return Ok(((-acc / problem.epsilon).exp(), false));
                }
            }
            Ok(((-acc / problem.epsilon).exp(), true))
        })
        .collect();
    let mut values = Vec::with_capacity(n_paths);
    let mut censored = 0;
    for r in results {
        let (v, c) = r?;
        values.push(v);
        censored += c as usize;
    }
    Ok(summarize(&values, censored))
}

/// Forward/backward milestoning labels along a path: `backward[t]` is the
/// core visited last, `forward[t]` the core visited next (`u32::MAX`
/// before the first and after the last core visit).
#[derive(Debug, Clone)]
pub struct MilestoneTrace {
    pub dt: f64,
    pub n_cores: usize,
    pub backward: Vec<u32>,
    pub forward: Vec<u32>,
}

impl MilestoneTrace {
    pub fn n_frames(&self) -> usize {
        self.backward.len()
    }

    pub fn backward_label(&self, t: usize) -> Option<u32> {
        (self.backward[t] != UNDEFINED).then_some(self.backward[t])
    }

    pub fn forward_label(&self, t: usize) -> Option<u32> {
        (self.forward[t] != UNDEFINED).then_some(self.forward[t])
    }
}

/// Assign milestoning labels to every frame of a path.
pub fn milestone_trace(path: &SdePath, cores: &[Region]) -> Result<MilestoneTrace> {
    let n = path.n_frames();
    let mut backward = vec![UNDEFINED; n];
    let mut forward = vec![UNDEFINED; n];
    let mut visited = false;
    let mut last = UNDEFINED;
    for t in 0..n {
        let x = path.frame(t);
        if let Some(c) = cores.iter().position(|c| c.contains(x)) {
            last = c as u32;
            visited = true;
        }
        backward[t] = last;
    }
    if !visited {
        return Err(Error::NoCoreVisited);
    }
    let mut next = UNDEFINED;
    for t in (0..n).rev() {
        let x = path.frame(t);
        if let Some(c) = cores.iter().position(|c| c.contains(x)) {
            next = c as u32;
        }
        forward[t] = next;
    }
    Ok(MilestoneTrace { dt: path.dt, n_cores: cores.len(), backward, forward })
}

/// Embed a jump path as a milestoning trace sampled at spacing `dt`: the
/// chain is always "inside" a core, so both labels equal the current
/// state.
pub fn jump_path_trace(path: &JumpPath, n_states: usize, dt: f64) -> MilestoneTrace {
    let n = (path.t_end / dt).floor() as usize + 1;
    let mut labels = vec![0u32; n];
    let mut k = 0usize;
    for t in 0..n {
        let time = t as f64 * dt;
        while k + 1 < path.times.len() && path.times[k + 1] <= time {
            k += 1;
        }
        labels[t] = path.states[k] as u32;
    }
    MilestoneTrace { dt, n_cores: n_states, backward: labels.clone(), forward: labels }
}

/// Per-entry mean and standard error over batches.
fn batch_stats(batches: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (r, c) = (batches[0].nrows(), batches[0].ncols());
    let mut mean = DMatrix::zeros(r, c);
    let mut se = DMatrix::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            let vals: Vec<f64> = batches
                .iter()
                .map(|b| b[(i, j)])
                .filter(|v| v.is_finite())
                .collect();
            let n = vals.len();
            if n == 0 {
                mean[(i, j)] = f64::NAN;
                se[(i, j)] = f64::INFINITY;
                continue;
            }
            let m = pairwise_sum(&vals) / n as f64;
            mean[(i, j)] = m;
            se[(i, j)] = if n >= 2 {
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                f64::INFINITY
            };
        }
    }
    (mean, se)
}

/// Core-MSM estimates from a milestoning trace.
#[derive(Debug, Clone)]
pub struct CoreMsmEstimate {
    pub taus: Vec<f64>,
    /// M_ij = P(X̃⁺ = j | X̃⁻ = i) (same-frame mass matrix).
    pub m: DMatrix<f64>,
    pub m_se: DMatrix<f64>,
    /// π_i = P(X̃⁻ = i).
    pub pi: DVector<f64>,
    pub pi_se: DVector<f64>,
    /// P^τ_ij = P(X̃⁺_{t+τ} = j | X̃⁻_t = i), one per lag time.
    pub p_tau: Vec<DMatrix<f64>>,
    pub p_tau_se: Vec<DMatrix<f64>>,
    /// K_est(τ) = (P^τ − M)/τ.
    pub k_est: Vec<DMatrix<f64>>,
    pub k_est_se: Vec<DMatrix<f64>>,
    /// Linear τ→0 extrapolation of K_est, batch-wise.
    pub k_extrapolated: DMatrix<f64>,
    pub k_extrapolated_se: DMatrix<f64>,
    /// States never seen as a backward label (their rows are NaN).
    pub undefined_rows: Vec<usize>,
    pub n_batches: usize,
}

/// Estimate the milestoning mass matrix M, the lagged transition matrices
/// P^τ and the rate estimates K_est(τ) = (P^τ − M)/τ together with their
/// τ→0 extrapolation. Standard errors come from batch means over
/// `n_batches` contiguous blocks of the trace.
pub fn estimate_core_msm(
    trace: &MilestoneTrace,
    taus: &[f64],
    n_batches: usize,
) -> Result<CoreMsmEstimate> {
    if taus.is_empty() {
        return Err(Error::InvalidArgument("need at least one lag time".into()));
    }
    if n_batches < 2 {
        return Err(Error::InvalidArgument("need at least two batches".into()));
    }
    let n = trace.n_frames();
    let ns = trace.n_cores;
    if n / n_batches < 2 {
        return Err(Error::InvalidArgument("trace too short for the batch count".into()));
    }
    let lags: Vec<usize> = taus
        .iter()
        .map(|&t| ((t / trace.dt).round() as usize).max(1))
        .collect();
    let tau_eff: Vec<f64> = lags.iter().map(|&l| l as f64 * trace.dt).collect();

    let mut m_batches = Vec::with_capacity(n_batches);
    let mut pi_batches = Vec::with_capacity(n_batches);
    let mut p_batches: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); taus.len()];
    let mut k_batches: Vec<Vec<DMatrix<f64>>> = vec![Vec::new(); taus.len()];
    let mut k0_batches = Vec::with_capacity(n_batches);

    for b in 0..n_batches {
        let lo = b * n / n_batches;
        let hi = (b + 1) * n / n_batches;
        // mass matrix and occupation
        let mut m_count = DMatrix::<f64>::zeros(ns, ns);
        let mut pi_count = vec![0.0; ns];
        let mut defined = 0.0;
        for t in lo..hi {
            let (bw, fw) = (trace.backward[t], trace.forward[t]);
            if bw != UNDEFINED {
                pi_count[bw as usize] += 1.0;
                defined += 1.0;
            }
            if bw != UNDEFINED && fw != UNDEFINED {
                m_count[(bw as usize, fw as usize)] += 1.0;
            }
        }
        let m_b = normalize_rows(&m_count);
        pi_batches.push(DMatrix::from_iterator(
            ns,
            1,
            pi_count.iter().map(|&c| if defined > 0.0 { c / defined } else { f64::NAN }),
        ));
        // lagged transition matrices
        let mut k_b_per_tau = Vec::with_capacity(taus.len());
        for (ti, &lag) in lags.iter().enumerate() {
            let mut p_count = DMatrix::<f64>::zeros(ns, ns);
            for t in lo..hi.saturating_sub(lag) {
                let bw = trace.backward[t];
                let fw = trace.forward[t + lag];
                if bw != UNDEFINED && fw != UNDEFINED {
                    p_count[(bw as usize, fw as usize)] += 1.0;
                }
            }
            let p_b = normalize_rows(&p_count);
            let k_b = (&p_b - &m_b) / tau_eff[ti];
            p_batches[ti].push(p_b);
            k_batches[ti].push(k_b.clone());
            k_b_per_tau.push(k_b);
        }
        m_batches.push(m_b);
        // per-entry linear extrapolation to τ = 0 within this batch
        let mut k0 = DMatrix::zeros(ns, ns);
        for i in 0..ns {
            for j in 0..ns {
                let ys: Vec<f64> = k_b_per_tau.iter().map(|k| k[(i, j)]).collect();
                k0[(i, j)] = if ys.iter().all(|y| y.is_finite()) && ys.len() >= 2 {
                    fit_line(&tau_eff, &ys).map(|(b0, _, _)| b0).unwrap_or(f64::NAN)
                } else if ys.len() == 1 {
                    ys[0]
                } else {
                    f64::NAN
                };
            }
        }
        k0_batches.push(k0);
    }

    let (m, m_se) = batch_stats(&m_batches);
    let (pi_m, pi_se_m) = batch_stats(&pi_batches);
    let mut p_tau = Vec::new();
    let mut p_tau_se = Vec::new();
    let mut k_est = Vec::new();
    let mut k_est_se = Vec::new();
    for ti in 0..taus.len() {
        let (p, p_se) = batch_stats(&p_batches[ti]);
        let (k, k_se) = batch_stats(&k_batches[ti]);
        p_tau.push(p);
        p_tau_se.push(p_se);
        k_est.push(k);
        k_est_se.push(k_se);
    }
    let (k0, k0_se) = batch_stats(&k0_batches);
    let undefined_rows: Vec<usize> = (0..ns).filter(|&i| m[(i, i)].is_nan()).collect();
    Ok(CoreMsmEstimate {
        taus: tau_eff,
        m,
        m_se,
        pi: DVector::from_iterator(ns, pi_m.iter().cloned()),
        pi_se: DVector::from_iterator(ns, pi_se_m.iter().cloned()),
        p_tau,
        p_tau_se,
        k_est,
        k_est_se,
        k_extrapolated: k0,
        k_extrapolated_se: k0_se,
        undefined_rows,
        n_batches,
    })
}

fn normalize_rows(counts: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = (counts.nrows(), counts.ncols());
    let mut out = DMatrix::zeros(r, c);
    for i in 0..r {
        let total: f64 = counts.row(i).sum();
        for j in 0..c {
            out[(i, j)] = if total > 0.0 { counts[(i, j)] / total } else { f64::NAN };
        }
    }
    out
}

/// Sampled cost matrix `F_ij = E_μ[f(X_t) 1{X̃⁺ = j} | X̃⁻ = i]` with
/// batch-means standard errors.
#[derive(Debug, Clone)]
pub struct CostMatrixEstimate {
    pub f: DMatrix<f64>,
    pub f_se: DMatrix<f64>,
    pub undefined_rows: Vec<usize>,
    pub n_batches: usize,
}

pub fn estimate_cost_matrix(
    trace: &MilestoneTrace,
    f_values: &[f64],
    n_batches: usize,
) -> Result<CostMatrixEstimate> {
    let n = trace.n_frames();
    if f_values.len() != n {
        return Err(Error::InvalidArgument(
            "running-cost samples must match the trace length".into(),
        ));
    }
    if n_batches < 2 || n / n_batches < 2 {
        return Err(Error::InvalidArgument("trace too short for the batch count".into()));
    }
    let ns = trace.n_cores;
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let lo = b * n / n_batches;
        let hi = (b + 1) * n / n_batches;
        let mut num = DMatrix::<f64>::zeros(ns, ns);
        let mut denom = vec![0.0; ns];
        for t in lo..hi {
            let (bw, fw) = (trace.backward[t], trace.forward[t]);
            if bw != UNDEFINED && fw != UNDEFINED {
                num[(bw as usize, fw as usize)] += f_values[t];
                denom[bw as usize] += 1.0;
            }
        }
        let mut f_b = DMatrix::zeros(ns, ns);
        for i in 0..ns {
            for j in 0..ns {
                f_b[(i, j)] = if denom[i] > 0.0 { num[(i, j)] / denom[i] } else { f64::NAN };
            }
        }
        batches.push(f_b);
    }
    let (f, f_se) = batch_stats(&batches);
    let undefined_rows: Vec<usize> = (0..ns).filter(|&i| f[(i, i)].is_nan()).collect();
    Ok(CostMatrixEstimate { f, f_se, undefined_rows, n_batches })
}

/// Least-squares line through `(τ, estimate)` pairs; returns the τ = 0
/// intercept, the slope, and the largest fit residual.
pub fn extrapolate_tau(taus: &[f64], estimates: &[f64]) -> Result<(f64, f64, f64)> {
    fit_line(taus, estimates)
}

/// Two estimates of the same Kullback-Leibler cost.
#[derive(Debug, Clone, Copy)]
pub struct KlCostEstimate {
    /// Mean of ∫ k^v ds over controlled paths.
    pub lhs: MonteCarloEstimate,
    /// Mean pathwise log-likelihood ratio of the controlled versus the
    /// uncontrolled chain, scaled by ε so both sides share cost units.
    pub rhs: MonteCarloEstimate,
    /// Per-path difference lhs − rhs (the honest combined error).
    pub diff: MonteCarloEstimate,
}

/// Monte-Carlo check that the expected entropic running cost equals the
/// Kullback-Leibler divergence between the controlled path law (generator
/// G^v) and the uncontrolled one (generator G), both started at `i0` and
/// stopped on reaching `target`.
pub fn kl_cost_mc(
    g: &DMatrix<f64>,
    v: &DVector<f64>,
    epsilon: f64,
    i0: usize,
    target: usize,
    n_paths: usize,
    seed: u64,
) -> Result<KlCostEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one path".into()));
    }
    let g_v = controlled_generator(g, v)?;
    let k_v = running_cost(g, v, epsilon)?;
    let samples: Vec<Result<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path = simulate_jump_stream(&g_v, i0, JumpStop::State(target), seed, p as u64)?;
            let mut cost = 0.0;
            let mut log_lr = 0.0;
            for k in 0..path.states.len() - 1 {
                let (s, next) = (path.states[k], path.states[k + 1]);
                let hold = path.times[k + 1] - path.times[k];
                cost += k_v[s] * hold;
                log_lr += (v[next] / v[s]).ln() + (g_v[(s, s)] - g[(s, s)]) * hold;
            }
            Ok((cost, epsilon * log_lr))
        })
        .collect();
    let mut lhs = Vec::with_capacity(n_paths);
    let mut rhs = Vec::with_capacity(n_paths);
    let mut diff = Vec::with_capacity(n_paths);
    for s in samples {
        let (c, l) = s?;
        lhs.push(c);
        rhs.push(l);
        diff.push(c - l);
    }
    Ok(KlCostEstimate {
        lhs: summarize(&lhs, 0),
        rhs: summarize(&rhs, 0),
        diff: summarize(&diff, 0),
    })
}

/// Fraction of frames inside each region.
pub fn occupation_fractions(path: &SdePath, regions: &[Region]) -> Vec<f64> {
    let n = path.n_frames();
    let mut counts = vec![0.0; regions.len()];
    for t in 0..n {
        let x = path.frame(t);
        for (r, region) in regions.iter().enumerate() {
            if region.contains(x) {
                counts[r] += 1.0;
            }
        }
    }
    counts.iter().map(|c| c / n as f64).collect()
}

/// Time-weighted occupation of each state along a jump path.
pub fn jump_occupation(path: &JumpPath, n_states: usize) -> Vec<f64> {
    let mut occ = vec![0.0; n_states];
    for k in 0..path.states.len() {
        let until = if k + 1 < path.times.len() { path.times[k + 1] } else { path.t_end };
        occ[path.states[k]] += until - path.times[k];
    }
    let total: f64 = path.t_end.max(1e-300);
    occ.iter().map(|o| o / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm_generator;
    use crate::mdp::stationary_distribution;
    use crate::model::{Domain, Potential, RunningCost};

    fn ou_problem() -> ControlProblem {
        ControlProblem::new(
            Potential::polynomial_1d(vec![0.0, 0.0, 0.5]),
            Domain::interval(-8.0, 8.0).unwrap(),
            0.5,
            Region::interval(-0.1, 0.1).unwrap(),
            RunningCost::Constant(0.0),
        )
        .unwrap()
    }

    #[test]
    fn sde_path_is_deterministic_in_the_seed() {
        let problem = ou_problem();
        let a = simulate_sde(&problem, 1e-3, 5_000, &[0.3], 42, None).unwrap();
        let b = simulate_sde(&problem, 1e-3, 5_000, &[0.3], 42, None).unwrap();
        assert_eq!(a.states, b.states);
        let c = simulate_sde(&problem, 1e-3, 5_000, &[0.3], 43, None).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn ou_stationary_variance_matches_temperature() {
        // dX = −X dt + √(2ε) dB has stationary variance ε
        let problem = ou_problem();
        let eps = problem.epsilon;
        let path = simulate_sde(&problem, 1e-3, 2_000_000, &[0.0], 7, None).unwrap();
        let skip = 100_000; // discard the transient
        let n = path.n_frames() - skip;
        let mean = pairwise_map_sum(n, |i| path.frame(skip + i)[0]) / n as f64;
        let var = pairwise_map_sum(n, |i| {
            let d = path.frame(skip + i)[0] - mean;
            d * d
        }) / n as f64;
        assert!((var - eps).abs() / eps <= 0.05, "variance {var}, expected {eps}");
    }

    #[test]
    fn reflection_keeps_states_inside_and_rejects_huge_steps() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.0).unwrap();
        let path = simulate_sde(&problem, 1e-3, 100_000, &[4.9], 3, None).unwrap();
        for t in 0..path.n_frames() {
            let x = path.frame(t)[0];
            assert!((-5.0..=5.0).contains(&x));
        }
        let tiny = ControlProblem::new(
            Potential::zero(1),
            Domain::interval(0.0, 0.05).unwrap(),
            5.0,
            Region::interval(0.02, 0.03).unwrap(),
            RunningCost::Constant(0.0),
        )
        .unwrap();
        assert!(matches!(
            simulate_sde(&tiny, 1.0, 1_000, &[0.025], 1, None),
            Err(Error::StepOutsideDomain)
        ));
    }

    #[test]
    fn controlled_drift_confines_the_path() {
        // strong control toward the center beats the double-well drift
        let problem = ControlProblem::new(
            Potential::double_well(),
            Domain::interval(-2.0, 2.0).unwrap(),
            0.05,
            Region::interval(-0.1, 0.1).unwrap(),
            RunningCost::Constant(0.0),
        )
        .unwrap();
        let control = |x: &[f64], u: &mut [f64]| u[0] = -20.0 * x[0] + 4.0 * x[0] * (x[0] * x[0] - 1.0);
        let path = simulate_sde(&problem, 5e-4, 200_000, &[0.0], 5, Some(&control)).unwrap();
        let n = path.n_frames();
        let frac_center = (0..n)
            .filter(|&t| path.frame(t)[0].abs() < 0.5)
            .count() as f64
            / n as f64;
        assert!(frac_center > 0.95, "confined fraction {frac_center}");
    }

    #[test]
    fn jump_path_deterministic_and_transitions_follow_rates() {
        let g = DMatrix::from_row_slice(3, 3, &[-1.0, 0.7, 0.3, 0.4, -0.9, 0.5, 0.2, 0.8, -1.0]);
        let a = simulate_jump(&g, 0, JumpStop::Time(500.0), 11).unwrap();
        let b = simulate_jump(&g, 0, JumpStop::Time(500.0), 11).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.times, b.times);
        for k in 0..a.states.len() - 1 {
            assert!(g[(a.states[k], a.states[k + 1])] > 0.0, "impossible transition");
            assert!(a.times[k + 1] > a.times[k]);
        }
    }

    #[test]
    fn jump_mean_hitting_time_matches_exponential_law() {
        let a = 0.8;
        let g = DMatrix::from_row_slice(2, 2, &[-a, a, 0.0, 0.0]);
        let n_paths = 20_000;
        let times: Vec<f64> = (0..n_paths)
            .map(|p| {
                simulate_jump_stream(&g, 0, JumpStop::State(1), 17, p as u64)
                    .unwrap()
                    .t_end
            })
            .collect();
        let est = summarize(&times, 0);
        assert!(
            (est.estimate - 1.0 / a).abs() <= 3.0 * est.std_error,
            "mean {} ± {}, expected {}",
            est.estimate,
            est.std_error,
            1.0 / a
        );
    }

    #[test]
    fn long_run_jump_occupation_matches_stationary_law() {
        let g = DMatrix::from_row_slice(3, 3, &[-1.0, 0.7, 0.3, 0.4, -0.9, 0.5, 0.2, 0.8, -1.0]);
        let pi = stationary_distribution(&g).unwrap();
        let path = simulate_jump(&g, 0, JumpStop::Time(200_000.0), 23).unwrap();
        let occ = jump_occupation(&path, 3);
        for i in 0..3 {
            // crude 3-SE bound with the effective number of visits
            let se = (pi[i] * (1.0 - pi[i]) / (path.states.len() as f64 / 3.0)).sqrt() * 3.0;
            assert!(
                (occ[i] - pi[i]).abs() <= 3.0 * se.max(1e-3),
                "state {i}: occupation {}, π {}",
                occ[i],
                pi[i]
            );
        }
    }

    #[test]
    fn feynman_kac_zero_cost_is_exactly_one() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.5, -0.5]);
        let est = feynman_kac_jump(&g, &[0.0, 0.0], 0.5, 0, 1, 500, 9).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn feynman_kac_jump_matches_two_state_closed_form() {
        let (a, sigma, eps) = (1.0, 0.08, 0.5);
        let g = DMatrix::from_row_slice(2, 2, &[-a, a, 0.4, -0.4]);
        let est = feynman_kac_jump(&g, &[sigma, 0.0], eps, 0, 1, 20_000, 31).unwrap();
        let exact = a / (a + sigma / eps);
        assert!(
            (est.estimate - exact).abs() <= 3.0 * est.std_error,
            "estimate {} ± {}, exact {exact}",
            est.estimate,
            est.std_error
        );
    }

    #[test]
    fn standard_error_scales_like_inverse_sqrt_paths() {
        let (a, sigma, eps) = (1.0, 0.3, 0.5);
        let g = DMatrix::from_row_slice(2, 2, &[-a, a, 0.4, -0.4]);
        let e1 = feynman_kac_jump(&g, &[sigma, 0.0], eps, 0, 1, 20_000, 37).unwrap();
        let e2 = feynman_kac_jump(&g, &[sigma, 0.0], eps, 0, 1, 40_000, 37).unwrap();
        let ratio = e2.std_error / e1.std_error;
        let expected = std::f64::consts::FRAC_1_SQRT_2;
        assert!(
            ratio >= expected * 0.8 && ratio <= expected * 1.2,
            "SE ratio {ratio}"
        );
    }

    #[test]
    fn milestone_labels_on_synthetic_paths() {
        let cores = [
            Region::interval(-1.0, -0.5).unwrap(),
            Region::interval(0.5, 1.0).unwrap(),
        ];
        // path entirely inside core 0
        let inside = SdePath { dt: 0.1, dim: 1, states: vec![-0.7; 10], seed: 0 };
        let tr = milestone_trace(&inside, &cores).unwrap();
        assert!(tr.backward.iter().all(|&b| b == 0));
        assert!(tr.forward.iter().all(|&f| f == 0));
        // core 0 → transition region → core 1
        let walk = SdePath {
            dt: 0.1,
            dim: 1,
            states: vec![-0.7, -0.6, -0.2, 0.0, 0.2, 0.7, 0.8],
            seed: 0,
        };
        let tr = milestone_trace(&walk, &cores).unwrap();
        assert_eq!(tr.backward, vec![0, 0, 0, 0, 0, 1, 1]);
        assert_eq!(tr.forward, vec![0, 0, 1, 1, 1, 1, 1]);
        // frames before any core visit have undefined backward labels
        let late = SdePath { dt: 0.1, dim: 1, states: vec![0.0, 0.1, 0.6], seed: 0 };
        let tr = milestone_trace(&late, &cores).unwrap();
        assert_eq!(tr.backward_label(0), None);
        assert_eq!(tr.forward_label(0), Some(1));
        // no core visited at all
        let lost = SdePath { dt: 0.1, dim: 1, states: vec![0.0, 0.1], seed: 0 };
        assert!(matches!(milestone_trace(&lost, &cores), Err(Error::NoCoreVisited)));
    }

    #[test]
    fn core_msm_from_embedded_jump_path_recovers_transition_matrix() {
        let g = DMatrix::from_row_slice(3, 3, &[-0.6, 0.4, 0.2, 0.3, -0.5, 0.2, 0.1, 0.5, -0.6]);
        let path = simulate_jump(&g, 0, JumpStop::Time(200_000.0), 41).unwrap();
        let trace = jump_path_trace(&path, 3, 0.05);
        // lag times well inside the linear regime: the curvature of
        // exp(τG) would bias the linear τ→0 extrapolation otherwise
        let taus = [0.1, 0.2, 0.3, 0.4];
        let est = estimate_core_msm(&trace, &taus, 20).unwrap();
        // the embedded chain is always inside a core: M = I exactly
        assert!((est.m.clone() - DMatrix::<f64>::identity(3, 3)).amax() <= 1e-12);
        for (ti, &tau) in est.taus.iter().enumerate() {
            let p_exact = expm_generator(&g, tau);
            for i in 0..3 {
                for j in 0..3 {
                    let se = est.p_tau_se[ti][(i, j)].max(1.5e-3);
                    assert!(
                        (est.p_tau[ti][(i, j)] - p_exact[(i, j)]).abs() <= 3.0 * se,
                        "P^τ mismatch at τ={tau}, ({i},{j})"
                    );
                }
            }
        }
        // τ→0 extrapolation recovers the generator itself
        for i in 0..3 {
            for j in 0..3 {
                let se = est.k_extrapolated_se[(i, j)].max(8e-3);
                assert!(
                    (est.k_extrapolated[(i, j)] - g[(i, j)]).abs() <= 3.0 * se,
                    "K extrapolation at ({i},{j}): {} vs {}",
                    est.k_extrapolated[(i, j)],
                    g[(i, j)]
                );
            }
        }
    }

    #[test]
    fn lag_time_extrapolation_recovers_mfpt_of_synthetic_chain() {
        // the workflow for sampled models: estimate K at several lag
        // times, solve the MFPT system per lag, and extrapolate the
        // lag-dependent results linearly to τ = 0
        let g = DMatrix::from_row_slice(
            3,
            3,
            &[-0.12, 0.08, 0.04, 0.06, -0.10, 0.04, 0.02, 0.10, -0.12],
        );
        let truth = crate::mdp::mfpt(&g, &[2]).unwrap()[0];
        let path = simulate_jump(&g, 0, JumpStop::Time(2_000_000.0), 97).unwrap();
        let trace = jump_path_trace(&path, 3, 0.25);
        let taus = [0.5, 1.0, 1.5, 2.0];
        let est = estimate_core_msm(&trace, &taus, 20).unwrap();
        let mfpt_at_tau: Vec<f64> = est
            .k_est
            .iter()
            .map(|k| crate::mdp::mfpt(k, &[2]).unwrap()[0])
            .collect();
        let (intercept, _slope, _resid) = extrapolate_tau(&est.taus, &mfpt_at_tau).unwrap();
        assert!(
            (intercept - truth).abs() / truth <= 0.02,
            "extrapolated MFPT {intercept} vs exact {truth}"
        );
        // the intercept also beats every single-lag generator estimate
        let err_of = |k: &DMatrix<f64>| (k - &g).amax();
        let single_best = est.k_est.iter().map(err_of).fold(f64::INFINITY, f64::min);
        assert!(
            err_of(&est.k_extrapolated) < single_best,
            "extrapolation should beat every single lag time"
        );
    }

    #[test]
    fn extrapolation_recovers_exact_line() {
        let (b, m, r) = extrapolate_tau(&[1.0, 2.0, 3.0], &[5.0, 7.0, 9.0]).unwrap();
        assert!((b - 3.0).abs() <= 1e-12);
        assert!((m - 2.0).abs() <= 1e-12);
        assert!(r <= 1e-12);
        assert!(extrapolate_tau(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn kl_cost_trivial_strategy_is_exactly_zero() {
        let g = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.5, -0.5]);
        let v = DVector::from_element(2, 1.0);
        let est = kl_cost_mc(&g, &v, 0.5, 0, 1, 200, 53).unwrap();
        assert_eq!(est.lhs.estimate, 0.0);
        assert_eq!(est.rhs.estimate, 0.0);
    }

    #[test]
    fn binary_trajectory_round_trip() {
        let problem = ou_problem();
        let path = simulate_sde(&problem, 1e-3, 1_000, &[0.4], 99, None).unwrap();
        let mut buf = Vec::new();
        path.write_binary(&mut buf).unwrap();
        let back = SdePath::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dim, path.dim);
        assert_eq!(back.dt, path.dt);
        assert_eq!(back.seed, path.seed);
        assert_eq!(back.states, path.states);
        let mut csv = Vec::new();
        path.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("t,x0\n"));
    }

    #[test]
    fn occupation_fractions_match_finite_volume_stationary_law() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.0).unwrap();
        let wells = [
            Region::interval(-5.0, -1.7).unwrap(),
            Region::interval(-1.7, 1.7).unwrap(),
            Region::interval(1.7, 5.0).unwrap(),
        ];
        let partition = crate::galerkin::CellPartition::new(&problem, &[100]).unwrap();
        let (_k, pi_cells) = crate::galerkin::fva_generator(&problem, &partition).unwrap();
        let pi_wells: Vec<f64> = wells
            .iter()
            .map(|w| {
                (0..100)
                    .filter(|&c| w.contains(&partition.center(c)))
                    .map(|c| pi_cells[c])
                    .sum()
            })
            .collect();
        let path = simulate_sde_strided(&problem, 1e-3, 20_000_000, 10, &[0.0], 29, None).unwrap();
        // batch-means standard errors over contiguous path segments
        let n_batches = 16;
        let n = path.n_frames();
        for (w, &pi_w) in wells.iter().zip(&pi_wells) {
            let mut batch_vals = Vec::new();
            for b in 0..n_batches {
                let (lo, hi) = (b * n / n_batches, (b + 1) * n / n_batches);
                let count = (lo..hi).filter(|&t| w.contains(path.frame(t))).count();
                batch_vals.push(count as f64 / (hi - lo) as f64);
            }
            let mean = pairwise_sum(&batch_vals) / n_batches as f64;
            let var = batch_vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n_batches - 1) as f64;
            let se = (var / n_batches as f64).sqrt();
            assert!(
                (mean - pi_w).abs() <= 3.0 * se,
                "occupation {mean:.4} vs π {pi_w:.4} (se {se:.4})"
            );
        }
    }

    #[test]
    fn milestoning_is_reversible_and_reproduces_committor_occupation() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.08).unwrap();
        let cores = [
            Region::interval(-0.2, 0.2).unwrap(),
            Region::interval(3.2, 3.6).unwrap(),
            Region::interval(-3.6, -3.2).unwrap(),
        ];
        let path = simulate_sde_strided(&problem, 1e-3, 6_000_000, 10, &[-3.4], 61, None).unwrap();
        let trace = milestone_trace(&path, &cores).unwrap();
        let est = estimate_core_msm(&trace, &[1.0], 16).unwrap();

        // joint law J_ij = P(X̃⁻ = i, X̃⁺ = j) is symmetric for reversible
        // dynamics (it equals the mass-matrix overlap ⟨χ_i, χ_j⟩_μ)
        let n_frames = trace.n_frames();
        let n_batches = 16;
        for i in 0..3 {
            for j in 0..i {
                let mut diffs = Vec::new();
                for b in 0..n_batches {
                    let (lo, hi) = (b * n_frames / n_batches, (b + 1) * n_frames / n_batches);
                    let mut defined = 0.0f64;
                    let mut j_ij = 0.0;
                    let mut j_ji = 0.0;
                    for t in lo..hi {
                        let (bw, fw) = (trace.backward[t], trace.forward[t]);
                        if bw != UNDEFINED && fw != UNDEFINED {
                            defined += 1.0;
                            if bw == i as u32 && fw == j as u32 {
                                j_ij += 1.0;
                            }
                            if bw == j as u32 && fw == i as u32 {
                                j_ji += 1.0;
                            }
                        }
                    }
                    diffs.push((j_ij - j_ji) / defined.max(1.0));
                }
                let mean = pairwise_sum(&diffs) / n_batches as f64;
                let var = diffs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (n_batches - 1) as f64;
                let se = (var / n_batches as f64).sqrt();
                assert!(
                    mean.abs() <= 3.0 * se.max(1e-6),
                    "joint milestoning law asymmetric at ({i},{j}): {mean:.2e} ± {se:.2e}"
                );
            }
        }

        // backward-label occupation matches the committor-model π
        let grid = crate::model::QuadratureGrid::new(&problem, &[0.01]).unwrap();
        let set = crate::reference::compute_committors_on(&problem, &grid, &cores).unwrap();
        let model = crate::galerkin::assemble(&problem, &crate::galerkin::Basis::committor(set))
            .unwrap();
        for i in 0..3 {
            let dev = (est.pi[i] - model.pi[i]).abs();
            assert!(
                dev <= 3.0 * est.pi_se[i].max(2e-3),
                "π({i}): sampled {} vs quadrature {}",
                est.pi[i],
                model.pi[i]
            );
        }
    }

    #[test]
    fn cost_matrix_estimate_basics() {
        let cores = [
            Region::interval(-1.0, -0.5).unwrap(),
            Region::interval(0.5, 1.0).unwrap(),
        ];
        let xs = [-0.7, -0.6, -0.2, 0.0, 0.2, 0.7, 0.8, 0.1, -0.6, -0.7, 0.3, 0.8];
        let path = SdePath { dt: 0.1, dim: 1, states: xs.to_vec(), seed: 0 };
        let trace = milestone_trace(&path, &cores).unwrap();
        // f ≡ 0 gives an exactly zero estimate
        let zero = estimate_cost_matrix(&trace, &vec![0.0; xs.len()], 2).unwrap();
        assert!(zero.f.amax() == 0.0);
        // constant f: rows sum to σ exactly since the forward labels
        // partition the retained frames
        let sigma = 0.37;
        let est = estimate_cost_matrix(&trace, &vec![sigma; xs.len()], 2).unwrap();
        for i in 0..2 {
            let row: f64 = est.f.row(i).sum();
            assert!((row - sigma).abs() <= 1e-12, "row {i} sums to {row}");
        }
    }

    #[test]
    fn feynman_kac_sde_matches_reference_solution() {
        let problem = ControlProblem::triple_well_benchmark(0.5, 0.08).unwrap();
        let reference = crate::reference::solve_linear_bvp(&problem, 0.01).unwrap();
        let node = (0..reference.grid.n_nodes())
            .min_by(|&a, &b| {
                reference.grid.node_1d(a).abs().total_cmp(&reference.grid.node_1d(b).abs())
            })
            .unwrap();
        let est = feynman_kac_sde(&problem, &[0.0], 2e-3, 2_000_000, 300, 73).unwrap();
        assert!(est.censored == 0, "paths should reach the target well");
        // the direct estimate is consistent but noisy (a few hundred
        // paths give a standard error of several percent)
        assert!(
            (est.estimate - reference.phi[node]).abs() <= 3.0 * est.std_error,
            "FK {} ± {} vs φ {}",
            est.estimate,
            est.std_error,
            reference.phi[node]
        );
        assert!(est.std_error > 1e-3, "direct sampling has sizable variance");
    }

    #[test]
    fn kl_cost_two_estimators_agree_and_are_nonnegative() {
        let g = DMatrix::from_row_slice(3, 3, &[-0.9, 0.6, 0.3, 0.5, -0.8, 0.3, 0.4, 0.4, -0.8]);
        let v = DVector::from_vec(vec![0.8, 1.6, 1.0]);
        let est = kl_cost_mc(&g, &v, 0.7, 0, 2, 20_000, 59).unwrap();
        assert!(
            est.diff.estimate.abs() <= 3.0 * est.diff.std_error.max(1e-12),
            "lhs {} vs rhs {}, diff {} ± {}",
            est.lhs.estimate,
            est.rhs.estimate,
            est.diff.estimate,
            est.diff.std_error
        );
        assert!(est.lhs.estimate >= -3.0 * est.lhs.std_error, "KL must be nonnegative");
    }
}
