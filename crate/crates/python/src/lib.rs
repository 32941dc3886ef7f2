//! Python bindings: the problem types and the main solve/estimate entry
//! points, with vectors and matrices crossing the boundary as plain lists.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kramers::galerkin;
use kramers::model::{ControlProblem, Domain, Potential, QuadratureGrid, Region, RunningCost};
use kramers::reference;
use kramers::sampler;

fn err(e: kramers::Error) -> PyErr {
    match e {
        kramers::Error::InvalidProblem(_)
        | kramers::Error::InvalidArgument(_)
        | kramers::Error::InvalidBasis(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// A stochastic optimal control problem instance.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct Problem {
    inner: ControlProblem,
}

#[pymethods]
impl Problem {
    /// Build a problem from a named potential ("triple_well",
    /// "double_well" or "zero"), per-axis domain bounds, temperature,
    /// a union of target boxes and a constant running cost.
    #[new]
    fn new(
        potential: &str,
        domain: Vec<[f64; 2]>,
        epsilon: f64,
        target: Vec<Vec<[f64; 2]>>,
        sigma: f64,
    ) -> PyResult<Self> {
        let dim = domain.len();
        let potential = match potential {
            "triple_well" => Potential::triple_well(),
            "double_well" => Potential::double_well(),
            "zero" => Potential::zero(dim),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown potential {other:?}; use triple_well, double_well or zero"
                )))
            }
        };
        let inner = ControlProblem::new(
            potential,
            Domain::new(domain).map_err(err)?,
            epsilon,
            Region::new(target).map_err(err)?,
            RunningCost::Constant(sigma),
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    /// The benchmark instance: triple well on [−5, 5], target around the
    /// left minimum.
    #[staticmethod]
    fn triple_well(epsilon: f64, sigma: f64) -> PyResult<Self> {
        Ok(Self { inner: ControlProblem::triple_well_benchmark(epsilon, sigma).map_err(err)? })
    }

    fn potential_value(&self, x: Vec<f64>) -> f64 {
        self.inner.potential.evaluate(&x)
    }

    fn potential_gradient(&self, x: Vec<f64>) -> Vec<f64> {
        self.inner.potential.gradient(&x)
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }
}

/// Fine-grid solution of the transformed linear problem.
#[pyclass]
struct Reference {
    inner: reference::ReferenceSolution,
}

#[pymethods]
impl Reference {
    /// Node coordinates (1-D problems).
    fn x(&self) -> Vec<f64> {
        (0..self.inner.grid.n_nodes())
            .map(|i| self.inner.grid.node(i)[0])
            .collect()
    }

    fn phi(&self) -> Vec<f64> {
        self.inner.phi.clone()
    }

    fn w(&self) -> Vec<f64> {
        self.inner.w.clone()
    }

    /// Optimal feedback control per axis.
    fn u_star(&self) -> Vec<Vec<f64>> {
        self.inner.u_star.clone()
    }

    fn potential_values(&self) -> Vec<f64> {
        self.inner.potential_values.clone()
    }
}

/// Committor functions of a family of core sets (target core last).
#[pyclass]
struct Committors {
    inner: reference::CommittorSet,
}

#[pymethods]
impl Committors {
    fn chi(&self) -> Vec<Vec<f64>> {
        self.inner.chi.clone()
    }

    fn n_states(&self) -> usize {
        self.inner.n_states()
    }
}

/// Matrices of the discretized jump process.
#[pyclass]
struct Model {
    inner: galerkin::GeneratorModel,
}

#[pymethods]
impl Model {
    fn k(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.inner.k)
    }

    fn f(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.inner.f)
    }

    fn g(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.inner.g)
    }

    fn m_hat(&self) -> Vec<Vec<f64>> {
        matrix_rows(&self.inner.m_hat)
    }

    fn pi(&self) -> Vec<f64> {
        self.inner.pi.iter().cloned().collect()
    }

    fn f_hat(&self) -> Vec<f64> {
        self.inner.lambda.iter().cloned().collect()
    }

    /// Smallest constant cost that violates the generator condition, or
    /// None when the condition holds for every cost.
    fn constant_cost_threshold(&self) -> Option<f64> {
        galerkin::constant_cost_threshold(&self.inner)
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }
}

/// Solution of the dual Markov decision problem.
#[pyclass]
struct Solution {
    generator_ok: bool,
    phi_hat: Vec<f64>,
    w_hat: Option<Vec<f64>>,
    v_star: Option<Vec<f64>>,
    k_v: Option<Vec<f64>>,
    pi_v: Option<Vec<f64>>,
    g_v: Option<Vec<Vec<f64>>>,
}

#[pymethods]
impl Solution {
    #[getter]
    fn generator_ok(&self) -> bool {
        self.generator_ok
    }

    #[getter]
    fn phi_hat(&self) -> Vec<f64> {
        self.phi_hat.clone()
    }

    #[getter]
    fn w_hat(&self) -> Option<Vec<f64>> {
        self.w_hat.clone()
    }

    #[getter]
    fn v_star(&self) -> Option<Vec<f64>> {
        self.v_star.clone()
    }

    #[getter]
    fn k_v(&self) -> Option<Vec<f64>> {
        self.k_v.clone()
    }

    #[getter]
    fn pi_v(&self) -> Option<Vec<f64>> {
        self.pi_v.clone()
    }

    #[getter]
    fn g_v(&self) -> Option<Vec<Vec<f64>>> {
        self.g_v.clone()
    }
}

/// Solve the linear boundary value problem on a grid of spacing h.
#[pyfunction]
fn solve_reference(problem: &Problem, h: f64) -> PyResult<Reference> {
    Ok(Reference { inner: reference::solve_linear_bvp(&problem.inner, h).map_err(err)? })
}

/// Committors of the cores (one box each, target core last) at spacing h.
#[pyfunction]
fn compute_committors(
    problem: &Problem,
    cores: Vec<Vec<[f64; 2]>>,
    h: f64,
) -> PyResult<Committors> {
    let regions: Vec<Region> = cores
        .into_iter()
        .map(|boxes| Region::new(vec![boxes]))
        .collect::<kramers::Result<_>>()
        .map_err(err)?;
    Ok(Committors {
        inner: reference::compute_committors(&problem.inner, &regions, h).map_err(err)?,
    })
}

/// Assemble the jump-process model for a committor basis.
#[pyfunction]
fn assemble_committor(problem: &Problem, committors: &Committors) -> PyResult<Model> {
    let basis = galerkin::Basis::committor(committors.inner.clone());
    Ok(Model { inner: galerkin::assemble(&problem.inner, &basis).map_err(err)? })
}

/// Assemble the jump-process model for a box-indicator basis.
#[pyfunction]
fn assemble_indicator(problem: &Problem, h: f64, cells_per_axis: Vec<usize>) -> PyResult<Model> {
    let dim = problem.inner.dim();
    let grid = QuadratureGrid::new(&problem.inner, &vec![h; dim]).map_err(err)?;
    let basis = galerkin::Basis::indicator(&problem.inner, &grid, &cells_per_axis).map_err(err)?;
    Ok(Model { inner: galerkin::assemble(&problem.inner, &basis).map_err(err)? })
}

/// Solve the discrete problem and its dual decision problem.
#[pyfunction]
fn solve_mdp(model: &Model) -> PyResult<Solution> {
    let out = kramers::mdp::solve_mdp(&model.inner).map_err(err)?;
    Ok(Solution {
        generator_ok: out.check.is_generator,
        phi_hat: out.phi_hat.iter().cloned().collect(),
        w_hat: out.w_hat.as_ref().map(|w| w.iter().cloned().collect()),
        v_star: out.mdp.as_ref().map(|m| m.v_star.iter().cloned().collect()),
        k_v: out.mdp.as_ref().map(|m| m.k_v.iter().cloned().collect()),
        pi_v: out.mdp.as_ref().map(|m| m.pi_v.iter().cloned().collect()),
        g_v: out.mdp.as_ref().map(|m| matrix_rows(&m.g_v)),
    })
}

/// Mean first passage times to a set of target states.
#[pyfunction]
fn mfpt(generator: Vec<Vec<f64>>, targets: Vec<usize>) -> PyResult<Vec<f64>> {
    let g = rows_matrix(generator)?;
    Ok(kramers::mdp::mfpt(&g, &targets)
        .map_err(err)?
        .iter()
        .cloned()
        .collect())
}

/// Reflected Euler-Maruyama path; returns the frames as a list of
/// coordinate lists.
#[pyfunction]
#[pyo3(signature = (problem, dt, n_steps, x0, seed, output_stride = 1))]
fn simulate_sde(
    problem: &Problem,
    dt: f64,
    n_steps: usize,
    x0: Vec<f64>,
    seed: u64,
    output_stride: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let path =
        sampler::simulate_sde_strided(&problem.inner, dt, n_steps, output_stride, &x0, seed, None)
            .map_err(err)?;
    Ok((0..path.n_frames()).map(|k| path.frame(k).to_vec()).collect())
}

/// Monte-Carlo Feynman-Kac estimate of φ(x0): (estimate, std_error).
#[pyfunction]
fn feynman_kac(
    problem: &Problem,
    x0: Vec<f64>,
    dt: f64,
    max_steps: usize,
    n_paths: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let est = sampler::feynman_kac_sde(&problem.inner, &x0, dt, max_steps, n_paths, seed)
        .map_err(err)?;
    Ok((est.estimate, est.std_error))
}

/// Gillespie path of a jump process until a time horizon:
/// (jump_times, states).
#[pyfunction]
fn simulate_jump(
    generator: Vec<Vec<f64>>,
    i0: usize,
    t_max: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let g = rows_matrix(generator)?;
    let path = sampler::simulate_jump(&g, i0, sampler::JumpStop::Time(t_max), seed).map_err(err)?;
    Ok((path.times, path.states))
}

#[pymodule]
fn kramers_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Reference>()?;
    m.add_class::<Committors>()?;
    m.add_class::<Model>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(solve_reference, m)?)?;
    m.add_function(wrap_pyfunction!(compute_committors, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_committor, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_indicator, m)?)?;
    m.add_function(wrap_pyfunction!(solve_mdp, m)?)?;
    m.add_function(wrap_pyfunction!(mfpt, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sde, m)?)?;
    m.add_function(wrap_pyfunction!(feynman_kac, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_jump, m)?)?;
    Ok(())
}
