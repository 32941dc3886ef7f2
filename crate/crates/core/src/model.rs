//! Problem definitions shared by every other module: potentials, domains,
//! target regions, running costs, and the Boltzmann-weighted quadrature
//! grid that realizes the μ-inner product `⟨u,v⟩_μ = ∫ u v dμ` with
//! `dμ ∝ exp(−V/ε) dx` normalized to μ(𝒮) = 1.

use serde::{Deserialize, Serialize};

use crate::linalg::pairwise_map_sum;
use crate::{Error, Result};

/// Quartic confinement coefficient of the built-in triple well.
const TW_QUARTIC: f64 = 0.002;
/// Depth of the two outer Gaussian wells.
const TW_OUTER_DEPTH: f64 = 1.9;
/// Depth of the central Gaussian well (shallower than the outer ones).
const TW_CENTER_DEPTH: f64 = 1.5;
/// Common Gaussian width.
const TW_WIDTH: f64 = 1.1;
/// Centers of the outer Gaussians, placed so that the quartic term pulls
/// the actual minima onto ±3.4 exactly.
const TW_OUTER_CENTER: f64 = 3.627_676_020_541_354_5;

fn gauss_well(x: f64, depth: f64, center: f64, width: f64) -> f64 {
    let z = (x - center) / width;
    -depth * (-0.5 * z * z).exp()
}

fn gauss_well_grad(x: f64, depth: f64, center: f64, width: f64) -> f64 {
    let z = (x - center) / width;
    depth * (x - center) / (width * width) * (-0.5 * z * z).exp()
}

/// Scalar potential energy field V with an analytic gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Potential {
    /// Three Gaussian wells plus quartic confinement on [−5, 5]: local
    /// minima at exactly −3.4, 0, +3.4 with the central well shallower
    /// than the outer ones (V(±3.4) ≈ −1.605, V(0) ≈ −1.517, barrier top
    /// ≈ −0.847).
    TripleWell1d,
    /// `(x² − 1)²`: minima at ±1 separated by a unit barrier.
    DoubleWell1d,
    /// Values tabulated at `n` evenly spaced points spanning `[lo, hi]`
    /// (endpoints included); evaluation is piecewise linear, the gradient
    /// piecewise constant.
    Tabulated { lo: f64, hi: f64, values: Vec<f64> },
    /// Separable polynomial `V(x) = Σ_axis p_axis(x_axis)` with `per_axis`
    /// holding the coefficients of each `p_axis` in ascending order.
    Polynomial { per_axis: Vec<Vec<f64>> },
}

impl Potential {
    /// The built-in triple well of the 1-D benchmark.
    pub fn triple_well() -> Self {
        Potential::TripleWell1d
    }

    pub fn double_well() -> Self {
        Potential::DoubleWell1d
    }

    /// V ≡ 0 in `dim` dimensions (free diffusion).
    pub fn zero(dim: usize) -> Self {
        Potential::Polynomial { per_axis: vec![Vec::new(); dim] }
    }

    pub fn polynomial_1d(coeffs: Vec<f64>) -> Self {
        Potential::Polynomial { per_axis: vec![coeffs] }
    }

    /// Dimension the form is pinned to, if any (tabulated and the named
    /// 1-D wells are one-dimensional; polynomials carry their own dim).
    pub fn dim(&self) -> usize {
        match self {
            Potential::TripleWell1d | Potential::DoubleWell1d | Potential::Tabulated { .. } => 1,
            Potential::Polynomial { per_axis } => per_axis.len(),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            Potential::TripleWell1d => {
                let t = x[0];
                TW_QUARTIC * t.powi(4)
                    + gauss_well(t, TW_OUTER_DEPTH, -TW_OUTER_CENTER, TW_WIDTH)
                    + gauss_well(t, TW_CENTER_DEPTH, 0.0, TW_WIDTH)
                    + gauss_well(t, TW_OUTER_DEPTH, TW_OUTER_CENTER, TW_WIDTH)
            }
            Potential::DoubleWell1d => {
                let t = x[0];
                let s = t * t - 1.0;
                s * s
            }
            Potential::Tabulated { lo, hi, values } => {
                let n = values.len();
                let t = ((x[0] - lo) / (hi - lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
                let k = (t as usize).min(n - 2);
                let frac = t - k as f64;
                values[k] * (1.0 - frac) + values[k + 1] * frac
            }
            Potential::Polynomial { per_axis } => per_axis
                .iter()
                .zip(x)
                .map(|(coeffs, &xi)| horner(coeffs, xi))
                .sum(),
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Potential::TripleWell1d => {
                let t = x[0];
                out[0] = 4.0 * TW_QUARTIC * t.powi(3)
                    + gauss_well_grad(t, TW_OUTER_DEPTH, -TW_OUTER_CENTER, TW_WIDTH)
                    + gauss_well_grad(t, TW_CENTER_DEPTH, 0.0, TW_WIDTH)
                    + gauss_well_grad(t, TW_OUTER_DEPTH, TW_OUTER_CENTER, TW_WIDTH);
            }
            Potential::DoubleWell1d => {
                let t = x[0];
                out[0] = 4.0 * t * (t * t - 1.0);
            }
            Potential::Tabulated { lo, hi, values } => {
                let n = values.len();
                let h = (hi - lo) / (n - 1) as f64;
                let t = ((x[0] - lo) / h).clamp(0.0, (n - 1) as f64);
                let k = (t as usize).min(n - 2);
                out[0] = (values[k + 1] - values[k]) / h;
            }
            Potential::Polynomial { per_axis } => {
                for (a, coeffs) in per_axis.iter().enumerate() {
                    out[a] = horner_derivative(coeffs, x[a]);
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.gradient_into(x, &mut out);
        out
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn horner_derivative(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * x + c * k as f64;
    }
    acc
}

/// Newton refinement of a local minimum of a 1-D potential from a seed,
/// using the analytic gradient and a finite-difference second derivative.
pub fn refine_minimum(potential: &Potential, seed: f64) -> f64 {
    let h = 1e-6;
    let grad = |x: f64| potential.gradient(&[x])[0];
    let mut x = seed;
    for _ in 0..100 {
        let g = grad(x);
        let hess = (grad(x + h) - grad(x - h)) / (2.0 * h);
        if hess.abs() < 1e-14 {
            break;
        }
        let step = g / hess;
        x -= step;
        if step.abs() < 1e-14 {
            break;
        }
    }
    x
}

/// Axis-aligned box domain with reflecting behavior left to solvers and
/// samplers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Domain {
    bounds: Vec<[f64; 2]>,
}

impl Domain {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(Error::InvalidProblem(format!(
                "domain must be 1- or 2-dimensional, got {}",
                bounds.len()
            )));
        }
        for b in &bounds {
            if !(b[0] < b[1]) {
                return Err(Error::InvalidProblem(format!(
                    "empty axis interval [{}, {}]",
                    b[0], b[1]
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![[lo, hi]])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(x)
            .all(|(b, &xi)| xi >= b[0] && xi <= b[1])
    }
}

/// Union of axis-aligned boxes; used for target sets and core sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    boxes: Vec<Vec<[f64; 2]>>,
}

impl Region {
    pub fn new(boxes: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::InvalidProblem("region must contain at least one box".into()));
        }
        let dim = boxes[0].len();
        for b in &boxes {
            if b.len() != dim {
                return Err(Error::InvalidProblem("mixed box dimensions in region".into()));
            }
            for iv in b {
                if !(iv[0] < iv[1]) {
                    return Err(Error::InvalidProblem(format!(
                        "empty region interval [{}, {}]",
                        iv[0], iv[1]
                    )));
                }
            }
        }
        Ok(Self { boxes })
    }

    /// Single 1-D interval.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![vec![[lo, hi]]])
    }

    /// Union of 1-D intervals.
    pub fn intervals(ivs: &[[f64; 2]]) -> Result<Self> {
        Self::new(ivs.iter().map(|iv| vec![*iv]).collect())
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].len()
    }

    pub fn boxes(&self) -> &[Vec<[f64; 2]>] {
        &self.boxes
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| {
            b.iter().zip(x).all(|(iv, &xi)| xi >= iv[0] && xi <= iv[1])
        })
    }

    /// True if every box lies strictly inside the domain interior.
    pub fn strictly_inside(&self, domain: &Domain) -> bool {
        self.boxes.iter().all(|b| {
            b.iter()
                .zip(domain.bounds())
                .all(|(iv, db)| iv[0] > db[0] && iv[1] < db[1])
        })
    }

    /// True if no point belongs to both regions (box-wise interval check).
    pub fn disjoint_from(&self, other: &Region) -> bool {
        self.boxes.iter().all(|a| {
            other.boxes.iter().all(|b| {
                a.iter()
                    .zip(b)
                    .any(|(ia, ib)| ia[1] < ib[0] || ib[1] < ia[0])
            })
        })
    }
}

/// Nonnegative running cost f.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RunningCost {
    /// f ≡ σ.
    Constant(f64),
    /// f(x) = f0 + f1·|x − center|².
    Quadratic { f0: f64, f1: f64, center: Vec<f64> },
}

impl RunningCost {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            RunningCost::Constant(sigma) => *sigma,
            RunningCost::Quadratic { f0, f1, center } => {
                let d2: f64 = center
                    .iter()
                    .zip(x)
                    .map(|(&c, &xi)| (xi - c) * (xi - c))
                    .sum();
                f0 + f1 * d2
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            RunningCost::Constant(sigma) => *sigma >= 0.0,
            RunningCost::Quadratic { f0, f1, .. } => *f0 >= 0.0 && *f1 >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidProblem("running cost must be nonnegative".into()))
        }
    }
}

/// A complete problem instance: dynamics, temperature, target set and
/// running cost.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlProblem {
    pub potential: Potential,
    pub domain: Domain,
    pub epsilon: f64,
    pub target: Region,
    pub running_cost: RunningCost,
}

impl ControlProblem {
    pub fn new(
        potential: Potential,
        domain: Domain,
        epsilon: f64,
        target: Region,
        running_cost: RunningCost,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidProblem(format!("epsilon must be positive, got {epsilon}")));
        }
        if potential.dim() != domain.dim() {
            return Err(Error::InvalidProblem(format!(
                "potential dimension {} does not match domain dimension {}",
                potential.dim(),
                domain.dim()
            )));
        }
        if target.dim() != domain.dim() {
            return Err(Error::InvalidProblem("target dimension does not match domain".into()));
        }
        if !target.strictly_inside(&domain) {
            return Err(Error::InvalidProblem(
                "target set must lie strictly inside the domain interior".into(),
            ));
        }
        running_cost.validate()?;
        Ok(Self { potential, domain, epsilon, target, running_cost })
    }

    /// The benchmark triple-well problem: domain [−5, 5], target core of
    /// radius 0.2 around the left minimum −3.4, constant cost σ.
    pub fn triple_well_benchmark(epsilon: f64, sigma: f64) -> Result<Self> {
        Self::new(
            Potential::triple_well(),
            Domain::interval(-5.0, 5.0)?,
            epsilon,
            Region::interval(-3.6, -3.2)?,
            RunningCost::Constant(sigma),
        )
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }
}

/// One uniform cell-centered axis: nodes at `lo + (k + 1/2)·h`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub h: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn node(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.h
    }
}

/// Uniform cell-centered grid with midpoint-rule quadrature against the
/// normalized Boltzmann measure. Node ordering is x-fastest:
/// `idx = ix + nx·iy`.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    axes: Vec<GridAxis>,
    weights: Vec<f64>,
    cell_volume: f64,
}

impl QuadratureGrid {
    /// Build the grid for a problem with requested spacing per axis. The
    /// spacing is adjusted to divide each axis span into a whole number of
    /// cells.
    pub fn new(problem: &ControlProblem, h: &[f64]) -> Result<Self> {
        Self::build(&problem.domain, &problem.potential, problem.epsilon, h)
    }

    /// Grid for arbitrary (domain, potential, ε) without a full problem.
    pub fn build(domain: &Domain, potential: &Potential, epsilon: f64, h: &[f64]) -> Result<Self> {
        if h.len() != domain.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} spacings, got {}",
                domain.dim(),
                h.len()
            )));
        }
        let mut axes = Vec::with_capacity(domain.dim());
        for (b, &ha) in domain.bounds().iter().zip(h) {
            if !(ha > 0.0) {
                return Err(Error::InvalidArgument("grid spacing must be positive".into()));
            }
            let span = b[1] - b[0];
            let n = (span / ha).round().max(1.0) as usize;
            axes.push(GridAxis { lo: b[0], h: span / n as f64, n });
        }
        let cell_volume: f64 = axes.iter().map(|a| a.h).product();
        let n_nodes: usize = axes.iter().map(|a| a.n).product();
        let mut weights = vec![0.0; n_nodes];
        let mut coords = vec![0.0; axes.len()];
        for (idx, w) in weights.iter_mut().enumerate() {
            node_coords(&axes, idx, &mut coords);
            *w = (-potential.evaluate(&coords) / epsilon).exp();
        }
        let z = pairwise_map_sum(n_nodes, |i| weights[i] * cell_volume);
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::DiscretizationFault(
                "Boltzmann normalization is zero or not finite".into(),
            ));
        }
        for w in &mut weights {
            *w /= z;
        }
        Ok(Self { axes, weights, cell_volume })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    /// Normalized Boltzmann weights: `Σ_i weights[i]·cell_volume = 1`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn node_into(&self, idx: usize, out: &mut [f64]) {
        node_coords(&self.axes, idx, out);
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_into(idx, &mut out);
        out
    }

    /// 1-D node coordinate.
    pub fn node_1d(&self, idx: usize) -> f64 {
        debug_assert_eq!(self.dim(), 1);
        self.axes[0].node(idx)
    }

    /// Evaluate a function at every node.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut coords = vec![0.0; self.dim()];
        (0..self.n_nodes())
            .map(|i| {
                node_coords(&self.axes, i, &mut coords);
                f(&coords)
            })
            .collect()
    }

    /// Mask of nodes lying inside a region.
    pub fn mask(&self, region: &Region) -> Vec<bool> {
        let mut coords = vec![0.0; self.dim()];
        (0..self.n_nodes())
            .map(|i| {
                node_coords(&self.axes, i, &mut coords);
                region.contains(&coords)
            })
            .collect()
    }

    /// μ-weighted inner product by the midpoint rule with pairwise
    /// summation. Lengths are the caller's responsibility; use
    /// [`inner_product_mu`] for the checked variant.
    pub fn dot(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.n_nodes());
        debug_assert_eq!(v.len(), self.n_nodes());
        let vol = self.cell_volume;
        pairwise_map_sum(self.n_nodes(), |i| u[i] * v[i] * self.weights[i] * vol)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.dot(u, u).sqrt()
    }

    /// ⟨u, 1⟩_μ.
    pub fn mean(&self, u: &[f64]) -> f64 {
        let vol = self.cell_volume;
        pairwise_map_sum(self.n_nodes(), |i| u[i] * self.weights[i] * vol)
    }

    /// μ-mass of a region (sum of node weights inside).
    pub fn measure(&self, region: &Region) -> f64 {
        let mask = self.mask(region);
        let vol = self.cell_volume;
        pairwise_map_sum(self.n_nodes(), |i| if mask[i] { self.weights[i] * vol } else { 0.0 })
    }

    /// Per-axis derivative of node values by central differences,
    /// one-sided at the domain boundary.
    pub fn gradient(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let nx = self.axes[0].n;
        match self.dim() {
            1 => vec![axis_gradient(u, 1, nx, self.axes[0].h, 0, 1)],
            2 => {
                let ny = self.axes[1].n;
                let mut gx = vec![0.0; u.len()];
                let mut gy = vec![0.0; u.len()];
                for iy in 0..ny {
                    let row = axis_gradient(u, 1, nx, self.axes[0].h, iy * nx, 1);
                    gx[iy * nx..(iy + 1) * nx].copy_from_slice(&row);
                }
                for ix in 0..nx {
                    let col = axis_gradient(u, nx, ny, self.axes[1].h, ix, nx);
                    for (iy, v) in col.iter().enumerate() {
                        gy[ix + iy * nx] = *v;
                    }
                }
                vec![gx, gy]
            }
            _ => unreachable!("domains are 1- or 2-dimensional"),
        }
    }
}

fn axis_gradient(u: &[f64], _stride: usize, n: usize, h: f64, base: usize, step: usize) -> Vec<f64> {
    let at = |k: usize| u[base + k * step];
    let mut g = vec![0.0; n];
    if n == 1 {
        return g;
    }
    g[0] = (at(1) - at(0)) / h;
    g[n - 1] = (at(n - 1) - at(n - 2)) / h;
    for k in 1..n - 1 {
        g[k] = (at(k + 1) - at(k - 1)) / (2.0 * h);
    }
    g
}

fn node_coords(axes: &[GridAxis], idx: usize, out: &mut [f64]) {
    let mut rem = idx;
    for (a, axis) in axes.iter().enumerate() {
        out[a] = axis.node(rem % axis.n);
        rem /= axis.n;
    }
}

/// ⟨u, v⟩_μ = Σ_i u_i v_i w_i vol_i with length checking.
pub fn inner_product_mu(grid: &QuadratureGrid, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != grid.n_nodes() || v.len() != grid.n_nodes() {
        return Err(Error::InvalidArgument(format!(
            "inner product length mismatch: grid has {} nodes, got {} and {}",
            grid.n_nodes(),
            u.len(),
            v.len()
        )));
    }
    Ok(grid.dot(u, v))
}
