//! Small numerical kernels shared across modules: compensated summation,
//! tridiagonal and conjugate-gradient solvers, least-squares line fits and
//! exponentials of generator matrices.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Sum with pairwise recursion; the result is independent of thread
/// scheduling and accurate to O(log n) rounding errors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    pairwise_map_sum(xs.len(), |i| xs[i])
}

/// Pairwise summation of `f(0) + ... + f(n-1)` without materialising the
/// terms.
pub fn pairwise_map_sum(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= 32 {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, &f)
}

/// Tridiagonal matrix stored by bands: `diag[i] = A[i][i]`,
/// `upper[i] = A[i][i+1]`, `lower[i] = A[i+1][i]`.
#[derive(Debug, Clone)]
pub struct TriDiag {
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl TriDiag {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
            lower: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            y[i] = acc;
        }
    }

    /// Thomas algorithm. Stable for the diagonally dominant M-matrix
    /// systems assembled in this crate.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if rhs.len() != n {
            return Err(Error::InvalidArgument(format!(
                "rhs length {} does not match system size {n}",
                rhs.len()
            )));
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom == 0.0 {
            return Err(Error::SingularSystem("zero pivot in tridiagonal solve".into()));
        }
        if n > 1 {
            c[0] = self.upper[0] / denom;
        }
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.lower[i - 1] * c[i - 1];
            if denom == 0.0 {
                return Err(Error::SingularSystem(format!("zero pivot at row {i}")));
            }
            if i + 1 < n {
                c[i] = self.upper[i] / denom;
            }
            d[i] = (rhs[i] - self.lower[i - 1] * d[i - 1]) / denom;
        }
        let mut x = d;
        for i in (0..n.saturating_sub(1)).rev() {
            let next = x[i + 1];
            x[i] -= c[i] * next;
        }
        Ok(x)
    }
}

/// Compressed sparse row matrix; only what the 2-D grid operators need.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Build from per-row entry lists; columns within a row need not be sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in rows {
            for (j, v) in row {
                indices.push(j);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Self { n_rows, indptr, indices, data }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
    }
}

/// Jacobi-preconditioned conjugate gradient for a symmetric positive
/// definite operator given as a matvec closure. Returns the solution and
/// the iteration count.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let rhs_norm = pairwise_map_sum(n, |i| rhs[i] * rhs[i]).sqrt();
    if rhs_norm == 0.0 {
        return Ok((x, 0));
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..r.len() {
            z[i] = if diag[i] != 0.0 { r[i] / diag[i] } else { r[i] };
        }
    };
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = pairwise_map_sum(n, |i| r[i] * z[i]);
    let mut ap = vec![0.0; n];
    for iter in 0..max_iter {
        apply(&p, &mut ap);
        let pap = pairwise_map_sum(n, |i| p[i] * ap[i]);
        if pap <= 0.0 {
            return Err(Error::SingularSystem(
                "conjugate gradient hit a nonpositive curvature direction".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = pairwise_map_sum(n, |i| r[i] * r[i]).sqrt();
        if r_norm <= tol * rhs_norm {
            return Ok((x, iter + 1));
        }
        precond(&r, &mut z);
        let rz_new = pairwise_map_sum(n, |i| r[i] * z[i]);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence(format!(
        "conjugate gradient did not reach tol {tol} in {max_iter} iterations"
    )))
}

/// Least-squares straight line `y ≈ intercept + slope·x`.
/// Returns `(intercept, slope, max |residual|)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument("x/y length mismatch in line fit".into()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidArgument("line fit needs at least 2 points".into()));
    }
    let nf = n as f64;
    let sx = pairwise_sum(xs);
    let sy = pairwise_sum(ys);
    let sxx = pairwise_map_sum(n, |i| xs[i] * xs[i]);
    let sxy = pairwise_map_sum(n, |i| xs[i] * ys[i]);
    let det = nf * sxx - sx * sx;
    if det == 0.0 {
        return Err(Error::SingularSystem("degenerate abscissae in line fit".into()));
    }
    let slope = (nf * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / nf;
    let max_resid = (0..n)
        .map(|i| (ys[i] - intercept - slope * xs[i]).abs())
        .fold(0.0, f64::max);
    Ok((intercept, slope, max_resid))
}

/// Log-log order fit: slope of log(err) against log(h).
pub fn fit_order(hs: &[f64], errs: &[f64]) -> Result<f64> {
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.max(1e-300).ln()).collect();
    Ok(fit_line(&lx, &ly)?.1)
}

/// exp(t·G) for a generator matrix G (zero row sums, nonnegative
/// off-diagonals), computed by uniformization: with λ ≥ max_i |G_ii| and
/// P = I + G/λ the series e^{-λt} Σ_k (λt)^k/k! P^k has only nonnegative
/// terms, so no cancellation occurs.
pub fn expm_generator(g: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = g.nrows();
    let lambda = (0..n).map(|i| -g[(i, i)]).fold(0.0, f64::max);
    if lambda * t == 0.0 {
        return DMatrix::identity(n, n);
    }
    let p = DMatrix::identity(n, n) + g / lambda;
    let lt = lambda * t;
    let mut term = DMatrix::identity(n, n);
    let mut coeff = (-lt).exp();
    let mut sum = &term * coeff;
    let mut k = 1usize;
    loop {
        term = &term * &p;
        coeff *= lt / k as f64;
        sum += &term * coeff;
        // remaining Poisson mass bounds the truncation error
        if k as f64 > lt && coeff < 1e-16 {
            break;
        }
        k += 1;
        if k > 100_000 {
            break;
        }
    }
    sum
}

/// Apply exp(t·L) to a vector for a generator-like grid operator given as a
/// matvec closure, again by uniformization. `uniform_rate` must dominate
/// max_i |L_ii|.
pub fn exp_apply(
    apply: impl Fn(&[f64], &mut [f64]),
    uniform_rate: f64,
    t: f64,
    v: &[f64],
) -> Vec<f64> {
    let lt = uniform_rate * t;
    if lt == 0.0 {
        return v.to_vec();
    }
    let n = v.len();
    let mut term = v.to_vec();
    let mut coeff = (-lt).exp();
    let mut sum: Vec<f64> = term.iter().map(|x| x * coeff).collect();
    let mut scratch = vec![0.0; n];
    let mut k = 1usize;
    loop {
        // term <- P term with P = I + L/λ
        apply(&term, &mut scratch);
        for i in 0..n {
            term[i] += scratch[i] / uniform_rate;
        }
        coeff *= lt / k as f64;
        for i in 0..n {
            sum[i] += coeff * term[i];
        }
        if k as f64 > lt && coeff < 1e-16 {
            break;
        }
        k += 1;
        if k > 10_000_000 {
            break;
        }
    }
    sum
}

/// Dense LU solve with error mapping.
pub fn solve_dense(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("dense LU solve failed".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tridiagonal_solves_laplacian_system() {
        let n = 50;
        let mut m = TriDiag::zeros(n);
        for i in 0..n {
            m.diag[i] = 2.0;
            if i + 1 < n {
                m.upper[i] = -1.0;
                m.lower[i] = -1.0;
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut rhs = vec![0.0; n];
        m.apply(&x_true, &mut rhs);
        let x = m.solve(&rhs).unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], x_true[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn cg_matches_tridiagonal_solver() {
        let n = 80;
        let mut m = TriDiag::zeros(n);
        for i in 0..n {
            m.diag[i] = 2.5 + (i as f64 * 0.1).cos() * 0.3;
            if i + 1 < n {
                m.upper[i] = -1.0;
                m.lower[i] = -1.0;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let direct = m.solve(&rhs).unwrap();
        let (cg, _iters) =
            conjugate_gradient(|x, y| m.apply(x, y), &m.diag, &rhs, 1e-14, 10_000).unwrap();
        for i in 0..n {
            assert_relative_eq!(cg[i], direct[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn expm_of_two_state_generator_is_exact() {
        // exp(tG) for G = [[-a,a],[b,-b]] has the closed form
        // P(t) = pi + e^{-(a+b)t} (I - pi) with pi the rank-one stationary part.
        let (a, b, t) = (1.3, 0.4, 0.7);
        let g = DMatrix::from_row_slice(2, 2, &[-a, a, b, -b]);
        let p = expm_generator(&g, t);
        let s = a + b;
        let decay = (-s * t).exp();
        let expected = [
            (b + a * decay) / s,
            (a - a * decay) / s,
            (b - b * decay) / s,
            (a + b * decay) / s,
        ];
        for (idx, e) in expected.iter().enumerate() {
            assert_relative_eq!(p[(idx / 2, idx % 2)], *e, epsilon = 1e-13);
        }
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [5.0, 7.0, 9.0];
        let (b, m, r) = fit_line(&xs, &ys).unwrap();
        assert_relative_eq!(b, 3.0, epsilon = 1e-12);
        assert_relative_eq!(m, 2.0, epsilon = 1e-12);
        assert!(r < 1e-12);
    }
}
