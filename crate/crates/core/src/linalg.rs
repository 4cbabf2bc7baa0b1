//! Small dense linear-algebra helpers shared by the Gramian, resolvent and
//! tensor code. Everything works on `DMatrix<Complex64>`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Relative Tikhonov shift used when a plain Cholesky factorization fails.
pub const TIKHONOV_SHIFT: f64 = 1e-14;

/// `∫_0^T e^{iΔt} dt`, evaluated without cancellation for small `Δ`.
pub fn exp_integral(delta: f64, horizon: f64) -> Complex64 {
    let half = 0.5 * delta * horizon;
    if half.abs() < 1e-8 {
        // sin(x)/x ≈ 1 - x²/6 to full precision here
        let sinc = 1.0 - half * half / 6.0;
        return Complex64::from_polar(horizon * sinc, half);
    }
    Complex64::from_polar(2.0 * half.sin() / delta, half)
}

/// Ratio between the composite trapezoid rule on a grid of step `h` and the
/// exact integral of `e^{iΔt}` over a whole number of steps: `x cot x` with
/// `x = Δh/2`.
pub fn trapezoid_factor(delta: f64, step: f64) -> f64 {
    let x = 0.5 * delta * step;
    if x.abs() < 1e-6 {
        1.0 - x * x / 3.0
    } else {
        x / x.tan()
    }
}

/// Composite trapezoid weights for `intervals` steps of size `step`.
pub fn trapezoid_weights(intervals: usize, step: f64) -> Vec<f64> {
    let mut w = vec![step; intervals + 1];
    w[0] = 0.5 * step;
    w[intervals] = 0.5 * step;
    w
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Ascending eigenpairs of a Hermitian matrix; column `k` of the returned
/// matrix is the eigenvector of the `k`-th eigenvalue.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Forces exact Hermitian symmetry (averages the two triangles).
pub fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

/// Result of a Hermitian positive-definite solve.
#[derive(Clone, Debug)]
pub struct HermitianSolution {
    pub x: CVector,
    /// Diagonal shift that had to be added, if the plain factorization failed.
    pub regularization: Option<f64>,
}

/// Solves `G x = b` by Cholesky, falling back to `G + μI` with
/// `μ = 1e-14·λ_max` when `G` is numerically indefinite. One step of
/// iterative refinement against the unshifted matrix follows.
pub fn solve_hermitian(g: &CMatrix, b: &CVector, lambda_max: f64) -> Option<HermitianSolution> {
    let (chol, regularization) = match Cholesky::new(g.clone()) {
        Some(c) => (c, None),
        None => {
            let mu = TIKHONOV_SHIFT * lambda_max.abs().max(f64::MIN_POSITIVE);
            let shifted = g + CMatrix::identity(g.nrows(), g.ncols()) * Complex64::new(mu, 0.0);
            (Cholesky::new(shifted)?, Some(mu))
        }
    };
    let mut x = chol.solve(b);
    if regularization.is_none() {
        let r = b - g * &x;
        x += chol.solve(&r);
    }
    Some(HermitianSolution { x, regularization })
}
