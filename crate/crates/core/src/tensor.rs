//! Finite-dimensional conservative systems and their Kronecker products with
//! an auxiliary unitary group.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian::{Gramian, NormConvention, SystemKind};
use crate::linalg::{exp_integral, hermitian_eigen, symmetrize, trapezoid_weights, CMatrix, CVector};
use crate::spectral::ModalOperator;

/// Largest product dimension accepted by [`kron_system`].
pub const MAX_PRODUCT_DIM: usize = 4096;
/// Gramians whose smallest eigenvalue is below this are not compared.
pub const UNTESTABLE_EIGENVALUE: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-14;

/// `ẋ = iHx`, `y = Cx`, with the Hilbert norm `‖x‖² = Σ w_i |x_i|²`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSystem {
    h: CMatrix,
    c: CMatrix,
    weights: Vec<f64>,
}

fn hermitian_defect(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm() / m.norm().max(1.0)
}

fn check_hermitian(name: &'static str, m: &CMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(name, "matrix must be square"));
    }
    let defect = hermitian_defect(m);
    if defect > HERMITIAN_TOL {
        return Err(Error::invalid(name, format!("not Hermitian (defect {defect:.3e})")));
    }
    Ok(())
}

impl MatrixSystem {
    pub fn new(h: CMatrix, c: CMatrix, weights: Vec<f64>) -> Result<Self> {
        check_hermitian("H", &h)?;
        let n = h.nrows();
        if c.ncols() != n {
            return Err(Error::invalid("C", format!("expected {n} columns, got {}", c.ncols())));
        }
        if weights.len() != n || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid(
                "weights",
                "need one positive weight per state coordinate",
            ));
        }
        let sys = Self { h, c, weights };
        // the group must also be unitary for the weighted norm
        let defect = hermitian_defect(&sys.orthonormal().0);
        if defect > 1e-12 {
            return Err(Error::invalid(
                "weights",
                format!("H is not self-adjoint in the weighted norm (defect {defect:.3e})"),
            ));
        }
        Ok(sys)
    }

    /// Unit weights.
    pub fn unweighted(h: CMatrix, c: CMatrix) -> Result<Self> {
        let n = h.nrows();
        Self::new(h, c, vec![1.0; n])
    }

    /// Truncated Schrödinger system in `H_p`-orthonormal coordinates.
    pub fn from_modal(op: &ModalOperator, p: i32) -> Self {
        let n = op.modes();
        let lam = op.eigenvalues();
        let h = CMatrix::from_diagonal(&CVector::from_iterator(n, lam.iter().map(|&l| Complex64::new(l, 0.0))));
        let c = CMatrix::from_iterator(
            1,
            n,
            lam.iter()
                .zip(op.obs_coeffs())
                .map(|(l, c)| Complex64::new(c * l.powf(-0.5 * p as f64), 0.0)),
        );
        Self {
            h,
            c,
            weights: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn generator(&self) -> &CMatrix {
        &self.h
    }

    pub fn observation(&self) -> &CMatrix {
        &self.c
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(W^{1/2} H W^{-1/2}, C W^{-1/2})`.
    fn orthonormal(&self) -> (CMatrix, CMatrix) {
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let h = CMatrix::from_fn(self.dim(), self.dim(), |i, j| self.h[(i, j)] * (s[i] / s[j]));
        let c = CMatrix::from_fn(self.c.nrows(), self.dim(), |i, j| self.c[(i, j)] / s[j]);
        (h, c)
    }
}

/// `H ⊗ I_m + I_n ⊗ Ã`, observation `C ⊗ I_m`, weights `w ⊗ 1`.
pub fn kron_system(base: &MatrixSystem, aux: &CMatrix) -> Result<MatrixSystem> {
    check_hermitian("aux", aux)?;
    let (n, m) = (base.dim(), aux.nrows());
    if n * m > MAX_PRODUCT_DIM {
        return Err(Error::invalid(
            "aux",
            format!("product dimension {} exceeds {MAX_PRODUCT_DIM}", n * m),
        ));
    }
    let id_m = CMatrix::identity(m, m);
    let id_n = CMatrix::identity(n, n);
    let h = base.h.kronecker(&id_m) + id_n.kronecker(aux);
    let c = base.c.kronecker(&id_m);
    let weights = base.weights.iter().flat_map(|&w| std::iter::repeat_n(w, m)).collect();
    Ok(MatrixSystem { h, c, weights })
}

/// `∫_0^T e^{-iHt} C*C e^{iHt} dt` in the orthonormal coordinates of the
/// weighted norm, from the eigendecomposition of `H` and the closed-form
/// exponential kernel.
pub fn matrix_gramian(sys: &MatrixSystem, horizon: f64) -> Result<Gramian> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    let (h, c) = sys.orthonormal();
    let mut hs = h;
    symmetrize(&mut hs);
    let (lam, v) = hermitian_eigen(&hs);
    let cv = &c * &v;
    let b = cv.adjoint() * &cv;
    let n = lam.len();
    let inner = CMatrix::from_fn(n, n, |i, j| b[(i, j)] * exp_integral(lam[j] - lam[i], horizon));
    let mut g = &v * inner * v.adjoint();
    symmetrize(&mut g);
    Ok(Gramian::from_matrix(
        g,
        horizon,
        SystemKind::Schrodinger,
        NormConvention::Sobolev(0),
    ))
}

/// Unitary flow `e^{iHt}` of a Hermitian matrix.
pub fn unitary_flow(h: &CMatrix, t: f64) -> CMatrix {
    let mut hs = h.clone();
    symmetrize(&mut hs);
    let (lam, v) = hermitian_eigen(&hs);
    let phases = CVector::from_iterator(lam.len(), lam.iter().map(|l| Complex64::from_polar(1.0, l * t)));
    &v * CMatrix::from_diagonal(&phases) * v.adjoint()
}

/// Trapezoid-rule Gramian with `steps` and `2·steps` intervals, combined by
/// one Richardson step. Used only to cross-check [`matrix_gramian`].
pub fn matrix_gramian_quadrature(sys: &MatrixSystem, horizon: f64, steps: usize) -> Result<CMatrix> {
    if steps < 1 {
        return Err(Error::invalid("quad_steps", "need at least one step"));
    }
    let (h, c) = sys.orthonormal();
    let trap = |m: usize| {
        let dt = horizon / m as f64;
        let step = unitary_flow(&h, dt);
        let w = trapezoid_weights(m, dt);
        let mut flow = CMatrix::identity(h.nrows(), h.nrows());
        let mut g = CMatrix::zeros(h.nrows(), h.nrows());
        for wj in w {
            let y = &c * &flow;
            g += y.adjoint() * y * Complex64::new(wj, 0.0);
            flow = &step * flow;
        }
        g
    };
    Ok((trap(2 * steps) * Complex64::new(4.0, 0.0) - trap(steps)) / Complex64::new(3.0, 0.0))
}

/// Comparison of the costs of a system and of its tensor product.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub kappa_base: f64,
    pub kappa_tensor: f64,
    pub rel_diff: f64,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// `|K_tensor - K_base| / K_base` for the admissibility constants.
    pub rel_diff_admissibility: f64,
}

pub fn verify_cost_invariance(base: &MatrixSystem, aux: &CMatrix, horizon: f64) -> Result<InvarianceReport> {
    let gb = matrix_gramian(base, horizon)?;
    if gb.lambda_min() < UNTESTABLE_EIGENVALUE {
        return Err(Error::Unobservable {
            lambda_min: gb.lambda_min(),
        });
    }
    let gt = matrix_gramian(&kron_system(base, aux)?, horizon)?;
    let kappa_base = gb.cost()?;
    let kappa_tensor = gt.cost()?;
    Ok(InvarianceReport {
        kappa_base,
        kappa_tensor,
        rel_diff: (kappa_tensor - kappa_base).abs() / kappa_base,
        n: base.dim(),
        m: aux.nrows(),
        horizon,
        rel_diff_admissibility: (gt.lambda_max() - gb.lambda_max()).abs() / gb.lambda_max(),
    })
}

/// `(‖(C⊗I)e^{it(H⊕Ã)}(x⊗x̃)‖, ‖Ce^{itH}x‖·‖e^{itÃ}x̃‖)` for an unweighted base.
pub fn product_output_norms(
    base: &MatrixSystem,
    aux: &CMatrix,
    x: &CVector,
    x_aux: &CVector,
    t: f64,
) -> Result<(f64, f64)> {
    if base.weights.iter().any(|&w| w != 1.0) {
        return Err(Error::invalid(
            "weights",
            "product law is checked on unweighted systems",
        ));
    }
    let prod = kron_system(base, aux)?;
    let z = x.kronecker(x_aux);
    let lhs = (&prod.c * unitary_flow(&prod.h, t) * z).norm();
    let rhs = (&base.c * unitary_flow(&base.h, t) * x).norm() * (unitary_flow(aux, t) * x_aux).norm();
    Ok((lhs, rhs))
}

/// Hermitian `m×m` matrix with entries uniform in the unit square.
pub fn random_hermitian(rng: &mut impl Rng, m: usize) -> CMatrix {
    let a = CMatrix::from_fn(m, m, |_, _| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let mut h = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
    symmetrize(&mut h);
    h
}

/// Diagonal generator with gaps in `[gap, 1.25·gap)` and a single observation
/// row of moduli in `[0.5, 1.5)` with random phases.
pub fn random_diagonal_system(rng: &mut impl Rng, n: usize, gap: f64) -> Result<MatrixSystem> {
    let mut level = 0.0;
    let diag: Vec<Complex64> = (0..n)
        .map(|_| {
            level += gap * (1.0 + 0.25 * rng.random::<f64>());
            Complex64::new(level, 0.0)
        })
        .collect();
    let c = CMatrix::from_fn(1, n, |_, _| {
        Complex64::from_polar(rng.random_range(0.5..1.5), rng.random_range(0.0..std::f64::consts::TAU))
    });
    MatrixSystem::unweighted(CMatrix::from_diagonal(&CVector::from_vec(diag)), c)
}
