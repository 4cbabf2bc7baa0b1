//! Exponential moment problems.
//!
//! Both conservative systems reduce, mode by mode, to constraints of the form
//! `∫_0^T γ_k e^{-iν_k s} u(s) ds = y_k`. Steering a truncated state to zero
//! is exactly such a finite moment problem, which is what the HUM, H¹ and
//! smoothing solvers consume.

use std::f64::consts::SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::Result;
use crate::linalg::{exp_integral, trapezoid_factor, trapezoid_weights, CMatrix, CVector};
use crate::spectral::{ControlSignal, ModalOperator, ModalState, WaveState};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Debug)]
pub(crate) struct MomentSystem {
    pub nus: Vec<f64>,
    pub gammas: Vec<Complex64>,
    pub targets: Vec<Complex64>,
}

impl MomentSystem {
    /// Zero-steering conditions of the Schrödinger system restricted to
    /// `modes`, weighted so that `y` lives in `H_{-p}`-orthonormal coordinates.
    pub fn schrodinger(op: &ModalOperator, initial: &ModalState, p: i32, modes: &[usize]) -> Self {
        let lam = op.eigenvalues();
        let c = op.obs_coeffs();
        let mut sys = Self::with_capacity(modes.len());
        for &n in modes {
            let w = lam[n].powf(-0.5 * p as f64);
            sys.nus.push(lam[n]);
            sys.gammas.push(Complex64::new(c[n] * w, 0.0));
            sys.targets.push(-initial.coeffs[n] * w);
        }
        sys
    }

    /// Zero-steering conditions of the wave system. Each mode contributes a
    /// pair of constraints at frequencies `∓ω_n`; the targets are the data in
    /// `L² × H⁻¹`-orthonormal coordinates.
    pub fn wave(op: &ModalOperator, initial: &WaveState) -> Self {
        let omega = op.frequencies();
        let c = op.obs_coeffs();
        let mut sys = Self::with_capacity(2 * omega.len());
        for (n, &w) in omega.iter().enumerate() {
            let (a, b) = (initial.position[n], initial.velocity[n]);
            let g = c[n] / (w * SQRT_2);
            sys.nus.push(-w);
            sys.gammas.push(-I * g);
            sys.targets.push((a + I * b / w) / SQRT_2);
            sys.nus.push(w);
            sys.gammas.push(I * g);
            sys.targets.push((a - I * b / w) / SQRT_2);
        }
        sys
    }

    fn with_capacity(n: usize) -> Self {
        Self {
            nus: Vec::with_capacity(n),
            gammas: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nus.len()
    }

    pub fn target_vector(&self) -> CVector {
        CVector::from_column_slice(&self.targets)
    }

    pub fn target_norm_sq(&self) -> f64 {
        self.targets.iter().map(|y| y.norm_sqr()).sum()
    }

    /// Moment Gramian `Γ_kl = γ_k γ̄_l ∫_0^T e^{i(ν_l-ν_k)t} dt`. With
    /// `step = Some(h)` each entry is multiplied by the trapezoid factor, which
    /// gives exactly the Gramian of the sampled problem on that grid.
    pub fn gram(&self, horizon: f64, step: Option<f64>) -> CMatrix {
        let n = self.len();
        let mut g = CMatrix::zeros(n, n);
        for k in 0..n {
            for l in k..n {
                let delta = self.nus[l] - self.nus[k];
                let mut e = exp_integral(delta, horizon);
                if let Some(h) = step {
                    e *= trapezoid_factor(delta, h);
                }
                let v = self.gammas[k] * self.gammas[l].conj() * e;
                g[(k, l)] = v;
                g[(l, k)] = v.conj();
            }
            g[(k, k)].im = 0.0;
        }
        g
    }

    /// Largest `|ν_k - ν_l| h`; the sampled problem is a faithful copy of
    /// the continuous one while this stays well below `π`.
    pub fn aliasing_ratio(&self, step: f64) -> f64 {
        let lo = self.nus.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.nus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) * step
    }

    /// `u(t) = Σ_k γ̄_k e^{iν_k t} q_k` sampled on `intervals + 1` points of `[0, T]`.
    pub fn synthesize(&self, q: &CVector, horizon: f64, intervals: usize) -> Result<ControlSignal> {
        let h = horizon / intervals as f64;
        let coef: Vec<Complex64> = self.gammas.iter().zip(q.iter()).map(|(g, q)| g.conj() * q).collect();
        let step: Vec<Complex64> = self.nus.iter().map(|nu| Complex64::from_polar(1.0, nu * h)).collect();
        let mut phase = vec![Complex64::new(1.0, 0.0); self.len()];
        let mut samples = Vec::with_capacity(intervals + 1);
        for j in 0..=intervals {
            if j % 256 == 0 {
                // resynchronise the running phases to avoid drift
                let t = j as f64 * h;
                for (p, nu) in phase.iter_mut().zip(&self.nus) {
                    *p = Complex64::from_polar(1.0, nu * t);
                }
            }
            samples.push(coef.iter().zip(&phase).map(|(a, p)| a * p).sum());
            for (p, s) in phase.iter_mut().zip(&step) {
                *p *= s;
            }
        }
        ControlSignal::new(0.0, horizon, samples)
    }

    /// Discrete moment operator on a sampled signal: row `k`, column `j` is
    /// `w_j γ_k e^{-iν_k t_j}` with trapezoid weights `w`.
    pub fn sampling_matrix(&self, horizon: f64, intervals: usize) -> CMatrix {
        let h = horizon / intervals as f64;
        let w = trapezoid_weights(intervals, h);
        DMatrix::from_fn(self.len(), intervals + 1, |k, j| {
            w[j] * self.gammas[k] * Complex64::from_polar(1.0, -self.nus[k] * j as f64 * h)
        })
    }
}
