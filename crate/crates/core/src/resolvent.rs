//! Resolvent observability estimates `‖x‖² ≤ M‖(A-λ)x‖² + m‖Cx‖²` for the
//! truncated Schrödinger system, their constants, and the cost they predict.
//!
//! All quantities are expressed in `H_p`-orthonormal coordinates, where `A`
//! is diagonal and `C` is the row `w_n = c_n λ_n^{-p/2}`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ModalOperator;

/// Points inserted strictly inside each spectral gap and each tail.
const POINTS_PER_GAP: usize = 10;
/// Relative distance below which `λ` is treated as an eigenvalue.
const SPECTRUM_TOL: f64 = 1e-12;

/// `(M, m) = (T²κ_T K_T, 2Tκ_T)`.
pub fn constants_from_observability(kappa: f64, admissibility: f64, horizon: f64) -> Result<(f64, f64)> {
    for (name, v) in [("kappa", kappa), ("K", admissibility), ("T", horizon)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    Ok((horizon * horizon * kappa * admissibility, 2.0 * horizon * kappa))
}

fn observation_row(op: &ModalOperator, p: i32) -> Vec<f64> {
    op.eigenvalues()
        .iter()
        .zip(op.obs_coeffs())
        .map(|(l, c)| c * l.powf(-0.5 * p as f64))
        .collect()
}

/// Resolvent test grid: the spectrum, the gap midpoints, `10` interior points
/// per gap, and `10` points in each of `[λ_1/2, λ_1)` and `(λ_N, 2λ_N]`.
pub fn lambda_grid(op: &ModalOperator) -> Vec<f64> {
    let lam = op.eigenvalues();
    let (lo, hi) = (lam[0] / 2.0, 2.0 * lam[lam.len() - 1]);
    let mut grid = lam.to_vec();
    let mut fill = |a: f64, b: f64| {
        for j in 1..=POINTS_PER_GAP {
            grid.push(a + (b - a) * j as f64 / (POINTS_PER_GAP + 1) as f64);
        }
    };
    fill(lo, lam[0]);
    fill(lam[lam.len() - 1], hi);
    for w in lam.windows(2) {
        fill(w[0], w[1]);
    }
    grid.extend(lam.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    grid.retain(|l| (lo..=hi).contains(l));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= SPECTRUM_TOL * b.abs());
    grid
}

/// Keeps every eigenvalue of `op` in `grid` and fills up to `count` points
/// with evenly indexed off-spectrum points.
pub fn thin_grid(op: &ModalOperator, grid: &[f64], count: usize) -> Vec<f64> {
    let (spectrum, rest): (Vec<f64>, Vec<f64>) = grid.iter().copied().partition(|&l| spectral_index(op, l).is_some());
    let room = count.saturating_sub(spectrum.len());
    let mut out = spectrum;
    if room > 0 && !rest.is_empty() {
        let take = room.min(rest.len());
        out.extend((0..take).map(|k| rest[k * rest.len() / take]));
    }
    out.sort_by(f64::total_cmp);
    out
}

fn spectral_index(op: &ModalOperator, lambda: f64) -> Option<usize> {
    op.eigenvalues()
        .iter()
        .position(|l| (l - lambda).abs() <= SPECTRUM_TOL * l.abs())
}

fn sym_max_eigenvalue(m: DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest `M` for which the estimate holds at `λ` on the truncated system;
/// `+∞` when no finite constant works.
pub fn minimal_m(op: &ModalOperator, p: i32, m: f64, lambda: f64) -> f64 {
    let w = observation_row(op, p);
    let lam = op.eigenvalues();
    let n = lam.len();
    // P = I - m w wᵀ; find the least M with P ⪯ M D², D = diag(λ_n - λ)
    let p_entry = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - m * w[i] * w[j];
    match spectral_index(op, lambda) {
        None => {
            let d: Vec<f64> = lam.iter().map(|l| l - lambda).collect();
            let q = DMatrix::from_fn(n, n, |i, j| p_entry(i, j) / (d[i] * d[j]));
            sym_max_eigenvalue(q).max(0.0)
        }
        Some(k) => {
            let pivot = m * w[k] * w[k] - 1.0;
            if n == 1 {
                return if pivot >= 0.0 { 0.0 } else { f64::INFINITY };
            }
            if pivot <= 0.0 {
                return f64::INFINITY;
            }
            // maximize over the kernel coordinate: Schur complement on the rest
            let rest: Vec<usize> = (0..n).filter(|&i| i != k).collect();
            let q = DMatrix::from_fn(n - 1, n - 1, |a, b| {
                let (i, j) = (rest[a], rest[b]);
                let s = p_entry(i, j) + p_entry(i, k) * p_entry(k, j) / pivot;
                s / ((lam[i] - lambda) * (lam[j] - lambda))
            });
            sym_max_eigenvalue(q).max(0.0)
        }
    }
}

/// `sup` of [`minimal_m`] over `grid` (a grid supremum, not a proven one).
pub fn grid_m(op: &ModalOperator, p: i32, m: f64, grid: &[f64]) -> f64 {
    grid.par_iter()
        .map(|&l| minimal_m(op, p, m, l))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Outcome of sampling the estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventReport {
    /// Largest `‖x‖² - M‖(A-λ)x‖² - m‖Cx‖²` over the sampled unit vectors.
    pub max_violation: f64,
    /// Same quantity maximized exactly over the unit sphere.
    pub exact_violation: f64,
    /// `λ` at which `max_violation` occurred.
    pub worst_lambda: f64,
    pub samples: usize,
}

impl ResolventReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_violation <= tol && self.exact_violation <= tol
    }
}

fn random_unit(rng: &mut impl Rng, lam: &[f64], lambda: Option<f64>) -> Vec<Complex64> {
    let mut x: Vec<Complex64> = lam
        .iter()
        .map(|l| {
            let z = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            match lambda {
                // concentrate the mass on modes near λ
                Some(c) => z / (1.0 + ((l - c) / lam[0]).powi(2)),
                None => z,
            }
        })
        .collect();
    let nrm = x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    for a in &mut x {
        *a /= nrm;
    }
    x
}

/// Samples the estimate with a `λ`-dependent `M(λ)`; half of the random unit
/// vectors are concentrated near `λ`.
pub fn verify_resolvent_profile(
    op: &ModalOperator,
    p: i32,
    m_of: impl Fn(f64) -> f64,
    m: f64,
    grid: &[f64],
    n_samples: usize,
    rng: &mut impl Rng,
) -> ResolventReport {
    let w = observation_row(op, p);
    let lam = op.eigenvalues();
    let mut report = ResolventReport {
        max_violation: f64::NEG_INFINITY,
        exact_violation: f64::NEG_INFINITY,
        worst_lambda: f64::NAN,
        samples: 0,
    };
    for &l in grid {
        let big_m = m_of(l);
        let slack = |x: &[Complex64]| {
            let res: f64 = x.iter().zip(lam).map(|(a, ln)| (ln - l).powi(2) * a.norm_sqr()).sum();
            let obs: Complex64 = x.iter().zip(&w).map(|(a, wn)| a * wn).sum();
            let norm: f64 = x.iter().map(|a| a.norm_sqr()).sum();
            norm - big_m * res - m * obs.norm_sqr()
        };
        for s in 0..n_samples {
            let x = random_unit(rng, lam, (s % 2 == 1).then_some(l));
            let v = slack(&x);
            if v > report.max_violation {
                report.max_violation = v;
                report.worst_lambda = l;
            }
        }
        report.samples += n_samples;
        let n = lam.len();
        let q = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j {
                1.0 - big_m * (lam[i] - l).powi(2)
            } else {
                0.0
            };
            diag - m * w[i] * w[j]
        });
        report.exact_violation = report.exact_violation.max(sym_max_eigenvalue(q));
    }
    report
}

/// Samples the estimate with constant `M`.
pub fn verify_resolvent(
    op: &ModalOperator,
    p: i32,
    big_m: f64,
    m: f64,
    grid: &[f64],
    n_samples: usize,
    rng: &mut impl Rng,
) -> ResolventReport {
    verify_resolvent_profile(op, p, |_| big_m, m, grid, n_samples, rng)
}

/// `φ(t) = sin^p(πt)` on `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub p: u32,
    /// `∫φ²`.
    pub int_sq: f64,
    /// `∫φ̇²`.
    pub int_deriv_sq: f64,
    /// `‖φ‖_∞²`.
    pub sup_sq: f64,
}

/// Bump exponents searched by [`best_bump`].
pub const BUMP_EXPONENTS: std::ops::RangeInclusive<u32> = 1..=8;

/// `∫_0^1 sin^k(πt) dt` for even `k`.
fn sin_power_integral(k: u32) -> f64 {
    (1..=k / 2).fold(1.0, |acc, j| acc * (2 * j - 1) as f64 / (2 * j) as f64)
}

impl BumpFunction {
    pub fn new(p: u32) -> Result<Self> {
        if !BUMP_EXPONENTS.contains(&p) {
            return Err(Error::invalid("p", format!("bump exponent must be in 1..=8, got {p}")));
        }
        let int_sq = sin_power_integral(2 * p);
        // φ̇² = p²π² sin^{2p-2} cos² = p²π²(sin^{2p-2} - sin^{2p})
        let int_deriv_sq = (p * p) as f64 * PI * PI * (sin_power_integral(2 * p - 2) - int_sq);
        Ok(Self {
            p,
            int_sq,
            int_deriv_sq,
            sup_sq: 1.0,
        })
    }

    pub fn value(&self, t: f64) -> f64 {
        (PI * t).sin().powi(self.p as i32)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let p = self.p as i32;
        p as f64 * PI * (PI * t).sin().powi(p - 1) * (PI * t).cos()
    }

    /// `∫φ̇² / ∫φ²`.
    pub fn rayleigh(&self) -> f64 {
        self.int_deriv_sq / self.int_sq
    }

    /// `ε = ∫φ̇²/∫φ² - π²`.
    pub fn epsilon(&self) -> f64 {
        self.rayleigh() - PI * PI
    }

    /// `C_ε = ‖φ‖_∞² / ∫φ²`.
    pub fn c_eps(&self) -> f64 {
        self.sup_sq / self.int_sq
    }
}

/// `C_ε m T / (T² - M·∫φ̇²/∫φ²)`.
pub fn predicted_cost(big_m: f64, m: f64, horizon: f64, bump: &BumpFunction) -> Result<f64> {
    let denom = horizon * horizon - big_m * bump.rayleigh();
    if !(denom > 0.0) {
        return Err(Error::BelowThreshold {
            threshold: (big_m * bump.rayleigh()).sqrt(),
        });
    }
    Ok(bump.c_eps() * m * horizon / denom)
}

/// The bump in the family giving the smallest predicted cost.
pub fn best_bump(big_m: f64, m: f64, horizon: f64) -> Result<(BumpFunction, f64)> {
    let mut best: Option<(BumpFunction, f64)> = None;
    let mut last_err = None;
    for p in BUMP_EXPONENTS {
        let b = BumpFunction::new(p)?;
        match predicted_cost(big_m, m, horizon, &b) {
            Ok(c) if best.is_none_or(|(_, bc)| c < bc) => best = Some((b, c)),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("bump family is nonempty"))
}

/// Both sides of the windowed estimate
/// `∫‖e^{itA}x‖²(χ² - Mχ̇²) ≤ m∫‖Ce^{itA}x‖²χ²` with `χ(t) = φ(t/T)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `(lhs - rhs) / max(|lhs|, |rhs|)`; nonpositive when the estimate holds.
    pub relative_slack: f64,
}

/// Evaluates the windowed estimate by composite Simpson quadrature with
/// `steps` (even) subintervals. `x0` is given in `H_p` coordinates.
#[allow(clippy::too_many_arguments)]
pub fn verify_conv_lemma(
    op: &ModalOperator,
    p: i32,
    x0: &[Complex64],
    horizon: f64,
    bump: &BumpFunction,
    big_m: f64,
    m: f64,
    steps: usize,
) -> Result<ConvReport> {
    if x0.len() != op.modes() {
        return Err(Error::invalid("x0", "dimension does not match the operator"));
    }
    let steps = steps.max(2) + steps % 2;
    let w = observation_row(op, p);
    let lam = op.eigenvalues();
    let h = horizon / steps as f64;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for j in 0..=steps {
        let t = j as f64 * h;
        let weight = if j == 0 || j == steps {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
        let s = t / horizon;
        let chi = bump.value(s);
        let dchi = bump.derivative(s) / horizon;
        let mut state = 0.0;
        let mut obs = Complex64::new(0.0, 0.0);
        for n in 0..lam.len() {
            let a = x0[n] * Complex64::from_polar(1.0, lam[n] * t);
            state += a.norm_sqr();
            obs += a * w[n];
        }
        lhs += weight * state * (chi * chi - big_m * dchi * dchi);
        rhs += weight * m * obs.norm_sqr() * chi * chi;
    }
    let scale = lhs.abs().max(rhs.abs());
    let relative_slack = if scale == 0.0 { 0.0 } else { (lhs - rhs) / scale };
    Ok(ConvReport {
        lhs,
        rhs,
        relative_slack,
    })
}

/// `M(λ)` sampled on a grid, with the envelope `|λ|^ε M(λ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventProfile {
    pub m: f64,
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub eps: f64,
}

impl ResolventProfile {
    /// Pointwise minimal constants over `grid`.
    pub fn minimal(op: &ModalOperator, p: i32, m: f64, grid: &[f64]) -> Self {
        let values = grid.par_iter().map(|&l| minimal_m(op, p, m, l)).collect();
        Self {
            m,
            lambdas: grid.to_vec(),
            values,
            eps: 0.0,
        }
    }

    /// Grid supremum of `M(λ)` ("grid-M").
    pub fn grid_sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.lambdas
            .iter()
            .zip(&self.values)
            .map(|(l, v)| l.abs().powf(self.eps) * v)
            .collect()
    }

    /// Value of the profile at a grid point.
    pub fn at(&self, lambda: f64) -> Option<f64> {
        self.lambdas
            .iter()
            .position(|&l| (l - lambda).abs() <= SPECTRUM_TOL * l.abs().max(1.0))
            .map(|k| self.values[k])
    }

    /// CSV body `lambda,M_lambda,envelope`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "lambda,M_lambda,envelope")?;
        for ((l, v), e) in self.lambdas.iter().zip(&self.values).zip(self.envelope()) {
            writeln!(out, "{:.16e},{},{}", l, fmt_extended(*v), fmt_extended(e))?;
        }
        Ok(())
    }
}

fn fmt_extended(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Schrödinger profile `M(λ) = M/|λ|`, `ε = 1`, obtained from resolvent
/// constants `(M, m)` of the first-order wave system.
pub fn wave_resolvent_to_schrodinger(big_m: f64, m: f64, grid: &[f64]) -> Result<ResolventProfile> {
    if !(big_m >= 0.0 && m > 0.0) {
        return Err(Error::invalid("M", "wave constants must satisfy M ≥ 0, m > 0"));
    }
    if grid.contains(&0.0) {
        return Err(Error::invalid("lambda", "the profile is singular at λ = 0"));
    }
    Ok(ResolventProfile {
        m,
        lambdas: grid.to_vec(),
        values: grid.iter().map(|l| big_m / l.abs()).collect(),
        eps: 1.0,
    })
}
