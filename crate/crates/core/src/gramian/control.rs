//! Minimal-norm, H¹-regular and smoothing controls.
//!
//! Every solver works with the Gramian of the *sampled* moment problem (the
//! closed-form kernel times the trapezoid factor), so that the emitted samples
//! steer the Duhamel integrator to zero up to round-off rather than up to
//! quadrature error.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::moments::MomentSystem;
use super::{Gramian, NormConvention, SystemKind};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigenvalues, solve_hermitian, CMatrix, CVector};
use crate::spectral::{duhamel_schrodinger, ControlSignal, ModalOperator, ModalState, WaveState};

/// Gramians with a larger condition number are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Target value of `h·max|ν_k - ν_l|` for the default Schrödinger grid.
const SCHRODINGER_ALIASING: f64 = 0.5;
/// Same for the wave grid, where the samples also feed spatial pairings.
const WAVE_ALIASING: f64 = 0.1;
const MIN_INTERVALS: usize = 64;

/// Default number of time intervals on `[0, T]` for Schrödinger controls.
pub fn schrodinger_grid(op: &ModalOperator, horizon: f64) -> usize {
    let lam = op.eigenvalues();
    let spread = lam[lam.len() - 1] - lam[0];
    ((horizon * spread / SCHRODINGER_ALIASING).ceil() as usize).max(MIN_INTERVALS)
}

/// Default number of time intervals on `[0, T]` for wave controls.
pub fn wave_grid(op: &ModalOperator, horizon: f64) -> usize {
    let top = op.eigenvalues()[op.modes() - 1].sqrt();
    ((horizon * 2.0 * top / WAVE_ALIASING).ceil() as usize).max(MIN_INTERVALS)
}

/// A minimal-`L²` control together with its bookkeeping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HumControl {
    pub signal: ControlSignal,
    /// `∫|u|²` by the trapezoid rule.
    pub energy: f64,
    /// `κ_T·‖x_0‖²` in the Gramian's norm.
    pub bound: f64,
    pub condition: f64,
    /// Diagonal shift used in the solve, if any.
    pub regularization: Option<f64>,
}

fn check_grid(intervals: usize) -> Result<()> {
    if intervals < 2 {
        return Err(Error::invalid("grid", "at least two time intervals are required"));
    }
    Ok(())
}

fn check_condition(g: &Gramian) -> Result<()> {
    let condition = g.condition();
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned { condition });
    }
    Ok(())
}

fn solve_moments(sys: &MomentSystem, horizon: f64, intervals: usize) -> Result<(ControlSignal, Option<f64>)> {
    let h = horizon / intervals as f64;
    if sys.aliasing_ratio(h) >= std::f64::consts::PI {
        return Err(Error::GridMismatch(format!(
            "time step {h} aliases the spectrum; use at least {} intervals",
            (horizon * sys.aliasing_ratio(1.0) / SCHRODINGER_ALIASING).ceil()
        )));
    }
    let gd = sys.gram(horizon, Some(h));
    let lmax = hermitian_eigenvalues(&gd).last().copied().unwrap_or(0.0);
    let sol = solve_hermitian(&gd, &sys.target_vector(), lmax)
        .ok_or_else(|| Error::Infeasible("sampled Gramian is not positive definite".into()))?;
    Ok((sys.synthesize(&sol.x, horizon, intervals)?, sol.regularization))
}

fn finish(signal: ControlSignal, regularization: Option<f64>, g: &Gramian, data_norm_sq: f64) -> Result<HumControl> {
    Ok(HumControl {
        energy: signal.l2_norm_sq(),
        bound: g.cost()? * data_norm_sq,
        condition: g.condition(),
        regularization,
        signal,
    })
}

/// HUM control steering `initial` to zero over `[0, T]` for the Schrödinger
/// system. With a Gramian in `H_p` coordinates the data is measured in
/// `H_{-p}`, i.e. `x_n = λ_n^{-p/2} a_n`.
pub fn minimal_norm_control(
    g: &Gramian,
    op: &ModalOperator,
    initial: &ModalState,
    intervals: usize,
) -> Result<HumControl> {
    let p = match (g.kind(), g.norm()) {
        (SystemKind::Schrodinger, NormConvention::Sobolev(p)) => p,
        _ => return Err(Error::invalid("gramian", "expected a Schrödinger Gramian")),
    };
    if g.dim() != op.modes() || initial.coeffs.len() != op.modes() {
        return Err(Error::invalid("initial", "dimension does not match the operator"));
    }
    check_grid(intervals)?;
    let horizon = g.horizon();
    if initial.is_zero() {
        return finish(ControlSignal::zeros(0.0, horizon, intervals)?, None, g, 0.0);
    }
    check_condition(g)?;
    let modes: Vec<usize> = (0..op.modes()).collect();
    let sys = MomentSystem::schrodinger(op, initial, p, &modes);
    let (signal, reg) = solve_moments(&sys, horizon, intervals)?;
    finish(signal, reg, g, sys.target_norm_sq())
}

/// HUM control for the wave system. The data norm is `L² × H⁻¹`, dual to
/// the energy coordinates of `g`.
pub fn wave_minimal_norm_control(
    g: &Gramian,
    op: &ModalOperator,
    initial: &WaveState,
    intervals: usize,
) -> Result<HumControl> {
    if g.kind() != SystemKind::Wave || g.dim() != 2 * op.modes() {
        return Err(Error::invalid("gramian", "expected a wave Gramian of size 2N"));
    }
    check_grid(intervals)?;
    let horizon = g.horizon();
    if initial.is_zero() {
        return finish(ControlSignal::zeros(0.0, horizon, intervals)?, None, g, 0.0);
    }
    check_condition(g)?;
    let sys = MomentSystem::wave(op, initial);
    let (signal, reg) = solve_moments(&sys, horizon, intervals)?;
    finish(signal, reg, g, sys.target_norm_sq())
}

/// Minimal-`∫|v̇|²` wave control.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct H1Control {
    pub signal: ControlSignal,
    /// Discrete `∫|v̇|²`.
    pub seminorm_sq: f64,
    /// Condition number of the reduced constraint matrix.
    pub condition: f64,
}

/// Solves `T x = rhs` in place for `T = tridiag(-1, 2, -1)`.
fn solve_second_difference(rhs: &mut [Complex64]) {
    let n = rhs.len();
    // pivots of the LU factorization are (i+2)/(i+1)
    for i in 1..n {
        let prev = rhs[i - 1];
        rhs[i] += prev * (i as f64 / (i + 1) as f64);
    }
    for i in 0..n {
        rhs[i] *= (i + 1) as f64 / (i + 2) as f64;
    }
    for i in (0..n.saturating_sub(1)).rev() {
        let next = rhs[i + 1];
        rhs[i] += next * ((i + 1) as f64 / (i + 2) as f64);
    }
}

/// Minimizes the discrete `∫|v̇|²` over samples with `v(0) = v(T) = 0`
/// subject to the `2N` moment equations that steer the truncated wave system
/// from `initial` to rest at `T`.
pub fn h1_minimal_control(
    op: &ModalOperator,
    horizon: f64,
    initial: &WaveState,
    intervals: usize,
) -> Result<H1Control> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    if intervals < 3 {
        return Err(Error::invalid("grid", "at least three time intervals are required"));
    }
    if initial.position.len() != op.modes() || initial.velocity.len() != op.modes() {
        return Err(Error::invalid("initial", "dimension does not match the operator"));
    }
    if initial.is_zero() {
        return Ok(H1Control {
            signal: ControlSignal::zeros(0.0, horizon, intervals)?,
            seminorm_sq: 0.0,
            condition: 1.0,
        });
    }
    let h = horizon / intervals as f64;
    let sys = MomentSystem::wave(op, initial);
    let phi = sys.sampling_matrix(horizon, intervals);
    let k = sys.len();
    let inner = intervals - 1;
    // X = D⁻¹ Φ*, D = h⁻¹ tridiag(-1, 2, -1) on the interior samples
    let mut x = CMatrix::zeros(inner, k);
    let mut col = vec![Complex64::new(0.0, 0.0); inner];
    for r in 0..k {
        for (j, c) in col.iter_mut().enumerate() {
            *c = phi[(r, j + 1)].conj() * h;
        }
        solve_second_difference(&mut col);
        x.column_mut(r).copy_from_slice(&col);
    }
    let phi_inner = phi.columns(1, inner);
    let mut s = phi_inner * &x;
    crate::linalg::symmetrize(&mut s);
    let ev = hermitian_eigenvalues(&s);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > 1e14 {
        return Err(Error::Infeasible(format!(
            "moment constraints are numerically rank-deficient (condition {condition:.3e}); lengthen T or refine the grid"
        )));
    }
    let mult = solve_hermitian(&s, &sys.target_vector(), hi)
        .ok_or_else(|| Error::Infeasible("constraint matrix is not positive definite".into()))?;
    let v_inner: CVector = x * mult.x;
    let mut samples = Vec::with_capacity(intervals + 1);
    samples.push(Complex64::new(0.0, 0.0));
    samples.extend(v_inner.iter().copied());
    samples.push(Complex64::new(0.0, 0.0));
    let signal = ControlSignal::new(0.0, horizon, samples)?;
    Ok(H1Control {
        seminorm_sq: signal.h1_seminorm_sq(),
        signal,
        condition,
    })
}

/// Result of steering the high part of the spectrum to zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothingControl {
    pub signal: ControlSignal,
    /// Full truncated state at `T` (Duhamel).
    pub terminal: ModalState,
    /// `∫|u|²`.
    pub energy: f64,
    /// Cost `1/λ_min` of the high subsystem in the `H_1` Gramian norm, zero if
    /// the subsystem is empty.
    pub kappa: f64,
    /// Zero-based indices with `λ_n ≥ d/T²`.
    pub high_modes: Vec<usize>,
    pub threshold: f64,
}

/// `d` such that at `T = 1` the high subsystem is the top half of the spectrum.
pub fn default_smoothing_parameter(op: &ModalOperator) -> f64 {
    op.eigenvalues()[op.modes() / 2]
}

/// HUM on the spectral subsystem `{λ_n ≥ d/T²}`; the remaining modes evolve
/// under the same control.
pub fn smoothing_control(
    op: &ModalOperator,
    horizon: f64,
    d: f64,
    initial: &ModalState,
    intervals: usize,
) -> Result<SmoothingControl> {
    if !(horizon > 0.0 && horizon <= 1.0) {
        return Err(Error::invalid(
            "T",
            format!("smoothing horizon must lie in (0, 1], got {horizon}"),
        ));
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::invalid("d", format!("must be positive, got {d}")));
    }
    if initial.coeffs.len() != op.modes() {
        return Err(Error::invalid("initial", "dimension does not match the operator"));
    }
    check_grid(intervals)?;
    let threshold = d / (horizon * horizon);
    let high_modes: Vec<usize> = (0..op.modes()).filter(|&n| op.eigenvalues()[n] >= threshold).collect();
    let (signal, kappa) = if high_modes.is_empty() {
        (ControlSignal::zeros(0.0, horizon, intervals)?, 0.0)
    } else {
        let sys = MomentSystem::schrodinger(op, initial, 1, &high_modes);
        let g = Gramian::from_matrix(
            sys.gram(horizon, None),
            horizon,
            SystemKind::Schrodinger,
            NormConvention::Sobolev(1),
        );
        check_condition(&g)?;
        let signal = if sys.target_norm_sq() == 0.0 {
            ControlSignal::zeros(0.0, horizon, intervals)?
        } else {
            solve_moments(&sys, horizon, intervals)?.0
        };
        (signal, g.cost()?)
    };
    let terminal = duhamel_schrodinger(op, initial, &signal)?;
    Ok(SmoothingControl {
        energy: signal.l2_norm_sq(),
        signal,
        terminal,
        kappa,
        high_modes,
        threshold,
    })
}
