//! Modal representation of `A = -∂²` on a segment `[0, L]`.
//!
//! The operator carries a Dirichlet condition at `s = L` (where the boundary
//! control acts) and either a Dirichlet or a Neumann condition at `s = 0`.
//! States are coefficient vectors in the `L²`-orthonormal eigenbasis `e_n`,
//! and the observation is `C f = ∂_s f(L)`, so `c_n = e_n'(L)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian::{schrodinger_gramian, wave_gramian, SystemKind};
use crate::linalg::trapezoid_weights;

/// Default truncation dimension.
pub const DEFAULT_MODES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryCondition::Dirichlet => f.write_str("dirichlet"),
            BoundaryCondition::Neumann => f.write_str("neumann"),
        }
    }
}

/// Truncated eigen-data of `-∂²` on `[0, L]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalOperator {
    length: f64,
    bc_left: BoundaryCondition,
    eigenvalues: Vec<f64>,
    obs_coeffs: Vec<f64>,
}

impl ModalOperator {
    pub fn new(length: f64, bc_left: BoundaryCondition, modes: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::invalid(
                "L",
                format!("segment length must be positive, got {length}"),
            ));
        }
        if modes == 0 {
            return Err(Error::invalid("N", "mode count must be at least 1"));
        }
        let norm = (2.0 / length).sqrt();
        let (eigenvalues, obs_coeffs) = (1..=modes)
            .map(|n| {
                let k = wavenumber(length, bc_left, n);
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                (k * k, sign * norm * k)
            })
            .unzip();
        Ok(Self {
            length,
            bc_left,
            eigenvalues,
            obs_coeffs,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn bc_left(&self) -> BoundaryCondition {
        self.bc_left
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `c_n = ∂_s e_n(L)`.
    pub fn obs_coeffs(&self) -> &[f64] {
        &self.obs_coeffs
    }

    /// Wave frequencies `ω_n = √λ_n`.
    pub fn frequencies(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.sqrt()).collect()
    }

    /// Value of the `n`-th (zero-based) eigenfunction at `s`.
    pub fn eigenfunction(&self, n: usize, s: f64) -> f64 {
        let k = wavenumber(self.length, self.bc_left, n + 1);
        let norm = (2.0 / self.length).sqrt();
        match self.bc_left {
            BoundaryCondition::Dirichlet => norm * (k * s).sin(),
            BoundaryCondition::Neumann => norm * (k * s).cos(),
        }
    }

    /// Pointwise value of the truncated eigenexpansion of `state`.
    pub fn point_value(&self, state: &ModalState, s: f64) -> Complex64 {
        state
            .coeffs
            .iter()
            .enumerate()
            .map(|(n, a)| a * self.eigenfunction(n, s))
            .sum()
    }

    /// `‖x‖_p = (Σ λ_n^p |a_n|²)^{1/2}`.
    pub fn sobolev_norm(&self, state: &ModalState) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&state.coeffs)
            .map(|(l, a)| l.powi(state.index) * a.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Norm of a wave state in its declared convention.
    pub fn wave_norm(&self, state: &WaveState) -> f64 {
        let mut acc = 0.0;
        for ((l, a), b) in self.eigenvalues.iter().zip(&state.position).zip(&state.velocity) {
            acc += match state.convention {
                WaveConvention::Energy => l * a.norm_sqr() + b.norm_sqr(),
                WaveConvention::Dual => a.norm_sqr() + b.norm_sqr() / l,
            };
        }
        acc.sqrt()
    }

    /// Coefficients of the Dirac mass at `s = 0`, `a_n = e_n(0)`, as an `H_{-1}` state.
    pub fn delta_coefficients(&self) -> ModalState {
        let coeffs = (0..self.modes())
            .map(|n| Complex64::new(self.eigenfunction(n, 0.0), 0.0))
            .collect();
        ModalState { coeffs, index: -1 }
    }

    /// Free Schrödinger flow `a_n ↦ e^{iλ_n t} a_n`.
    pub fn propagate_schrodinger(&self, state: &ModalState, t: f64) -> ModalState {
        let coeffs = self
            .eigenvalues
            .iter()
            .zip(&state.coeffs)
            .map(|(l, a)| a * Complex64::from_polar(1.0, l * t))
            .collect();
        ModalState {
            coeffs,
            index: state.index,
        }
    }

    /// Free wave flow, mode by mode.
    pub fn propagate_wave(&self, state: &WaveState, t: f64) -> WaveState {
        let mut out = state.clone();
        for (n, w) in self.frequencies().into_iter().enumerate() {
            let (s, c) = (w * t).sin_cos();
            let (a, b) = (state.position[n], state.velocity[n]);
            out.position[n] = a * c + b * (s / w);
            out.velocity[n] = -a * (w * s) + b * c;
        }
        out
    }

    fn check_len(&self, name: &'static str, len: usize) -> Result<()> {
        if len != self.modes() {
            return Err(Error::invalid(
                name,
                format!("expected {} coefficients, got {len}", self.modes()),
            ));
        }
        Ok(())
    }
}

fn wavenumber(length: f64, bc: BoundaryCondition, n: usize) -> f64 {
    match bc {
        BoundaryCondition::Dirichlet => n as f64 * PI / length,
        BoundaryCondition::Neumann => (n as f64 - 0.5) * PI / length,
    }
}

/// Coefficients in the eigenbasis, tagged with the Sobolev index of the norm
/// they are measured in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalState {
    pub coeffs: Vec<Complex64>,
    pub index: i32,
}

impl ModalState {
    pub fn new(coeffs: Vec<Complex64>, index: i32) -> Self {
        Self { coeffs, index }
    }

    pub fn zeros(modes: usize, index: i32) -> Self {
        Self {
            coeffs: vec![Complex64::new(0.0, 0.0); modes],
            index,
        }
    }

    pub fn from_real(coeffs: &[f64], index: i32) -> Self {
        Self {
            coeffs: coeffs.iter().map(|&a| Complex64::new(a, 0.0)).collect(),
            index,
        }
    }

    pub fn with_index(mut self, index: i32) -> Self {
        self.index = index;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|a| *a == Complex64::new(0.0, 0.0))
    }

    /// `⟨self, other⟩_{L²}` summed over the common modes (linear in `self`).
    pub fn pairing(&self, other: &ModalState) -> Complex64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b.conj()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveConvention {
    /// `H¹ × L²`: `Σ λ_n|a_n|² + |b_n|²`.
    Energy,
    /// `L² × H⁻¹`: `Σ |a_n|² + λ_n⁻¹|b_n|²`.
    Dual,
}

/// Position/velocity coefficients of the second-order system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveState {
    pub position: Vec<Complex64>,
    pub velocity: Vec<Complex64>,
    pub convention: WaveConvention,
}

impl WaveState {
    pub fn new(position: Vec<Complex64>, velocity: Vec<Complex64>, convention: WaveConvention) -> Self {
        Self {
            position,
            velocity,
            convention,
        }
    }

    pub fn zeros(modes: usize, convention: WaveConvention) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); modes];
        Self {
            position: z.clone(),
            velocity: z,
            convention,
        }
    }

    /// Starts at rest from `position`.
    pub fn at_rest(position: &ModalState, convention: WaveConvention) -> Self {
        Self {
            position: position.coeffs.clone(),
            velocity: vec![Complex64::new(0.0, 0.0); position.coeffs.len()],
            convention,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.position
            .iter()
            .chain(&self.velocity)
            .all(|a| *a == Complex64::new(0.0, 0.0))
    }
}

/// Boundary input sampled on a uniform grid that includes both endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSignal {
    t_start: f64,
    t_end: f64,
    samples: Vec<Complex64>,
}

impl ControlSignal {
    pub fn new(t_start: f64, t_end: f64, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("samples", "a control signal needs at least two samples"));
        }
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::invalid(
                "t_end",
                format!("empty time window [{t_start}, {t_end}]"),
            ));
        }
        Ok(Self {
            t_start,
            t_end,
            samples,
        })
    }

    pub fn zeros(t_start: f64, t_end: f64, intervals: usize) -> Result<Self> {
        Self::new(t_start, t_end, vec![Complex64::new(0.0, 0.0); intervals + 1])
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(t_start: f64, t_end: f64, intervals: usize, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let h = (t_end - t_start) / intervals.max(1) as f64;
        let samples = (0..=intervals).map(|j| f(t_start + j as f64 * h)).collect();
        Self::new(t_start, t_end, samples)
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn intervals(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.duration() / self.intervals() as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t_start + j as f64 * self.step()
    }

    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(self.intervals(), self.step())
    }

    /// `∫|u|²` by the trapezoid rule.
    pub fn l2_norm_sq(&self) -> f64 {
        self.weights()
            .iter()
            .zip(&self.samples)
            .map(|(w, u)| w * u.norm_sqr())
            .sum()
    }

    /// `∫|u̇|²` of the piecewise-linear interpolant.
    pub fn h1_seminorm_sq(&self) -> f64 {
        let h = self.step();
        self.samples.windows(2).map(|p| (p[1] - p[0]).norm_sqr()).sum::<f64>() / h
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|u| u.norm()).fold(0.0, f64::max)
    }

    /// Endpoint samples vanish (relative to the signal's peak).
    pub fn is_h1_regular(&self, tol: f64) -> bool {
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let last = self.samples[self.samples.len() - 1];
        self.samples[0].norm() <= tol * scale && last.norm() <= tol * scale
    }

    /// Same samples on a translated window.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            t_start: self.t_start + offset,
            t_end: self.t_end + offset,
            samples: self.samples.clone(),
        }
    }
}

/// Integrates `ȧ_n = iλ_n a_n + c_n u(t)` over the window of `u` with exact
/// free flow per step and trapezoidal forcing, calling `visit(j, a(t_j))` at
/// every grid point. Returns the terminal state.
pub fn duhamel_schrodinger_visit(
    op: &ModalOperator,
    initial: &ModalState,
    u: &ControlSignal,
    mut visit: impl FnMut(usize, &[Complex64]),
) -> Result<ModalState> {
    op.check_len("initial", initial.coeffs.len())?;
    let h = u.step();
    let phase: Vec<Complex64> = op
        .eigenvalues()
        .iter()
        .map(|l| Complex64::from_polar(1.0, l * h))
        .collect();
    let c = op.obs_coeffs();
    let mut a = initial.coeffs.clone();
    visit(0, &a);
    for (j, pair) in u.samples().windows(2).enumerate() {
        let (u0, u1) = (pair[0], pair[1]);
        for n in 0..a.len() {
            let e = phase[n];
            a[n] = e * a[n] + (0.5 * h * c[n]) * (e * u0 + u1);
        }
        visit(j + 1, &a);
    }
    Ok(ModalState {
        coeffs: a,
        index: initial.index,
    })
}

/// Terminal Schrödinger state driven by `u` from `initial` at `u.t_start()`.
pub fn duhamel_schrodinger(op: &ModalOperator, initial: &ModalState, u: &ControlSignal) -> Result<ModalState> {
    duhamel_schrodinger_visit(op, initial, u, |_, _| {})
}

/// Integrates `ä_n + λ_n a_n = c_n v(t)` with exact rotation per step and
/// trapezoidal forcing, calling `visit(j, position, velocity)` at every grid point.
pub fn duhamel_wave_visit(
    op: &ModalOperator,
    initial: &WaveState,
    v: &ControlSignal,
    mut visit: impl FnMut(usize, &[Complex64], &[Complex64]),
) -> Result<WaveState> {
    op.check_len("initial.position", initial.position.len())?;
    op.check_len("initial.velocity", initial.velocity.len())?;
    let h = v.step();
    let omega = op.frequencies();
    let rot: Vec<(f64, f64)> = omega.iter().map(|w| (w * h).sin_cos()).collect();
    let c = op.obs_coeffs();
    let mut a = initial.position.clone();
    let mut b = initial.velocity.clone();
    visit(0, &a, &b);
    for (j, pair) in v.samples().windows(2).enumerate() {
        let (v0, v1) = (pair[0], pair[1]);
        for n in 0..a.len() {
            let (s, co) = rot[n];
            let w = omega[n];
            let f0 = c[n] * v0;
            let a_next = a[n] * co + b[n] * (s / w) + (0.5 * h) * f0 * (s / w);
            let b_next = -a[n] * (w * s) + b[n] * co + (0.5 * h) * (f0 * co + c[n] * v1);
            a[n] = a_next;
            b[n] = b_next;
        }
        visit(j + 1, &a, &b);
    }
    Ok(WaveState {
        position: a,
        velocity: b,
        convention: initial.convention,
    })
}

/// Terminal wave state driven by `v` from `initial` at `v.t_start()`.
pub fn duhamel_wave(op: &ModalOperator, initial: &WaveState, v: &ControlSignal) -> Result<WaveState> {
    duhamel_wave_visit(op, initial, v, |_, _, _| {})
}

/// Largest per-step residual of the discrete weak form
/// `(a_{j+1}-a_j)/h = iλ(a_j+a_{j+1})/2 + c(u_j+u_{j+1})/2`
/// along the Duhamel trajectory of mode `mode`.
pub fn weak_form_residual(op: &ModalOperator, initial: &ModalState, u: &ControlSignal, mode: usize) -> Result<f64> {
    if mode >= op.modes() {
        return Err(Error::invalid("mode", format!("mode {mode} outside 0..{}", op.modes())));
    }
    let mut traj = Vec::with_capacity(u.samples().len());
    duhamel_schrodinger_visit(op, initial, u, |_, a| traj.push(a[mode]))?;
    let (h, lam, c) = (u.step(), op.eigenvalues()[mode], op.obs_coeffs()[mode]);
    let i = Complex64::new(0.0, 1.0);
    let us = u.samples();
    Ok(traj
        .windows(2)
        .zip(us.windows(2))
        .map(|(a, w)| {
            let lhs = (a[1] - a[0]) / h;
            let rhs = i * lam * 0.5 * (a[0] + a[1]) + c * 0.5 * (w[0] + w[1]);
            (lhs - rhs).norm()
        })
        .fold(0.0, f64::max))
}

/// `K_T`: largest eigenvalue of the observability Gramian in the system's
/// natural norm (`H¹` for Schrödinger, energy for the wave system).
pub fn admissibility_constant(op: &ModalOperator, horizon: f64, kind: SystemKind) -> Result<f64> {
    let g = match kind {
        SystemKind::Schrodinger => schrodinger_gramian(op, horizon, 1)?,
        SystemKind::Wave => wave_gramian(op, horizon)?,
    };
    Ok(g.lambda_max())
}
