//! Fundamental controlled solutions on a twofold segment and the
//! transmutation of wave controls into fast Schrödinger controls.
//!
//! The kernel `k(t, s)` is even in `s` on `[-L, L]`, so it is stored as the
//! Neumann-left problem on `[0, L]`: a Dirac mass at `s = 0` steered to zero
//! by a boundary control at `s = L`. Its modal trajectory is not kept in
//! memory; it is replayed from the stored control whenever it is needed.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramian::{
    h1_minimal_control, minimal_norm_control, schrodinger_gramian, schrodinger_grid, smoothing_control, wave_grid,
};
use crate::spectral::{
    duhamel_schrodinger, duhamel_schrodinger_visit, duhamel_wave_visit, BoundaryCondition, ControlSignal,
    ModalOperator, ModalState, WaveConvention, WaveState,
};

const I: Complex64 = Complex64::new(0.0, 1.0);
/// Extra refinement of the default wave grid: the wave trajectory is paired
/// against the kernel, so its time-stepping error enters the identity directly.
const WAVE_REFINEMENT: usize = 4;

/// Largest admissible kernel horizon, `min(π/2, L)²`.
pub fn kernel_horizon_cap(length: f64) -> f64 {
    (0.5 * PI).min(length).powi(2)
}

/// Kernel trajectory `κ_n(t)` for `t ∈ [0, T]`, extended by zero up to the
/// outer horizon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FundamentalKernel {
    op: ModalOperator,
    horizon: f64,
    outer_horizon: f64,
    control: ControlSignal,
    /// `‖k(t_j, ·)‖²_{H^{-1}(0,L)}` on the time grid.
    h_minus_norms_sq: Vec<f64>,
    cost: f64,
    control_energy: f64,
    terminal: ModalState,
    gram_condition: f64,
}

/// Builds the kernel on `[0, L]` with `modes` even modes over `[0, T]`,
/// sampled with `intervals` time steps.
pub fn fundamental_kernel(length: f64, horizon: f64, modes: usize, intervals: usize) -> Result<FundamentalKernel> {
    let cap = kernel_horizon_cap(length);
    if !(horizon > 0.0 && horizon <= cap) {
        return Err(Error::invalid(
            "T",
            format!("kernel horizon must lie in (0, {cap}], got {horizon}"),
        ));
    }
    let op = ModalOperator::new(length, BoundaryCondition::Neumann, modes)?;
    let delta = op.delta_coefficients();
    let g = schrodinger_gramian(&op, horizon, 1)?;
    let hum = minimal_norm_control(&g, &op, &delta, intervals).map_err(|e| match e {
        Error::IllConditioned { condition } => Error::KernelIllConditioned { condition },
        other => other,
    })?;
    let mut kernel = FundamentalKernel {
        terminal: delta.clone(),
        op,
        horizon,
        outer_horizon: horizon,
        control: hum.signal,
        h_minus_norms_sq: Vec::with_capacity(intervals + 1),
        cost: 0.0,
        control_energy: hum.energy,
        gram_condition: g.condition(),
    };
    let lam = kernel.op.eigenvalues().to_vec();
    let mut norms = Vec::with_capacity(intervals + 1);
    kernel.terminal = duhamel_schrodinger_visit(&kernel.op, &delta, &kernel.control, |_, a| {
        norms.push(a.iter().zip(&lam).map(|(k, l)| k.norm_sqr() / l).sum::<f64>());
    })?;
    let w = kernel.control.weights();
    kernel.cost = norms.iter().zip(&w).map(|(n, w)| n * w).sum();
    kernel.h_minus_norms_sq = norms;
    Ok(kernel)
}

/// Default kernel time grid.
pub fn kernel_grid(length: f64, horizon: f64, modes: usize) -> Result<usize> {
    let op = ModalOperator::new(length, BoundaryCondition::Neumann, modes)?;
    Ok(schrodinger_grid(&op, horizon))
}

impl FundamentalKernel {
    pub fn operator(&self) -> &ModalOperator {
        &self.op
    }

    pub fn length(&self) -> f64 {
        self.op.length()
    }

    pub fn modes(&self) -> usize {
        self.op.modes()
    }

    /// Horizon of the controlled part.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Horizon after extension by zero.
    pub fn outer_horizon(&self) -> f64 {
        self.outer_horizon
    }

    pub fn control(&self) -> &ControlSignal {
        &self.control
    }

    pub fn intervals(&self) -> usize {
        self.control.intervals()
    }

    pub fn step(&self) -> f64 {
        self.control.step()
    }

    pub fn h_minus_norms_sq(&self) -> &[f64] {
        &self.h_minus_norms_sq
    }

    /// `∫_0^T ‖k(t, ·)‖²_{H^{-1}} dt`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// `∫_0^T |g|²` of the boundary control.
    pub fn control_energy(&self) -> f64 {
        self.control_energy
    }

    pub fn gram_condition(&self) -> f64 {
        self.gram_condition
    }

    pub fn initial(&self) -> ModalState {
        self.op.delta_coefficients()
    }

    pub fn terminal(&self) -> &ModalState {
        &self.terminal
    }

    /// `‖k(T, ·)‖_{H^{-1}}`.
    pub fn terminal_residual(&self) -> f64 {
        self.op.sobolev_norm(&self.terminal)
    }

    /// Largest `|κ_n(T)|`.
    pub fn terminal_max_coefficient(&self) -> f64 {
        self.terminal.coeffs.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn delta_norm(&self) -> f64 {
        self.op.sobolev_norm(&self.initial())
    }

    /// Replays the trajectory, calling `visit(j, κ(t_j))` on every grid point of `[0, T]`.
    pub fn replay(&self, visit: impl FnMut(usize, &[Complex64])) -> Result<()> {
        duhamel_schrodinger_visit(&self.op, &self.initial(), &self.control, visit).map(|_| ())
    }

    /// Coefficients at the grid indices `indices` (ascending or not).
    pub fn states_at(&self, indices: &[usize]) -> Result<Vec<ModalState>> {
        let m = self.intervals();
        if let Some(&j) = indices.iter().find(|&&j| j > m) {
            return Err(Error::GridMismatch(format!(
                "time index {j} beyond the kernel grid 0..={m}"
            )));
        }
        let mut out = vec![ModalState::zeros(self.modes(), -1); indices.len()];
        self.replay(|j, a| {
            for (slot, &k) in indices.iter().enumerate() {
                if k == j {
                    out[slot].coeffs.copy_from_slice(a);
                }
            }
        })?;
        Ok(out)
    }

    /// Coefficients at time `t`: replayed on the grid inside `[0, T]`, zero on `(T, T_outer]`.
    pub fn state_at(&self, t: f64) -> Result<ModalState> {
        if t > self.horizon && t <= self.outer_horizon * (1.0 + 1e-15) {
            return Ok(ModalState::zeros(self.modes(), -1));
        }
        let j = (t / self.step()).round();
        if !(0.0..=self.intervals() as f64).contains(&j) || (j * self.step() - t).abs() > 1e-9 * self.step() {
            return Err(Error::GridMismatch(format!("time {t} is not a kernel grid point")));
        }
        Ok(self.states_at(&[j as usize])?.remove(0))
    }

    /// Largest `|k(t, s) - k(t, -s)|` over the stored endpoint states at a few `s`.
    pub fn odd_part(&self) -> f64 {
        let mut worst = 0.0f64;
        for state in [&self.initial(), &self.terminal] {
            for k in 1..=8 {
                let s = self.length() * k as f64 / 9.0;
                worst = worst.max((self.op.point_value(state, s) - self.op.point_value(state, -s)).norm());
            }
        }
        worst
    }

    /// JSON-friendly record with every `stride`-th time sample.
    pub fn record(&self, stride: usize) -> KernelRecord {
        let stride = stride.max(1);
        let m = self.intervals();
        let mut indices: Vec<usize> = (0..=m).step_by(stride).collect();
        if indices.last() != Some(&m) {
            indices.push(m);
        }
        let states = self.states_at(&indices).unwrap_or_default();
        KernelRecord {
            length: self.length(),
            horizon: self.horizon,
            outer_horizon: self.outer_horizon,
            modes: self.modes(),
            times: indices.iter().map(|&j| self.control.time(j)).collect(),
            coefficients: states.into_iter().map(|s| s.coeffs).collect(),
            h_minus_norms: indices.iter().map(|&j| self.h_minus_norms_sq[j].sqrt()).collect(),
            cost: self.cost,
            terminal_residual: self.terminal_residual(),
        }
    }
}

/// Serializable snapshot of a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub length: f64,
    pub horizon: f64,
    pub outer_horizon: f64,
    pub modes: usize,
    pub times: Vec<f64>,
    pub coefficients: Vec<Vec<Complex64>>,
    pub h_minus_norms: Vec<f64>,
    pub cost: f64,
    pub terminal_residual: f64,
}

/// The same kernel, regarded as living on `[0, T_outer]` with `k = 0` after `T`.
pub fn extend_by_zero(kernel: &FundamentalKernel, outer_horizon: f64) -> Result<FundamentalKernel> {
    if !(outer_horizon >= kernel.horizon) {
        return Err(Error::invalid(
            "T_outer",
            format!("must be at least the kernel horizon {}", kernel.horizon),
        ));
    }
    let mut out = kernel.clone();
    out.outer_horizon = outer_horizon;
    Ok(out)
}

/// Trapezoid pairings `∫_0^{L_w} φ_n(s) f(s) ds` against the kernel basis.
fn pair_with_basis<'a>(
    kernel: &FundamentalKernel,
    grid: &ControlSignal,
    values: impl Fn(usize) -> &'a [Complex64],
    width: usize,
) -> Vec<Vec<Complex64>> {
    let w = grid.weights();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); width]; kernel.modes()];
    for (j, wj) in w.iter().enumerate() {
        let s = grid.time(j);
        let f = values(j);
        for (n, row) in out.iter_mut().enumerate() {
            let b = kernel.op.eigenfunction(n, s) * wj;
            for (r, v) in row.iter_mut().zip(f) {
                *r += v * b;
            }
        }
    }
    out
}

fn check_wave_window(kernel: &FundamentalKernel, grid: &ControlSignal) -> Result<()> {
    if grid.t_start() != 0.0 {
        return Err(Error::GridMismatch("wave signal must start at s = 0".into()));
    }
    if grid.t_end() > kernel.length() * (1.0 + 1e-12) {
        return Err(Error::KernelTooShort {
            kernel: kernel.length(),
            wave: grid.t_end(),
        });
    }
    Ok(())
}

/// Transmuted control with the quantities entering its energy estimate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransmutedControl {
    /// `u` on the kernel grid of `[0, T]`; zero outside.
    pub signal: ControlSignal,
    /// `V_n = ∫ φ_n v`.
    pub pairings: Vec<Complex64>,
    /// `Σ λ_n |V_n|²`, the truncated `‖v̲'‖²`.
    pub modal_h1: f64,
    /// `∫|u|²`.
    pub energy: f64,
}

/// `u(t) = -i Σ_n κ_n(t) ⟨φ_n, v⟩`, with `v` extended by zero from
/// `[0, L_w]` to `[0, L]`. Pairing the even extensions over `[-L, L]` against
/// a Dirac mass normalized on `[0, L]` leaves no extra factor.
pub fn transmute_control(kernel: &FundamentalKernel, v: &ControlSignal) -> Result<TransmutedControl> {
    check_wave_window(kernel, v)?;
    if !v.is_h1_regular(1e-12) {
        return Err(Error::invalid(
            "v",
            "wave control must vanish at both ends of its window",
        ));
    }
    let samples = v.samples();
    let pairings: Vec<Complex64> = pair_with_basis(kernel, v, |j| std::slice::from_ref(&samples[j]), 1)
        .into_iter()
        .map(|row| row[0])
        .collect();
    let modal_h1 = kernel
        .op
        .eigenvalues()
        .iter()
        .zip(&pairings)
        .map(|(l, p)| l * p.norm_sqr())
        .sum();
    let mut u = Vec::with_capacity(kernel.intervals() + 1);
    kernel.replay(|_, a| {
        let s: Complex64 = a.iter().zip(&pairings).map(|(k, p)| k * p).sum();
        u.push(-I * s);
    })?;
    let signal = ControlSignal::new(0.0, kernel.horizon, u)?;
    Ok(TransmutedControl {
        energy: signal.l2_norm_sq(),
        signal,
        pairings,
        modal_h1,
    })
}

/// Positions `ζ(s)` of a wave trajectory on a uniform `s`-grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveTrajectory {
    pub grid: ControlSignal,
    pub positions: Vec<Vec<Complex64>>,
}

/// Runs the wave system driven by `v` and keeps every position sample.
pub fn wave_trajectory(
    op: &ModalOperator,
    initial: &WaveState,
    v: &ControlSignal,
) -> Result<(WaveTrajectory, WaveState)> {
    let mut positions = Vec::with_capacity(v.samples().len());
    let terminal = duhamel_wave_visit(op, initial, v, |_, a, _| positions.push(a.to_vec()))?;
    Ok((
        WaveTrajectory {
            grid: v.clone(),
            positions,
        },
        terminal,
    ))
}

/// `F_nm = ∫ φ_n(s) ζ_m(s) ds`.
fn trajectory_pairings(kernel: &FundamentalKernel, traj: &WaveTrajectory) -> Result<Vec<Vec<Complex64>>> {
    check_wave_window(kernel, &traj.grid)?;
    if traj.positions.len() != traj.grid.samples().len() {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} samples on a grid of {}",
            traj.positions.len(),
            traj.grid.samples().len()
        )));
    }
    let width = traj.positions.first().map_or(0, |p| p.len());
    if width == 0 || traj.positions.iter().any(|p| p.len() != width) {
        return Err(Error::GridMismatch(
            "trajectory rows have inconsistent mode counts".into(),
        ));
    }
    Ok(pair_with_basis(kernel, &traj.grid, |j| &traj.positions[j], width))
}

/// `φ(t_j) = Σ_n κ_n(t_j) F_n·` at each kernel grid index in `indices`.
pub fn transmute_states(
    kernel: &FundamentalKernel,
    traj: &WaveTrajectory,
    indices: &[usize],
) -> Result<Vec<ModalState>> {
    let f = trajectory_pairings(kernel, traj)?;
    let width = f[0].len();
    let kappa = kernel.states_at(indices)?;
    Ok(kappa
        .into_iter()
        .map(|k| {
            let mut out = vec![Complex64::new(0.0, 0.0); width];
            for (kn, row) in k.coeffs.iter().zip(&f) {
                for (o, fm) in out.iter_mut().zip(row) {
                    *o += kn * fm;
                }
            }
            ModalState::new(out, -1)
        })
        .collect())
}

/// Single-index form of [`transmute_states`].
pub fn transmute_state(kernel: &FundamentalKernel, traj: &WaveTrajectory, index: usize) -> Result<ModalState> {
    Ok(transmute_states(kernel, traj, &[index])?.remove(0))
}

/// Tunables of [`fast_control_pipeline`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub eps_split: f64,
    pub kernel_length: f64,
    /// Smoothing parameter; `None` keeps the top half of the target spectrum.
    pub d: Option<f64>,
    /// Kernel modes; `None` resolves the target's wave frequencies.
    pub kernel_modes: Option<usize>,
    pub kernel_intervals: Option<usize>,
    pub wave_intervals: Option<usize>,
    pub smoothing_intervals: Option<usize>,
    /// Number of kernel grid times at which the transmutation identity is checked.
    pub identity_samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eps_split: 0.5,
            kernel_length: 2.2,
            d: None,
            kernel_modes: None,
            kernel_intervals: None,
            wave_intervals: None,
            smoothing_intervals: None,
            identity_samples: 20,
        }
    }
}

/// Kernel modes needed to resolve the wave frequencies of `target` on a
/// kernel of length `kernel_length`.
pub fn default_kernel_modes(target: &ModalOperator, kernel_length: f64) -> usize {
    (6.0 * target.modes() as f64 * kernel_length / target.length()).ceil() as usize
}

/// Per-stage figures of a pipeline run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub horizon: f64,
    pub eps_split: f64,
    pub d: f64,
    pub kernel_length: f64,
    pub kernel_modes: usize,
    pub target_modes: usize,
    pub smoothing_energy: f64,
    pub smoothing_kappa: f64,
    pub smoothing_high_modes: usize,
    pub kernel_cost: f64,
    pub kernel_terminal_residual: f64,
    pub kernel_condition: f64,
    pub wave_h1_cost: f64,
    pub wave_terminal_energy: f64,
    pub transmuted_energy: f64,
    /// `∫|u|²` over both stages.
    pub total_energy: f64,
    /// `total_energy / ‖φ_0‖²_{-1}`.
    pub cost_ratio: f64,
    /// `‖φ(T)‖_{-1} / ‖φ_0‖_{-1}`.
    pub terminal_residual: f64,
    /// Worst transmutation-identity gap relative to `‖φ_1‖_{-1}`.
    pub identity_error: f64,
    pub identity_indices: Vec<usize>,
    /// Gap at `t = 0` between the transmuted state and `φ_1` (Dirac truncation).
    pub initial_pairing_error: f64,
    /// `∫|u_2|² ≤ kernel_cost · Σλ|V_n|²` holds.
    pub cauchy_schwarz_holds: bool,
}

/// Two-segment control: smoothing on `[0, εT]`, transmuted on `[εT, T]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub segments: Vec<ControlSignal>,
    pub terminal: ModalState,
    pub report: PipelineReport,
}

impl PipelineOutput {
    /// Runs the target system through every segment.
    pub fn replay(&self, target: &ModalOperator, initial: &ModalState) -> Result<ModalState> {
        self.segments
            .iter()
            .try_fold(initial.clone(), |x, u| duhamel_schrodinger(target, &x, u))
    }
}

fn evenly_spaced_indices(last: usize, count: usize) -> Vec<usize> {
    let count = count.max(2);
    let mut v: Vec<usize> = (0..count)
        .map(|k| ((k as f64) * last as f64 / (count - 1) as f64).round() as usize)
        .collect();
    v.dedup();
    v
}

/// Fast control of the target Schrödinger system from `phi0` over `[0, T]`.
pub fn fast_control_pipeline(
    target: &ModalOperator,
    horizon: f64,
    phi0: &ModalState,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let lk = config.kernel_length;
    let cap = 1f64.min(lk).powi(2);
    if !(horizon > 0.0 && horizon <= cap) {
        return Err(Error::invalid(
            "T",
            format!("pipeline horizon must lie in (0, {cap}], got {horizon}"),
        ));
    }
    if !(lk > 2.0 * target.length()) {
        return Err(Error::KernelTooShort {
            kernel: lk,
            wave: 2.0 * target.length(),
        });
    }
    let eps = config.eps_split;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps_split", format!("must lie in (0, 1), got {eps}")));
    }
    if phi0.coeffs.len() != target.modes() {
        return Err(Error::invalid("phi0", "dimension does not match the target operator"));
    }
    let (t1, t2) = (eps * horizon, (1.0 - eps) * horizon);
    let n = target.modes();
    let d = config.d.unwrap_or_else(|| target.eigenvalues()[n / 2] * t1 * t1);
    let nk = config.kernel_modes.unwrap_or_else(|| default_kernel_modes(target, lk));
    let phi0_norm = target.sobolev_norm(&phi0.clone().with_index(-1));

    let m1 = config
        .smoothing_intervals
        .unwrap_or_else(|| schrodinger_grid(target, t1));
    let stage1 = smoothing_control(target, t1, d, phi0, m1).map_err(|e| e.in_stage("smoothing"))?;
    let phi1 = stage1.terminal.clone();
    let phi1_norm = target.sobolev_norm(&phi1);

    let mk = match config.kernel_intervals {
        Some(m) => m,
        None => kernel_grid(lk, t2, nk)?,
    };
    let mw = config
        .wave_intervals
        .unwrap_or_else(|| WAVE_REFINEMENT * wave_grid(target, lk));
    let zeta = WaveState::at_rest(&phi1, WaveConvention::Energy);
    let (kernel, wave) = rayon::join(
        || fundamental_kernel(lk, t2, nk, mk).map_err(|e| e.in_stage("kernel")),
        || h1_minimal_control(target, lk, &zeta, mw).map_err(|e| e.in_stage("wave")),
    );
    let (kernel, wave) = (kernel?, wave?);
    let (traj, wave_end) = wave_trajectory(target, &zeta, &wave.signal)?;

    let u2 = transmute_control(&kernel, &wave.signal).map_err(|e| e.in_stage("transmute"))?;
    let indices = evenly_spaced_indices(kernel.intervals(), config.identity_samples);
    let transmuted = transmute_states(&kernel, &traj, &indices)?;
    let mut direct = vec![ModalState::zeros(n, -1); indices.len()];
    let phi_t = duhamel_schrodinger_visit(target, &phi1, &u2.signal, |j, a| {
        for (slot, &k) in indices.iter().enumerate() {
            if k == j {
                direct[slot].coeffs.copy_from_slice(a);
            }
        }
    })?;
    let scale = if phi1_norm > 0.0 { phi1_norm } else { 1.0 };
    let identity_error = direct
        .iter()
        .zip(&transmuted)
        .map(|(a, b)| {
            let diff = ModalState::new(a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect(), -1);
            target.sobolev_norm(&diff) / scale
        })
        .fold(0.0, f64::max);
    let initial_pairing_error = {
        let diff = ModalState::new(
            transmuted[0]
                .coeffs
                .iter()
                .zip(&phi1.coeffs)
                .map(|(x, y)| x - y)
                .collect(),
            -1,
        );
        target.sobolev_norm(&diff) / scale
    };

    let total_energy = stage1.energy + u2.energy;
    let terminal_residual = if phi0_norm > 0.0 {
        target.sobolev_norm(&phi_t) / phi0_norm
    } else {
        target.sobolev_norm(&phi_t)
    };
    let report = PipelineReport {
        horizon,
        eps_split: eps,
        d,
        kernel_length: lk,
        kernel_modes: nk,
        target_modes: n,
        smoothing_energy: stage1.energy,
        smoothing_kappa: stage1.kappa,
        smoothing_high_modes: stage1.high_modes.len(),
        kernel_cost: kernel.cost(),
        kernel_terminal_residual: kernel.terminal_max_coefficient(),
        kernel_condition: kernel.gram_condition(),
        wave_h1_cost: wave.seminorm_sq,
        wave_terminal_energy: target.wave_norm(&wave_end),
        transmuted_energy: u2.energy,
        total_energy,
        cost_ratio: if phi0_norm > 0.0 {
            total_energy / (phi0_norm * phi0_norm)
        } else {
            0.0
        },
        terminal_residual,
        identity_error,
        identity_indices: indices,
        initial_pairing_error,
        cauchy_schwarz_holds: u2.energy <= kernel.cost() * u2.modal_h1 * (1.0 + 1e-9),
    };
    Ok(PipelineOutput {
        segments: vec![stage1.signal, u2.signal.shifted(t1)],
        terminal: phi_t,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_kernel() -> FundamentalKernel {
        let (l, t, n) = (2.2, 0.8, 12);
        fundamental_kernel(l, t, n, kernel_grid(l, t, n).unwrap()).unwrap()
    }

    #[test]
    fn kernel_starts_at_delta_and_ends_at_zero() {
        let k = small_kernel();
        let first = k.states_at(&[0]).unwrap().remove(0);
        for a in &first.coeffs {
            assert_relative_eq!(a.re, (2.0f64 / 2.2).sqrt(), max_relative = 1e-15);
            assert_eq!(a.im, 0.0);
        }
        assert!(k.terminal_max_coefficient() <= 1e-10);
        assert!(k.terminal_residual() <= 1e-6 * k.delta_norm());
        assert!(k.cost().is_finite() && k.cost() > 0.0);
        assert_eq!(k.odd_part(), 0.0);
    }

    #[test]
    fn kernel_cost_decreases_with_horizon() {
        let (l, n) = (2.2, 12);
        let kernels: Vec<FundamentalKernel> = [0.3, 0.4, 0.6, 0.8]
            .iter()
            .map(|&t| fundamental_kernel(l, t, n, kernel_grid(l, t, n).unwrap()).unwrap())
            .collect();
        for pair in kernels.windows(2) {
            assert!(pair[1].cost() < pair[0].cost());
            assert!(pair[1].control_energy() < pair[0].control_energy());
        }
    }

    #[test]
    fn pipeline_steers_small_target() {
        let target = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 8).unwrap();
        let x = ModalState::from_real(&[1.0, -0.5, 0.3, 0.2, -0.7, 0.1, 0.4, -0.25], -1);
        let out = fast_control_pipeline(&target, 0.8, &x, &PipelineConfig::default()).unwrap();
        let r = &out.report;
        assert_eq!(r.kernel_modes, 106);
        assert!(r.identity_error <= 1e-4, "{}", r.identity_error);
        assert!(r.terminal_residual <= 1e-3, "{}", r.terminal_residual);
        assert!(r.cauchy_schwarz_holds);
        assert!(r.total_energy.is_finite() && r.total_energy > 0.0);
        let end = out.replay(&target, &x).unwrap();
        assert_relative_eq!(
            target.sobolev_norm(&end),
            target.sobolev_norm(&out.terminal),
            max_relative = 1e-9
        );
        assert_eq!(out.segments[1].t_start(), 0.4);
        assert_relative_eq!(out.segments[1].t_end(), 0.8, max_relative = 1e-15);
    }

    #[test]
    fn kernel_rejects_long_horizon() {
        assert!(fundamental_kernel(1.0, 1.5, 8, 100).is_err());
        assert!(fundamental_kernel(2.2, 2.6, 8, 100).is_err());
    }

    #[test]
    fn extension_by_zero() {
        let k = small_kernel();
        let same = extend_by_zero(&k, k.horizon()).unwrap();
        assert_eq!(same.outer_horizon(), k.horizon());
        assert_eq!(same.cost(), k.cost());
        let ext = extend_by_zero(&k, 2.0).unwrap();
        assert_eq!(ext.cost(), k.cost());
        assert!(ext.state_at(2.0).unwrap().is_zero());
        assert!(ext.state_at(1.0).unwrap().is_zero());
        assert!(extend_by_zero(&k, 0.5).is_err());
        assert!(k.state_at(k.step() * 0.5).is_err());
    }

    #[test]
    fn zero_wave_control_transmutes_to_zero() {
        let k = small_kernel();
        let v = ControlSignal::zeros(0.0, 2.0, 500).unwrap();
        let u = transmute_control(&k, &v).unwrap();
        assert_eq!(u.signal.max_abs(), 0.0);
        let long = ControlSignal::zeros(0.0, 2.5, 500).unwrap();
        assert!(matches!(
            transmute_control(&k, &long),
            Err(Error::KernelTooShort { .. })
        ));
        let rough = ControlSignal::from_fn(0.0, 2.0, 100, |_| Complex64::new(1.0, 0.0)).unwrap();
        assert!(transmute_control(&k, &rough).is_err());
    }

    #[test]
    fn transmuted_energy_obeys_cauchy_schwarz() {
        let k = small_kernel();
        let v = ControlSignal::from_fn(0.0, 2.0, 2000, |s| {
            Complex64::new((PI * s / 2.0).sin().powi(2), 0.3 * (PI * s).sin())
        })
        .unwrap();
        let u = transmute_control(&k, &v).unwrap();
        assert!(u.energy > 0.0);
        assert!(u.energy <= k.cost() * u.modal_h1 * (1.0 + 1e-9));
        assert!(u.modal_h1 <= v.h1_seminorm_sq() * (1.0 + 1e-3));
    }

    #[test]
    fn trajectory_grid_mismatch_rejected() {
        let k = small_kernel();
        let grid = ControlSignal::zeros(0.0, 2.0, 10).unwrap();
        let traj = WaveTrajectory {
            grid,
            positions: vec![vec![Complex64::new(0.0, 0.0); 3]; 5],
        };
        assert!(matches!(transmute_state(&k, &traj, 0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn zero_data_pipeline() {
        let target = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 8).unwrap();
        let out = fast_control_pipeline(&target, 0.8, &ModalState::zeros(8, -1), &PipelineConfig::default()).unwrap();
        assert!(out.segments.iter().all(|s| s.max_abs() == 0.0));
        assert!(out.terminal.is_zero());
    }

    #[test]
    fn pipeline_validates_inputs() {
        let target = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 8).unwrap();
        let x = ModalState::zeros(8, -1);
        let cfg = PipelineConfig::default();
        assert!(fast_control_pipeline(&target, 1.2, &x, &cfg).is_err());
        let short = PipelineConfig {
            kernel_length: 1.9,
            ..cfg.clone()
        };
        assert!(matches!(
            fast_control_pipeline(&target, 0.8, &x, &short),
            Err(Error::KernelTooShort { .. })
        ));
        let bad_eps = PipelineConfig { eps_split: 1.0, ..cfg };
        assert!(fast_control_pipeline(&target, 0.8, &x, &bad_eps).is_err());
    }

    #[test]
    fn indices_cover_both_ends() {
        assert_eq!(evenly_spaced_indices(100, 5), vec![0, 25, 50, 75, 100]);
        assert_eq!(evenly_spaced_indices(3, 20), vec![0, 1, 2, 3]);
    }

    #[test]
    fn record_is_serializable() {
        let k = small_kernel();
        let r = k.record(k.intervals() / 4);
        assert!(r.times.len() == 5 || r.times.len() == 6);
        assert_eq!(*r.times.last().unwrap(), k.horizon());
        assert_eq!(r.coefficients[0].len(), 12);
        let json = serde_json::to_string(&r).unwrap();
        let back: KernelRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.modes, 12);
    }
}
