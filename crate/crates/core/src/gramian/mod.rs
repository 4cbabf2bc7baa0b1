//! Observability Gramians, controllability costs and cost-versus-time curves.

mod control;
pub(crate) mod moments;

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{exp_integral, hermitian_eigenvalues, CMatrix};
use crate::spectral::ModalOperator;

pub use control::{
    default_smoothing_parameter, h1_minimal_control, minimal_norm_control, schrodinger_grid, smoothing_control,
    wave_grid, wave_minimal_norm_control, H1Control, HumControl, SmoothingControl, MAX_CONDITION,
};

/// Eigenvalues at or below this are treated as a singular Gramian.
pub const SINGULAR_EIGENVALUE: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Schrodinger,
    Wave,
}

/// Coordinates in which a Gramian is written.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormConvention {
    /// `H_p`-orthonormal modal coordinates.
    Sobolev(i32),
    /// Real energy coordinates `(ω_n a_n, b_n)`.
    Energy,
}

#[derive(Clone, Debug)]
pub struct Gramian {
    matrix: CMatrix,
    horizon: f64,
    kind: SystemKind,
    norm: NormConvention,
    eigenvalues: Vec<f64>,
}

impl Gramian {
    /// Wraps a Hermitian matrix; the spectrum is computed once here.
    pub fn from_matrix(matrix: CMatrix, horizon: f64, kind: SystemKind, norm: NormConvention) -> Self {
        let eigenvalues = hermitian_eigenvalues(&matrix);
        Self {
            matrix,
            horizon,
            kind,
            norm,
            eigenvalues,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn norm(&self) -> NormConvention {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Ascending spectrum.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// `λ_max / λ_min`, infinite when `λ_min ≤ 0`.
    pub fn condition(&self) -> f64 {
        let lo = self.lambda_min();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            self.lambda_max() / lo
        }
    }

    /// Controllability cost `κ_T = 1/λ_min`.
    pub fn cost(&self) -> Result<f64> {
        let lo = self.lambda_min();
        if lo <= SINGULAR_EIGENVALUE {
            return Err(Error::Unobservable { lambda_min: lo });
        }
        Ok(1.0 / lo)
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid("T", format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Closed-form Schrödinger Gramian `∫_0^T φ(t)φ(t)* dt` with
/// `φ_n(t) = c_n λ_n^{-p/2} e^{iλ_n t}`, i.e. in `H_p`-orthonormal coordinates.
pub fn schrodinger_gramian(op: &ModalOperator, horizon: f64, p: i32) -> Result<Gramian> {
    check_horizon(horizon)?;
    let lam = op.eigenvalues();
    let w: Vec<f64> = lam
        .iter()
        .zip(op.obs_coeffs())
        .map(|(l, c)| c * l.powf(-0.5 * p as f64))
        .collect();
    let n = op.modes();
    let mut g = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = w[i] * w[j] * exp_integral(lam[i] - lam[j], horizon);
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
        g[(i, i)].im = 0.0;
    }
    Ok(Gramian::from_matrix(
        g,
        horizon,
        SystemKind::Schrodinger,
        NormConvention::Sobolev(p),
    ))
}

/// `∫_0^T sin(xt)/x`-type kernels used by the wave Gramian.
fn sin_kernel(x: f64, horizon: f64) -> f64 {
    if x.abs() < 1e-12 {
        horizon
    } else {
        (x * horizon).sin() / x
    }
}

fn versin_kernel(x: f64, horizon: f64) -> f64 {
    if x.abs() < 1e-12 {
        0.0
    } else {
        2.0 * (0.5 * x * horizon).sin().powi(2) / x
    }
}

/// Closed-form wave Gramian over the real energy coordinates `(ω_n a_n, b_n)`.
/// Rows `0..N` are the position block, rows `N..2N` the velocity block.
pub fn wave_gramian(op: &ModalOperator, horizon: f64) -> Result<Gramian> {
    check_horizon(horizon)?;
    let omega = op.frequencies();
    let r: Vec<f64> = op.obs_coeffs().iter().zip(&omega).map(|(c, w)| c / w).collect();
    let n = op.modes();
    let t = horizon;
    let mut g = CMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (omega[i], omega[j]);
            let s_minus = sin_kernel(a - b, t);
            let s_plus = sin_kernel(a + b, t);
            let cc = 0.5 * (s_minus + s_plus);
            let ss = 0.5 * (s_minus - s_plus);
            // ∫ cos(at) sin(bt) dt
            let cs = 0.5 * (versin_kernel(b + a, t) + versin_kernel(b - a, t));
            let rr = r[i] * r[j];
            g[(i, j)].re = rr * cc;
            g[(n + i, n + j)].re = rr * ss;
            g[(i, n + j)].re = rr * cs;
            g[(n + j, i)].re = rr * cs;
        }
    }
    Ok(Gramian::from_matrix(
        g,
        horizon,
        SystemKind::Wave,
        NormConvention::Energy,
    ))
}

/// One point of a cost curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSample {
    pub horizon: f64,
    pub kappa: f64,
    pub condition: f64,
}

/// How the fit window was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWindow {
    /// Samples whose condition number lies in `[1e3, 1e12]`.
    Conditioning,
    /// The smallest half of the horizons.
    SmallestHalf,
}

/// Least-squares fit `ln κ ≈ a/T + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostFit {
    pub rate: f64,
    pub offset: f64,
    pub rms_residual: f64,
    pub window: FitWindow,
    pub t_lo: f64,
    pub t_hi: f64,
    pub used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub kind: SystemKind,
    pub p: i32,
    pub samples: Vec<CostSample>,
    pub fit: CostFit,
}

const FIT_COND_LO: f64 = 1e3;
const FIT_COND_HI: f64 = 1e12;
const MONOTONE_TOL: f64 = 1e-10;

/// Costs over `horizons` (sorted ascending internally) with the blow-up fit.
/// For the Schrödinger system `p` selects the Gramian norm; it is ignored for
/// the wave system.
pub fn cost_curve(op: &ModalOperator, kind: SystemKind, p: i32, horizons: &[f64]) -> Result<CostCurve> {
    if horizons.len() < 3 {
        return Err(Error::invalid("T_list", "at least 3 horizons are needed for a fit"));
    }
    let mut ts = horizons.to_vec();
    ts.sort_by(f64::total_cmp);
    if kind == SystemKind::Schrodinger {
        let cap = PI.min(op.length()).powi(2);
        if let Some(&t) = ts.iter().find(|&&t| t > cap) {
            return Err(Error::invalid(
                "T",
                format!("horizon {t} exceeds the admissible range (0, {cap}]"),
            ));
        }
    }
    let samples = ts
        .par_iter()
        .map(|&t| cost_sample(op, kind, p, t))
        .collect::<Result<Vec<_>>>()?;
    CostCurve::from_samples(kind, p, samples)
}

/// Cost and Gramian condition number at one horizon.
pub fn cost_sample(op: &ModalOperator, kind: SystemKind, p: i32, horizon: f64) -> Result<CostSample> {
    let g = match kind {
        SystemKind::Schrodinger => schrodinger_gramian(op, horizon, p)?,
        SystemKind::Wave => wave_gramian(op, horizon)?,
    };
    Ok(CostSample {
        horizon,
        kappa: g.cost()?,
        condition: g.condition(),
    })
}

fn fit_cost(samples: &[CostSample]) -> Result<CostFit> {
    let conditioned: Vec<CostSample> = samples
        .iter()
        .copied()
        .filter(|s| (FIT_COND_LO..=FIT_COND_HI).contains(&s.condition))
        .collect();
    let (window, used) = if conditioned.len() >= 3 {
        (FitWindow::Conditioning, conditioned)
    } else {
        let k = samples.len().div_ceil(2).max(3).min(samples.len());
        (FitWindow::SmallestHalf, samples[..k].to_vec())
    };
    let xs: Vec<f64> = used.iter().map(|s| 1.0 / s.horizon).collect();
    let ys: Vec<f64> = used.iter().map(|s| s.kappa.ln()).collect();
    let (rate, offset, rms_residual) = least_squares_line(&xs, &ys)?;
    Ok(CostFit {
        rate,
        offset,
        rms_residual,
        window,
        t_lo: used[0].horizon,
        t_hi: used[used.len() - 1].horizon,
        used: used.len(),
    })
}

/// Ordinary least squares `y ≈ slope·x + intercept`; returns the RMS residual too.
pub fn least_squares_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("T_list", "fit needs at least two distinct horizons"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    Ok((slope, intercept, (rss / n).sqrt()))
}

impl CostCurve {
    /// Checks monotonicity of samples sorted by horizon and fits the blow-up rate.
    pub fn from_samples(kind: SystemKind, p: i32, samples: Vec<CostSample>) -> Result<Self> {
        for w in samples.windows(2) {
            if w[1].kappa > w[0].kappa * (1.0 + MONOTONE_TOL) {
                return Err(Error::NonMonotoneCost {
                    t_prev: w[0].horizon,
                    k_prev: w[0].kappa,
                    t_next: w[1].horizon,
                    k_next: w[1].kappa,
                });
            }
        }
        let fit = fit_cost(&samples)?;
        Ok(CostCurve { kind, p, samples, fit })
    }

    /// CSV body with the columns `T,kappa,log_kappa,T_log_kappa,cond`.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "T,kappa,log_kappa,T_log_kappa,cond")?;
        for s in &self.samples {
            let lk = s.kappa.ln();
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.horizon,
                s.kappa,
                lk,
                s.horizon * lk,
                s.condition
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::trapezoid_weights;
    use crate::spectral::BoundaryCondition;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn op(l: f64, n: usize) -> ModalOperator {
        ModalOperator::new(l, BoundaryCondition::Dirichlet, n).unwrap()
    }

    /// Trapezoid-rule Gramian `Σ w_j φ(t_j) φ(t_j)*`, Richardson-extrapolated
    /// from `steps` and `2·steps`.
    fn quadrature_gramian(phi: impl Fn(f64) -> Vec<Complex64>, horizon: f64, steps: usize) -> CMatrix {
        let coarse = trapezoid_gramian(&phi, horizon, steps);
        let fine = trapezoid_gramian(&phi, horizon, 2 * steps);
        (fine * Complex64::new(4.0, 0.0) - coarse) / Complex64::new(3.0, 0.0)
    }

    fn trapezoid_gramian(phi: &impl Fn(f64) -> Vec<Complex64>, horizon: f64, steps: usize) -> CMatrix {
        let h = horizon / steps as f64;
        let w = trapezoid_weights(steps, h);
        let n = phi(0.0).len();
        let mut g = CMatrix::zeros(n, n);
        for (j, wj) in w.iter().enumerate() {
            let v = phi(j as f64 * h);
            for a in 0..n {
                for b in 0..n {
                    g[(a, b)] += v[a] * v[b].conj() * *wj;
                }
            }
        }
        g
    }

    #[test]
    fn one_mode_schrodinger_cost() {
        for t in [0.1, 0.7, 2.0] {
            let g = schrodinger_gramian(&op(1.0, 1), t, 1).unwrap();
            assert_relative_eq!(g.matrix()[(0, 0)].re, 2.0 * t, max_relative = 1e-14);
            assert_relative_eq!(g.cost().unwrap(), 1.0 / (2.0 * t), max_relative = 1e-14);
        }
    }

    #[test]
    fn schrodinger_gramian_vanishes_with_window() {
        let g = schrodinger_gramian(&op(1.0, 5), 1e-12, 1).unwrap();
        assert!(g.matrix().norm() < 1e-10);
        assert!(schrodinger_gramian(&op(1.0, 5), 0.0, 1).is_err());
        assert!(schrodinger_gramian(&op(1.0, 5), -1.0, 1).is_err());
    }

    #[test]
    fn schrodinger_gramian_matches_quadrature() {
        let o = op(1.0, 2);
        let lam = o.eigenvalues().to_vec();
        let c = o.obs_coeffs().to_vec();
        let oracle = quadrature_gramian(
            |t| {
                (0..2)
                    .map(|n| Complex64::from_polar(c[n] / lam[n].sqrt(), lam[n] * t))
                    .collect()
            },
            1.0,
            10_000,
        );
        let g = schrodinger_gramian(&o, 1.0, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((g.matrix()[(i, j)] - oracle[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn wave_gramian_full_period() {
        let g = wave_gramian(&op(1.0, 1), 2.0).unwrap();
        for &e in g.eigenvalues() {
            assert_relative_eq!(e, 2.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn wave_gramian_matches_quadrature() {
        let o = op(1.0, 8);
        let w = o.frequencies();
        let r: Vec<f64> = o.obs_coeffs().iter().zip(&w).map(|(c, w)| c / w).collect();
        let oracle = quadrature_gramian(
            |t| {
                let mut v: Vec<Complex64> = (0..8).map(|n| Complex64::new(r[n] * (w[n] * t).cos(), 0.0)).collect();
                v.extend((0..8).map(|n| Complex64::new(r[n] * (w[n] * t).sin(), 0.0)));
                v
            },
            2.5,
            25_000,
        );
        let g = wave_gramian(&o, 2.5).unwrap();
        assert!((g.matrix() - oracle).iter().all(|d| d.norm() < 1e-10));
    }

    #[test]
    fn wave_cost_monotone_in_window() {
        let o = op(1.0, 6);
        let k: Vec<f64> = [2.0, 2.5, 3.0]
            .iter()
            .map(|&t| wave_gramian(&o, t).unwrap().cost().unwrap())
            .collect();
        assert!(k[1] <= k[0] && k[2] <= k[1]);
    }

    #[test]
    fn cost_homogeneity_and_identity() {
        let id = Gramian::from_matrix(
            CMatrix::identity(3, 3),
            1.0,
            SystemKind::Schrodinger,
            NormConvention::Sobolev(0),
        );
        assert_relative_eq!(id.cost().unwrap(), 1.0, max_relative = 1e-15);
        let g = schrodinger_gramian(&op(1.0, 4), 0.5, 1).unwrap();
        let s = 3.0;
        let scaled = Gramian::from_matrix(
            g.matrix() * Complex64::new(s * s, 0.0),
            0.5,
            SystemKind::Schrodinger,
            NormConvention::Sobolev(1),
        );
        assert_relative_eq!(
            scaled.cost().unwrap(),
            g.cost().unwrap() / (s * s),
            max_relative = 1e-12
        );
    }

    #[test]
    fn doubling_length_quadruples_rate_on_scaled_window() {
        let ts: Vec<f64> = (0..7).map(|k| 0.2 + 0.05 * k as f64).collect();
        let wide: Vec<f64> = ts.iter().map(|t| 4.0 * t).collect();
        let short = cost_curve(&op(1.0, 32), SystemKind::Schrodinger, 1, &ts).unwrap();
        let long = cost_curve(&op(2.0, 32), SystemKind::Schrodinger, 1, &wide).unwrap();
        for (a, b) in short.samples.iter().zip(&long.samples) {
            assert_relative_eq!(b.kappa, 0.5 * a.kappa, max_relative = 1e-9);
        }
        let ratio = long.fit.rate / short.fit.rate;
        assert!((ratio / 4.0 - 1.0).abs() <= 0.3, "{ratio}");
    }

    #[test]
    fn singular_gramian_is_unobservable() {
        let z = Gramian::from_matrix(
            CMatrix::zeros(2, 2),
            1.0,
            SystemKind::Schrodinger,
            NormConvention::Sobolev(0),
        );
        assert!(matches!(z.cost(), Err(Error::Unobservable { .. })));
    }

    #[test]
    fn cost_curve_requires_three_samples() {
        assert!(cost_curve(&op(1.0, 8), SystemKind::Schrodinger, 1, &[0.2, 0.3]).is_err());
        assert!(cost_curve(&op(1.0, 8), SystemKind::Schrodinger, 1, &[0.2, 0.3, 12.0]).is_err());
    }

    #[test]
    fn csv_has_declared_columns() {
        let c = cost_curve(&op(1.0, 8), SystemKind::Schrodinger, 1, &[0.2, 0.3, 0.4, 0.5]).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("T,kappa,log_kappa,T_log_kappa,cond"));
        assert_eq!(lines.count(), 4);
    }
}
