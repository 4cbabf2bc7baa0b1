//! Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

use std::f64::consts::PI;
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use conscontrol::gramian::{
    cost_curve, h1_minimal_control, least_squares_line, minimal_norm_control, schrodinger_gramian, schrodinger_grid,
    smoothing_control, wave_grid, SystemKind,
};
use conscontrol::resolvent::{
    best_bump, constants_from_observability, grid_m, lambda_grid, thin_grid, verify_resolvent,
};
use conscontrol::spectral::{
    duhamel_schrodinger, duhamel_schrodinger_visit, BoundaryCondition, ModalOperator, ModalState, WaveConvention,
    WaveState,
};
use conscontrol::tensor::{random_diagonal_system, random_hermitian, verify_cost_invariance};
use conscontrol::transmutation::{
    default_kernel_modes, fast_control_pipeline, fundamental_kernel, kernel_grid, transmute_control, transmute_states,
    wave_trajectory, PipelineConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion(id: u32, title: &str, budget: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = body();
    let elapsed = start.elapsed();
    let pass = out.pass && elapsed <= budget;
    // bypass the test harness capture so the lines always reach the log
    let _ = writeln!(
        std::io::stderr(),
        "{} criterion {id} ({title}): {} [{:.2} s, budget {} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> ModalState {
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    ModalState::from_real(&c, -1)
}

fn hum_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for n in [8, 32] {
        let op = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, n).unwrap();
        for t in [0.5, 1.0] {
            let x = random_state(&mut rng, n);
            let g = schrodinger_gramian(&op, t, 1).unwrap();
            let hum = minimal_norm_control(&g, &op, &x, schrodinger_grid(&op, t)).unwrap();
            let end = duhamel_schrodinger(&op, &x, &hum.signal).unwrap();
            worst = worst.max(op.sobolev_norm(&end) / op.sobolev_norm(&x));
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("worst relative terminal norm {worst:.3e} <= 1e-8"),
    }
}

fn cost_rate_band() -> Outcome {
    let op = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 64).unwrap();
    let ts: Vec<f64> = (0..7).map(|k| 0.2 + 0.05 * k as f64).collect();
    let curve = cost_curve(&op, SystemKind::Schrodinger, 1, &ts).unwrap();
    let strictly = curve.samples.windows(2).all(|w| w[1].kappa < w[0].kappa);
    let a = curve.fit.rate;
    Outcome {
        pass: strictly && (0.125..=8.0).contains(&a),
        detail: format!("rate a = {a:.4}, strictly decreasing = {strictly}"),
    }
}

fn resolvent_matrix() -> Vec<(f64, BoundaryCondition, usize, f64)> {
    let mut v = Vec::new();
    for l in [1.0, 2.0] {
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            for n in [4, 16] {
                for t in [0.5, 1.0] {
                    v.push((l, bc, n, t));
                }
            }
        }
    }
    v
}

fn resolvent_forward() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    let mut configs = 0;
    for (l, bc, n, t) in resolvent_matrix() {
        let op = ModalOperator::new(l, bc, n).unwrap();
        let g = schrodinger_gramian(&op, t, 1).unwrap();
        let (big_m, m) = constants_from_observability(g.cost().unwrap(), g.lambda_max(), t).unwrap();
        let grid = thin_grid(&op, &lambda_grid(&op), 50);
        let r = verify_resolvent(&op, 1, big_m, m, &grid, 200, &mut rng);
        worst = worst.max(r.max_violation).max(r.exact_violation);
        configs += 1;
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("{configs} configurations, worst violation {worst:.3e} <= 1e-9"),
    }
}

fn resolvent_converse() -> Outcome {
    let mut tested = 0;
    let mut worst_ratio = f64::INFINITY;
    for (l, bc, n, t0) in resolvent_matrix() {
        let op = ModalOperator::new(l, bc, n).unwrap();
        let g = schrodinger_gramian(&op, t0, 1).unwrap();
        let (_, m) = constants_from_observability(g.cost().unwrap(), g.lambda_max(), t0).unwrap();
        let big_m = grid_m(&op, 1, m, &lambda_grid(&op));
        for t in [0.5, 1.0, 2.0, 4.0] {
            let Ok((_, pred)) = best_bump(big_m, m, t) else {
                continue;
            };
            let kappa = schrodinger_gramian(&op, t, 1).unwrap().cost().unwrap();
            worst_ratio = worst_ratio.min(pred / kappa);
            tested += 1;
        }
    }
    Outcome {
        pass: tested > 0 && worst_ratio >= 1.0,
        detail: format!("{tested} horizons above threshold, min predicted/kappa = {worst_ratio:.4}"),
    }
}

fn tensor_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let t = [0.5, 1.0, 2.0][k % 3];
        let base = random_diagonal_system(&mut rng, n, 4.0 * PI).unwrap();
        let aux = random_hermitian(&mut rng, m);
        worst = worst.max(verify_cost_invariance(&base, &aux, t).unwrap().rel_diff);
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("50 instances, worst relative difference {worst:.3e} <= 1e-10"),
    }
}

fn kernel_properties() -> Outcome {
    let (l, t, n) = (2.2, 0.8, 32);
    let k = fundamental_kernel(l, t, n, kernel_grid(l, t, n).unwrap()).unwrap();
    let residual = k.terminal_max_coefficient();
    let odd = k.odd_part();
    let scaling = k.cost().ln() * t / (l * l);
    Outcome {
        pass: residual <= 1e-10 && odd == 0.0 && k.cost().is_finite() && scaling <= 16.0,
        detail: format!("max terminal coefficient {residual:.3e}, odd part {odd:e}, ln(cost)T/L^2 = {scaling:.4}"),
    }
}

fn transmutation_identity() -> Outcome {
    let target = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_state(&mut rng, 32);
    let (horizon, lk) = (0.8, 2.2);
    let cfg = PipelineConfig::default();
    let out = fast_control_pipeline(&target, horizon, &x, &cfg).unwrap();
    let terminal = target.sobolev_norm(&out.replay(&target, &x).unwrap()) / target.sobolev_norm(&x);

    // rebuild the stages and compare the two computations of φ(t)
    let t1 = 0.5 * horizon;
    let d = target.eigenvalues()[16] * t1 * t1;
    let phi1 = smoothing_control(&target, t1, d, &x, schrodinger_grid(&target, t1))
        .unwrap()
        .terminal;
    let nk = default_kernel_modes(&target, lk);
    let kernel = fundamental_kernel(lk, horizon - t1, nk, kernel_grid(lk, horizon - t1, nk).unwrap()).unwrap();
    let zeta = WaveState::at_rest(&phi1, WaveConvention::Energy);
    let v = h1_minimal_control(&target, lk, &zeta, 4 * wave_grid(&target, lk))
        .unwrap()
        .signal;
    let (traj, _) = wave_trajectory(&target, &zeta, &v).unwrap();
    let u = transmute_control(&kernel, &v).unwrap().signal;
    let last = kernel.intervals();
    let indices: Vec<usize> = (0..20)
        .map(|k| (k as f64 * last as f64 / 19.0).round() as usize)
        .collect();
    let transmuted = transmute_states(&kernel, &traj, &indices).unwrap();
    let mut direct = vec![ModalState::zeros(32, -1); indices.len()];
    duhamel_schrodinger_visit(&target, &phi1, &u, |j, a| {
        for (slot, &k) in indices.iter().enumerate() {
            if k == j {
                direct[slot].coeffs.copy_from_slice(a);
            }
        }
    })
    .unwrap();
    let scale = target.sobolev_norm(&phi1);
    let worst = direct
        .iter()
        .zip(&transmuted)
        .map(|(a, b)| {
            let diff: Vec<_> = a.coeffs.iter().zip(&b.coeffs).map(|(p, q)| p - q).collect();
            target.sobolev_norm(&ModalState::new(diff, -1)) / scale
        })
        .fold(0.0, f64::max);
    let agree = (worst - out.report.identity_error).abs() <= 1e-3 * worst.max(1e-300);
    Outcome {
        pass: worst <= 1e-4 && terminal <= 1e-3 && agree,
        detail: format!(
            "identity error {worst:.3e} <= 1e-4 at 20 samples, terminal residual {terminal:.3e} <= 1e-3, report agrees = {agree}"
        ),
    }
}

fn smoothing_cost() -> Outcome {
    let op = ModalOperator::new(1.0, BoundaryCondition::Dirichlet, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_state(&mut rng, 32);
    let d = op.eigenvalues()[16] * 0.04;
    let (mut xs, mut ys, mut hi) = (Vec::new(), Vec::new(), 0.0f64);
    for k in 0..9 {
        let t = 0.2 + 0.1 * k as f64;
        let s = smoothing_control(&op, t, d, &x, schrodinger_grid(&op, t)).unwrap();
        hi = s
            .high_modes
            .iter()
            .map(|&n| s.terminal.coeffs[n].norm())
            .fold(hi, f64::max);
        xs.push((1.0 / t).ln());
        ys.push(s.kappa.ln());
    }
    let slope = least_squares_line(&xs, &ys).unwrap().0;
    Outcome {
        pass: slope <= 3.0 && hi <= 1e-10,
        detail: format!("slope {slope:.4} <= 3, max high-mode terminal {hi:.3e} <= 1e-10"),
    }
}

fn csv_body(path: &std::path::Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    let mut codes = Vec::new();
    for k in 0..2 {
        let path = dir.path().join(format!("selftest{k}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_conscontrol"))
            .args(["selftest", "--seed", "0", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        codes.push(status.code());
        bodies.push(csv_body(&path));
    }
    let identical = bodies[0] == bodies[1] && !bodies[0].is_empty();
    Outcome {
        pass: identical && codes.iter().all(|c| *c == Some(0)),
        detail: format!("byte-identical bodies = {identical}, exit codes {codes:?}"),
    }
}

#[test]
fn acceptance_suite() {
    let s = Duration::from_secs;
    let results = [
        criterion(1, "HUM exactness", s(5), hum_exactness),
        criterion(2, "cost-rate band", s(30), cost_rate_band),
        criterion(3, "resolvent forward", s(60), resolvent_forward),
        criterion(4, "resolvent converse", s(60), resolvent_converse),
        criterion(5, "tensor invariance", s(10), tensor_invariance),
        criterion(6, "fundamental kernel", s(10), kernel_properties),
        criterion(7, "transmutation identity", s(60), transmutation_identity),
        criterion(8, "smoothing cost", s(20), smoothing_cost),
        criterion(9, "determinism", s(60), determinism),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(k, _)| k + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
