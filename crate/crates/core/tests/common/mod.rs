//! Independent oracles shared by the property and acceptance suites.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rdcal::calibrate::{build_d_matrix, mbc_calibrate, CalibrationInput};
use rdcal::discretize::{bilinear_transform, partial_fractions, ImpulseResponse};
use rdcal::filter::{lc_transfer_function, synthesize_nominal, Approximation, Component, LcComponents};
use rdcal::rd::{generate_chipping, generate_multitone, RdSystem};
use rdcal::solver::{solve_bpdn, solve_tikhonov, BpdnConfig, Identity, TikhonovProblem, Zeta};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Subsampler `B` (`M × N`, picks indices `0, R, 2R, …`).
pub fn subsampler(n: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n / r, n, |m, c| if c == m * r { 1.0 } else { 0.0 })
}

/// Lower-triangular Toeplitz convolution matrix of `h`.
pub fn toeplitz(h: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i >= j && i - j < h.len() { h[i - j] } else { 0.0 })
}

pub fn dense_bhp(h: &[f64], p: &[f64], r: usize) -> DMatrix<f64> {
    let n = p.len();
    subsampler(n, r) * toeplitz(h, n) * DMatrix::from_diagonal(&DVector::from_column_slice(p))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest `|D·e − B·E·P·x|` over `trials` random `e` on the retained rows.
pub fn d_identity_error(n: usize, r: usize, l: usize, seed: u64, trials: usize) -> f64 {
    let mut g = rng(seed);
    let p = generate_chipping(n, seed).unwrap().values;
    let x = random_vec(&mut g, n, 10.0);
    let d: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a * b).collect();
    let design = build_d_matrix(&d, r, l, n / r).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let e = random_vec(&mut g, l, 1.0);
        let lhs = &design.entries * DVector::from_column_slice(&e);
        let full = dense_bhp(&e, &p, r) * DVector::from_column_slice(&x);
        for (row, &m) in design.row_map.iter().enumerate() {
            worst = worst.max((lhs[row] - full[m]).abs());
        }
    }
    worst
}

/// `max |Φx − Φ_dense x|` and the same for the transpose, scaled by `‖x‖`.
pub fn matrix_free_error(n_blocks: usize, r: usize, l: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = n_blocks * r;
    let chip = generate_chipping(n, seed).unwrap();
    let h = random_vec(&mut g, l, 1.0);
    let sys = RdSystem::new(chip.clone(), ImpulseResponse::new(h.clone(), 1.0).unwrap(), r).unwrap();
    let dense = dense_bhp(&h, &chip.values, r);
    let x = random_vec(&mut g, n, 1.0);
    let y = random_vec(&mut g, n / r, 1.0);
    let fwd = sys.apply(&x).unwrap();
    let fwd_dense = &dense * DVector::from_column_slice(&x);
    let adj = sys.apply_transpose(&y).unwrap();
    let adj_dense = dense.tr_mul(&DVector::from_column_slice(&y));
    let e1 = max_abs_diff(&fwd, fwd_dense.as_slice()) / norm(&x).max(1.0);
    let e2 = max_abs_diff(&adj, adj_dense.as_slice()) / norm(&y).max(1.0);
    e1.max(e2)
}

/// Noiseless overdetermined MBC: `‖ê + e‖ / ‖e‖` with a planted `e`.
pub fn plant_and_recover_error(seed: u64, m_q: usize, l: usize, r: usize, k: usize) -> f64 {
    let mut g = rng(seed);
    let n = m_q * r;
    let h: Vec<f64> = (0..l).map(|i| (-(i as f64) / (l as f64 / 4.0)).exp() * 0.05).collect();
    let e = random_vec(&mut g, l, 1e-3);
    let hh: Vec<f64> = h.iter().zip(&e).map(|(a, b)| a + b).collect();
    let chip = generate_chipping(n, seed ^ 0xAB).unwrap();
    let nominal = RdSystem::new(chip.clone(), ImpulseResponse::new(h, 12_600.0).unwrap(), r).unwrap();
    let actual = RdSystem::new(chip, ImpulseResponse::new(hh, 12_600.0).unwrap(), r).unwrap();
    let xq = generate_multitone(k, 12_600.0, n, false, &mut g).unwrap();
    let measured = actual.apply(&xq.samples).unwrap();
    let res = mbc_calibrate(&CalibrationInput { known_signal: xq, system_model: nominal, measured, m_q }).unwrap();
    let dev: Vec<f64> = res.e_hat.iter().zip(&e).map(|(a, b)| a + b).collect();
    norm(&dev) / norm(&e)
}

/// LC components scattered up to `spread` around a nominal design.
pub fn random_components(g: &mut ChaCha8Rng, spread: f64) -> LcComponents {
    let approx = if g.random_bool(0.5) { Approximation::Butterworth } else { Approximation::Chebyshev };
    let mut c = synthesize_nominal(approx);
    for comp in Component::ALL {
        let v = c.get(comp) * (1.0 + g.random_range(-spread..spread));
        c.set(comp, v);
    }
    c
}

/// Relative difference between analog and discrete DC gain.
pub fn dc_gain_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let c = random_components(&mut g, 0.3);
    let analog = lc_transfer_function(&c).unwrap();
    let fs = g.random_range(5_000.0..50_000.0);
    let discrete = bilinear_transform(&analog, fs).unwrap();
    let h0 = analog.numerator[0] / analog.denominator[0];
    let hz: f64 = discrete.numerator.iter().sum::<f64>() / discrete.denominator.iter().sum::<f64>();
    (h0 - hz).abs() / h0.abs()
}

/// `max |H(z) − PF(z)|` on the unit circle relative to the DC gain.
pub fn partial_fraction_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let c = random_components(&mut g, 0.3);
    let analog = lc_transfer_function(&c).unwrap();
    let discrete = bilinear_transform(&analog, g.random_range(8_000.0..30_000.0)).unwrap();
    let pf = partial_fractions(&discrete).unwrap();
    let scale = discrete.dc_gain().abs();
    (0..64)
        .map(|k| {
            let z = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k as f64 + 0.3) / 64.0);
            (discrete.eval(z) - pf.eval(z)).norm() / scale
        })
        .fold(0.0, f64::max)
}

/// Checks primal feasibility, complementary slackness and stationarity of
/// a random active Tikhonov problem. Returns the worst relative violation.
pub fn tikhonov_kkt_violation(seed: u64) -> f64 {
    let mut g = rng(seed);
    let rows = g.random_range(4..12);
    let cols = rows + g.random_range(1..8);
    let d = DMatrix::from_fn(rows, cols, |_, _| g.random_range(-1.0..1.0));
    let rhs = random_vec(&mut g, rows, 3.0);
    let problem = TikhonovProblem::half_penalized(d.clone(), rhs.clone(), g.random_range(1e-3..1e-2));
    let out = solve_tikhonov(&problem).unwrap();
    let e = DVector::from_column_slice(&out.e);
    let ge = DVector::from_iterator(cols, problem.g_diag.iter().zip(&out.e).map(|(gi, ei)| gi * ei));
    let penalty = ge.norm_squared();
    let feas = ((penalty - problem.gamma) / problem.gamma).max(0.0);
    let slack = out.mu * (penalty - problem.gamma).abs() / (out.mu * problem.gamma + 1.0);
    let resid = &d * &e - DVector::from_column_slice(&rhs);
    let grad = d.tr_mul(&resid) + &ge * out.mu;
    let stat = grad.norm() / (d.tr_mul(&resid).norm() + out.mu * ge.norm() + 1e-300);
    assert!(out.mu >= 0.0);
    feas.max(slack).max(if out.mu > 0.0 { stat } else { d.tr_mul(&resid).norm() })
}

/// BPDN on zero measurements and on the identity operator.
pub fn bpdn_trivial_cases_hold() -> bool {
    let cfg = BpdnConfig { zeta: Zeta::Absolute(0.0), ..Default::default() };
    let zero = vec![Complex64::new(0.0, 0.0); 8];
    let a = solve_bpdn(&Identity(8), &zero, &cfg).unwrap();
    let zero_ok = a.x.iter().all(|v| v.norm() == 0.0);
    let y: Vec<Complex64> = (0..32).map(|i| Complex64::new((i as f64).sin() * 3.0, (i % 5) as f64 - 2.0)).collect();
    let b = solve_bpdn(&Identity(32), &y, &cfg).unwrap();
    let err: f64 = b.x.iter().zip(&y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
    let y_norm: f64 = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    zero_ok && err <= 1e-9 * y_norm
}
