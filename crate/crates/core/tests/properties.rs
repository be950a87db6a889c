mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use rdcal::discretize::ImpulseResponse;
use rdcal::experiments::{rmse_slices, snr};
use rdcal::filter::ToleranceModel;
use rdcal::rd::{generate_chipping, FourierDictionary, RdSystem};
use rdcal::solver::bpdn::project_l1_ball;

fn system(n_blocks: usize, r: usize, h: Vec<f64>, seed: u64) -> RdSystem {
    RdSystem::new(generate_chipping(n_blocks * r, seed).unwrap(), ImpulseResponse::new(h, 1.0).unwrap(), r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matrix_free_equals_dense(n_blocks in 1usize..12, r in 1usize..8, l in 1usize..30, seed in any::<u64>()) {
        let l = l.min(n_blocks * r);
        prop_assert!(matrix_free_error(n_blocks, r, l, seed) <= 1e-12);
    }

    #[test]
    fn forward_model_is_linear(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let mut g = rng(seed);
        let sys = system(10, 4, random_vec(&mut g, 9, 1.0), seed);
        let x = random_vec(&mut g, 40, 1.0);
        let z = random_vec(&mut g, 40, 1.0);
        let mix: Vec<f64> = x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect();
        let lhs = sys.apply(&mix).unwrap();
        let yx = sys.apply(&x).unwrap();
        let yz = sys.apply(&z).unwrap();
        let rhs: Vec<f64> = yx.iter().zip(&yz).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(max_abs_diff(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn adjoint_identity(seed in any::<u64>()) {
        let mut g = rng(seed);
        let sys = system(15, 3, random_vec(&mut g, 7, 1.0), seed);
        let x = random_vec(&mut g, 45, 1.0);
        let y = random_vec(&mut g, 15, 1.0);
        let lhs: f64 = sys.apply(&x).unwrap().iter().zip(&y).map(|(p, q)| p * q).sum();
        let rhs: f64 = x.iter().zip(&sys.apply_transpose(&y).unwrap()).map(|(p, q)| p * q).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn structured_perturbation_is_additive(seed in any::<u64>()) {
        let mut g = rng(seed);
        let h = random_vec(&mut g, 11, 1.0);
        let e = random_vec(&mut g, 11, 1e-2);
        let he: Vec<f64> = h.iter().zip(&e).map(|(a, b)| a + b).collect();
        let x = random_vec(&mut g, 60, 1.0);
        let yh = system(12, 5, h, seed).apply(&x).unwrap();
        let ye = system(12, 5, e, seed).apply(&x).unwrap();
        let yhe = system(12, 5, he, seed).apply(&x).unwrap();
        let sum: Vec<f64> = yh.iter().zip(&ye).map(|(a, b)| a + b).collect();
        prop_assert!(max_abs_diff(&yhe, &sum) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn d_matrix_reproduces_bepx(n_blocks in 2usize..15, r in 1usize..5, l in 1usize..12, seed in any::<u64>()) {
        let n = (n_blocks * r).min(60);
        let n_blocks = n / r;
        let l = l.min(n);
        prop_assume!(n_blocks > (l.saturating_sub(1)).div_ceil(r));
        prop_assert!(d_identity_error(n_blocks * r, r, l, seed, 50) <= 1e-13);
    }

    #[test]
    fn mbc_recovers_planted_error(seed in any::<u64>(), extra in 0usize..40) {
        let l = 24;
        let m_q = l + 6 + extra;
        prop_assert!(plant_and_recover_error(seed, m_q, l, 4, 10) <= 1e-8);
    }

    #[test]
    fn bilinear_keeps_dc_gain(seed in any::<u64>()) {
        prop_assert!(dc_gain_error(seed) <= 1e-10);
    }

    #[test]
    fn partial_fractions_round_trip(seed in any::<u64>()) {
        prop_assert!(partial_fraction_error(seed) <= 1e-10);
    }

    #[test]
    fn tikhonov_satisfies_kkt(seed in any::<u64>()) {
        prop_assert!(tikhonov_kkt_violation(seed) <= 1e-6);
    }

    #[test]
    fn l1_projection_lands_in_ball(seed in any::<u64>(), tau in 0.0f64..20.0) {
        let mut g = rng(seed);
        let mut v: Vec<Complex64> = (0..30).map(|_| Complex64::new(g.random_range(-3.0..3.0), g.random_range(-3.0..3.0))).collect();
        let before: f64 = v.iter().map(|z| z.norm()).sum();
        project_l1_ball(&mut v, tau);
        let after: f64 = v.iter().map(|z| z.norm()).sum();
        prop_assert!(after <= tau * (1.0 + 1e-12) + 1e-12);
        if before > tau {
            prop_assert!((after - tau).abs() <= 1e-9 * (1.0 + tau));
        }
        let again = { let mut w = v.clone(); project_l1_ball(&mut w, tau); w };
        for (a, b) in again.iter().zip(&v) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn l1_projection_matches_sorting_oracle(seed in any::<u64>(), tau in 0.01f64..40.0, n in 1usize..80) {
        let mut g = rng(seed);
        let v: Vec<f64> = (0..n).map(|_| g.random_range(-3.0..3.0)).collect();
        let mut got = v.clone();
        project_l1_ball(&mut got, tau);
        let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        let theta = if mags.iter().sum::<f64>() <= tau {
            0.0
        } else {
            let mut cum = 0.0;
            let mut t = 0.0;
            for (i, m) in mags.iter().enumerate() {
                cum += m;
                let cand = (cum - tau) / (i + 1) as f64;
                if i + 1 == mags.len() || mags[i + 1] <= cand {
                    t = cand;
                    break;
                }
            }
            t
        };
        for (a, b) in got.iter().zip(&v) {
            let want = b.signum() * (b.abs() - theta).max(0.0);
            prop_assert!((a - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn dictionary_is_unitary(seed in any::<u64>(), n in 2usize..200) {
        let mut g = rng(seed);
        let alpha: Vec<Complex64> = (0..n).map(|_| Complex64::new(g.random_range(-1.0..1.0), g.random_range(-1.0..1.0))).collect();
        let dict = FourierDictionary::new(n);
        let x = dict.synthesize(&alpha).unwrap();
        let na: f64 = alpha.iter().map(|z| z.norm_sqr()).sum();
        let nx: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((na - nx).abs() <= 1e-12 * na);
        let back = dict.analyze(&x).unwrap();
        for (a, b) in back.iter().zip(&alpha) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn tolerance_draws_stay_in_band(seed in any::<u64>(), mu in 1e-9f64..1e3, frac in 0.0f64..0.2) {
        let model = ToleranceModel { sigma_fraction: frac, truncation: 1.0, seed };
        let mut g = model.rng();
        for _ in 0..20 {
            let v = model.draw(mu, &mut g);
            prop_assert!((v - mu).abs() <= frac * mu * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rmse_of_constant_offset(c in -1.0f64..1.0, len in 1usize..300) {
        let a = vec![0.25; len];
        let b: Vec<f64> = a.iter().map(|v| v + c).collect();
        prop_assert!((rmse_slices(&a, &b).unwrap() - c.abs()).abs() <= 1e-12);
    }

    #[test]
    fn snr_of_scaled_copy(seed in any::<u64>(), eps in 1e-8f64..0.5) {
        let mut g = rng(seed);
        let x = random_vec(&mut g, 50, 1.0);
        let y: Vec<f64> = x.iter().map(|v| v * (1.0 - eps)).collect();
        prop_assert!((snr(&x, &y).unwrap() + 20.0 * eps.log10()).abs() <= 1e-6);
    }
}

#[test]
fn bpdn_trivial_cases() {
    assert!(bpdn_trivial_cases_hold());
}
