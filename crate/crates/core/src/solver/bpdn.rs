//! Basis pursuit denoising via Pareto-curve root finding.
//!
//! The value function `φ(τ) = min{‖y − Aα‖₂ : ‖α‖₁ ≤ τ}` is convex and
//! decreasing; its derivative is `−‖Aᴴr‖∞ / ‖r‖₂`. Newton steps on
//! `φ(τ) = ζ` move τ, and each LASSO subproblem is advanced by spectral
//! projected gradient with a non-monotone (GLL) line search. One iteration
//! costs one forward and one adjoint application.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Element, LinearOperator};
use crate::{Error, Result};

const STEP_MIN: f64 = 1e-16;
const STEP_MAX: f64 = 1e5;
const GLL_MEMORY: usize = 3;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 12;
const RESIDUAL_REFRESH: usize = 50;

/// Residual bound `ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Zeta {
    Absolute(f64),
    /// Fraction of `‖y‖₂`.
    Relative(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BpdnConfig {
    pub zeta: Zeta,
    pub max_iterations: usize,
    /// Relative tolerance on the duality gap of each subproblem and on `‖r‖ − ζ`.
    pub optimality_tolerance: f64,
    /// Stop once `‖r‖ ≤ bp_tolerance·‖y‖` (basis pursuit solution reached).
    pub bp_tolerance: f64,
    /// Relative objective decrease that counts as subproblem stagnation.
    pub decrease_tolerance: f64,
    pub record_trace: bool,
}

impl Default for BpdnConfig {
    fn default() -> Self {
        Self {
            zeta: Zeta::Relative(1e-6),
            max_iterations: 2500,
            optimality_tolerance: 1e-4,
            bp_tolerance: 1e-12,
            decrease_tolerance: 1e-4,
            record_trace: false,
        }
    }
}

impl BpdnConfig {
    pub fn validate(&self) -> Result<()> {
        let z = match self.zeta {
            Zeta::Absolute(v) | Zeta::Relative(v) => v,
        };
        if !(z >= 0.0 && z.is_finite()) {
            return Err(Error::InvalidParameter(format!("zeta must be >= 0, got {z}")));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.optimality_tolerance > 0.0) {
            return Err(Error::InvalidParameter("optimality_tolerance must be > 0".into()));
        }
        Ok(())
    }

    fn sigma(&self, b_norm: f64) -> f64 {
        match self.zeta {
            Zeta::Absolute(v) => v,
            Zeta::Relative(v) => v * b_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpdnStatus {
    /// `‖r‖ ≤ ζ` reached on the Pareto curve.
    RootFound,
    /// `‖r‖` is at the basis-pursuit tolerance.
    BasisPursuit,
    /// The gradient vanished before `ζ` was reached: least-squares limit.
    LeastSquares,
    /// `‖y‖ ≤ ζ`; zero is optimal.
    Trivial,
    IterationLimit,
    LineSearchFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub residual: f64,
    pub one_norm: f64,
    pub tau: f64,
    /// True on iterations where τ was updated (an outer step).
    pub newton_update: bool,
}

#[derive(Debug, Clone)]
pub struct BpdnResult<E> {
    pub x: Vec<E>,
    pub residual_norm: f64,
    pub one_norm: f64,
    pub tau: f64,
    pub iterations: usize,
    pub newton_steps: usize,
    pub status: BpdnStatus,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// Writes the trace as `iteration,residual,one_norm,tau,newton_update`.
pub fn write_trace_csv<W: Write>(w: W, trace: &[TraceEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["iteration", "residual", "one_norm", "tau", "newton_update"])?;
    for t in trace {
        wtr.write_record([
            t.iteration.to_string(),
            format!("{:.17e}", t.residual),
            format!("{:.17e}", t.one_norm),
            format!("{:.17e}", t.tau),
            (t.newton_update as u8).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn norm2<E: Element>(v: &[E]) -> f64 {
    v.iter().map(|&e| e.re_dot(e)).sum::<f64>().sqrt()
}

fn norm1<E: Element>(v: &[E]) -> f64 {
    v.iter().map(|e| e.modulus()).sum()
}

fn norm_inf<E: Element>(v: &[E]) -> f64 {
    v.iter().map(|e| e.modulus()).fold(0.0, f64::max)
}

fn re_dot<E: Element>(a: &[E], b: &[E]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x.re_dot(y)).sum()
}

/// Euclidean projection onto `{x : Σ modulus(xᵢ) ≤ τ}`: soft-threshold the
/// moduli, keep the phases.
pub fn project_l1_ball<E: Element>(x: &mut [E], tau: f64) {
    if tau <= 0.0 {
        x.iter_mut().for_each(|v| *v = E::zero());
        return;
    }
    if norm1(x) <= tau {
        return;
    }
    // Michelot's active-set iteration.
    let mags: Vec<f64> = x.iter().map(|e| e.modulus()).collect();
    let mut active: Vec<f64> = mags.iter().copied().filter(|&m| m > 0.0).collect();
    let mut theta = (active.iter().sum::<f64>() - tau) / active.len() as f64;
    loop {
        let before = active.len();
        active.retain(|&m| m > theta);
        if active.len() == before {
            break;
        }
        theta = (active.iter().sum::<f64>() - tau) / active.len() as f64;
    }
    for (v, &m) in x.iter_mut().zip(&mags) {
        *v = if m > theta { *v * ((m - theta) / m) } else { E::zero() };
    }
}

/// Solve `min ‖α‖₁ s.t. ‖y − Aα‖₂ ≤ ζ`.
pub fn solve_bpdn<E: Element, A: LinearOperator<E> + ?Sized>(
    op: &A,
    y: &[E],
    cfg: &BpdnConfig,
) -> Result<BpdnResult<E>> {
    cfg.validate()?;
    let (m, n) = (op.rows(), op.cols());
    if y.len() != m {
        return Err(Error::DimensionMismatch(format!("measurements {} vs operator rows {m}", y.len())));
    }
    let b_norm = norm2(y);
    let sigma = cfg.sigma(b_norm);
    let tol = cfg.optimality_tolerance;
    let mut trace = Vec::new();

    if b_norm <= sigma || b_norm == 0.0 {
        return Ok(BpdnResult {
            x: vec![E::zero(); n],
            residual_norm: b_norm,
            one_norm: 0.0,
            tau: 0.0,
            iterations: 0,
            newton_steps: 0,
            status: BpdnStatus::Trivial,
            converged: true,
            trace,
        });
    }

    let mut x = vec![E::zero(); n];
    let mut r = y.to_vec();
    let mut g = vec![E::zero(); n];
    op.apply_adjoint(&r, &mut g);
    g.iter_mut().for_each(|v| *v = *v * -1.0);
    let mut f = 0.5 * b_norm * b_norm;

    // First Newton step from τ = 0.
    let g0 = norm_inf(&g);
    if g0 == 0.0 {
        return Ok(BpdnResult {
            x,
            residual_norm: b_norm,
            one_norm: 0.0,
            tau: 0.0,
            iterations: 0,
            newton_steps: 0,
            status: BpdnStatus::LeastSquares,
            converged: false,
            trace,
        });
    }
    let mut tau = b_norm * (b_norm - sigma) / g0;
    let mut newton_steps = 1usize;

    let mut step = {
        let mut trial: Vec<E> = x.iter().zip(&g).map(|(&xi, &gi)| xi - gi).collect();
        project_l1_ball(&mut trial, tau);
        let d = trial.iter().zip(&x).map(|(&a, &b)| (a - b).modulus()).fold(0.0, f64::max);
        if d < 1.0 / STEP_MAX {
            STEP_MAX
        } else {
            (1.0 / d).clamp(STEP_MIN, STEP_MAX)
        }
    };

    let mut last_f = [f64::NEG_INFINITY; GLL_MEMORY];
    last_f[0] = f;
    let mut f_old = f;
    let mut just_updated = true;
    let mut best: Option<(f64, Vec<E>)> = None;
    let mut status = BpdnStatus::IterationLimit;
    let mut iter = 0usize;
    let mut ax = vec![E::zero(); m];
    let mut a_dx = vec![E::zero(); m];
    let mut since_refresh = 0usize;
    let mut force_newton = false;
    let mut forced_in_row = 0usize;

    loop {
        let r_norm = norm2(&r);
        let g_norm = norm_inf(&g);
        let one = norm1(&x);
        // Duality gap of the LASSO subproblem: τ‖Aᴴr‖∞ − Re⟨r, Ax⟩.
        let gap = tau * g_norm - (re_dot(&r, y) - r_norm * r_norm);
        let rel_gap = gap.abs() / f.max(f64::MIN_POSITIVE);
        let root_err = (r_norm - sigma).abs() / sigma.max(cfg.bp_tolerance * b_norm).max(f64::MIN_POSITIVE);

        if best.as_ref().is_none_or(|(bn, _)| r_norm < *bn) {
            best = Some((r_norm, x.clone()));
        }

        let mut newton_update = false;
        let mut done = false;
        if r_norm <= cfg.bp_tolerance * b_norm {
            status = BpdnStatus::BasisPursuit;
            done = true;
        } else if r_norm <= sigma * (1.0 + tol) && (rel_gap <= tol || root_err <= tol) {
            status = BpdnStatus::RootFound;
            done = true;
        } else if g_norm <= cfg.bp_tolerance * r_norm {
            status = BpdnStatus::LeastSquares;
            done = true;
        }

        if !done {
            let change = (f - f_old).abs();
            let stalled = if r_norm > 2.0 * sigma {
                change <= cfg.decrease_tolerance * f
            } else {
                change <= 0.1 * f * (r_norm - sigma).abs() / r_norm
            };
            let subproblem_solved = rel_gap <= tol;
            if force_newton || ((subproblem_solved || stalled) && !just_updated && iter > 0) {
                let tau_old = tau;
                tau = (tau + r_norm * (r_norm - sigma) / g_norm).max(0.0);
                newton_steps += 1;
                newton_update = true;
                if tau < tau_old {
                    project_l1_ball(&mut x, tau);
                    op.apply(&x, &mut ax);
                    for (ri, (&yi, &ai)) in r.iter_mut().zip(y.iter().zip(&ax)) {
                        *ri = yi - ai;
                    }
                    op.apply_adjoint(&r, &mut g);
                    g.iter_mut().for_each(|v| *v = *v * -1.0);
                    f = 0.5 * norm2(&r).powi(2);
                    last_f = [f64::NEG_INFINITY; GLL_MEMORY];
                    last_f[0] = f;
                }
            }
        }
        just_updated = newton_update;
        force_newton = false;

        if cfg.record_trace {
            trace.push(TraceEntry { iteration: iter, residual: r_norm, one_norm: one, tau, newton_update });
        }
        if done {
            break;
        }
        if iter >= cfg.max_iterations {
            status = BpdnStatus::IterationLimit;
            break;
        }
        iter += 1;
        f_old = f;

        // Projected direction and non-monotone backtracking along it.
        let mut dx: Vec<E> = x.iter().zip(&g).map(|(&xi, &gi)| xi - gi * step).collect();
        project_l1_ball(&mut dx, tau);
        for (d, &xi) in dx.iter_mut().zip(&x) {
            *d = *d - xi;
        }
        let dxg = re_dot(&dx, &g);
        if dxg >= 0.0 {
            // The subproblem is solved at this τ: move τ instead.
            forced_in_row += 1;
            if forced_in_row > 3 {
                status = BpdnStatus::LineSearchFailure;
                break;
            }
            force_newton = true;
            continue;
        }
        forced_in_row = 0;
        op.apply(&dx, &mut a_dx);
        let f_max = last_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..MAX_BACKTRACKS {
            // r(α) = r − α·A·dx
            let mut acc = 0.0;
            for (&ri, &ai) in r.iter().zip(&a_dx) {
                let v = ri - ai * alpha;
                acc += v.re_dot(v);
            }
            f_new = 0.5 * acc;
            if f_new < f_max + ARMIJO * alpha * dxg {
                accepted = true;
                break;
            }
            let denom = 2.0 * (f_new - f - alpha * dxg);
            let q = if denom > 0.0 { -dxg * alpha * alpha / denom } else { alpha * 0.5 };
            alpha = if q >= 0.1 * alpha && q <= 0.9 * alpha { q } else { alpha * 0.5 };
        }
        if !accepted {
            status = BpdnStatus::LineSearchFailure;
            break;
        }

        let x_prev = x.clone();
        let g_prev = g.clone();
        for (xi, &di) in x.iter_mut().zip(&dx) {
            *xi = *xi + di * alpha;
        }
        since_refresh += 1;
        if since_refresh >= RESIDUAL_REFRESH || newton_update {
            op.apply(&x, &mut ax);
            for (ri, (&yi, &ai)) in r.iter_mut().zip(y.iter().zip(&ax)) {
                *ri = yi - ai;
            }
            f_new = 0.5 * norm2(&r).powi(2);
            since_refresh = 0;
        } else {
            for (ri, &ai) in r.iter_mut().zip(&a_dx) {
                *ri = *ri - ai * alpha;
            }
        }
        f = f_new;
        op.apply_adjoint(&r, &mut g);
        g.iter_mut().for_each(|v| *v = *v * -1.0);

        // Barzilai–Borwein step.
        let mut sts = 0.0;
        let mut sty = 0.0;
        for i in 0..n {
            let s = x[i] - x_prev[i];
            let yv = g[i] - g_prev[i];
            sts += s.re_dot(s);
            sty += s.re_dot(yv);
        }
        step = if sty <= 0.0 { STEP_MAX } else { (sts / sty).clamp(STEP_MIN, STEP_MAX) };
        last_f[iter % GLL_MEMORY] = f;
    }

    let mut r_norm = norm2(&r);
    let converged = matches!(
        status,
        BpdnStatus::RootFound | BpdnStatus::BasisPursuit | BpdnStatus::Trivial
    );
    if !converged {
        if let Some((bn, bx)) = best {
            if bn < r_norm {
                x = bx;
                r_norm = bn;
            }
        }
    }
    Ok(BpdnResult {
        one_norm: norm1(&x),
        x,
        residual_norm: r_norm,
        tau,
        iterations: iter,
        newton_steps,
        status,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{ComplexMatrixOperator, Identity, RealPair, StackedRealOperator};
    use nalgebra::DMatrix;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(m: usize, n: usize, k: usize, seed: u64) -> (DMatrix<Complex64>, Vec<Complex64>, Vec<Complex64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (m as f64).sqrt();
        let a = DMatrix::from_fn(m, n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
        });
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        for i in rand::seq::index::sample(&mut rng, n, k) {
            x[i] = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        }
        let y = (&a * nalgebra::DVector::from_column_slice(&x)).as_slice().to_vec();
        (a, x, y)
    }

    #[test]
    fn projection_hits_radius() {
        let mut v = vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, -1.0), Complex64::new(0.5, 0.0)];
        project_l1_ball(&mut v, 2.0);
        assert!((norm1(&v) - 2.0).abs() < 1e-12);
        // Phase is kept.
        assert!((v[0].arg() - Complex64::new(3.0, 4.0).arg()).abs() < 1e-12);
        let mut w = vec![1.0, -1.0];
        project_l1_ball(&mut w, 5.0);
        assert_eq!(w, vec![1.0, -1.0]);
    }

    #[test]
    fn zero_measurements() {
        let y = vec![Complex64::new(0.0, 0.0); 4];
        let cfg = BpdnConfig { zeta: Zeta::Absolute(0.0), ..Default::default() };
        let res = solve_bpdn(&Identity(4), &y, &cfg).unwrap();
        assert!(res.x.iter().all(|v| v.norm() == 0.0));
        assert!(res.converged);
    }

    #[test]
    fn identity_operator_returns_measurements() {
        let y: Vec<Complex64> = (0..16).map(|i| Complex64::new((i as f64 - 7.0) / 3.0, (i % 3) as f64)).collect();
        let cfg = BpdnConfig { zeta: Zeta::Absolute(0.0), ..Default::default() };
        let res = solve_bpdn(&Identity(16), &y, &cfg).unwrap();
        let err: f64 = res.x.iter().zip(&y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-9 * norm2(&y), "err {err} status {:?}", res.status);
    }

    #[test]
    fn recovers_sparse_vector() {
        let (a, x, y) = random_problem(60, 128, 6, 1);
        let op = ComplexMatrixOperator(a);
        let cfg = BpdnConfig { record_trace: true, ..Default::default() };
        let res = solve_bpdn(&op, &y, &cfg).unwrap();
        assert!(res.converged, "{:?}", res.status);
        assert!(res.residual_norm <= 1e-6 * norm2(&y) * (1.0 + cfg.optimality_tolerance));
        let err: f64 = res.x.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-4 * norm2(&x), "err {err}");

        // Residual is non-increasing across outer (Newton) updates.
        let outer: Vec<f64> = res.trace.iter().filter(|t| t.newton_update).map(|t| t.residual).collect();
        assert!(outer.len() >= 2);
        for w in outer.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{outer:?}");
        }
    }

    #[test]
    fn complex_and_stacked_real_agree() {
        for seed in 0..4 {
            let (a, _, y) = random_problem(40, 90, 5, 10 + seed);
            let complex = solve_bpdn(&ComplexMatrixOperator(a.clone()), &y, &BpdnConfig::default()).unwrap();
            let yp: Vec<RealPair> = y.iter().map(|z| RealPair(z.re, z.im)).collect();
            let stacked = solve_bpdn(&StackedRealOperator::new(&a), &yp, &BpdnConfig::default()).unwrap();
            assert_eq!(complex.iterations, stacked.iterations);
            for (c, s) in complex.x.iter().zip(&stacked.x) {
                assert!((c.re - s.0).abs() < 1e-9 && (c.im - s.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (a, _, y) = random_problem(30, 80, 10, 3);
        let cfg = BpdnConfig { max_iterations: 3, ..Default::default() };
        let res = solve_bpdn(&ComplexMatrixOperator(a), &y, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.status, BpdnStatus::IterationLimit);
        assert!(res.residual_norm < norm2(&y));
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &[TraceEntry { iteration: 0, residual: 1.0, one_norm: 0.0, tau: 0.5, newton_update: true }]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iteration,residual,one_norm,tau,newton_update\n"));
    }
}
