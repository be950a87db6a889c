//! Model-based calibration (MBC) of the filter taps and the Fourier-probing
//! (DFTTI) baseline.
//!
//! MBC samples a known calibration signal `x_q` with the real front end,
//! compares against the nominal model and solves for the tap error `e` in
//!
//! ```text
//! y̌ = y_q − ŷ_q = −B·E·P·x_q = −D·e
//! ```
//!
//! so the estimate satisfies `ê ≈ −e` and the calibrated taps are `h̊ = h − ê`.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretize::ImpulseResponse;
use crate::rd::{FourierDictionary, MultitoneSignal, RdSystem};
use crate::solver::{lambda_min_gram, solve_least_squares, solve_tikhonov, TikhonovProblem};
use crate::{Error, Result};

/// Rows of `D` with partial support on the taps.
pub fn truncated_rows(l: usize, r: usize) -> usize {
    if l > r {
        (l - 1).div_ceil(r)
    } else {
        0
    }
}

/// Convolution design matrix: `D·e` reproduces `B·E·P·x_q` on the retained rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub entries: DMatrix<f64>,
    /// Measurement index of each retained row.
    pub row_map: Vec<usize>,
    pub truncated: usize,
}

/// `D[m, l] = d[mR − l]` (zero when `mR < l`) for `m` in `0..m_q`,
/// `l` in `0..L`, dropping the leading rows with partial support.
pub fn build_d_matrix(demodulated: &[f64], r: usize, l: usize, m_q: usize) -> Result<DesignMatrix> {
    let n = demodulated.len();
    if r == 0 || l == 0 {
        return Err(Error::InvalidParameter("R and L must be >= 1".into()));
    }
    if l > n {
        return Err(Error::DimensionMismatch(format!("L = {l} exceeds record length {n}")));
    }
    if m_q == 0 || (m_q - 1) * r >= n {
        return Err(Error::DimensionMismatch(format!(
            "{m_q} measurements at R = {r} need more than {n} samples"
        )));
    }
    let truncated = truncated_rows(l, r).min(m_q);
    let row_map: Vec<usize> = (truncated..m_q).collect();
    let mut entries = DMatrix::<f64>::zeros(row_map.len(), l);
    for (row, &m) in row_map.iter().enumerate() {
        let end = m * r;
        for tap in 0..l.min(end + 1) {
            entries[(row, tap)] = demodulated[end - tap];
        }
    }
    Ok(DesignMatrix { entries, row_map, truncated })
}

/// Everything MBC needs: the known signal, the nominal model it was
/// recorded under, and the real front end's measurements of it.
#[derive(Debug, Clone)]
pub struct CalibrationInput {
    pub known_signal: MultitoneSignal,
    pub system_model: RdSystem,
    pub measured: Vec<f64>,
    pub m_q: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    LeastSquares,
    Tikhonov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub e_hat: Vec<f64>,
    pub h_ring: ImpulseResponse,
    pub branch: Branch,
    /// `‖D ê − y̌‖₂` on the retained rows.
    pub residual_norm: f64,
    pub truncated_rows: usize,
    pub retained_rows: usize,
    /// Calibration measurements consumed.
    pub samples_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tikhonov_mu: Option<f64>,
}

impl CalibrationResult {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Algorithm: `y_q = Φ x_q`, `y̌ = y_q − ŷ_q`, build and truncate `D`, solve
/// least squares when at least `L` rows survive (Tikhonov otherwise, or when
/// `D` is rank deficient), then `h̊ = h − ê`.
pub fn mbc_calibrate(input: &CalibrationInput) -> Result<CalibrationResult> {
    let sys = &input.system_model;
    let l = sys.h.len();
    if input.measured.len() != input.m_q {
        return Err(Error::DimensionMismatch(format!(
            "{} measurements supplied, M_q = {}",
            input.measured.len(),
            input.m_q
        )));
    }
    if input.known_signal.len() != sys.n {
        return Err(Error::DimensionMismatch(format!(
            "known signal has {} samples, model grid has {}",
            input.known_signal.len(),
            sys.n
        )));
    }
    if input.m_q > sys.m {
        return Err(Error::DimensionMismatch(format!("M_q = {} exceeds model measurements {}", input.m_q, sys.m)));
    }

    let x = &input.known_signal.samples;
    let y_model = sys.apply(x)?;
    let y_check: Vec<f64> = y_model[..input.m_q]
        .iter()
        .zip(&input.measured)
        .map(|(a, b)| a - b)
        .collect();
    let demod: Vec<f64> = x.iter().zip(&sys.chipping.values).map(|(a, p)| a * p).collect();
    let design = build_d_matrix(&demod, sys.r, l, input.m_q)?;
    let rhs: Vec<f64> = design.row_map.iter().map(|&m| y_check[m]).collect();
    let rows = design.row_map.len();

    let least_squares = if rows >= l {
        match solve_least_squares(&design.entries, &rhs) {
            Ok(e) => Some(e),
            Err(Error::RankDeficient(c)) => {
                log::warn!("D is rank deficient (cond {c:.2e}); using the Tikhonov branch");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let (e_hat, branch, mu) = match least_squares {
        Some(e) => (e, Branch::LeastSquares, None),
        None => {
            if rows == 0 {
                return Err(Error::DimensionMismatch("no calibration rows left after truncation".into()));
            }
            let gamma = lambda_min_gram(&design.entries);
            let gamma = if gamma > 0.0 { gamma } else { f64::EPSILON };
            let out = solve_tikhonov(&TikhonovProblem::half_penalized(design.entries.clone(), rhs.clone(), gamma))?;
            if !out.bracketed {
                log::warn!("Tikhonov multiplier not bracketed; boundary solution returned");
            }
            (out.e, Branch::Tikhonov, Some(out.mu))
        }
    };

    let fitted = &design.entries * DVector::from_column_slice(&e_hat);
    let residual_norm = fitted
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let h_ring_taps: Vec<f64> = sys.h.samples.iter().zip(&e_hat).map(|(h, e)| h - e).collect();
    let h_ring = ImpulseResponse::new(h_ring_taps, sys.h.sample_rate)?;

    Ok(CalibrationResult {
        e_hat,
        h_ring,
        branch,
        residual_norm,
        truncated_rows: design.truncated,
        retained_rows: rows,
        samples_used: input.m_q,
        tikhonov_mu: mu,
    })
}

/// Same chipping and dimensions, replaced filter.
pub fn rebuild_system(nominal: &RdSystem, h_new: &ImpulseResponse) -> Result<RdSystem> {
    nominal.with_filter(h_new.clone())
}

/// A front end that can only be observed through its outputs.
pub trait Sampler: Sync {
    fn grid_len(&self) -> usize;
    fn measurements(&self) -> usize;
    fn sample(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Sampler for RdSystem {
    fn grid_len(&self) -> usize {
        self.n
    }
    fn measurements(&self) -> usize {
        self.m
    }
    fn sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply(x)
    }
}

/// Wraps a sampler and counts probes and output samples.
pub struct CountingSampler<'a, S: Sampler + ?Sized> {
    inner: &'a S,
    probes: AtomicUsize,
    samples: AtomicUsize,
}

impl<'a, S: Sampler + ?Sized> CountingSampler<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self { inner, probes: AtomicUsize::new(0), samples: AtomicUsize::new(0) }
    }
    pub fn probes(&self) -> usize {
        self.probes.load(Ordering::Relaxed)
    }
    pub fn samples(&self) -> usize {
        self.samples.load(Ordering::Relaxed)
    }
}

impl<S: Sampler + ?Sized> Sampler for CountingSampler<'_, S> {
    fn grid_len(&self) -> usize {
        self.inner.grid_len()
    }
    fn measurements(&self) -> usize {
        self.inner.measurements()
    }
    fn sample(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.inner.sample(x)?;
        self.probes.fetch_add(1, Ordering::Relaxed);
        self.samples.fetch_add(y.len(), Ordering::Relaxed);
        Ok(y)
    }
}

#[derive(Debug, Clone)]
pub struct DfttiResult {
    /// Measured `Φ_D`, `M × N`.
    pub phi: DMatrix<f64>,
    pub probes: usize,
    pub samples: usize,
}

/// Measure the whole matrix by Fourier probing: feed the `N` real atoms
/// `cos(2πkn/N)` (`0 ≤ k ≤ N/2`) and `sin(2πkn/N)` (`0 < k < N/2`), assemble
/// the columns of `Φ Ψ` from the responses and map back with `Ψᴴ` row by row.
pub fn dftti_calibrate<S: Sampler + ?Sized>(sampler: &S, probe_budget: Option<usize>) -> Result<DfttiResult> {
    let n = sampler.grid_len();
    let m = sampler.measurements();
    if let Some(budget) = probe_budget {
        if n > budget {
            return Err(Error::ProbeBudget { needed: n, budget });
        }
    }
    let cos_table: Vec<f64> = (0..n)
        .map(|j| (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos())
        .collect();
    let sin_table: Vec<f64> = (0..n)
        .map(|j| (2.0 * std::f64::consts::PI * j as f64 / n as f64).sin())
        .collect();
    let half = n / 2;
    let sine_count = (n - 1) / 2;

    // Column k ≤ N/2 holds the cosine response, column N − k (k ≥ 1, k < N/2) the sine response.
    let mut responses = DMatrix::<f64>::zeros(m, n);
    let mut probe = vec![0.0; n];
    let mut probes = 0usize;
    let mut samples = 0usize;
    let mut record = |col: usize, probe: &[f64], responses: &mut DMatrix<f64>| -> Result<()> {
        let y = sampler.sample(probe)?;
        if y.len() != m {
            return Err(Error::DimensionMismatch(format!("sampler returned {} of {m} samples", y.len())));
        }
        responses.column_mut(col).copy_from_slice(&y);
        probes += 1;
        samples += y.len();
        Ok(())
    };
    for k in 0..=half {
        for (i, v) in probe.iter_mut().enumerate() {
            *v = cos_table[(k * i) % n];
        }
        record(k, &probe, &mut responses)?;
    }
    for k in 1..=sine_count {
        for (i, v) in probe.iter_mut().enumerate() {
            *v = sin_table[(k * i) % n];
        }
        record(n - k, &probe, &mut responses)?;
    }

    let dict = FourierDictionary::new(n);
    let scale = 1.0 / (n as f64).sqrt();
    let mut row = vec![Complex64::new(0.0, 0.0); n];
    let mut phi = DMatrix::<f64>::zeros(m, n);
    for r in 0..m {
        // (ΦΨ)[r, k] for every k.
        for k in 0..n {
            row[k] = if k == 0 || (n.is_multiple_of(2) && k == half) {
                Complex64::new(responses[(r, k)], 0.0) * scale
            } else if k < half || (n % 2 == 1 && k <= half) {
                Complex64::new(responses[(r, k)], responses[(r, n - k)]) * scale
            } else {
                Complex64::new(responses[(r, n - k)], -responses[(r, k)]) * scale
            };
        }
        dict.forward_in_place(&mut row);
        for (c, z) in row.iter().enumerate() {
            phi[(r, c)] = z.re;
        }
    }
    Ok(DfttiResult { phi, probes, samples })
}

/// Read the first `l` taps back out of a dense `Φ` with known chipping,
/// averaging over every row whose support covers them.
pub fn impulse_from_dense(phi: &DMatrix<f64>, system: &RdSystem, l: usize) -> Result<ImpulseResponse> {
    if phi.shape() != (system.m, system.n) {
        return Err(Error::DimensionMismatch(format!(
            "dense matrix {:?} vs system {}x{}",
            phi.shape(),
            system.m,
            system.n
        )));
    }
    let first = truncated_rows(l, system.r);
    let mut taps = vec![0.0; l];
    let mut count = 0usize;
    for m in first..system.m {
        let end = m * system.r;
        if end + 1 < l {
            continue;
        }
        for (tap, t) in taps.iter_mut().enumerate() {
            let col = end - tap;
            *t += phi[(m, col)] * system.chipping.values[col];
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::DimensionMismatch("no fully supported rows".into()));
    }
    taps.iter_mut().for_each(|t| *t /= count as f64);
    ImpulseResponse::new(taps, system.h.sample_rate)
}
