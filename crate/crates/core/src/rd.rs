//! Random-demodulator forward model on the Nyquist grid.
//!
//! `y = Φ x` with `Φ = B·H·P`: multiply by the ±1 chipping sequence, convolve
//! with the causal filter taps and keep every `R`-th output starting at grid
//! index 0, so `y[m] = Σ_n x[n]·p[n]·h[mR − n]`.

use std::io::Write;
use std::ops::{AddAssign, Mul};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::discretize::ImpulseResponse;
use crate::{Error, Result};

/// Largest dense matrix [`dense_phi`] will build.
pub const DENSE_LIMIT: usize = 50_000_000;

/// Highest tone of the multitone dictionary; every generated signal contains it.
pub const TOP_TONE_HZ: u32 = 1500;
pub const LOWEST_TONE_HZ: u32 = 2;
pub const MAX_AMPLITUDE: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChippingSequence {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl ChippingSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Repeat the sequence to `len` entries (a free-running generator with
    /// period `self.len()`).
    pub fn periodic_extension(&self, len: usize) -> ChippingSequence {
        let values = self.values.iter().copied().cycle().take(len).collect();
        ChippingSequence { values, seed: self.seed }
    }
}

/// I.i.d. Rademacher signs, one per grid sample.
pub fn generate_chipping(n: usize, seed: u64) -> Result<ChippingSequence> {
    if n == 0 {
        return Err(Error::InvalidParameter("chipping length must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Ok(ChippingSequence { values, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdSystem {
    pub chipping: ChippingSequence,
    pub h: ImpulseResponse,
    pub n: usize,
    pub m: usize,
    pub r: usize,
}

impl RdSystem {
    pub fn new(chipping: ChippingSequence, h: ImpulseResponse, r: usize) -> Result<Self> {
        let n = chipping.len();
        if r == 0 || n == 0 || !n.is_multiple_of(r) {
            return Err(Error::DimensionMismatch(format!(
                "grid length {n} is not a positive multiple of R = {r}"
            )));
        }
        if h.len() > n {
            return Err(Error::DimensionMismatch(format!(
                "impulse response length {} exceeds grid length {n}",
                h.len()
            )));
        }
        Ok(Self { chipping, h, n, m: n / r, r })
    }

    /// Same chipping and dimensions, different filter.
    pub fn with_filter(&self, h: ImpulseResponse) -> Result<Self> {
        Self::new(self.chipping.clone(), h, self.r)
    }

    /// `y = B·H·P·x`, matrix free.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len(), self.n, "input")?;
        Ok(self.forward_generic(x))
    }

    /// `Φᵀ y = P·Hᵀ·Bᵀ·y`, matrix free.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len(), self.m, "measurement")?;
        Ok(self.adjoint_generic(y))
    }

    pub fn apply_complex(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(x.len(), self.n, "input")?;
        Ok(self.forward_generic(x))
    }

    pub fn apply_transpose_complex(&self, y: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_len(y.len(), self.m, "measurement")?;
        Ok(self.adjoint_generic(y))
    }

    fn check_len(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return Err(Error::DimensionMismatch(format!("{what} length {got}, expected {want}")));
        }
        Ok(())
    }

    fn forward_generic<T>(&self, x: &[T]) -> Vec<T>
    where
        T: Copy + Zero + AddAssign + Mul<f64, Output = T>,
    {
        let p = &self.chipping.values;
        let h = &self.h.samples;
        (0..self.m)
            .map(|m| {
                let end = m * self.r;
                let taps = h.len().min(end + 1);
                let mut acc = T::zero();
                for (l, &hl) in h[..taps].iter().enumerate() {
                    let n = end - l;
                    acc += x[n] * (hl * p[n]);
                }
                acc
            })
            .collect()
    }

    fn adjoint_generic<T>(&self, y: &[T]) -> Vec<T>
    where
        T: Copy + Zero + AddAssign + Mul<f64, Output = T>,
    {
        let p = &self.chipping.values;
        let h = &self.h.samples;
        let mut out = vec![T::zero(); self.n];
        for (m, &ym) in y.iter().enumerate() {
            let end = m * self.r;
            let taps = h.len().min(end + 1);
            for (l, &hl) in h[..taps].iter().enumerate() {
                out[end - l] += ym * hl;
            }
        }
        for (o, &pn) in out.iter_mut().zip(p) {
            *o = *o * pn;
        }
        out
    }
}

/// Free-function form of [`RdSystem::apply`].
pub fn apply_phi(system: &RdSystem, x: &[f64]) -> Result<Vec<f64>> {
    system.apply(x)
}

/// Explicit `B·H·P` as an `M × N` matrix.
pub fn dense_phi(system: &RdSystem) -> Result<DMatrix<f64>> {
    let (m, n) = (system.m, system.n);
    if m.saturating_mul(n) > DENSE_LIMIT {
        return Err(Error::TooLarge { rows: m, cols: n, limit: DENSE_LIMIT });
    }
    let mut phi = DMatrix::<f64>::zeros(m, n);
    for row in 0..m {
        let end = row * system.r;
        for (l, &hl) in system.h.samples.iter().enumerate() {
            if l > end {
                break;
            }
            let col = end - l;
            phi[(row, col)] = hl * system.chipping.values[col];
        }
    }
    Ok(phi)
}

/// Portable description of a system for exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemDescriptor {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub l: usize,
    pub filter: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub frequency_hz: u32,
    pub amplitude: u32,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitoneSignal {
    pub tones: Vec<Tone>,
    pub duration: f64,
    pub grid_rate: f64,
    pub samples: Vec<f64>,
}

impl MultitoneSignal {
    /// Sample `Σ a·cos(2π f t + φ)` on `len` grid points.
    pub fn from_tones(tones: Vec<Tone>, grid_rate: f64, len: usize) -> Self {
        let mut samples = vec![0.0; len];
        for t in &tones {
            let f = t.frequency_hz as f64;
            let a = t.amplitude as f64;
            for (n, s) in samples.iter_mut().enumerate() {
                // Reduce the phase before scaling by 2π to keep it accurate on long records.
                let cycles = f * n as f64 / grid_rate;
                let frac = cycles - cycles.floor();
                *s += a * (2.0 * std::f64::consts::PI * frac + t.phase).cos();
            }
        }
        Self { tones, duration: len as f64 / grid_rate, grid_rate, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `K − 1` distinct random tones from `2..1500` Hz plus the fixed 1500 Hz
/// tone, amplitudes uniform on `1..=10`.
pub fn generate_multitone<R: Rng + ?Sized>(
    k: usize,
    grid_rate: f64,
    len: usize,
    random_phase: bool,
    rng: &mut R,
) -> Result<MultitoneSignal> {
    let pool = (TOP_TONE_HZ - LOWEST_TONE_HZ) as usize;
    if k == 0 || k - 1 > pool {
        return Err(Error::InvalidParameter(format!(
            "sparsity K = {k} must be in 1..={}",
            pool + 1
        )));
    }
    if !(grid_rate > 2.0 * TOP_TONE_HZ as f64) {
        return Err(Error::InvalidParameter(format!(
            "grid rate {grid_rate} Hz cannot represent a {TOP_TONE_HZ} Hz tone"
        )));
    }
    let mut freqs: Vec<u32> = rand::seq::index::sample(rng, pool, k - 1)
        .into_iter()
        .map(|i| LOWEST_TONE_HZ + i as u32)
        .collect();
    freqs.push(TOP_TONE_HZ);
    let tones = freqs
        .into_iter()
        .map(|f| Tone {
            frequency_hz: f,
            amplitude: rng.random_range(1..=MAX_AMPLITUDE),
            phase: if random_phase { rng.random_range(0.0..2.0 * std::f64::consts::PI) } else { 0.0 },
        })
        .collect();
    Ok(MultitoneSignal::from_tones(tones, grid_rate, len))
}

/// Seeded convenience wrapper: zero phases, `duration·grid_rate` samples.
pub fn generate_multitone_seeded(k: usize, seed: u64, grid_rate: f64, duration: f64) -> Result<MultitoneSignal> {
    let len = (duration * grid_rate).round() as usize;
    generate_multitone(k, grid_rate, len, false, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Unitary DFT pair. `inverse` is the dictionary `Ψ`:
/// `x[n] = N^{-1/2} Σ_k α[k] e^{+j2πkn/N}`; `forward` is `Ψᴴ`.
#[derive(Clone)]
pub struct FourierDictionary {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    norm: f64,
}

impl std::fmt::Debug for FourierDictionary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierDictionary").field("n", &self.n).finish()
    }
}

impl FourierDictionary {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            norm: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `Ψ α` in place.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
        for v in buf.iter_mut() {
            *v *= self.norm;
        }
    }

    /// `Ψᴴ x` in place.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
        for v in buf.iter_mut() {
            *v *= self.norm;
        }
    }

    pub fn synthesize(&self, alpha: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(alpha.len())?;
        let mut buf = alpha.to_vec();
        self.inverse_in_place(&mut buf);
        Ok(buf)
    }

    pub fn analyze(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(x.len())?;
        let mut buf = x.to_vec();
        self.forward_in_place(&mut buf);
        Ok(buf)
    }

    pub fn analyze_real(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        let buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.analyze(&buf)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch(format!("dictionary size {}, vector length {len}", self.n)));
        }
        Ok(())
    }
}

/// `Re{Ψ α}`.
pub fn apply_dictionary(dict: &FourierDictionary, alpha: &[Complex64]) -> Result<Vec<f64>> {
    Ok(dict.synthesize(alpha)?.into_iter().map(|z| z.re).collect())
}

/// `index,value` CSV for a real series (signals, measurements).
pub fn write_series_csv<W: Write>(w: W, values: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["index", "value"])?;
    for (i, v) in values.iter().enumerate() {
        wtr.write_record([i.to_string(), format!("{v:.17e}")])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(n: usize, r: usize, h: Vec<f64>, seed: u64) -> RdSystem {
        RdSystem::new(
            generate_chipping(n, seed).unwrap(),
            ImpulseResponse::new(h, 1.0).unwrap(),
            r,
        )
        .unwrap()
    }

    #[test]
    fn chipping_is_reproducible_signs() {
        let a = generate_chipping(6, 42).unwrap();
        let b = generate_chipping(6, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|v| v * v == 1.0));
        let big = generate_chipping(100_000, 1).unwrap();
        let mean = big.values.iter().sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn identity_system() {
        let sys = RdSystem::new(
            ChippingSequence { values: vec![1.0; 8], seed: 0 },
            ImpulseResponse::new(vec![1.0], 1.0).unwrap(),
            1,
        )
        .unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 2.5).collect();
        assert_eq!(sys.apply(&x).unwrap(), x);
    }

    #[test]
    fn integrate_and_dump_sums_blocks() {
        let sys = RdSystem::new(
            ChippingSequence { values: vec![1.0; 12], seed: 0 },
            ImpulseResponse::new(vec![1.0; 3], 1.0).unwrap(),
            3,
        )
        .unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let y = sys.apply(&x).unwrap();
        for (m, &ym) in y.iter().enumerate() {
            let end = 3 * m;
            let expect: f64 = (end.saturating_sub(2)..=end).map(|n| x[n]).sum();
            assert_eq!(ym, expect);
        }
    }

    #[test]
    fn dense_structure() {
        let sys = system(24, 3, vec![0.5, -0.25, 0.125, 0.3, 0.9], 9);
        let phi = dense_phi(&sys).unwrap();
        assert_eq!(phi.shape(), (8, 24));
        for m in 0..8usize {
            let lo = (3 * m).saturating_sub(4);
            for c in 0..24 {
                if c < lo || c > 3 * m {
                    assert_eq!(phi[(m, c)], 0.0);
                } else {
                    assert_ne!(phi[(m, c)], 0.0);
                }
            }
        }
        let diag = system(5, 1, vec![1.0], 4);
        let phi = dense_phi(&diag).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let e = if i == j { diag.chipping.values[i] } else { 0.0 };
                assert_eq!(phi[(i, j)], e);
            }
        }
    }

    #[test]
    fn dense_guard() {
        let sys = RdSystem {
            chipping: ChippingSequence { values: vec![1.0; 4], seed: 0 },
            h: ImpulseResponse::new(vec![1.0], 1.0).unwrap(),
            n: 100_000,
            m: 1000,
            r: 100,
        };
        assert!(matches!(dense_phi(&sys), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn dimension_checks() {
        let sys = system(12, 3, vec![1.0, 0.5], 1);
        assert!(sys.apply(&[0.0; 11]).is_err());
        assert!(sys.apply_transpose(&[0.0; 5]).is_err());
        assert!(RdSystem::new(generate_chipping(10, 0).unwrap(), ImpulseResponse::new(vec![1.0], 1.0).unwrap(), 3).is_err());
        assert!(RdSystem::new(generate_chipping(3, 0).unwrap(), ImpulseResponse::new(vec![1.0; 4], 1.0).unwrap(), 1).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let sys = system(36, 4, vec![0.3, -1.2, 0.7, 0.05, 0.4, -0.9], 5);
        let x: Vec<f64> = (0..36).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let y: Vec<f64> = (0..9).map(|i| ((i * 5 % 7) as f64 - 3.0) / 2.0).collect();
        let lhs: f64 = sys.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = sys.apply_transpose(&y).unwrap().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn multitone_contents() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = generate_multitone(1, 12_600.0, 12_600, false, &mut rng).unwrap();
        assert_eq!(s.tones.len(), 1);
        assert_eq!(s.tones[0].frequency_hz, 1500);
        assert!((1..=10).contains(&s.tones[0].amplitude));
        let s = generate_multitone(10, 12_600.0, 12_600, false, &mut rng).unwrap();
        let mut f: Vec<u32> = s.tones.iter().map(|t| t.frequency_hz).collect();
        f.sort();
        f.dedup();
        assert_eq!(f.len(), 10);
        assert!(f.iter().all(|&v| (2..=1500).contains(&v)));
        assert_eq!(s.tones.iter().filter(|t| t.frequency_hz == 1500).count(), 1);
        assert!(generate_multitone(1500, 12_600.0, 100, false, &mut rng).is_err());
        assert!(generate_multitone(0, 12_600.0, 100, false, &mut rng).is_err());
    }

    #[test]
    fn seeded_multitone_is_deterministic() {
        let a = generate_multitone_seeded(5, 77, 12_600.0, 1.0).unwrap();
        let b = generate_multitone_seeded(5, 77, 12_600.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12_600);
    }

    #[test]
    fn dictionary_unit_atom_and_round_trip() {
        let n = 64;
        let d = FourierDictionary::new(n);
        let mut alpha = vec![Complex64::new(0.0, 0.0); n];
        alpha[5] = Complex64::new(1.0, 0.0);
        let x = d.synthesize(&alpha).unwrap();
        for (i, v) in x.iter().enumerate() {
            let e = Complex64::from_polar(1.0 / 8.0, 2.0 * std::f64::consts::PI * 5.0 * i as f64 / 64.0);
            assert!((v - e).norm() < 1e-14);
        }
        let back = d.analyze(&x).unwrap();
        for (a, b) in back.iter().zip(&alpha) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(d.synthesize(&alpha[..10]).is_err());
    }

    #[test]
    fn multitone_spectrum() {
        let s = generate_multitone_seeded(5, 11, 12_600.0, 1.0).unwrap();
        let d = FourierDictionary::new(12_600);
        let alpha = d.analyze_real(&s.samples).unwrap();
        let peak = alpha.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let floor = peak * 1e-10; // −200 dB
        let nonzero: Vec<usize> = (0..alpha.len()).filter(|&k| alpha[k].norm() > floor).collect();
        assert_eq!(nonzero.len(), 10);
        let scale = (12_600.0_f64).sqrt() / 2.0;
        for t in &s.tones {
            let k = t.frequency_hz as usize;
            assert!((alpha[k].re - t.amplitude as f64 * scale).abs() < 1e-8);
            assert!((alpha[12_600 - k].re - t.amplitude as f64 * scale).abs() < 1e-8);
        }
    }

    #[test]
    fn descriptor_json() {
        let d = SystemDescriptor { seed: 1, n: 12_600, m: 1050, r: 12, l: 108, filter: "butterworth".into() };
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<SystemDescriptor>(&s).unwrap(), d);
    }
}
