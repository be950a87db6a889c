//! Analog → discrete conversion: bilinear (Tustin) mapping, simple-pole
//! partial fractions and truncated impulse responses.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::filter::{Domain, RationalTransferFunction};
use crate::{poly, Error, Result};

/// Relative distance under which two poles count as repeated.
pub const POLE_SEPARATION_TOL: f64 = 1e-7;

/// Finite causal impulse response `h[0..L)` on a grid of `sample_rate` Hz.
/// Taps outside `[0, L)` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl ImpulseResponse {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("impulse response needs at least one tap".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("impulse response has non-finite taps".into()));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::InvalidParameter(format!("sample rate must be > 0, got {sample_rate}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Tap `l`, zero outside the stored support.
    pub fn tap(&self, l: isize) -> f64 {
        if l < 0 {
            0.0
        } else {
            self.samples.get(l as usize).copied().unwrap_or(0.0)
        }
    }

    /// First `len` taps (zero padded if the response is shorter).
    pub fn truncated(&self, len: usize) -> ImpulseResponse {
        let mut samples = self.samples.clone();
        samples.resize(len.max(1), 0.0);
        ImpulseResponse { samples, sample_rate: self.sample_rate }
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    /// Writes `index,value` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "value"])?;
        for (i, v) in self.samples.iter().enumerate() {
            wtr.write_record([i.to_string(), format!("{v:.17e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Smallest `L` such that the first `L` taps hold at least `1 − tail` of the
/// energy of `h`.
pub fn energy_length(h: &[f64], tail: f64) -> usize {
    let total: f64 = h.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 1;
    }
    // Accumulate from the end so tiny tails are not lost to cancellation.
    let mut remaining = 0.0;
    let mut len = h.len();
    for (i, v) in h.iter().enumerate().rev() {
        remaining += v * v;
        if remaining > tail * total {
            break;
        }
        len = i;
    }
    len.max(1)
}

/// Simple-pole expansion `H(z) = direct + Σ U_ℓ / (1 − q_ℓ z⁻¹)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleResidueForm {
    pub poles: Vec<Complex64>,
    pub residues: Vec<Complex64>,
    pub direct_term: f64,
}

impl PoleResidueForm {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        self.poles
            .iter()
            .zip(&self.residues)
            .map(|(&q, &u)| u / (1.0 - q * zi))
            .sum::<Complex64>()
            + self.direct_term
    }

    pub fn is_stable(&self) -> bool {
        self.poles.iter().all(|q| q.norm() < 1.0)
    }
}

/// Tustin mapping `s ← K (1 − z⁻¹)/(1 + z⁻¹)` with `K = 2·fs`.
pub fn bilinear_transform(analog: &RationalTransferFunction, sample_rate: f64) -> Result<RationalTransferFunction> {
    bilinear_with_gain(analog, sample_rate, 2.0 * sample_rate)
}

/// Bilinear mapping with frequency pre-warping so the analog and discrete
/// responses agree exactly at `match_hz`.
pub fn bilinear_transform_prewarped(
    analog: &RationalTransferFunction,
    sample_rate: f64,
    match_hz: f64,
) -> Result<RationalTransferFunction> {
    let w = 2.0 * std::f64::consts::PI * match_hz;
    let half = w / (2.0 * sample_rate);
    if !(match_hz > 0.0 && half < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidParameter(format!(
            "pre-warp frequency {match_hz} Hz must lie in (0, fs/2)"
        )));
    }
    bilinear_with_gain(analog, sample_rate, w / half.tan())
}

fn bilinear_with_gain(analog: &RationalTransferFunction, sample_rate: f64, k: f64) -> Result<RationalTransferFunction> {
    if analog.domain != Domain::LaplaceS {
        return Err(Error::InvalidTransferFunction("bilinear transform expects an s-domain function".into()));
    }
    analog.validate()?;
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::InvalidParameter(format!("sample rate must be > 0, got {sample_rate}")));
    }
    let order = poly::degree(&analog.denominator);
    let minus = [1.0, -1.0];
    let plus = [1.0, 1.0];
    // s^b ↦ K^b (1 − w)^b (1 + w)^(A − b), w = z⁻¹, after clearing (1 + w)^A.
    let map = |coeffs: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; order + 1];
        for (b, &c) in coeffs.iter().enumerate().take(order + 1) {
            if c == 0.0 {
                continue;
            }
            let term = poly::mul(&poly::pow(&minus, b), &poly::pow(&plus, order - b));
            acc = poly::add(&acc, &poly::scale(&term, c * k.powi(b as i32)));
        }
        acc.resize(order + 1, 0.0);
        acc
    };
    let num = map(&analog.numerator);
    let den = map(&analog.denominator);

    let scale_ref = den.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    // Denominator at z = −1 (w = −1) vanishing means a pole on the tangent singularity.
    if poly::eval(&den, -1.0).abs() <= 1e-14 * scale_ref {
        return Err(Error::DegenerateMapping);
    }
    let a0 = den[0];
    if a0.abs() <= 1e-14 * scale_ref {
        return Err(Error::DegenerateMapping);
    }
    let num: Vec<f64> = num.iter().map(|v| v / a0).collect();
    let den: Vec<f64> = den.iter().map(|v| v / a0).collect();
    RationalTransferFunction::discrete(num, den, 1.0 / sample_rate)
}

/// Expand a discrete transfer function with simple poles.
pub fn partial_fractions(discrete: &RationalTransferFunction) -> Result<PoleResidueForm> {
    if discrete.domain != Domain::DiscreteZ {
        return Err(Error::InvalidTransferFunction("partial fractions expect a z-domain function".into()));
    }
    discrete.validate()?;
    let a = poly::trim(&discrete.denominator);
    let b = poly::trim(&discrete.numerator);
    let n = a.len() - 1;
    let nb = poly::degree(&b);
    if n == 0 {
        return Ok(PoleResidueForm { poles: Vec::new(), residues: Vec::new(), direct_term: b[0] / a[0] });
    }
    if nb > n {
        return Err(Error::InvalidTransferFunction(
            "numerator degree in z⁻¹ exceeds denominator degree".into(),
        ));
    }

    // Poles are the roots in z of zⁿ·A(z⁻¹), i.e. of A with reversed coefficients.
    let reversed: Vec<f64> = a.iter().rev().copied().collect();
    let poles = poly::roots(&reversed)?;
    for i in 0..poles.len() {
        for j in (i + 1)..poles.len() {
            let scale = poles[i].norm().max(poles[j].norm()).max(f64::MIN_POSITIVE);
            if (poles[i] - poles[j]).norm() <= POLE_SEPARATION_TOL * scale {
                return Err(Error::RepeatedPole(poles[i].norm()));
            }
        }
    }

    let direct_term = if nb == n { b[n] / a[n] } else { 0.0 };
    let residues = poles
        .iter()
        .enumerate()
        .map(|(l, &q)| {
            // U = (1 − q z⁻¹) H(z) at z = q; the direct term is annihilated.
            let w = q.inv();
            let numer = poly::eval_complex(&b, w);
            let denom = poles
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != l)
                .fold(Complex64::new(a[0], 0.0), |acc, (_, &qk)| acc * (1.0 - qk * w));
            numer / denom
        })
        .collect();

    Ok(PoleResidueForm { poles, residues, direct_term })
}

/// `h[l] = Σ U_ℓ q_ℓˡ (+ direct term at l = 0)` for `l < length`.
pub fn impulse_response(form: &PoleResidueForm, length: usize, sample_rate: f64) -> Result<ImpulseResponse> {
    if length == 0 {
        return Err(Error::InvalidParameter("impulse response length must be >= 1".into()));
    }
    if !form.is_stable() {
        log::warn!("impulse response from unstable poles will diverge");
    }
    let mut powers: Vec<Complex64> = form.residues.clone();
    let mut samples = Vec::with_capacity(length);
    let mut worst_imag = 0.0_f64;
    for l in 0..length {
        let sum: Complex64 = powers.iter().sum();
        let mut v = sum.re;
        if l == 0 {
            v += form.direct_term;
        }
        worst_imag = worst_imag.max(sum.im.abs() / sum.norm().max(f64::MIN_POSITIVE));
        samples.push(v);
        for (p, &q) in powers.iter_mut().zip(&form.poles) {
            *p *= q;
        }
    }
    if worst_imag > 1e-12 {
        log::debug!("residual imaginary part {worst_imag:.2e} discarded");
    }
    ImpulseResponse::new(samples, sample_rate)
}

/// Bilinear transform, expansion and truncation in one call.
pub fn discretize(analog: &RationalTransferFunction, sample_rate: f64, length: usize) -> Result<ImpulseResponse> {
    let d = bilinear_transform(analog, sample_rate)?;
    let pf = partial_fractions(&d)?;
    impulse_response(&pf, length, sample_rate)
}

/// Integrate-and-dump front end: `R` unit taps.
pub fn accumulate_and_dump_response(r: usize, sample_rate: f64) -> Result<ImpulseResponse> {
    if r == 0 {
        return Err(Error::InvalidParameter("subsampling ratio must be >= 1".into()));
    }
    ImpulseResponse::new(vec![1.0; r], sample_rate)
}
