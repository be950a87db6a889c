//! Analog filter synthesis for the doubly terminated 4th-order LC ladder
//! (`Rs` → shunt `C1` → series `L2` → shunt `C3` → series `L4` → `Rl`) and
//! the truncated-Gaussian component tolerance model.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{poly, Error, Result};

/// Component values of the ladder in SI base units (F, H, Ω).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcComponents {
    pub c1: f64,
    pub c3: f64,
    pub l2: f64,
    pub l4: f64,
    pub rs: f64,
    pub rl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    C1,
    C3,
    L2,
    L4,
    Rs,
    Rl,
}

impl Component {
    pub const REACTIVE: [Component; 4] = [Component::C1, Component::C3, Component::L2, Component::L4];
    pub const ALL: [Component; 6] = [
        Component::C1,
        Component::C3,
        Component::L2,
        Component::L4,
        Component::Rs,
        Component::Rl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::C1 => "c1",
            Component::C3 => "c3",
            Component::L2 => "l2",
            Component::L4 => "l4",
            Component::Rs => "rs",
            Component::Rl => "rl",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown component `{s}`")))
    }
}

impl LcComponents {
    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::C1 => self.c1,
            Component::C3 => self.c3,
            Component::L2 => self.l2,
            Component::L4 => self.l4,
            Component::Rs => self.rs,
            Component::Rl => self.rl,
        }
    }

    pub fn set(&mut self, c: Component, v: f64) {
        match c {
            Component::C1 => self.c1 = v,
            Component::C3 => self.c3 = v,
            Component::L2 => self.l2 = v,
            Component::L4 => self.l4 = v,
            Component::Rs => self.rs = v,
            Component::Rl => self.rl = v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in Component::ALL {
            let v = self.get(c);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidComponent { name: c.name(), value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approximation {
    Butterworth,
    Chebyshev,
}

impl Approximation {
    pub fn name(self) -> &'static str {
        match self {
            Approximation::Butterworth => "butterworth",
            Approximation::Chebyshev => "chebyshev",
        }
    }

    /// Impulse-response truncation length used for this filter on the
    /// 12.6 kHz grid.
    pub fn default_length(self) -> usize {
        match self {
            Approximation::Butterworth => 108,
            Approximation::Chebyshev => 228,
        }
    }
}

impl fmt::Display for Approximation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approximation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "butterworth" => Ok(Approximation::Butterworth),
            "chebyshev" => Ok(Approximation::Chebyshev),
            _ => Err(Error::UnknownApproximation(s.to_string())),
        }
    }
}

/// Nominal component sets for a 500 Hz cut-off.
pub fn synthesize_nominal(approximation: Approximation) -> LcComponents {
    match approximation {
        Approximation::Butterworth => LcComponents {
            c1: 4.8725e-6,
            c3: 11.7632e-6,
            l2: 29.408e-3,
            l4: 12.1812e-3,
            rs: 50.0,
            rl: 50.0,
        },
        Approximation::Chebyshev => LcComponents {
            c1: 5.7812e-6,
            c3: 7.9132e-6,
            l2: 36.0591e-3,
            l4: 24.6173e-3,
            rs: 50.0,
            rl: 100.0,
        },
    }
}

/// String entry point for [`synthesize_nominal`].
pub fn synthesize_nominal_named(name: &str) -> Result<LcComponents> {
    Ok(synthesize_nominal(name.parse()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    LaplaceS,
    DiscreteZ,
}

/// Rational transfer function with real coefficients in ascending power
/// order. For [`Domain::LaplaceS`] the powers are of `s`; for
/// [`Domain::DiscreteZ`] they are powers of `z⁻¹`, so
/// `H(z) = Σ b[k] z⁻ᵏ / Σ a[k] z⁻ᵏ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTransferFunction {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_period: Option<f64>,
}

impl RationalTransferFunction {
    pub fn laplace(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        let tf = Self {
            numerator: poly::trim(&numerator),
            denominator: poly::trim(&denominator),
            domain: Domain::LaplaceS,
            sample_period: None,
        };
        tf.validate()?;
        Ok(tf)
    }

    pub fn discrete(numerator: Vec<f64>, denominator: Vec<f64>, sample_period: f64) -> Result<Self> {
        let tf = Self {
            numerator,
            denominator,
            domain: Domain::DiscreteZ,
            sample_period: Some(sample_period),
        };
        tf.validate()?;
        Ok(tf)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTransferFunction(m.to_string()));
        if self.numerator.is_empty() || self.denominator.is_empty() {
            return bad("empty coefficient list");
        }
        if self
            .numerator
            .iter()
            .chain(self.denominator.iter())
            .any(|v| !v.is_finite())
        {
            return bad("non-finite coefficient");
        }
        match self.domain {
            Domain::LaplaceS => {
                let dd = poly::degree(&self.denominator);
                if self.denominator[dd] == 0.0 {
                    return bad("zero denominator");
                }
                if self.sample_period.is_some() {
                    return bad("s-domain function carries a sample period");
                }
                if poly::degree(&self.numerator) >= dd && self.numerator.iter().any(|&v| v != 0.0) {
                    return bad("s-domain function must be strictly proper");
                }
            }
            Domain::DiscreteZ => {
                if self.denominator[0] == 0.0 {
                    return bad("leading z-domain denominator coefficient a0 is zero");
                }
                match self.sample_period {
                    Some(t) if t > 0.0 && t.is_finite() => {}
                    _ => return bad("z-domain function needs a positive sample period"),
                }
            }
        }
        Ok(())
    }

    /// Evaluate at `s` (Laplace) or `z` (discrete).
    pub fn eval(&self, at: Complex64) -> Complex64 {
        let x = match self.domain {
            Domain::LaplaceS => at,
            Domain::DiscreteZ => at.inv(),
        };
        poly::eval_complex(&self.numerator, x) / poly::eval_complex(&self.denominator, x)
    }

    /// Response at a physical frequency in Hz.
    pub fn frequency_response(&self, hz: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * hz;
        match self.domain {
            Domain::LaplaceS => self.eval(Complex64::new(0.0, w)),
            Domain::DiscreteZ => {
                let t = self.sample_period.unwrap_or(1.0);
                self.eval(Complex64::from_polar(1.0, w * t))
            }
        }
    }

    pub fn dc_gain(&self) -> f64 {
        match self.domain {
            Domain::LaplaceS => self.numerator[0] / self.denominator[0],
            Domain::DiscreteZ => self.numerator.iter().sum::<f64>() / self.denominator.iter().sum::<f64>(),
        }
    }

    pub fn order(&self) -> usize {
        poly::degree(&self.denominator)
    }
}

/// Transfer function `λ0 / Σ βc sᶜ` of the terminated ladder, with
/// `λ0 = sqrt(4 Rs/Rl)` so that a matched termination has unit DC gain.
///
/// The coefficients follow from the chain (ABCD) matrix of the network in
/// physical units. With impedances normalized to `Rl = 1` they reduce to the
/// classic normalized-ladder expressions; `β0 = Rs/Rl + 1` and `β4 ∝ C1·C3·L2·L4`.
pub fn lc_transfer_function(c: &LcComponents) -> Result<RationalTransferFunction> {
    c.validate()?;
    let LcComponents { c1, c3, l2, l4, rs, rl } = *c;
    let ratio = rs / rl;
    let beta = vec![
        ratio + 1.0,
        rs * (c1 + c3) + (l2 + l4) / rl,
        ratio * (c1 * l2 + c1 * l4 + c3 * l4) + c3 * l2,
        c3 * l2 * (c1 * rs + l4 / rl),
        ratio * c1 * c3 * l2 * l4,
    ];
    let lambda0 = (4.0 * ratio).sqrt();
    RationalTransferFunction::laplace(vec![lambda0], beta)
}

/// Truncated-Gaussian manufacturing model: each perturbed value is drawn from
/// `N(μ, (σ_f·μ)²)` and resampled until it falls within `truncation·σ` of μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceModel {
    pub sigma_fraction: f64,
    pub truncation: f64,
    pub seed: u64,
}

impl Default for ToleranceModel {
    fn default() -> Self {
        Self { sigma_fraction: 0.02, truncation: 1.0, seed: 0 }
    }
}

impl ToleranceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_fraction >= 0.0 && self.sigma_fraction.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma_fraction must be >= 0, got {}",
                self.sigma_fraction
            )));
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "truncation must be > 0, got {}",
                self.truncation
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// One draw around `mu`. A zero `sigma_fraction` returns `mu` unchanged.
    pub fn draw<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> f64 {
        let sigma = self.sigma_fraction * mu.abs();
        if sigma == 0.0 {
            return mu;
        }
        let half_width = self.truncation * sigma;
        let normal = Normal::new(mu, sigma).expect("sigma is positive and finite");
        loop {
            let v = normal.sample(rng);
            if (v - mu).abs() <= half_width {
                return v;
            }
        }
    }
}

/// Redraw the selected components; everything else stays nominal.
pub fn perturb_components<R: Rng + ?Sized>(
    nominal: &LcComponents,
    model: &ToleranceModel,
    which: &[Component],
    rng: &mut R,
) -> Result<LcComponents> {
    model.validate()?;
    nominal.validate()?;
    if which.is_empty() {
        return Err(Error::InvalidParameter("component subset is empty".into()));
    }
    let mut out = *nominal;
    // Fixed draw order keeps results independent of how `which` is listed.
    for c in Component::ALL {
        if which.contains(&c) {
            out.set(c, model.draw(nominal.get(c), rng));
        }
    }
    Ok(out)
}
