//! Sparse reconstruction and linear estimation.
//!
//! * [`bpdn`]: `min ‖α‖₁ s.t. ‖y − Aα‖₂ ≤ ζ` by root finding on the Pareto
//!   curve, each LASSO subproblem solved with spectral projected gradient.
//! * [`lsq`]: QR least squares and the `‖Ge‖² ≤ γ` constrained Tikhonov problem.

use std::fmt::Debug;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::Zero;

use crate::rd::{FourierDictionary, RdSystem};

pub mod bpdn;
pub mod lsq;

pub use bpdn::{solve_bpdn, BpdnConfig, BpdnResult, BpdnStatus, TraceEntry, Zeta};
pub use lsq::{lambda_min_gram, solve_least_squares, solve_tikhonov, TikhonovOutcome, TikhonovProblem};

/// Coefficient type for the ℓ1 solver. The ℓ1 norm is `Σ modulus(αᵢ)`, so a
/// complex entry (or a stacked real pair) is one group.
pub trait Element:
    Copy + Send + Sync + Debug + Zero + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn modulus(self) -> f64;
    /// `Re(conj(self)·other)`.
    fn re_dot(self, other: Self) -> f64;
}

impl Element for f64 {
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn re_dot(self, other: Self) -> f64 {
        self * other
    }
}

impl Element for Complex64 {
    fn modulus(self) -> f64 {
        (self.re * self.re + self.im * self.im).sqrt()
    }
    fn re_dot(self, other: Self) -> f64 {
        self.re * other.re + self.im * other.im
    }
}

/// Real and imaginary parts carried as a real pair; lets a complex problem be
/// posed as a stacked real one with a group-ℓ1 norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RealPair(pub f64, pub f64);

impl Add for RealPair {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        RealPair(self.0 + o.0, self.1 + o.1)
    }
}

impl Sub for RealPair {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        RealPair(self.0 - o.0, self.1 - o.1)
    }
}

impl Mul<f64> for RealPair {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        RealPair(self.0 * k, self.1 * k)
    }
}

impl Zero for RealPair {
    fn zero() -> Self {
        RealPair(0.0, 0.0)
    }
    fn is_zero(&self) -> bool {
        self.0 == 0.0 && self.1 == 0.0
    }
}

impl Element for RealPair {
    fn modulus(self) -> f64 {
        (self.0 * self.0 + self.1 * self.1).sqrt()
    }
    fn re_dot(self, other: Self) -> f64 {
        self.0 * other.0 + self.1 * other.1
    }
}

/// Linear map with an adjoint.
pub trait LinearOperator<E: Element>: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &[E], out: &mut [E]);
    fn apply_adjoint(&self, y: &[E], out: &mut [E]);
}

/// A real measurement matrix applied to complex vectors.
pub trait MeasurementModel: Sync {
    fn measurements(&self) -> usize;
    fn grid_len(&self) -> usize;
    fn forward(&self, x: &[Complex64]) -> Vec<Complex64>;
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64>;
}

impl MeasurementModel for RdSystem {
    fn measurements(&self) -> usize {
        self.m
    }
    fn grid_len(&self) -> usize {
        self.n
    }
    fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.apply_complex(x).expect("length checked by caller")
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.apply_transpose_complex(y).expect("length checked by caller")
    }
}

impl MeasurementModel for DMatrix<f64> {
    fn measurements(&self) -> usize {
        self.nrows()
    }
    fn grid_len(&self) -> usize {
        self.ncols()
    }
    fn forward(&self, x: &[Complex64]) -> Vec<Complex64> {
        let re = self * DVector::from_iterator(x.len(), x.iter().map(|z| z.re));
        let im = self * DVector::from_iterator(x.len(), x.iter().map(|z| z.im));
        re.iter().zip(im.iter()).map(|(&a, &b)| Complex64::new(a, b)).collect()
    }
    fn adjoint(&self, y: &[Complex64]) -> Vec<Complex64> {
        let re = self.tr_mul(&DVector::from_iterator(y.len(), y.iter().map(|z| z.re)));
        let im = self.tr_mul(&DVector::from_iterator(y.len(), y.iter().map(|z| z.im)));
        re.iter().zip(im.iter()).map(|(&a, &b)| Complex64::new(a, b)).collect()
    }
}

/// `A = Φ·Ψ`: dictionary synthesis followed by the measurement model.
pub struct SensingOperator<'a, P: MeasurementModel + ?Sized> {
    pub phi: &'a P,
    pub dict: &'a FourierDictionary,
}

impl<'a, P: MeasurementModel + ?Sized> SensingOperator<'a, P> {
    pub fn new(phi: &'a P, dict: &'a FourierDictionary) -> Self {
        assert_eq!(phi.grid_len(), dict.len(), "dictionary and model sizes differ");
        Self { phi, dict }
    }
}

impl<P: MeasurementModel + ?Sized> LinearOperator<Complex64> for SensingOperator<'_, P> {
    fn rows(&self) -> usize {
        self.phi.measurements()
    }
    fn cols(&self) -> usize {
        self.dict.len()
    }
    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let mut buf = x.to_vec();
        self.dict.inverse_in_place(&mut buf);
        out.copy_from_slice(&self.phi.forward(&buf));
    }
    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]) {
        let mut buf = self.phi.adjoint(y);
        self.dict.forward_in_place(&mut buf);
        out.copy_from_slice(&buf);
    }
}

/// Dense complex matrix operator.
pub struct ComplexMatrixOperator(pub DMatrix<Complex64>);

impl LinearOperator<Complex64> for ComplexMatrixOperator {
    fn rows(&self) -> usize {
        self.0.nrows()
    }
    fn cols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        let v = &self.0 * DVector::from_column_slice(x);
        out.copy_from_slice(v.as_slice());
    }
    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]) {
        let v = self.0.ad_mul(&DVector::from_column_slice(y));
        out.copy_from_slice(v.as_slice());
    }
}

/// Complex matrix posed on stacked real pairs: `[Re; Im]` blocks
/// `[[Ar, −Ai], [Ai, Ar]]` applied pairwise.
pub struct StackedRealOperator {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl StackedRealOperator {
    pub fn new(a: &DMatrix<Complex64>) -> Self {
        Self { re: a.map(|z| z.re), im: a.map(|z| z.im) }
    }
}

impl LinearOperator<RealPair> for StackedRealOperator {
    fn rows(&self) -> usize {
        self.re.nrows()
    }
    fn cols(&self) -> usize {
        self.re.ncols()
    }
    fn apply(&self, x: &[RealPair], out: &mut [RealPair]) {
        let u = DVector::from_iterator(x.len(), x.iter().map(|p| p.0));
        let v = DVector::from_iterator(x.len(), x.iter().map(|p| p.1));
        let top = &self.re * &u - &self.im * &v;
        let bottom = &self.im * &u + &self.re * &v;
        for (o, (a, b)) in out.iter_mut().zip(top.iter().zip(bottom.iter())) {
            *o = RealPair(*a, *b);
        }
    }
    fn apply_adjoint(&self, y: &[RealPair], out: &mut [RealPair]) {
        let s = DVector::from_iterator(y.len(), y.iter().map(|p| p.0));
        let t = DVector::from_iterator(y.len(), y.iter().map(|p| p.1));
        let top = self.re.tr_mul(&s) + self.im.tr_mul(&t);
        let bottom = self.re.tr_mul(&t) - self.im.tr_mul(&s);
        for (o, (a, b)) in out.iter_mut().zip(top.iter().zip(bottom.iter())) {
            *o = RealPair(*a, *b);
        }
    }
}

/// `A = I` of size `n`.
pub struct Identity(pub usize);

impl<E: Element> LinearOperator<E> for Identity {
    fn rows(&self) -> usize {
        self.0
    }
    fn cols(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[E], out: &mut [E]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[E], out: &mut [E]) {
        out.copy_from_slice(y);
    }
}
