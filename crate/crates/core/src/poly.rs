//! Small dense polynomial helpers. Coefficients are stored in ascending
//! power order: `c[0] + c[1]·x + c[2]·x² + …`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

/// Degree ignoring trailing (highest-power) zeros. The zero polynomial has degree 0.
pub fn degree(c: &[f64]) -> usize {
    c.iter().rposition(|&v| v != 0.0).unwrap_or(0)
}

pub fn trim(c: &[f64]) -> Vec<f64> {
    c[..=degree(c)].to_vec()
}

pub fn eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

pub fn eval_complex(c: &[f64], x: Complex64) -> Complex64 {
    c.iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &v| acc * x + v)
}

fn eval_complex_poly(c: &[Complex64], x: Complex64) -> Complex64 {
    c.iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &v| acc * x + v)
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in out.iter_mut().enumerate() {
        *v = a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0);
    }
    out
}

pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|v| v * k).collect()
}

/// `p(x)^n` by repeated multiplication.
pub fn pow(p: &[f64], n: usize) -> Vec<f64> {
    (0..n).fold(vec![1.0], |acc, _| mul(&acc, p))
}

/// Derivative, ascending order.
pub fn derivative(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &v)| k as f64 * v)
        .collect()
}

/// Roots of a real polynomial as eigenvalues of its companion matrix,
/// polished with a few Newton steps on the original coefficients.
pub fn roots(c: &[f64]) -> Result<Vec<Complex64>> {
    let c = trim(c);
    let n = c.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let lead = c[n];
    if !lead.is_finite() || c.iter().any(|v| !v.is_finite()) {
        return Err(Error::RootFinding("non-finite coefficient".into()));
    }
    // Zero roots are peeled off exactly; the companion matrix of the rest
    // then has a nonzero constant term.
    let zeros = c.iter().position(|&v| v != 0.0).unwrap_or(0);
    let reduced = &c[zeros..];
    let m = reduced.len() - 1;
    let mut out = vec![Complex64::new(0.0, 0.0); zeros];
    if m == 0 {
        return Ok(out);
    }

    let mut comp = DMatrix::<f64>::zeros(m, m);
    for i in 1..m {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..m {
        comp[(i, m - 1)] = -reduced[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::RootFinding("eigen-solver returned non-finite values".into()));
    }

    let d = derivative(reduced);
    let cc: Vec<Complex64> = reduced.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let dc: Vec<Complex64> = d.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for mut z in eig.iter().copied() {
        for _ in 0..3 {
            let f = eval_complex_poly(&cc, z);
            let fp = eval_complex_poly(&dc, z);
            if fp.norm() == 0.0 {
                break;
            }
            let step = f / fp;
            let next = z - step;
            if eval_complex_poly(&cc, next).norm() < f.norm() {
                z = next;
            } else {
                break;
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// Expand `Π (1 − r·x)` into real ascending coefficients; conjugate roots
/// are expected so imaginary parts vanish.
pub fn from_reciprocal_roots(rs: &[Complex64]) -> Vec<f64> {
    let mut acc = vec![Complex64::new(1.0, 0.0)];
    for &r in rs {
        let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
        for (i, &a) in acc.iter().enumerate() {
            next[i] += a;
            next[i + 1] -= a * r;
        }
        acc = next;
    }
    acc.into_iter().map(|z| z.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_mul_agree() {
        let a = [1.0, -2.0, 3.0];
        let b = [0.5, 4.0];
        let p = mul(&a, &b);
        for &x in &[-1.3, 0.0, 0.7, 2.5] {
            assert!((eval(&p, x) - eval(&a, x) * eval(&b, x)).abs() < 1e-12);
        }
    }

    #[test]
    fn roots_of_known_quartic() {
        // (x-1)(x+2)(x^2+1) = x^4 + x^3 - x^2 + x - 2
        let c = [-2.0, 1.0, -1.0, 1.0, 1.0];
        let mut r = roots(&c).unwrap();
        r.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
        let expect = [
            Complex64::new(-2.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(1.0, 0.0),
        ];
        for (z, e) in r.iter().zip(expect.iter()) {
            assert!((z - e).norm() < 1e-12, "{z} vs {e}");
        }
    }

    #[test]
    fn zero_roots_are_exact() {
        let r = roots(&[0.0, 0.0, -1.0, 1.0]).unwrap();
        assert_eq!(r.iter().filter(|z| z.norm() == 0.0).count(), 2);
        assert!(r.iter().any(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn reciprocal_root_expansion() {
        let rs = [Complex64::new(0.5, 0.0), Complex64::new(0.25, 0.0)];
        let c = from_reciprocal_roots(&rs);
        assert_eq!(c.len(), 3);
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!((c[1] + 0.75).abs() < 1e-15);
        assert!((c[2] - 0.125).abs() < 1e-15);
    }
}
