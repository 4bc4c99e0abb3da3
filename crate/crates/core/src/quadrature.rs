//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 50;

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn panel(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64) -> Panel {
    let fm = f(0.5 * (a + b));
    Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole: (b - a) / 6.0 * (fa + 4.0 * fm + fb),
    }
}

fn refine(f: &impl Fn(f64) -> f64, p: Panel, tol: f64, depth: u32) -> Result<f64> {
    let m = 0.5 * (p.a + p.b);
    let left = panel(f, p.a, m, p.fa, p.fm);
    let right = panel(f, m, p.b, p.fm, p.fb);
    let delta = left.whole + right.whole - p.whole;
    if !delta.is_finite() {
        return Err(Error::IntegrationFailure(format!(
            "non-finite integrand on [{}, {}]",
            p.a, p.b
        )));
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left.whole + right.whole + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::IntegrationFailure(format!(
            "tolerance {tol:e} not reached on [{}, {}]",
            p.a, p.b
        )));
    }
    Ok(refine(f, left, 0.5 * tol, depth - 1)? + refine(f, right, 0.5 * tol, depth - 1)?)
}

/// `∫_a^b f` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite() && tol > 0.0) {
        return Err(Error::IntegrationFailure(format!(
            "bad interval [{a}, {b}] or tolerance {tol}"
        )));
    }
    // Start from a few panels so narrow peaks are not skipped by the first estimate.
    let pieces = 8;
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for i in 0..pieces {
        let lo = a + i as f64 * h;
        let hi = if i + 1 == pieces { b } else { lo + h };
        let p = panel(&f, lo, hi, f(lo), f(hi));
        total += refine(&f, p, tol / pieces as f64, MAX_DEPTH)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_known_functions() {
        let v = adaptive_simpson(|x| x.exp(), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
        let g = adaptive_simpson(|x| (-x * x / 2.0).exp(), -10.0, 10.0, 1e-12).unwrap();
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn reversed_limits_flip_the_sign() {
        let v = adaptive_simpson(|x| x * x, 1.0, 0.0, 1e-12).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_integrand_fails() {
        assert!(adaptive_simpson(|x| 1.0 / x, 0.0, 1.0, 1e-8).is_err());
    }
}
