//! Bracketed scalar root finding (Brent's method).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Stopping rule: the bracket is narrower than `xtol` or `|f| ≤ ftol`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub xtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
}

/// Finds a root of `f` in `[a, b]` given the endpoint values, which must
/// have opposite signs (or one of them be zero).
pub fn brent<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, tol: Tolerance) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(Root { x: a, fx: fa, iterations: 0 });
    }
    if fb == 0.0 {
        return Ok(Root { x: b, fx: fb, iterations: 0 });
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(Error::Solver(format!("root not bracketed: f({a}) = {fa}, f({b}) = {fb}")));
    }

    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;

    for iter in 1..=tol.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol.xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb.abs() <= tol.ftol {
            return Ok(Root { x: b, fx: fb, iterations: iter });
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic or secant step
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
        if fb.is_nan() {
            return Err(Error::Solver(format!("objective is NaN at {b}")));
        }
    }
    Err(Error::Solver(format!("no convergence after {} iterations; last iterate {b} with f = {fb}", tol.max_iter)))
}
