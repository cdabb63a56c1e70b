//! Adaptive composite quadrature for the handful of one-dimensional
//! integrals the library needs (kernel time-integrals, stationary-density
//! exponents and normalizations).

use crate::error::{Error, Result};
use crate::real::{convert, Real};

const MAX_DEPTH: usize = 48;

/// Adaptive Simpson integration of `f` on `[a, b]` to absolute tolerance
/// `tol`.
pub fn adaptive_simpson<T: Real>(f: &dyn Fn(T) -> T, a: T, b: T, tol: T) -> Result<T> {
    let fa = f(a);
    let fb = f(b);
    let mid = (a + b) * convert::<T>(0.5);
    let fm = f(mid);
    if !(fa.is_finite() && fb.is_finite() && fm.is_finite()) {
        return Err(Error::QuadratureFailure(format!(
            "integrand not finite on [{:e}, {:e}]",
            a, b
        )));
    }
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

fn simpson<T: Real>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / convert::<T>(6.0) * (fa + convert::<T>(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<T: Real>(
    f: &dyn Fn(T) -> T,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: T,
    depth: usize,
) -> Result<T> {
    let mid = (a + b) * convert::<T>(0.5);
    let lm = (a + mid) * convert::<T>(0.5);
    let rm = (mid + b) * convert::<T>(0.5);
    let flm = f(lm);
    let frm = f(rm);
    if !(flm.is_finite() && frm.is_finite()) {
        return Err(Error::QuadratureFailure(format!(
            "integrand not finite near [{:e}, {:e}]",
            a, b
        )));
    }
    let left = simpson(a, mid, fa, flm, fm);
    let right = simpson(mid, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= convert::<T>(15.0) * tol {
        return Ok(left + right + delta / convert::<T>(15.0));
    }
    if depth == 0 {
        return Err(Error::QuadratureFailure(format!(
            "max refinement depth reached on [{:e}, {:e}]",
            a, b
        )));
    }
    let half_tol = tol * convert::<T>(0.5);
    let l = recurse(f, a, mid, fa, flm, fm, left, half_tol, depth - 1)?;
    let r = recurse(f, mid, b, fm, frm, fb, right, half_tol, depth - 1)?;
    Ok(l + r)
}

/// Integrates an exponentially decaying `f` on `[0, inf)` by extending the
/// upper limit in doubling windows until a window contributes less than
/// `tol`.
pub fn integrate_decaying_tail<T: Real>(f: &dyn Fn(T) -> T, tol: T) -> Result<T> {
    let mut total = T::zero();
    let mut lo = T::zero();
    let mut width = T::one();
    for _ in 0..64 {
        let hi = lo + width;
        let piece = adaptive_simpson(f, lo, hi, tol * convert::<T>(0.25))?;
        total += piece;
        if piece.abs() < tol && width >= convert::<T>(8.0) {
            return Ok(total);
        }
        lo = hi;
        width *= convert::<T>(2.0);
    }
    Err(Error::QuadratureFailure(
        "tail integral did not settle within 64 doubling windows".into(),
    ))
}
