use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

/// Brent's root finder on a bracket `[lo, hi]`.
///
/// The objective may return `±inf` (e.g. a utility evaluated outside its
/// domain); any step whose interpolation data is non-finite falls back to
/// bisection, so a sign change is all that is required.
pub fn brent<F>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa.signum() == fb.signum() {
        return Err(Error::Bracket {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }

    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
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
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        let finite = fa.is_finite() && fb.is_finite() && fc.is_finite();
        if finite && e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
        if fb.is_nan() {
            return Err(Error::NonConvergence(format!("objective is NaN at {b}")));
        }
    }
    Err(Error::NonConvergence(
        "Brent root finder iteration limit".into(),
    ))
}

/// Smallest `x` in `[lo, hi]` with `pred(x)` true, assuming `pred` is
/// monotone (false then true). Returns `hi` when `pred(hi)` holds only there.
pub fn bisect_monotone<F>(mut pred: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64
where
    F: FnMut(f64) -> bool,
{
    for _ in 0..400 {
        if hi - lo <= xtol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cubic_root() {
        let r = brent(|x| Ok(x * x * x - 2.0 * x - 5.0), 2.0, 3.0, 1e-15).unwrap();
        assert_abs_diff_eq!(r, 2.094_551_481_542_326_6, epsilon = 1e-13);
    }

    #[test]
    fn infinite_endpoint_is_handled() {
        let f = |x: f64| Ok(if x <= 0.0 { f64::INFINITY } else { 1.0 - x });
        let r = brent(f, -1.0, 4.0, 1e-14).unwrap();
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_sign_change_reports_bracket() {
        let err = brent(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }));
    }

    #[test]
    fn monotone_bisection() {
        let x = bisect_monotone(|x| x * x >= 2.0, 0.0, 2.0, 1e-14);
        assert_abs_diff_eq!(x, 2f64.sqrt(), epsilon = 1e-13);
    }
}
