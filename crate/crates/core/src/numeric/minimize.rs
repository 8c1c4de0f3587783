use crate::error::Result;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a minimizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > xtol {
        // ties move the upper end so flat regions resolve to the smallest argmin
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let x = 0.5 * (lo + hi);
    let fx = f(x)?;
    Ok((x, fx))
}

/// Scans `samples` equispaced points, then refines the best cell with
/// golden-section search. Endpoints are always candidates, so monotone
/// objectives return the boundary minimizer exactly.
pub fn scan_then_golden<F>(
    mut f: F,
    lo: f64,
    hi: f64,
    samples: usize,
    xtol: f64,
) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if hi <= lo {
        let v = f(lo)?;
        return Ok((lo, v));
    }
    let n = samples.max(2);
    let h = (hi - lo) / (n - 1) as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..n {
        let x = if i == n - 1 { hi } else { lo + h * i as f64 };
        let v = f(x)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let (i, v) = best;
    let a = if i == 0 { lo } else { lo + h * (i - 1) as f64 };
    let b = if i + 1 >= n {
        hi
    } else {
        lo + h * (i + 1) as f64
    };
    let (x, fx) = golden_section(&mut f, a, b, xtol)?;
    let edge = if i == 0 {
        lo
    } else if i == n - 1 {
        hi
    } else {
        f64::NAN
    };
    if edge.is_finite() && v <= fx {
        return Ok((edge, v));
    }
    Ok((x, fx))
}

/// Local descent from `x0`: walks downhill with doubling steps inside
/// `[lo, hi]` until the objective rises, then finishes with golden-section
/// search on the last three-point bracket.
pub fn descend_from<F>(mut f: F, x0: f64, lo: f64, hi: f64, xtol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut step = 1e-3 * (hi - lo).max(1e-12);
    let x0 = x0.clamp(lo, hi);
    let f0 = f(x0)?;
    let left = (x0 - step).max(lo);
    let right = (x0 + step).min(hi);
    let (fl, fr) = (f(left)?, f(right)?);
    if f0 <= fl && f0 <= fr {
        return golden_section(&mut f, left, right, xtol);
    }
    let dir = if fr < fl { 1.0 } else { -1.0 };
    let (mut prev, mut cur) = (x0, if dir > 0.0 { right } else { left });
    let mut fcur = if dir > 0.0 { fr } else { fl };
    loop {
        step *= 2.0;
        let next = (cur + dir * step).clamp(lo, hi);
        if next == cur {
            let (a, b) = if dir > 0.0 { (prev, cur) } else { (cur, prev) };
            return golden_section(&mut f, a, b, xtol);
        }
        let fnext = f(next)?;
        if fnext >= fcur {
            let (a, b) = if dir > 0.0 {
                (prev, next)
            } else {
                (next, prev)
            };
            return golden_section(&mut f, a, b, xtol);
        }
        prev = cur;
        cur = next;
        fcur = fnext;
    }
}
