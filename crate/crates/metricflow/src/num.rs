//! Scalar root-finding helpers shared by the energy conjugates and the
//! per-edge proximal maps.

/// Solves `f(s) = 0` for a continuous strictly increasing `f` with
/// `f(lo) <= 0 <= f(hi)`, by bisection with Newton acceleration when a
/// derivative is available. Converges to ~1e-15 relative bracket width.
pub fn solve_increasing<F, D>(mut f: F, deriv: Option<D>, mut lo: f64, mut hi: f64) -> f64
where
    F: FnMut(f64) -> f64,
    D: Fn(f64) -> f64,
{
    debug_assert!(lo <= hi);
    let flo = f(lo);
    if flo >= 0.0 {
        return lo;
    }
    let fhi = f(hi);
    if fhi <= 0.0 {
        return hi;
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let width = hi - lo;
        if width <= 1e-16 * (1.0 + lo.abs() + hi.abs()) {
            break;
        }
        let mut next = None;
        if let Some(d) = &deriv {
            let slope = d(x);
            if slope.is_finite() && slope > 0.0 {
                let cand = x - fx / slope;
                if cand > lo && cand < hi {
                    next = Some(cand);
                }
            }
        }
        x = next.unwrap_or(0.5 * (lo + hi));
    }
    0.5 * (lo + hi)
}
