//! Real nonnegative roots of the flux balance
//!
//! ```text
//! p(h) = k·ω·h⁵ − v_s·ω·h + F,   k = (A/20)(ρ g |s|)³
//! ```
//!
//! For `k > 0` and `v_s > 0`, `p` has a single critical point on `h > 0`, at
//! `h* = (v_s / 5k)^{1/4}`, so `[0, h*]` and `[h*, h_max]` are monotone
//! brackets holding at most one root each. The thin-ice root sits on the
//! first branch, the (usually unphysical) thick root on the second.

/// Coefficients of the flux quintic at one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxQuintic {
    /// k·ω
    pub c5: f64,
    /// −v_s·ω
    pub c1: f64,
    /// F
    pub c0: f64,
}

impl FluxQuintic {
    pub fn new(flux: f64, v_s: f64, deformation: f64, omega: f64) -> Self {
        FluxQuintic {
            c5: deformation * omega,
            c1: -v_s * omega,
            c0: flux,
        }
    }

    #[inline]
    pub fn eval(&self, h: f64) -> f64 {
        let h2 = h * h;
        (self.c5 * h2 * h2 + self.c1) * h + self.c0
    }

    #[inline]
    fn deriv(&self, h: f64) -> f64 {
        let h2 = h * h;
        5.0 * self.c5 * h2 * h2 + self.c1
    }

    /// Residual tolerance for an accepted root.
    pub fn tolerance(&self) -> f64 {
        1e-8 * self.c0.abs().max(1.0)
    }

    /// All real roots in `[0, h_max]`, ascending.
    pub fn roots(&self, h_max: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(2);
        if self.c0 == 0.0 {
            out.push(0.0);
        }
        if self.c5 == 0.0 {
            if self.c1 != 0.0 {
                let h = -self.c0 / self.c1;
                if h > 0.0 && h <= h_max {
                    out.push(h);
                }
            }
            return out;
        }
        let mut breaks = vec![0.0];
        // critical point of the quintic on h > 0
        let ratio = -self.c1 / (5.0 * self.c5);
        if ratio > 0.0 {
            let crit = ratio.sqrt().sqrt();
            if crit < h_max {
                breaks.push(crit);
            }
        }
        breaks.push(h_max);
        let tol = self.tolerance();
        for w in breaks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (plo, phi) = (self.eval(lo), self.eval(hi));
            let root = if plo == 0.0 {
                // already recorded when lo == 0; interior tangency handled below
                if lo > 0.0 {
                    Some(lo)
                } else {
                    None
                }
            } else if phi == 0.0 {
                Some(hi)
            } else if plo.signum() != phi.signum() {
                Some(self.polish(lo, hi, plo))
            } else {
                None
            };
            if let Some(r) = root {
                if out.last().is_none_or(|&prev| r > prev) {
                    out.push(r);
                }
            }
        }
        // double root at the critical point: no sign change but p(h*) ≈ 0
        if breaks.len() == 3 {
            let crit = breaks[1];
            if self.eval(crit).abs() <= tol && !out.iter().any(|&r| (r - crit).abs() <= 1e-9 * crit) {
                out.push(crit);
                out.sort_by(f64::total_cmp);
            }
        }
        out
    }

    /// Safeguarded Newton on a bracket with a sign change.
    fn polish(&self, mut lo: f64, mut hi: f64, plo: f64) -> f64 {
        let rising = plo < 0.0;
        let mut h = 0.5 * (lo + hi);
        for _ in 0..200 {
            let p = self.eval(h);
            if p == 0.0 {
                return h;
            }
            if (p < 0.0) == rising {
                lo = h;
            } else {
                hi = h;
            }
            let d = self.deriv(h);
            let newton = h - p / d;
            let next = if d != 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - h).abs() <= 4.0 * f64::EPSILON * h.abs().max(f64::MIN_POSITIVE) || hi - lo <= 4.0 * f64::EPSILON * hi {
                return next;
            }
            h = next;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_case() {
        let q = FluxQuintic::new(1e9, 1000.0, 0.0, 1e5);
        assert_eq!(q.roots(1e4), vec![10.0]);
        let q = FluxQuintic::new(0.0, 1000.0, 0.0, 1e5);
        assert_eq!(q.roots(1e4), vec![0.0]);
    }

    #[test]
    fn two_branches() {
        // flux below the maximum of v̄hω gives a thin and a thick root
        let k = 1e-13;
        let q = FluxQuintic::new(5e10, 500.0, k, 5e4);
        let roots = q.roots(1e5);
        assert_eq!(roots.len(), 2);
        for r in &roots {
            assert!(q.eval(*r).abs() <= q.tolerance());
        }
        let crit = (500.0 / (5.0 * k)).powf(0.25);
        assert!(roots[0] < crit && roots[1] > crit);
    }

    #[test]
    fn no_root_when_flux_exceeds_capacity() {
        // max of (v_s h − k h⁵) ω is well below F
        let q = FluxQuintic::new(1e14, 10.0, 1e-12, 1e3);
        assert!(q.roots(1e4).is_empty());
    }

    #[test]
    fn zero_velocity_and_zero_flux() {
        let q = FluxQuintic::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(q.roots(10.0), vec![0.0]);
        let q = FluxQuintic::new(1.0, 0.0, 0.0, 1.0);
        assert!(q.roots(10.0).is_empty());
    }
}
