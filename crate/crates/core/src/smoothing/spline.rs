//! Cubic smoothing spline in Reinsch form.
//!
//! For knots `t_0 < … < t_{n-1}` the fitted values `g` minimise
//! `Σ (y_i − g_i)² + α ∫ g''(t)² dt`. With the banded matrices `Q` (n × n−2)
//! and `R` (n−2 × n−2) of Green & Silverman, `g = y − α Q γ` where
//! `(R + α QᵀQ) γ = Qᵀ y`. The system matrix is pentadiagonal, so the fit
//! and the trace of the hat matrix (needed for GCV) are both O(n).

use crate::error::{Error, Result};

/// Result of a smoothing-spline fit.
#[derive(Debug, Clone)]
pub struct SplineFit {
    pub fitted: Vec<f64>,
    /// Penalty weight actually used.
    pub alpha: f64,
    /// Trace of the hat matrix (effective degrees of freedom).
    pub edf: f64,
    /// Generalized cross-validation score at `alpha`.
    pub gcv: f64,
}

/// Banded pieces of the Reinsch system for one set of knots.
#[derive(Debug, Clone)]
pub(crate) struct ReinschSystem {
    /// Knot spacings h_i = t_{i+1} − t_i.
    h: Vec<f64>,
    /// R diagonal and first super-diagonal.
    r_diag: Vec<f64>,
    r_off: Vec<f64>,
    /// QᵀQ bands 0, 1 and 2.
    qtq: [Vec<f64>; 3],
}

impl ReinschSystem {
    pub(crate) fn new(t: &[f64]) -> Result<Self> {
        let n = t.len();
        if n < 3 {
            return Err(Error::validation("smoothing spline needs at least 3 knots"));
        }
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        if h.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::validation("spline knots must be strictly ascending"));
        }
        let m = n - 2;
        let r_diag = (0..m).map(|j| (h[j] + h[j + 1]) / 3.0).collect();
        let r_off = (0..m.saturating_sub(1)).map(|j| h[j + 1] / 6.0).collect();

        // column j of Q has entries at rows j, j+1, j+2
        let col = |j: usize| -> [f64; 3] {
            [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]]
        };
        let mut qtq = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        for j in 0..m {
            let cj = col(j);
            qtq[0][j] = cj.iter().map(|v| v * v).sum();
            if j + 1 < m {
                let ck = col(j + 1);
                // overlap rows j+1, j+2
                qtq[1][j] = cj[1] * ck[0] + cj[2] * ck[1];
            }
            if j + 2 < m {
                let ck = col(j + 2);
                qtq[2][j] = cj[2] * ck[0];
            }
        }
        Ok(ReinschSystem {
            h,
            r_diag,
            r_off,
            qtq,
        })
    }

    fn n(&self) -> usize {
        self.h.len() + 1
    }

    /// Natural scale for the penalty: tr(R) / tr(QᵀQ).
    fn alpha_scale(&self) -> f64 {
        self.r_diag.iter().sum::<f64>() / self.qtq[0].iter().sum::<f64>()
    }

    fn qt_mul(&self, y: &[f64]) -> Vec<f64> {
        let h = &self.h;
        (0..self.n() - 2)
            .map(|j| {
                (y[j + 2] - y[j + 1]) / h[j + 1] - (y[j + 1] - y[j]) / h[j]
            })
            .collect()
    }

    fn q_mul(&self, gamma: &[f64]) -> Vec<f64> {
        let n = self.n();
        let h = &self.h;
        let mut out = vec![0.0; n];
        for (j, &g) in gamma.iter().enumerate() {
            out[j] += g / h[j];
            out[j + 1] -= g * (1.0 / h[j] + 1.0 / h[j + 1]);
            out[j + 2] += g / h[j + 1];
        }
        out
    }

    /// LDLᵀ factor of R + α QᵀQ.
    fn factor(&self, alpha: f64) -> Result<BandedLdl> {
        let m = self.n() - 2;
        let b0: Vec<f64> = (0..m).map(|j| self.r_diag[j] + alpha * self.qtq[0][j]).collect();
        let b1: Vec<f64> = (0..m.saturating_sub(1))
            .map(|j| self.r_off[j] + alpha * self.qtq[1][j])
            .collect();
        let b2: Vec<f64> = (0..m.saturating_sub(2)).map(|j| alpha * self.qtq[2][j]).collect();
        BandedLdl::new(&b0, &b1, &b2)
    }

    pub(crate) fn fit(&self, y: &[f64], alpha: f64) -> Result<SplineFit> {
        let n = self.n();
        if alpha == 0.0 {
            return Ok(SplineFit {
                fitted: y.to_vec(),
                alpha,
                edf: n as f64,
                gcv: f64::NAN,
            });
        }
        let ldl = self.factor(alpha)?;
        let gamma = ldl.solve(&self.qt_mul(y));
        let qg = self.q_mul(&gamma);
        let fitted: Vec<f64> = y.iter().zip(&qg).map(|(yi, q)| yi - alpha * q).collect();
        let inv = ldl.inverse_band();
        let mut tr = 0.0;
        for j in 0..n - 2 {
            tr += inv[0][j] * self.qtq[0][j];
            if j + 1 < n - 2 {
                tr += 2.0 * inv[1][j] * self.qtq[1][j];
            }
            if j + 2 < n - 2 {
                tr += 2.0 * inv[2][j] * self.qtq[2][j];
            }
        }
        let edf = n as f64 - alpha * tr;
        let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
        let denom = (n as f64 - edf).max(f64::MIN_POSITIVE);
        let gcv = n as f64 * rss / (denom * denom);
        Ok(SplineFit {
            fitted,
            alpha,
            edf,
            gcv,
        })
    }

    /// Minimises GCV over α on a log grid, then refines by golden section.
    pub(crate) fn fit_gcv(&self, y: &[f64]) -> Result<SplineFit> {
        let scale = self.alpha_scale();
        let score = |log_r: f64| -> Result<SplineFit> { self.fit(y, scale * 10f64.powf(log_r)) };
        let (lo, hi, steps) = (-8.0, 8.0, 65);
        let mut best: Option<(f64, SplineFit)> = None;
        for k in 0..steps {
            let lr = lo + (hi - lo) * k as f64 / (steps - 1) as f64;
            let f = score(lr)?;
            if f.gcv.is_finite() && best.as_ref().is_none_or(|(_, b)| f.gcv < b.gcv) {
                best = Some((lr, f));
            }
        }
        let (centre, mut fit) = best.ok_or_else(|| Error::numerical("GCV score undefined on every penalty"))?;
        let step = (hi - lo) / (steps - 1) as f64;
        let (mut a, mut b) = (centre - step, centre + step);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..40 {
            let c = b - inv_phi * (b - a);
            let d = a + inv_phi * (b - a);
            let (fc, fd) = (score(c)?, score(d)?);
            if fc.gcv < fit.gcv {
                fit = fc.clone();
            }
            if fd.gcv < fit.gcv {
                fit = fd.clone();
            }
            if fc.gcv < fd.gcv {
                b = d;
            } else {
                a = c;
            }
        }
        Ok(fit)
    }
}

/// LDLᵀ factorisation of a symmetric pentadiagonal matrix.
struct BandedLdl {
    d: Vec<f64>,
    /// l1[i] = L[i+1][i], l2[i] = L[i+2][i]
    l1: Vec<f64>,
    l2: Vec<f64>,
}

impl BandedLdl {
    fn new(b0: &[f64], b1: &[f64], b2: &[f64]) -> Result<Self> {
        let m = b0.len();
        let mut d = vec![0.0; m];
        let mut l1 = vec![0.0; m];
        let mut l2 = vec![0.0; m];
        for i in 0..m {
            let mut di = b0[i];
            if i >= 1 {
                di -= l1[i - 1] * l1[i - 1] * d[i - 1];
            }
            if i >= 2 {
                di -= l2[i - 2] * l2[i - 2] * d[i - 2];
            }
            if !(di > 0.0) {
                return Err(Error::numerical("smoothing system is not positive definite"));
            }
            d[i] = di;
            if i + 1 < m {
                let mut v = b1[i];
                if i >= 1 {
                    v -= l1[i - 1] * l2[i - 1] * d[i - 1];
                }
                l1[i] = v / di;
            }
            if i + 2 < m {
                l2[i] = b2[i] / di;
            }
        }
        Ok(BandedLdl { d, l1, l2 })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = self.d.len();
        let mut z = rhs.to_vec();
        for i in 0..m {
            if i >= 1 {
                z[i] -= self.l1[i - 1] * z[i - 1];
            }
            if i >= 2 {
                z[i] -= self.l2[i - 2] * z[i - 2];
            }
        }
        for i in 0..m {
            z[i] /= self.d[i];
        }
        for i in (0..m).rev() {
            if i + 1 < m {
                z[i] -= self.l1[i] * z[i + 1];
            }
            if i + 2 < m {
                z[i] -= self.l2[i] * z[i + 2];
            }
        }
        z
    }

    /// Central five bands of the inverse (Hutchinson & de Hoog recursion).
    /// Returns `[diag, super1, super2]`.
    fn inverse_band(&self) -> [Vec<f64>; 3] {
        let m = self.d.len();
        let mut s0 = vec![0.0; m];
        let mut s1 = vec![0.0; m];
        let mut s2 = vec![0.0; m];
        // symmetric band lookup for |i - j| <= 2
        let get = |s0: &[f64], s1: &[f64], s2: &[f64], i: usize, j: usize| -> f64 {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            match b - a {
                0 => s0[a],
                1 => s1[a],
                2 => s2[a],
                _ => unreachable!(),
            }
        };
        for i in (0..m).rev() {
            let l = [
                if i + 1 < m { self.l1[i] } else { 0.0 },
                if i + 2 < m { self.l2[i] } else { 0.0 },
            ];
            for off in [2usize, 1] {
                let j = i + off;
                if j >= m {
                    continue;
                }
                let mut v = 0.0;
                for k in 1..=2 {
                    if i + k < m {
                        v -= l[k - 1] * get(&s0, &s1, &s2, i + k, j);
                    }
                }
                if off == 1 {
                    s1[i] = v;
                } else {
                    s2[i] = v;
                }
            }
            let mut v = 1.0 / self.d[i];
            if i + 1 < m {
                v -= l[0] * s1[i];
            }
            if i + 2 < m {
                v -= l[1] * s2[i];
            }
            s0[i] = v;
        }
        [s0, s1, s2]
    }
}
