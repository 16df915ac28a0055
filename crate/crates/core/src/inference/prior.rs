use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Inverse-gamma with density ∝ x^{−(shape+1)} exp(−scale/x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
            return Err(Error::validation(format!(
                "inverse-gamma needs positive shape and scale (got {shape}, {scale})"
            )));
        }
        Ok(InverseGamma { shape, scale })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln() - self.scale / x
    }

    pub fn mode(&self) -> f64 {
        self.scale / (self.shape + 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1/X with X ~ Gamma(shape, rate = scale)
        let g = Gamma::new(self.shape, 1.0 / self.scale).expect("validated parameters");
        1.0 / g.sample(rng)
    }
}

/// Uniform on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub lo: f64,
    pub hi: f64,
}

impl UniformPrior {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x >= self.lo && x <= self.hi {
            -(self.hi - self.lo).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Normal truncated to the positive half-line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveNormal {
    pub mean: f64,
    pub sd: f64,
}

impl PositiveNormal {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mean) / self.sd;
        let mass = Normal::standard().cdf(self.mean / self.sd);
        -0.5 * z * z - self.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - mass.ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            let x = self.mean + self.sd * z;
            if x > 0.0 {
                return x;
            }
        }
    }
}

/// Prior on the thickness-noise variance; `Fixed` removes it from sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoisePrior {
    InverseGamma { shape: f64, scale: f64 },
    Fixed { value: f64 },
}

/// Priors for every sampled scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Rheologic coefficient.
    pub a: UniformPrior,
    pub sigma2_omega: InverseGamma,
    pub tau2: InverseGamma,
    pub h0: PositiveNormal,
    pub sigma2_h: NoisePrior,
}

impl PriorSpec {
    /// Defaults: A ~ U[0, 1e-16]; σ²_ω ~ IG(2, 1e8); τ² ~ IG(2, 1e4);
    /// σ²_H ~ IG(2, 1e6); h0 ~ N⁺(`h0_mean`, 500²).
    pub fn default_for(h0_mean: f64) -> Self {
        PriorSpec {
            a: UniformPrior { lo: 0.0, hi: 1e-16 },
            sigma2_omega: InverseGamma { shape: 2.0, scale: 1e8 },
            tau2: InverseGamma { shape: 2.0, scale: 1e4 },
            h0: PositiveNormal { mean: h0_mean, sd: 500.0 },
            sigma2_h: NoisePrior::InverseGamma { shape: 2.0, scale: 1e6 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.lo < self.a.hi && self.a.lo >= 0.0 && self.a.hi.is_finite()) {
            return Err(Error::validation("A prior needs 0 <= lo < hi"));
        }
        InverseGamma::new(self.sigma2_omega.shape, self.sigma2_omega.scale)?;
        InverseGamma::new(self.tau2.shape, self.tau2.scale)?;
        if !(self.h0.sd > 0.0 && self.h0.mean.is_finite()) {
            return Err(Error::validation("h0 prior needs a finite mean and positive sd"));
        }
        match self.sigma2_h {
            NoisePrior::InverseGamma { shape, scale } => {
                InverseGamma::new(shape, scale)?;
            }
            NoisePrior::Fixed { value } if !(value > 0.0) => {
                return Err(Error::validation("fixed σ²_H must be positive"));
            }
            NoisePrior::Fixed { .. } => {}
        }
        Ok(())
    }

    pub fn sigma2_h_fixed(&self) -> Option<f64> {
        match self.sigma2_h {
            NoisePrior::Fixed { value } => Some(value),
            NoisePrior::InverseGamma { .. } => None,
        }
    }

    pub(crate) fn ln_sigma2_h(&self, x: f64) -> f64 {
        match self.sigma2_h {
            NoisePrior::InverseGamma { shape, scale } => InverseGamma { shape, scale }.ln_pdf(x),
            NoisePrior::Fixed { .. } => 0.0,
        }
    }

    /// Sum of the scalar log-densities (everything but the width vector).
    pub fn ln_scalars(&self, a: f64, h0: f64, sigma2_h: f64, sigma2_omega: f64, tau2: f64) -> f64 {
        self.a.ln_pdf(a)
            + self.h0.ln_pdf(h0)
            + self.ln_sigma2_h(sigma2_h)
            + self.sigma2_omega.ln_pdf(sigma2_omega)
            + self.tau2.ln_pdf(tau2)
    }

    pub(crate) fn sample_sigma2_h<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.sigma2_h {
            NoisePrior::InverseGamma { shape, scale } => InverseGamma { shape, scale }.sample(rng),
            NoisePrior::Fixed { value } => value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn inverse_gamma_mode_and_density() {
        let ig = InverseGamma::new(2.0, 1e8).unwrap();
        assert_eq!(ig.mode(), 1e8 / 3.0);
        // density peaks at the mode
        let at = ig.ln_pdf(ig.mode());
        assert!(ig.ln_pdf(ig.mode() * 1.01) < at && ig.ln_pdf(ig.mode() * 0.99) < at);
        // closed form with Γ(2) = 1: 2 ln s − 3 ln x − s/x
        let x = 5e7;
        assert!((ig.ln_pdf(x) - (2.0 * 1e8f64.ln() - 3.0 * x.ln() - 2.0)).abs() < 1e-10);
        assert_eq!(ig.ln_pdf(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn inverse_gamma_sample_mean() {
        // mean scale/(shape−1) exists for shape 3
        let ig = InverseGamma::new(3.0, 10.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean = (0..n).map(|_| ig.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn uniform_support() {
        let u = UniformPrior { lo: 0.0, hi: 1e-16 };
        assert_eq!(u.ln_pdf(2e-16), f64::NEG_INFINITY);
        assert_eq!(u.ln_pdf(-1e-30), f64::NEG_INFINITY);
        assert!((u.ln_pdf(5e-17) - 16.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn positive_normal_normalised() {
        let p = PositiveNormal { mean: 100.0, sd: 300.0 };
        // trapezoid over (0, mean + 12 sd)
        let n = 200_000;
        let hi = 100.0 + 12.0 * 300.0;
        let dx = hi / n as f64;
        let total: f64 = (1..n).map(|k| p.ln_pdf(k as f64 * dx).exp() * dx).sum();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn defaults_validate() {
        let p = PriorSpec::default_for(1500.0);
        p.validate().unwrap();
        assert!(p.ln_scalars(2e-16, 1500.0, 1e5, 1e7, 1e3).is_infinite());
        let mut bad = p;
        bad.a = UniformPrior { lo: 1.0, hi: 0.0 };
        assert!(bad.validate().is_err());
    }
}
