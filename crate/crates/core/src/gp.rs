//! Gaussian-process model for the unobserved flow width.
//!
//! The width on the quadrature grid is multivariate normal with a
//! physics-derived mean and Matérn covariance of smoothness ν = 3/2:
//!
//! ```text
//! C(d) = σ²_ω (1 + √3 d/φ) exp(−√3 d/φ)   d > 0
//! C(0) = σ²_ω + τ²
//! ```

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{interp_sorted, FlowlineGrid, Series};
use crate::dynamics::{DynamicsParams, FluxQuadrature};
use crate::error::{Error, Result};
use crate::smoothing::SurfaceFields;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Matérn smoothness; fixed.
pub const NU: f64 = 1.5;

/// Default positivity floor for the mean function (m).
pub const DEFAULT_MEAN_FLOOR: f64 = 1.0;

/// Covariance hyperparameters of the width process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthHyperparams {
    /// Partial sill σ²_ω (m²).
    pub sigma2_omega: f64,
    /// Range φ (m).
    pub phi: f64,
    /// Nugget τ² (m²).
    pub tau2: f64,
}

impl WidthHyperparams {
    pub fn new(sigma2_omega: f64, phi: f64, tau2: f64) -> Result<Self> {
        let h = WidthHyperparams {
            sigma2_omega,
            phi,
            tau2,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_omega > 0.0 && self.phi > 0.0 && self.tau2 >= 0.0)
            || !(self.sigma2_omega.is_finite() && self.phi.is_finite() && self.tau2.is_finite())
        {
            return Err(Error::validation(format!(
                "invalid width hyperparameters (σ²_ω={}, φ={}, τ²={})",
                self.sigma2_omega, self.phi, self.tau2
            )));
        }
        Ok(())
    }

    pub fn nu(&self) -> f64 {
        NU
    }
}

/// Matérn-3/2 correlation without the nugget, `(1 + √3 d/φ) exp(−√3 d/φ)`.
#[inline]
pub fn matern32_corr(d: f64, phi: f64) -> f64 {
    let r = SQRT3 * d / phi;
    (1.0 + r) * (-r).exp()
}

/// Covariance between two widths a distance `d` apart.
pub fn matern32_cov(d: f64, hyper: &WidthHyperparams) -> f64 {
    if d == 0.0 {
        hyper.sigma2_omega + hyper.tau2
    } else {
        hyper.sigma2_omega * matern32_corr(d, hyper.phi)
    }
}

/// Dense covariance matrix with `jitter` added to the diagonal.
pub fn build_cov_matrix(locations: &[f64], hyper: &WidthHyperparams, jitter: f64) -> DMatrix<f64> {
    let n = locations.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = hyper.sigma2_omega + hyper.tau2 + jitter;
        for j in 0..i {
            let c = matern32_cov((locations[i] - locations[j]).abs(), hyper);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    m
}

/// Cholesky factor of a covariance matrix plus the jitter that made it work.
#[derive(Debug, Clone)]
pub struct CovFactor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl CovFactor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Factors `Σ + jitter·I`; if that fails, retries with jitter
/// 1e-8·σ²_ω, 1e-7·σ²_ω, … up to 1e-2·σ²_ω.
pub fn factor_cov(locations: &[f64], hyper: &WidthHyperparams, jitter: f64) -> Result<CovFactor> {
    hyper.validate()?;
    if locations.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("GP locations must be finite"));
    }
    let base = build_cov_matrix(locations, hyper, 0.0);
    let attempt = |j: f64| {
        let mut m = base.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += j;
        }
        Cholesky::new(m).map(|chol| CovFactor { chol, jitter: j })
    };
    if let Some(f) = attempt(jitter) {
        return Ok(f);
    }
    let mut j = 1e-8 * hyper.sigma2_omega;
    while j <= 1e-2 * hyper.sigma2_omega * (1.0 + 1e-12) {
        if let Some(f) = attempt(jitter + j) {
            return Ok(f);
        }
        j *= 10.0;
    }
    Err(Error::numerical(format!(
        "covariance matrix of {} locations not positive definite even with jitter {:e}",
        locations.len(),
        1e-2 * hyper.sigma2_omega
    )))
}

/// Width GP: hyperparameters plus the mean on the quadrature grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthModel {
    pub hyper: WidthHyperparams,
    pub mean_at_quad: Vec<f64>,
}

impl WidthModel {
    pub fn new(hyper: WidthHyperparams, mean_at_quad: Vec<f64>) -> Result<Self> {
        hyper.validate()?;
        if mean_at_quad.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::validation("width mean must be positive"));
        }
        Ok(WidthModel {
            hyper,
            mean_at_quad,
        })
    }

    pub fn with_hyper(&self, hyper: WidthHyperparams) -> Self {
        WidthModel {
            hyper,
            mean_at_quad: self.mean_at_quad.clone(),
        }
    }

    fn check_len(&self, locations: &[f64]) -> Result<()> {
        if locations.len() != self.mean_at_quad.len() {
            return Err(Error::validation(format!(
                "{} locations for a width mean of length {}",
                locations.len(),
                self.mean_at_quad.len()
            )));
        }
        Ok(())
    }
}

/// Mean function from the observed thickness: with A = 0 and a plug-in
/// width, integrate the flux to each observation, invert `F = v_s H ω` for
/// ω there, then interpolate linearly onto `quad_x` (clamped beyond the end
/// observations) and floor at `floor`.
pub fn width_mean_function(
    grid: &FlowlineGrid,
    fields: &SurfaceFields,
    h_obs: &[f64],
    plug_in: &Series,
    c0: f64,
    floor: f64,
) -> Result<Vec<f64>> {
    fields.check_against(grid)?;
    if h_obs.len() != grid.n_obs() || grid.n_obs() == 0 {
        return Err(Error::validation("thickness observations must match obs_x"));
    }
    let params = DynamicsParams::new(0.0, h_obs[0].max(f64::MIN_POSITIVE), c0)?;
    let q = grid.quad_x();
    let candidate: Vec<f64> = if plug_in.len() == 1 {
        vec![plug_in.values[0]; q.len()]
    } else {
        q.iter()
            .map(|&x| interp_sorted(&plug_in.x, &plug_in.values, x))
            .collect()
    };
    let quad = FluxQuadrature::new(grid, &fields.a_at_quad, &fields.tau_at_quad)?;
    let flux = quad.flux(&candidate, params.c0);
    let mut at_obs = Vec::with_capacity(grid.n_obs());
    for (j, &x) in grid.obs_x().iter().enumerate() {
        let denom = fields.v_s_at_obs[j] * h_obs[j];
        if !(denom > 0.0) {
            return Err(Error::validation(format!(
                "zero velocity or thickness at x = {x}; cannot invert for width"
            )));
        }
        at_obs.push(flux[j] / denom);
    }
    let xs = grid.obs_x();
    Ok(q.iter()
        .map(|&x| {
            let w = if xs.len() == 1 {
                at_obs[0]
            } else {
                interp_sorted(xs, &at_obs, x)
            };
            w.max(floor)
        })
        .collect())
}

/// Prior draw `mean + L z` with a seeded ChaCha stream.
pub fn sample_width_prior(model: &WidthModel, locations: &[f64], seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_width_prior_with(model, locations, &mut rng)
}

pub fn sample_width_prior_with<R: Rng + ?Sized>(
    model: &WidthModel,
    locations: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    model.check_len(locations)?;
    let f = factor_cov(locations, &model.hyper, 0.0)?;
    let z = DVector::from_iterator(
        locations.len(),
        (0..locations.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
    );
    let lz = f.chol.l_dirty().lower_triangle() * z;
    Ok(model
        .mean_at_quad
        .iter()
        .zip(lz.iter())
        .map(|(m, d)| m + d)
        .collect())
}

/// Multivariate normal log-density of `omega`.
pub fn width_log_density(omega: &[f64], model: &WidthModel, locations: &[f64]) -> Result<f64> {
    model.check_len(locations)?;
    if omega.len() != locations.len() {
        return Err(Error::validation("width vector length != number of locations"));
    }
    let f = factor_cov(locations, &model.hyper, 0.0)?;
    let r = DVector::from_iterator(
        omega.len(),
        omega.iter().zip(&model.mean_at_quad).map(|(w, m)| w - m),
    );
    let white = f
        .chol
        .l_dirty()
        .lower_triangle()
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::numerical("triangular solve failed"))?;
    let n = omega.len() as f64;
    Ok(-0.5 * (n * LN_2PI + f.log_det() + white.norm_squared()))
}

/// Conditional mean and variance at `new_locations` given widths at `locations`.
/// The prior mean at new locations is the linear interpolation of the mean on
/// `locations`.
pub fn conditional_predict(
    omega: &[f64],
    model: &WidthModel,
    locations: &[f64],
    new_locations: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_len(locations)?;
    if omega.len() != locations.len() {
        return Err(Error::validation("width vector length != number of locations"));
    }
    let f = factor_cov(locations, &model.hyper, 0.0)?;
    let r = DVector::from_iterator(
        omega.len(),
        omega.iter().zip(&model.mean_at_quad).map(|(w, m)| w - m),
    );
    let alpha = f.chol.solve(&r);
    let prior_var = model.hyper.sigma2_omega + model.hyper.tau2;
    let mut means = Vec::with_capacity(new_locations.len());
    let mut vars = Vec::with_capacity(new_locations.len());
    for &x in new_locations {
        let k = DVector::from_iterator(
            locations.len(),
            locations.iter().map(|&l| matern32_cov((x - l).abs(), &model.hyper)),
        );
        let mu = interp_sorted(locations, &model.mean_at_quad, x);
        means.push(mu + k.dot(&alpha));
        let v = f.chol.solve(&k);
        vars.push((prior_var - k.dot(&v)).max(0.0));
    }
    Ok((means, vars))
}

/// Eigen-decomposition of the Matérn correlation matrix at fixed φ, so that
/// `Σ(σ²_ω, τ²) = Q diag(σ²_ω λ + τ²) Qᵀ` for any variance pair in O(m²)
/// without refactoring.
#[derive(Debug, Clone)]
pub struct SpectralCovariance {
    q: DMatrix<f64>,
    lambda: Vec<f64>,
}

impl SpectralCovariance {
    pub fn new(locations: &[f64], phi: f64) -> Result<Self> {
        let unit = WidthHyperparams::new(1.0, phi, 0.0)?;
        let corr = build_cov_matrix(locations, &unit, 0.0);
        let eig = SymmetricEigen::new(corr);
        let lambda = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        Ok(SpectralCovariance {
            q: eig.eigenvectors,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Per-mode standard deviations.
    pub fn scales(&self, sigma2_omega: f64, tau2: f64) -> Vec<f64> {
        // the floor keeps the factor invertible when τ² → 0
        let floor = 1e-10 * sigma2_omega;
        self.lambda
            .iter()
            .map(|&l| (sigma2_omega * l + tau2).max(floor).sqrt())
            .collect()
    }

    /// log det Σ for the given scales.
    pub fn log_det(scales: &[f64]) -> f64 {
        2.0 * scales.iter().map(|s| s.ln()).sum::<f64>()
    }

    /// `Q (scales ∘ z)`
    pub fn colour(&self, scales: &[f64], z: &[f64]) -> Vec<f64> {
        let sz = DVector::from_iterator(z.len(), z.iter().zip(scales).map(|(a, b)| a * b));
        (&self.q * sz).iter().copied().collect()
    }

    /// Inverse of [`colour`](Self::colour): `(Qᵀ r) / scales`.
    pub fn whiten(&self, scales: &[f64], r: &[f64]) -> Vec<f64> {
        let rv = DVector::from_column_slice(r);
        self.q
            .tr_mul(&rv)
            .iter()
            .zip(scales)
            .map(|(a, s)| a / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PhysicalConstants;
    use crate::domain::build_grid;
    use crate::dynamics::synthetic_velocity;

    fn hp(s: f64, phi: f64, t: f64) -> WidthHyperparams {
        WidthHyperparams::new(s, phi, t).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let h = hp(2.0, 10.0, 0.5);
        assert_eq!(matern32_cov(0.0, &h), 2.5);
        assert!(matern32_cov(1000.0, &h) < 1e-60 * 2.0);
        // (1+√3)e^{−√3} to 40 digits: 0.48335772459650765059…
        let v = matern32_cov(7.0, &hp(1.0, 7.0, 0.0));
        assert!((v - 0.483_357_724_596_507_65).abs() < 1e-15);
        assert_eq!(hp(1.0, 1.0, 0.0).nu(), 1.5);
        assert!(WidthHyperparams::new(0.0, 1.0, 0.0).is_err());
        assert!(WidthHyperparams::new(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn kernel_monotone_decreasing() {
        let h = hp(3.0, 500.0, 0.1);
        let vals: Vec<f64> = (1..2000).map(|k| matern32_cov(k as f64, &h)).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn one_by_one_matrix() {
        let m = build_cov_matrix(&[5.0], &hp(2.0, 1.0, 0.25), 0.5);
        assert_eq!(m.shape(), (1, 1));
        assert_eq!(m[(0, 0)], 2.75);
    }

    #[test]
    fn coincident_points_trigger_jitter() {
        let h = hp(1.0, 10.0, 0.0);
        assert!(Cholesky::new(build_cov_matrix(&[3.0, 3.0], &h, 0.0)).is_none());
        let f = factor_cov(&[3.0, 3.0], &h, 0.0).unwrap();
        assert!(f.jitter > 0.0 && f.jitter <= 1e-2);
    }

    #[test]
    fn symmetric_exactly() {
        let locs: Vec<f64> = (0..50).map(|i| (i as f64).powf(1.1) * 700.0).collect();
        let m = build_cov_matrix(&locs, &hp(1e8, 4e4, 1e4), 0.0);
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn log_density_scalar_case() {
        let model = WidthModel::new(hp(4.0, 1.0, 1.0), vec![10.0]).unwrap();
        let got = width_log_density(&[12.0], &model, &[0.0]).unwrap();
        let var: f64 = 5.0;
        let want = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 4.0 / (2.0 * var);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn log_density_peaks_at_mean() {
        let locs = [0.0, 1.0, 2.5, 4.0];
        let model = WidthModel::new(hp(2.0, 2.0, 0.1), vec![5.0, 6.0, 7.0, 6.5]).unwrap();
        let at_mean = width_log_density(&model.mean_at_quad, &model, &locs).unwrap();
        for k in 0..4 {
            let mut w = model.mean_at_quad.clone();
            w[k] += 0.3;
            assert!(width_log_density(&w, &model, &locs).unwrap() < at_mean);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_degenerates_to_mean() {
        let locs: Vec<f64> = (0..6).map(|i| i as f64 * 1e3).collect();
        let model = WidthModel::new(hp(1e6, 4e3, 1e2), vec![5e4; 6]).unwrap();
        assert_eq!(
            sample_width_prior(&model, &locs, 99).unwrap(),
            sample_width_prior(&model, &locs, 99).unwrap()
        );
        assert_ne!(
            sample_width_prior(&model, &locs, 99).unwrap(),
            sample_width_prior(&model, &locs, 100).unwrap()
        );
        let tiny = WidthModel::new(hp(1e-12, 4e3, 0.0), vec![5e4; 6]).unwrap();
        for w in sample_width_prior(&tiny, &locs, 1).unwrap() {
            assert!((w - 5e4).abs() < 1e-4);
        }
    }

    #[test]
    fn conditional_interpolates_and_decorrelates() {
        let locs = [0.0, 100.0, 200.0];
        let model = WidthModel::new(hp(4.0, 50.0, 0.0), vec![10.0, 10.0, 10.0]).unwrap();
        let omega = [11.0, 9.0, 12.5];
        let (m, v) = conditional_predict(&omega, &model, &locs, &[100.0, 1e5]).unwrap();
        assert!((m[0] - 9.0).abs() < 1e-6);
        assert!(v[0] < 1e-6);
        assert!((m[1] - 10.0).abs() < 1e-9);
        assert!((v[1] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_matches_cholesky_density() {
        let locs: Vec<f64> = (0..40).map(|i| i as f64 * 1000.0).collect();
        let (s2, phi, t2) = (3e7, 4e4, 2e4);
        let spec = SpectralCovariance::new(&locs, phi).unwrap();
        let sc = spec.scales(s2, t2);
        let z: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 / 5.0 - 1.0).collect();
        let r = spec.colour(&sc, &z);
        let back = spec.whiten(&sc, &r);
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
        let model = WidthModel::new(hp(s2, phi, t2), vec![6e4; 40]).unwrap();
        let omega: Vec<f64> = r.iter().map(|d| 6e4 + d).collect();
        let chol = width_log_density(&omega, &model, &locs).unwrap();
        let zz: f64 = z.iter().map(|v| v * v).sum();
        let spectral = -0.5 * (40.0 * LN_2PI + SpectralCovariance::log_det(&sc) + zz);
        assert!((chol - spectral).abs() < 1e-6 * chol.abs(), "{chol} vs {spectral}");
    }

    #[test]
    fn mean_function_inverts_generator() {
        let obs: Vec<f64> = (1..=9).map(|k| k as f64 * 2e4).collect();
        let grid = build_grid(2e5, 1000.0, &obs).unwrap();
        let q = grid.quad_x();
        let w_true: Vec<f64> = q.iter().map(|x| 9e4 - 0.2 * x).collect();
        let a: Vec<f64> = q.iter().map(|x| 0.4 + 1e-6 * x).collect();
        let tau = vec![0.1; q.len()];
        let h: Vec<f64> = obs.iter().map(|x| 2000.0 - 3e-3 * x).collect();
        let s = vec![-0.004; obs.len()];
        let p = DynamicsParams::new(0.0, h[0], 0.0).unwrap();
        let v = synthetic_velocity(&grid, &h, &s, &a, &tau, &w_true, &p, &PhysicalConstants::default()).unwrap();
        let fields = SurfaceFields { v_s_at_obs: v, s_at_obs: s, a_at_quad: a, tau_at_quad: tau };
        let plug = Series::new(q.to_vec(), w_true.clone()).unwrap();
        let mean = width_mean_function(&grid, &fields, &h, &plug, 0.0, DEFAULT_MEAN_FLOOR).unwrap();
        for &x in &obs {
            let i = (x / 1000.0) as usize;
            assert!((mean[i] - w_true[i]).abs() < 1e-6 * w_true[i]);
        }
        // clamped beyond the last observation
        assert_eq!(mean[q.len() - 1], mean[180]);
    }

    #[test]
    fn mean_function_constant_case() {
        let obs = [250.0, 500.0, 750.0];
        let grid = build_grid(1000.0, 50.0, &obs).unwrap();
        let m = grid.n_quad();
        let (w, acc, vel) = (300.0, 0.5, 20.0);
        // H consistent with F = acc·w·x and v·H·w = F
        let h: Vec<f64> = obs.iter().map(|x| acc * x / vel).collect();
        let fields = SurfaceFields {
            v_s_at_obs: vec![vel; 3],
            s_at_obs: vec![0.0; 3],
            a_at_quad: vec![acc; m],
            tau_at_quad: vec![0.0; m],
        };
        let plug = Series::new(vec![0.0, 1000.0], vec![w, w]).unwrap();
        let mean = width_mean_function(&grid, &fields, &h, &plug, 0.0, 1.0).unwrap();
        assert!(mean.iter().all(|v| (v - w).abs() < 1e-9));
        let mut bad = fields.clone();
        bad.v_s_at_obs[1] = 0.0;
        assert!(width_mean_function(&grid, &bad, &h, &plug, 0.0, 1.0).is_err());
    }
}
