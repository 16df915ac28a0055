//! Pre-smoothing of surface observations and slope estimation.
//!
//! Smoothed inputs are treated as the true input processes: the small-scale
//! variation around them is not modelled.

mod spline;

pub use spline::SplineFit;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{FlowlineGrid, ObservationSet, Series};
use crate::error::{Error, Result};

/// Penalty weight for the smoothing spline.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Penalty {
    /// Choose the penalty by generalized cross-validation.
    #[default]
    Gcv,
    /// Fixed penalty weight on ∫ f''(x)² dx, with x in metres. Zero interpolates.
    Fixed(f64),
}

impl Serialize for Penalty {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Penalty::Gcv => s.serialize_str("gcv"),
            Penalty::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Penalty {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Penalty::Fixed(v)),
            Raw::Int(v) => Ok(Penalty::Fixed(v as f64)),
            Raw::Str(s) if s.eq_ignore_ascii_case("gcv") => Ok(Penalty::Gcv),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "penalty must be a number or \"gcv\", got {s:?}"
            ))),
        }
    }
}

/// How one input series is smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SmootherSpec {
    /// Cubic smoothing spline.
    #[serde(rename = "spline", alias = "smoothing-spline")]
    Spline {
        #[serde(default)]
        lambda: Penalty,
    },
    /// Centred moving average over an odd number of samples; the window
    /// shrinks symmetrically near the ends.
    MovingAverage { window: usize },
    /// Pass-through.
    None,
}

impl Default for SmootherSpec {
    fn default() -> Self {
        SmootherSpec::Spline {
            lambda: Penalty::Gcv,
        }
    }
}

impl SmootherSpec {
    pub fn interpolating() -> Self {
        SmootherSpec::Spline {
            lambda: Penalty::Fixed(0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            SmootherSpec::Spline {
                lambda: Penalty::Fixed(l),
            } if !(l >= 0.0 && l.is_finite()) => {
                Err(Error::validation(format!("smoothing penalty must be >= 0, got {l}")))
            }
            SmootherSpec::MovingAverage { window } if window == 0 || window % 2 == 0 => Err(
                Error::validation(format!("moving-average window must be odd and positive, got {window}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Smooths a series, keeping its locations.
pub fn smooth_series(raw: &Series, spec: &SmootherSpec) -> Result<Series> {
    spec.validate()?;
    match *spec {
        SmootherSpec::None => Ok(raw.clone()),
        SmootherSpec::MovingAverage { window } => Ok(raw.with_values(moving_average(&raw.values, window))),
        SmootherSpec::Spline { lambda } => {
            Ok(raw.with_values(smoothing_spline(raw, lambda)?.fitted))
        }
    }
}

/// Fits a cubic smoothing spline and reports the penalty, effective degrees
/// of freedom and GCV score.
pub fn smoothing_spline(raw: &Series, lambda: Penalty) -> Result<SplineFit> {
    if raw.len() < 4 {
        return Err(Error::validation(format!(
            "smoothing spline needs at least 4 points, got {}",
            raw.len()
        )));
    }
    let sys = spline::ReinschSystem::new(&raw.x)?;
    match lambda {
        Penalty::Gcv => sys.fit_gcv(&raw.values),
        Penalty::Fixed(alpha) => sys.fit(&raw.values, alpha),
    }
}

fn moving_average(y: &[f64], window: usize) -> Vec<f64> {
    let n = y.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            let span = &y[i - k..=i + k];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect()
}

/// Slope by central differences; one-sided at the two ends.
pub fn central_difference_slope(elevation: &Series) -> Result<Series> {
    let (x, e) = (&elevation.x, &elevation.values);
    let n = x.len();
    if n < 3 {
        return Err(Error::validation("slope needs at least 3 elevation points"));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("duplicate or unordered elevation locations"));
    }
    let slope = (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (e[b] - e[a]) / (x[b] - x[a])
        })
        .collect();
    Ok(elevation.with_values(slope))
}

/// Smoothing choices for each input series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub velocity: SmootherSpec,
    pub elevation: SmootherSpec,
    pub accumulation: SmootherSpec,
    pub thinning: SmootherSpec,
    /// Optional second pass applied to the derived slope.
    pub slope: Option<SmootherSpec>,
}

impl SmoothingConfig {
    /// Every series passed through unchanged (interpolating spline).
    pub fn pass_through() -> Self {
        let s = SmootherSpec::interpolating();
        SmoothingConfig {
            velocity: s,
            elevation: s,
            accumulation: s,
            thinning: s,
            slope: None,
        }
    }
}

/// Smoothed inputs evaluated where the dynamics model needs them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFields {
    /// Surface velocity on `obs_x` (m/yr).
    pub v_s_at_obs: Vec<f64>,
    /// Signed surface slope on `obs_x`.
    pub s_at_obs: Vec<f64>,
    /// Accumulation on `quad_x` (m/yr).
    pub a_at_quad: Vec<f64>,
    /// Thinning on `quad_x` (m/yr).
    pub tau_at_quad: Vec<f64>,
}

impl SurfaceFields {
    pub fn check_against(&self, grid: &FlowlineGrid) -> Result<()> {
        if self.v_s_at_obs.len() != grid.n_obs() || self.s_at_obs.len() != grid.n_obs() {
            return Err(Error::validation("velocity/slope fields do not match obs grid"));
        }
        if self.a_at_quad.len() != grid.n_quad() || self.tau_at_quad.len() != grid.n_quad() {
            return Err(Error::validation(
                "accumulation/thinning fields do not match quadrature grid",
            ));
        }
        let all = self
            .v_s_at_obs
            .iter()
            .chain(&self.s_at_obs)
            .chain(&self.a_at_quad)
            .chain(&self.tau_at_quad);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("surface fields contain non-finite values"));
        }
        if self.v_s_at_obs.iter().any(|&v| v < 0.0) {
            return Err(Error::validation("surface velocity must be nonnegative"));
        }
        Ok(())
    }
}

/// Smoothed (velocity, slope) series before evaluation on a grid; kept so
/// prediction grids can reuse one smoothing pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedInputs {
    pub velocity: Series,
    pub slope: Series,
    pub accumulation: Series,
    pub thinning: Series,
}

impl SmoothedInputs {
    pub fn from_observations(obs: &ObservationSet, specs: &SmoothingConfig) -> Result<Self> {
        let elevation = smooth_series(&obs.elevation, &specs.elevation)?;
        let mut slope = central_difference_slope(&elevation)?;
        if let Some(spec) = &specs.slope {
            slope = smooth_series(&slope, spec)?;
        }
        Ok(SmoothedInputs {
            velocity: smooth_series(&obs.velocity, &specs.velocity)?,
            slope,
            accumulation: smooth_series(&obs.accumulation, &specs.accumulation)?,
            thinning: smooth_series(&obs.thinning, &specs.thinning)?,
        })
    }

    /// Evaluates on a grid. Velocity is clamped at zero.
    pub fn on_grid(&self, grid: &FlowlineGrid) -> Result<SurfaceFields> {
        let fields = SurfaceFields {
            v_s_at_obs: interp_any(&self.velocity, grid.obs_x())
                .into_iter()
                .map(|v| v.max(0.0))
                .collect(),
            s_at_obs: interp_any(&self.slope, grid.obs_x()),
            a_at_quad: interp_any(&self.accumulation, grid.quad_x()),
            tau_at_quad: interp_any(&self.thinning, grid.quad_x()),
        };
        fields.check_against(grid)?;
        Ok(fields)
    }
}

/// Like `linear_interp` but a single-point series is treated as constant.
fn interp_any(series: &Series, targets: &[f64]) -> Vec<f64> {
    if series.len() == 1 {
        return vec![series.values[0]; targets.len()];
    }
    targets
        .iter()
        .map(|&t| crate::domain::interp_sorted(&series.x, &series.values, t))
        .collect()
}

/// Smooths every input, derives slope from smoothed elevation and
/// interpolates velocity/slope to `obs_x` and accumulation/thinning to `quad_x`.
pub fn prepare_surface_fields(
    obs: &ObservationSet,
    grid: &FlowlineGrid,
    specs: &SmoothingConfig,
) -> Result<SurfaceFields> {
    obs.validate()?;
    SmoothedInputs::from_observations(obs, specs)?.on_grid(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_grid;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn series(x: Vec<f64>, f: impl Fn(f64) -> f64) -> Series {
        let v = x.iter().map(|&t| f(t)).collect();
        Series::new(x, v).unwrap()
    }

    /// Penalised least squares from the explicit normal equations:
    /// (I + α Q R⁻¹ Qᵀ) f = y, assembled densely.
    fn dense_oracle(x: &[f64], y: &[f64], alpha: f64) -> Vec<f64> {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut q = DMatrix::zeros(n, n - 2);
        let mut r = DMatrix::zeros(n - 2, n - 2);
        for j in 0..n - 2 {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < n - 2 {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let k = &q * r.try_inverse().unwrap() * q.transpose();
        let lhs = DMatrix::identity(n, n) + k * alpha;
        let f = lhs.lu().solve(&DVector::from_column_slice(y)).unwrap();
        f.iter().copied().collect()
    }

    fn noisy_sine(seed: u64) -> (Series, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 99.0 * 2.0 * std::f64::consts::PI).collect();
        let truth: Vec<f64> = x.iter().map(|t| t.sin()).collect();
        let y = truth.iter().map(|t| t + noise.sample(&mut rng)).collect();
        (Series::new(x, y).unwrap(), truth)
    }

    #[test]
    fn zero_penalty_interpolates() {
        let s = series((0..30).map(|i| i as f64 * 1.7).collect(), |t| (t * 0.3).sin() * 100.0 + t);
        let out = smooth_series(&s, &SmootherSpec::interpolating()).unwrap();
        for (a, b) in out.values.iter().zip(&s.values) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constants_preserved() {
        let s = series((0..15).map(|i| (i * i) as f64).collect(), |_| 4.25);
        for spec in [
            SmootherSpec::default(),
            SmootherSpec::Spline { lambda: Penalty::Fixed(1e3) },
            SmootherSpec::MovingAverage { window: 5 },
        ] {
            let out = smooth_series(&s, &spec).unwrap();
            assert!(out.values.iter().all(|v| (v - 4.25).abs() < 1e-9), "{spec:?}");
        }
    }

    #[test]
    fn gcv_denoises_sine_and_matches_dense_oracle() {
        let (raw, truth) = noisy_sine(11);
        let fit = smoothing_spline(&raw, Penalty::Gcv).unwrap();
        let resid_sd = (fit
            .fitted
            .iter()
            .zip(&truth)
            .map(|(f, t)| (f - t).powi(2))
            .sum::<f64>()
            / truth.len() as f64)
            .sqrt();
        assert!(resid_sd < 0.1, "residual sd {resid_sd}");
        assert!(fit.edf > 3.0 && fit.edf < 30.0, "edf {}", fit.edf);

        let oracle = dense_oracle(&raw.x, &raw.values, fit.alpha);
        for (a, b) in fit.fitted.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn edf_matches_dense_hat_trace() {
        let (raw, _) = noisy_sine(3);
        let alpha = 0.05;
        let fit = smoothing_spline(&raw, Penalty::Fixed(alpha)).unwrap();
        // column-by-column hat matrix from the dense oracle
        let n = raw.len();
        let mut trace = 0.0;
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            trace += dense_oracle(&raw.x, &e, alpha)[i];
        }
        assert!((fit.edf - trace).abs() < 1e-7, "{} vs {trace}", fit.edf);
    }

    #[test]
    fn spline_needs_four_points() {
        let s = series(vec![0.0, 1.0, 2.0], |t| t);
        assert!(smooth_series(&s, &SmootherSpec::default()).is_err());
        assert!(smooth_series(&s, &SmootherSpec::MovingAverage { window: 4 }).is_err());
        assert!(smooth_series(&s, &SmootherSpec::Spline { lambda: Penalty::Fixed(-1.0) }).is_err());
    }

    #[test]
    fn moving_average_shrinks_at_edges() {
        let s = series(vec![0.0, 1.0, 2.0, 3.0, 4.0], |t| t * t);
        let out = smooth_series(&s, &SmootherSpec::MovingAverage { window: 3 }).unwrap();
        assert_eq!(out.values, vec![0.0, 5.0 / 3.0, 14.0 / 3.0, 29.0 / 3.0, 16.0]);
    }

    #[test]
    fn slope_examples() {
        let lin = series(vec![0.0, 3.0, 7.0, 8.0], |t| 2.0 * t);
        assert!(central_difference_slope(&lin).unwrap().values.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let flat = series(vec![0.0, 3.0, 7.0], |_| 10.0);
        assert!(central_difference_slope(&flat).unwrap().values.iter().all(|&v| v == 0.0));
        let quad = series(vec![0.0, 1.0, 2.0, 3.0], |t| t * t);
        let s = central_difference_slope(&quad).unwrap().values;
        assert_eq!(&s[1..3], &[2.0, 4.0]);
        // one-sided ends
        assert_eq!(s[0], 1.0);
        assert_eq!(s[3], 5.0);
        assert!(central_difference_slope(&series(vec![0.0, 1.0], |t| t)).is_err());
    }

    fn const_obs(c: f64) -> ObservationSet {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 100.0).collect();
        let s = series(x.clone(), |_| c);
        ObservationSet {
            thickness: s.clone(),
            velocity: s.clone(),
            elevation: s.clone(),
            accumulation: s.clone(),
            thinning: s,
            width_candidates: vec![],
        }
    }

    #[test]
    fn constant_inputs_give_constant_fields() {
        let obs = const_obs(3.0);
        let grid = build_grid(1000.0, 250.0, &[100.0, 550.0, 900.0]).unwrap();
        let f = prepare_surface_fields(&obs, &grid, &SmoothingConfig::default()).unwrap();
        assert_eq!(f.v_s_at_obs.len(), 3);
        assert_eq!(f.a_at_quad.len(), grid.n_quad());
        assert!(f.v_s_at_obs.iter().all(|v| (v - 3.0).abs() < 1e-9));
        assert!(f.s_at_obs.iter().all(|v| v.abs() < 1e-12));
        assert!(f.tau_at_quad.iter().all(|v| (v - 3.0).abs() < 1e-9));
    }

    #[test]
    fn pass_through_at_target_locations() {
        let mut obs = const_obs(1.0);
        obs.velocity = series(obs.velocity.x.clone(), |t| 100.0 + t * 0.1 + (t / 90.0).sin());
        obs.accumulation = series(obs.velocity.x.clone(), |t| 0.3 + 1e-4 * t);
        let grid = build_grid(1000.0, 100.0, &[200.0, 300.0, 700.0]).unwrap();
        let f = prepare_surface_fields(&obs, &grid, &SmoothingConfig::pass_through()).unwrap();
        for (x, v) in grid.obs_x().iter().zip(&f.v_s_at_obs) {
            let want = 100.0 + x * 0.1 + (x / 90.0).sin();
            assert!((v - want).abs() < 1e-9);
        }
        for (x, a) in grid.quad_x().iter().zip(&f.a_at_quad) {
            assert!((a - (0.3 + 1e-4 * x)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn slope_invariant_under_offset(
            vals in prop::collection::vec(-100.0f64..100.0, 8..30),
            offset in -1e4f64..1e4,
        ) {
            let x: Vec<f64> = (0..vals.len()).map(|i| i as f64 * 50.0).collect();
            let e = Series::new(x.clone(), vals.clone()).unwrap();
            let e2 = Series::new(x, vals.iter().map(|v| v + offset).collect()).unwrap();
            let spec = SmootherSpec::Spline { lambda: Penalty::Fixed(1e4) };
            let s1 = central_difference_slope(&smooth_series(&e, &spec).unwrap()).unwrap();
            let s2 = central_difference_slope(&smooth_series(&e2, &spec).unwrap()).unwrap();
            for (a, b) in s1.values.iter().zip(&s2.values) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn smoothing_is_linear(
            f in prop::collection::vec(-10.0f64..10.0, 12),
            g in prop::collection::vec(-10.0f64..10.0, 12),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            log_lambda in -2.0f64..4.0,
        ) {
            let x: Vec<f64> = (0..12).map(|i| (i as f64).powf(1.2) * 10.0).collect();
            let spec = SmootherSpec::Spline { lambda: Penalty::Fixed(10f64.powf(log_lambda)) };
            let combo: Vec<f64> = f.iter().zip(&g).map(|(u, v)| a * u + b * v).collect();
            let sf = smooth_series(&Series::new(x.clone(), f).unwrap(), &spec).unwrap();
            let sg = smooth_series(&Series::new(x.clone(), g).unwrap(), &spec).unwrap();
            let sc = smooth_series(&Series::new(x, combo).unwrap(), &spec).unwrap();
            for i in 0..12 {
                prop_assert!((sc.values[i] - (a * sf.values[i] + b * sg.values[i])).abs() < 1e-8);
            }
        }
    }
}
