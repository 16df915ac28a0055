//! Shared domain types: grids, physical constants, observation series and
//! piecewise-linear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sampled 1-D series: values at ascending along-flow locations (m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    /// Builds a series, checking that locations are finite and strictly ascending.
    pub fn new(x: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if x.len() != values.len() {
            return Err(Error::validation(format!(
                "series has {} locations but {} values",
                x.len(),
                values.len()
            )));
        }
        if x.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("series contains non-finite entries"));
        }
        if let Some(w) = x.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::validation(format!(
                "series locations must be strictly ascending ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Series { x, values })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let (x, values) = pairs.iter().copied().unzip();
        Series::new(x, values)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.values.iter().copied())
    }

    /// Same locations with new values.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Series {
        debug_assert_eq!(values.len(), self.x.len());
        Series {
            x: self.x.clone(),
            values,
        }
    }

    /// Evaluates the series at `targets` by [`linear_interp`].
    pub fn interp(&self, targets: &[f64]) -> Result<Vec<f64>> {
        linear_interp(self, targets)
    }

    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Ice density and gravitational acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Ice density (kg/m³).
    pub rho: f64,
    /// Gravitational acceleration (m/s²).
    pub g: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants { rho: 917.0, g: 9.81 }
    }
}

impl PhysicalConstants {
    pub fn new(rho: f64, g: f64) -> Result<Self> {
        if !(rho > 0.0 && g > 0.0 && rho.is_finite() && g.is_finite()) {
            return Err(Error::validation(format!(
                "physical constants must be positive (rho={rho}, g={g})"
            )));
        }
        Ok(PhysicalConstants { rho, g })
    }

    /// ρ·g, the driving-stress prefactor.
    pub fn rho_g(&self) -> f64 {
        self.rho * self.g
    }
}

/// Observation locations and the quadrature grid used to integrate the
/// mass balance from the divide.
///
/// `quad_x[0]` is the divide and every observation location falls inside
/// some quadrature interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowlineGrid {
    obs_x: Vec<f64>,
    quad_x: Vec<f64>,
    domain_length: f64,
}

impl FlowlineGrid {
    pub fn new(obs_x: Vec<f64>, quad_x: Vec<f64>, domain_length: f64) -> Result<Self> {
        if !(domain_length > 0.0 && domain_length.is_finite()) {
            return Err(Error::validation("domain length must be positive"));
        }
        if quad_x.len() < 2 {
            return Err(Error::validation("quadrature grid needs at least 2 points"));
        }
        check_ascending("quadrature grid", &quad_x)?;
        check_ascending("observation locations", &obs_x)?;
        if quad_x[0] < 0.0 {
            return Err(Error::validation("quadrature grid must start at the divide (>= 0)"));
        }
        if let Some(&x) = obs_x.iter().find(|&&x| x < 0.0 || x > domain_length) {
            return Err(Error::validation(format!(
                "observation location {x} outside [0, {domain_length}]"
            )));
        }
        let last = *quad_x.last().unwrap();
        if let Some(&x) = obs_x.iter().find(|&&x| x < quad_x[0] || x > last) {
            return Err(Error::validation(format!(
                "observation location {x} not covered by quadrature grid [{}, {last}]",
                quad_x[0]
            )));
        }
        Ok(FlowlineGrid {
            obs_x,
            quad_x,
            domain_length,
        })
    }

    pub fn obs_x(&self) -> &[f64] {
        &self.obs_x
    }

    pub fn quad_x(&self) -> &[f64] {
        &self.quad_x
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    pub fn n_obs(&self) -> usize {
        self.obs_x.len()
    }

    pub fn n_quad(&self) -> usize {
        self.quad_x.len()
    }

    /// Divide position x₀.
    pub fn divide(&self) -> f64 {
        self.quad_x[0]
    }

    /// A grid sharing this quadrature grid but evaluated at other locations.
    pub fn with_obs(&self, obs_x: Vec<f64>) -> Result<FlowlineGrid> {
        FlowlineGrid::new(obs_x, self.quad_x.clone(), self.domain_length)
    }

    /// Index `I` of the quadrature interval `[quad_x[I], quad_x[I+1]]` holding `x`.
    /// A point on the last quadrature node maps to the last node itself.
    pub fn interval_of(&self, x: f64) -> Option<usize> {
        let q = &self.quad_x;
        if x < q[0] || x > q[q.len() - 1] {
            return None;
        }
        // partition_point gives the first node strictly greater than x
        let upper = q.partition_point(|&v| v <= x);
        Some(upper.saturating_sub(1).min(q.len() - 1))
    }
}

fn check_ascending(what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!("{what} contain non-finite values")));
    }
    if let Some(w) = xs.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::validation(format!(
            "{what} must be strictly ascending ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Builds a uniform quadrature grid starting at the divide (x = 0) that covers
/// both the domain and every observation location.
pub fn build_grid(
    domain_length: f64,
    quad_spacing: f64,
    obs_locations: &[f64],
) -> Result<FlowlineGrid> {
    if !(quad_spacing > 0.0 && quad_spacing.is_finite()) {
        return Err(Error::validation("quadrature spacing must be positive"));
    }
    if !(domain_length > 0.0 && domain_length.is_finite()) {
        return Err(Error::validation("domain length must be positive"));
    }
    check_ascending("observation locations", obs_locations)?;
    if let Some(&x) = obs_locations
        .iter()
        .find(|&&x| x < 0.0 || x > domain_length)
    {
        return Err(Error::validation(format!(
            "observation location {x} outside [0, {domain_length}]"
        )));
    }
    let reach = obs_locations
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(domain_length);
    // guard against 272.8/0.1-style rounding producing one spurious extra node
    let steps = ((reach / quad_spacing) - 1e-9).ceil().max(1.0) as usize;
    let quad_x = (0..=steps).map(|k| k as f64 * quad_spacing).collect();
    FlowlineGrid::new(obs_locations.to_vec(), quad_x, domain_length)
}

/// Piecewise-linear interpolation with endpoint clamping outside the series range.
pub fn linear_interp(series: &Series, targets: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::validation(
            "linear interpolation needs at least 2 points",
        ));
    }
    Ok(targets
        .iter()
        .map(|&t| interp_sorted(&series.x, &series.values, t))
        .collect())
}

/// Interpolates on ascending knots `xs`; clamps outside `[xs[0], xs[last]]`.
pub(crate) fn interp_sorted(xs: &[f64], ys: &[f64], t: f64) -> f64 {
    let n = xs.len();
    if t <= xs[0] {
        return ys[0];
    }
    if t >= xs[n - 1] {
        return ys[n - 1];
    }
    let hi = xs.partition_point(|&v| v < t);
    if xs[hi] == t {
        return ys[hi];
    }
    let lo = hi - 1;
    let w = (t - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + w * (ys[hi] - ys[lo])
}

/// Surface observations along the flowline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    /// Ice thickness (m).
    pub thickness: Series,
    /// Surface velocity (m/yr).
    pub velocity: Series,
    /// Surface elevation (m).
    pub elevation: Series,
    /// Net accumulation (m ice eq./yr).
    pub accumulation: Series,
    /// Thinning rate (m ice eq./yr).
    pub thinning: Series,
    /// Named plug-in flow-width series (m), e.g. traced from streamline pairs.
    pub width_candidates: Vec<(String, Series)>,
}

impl ObservationSet {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("thickness", &self.thickness),
            ("velocity", &self.velocity),
            ("elevation", &self.elevation),
            ("accumulation", &self.accumulation),
            ("thinning", &self.thinning),
        ];
        for (name, s) in named
            .into_iter()
            .chain(self.width_candidates.iter().map(|(n, s)| (n.as_str(), s)))
        {
            if s.is_empty() {
                return Err(Error::validation(format!("{name} series is empty")));
            }
            // re-run the constructor checks in case the struct was built by hand
            Series::new(s.x.clone(), s.values.clone())
                .map_err(|e| Error::validation(format!("{name}: {e}")))?;
        }
        if let Some(v) = self.thickness.values.iter().find(|&&v| v <= 0.0) {
            return Err(Error::validation(format!(
                "thickness observations must be positive (found {v})"
            )));
        }
        Ok(())
    }

    pub fn width(&self, name: &str) -> Option<&Series> {
        self.width_candidates
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    /// The candidate with the smallest average width.
    pub fn narrowest_width(&self) -> Option<(&str, &Series)> {
        self.width_candidates
            .iter()
            .min_by(|a, b| a.1.mean_value().total_cmp(&b.1.mean_value()))
            .map(|(n, s)| (n.as_str(), s))
    }

    /// Resolves `"narrowest"` or a candidate name.
    pub fn resolve_width(&self, name: &str) -> Result<(&str, &Series)> {
        if name == "narrowest" {
            return self
                .narrowest_width()
                .ok_or_else(|| Error::validation("no width candidates supplied"));
        }
        self.width_candidates
            .iter()
            .find(|(n, _)| n == name)
            .map(|(n, s)| (n.as_str(), s))
            .ok_or_else(|| Error::validation(format!("unknown width candidate `{name}`")))
    }
}
