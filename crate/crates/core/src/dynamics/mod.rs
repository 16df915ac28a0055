//! Deterministic flowline physics.
//!
//! Mass conservation along the flowline,
//! `d/dx (v̄ h ω) = (a − τ) ω`, is integrated from the divide with a
//! midpoint-average quadrature on the grid `quad_x`, giving the flux `F_j`
//! at each location of interest. The depth-averaged velocity is the
//! surface velocity with a shallow-ice deformation correction,
//! `v̄ = v_s − (A/20)(ρ g |s|)³ h⁴`, so `F_j = v̄ h ω` is a quintic in `h`.

mod quintic;

pub use quintic::FluxQuintic;

use serde::{Deserialize, Serialize};

use crate::domain::{interp_sorted, FlowlineGrid, PhysicalConstants, Series};
use crate::error::{Error, Result};
use crate::smoothing::SurfaceFields;

/// Default search ceiling for thickness roots (m).
pub const DEFAULT_H_MAX: f64 = 10_000.0;

/// Scalar parameters of the forward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Rheologic coefficient (Pa⁻³/yr).
    pub a: f64,
    /// Thickness at the divide (m); reference for the first root choice.
    pub h0: f64,
    /// Flux through the divide (m³/yr).
    pub c0: f64,
}

impl DynamicsParams {
    pub fn new(a: f64, h0: f64, c0: f64) -> Result<Self> {
        let p = DynamicsParams { a, h0, c0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.h0 > 0.0 && self.c0 >= 0.0)
            || !(self.a.is_finite() && self.h0.is_finite() && self.c0.is_finite())
        {
            return Err(Error::validation(format!(
                "invalid dynamics parameters (A={}, h0={}, C0={})",
                self.a, self.h0, self.c0
            )));
        }
        Ok(())
    }
}

/// Flux `F_j` at each observation location.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxProfile {
    pub flux_at_obs: Vec<f64>,
}

/// How one root is chosen among several.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootPick {
    Nearest(f64),
    Largest,
}

/// Root choice along a whole profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootSelection {
    /// Closest to a per-location reference thickness (e.g. observations).
    NearestToReference(Vec<f64>),
    MaxRealPositive,
    /// Closest to the previously solved thickness, starting from `h0`.
    Continuity,
}

/// Physical constants plus the root-search ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSolver {
    pub consts: PhysicalConstants,
    pub h_max: f64,
}

impl Default for ThicknessSolver {
    fn default() -> Self {
        ThicknessSolver {
            consts: PhysicalConstants::default(),
            h_max: DEFAULT_H_MAX,
        }
    }
}

impl ThicknessSolver {
    pub fn new(consts: PhysicalConstants, h_max: f64) -> Result<Self> {
        if !(h_max > 0.0 && h_max.is_finite()) {
            return Err(Error::validation("h_max must be positive"));
        }
        Ok(ThicknessSolver { consts, h_max })
    }

    /// `(A/20)(ρ g |s|)³`
    #[inline]
    pub fn deformation(&self, a: f64, slope: f64) -> f64 {
        let t = self.consts.rho_g() * slope.abs();
        a / 20.0 * t * t * t
    }

    /// Every admissible thickness for one location, ascending.
    pub fn all_roots(&self, flux: f64, v_s: f64, slope: f64, omega: f64, a: f64) -> Vec<f64> {
        FluxQuintic::new(flux, v_s, self.deformation(a, slope), omega).roots(self.h_max)
    }

    /// Solves the flux quintic; `None` when no root lies in `[0, h_max]`.
    pub fn solve(
        &self,
        flux: f64,
        v_s: f64,
        slope: f64,
        omega: f64,
        a: f64,
        pick: RootPick,
    ) -> Option<f64> {
        let roots = self.all_roots(flux, v_s, slope, omega, a);
        match pick {
            RootPick::Largest => roots.last().copied(),
            RootPick::Nearest(r) => roots
                .into_iter()
                .min_by(|x, y| (x - r).abs().total_cmp(&(y - r).abs())),
        }
    }
}

/// Depth-averaged velocity from surface velocity.
pub fn sia_correction(v_s: f64, slope: f64, h: f64, a: f64, consts: &PhysicalConstants) -> f64 {
    let t = consts.rho_g() * slope.abs();
    v_s - a / 20.0 * t * t * t * h.powi(4)
}

/// Scalar thickness solve.
pub fn solve_thickness(
    flux: f64,
    v_s: f64,
    slope: f64,
    omega: f64,
    a: f64,
    solver: &ThicknessSolver,
    pick: RootPick,
) -> Result<Option<f64>> {
    if !(omega > 0.0) {
        return Err(Error::validation(format!("flow width must be positive, got {omega}")));
    }
    Ok(solver.solve(flux, v_s, slope, omega, a, pick))
}

/// Precomputed quadrature layout for one grid: per-interval net rate and
/// length, and where each observation falls. Reused for every width vector.
#[derive(Debug, Clone)]
pub struct FluxQuadrature {
    /// (a − τ) averaged over each interval.
    net: Vec<f64>,
    delta: Vec<f64>,
    /// For each obs: interval index and distance past its left node.
    slots: Vec<(usize, f64)>,
    /// For each obs: interpolation weight of the right node in its interval.
    weights: Vec<f64>,
}

impl FluxQuadrature {
    pub fn new(grid: &FlowlineGrid, a_quad: &[f64], tau_quad: &[f64]) -> Result<Self> {
        let m = grid.n_quad();
        if a_quad.len() != m || tau_quad.len() != m {
            return Err(Error::validation("accumulation/thinning must be given on quad_x"));
        }
        let q = grid.quad_x();
        let net = (0..m - 1)
            .map(|i| 0.5 * (a_quad[i] + a_quad[i + 1]) - 0.5 * (tau_quad[i] + tau_quad[i + 1]))
            .collect();
        let delta = q.windows(2).map(|w| w[1] - w[0]).collect();
        let mut slots = Vec::with_capacity(grid.n_obs());
        let mut weights = Vec::with_capacity(grid.n_obs());
        for &x in grid.obs_x() {
            let i = grid.interval_of(x).ok_or_else(|| {
                Error::validation(format!("location {x} outside quadrature coverage"))
            })?;
            let past = x - q[i];
            slots.push((i, past));
            weights.push(if i + 1 < m { past / (q[i + 1] - q[i]) } else { 0.0 });
        }
        Ok(FluxQuadrature {
            net,
            delta,
            slots,
            weights,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.slots.len()
    }

    /// `F_j = C0 + Σ_{i<I} (a−τ)_{i+½} ω_{i+½} Δ_i + (a−τ)_{I+½} ω_{I+½} (x_j − x_I)`.
    pub fn flux(&self, omega_quad: &[f64], c0: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.slots.len());
        self.flux_into(omega_quad, c0, &mut out);
        out
    }

    pub fn flux_into(&self, omega_quad: &[f64], c0: f64, out: &mut Vec<f64>) {
        out.clear();
        // observations are ascending, so one sweep suffices
        let mut acc = c0;
        let mut done = 0usize;
        for &(i, past) in &self.slots {
            while done < i {
                acc += self.net[done] * 0.5 * (omega_quad[done] + omega_quad[done + 1]) * self.delta[done];
                done += 1;
            }
            let partial = if i < self.net.len() && past > 0.0 {
                self.net[i] * 0.5 * (omega_quad[i] + omega_quad[i + 1]) * past
            } else {
                0.0
            };
            out.push(acc + partial);
        }
    }

    /// Width at each observation by linear interpolation between quad nodes.
    pub fn omega_at_obs(&self, omega_quad: &[f64]) -> Vec<f64> {
        self.slots
            .iter()
            .zip(&self.weights)
            .map(|(&(i, _), &w)| {
                if w == 0.0 {
                    omega_quad[i]
                } else {
                    (1.0 - w) * omega_quad[i] + w * omega_quad[i + 1]
                }
            })
            .collect()
    }
}

/// Cumulative flux from the divide to every observation location.
pub fn cumulative_flux(
    grid: &FlowlineGrid,
    a_quad: &[f64],
    tau_quad: &[f64],
    omega_quad: &[f64],
    params: &DynamicsParams,
) -> Result<FluxProfile> {
    if omega_quad.len() != grid.n_quad() {
        return Err(Error::validation("width must be given on quad_x"));
    }
    let quad = FluxQuadrature::new(grid, a_quad, tau_quad)?;
    Ok(FluxProfile {
        flux_at_obs: quad.flux(omega_quad, params.c0),
    })
}

/// Solves thickness left to right along prepared fluxes.
pub(crate) fn solve_profile(
    flux: &[f64],
    v_s: &[f64],
    slope: &[f64],
    omega_obs: &[f64],
    params: &DynamicsParams,
    solver: &ThicknessSolver,
    sel: &RootSelection,
) -> Vec<Option<f64>> {
    let mut prev = params.h0;
    (0..flux.len())
        .map(|j| {
            let pick = match sel {
                RootSelection::MaxRealPositive => RootPick::Largest,
                RootSelection::NearestToReference(r) => RootPick::Nearest(r[j]),
                RootSelection::Continuity => RootPick::Nearest(prev),
            };
            let h = solver.solve(flux[j], v_s[j], slope[j], omega_obs[j], params.a, pick);
            if let Some(h) = h {
                prev = h;
            }
            h
        })
        .collect()
}

/// The deterministic thickness model: flux by quadrature, then a root of the
/// flux quintic at each observation location. `None` marks locations
/// without an admissible root.
pub fn forward_model(
    grid: &FlowlineGrid,
    fields: &SurfaceFields,
    omega_quad: &[f64],
    params: &DynamicsParams,
    sel: &RootSelection,
    solver: &ThicknessSolver,
) -> Result<Vec<Option<f64>>> {
    fields.check_against(grid)?;
    if omega_quad.len() != grid.n_quad() {
        return Err(Error::validation("width must be given on quad_x"));
    }
    if let RootSelection::NearestToReference(r) = sel {
        if r.len() != grid.n_obs() {
            return Err(Error::validation("reference thickness length != number of locations"));
        }
    }
    if omega_quad.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::validation("flow width must be positive on quad_x"));
    }
    let quad = FluxQuadrature::new(grid, &fields.a_at_quad, &fields.tau_at_quad)?;
    let flux = quad.flux(omega_quad, params.c0);
    let omega_obs = quad.omega_at_obs(omega_quad);
    Ok(solve_profile(
        &flux,
        &fields.v_s_at_obs,
        &fields.s_at_obs,
        &omega_obs,
        params,
        solver,
        sel,
    ))
}

/// Surface velocity that makes `h_true` an exact solution of the model:
/// `v_s = F/(h ω) + (A/20)(ρ g |s|)³ h⁴`.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_velocity(
    grid: &FlowlineGrid,
    h_true: &[f64],
    slope_obs: &[f64],
    a_quad: &[f64],
    tau_quad: &[f64],
    omega_quad: &[f64],
    params: &DynamicsParams,
    consts: &PhysicalConstants,
) -> Result<Vec<f64>> {
    if h_true.len() != grid.n_obs() || slope_obs.len() != grid.n_obs() {
        return Err(Error::validation("thickness/slope must be given on obs_x"));
    }
    if h_true.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::validation("true thickness must be positive"));
    }
    let quad = FluxQuadrature::new(grid, a_quad, tau_quad)?;
    let flux = quad.flux(omega_quad, params.c0);
    let omega_obs = quad.omega_at_obs(omega_quad);
    let solver = ThicknessSolver {
        consts: *consts,
        h_max: f64::INFINITY,
    };
    h_true
        .iter()
        .zip(slope_obs)
        .zip(flux.iter().zip(&omega_obs))
        .zip(grid.obs_x())
        .map(|(((&h, &s), (&f, &w)), &x)| {
            let hw = h * w;
            if hw == 0.0 || !hw.is_finite() {
                return Err(Error::validation(format!("h·ω vanishes at x = {x}")));
            }
            let v = f / hw + solver.deformation(params.a, s) * h.powi(4);
            if v < 0.0 {
                return Err(Error::validation(format!(
                    "configuration implies negative surface velocity {v} at x = {x}"
                )));
            }
            Ok(v)
        })
        .collect()
}

/// One naive profile for a fixed A.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaiveProfile {
    pub a: f64,
    pub thickness: Vec<Option<f64>>,
    /// Locations without a real root.
    pub gaps: Vec<f64>,
}

/// Naive inversion results for one plug-in width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaiveInversion {
    pub width_name: String,
    pub obs_x: Vec<f64>,
    pub profiles: Vec<NaiveProfile>,
}

/// Deterministic inversion with a plug-in width, sweeping A and picking the
/// root nearest to the observed thickness at every location.
pub fn naive_inversion(
    grid: &FlowlineGrid,
    fields: &SurfaceFields,
    width: (&str, &Series),
    a_values: &[f64],
    h_obs: &[f64],
    params: &DynamicsParams,
    solver: &ThicknessSolver,
) -> Result<NaiveInversion> {
    if a_values.is_empty() {
        return Err(Error::validation("naive inversion needs at least one A value"));
    }
    let (name, series) = width;
    let omega_quad: Vec<f64> = if series.len() == 1 {
        vec![series.values[0]; grid.n_quad()]
    } else {
        grid.quad_x()
            .iter()
            .map(|&x| interp_sorted(&series.x, &series.values, x))
            .collect()
    };
    let sel = RootSelection::NearestToReference(h_obs.to_vec());
    let profiles = a_values
        .iter()
        .map(|&a| {
            let p = DynamicsParams { a, ..*params };
            p.validate()?;
            let thickness = forward_model(grid, fields, &omega_quad, &p, &sel, solver)?;
            let gaps = grid
                .obs_x()
                .iter()
                .zip(&thickness)
                .filter(|(_, h)| h.is_none())
                .map(|(&x, _)| x)
                .collect();
            Ok(NaiveProfile { a, thickness, gaps })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NaiveInversion {
        width_name: name.to_string(),
        obs_x: grid.obs_x().to_vec(),
        profiles,
    })
}
