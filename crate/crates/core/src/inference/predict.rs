use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::FlowlineGrid;
use crate::dynamics::{solve_profile, DynamicsParams, FluxQuadrature, RootSelection, ThicknessSolver};
use crate::error::{Error, Result};
use crate::smoothing::SurfaceFields;

use super::PosteriorSamples;

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn summarize_scalar(values: &[f64]) -> Result<ScalarSummary> {
    if values.is_empty() {
        return Err(Error::validation("cannot summarise an empty sample"));
    }
    let s = sorted(values);
    Ok(ScalarSummary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        lo: quantile(&s, 0.025),
        hi: quantile(&s, 0.975),
    })
}

/// Pointwise thickness summaries at prediction locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessPrediction {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Interval with N(0, σ²_H) observation noise added per sample.
    pub lo_noisy: Vec<f64>,
    pub hi_noisy: Vec<f64>,
    pub n_used: usize,
    pub n_dropped: usize,
}

/// Pushes every retained state through the forward model at the
/// observation locations of `grid`. States without a root somewhere are
/// dropped; more than half dropped is an error. Noise draws use `seed`.
pub fn predict_thickness(
    samples: &PosteriorSamples,
    grid: &FlowlineGrid,
    fields: &SurfaceFields,
    sel: &RootSelection,
    solver: &ThicknessSolver,
    c0: f64,
    seed: u64,
) -> Result<ThicknessPrediction> {
    if samples.is_empty() {
        return Err(Error::validation("no posterior samples to predict from"));
    }
    fields.check_against(grid)?;
    let quad = FluxQuadrature::new(grid, &fields.a_at_quad, &fields.tau_at_quad)?;
    let n = grid.n_obs();
    let mut profiles: Vec<(Vec<f64>, f64)> = Vec::with_capacity(samples.n_states());
    let mut dropped = 0usize;
    for s in samples.states() {
        if s.omega_quad.len() != grid.n_quad() {
            return Err(Error::validation("sampled width does not match the prediction quad grid"));
        }
        if s.omega_quad.iter().any(|&w| !(w > 0.0)) {
            dropped += 1;
            continue;
        }
        let params = DynamicsParams { a: s.a, h0: s.h0, c0 };
        let flux = quad.flux(&s.omega_quad, c0);
        let omega_obs = quad.omega_at_obs(&s.omega_quad);
        let h = solve_profile(&flux, &fields.v_s_at_obs, &fields.s_at_obs, &omega_obs, &params, solver, sel);
        match h.into_iter().collect::<Option<Vec<f64>>>() {
            Some(h) => profiles.push((h, s.sigma2_h)),
            None => dropped += 1,
        }
    }
    if 2 * dropped > samples.n_states() {
        return Err(Error::numerical(format!(
            "{dropped} of {} posterior states have no solution at the prediction locations",
            samples.n_states()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<Vec<f64>> = profiles
        .iter()
        .map(|(h, s2)| {
            let d = Normal::new(0.0, s2.sqrt()).expect("positive variance");
            h.iter().map(|v| v + d.sample(&mut rng)).collect()
        })
        .collect();
    let mut out = ThicknessPrediction {
        x: grid.obs_x().to_vec(),
        mean: Vec::with_capacity(n),
        lo: Vec::with_capacity(n),
        hi: Vec::with_capacity(n),
        lo_noisy: Vec::with_capacity(n),
        hi_noisy: Vec::with_capacity(n),
        n_used: profiles.len(),
        n_dropped: dropped,
    };
    for j in 0..n {
        let col: Vec<f64> = profiles.iter().map(|(h, _)| h[j]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let s = sorted(&col);
        let sn = sorted(&noisy.iter().map(|h| h[j]).collect::<Vec<_>>());
        out.mean.push(mean);
        out.lo.push(quantile(&s, 0.025));
        out.hi.push(quantile(&s, 0.975));
        out.lo_noisy.push(quantile(&sn, 0.025));
        out.hi_noisy.push(quantile(&sn, 0.975));
    }
    Ok(out)
}

/// Pointwise posterior summaries of the width on `quad_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthBands {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

pub fn width_bands(samples: &PosteriorSamples) -> Result<WidthBands> {
    let states: Vec<_> = samples.states().collect();
    let Some(first) = states.first() else {
        return Err(Error::validation("no posterior samples"));
    };
    let m = first.omega_quad.len();
    let mut b = WidthBands {
        mean: Vec::with_capacity(m),
        lo: Vec::with_capacity(m),
        hi: Vec::with_capacity(m),
    };
    for i in 0..m {
        let col: Vec<f64> = states.iter().map(|s| s.omega_quad[i]).collect();
        let s = sorted(&col);
        b.mean.push(col.iter().sum::<f64>() / col.len() as f64);
        b.lo.push(quantile(&s, 0.025));
        b.hi.push(quantile(&s, 0.975));
    }
    Ok(b)
}
