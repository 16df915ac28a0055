use crate::domain::FlowlineGrid;
use crate::dynamics::{solve_profile, DynamicsParams, FluxQuadrature, RootSelection, ThicknessSolver};
use crate::error::{Error, Result};
use crate::gp::{width_log_density, SpectralCovariance, WidthHyperparams, WidthModel};
use crate::smoothing::SurfaceFields;

use super::prior::PriorSpec;
use super::ParameterState;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Everything the posterior depends on besides the parameters.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    /// Grid whose `obs_x` are the training thickness locations.
    pub grid: FlowlineGrid,
    pub fields: SurfaceFields,
    pub h_obs: Vec<f64>,
    /// Width-process mean on `quad_x`.
    pub width_mean: Vec<f64>,
    /// Matérn range (fixed).
    pub phi: f64,
    pub prior: PriorSpec,
    pub solver: ThicknessSolver,
    /// Flux through the divide.
    pub c0: f64,
    pub selection: RootSelection,
}

/// Validated inputs plus the caches shared by every chain.
#[derive(Debug, Clone)]
pub struct InferenceProblem {
    inputs: ModelInputs,
    quad: FluxQuadrature,
    spectral: SpectralCovariance,
}

impl InferenceProblem {
    pub fn new(inputs: ModelInputs) -> Result<Self> {
        let g = &inputs.grid;
        inputs.fields.check_against(g)?;
        inputs.prior.validate()?;
        if inputs.h_obs.len() != g.n_obs() || g.n_obs() == 0 {
            return Err(Error::validation("thickness observations must match obs_x"));
        }
        if inputs.h_obs.iter().any(|h| !h.is_finite()) {
            return Err(Error::validation("thickness observations must be finite"));
        }
        if inputs.width_mean.len() != g.n_quad() {
            return Err(Error::validation("width mean must be given on quad_x"));
        }
        if !(inputs.c0 >= 0.0 && inputs.c0.is_finite()) {
            return Err(Error::validation("divide flux must be nonnegative"));
        }
        if let RootSelection::NearestToReference(r) = &inputs.selection {
            if r.len() != g.n_obs() {
                return Err(Error::validation("reference thickness length != number of locations"));
            }
        }
        // validates φ and the mean
        WidthModel::new(WidthHyperparams::new(1.0, inputs.phi, 0.0)?, inputs.width_mean.clone())?;
        let quad = FluxQuadrature::new(g, &inputs.fields.a_at_quad, &inputs.fields.tau_at_quad)?;
        let spectral = SpectralCovariance::new(g.quad_x(), inputs.phi)?;
        Ok(InferenceProblem {
            inputs,
            quad,
            spectral,
        })
    }

    pub fn inputs(&self) -> &ModelInputs {
        &self.inputs
    }

    pub fn n_obs(&self) -> usize {
        self.inputs.h_obs.len()
    }

    pub fn n_quad(&self) -> usize {
        self.inputs.width_mean.len()
    }

    pub(crate) fn spectral(&self) -> &SpectralCovariance {
        &self.spectral
    }

    /// Sum of squared thickness residuals; `None` when the forward model has
    /// no admissible root somewhere or the width is not positive.
    pub fn residual_sum_of_squares(&self, a: f64, h0: f64, omega_quad: &[f64]) -> Option<f64> {
        if omega_quad.iter().any(|&w| !(w > 0.0)) || !(h0 > 0.0) {
            return None;
        }
        let inp = &self.inputs;
        let params = DynamicsParams { a, h0, c0: inp.c0 };
        let flux = self.quad.flux(omega_quad, inp.c0);
        let omega_obs = self.quad.omega_at_obs(omega_quad);
        let h = solve_profile(
            &flux,
            &inp.fields.v_s_at_obs,
            &inp.fields.s_at_obs,
            &omega_obs,
            &params,
            &inp.solver,
            &inp.selection,
        );
        let mut ss = 0.0;
        for (hj, obs) in h.iter().zip(&inp.h_obs) {
            let r = (*hj)? - obs;
            ss += r * r;
        }
        Some(ss)
    }

    /// Gaussian log-likelihood from a residual sum of squares.
    pub fn log_likelihood_from_rss(&self, rss: Option<f64>, sigma2_h: f64) -> f64 {
        match rss {
            Some(ss) if sigma2_h > 0.0 => {
                let n = self.n_obs() as f64;
                -0.5 * n * (LN_2PI + sigma2_h.ln()) - 0.5 * ss / sigma2_h
            }
            _ => f64::NEG_INFINITY,
        }
    }

    /// Σ_j log N(H_obs_j | h_j, σ²_H); −∞ when infeasible.
    pub fn log_likelihood(&self, state: &ParameterState) -> f64 {
        if state.omega_quad.len() != self.n_quad() {
            return f64::NEG_INFINITY;
        }
        let rss = self.residual_sum_of_squares(state.a, state.h0, &state.omega_quad);
        self.log_likelihood_from_rss(rss, state.sigma2_h)
    }

    /// Scalar priors plus the Gaussian density of ω under the state's
    /// (σ²_ω, τ²); −∞ outside the support.
    pub fn log_prior(&self, state: &ParameterState) -> f64 {
        let p = &self.inputs.prior;
        let scalars = p.ln_scalars(state.a, state.h0, state.sigma2_h, state.sigma2_omega, state.tau2);
        if !scalars.is_finite() {
            return f64::NEG_INFINITY;
        }
        let Ok(hyper) = WidthHyperparams::new(state.sigma2_omega, self.inputs.phi, state.tau2) else {
            return f64::NEG_INFINITY;
        };
        let model = WidthModel {
            hyper,
            mean_at_quad: self.inputs.width_mean.clone(),
        };
        match width_log_density(&state.omega_quad, &model, self.inputs.grid.quad_x()) {
            Ok(w) => scalars + w,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    pub fn log_posterior(&self, state: &ParameterState) -> f64 {
        let lp = self.log_prior(state);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_likelihood(state)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::build_grid;
    use crate::dynamics::{forward_model, synthetic_velocity};

    /// Small exact synthetic problem: 6 obs over 50 km, quad spacing 5 km.
    pub(crate) fn toy_problem() -> (InferenceProblem, ParameterState) {
        let obs: Vec<f64> = (0..6).map(|k| 5_000.0 + 9_000.0 * k as f64).collect();
        let grid = build_grid(50_000.0, 5_000.0, &obs).unwrap();
        let m = grid.n_quad();
        let omega: Vec<f64> = grid.quad_x().iter().map(|x| 40_000.0 - 0.2 * x).collect();
        let h_true: Vec<f64> = obs.iter().map(|x| 1500.0 - 0.01 * x).collect();
        let slope: Vec<f64> = obs.iter().map(|_| -0.004).collect();
        let a_quad = vec![0.4; m];
        let tau_quad = vec![0.1; m];
        let a_true = 1e-18;
        let params = DynamicsParams { a: a_true, h0: 1400.0, c0: 5e9 };
        let solver = ThicknessSolver::default();
        let v = synthetic_velocity(&grid, &h_true, &slope, &a_quad, &tau_quad, &omega, &params, &solver.consts)
            .unwrap();
        let fields = SurfaceFields {
            v_s_at_obs: v,
            s_at_obs: slope,
            a_at_quad: a_quad,
            tau_at_quad: tau_quad,
        };
        let h = forward_model(&grid, &fields, &omega, &params, &RootSelection::Continuity, &solver).unwrap();
        for (a, b) in h.iter().zip(&h_true) {
            assert!((a.unwrap() - b).abs() < 1e-6);
        }
        let inputs = ModelInputs {
            grid,
            fields,
            h_obs: h_true,
            width_mean: omega.clone(),
            phi: 20_000.0,
            prior: PriorSpec::default_for(1450.0),
            solver,
            c0: 5e9,
            selection: RootSelection::Continuity,
        };
        let state = ParameterState {
            a: a_true,
            h0: 1400.0,
            sigma2_h: 2500.0,
            sigma2_omega: 1e7,
            tau2: 1e3,
            omega_quad: omega,
        };
        (InferenceProblem::new(inputs).unwrap(), state)
    }

    #[test]
    fn exact_fit_likelihood() {
        let (p, s) = toy_problem();
        let n = p.n_obs() as f64;
        let ll = p.log_likelihood(&s);
        let expect = -0.5 * n * (2.0 * std::f64::consts::PI * s.sigma2_h).ln();
        assert!((ll - expect).abs() < 1e-9, "{ll} {expect}");
    }

    #[test]
    fn likelihood_matches_density_sum() {
        let (p, mut s) = toy_problem();
        s.a = 3e-17;
        s.omega_quad.iter_mut().enumerate().for_each(|(i, w)| *w *= 1.0 + 0.01 * (i as f64).sin());
        let params = DynamicsParams { a: s.a, h0: s.h0, c0: 5e9 };
        let inp = p.inputs();
        let h = forward_model(&inp.grid, &inp.fields, &s.omega_quad, &params, &RootSelection::Continuity, &inp.solver)
            .unwrap();
        let sd = s.sigma2_h.sqrt();
        let oracle: f64 = h
            .iter()
            .zip(&inp.h_obs)
            .map(|(h, o)| {
                let z = (o - h.unwrap()) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            })
            .map(f64::ln)
            .sum();
        assert!((p.log_likelihood(&s) - oracle).abs() < 1e-10);
    }

    #[test]
    fn doubling_noise_variance() {
        let (p, mut s) = toy_problem();
        s.a = 5e-17;
        let rss = p.residual_sum_of_squares(s.a, s.h0, &s.omega_quad).unwrap();
        let l1 = p.log_likelihood(&s);
        s.sigma2_h *= 2.0;
        let l2 = p.log_likelihood(&s);
        let n = p.n_obs() as f64;
        let expect = -0.5 * n * 2f64.ln() + rss / (4.0 * s.sigma2_h / 2.0);
        assert!((l2 - l1 - expect).abs() < 1e-9);
    }

    #[test]
    fn infeasible_states() {
        let (p, mut s) = toy_problem();
        s.omega_quad[3] = -1.0;
        assert_eq!(p.log_likelihood(&s), f64::NEG_INFINITY);
        let (p, mut s) = toy_problem();
        s.a = 2e-16;
        assert_eq!(p.log_prior(&s), f64::NEG_INFINITY);
        assert_eq!(p.log_posterior(&s), f64::NEG_INFINITY);
    }

    #[test]
    fn prior_is_componentwise_sum() {
        let (p, mut s) = toy_problem();
        let pr = p.inputs().prior;
        s.sigma2_omega = pr.sigma2_omega.mode();
        s.tau2 = pr.tau2.mode();
        s.sigma2_h = 1e6 / 3.0;
        s.h0 = 1450.0;
        let model = WidthModel::new(
            WidthHyperparams::new(s.sigma2_omega, 20_000.0, s.tau2).unwrap(),
            p.inputs().width_mean.clone(),
        )
        .unwrap();
        let w = width_log_density(&s.omega_quad, &model, p.inputs().grid.quad_x()).unwrap();
        // Γ(2) = 1
        let ig = |x: f64, a: f64, b: f64| a * b.ln() - (a + 1.0) * x.ln() - b / x;
        let oracle = 16.0 * 10f64.ln()
            + (-(500f64.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln()
                - statrs::distribution::ContinuousCDF::cdf(&statrs::distribution::Normal::standard(), 1450.0 / 500.0).ln())
            + ig(s.sigma2_h, 2.0, 1e6)
            + ig(s.sigma2_omega, 2.0, 1e8)
            + ig(s.tau2, 2.0, 1e4)
            + w;
        let lp = p.log_prior(&s);
        assert!(lp.is_finite());
        assert!((lp - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{lp} {oracle}");
    }

    #[test]
    fn posterior_is_additive() {
        let (p, mut s) = toy_problem();
        s.a = 4e-17;
        let lp = p.log_prior(&s);
        let ll = p.log_likelihood(&s);
        assert_eq!(p.log_posterior(&s), lp + ll);
    }
}
