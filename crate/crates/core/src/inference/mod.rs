//! Hierarchical Bayesian inference for the flowline model.
//!
//! Unknowns are the rheologic coefficient `A`, the divide thickness `h0`,
//! the thickness-noise variance σ²_H, the width-process variances
//! (σ²_ω, τ²) and the width vector ω on the quadrature grid. Thickness
//! observations are independent normals around the forward-model output.
//!
//! The sampler is block Metropolis–Hastings. Scalars move on unconstrained
//! scales (logit for `A`, log for the rest) and ω is sampled through its
//! whitened coordinates `z`, with `ω = μ + Q diag(s) z`, so that the prior on
//! ω is the standard normal on `z`.

mod diagnostics;
mod model;
mod predict;
mod prior;
mod sampler;

pub use diagnostics::{chain_diagnostics, effective_sample_size, split_rhat, ParameterDiagnostics};
pub use model::{InferenceProblem, ModelInputs};
pub use predict::{
    predict_thickness, quantile, summarize_scalar, width_bands, ScalarSummary, ThicknessPrediction,
    WidthBands,
};
pub use prior::{InverseGamma, NoisePrior, PositiveNormal, PriorSpec, UniformPrior};
pub use sampler::{
    derive_seed, initial_state, metropolis_accept, run_chain, run_chains, Block, ChainConfig, LikelihoodMode,
    ProposalScales, Sampler,
};

use serde::{Deserialize, Serialize};

/// One point in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub a: f64,
    pub h0: f64,
    pub sigma2_h: f64,
    pub sigma2_omega: f64,
    pub tau2: f64,
    pub omega_quad: Vec<f64>,
}

impl ParameterState {
    /// Scalar parameter names in storage order.
    pub const SCALAR_NAMES: [&'static str; 5] = ["A", "h0", "sigma2_H", "sigma2_omega", "tau2"];

    pub fn scalars(&self) -> [f64; 5] {
        [self.a, self.h0, self.sigma2_h, self.sigma2_omega, self.tau2]
    }
}

/// Post burn-in acceptance rate of each block; `None` for blocks not run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub a: Option<f64>,
    pub h0: Option<f64>,
    pub sigma2_h: Option<f64>,
    pub variances: Option<f64>,
    pub omega: Option<f64>,
}

impl AcceptanceRates {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        [
            ("A", self.a),
            ("h0", self.h0),
            ("sigma2_H", self.sigma2_h),
            ("variances", self.variances),
            ("omega", self.omega),
        ]
        .into_iter()
        .filter_map(|(n, r)| r.map(|r| (n, r)))
    }
}

/// Retained states of one chain.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChainSamples {
    pub states: Vec<ParameterState>,
    pub acceptance: AcceptanceRates,
}

/// Retained states of every chain.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub chains: Vec<ChainSamples>,
}

impl PosteriorSamples {
    pub fn n_states(&self) -> usize {
        self.chains.iter().map(|c| c.states.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_states() == 0
    }

    pub fn states(&self) -> impl Iterator<Item = &ParameterState> + '_ {
        self.chains.iter().flat_map(|c| c.states.iter())
    }

    /// One scalar across all chains, chain-major.
    pub fn scalar(&self, index: usize) -> Vec<f64> {
        self.states().map(|s| s.scalars()[index]).collect()
    }

    /// One scalar, one vector per chain.
    pub fn scalar_by_chain(&self, index: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.states.iter().map(|s| s.scalars()[index]).collect())
            .collect()
    }
}
