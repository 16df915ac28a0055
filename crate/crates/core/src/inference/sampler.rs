use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::InferenceProblem;
use super::{AcceptanceRates, ChainSamples, ParameterState, PosteriorSamples};

/// Parameter blocks, updated in this order each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Block {
    A,
    H0,
    Sigma2H,
    /// (σ²_ω, τ²) jointly.
    Variances,
    Omega,
}

impl Block {
    pub const ALL: [Block; 5] = [Block::A, Block::H0, Block::Sigma2H, Block::Variances, Block::Omega];

    fn index(self) -> usize {
        self as usize
    }

    fn target_rate(self) -> f64 {
        match self {
            Block::Variances | Block::Omega => 0.234,
            _ => 0.44,
        }
    }
}

/// Random-walk step sizes on the transformed scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalScales {
    /// logit(A) step.
    pub a: f64,
    /// log h0 step.
    pub h0: f64,
    /// log σ²_H step.
    pub sigma2_h: f64,
    /// log σ²_ω and log τ² step.
    pub variances: f64,
    /// Whitened ω step.
    pub omega: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        ProposalScales {
            a: 1.0,
            h0: 0.02,
            sigma2_h: 0.5,
            variances: 0.5,
            omega: 0.05,
        }
    }
}

impl ProposalScales {
    fn to_array(self) -> [f64; 5] {
        [self.a, self.h0, self.sigma2_h, self.variances, self.omega]
    }

    fn from_array(a: [f64; 5]) -> Self {
        ProposalScales {
            a: a[0],
            h0: a[1],
            sigma2_h: a[2],
            variances: a[3],
            omega: a[4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMode {
    #[default]
    Active,
    /// Likelihood held constant; the chain targets the prior.
    Flat,
}

/// Chain settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub scales: ProposalScales,
    /// Keep every `thin`-th post burn-in state; `None` keeps about
    /// `retained_per_chain`.
    pub thin: Option<usize>,
    pub retained_per_chain: usize,
    pub burn_in_fraction: f64,
    /// Tune step sizes during burn-in.
    pub adapt: bool,
    pub likelihood: LikelihoodMode,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iterations: 20_000,
            n_chains: 3,
            seed: 0,
            scales: ProposalScales::default(),
            thin: None,
            retained_per_chain: 1000,
            burn_in_fraction: 0.5,
            adapt: true,
            likelihood: LikelihoodMode::Active,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::validation("n_chains must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::validation("burn-in fraction must lie in [0, 1)"));
        }
        if self.thin == Some(0) || self.retained_per_chain == 0 {
            return Err(Error::validation("thinning must be positive"));
        }
        let s = self.scales.to_array();
        if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::validation("proposal scales must be positive"));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        (self.n_iterations as f64 * self.burn_in_fraction).floor() as usize
    }

    pub fn thinning(&self) -> usize {
        self.thin
            .unwrap_or_else(|| (self.n_iterations - self.burn_in()).div_ceil(self.retained_per_chain).max(1))
    }
}

/// Accept a move with log acceptance ratio `log_ratio`.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Chain position in sampling coordinates plus cached derived quantities.
#[derive(Debug, Clone)]
struct Position {
    /// logit of A rescaled to [0, 1].
    u: f64,
    a: f64,
    h0: f64,
    sigma2_h: f64,
    sigma2_omega: f64,
    tau2: f64,
    z: Vec<f64>,
    omega: Vec<f64>,
    rss: Option<f64>,
}

/// One Metropolis–Hastings chain.
pub struct Sampler<'p> {
    problem: &'p InferenceProblem,
    mode: LikelihoodMode,
    pos: Position,
    log_target: f64,
    steps: [f64; 5],
}

impl<'p> Sampler<'p> {
    pub fn new(problem: &'p InferenceProblem, init: &ParameterState, mode: LikelihoodMode, scales: ProposalScales) -> Result<Self> {
        let prior = &problem.inputs().prior;
        let (lo, hi) = (prior.a.lo, prior.a.hi);
        if !(init.a > lo && init.a < hi) {
            return Err(Error::validation("initial A must lie inside the prior range"));
        }
        if !(init.h0 > 0.0 && init.sigma2_h > 0.0 && init.sigma2_omega > 0.0 && init.tau2 > 0.0) {
            return Err(Error::validation("initial h0 and variances must be positive"));
        }
        if init.omega_quad.len() != problem.n_quad() {
            return Err(Error::validation("initial width must be given on quad_x"));
        }
        let q = (init.a - lo) / (hi - lo);
        let sigma2_h = prior.sigma2_h_fixed().unwrap_or(init.sigma2_h);
        let scales_w = problem.spectral().scales(init.sigma2_omega, init.tau2);
        let resid: Vec<f64> = init
            .omega_quad
            .iter()
            .zip(&problem.inputs().width_mean)
            .map(|(w, m)| w - m)
            .collect();
        let z = problem.spectral().whiten(&scales_w, &resid);
        let mut pos = Position {
            u: (q / (1.0 - q)).ln(),
            a: init.a,
            h0: init.h0,
            sigma2_h,
            sigma2_omega: init.sigma2_omega,
            tau2: init.tau2,
            z,
            omega: init.omega_quad.clone(),
            rss: None,
        };
        let mut s = Sampler {
            problem,
            mode,
            pos: pos.clone(),
            log_target: 0.0,
            steps: scales.to_array(),
        };
        pos.rss = s.rss(&pos);
        s.log_target = s.target(&pos);
        s.pos = pos;
        Ok(s)
    }

    pub fn state(&self) -> ParameterState {
        ParameterState {
            a: self.pos.a,
            h0: self.pos.h0,
            sigma2_h: self.pos.sigma2_h,
            sigma2_omega: self.pos.sigma2_omega,
            tau2: self.pos.tau2,
            omega_quad: self.pos.omega.clone(),
        }
    }

    /// Log density in sampling coordinates (up to a constant).
    pub fn log_target(&self) -> f64 {
        self.log_target
    }

    pub fn scales(&self) -> ProposalScales {
        ProposalScales::from_array(self.steps)
    }

    fn sigma2_h_sampled(&self) -> bool {
        self.problem.inputs().prior.sigma2_h_fixed().is_none()
    }

    fn rss(&self, p: &Position) -> Option<f64> {
        match self.mode {
            LikelihoodMode::Flat => Some(0.0),
            LikelihoodMode::Active => self.problem.residual_sum_of_squares(p.a, p.h0, &p.omega),
        }
    }

    fn target(&self, p: &Position) -> f64 {
        let prior = &self.problem.inputs().prior;
        let ll = match self.mode {
            LikelihoodMode::Flat => 0.0,
            LikelihoodMode::Active => self.problem.log_likelihood_from_rss(p.rss, p.sigma2_h),
        };
        if ll == f64::NEG_INFINITY {
            return ll;
        }
        // priors on the natural scale plus log-Jacobians of the transforms
        let mut lt = ll
            + prior.a.ln_pdf(p.a)
            - softplus(-p.u)
            - softplus(p.u)
            + prior.h0.ln_pdf(p.h0)
            + p.h0.ln()
            + prior.sigma2_omega.ln_pdf(p.sigma2_omega)
            + p.sigma2_omega.ln()
            + prior.tau2.ln_pdf(p.tau2)
            + p.tau2.ln()
            - 0.5 * p.z.iter().map(|v| v * v).sum::<f64>();
        if self.sigma2_h_sampled() {
            lt += prior.ln_sigma2_h(p.sigma2_h) + p.sigma2_h.ln();
        }
        if lt.is_nan() {
            f64::NEG_INFINITY
        } else {
            lt
        }
    }

    fn recolour(&self, p: &mut Position) {
        let sp = self.problem.spectral();
        let sc = sp.scales(p.sigma2_omega, p.tau2);
        let dev = sp.colour(&sc, &p.z);
        p.omega = self
            .problem
            .inputs()
            .width_mean
            .iter()
            .zip(dev)
            .map(|(m, d)| m + d)
            .collect();
    }

    /// One block update; returns whether the proposal was accepted.
    /// Blocks that are not sampled (fixed σ²_H) return `false` untouched.
    pub fn mh_step<R: Rng + ?Sized>(&mut self, block: Block, rng: &mut R) -> bool {
        let step = self.steps[block.index()];
        let mut p = self.pos.clone();
        match block {
            Block::A => {
                let prior = &self.problem.inputs().prior;
                p.u += step * normal(rng);
                let q = 1.0 / (1.0 + (-p.u).exp());
                p.a = prior.a.lo + (prior.a.hi - prior.a.lo) * q;
                p.rss = self.rss(&p);
            }
            Block::H0 => {
                p.h0 *= (step * normal(rng)).exp();
                p.rss = self.rss(&p);
            }
            Block::Sigma2H => {
                if !self.sigma2_h_sampled() {
                    return false;
                }
                p.sigma2_h *= (step * normal(rng)).exp();
            }
            Block::Variances => {
                p.sigma2_omega *= (step * normal(rng)).exp();
                p.tau2 *= (step * normal(rng)).exp();
                self.recolour(&mut p);
                p.rss = self.rss(&p);
            }
            Block::Omega => {
                for v in p.z.iter_mut() {
                    *v += step * normal(rng);
                }
                self.recolour(&mut p);
                p.rss = self.rss(&p);
            }
        }
        let lt = self.target(&p);
        let ratio = if lt == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lt - self.log_target
        };
        if metropolis_accept(ratio, rng) {
            self.pos = p;
            self.log_target = lt;
            true
        } else {
            false
        }
    }
}

/// Scalar draws from the prior with the width at its mean, redrawn until
/// the likelihood is finite (at most 1000 attempts).
pub fn initial_state(problem: &InferenceProblem, mode: LikelihoodMode, seed: u64) -> Result<ParameterState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = &problem.inputs().prior;
    for _ in 0..1000 {
        let q: f64 = rng.random_range(0.02..0.98);
        let s = ParameterState {
            a: prior.a.lo + (prior.a.hi - prior.a.lo) * q,
            h0: prior.h0.sample(&mut rng),
            sigma2_h: prior.sample_sigma2_h(&mut rng),
            sigma2_omega: prior.sigma2_omega.sample(&mut rng),
            tau2: prior.tau2.sample(&mut rng),
            omega_quad: problem.inputs().width_mean.clone(),
        };
        if mode == LikelihoodMode::Flat || problem.log_likelihood(&s).is_finite() {
            return Ok(s);
        }
    }
    Err(Error::numerical("no feasible starting state found in 1000 prior draws"))
}

/// splitmix64 finaliser, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs one chain from `init` on the RNG stream `chain_index` of the seed.
pub fn run_chain(
    init: &ParameterState,
    config: &ChainConfig,
    problem: &InferenceProblem,
    chain_index: usize,
) -> Result<PosteriorSamples> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2 * chain_index as u64 + 1));
    let mut sampler = Sampler::new(problem, init, config.likelihood, config.scales)?;
    let burn = config.burn_in();
    let thin = config.thinning();
    let sampled: Vec<Block> = Block::ALL
        .into_iter()
        .filter(|b| *b != Block::Sigma2H || sampler.sigma2_h_sampled())
        .collect();
    let mut window = [0usize; 5];
    let mut accepted = [0usize; 5];
    let mut windows_done = 0usize;
    const WINDOW: usize = 50;
    let mut states = Vec::new();
    for it in 0..config.n_iterations {
        for &b in &sampled {
            let ok = sampler.mh_step(b, &mut rng);
            if it < burn {
                window[b.index()] += ok as usize;
            } else {
                accepted[b.index()] += ok as usize;
            }
        }
        if config.adapt && it < burn && (it + 1) % WINDOW == 0 {
            windows_done += 1;
            let gain = (1.0 / (windows_done as f64).sqrt()).min(1.0);
            for &b in &sampled {
                let rate = window[b.index()] as f64 / WINDOW as f64;
                let s = &mut sampler.steps[b.index()];
                *s = (*s * (gain * (rate - b.target_rate())).exp()).clamp(1e-6, 50.0);
                window[b.index()] = 0;
            }
        }
        if it >= burn && (it - burn + 1).is_multiple_of(thin) {
            states.push(sampler.state());
        }
    }
    let post = config.n_iterations - burn;
    let rate = |b: Block| -> Option<f64> {
        (post > 0 && sampled.contains(&b)).then(|| accepted[b.index()] as f64 / post as f64)
    };
    Ok(PosteriorSamples {
        chains: vec![ChainSamples {
            states,
            acceptance: AcceptanceRates {
                a: rate(Block::A),
                h0: rate(Block::H0),
                sigma2_h: rate(Block::Sigma2H),
                variances: rate(Block::Variances),
                omega: rate(Block::Omega),
            },
        }],
    })
}

/// Runs `n_chains` chains concurrently from dispersed prior starts.
pub fn run_chains(config: &ChainConfig, problem: &InferenceProblem) -> Result<PosteriorSamples> {
    config.validate()?;
    let chains: Result<Vec<ChainSamples>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let init = initial_state(problem, config.likelihood, derive_seed(config.seed, 2 * c as u64))?;
            let mut out = run_chain(&init, config, problem, c)?;
            Ok(out.chains.remove(0))
        })
        .collect();
    Ok(PosteriorSamples { chains: chains? })
}
