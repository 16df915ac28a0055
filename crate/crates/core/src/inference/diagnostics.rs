use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParameterState, PosteriorSamples};

/// Convergence summary for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
}

/// Halves every chain (dropping a middle draw of odd chains).
fn split(chains: &[Vec<f64>]) -> Result<Vec<&[f64]>> {
    if chains.len() < 2 {
        return Err(Error::validation("diagnostics need at least two chains"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::validation("chains have different lengths"));
    }
    if n < 4 {
        return Err(Error::validation("chains need at least 4 draws"));
    }
    let half = n / 2;
    Ok(chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..]])
        .collect())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// (W, var⁺) of split chains.
fn variances(parts: &[&[f64]]) -> (f64, f64) {
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let grand = mean(&means);
    let b = n / (means.len() as f64 - 1.0) * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let w = parts
        .iter()
        .zip(&means)
        .map(|(p, m)| p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / parts.len() as f64;
    (w, (n - 1.0) / n * w + b / n)
}

/// Split-chain potential scale reduction factor.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let parts = split(chains)?;
    let (w, var_plus) = variances(&parts);
    if w == 0.0 {
        return Ok(if var_plus == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((var_plus / w).sqrt())
}

/// Multi-chain effective sample size on split chains, with Geyer's initial
/// monotone sequence truncation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> Result<f64> {
    let parts = split(chains)?;
    let m = parts.len();
    let n = parts[0].len();
    let total = (m * n) as f64;
    let (w, var_plus) = variances(&parts);
    if w == 0.0 {
        return Ok(total);
    }
    let centred: Vec<Vec<f64>> = parts
        .iter()
        .map(|p| {
            let mu = mean(p);
            p.iter().map(|v| v - mu).collect()
        })
        .collect();
    let rho = |t: usize| -> f64 {
        let acov = centred
            .iter()
            .map(|c| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
            .sum::<f64>()
            / m as f64;
        1.0 - (w - acov) / var_plus
    };
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = (if t == 0 { 1.0 } else { rho(t) }) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum_pairs += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / total.log10());
    Ok(total / tau)
}

/// R̂ and ESS for each scalar parameter, plus the worst case over ω
/// (largest R̂, smallest ESS). Parameters constant across all draws are
/// skipped.
pub fn chain_diagnostics(samples: &PosteriorSamples) -> Result<Vec<ParameterDiagnostics>> {
    let mut out = Vec::new();
    for (k, name) in ParameterState::SCALAR_NAMES.iter().enumerate() {
        let chains = samples.scalar_by_chain(k);
        if chains.iter().flatten().all(|v| *v == chains[0].first().copied().unwrap_or(0.0)) {
            split(&chains)?;
            continue;
        }
        out.push(ParameterDiagnostics {
            name: name.to_string(),
            rhat: split_rhat(&chains)?,
            ess: effective_sample_size(&chains)?,
        });
    }
    let m = samples
        .chains
        .first()
        .and_then(|c| c.states.first())
        .map_or(0, |s| s.omega_quad.len());
    if m > 0 {
        let mut worst = ParameterDiagnostics {
            name: "omega(max)".into(),
            rhat: 0.0,
            ess: f64::INFINITY,
        };
        for i in 0..m {
            let chains: Vec<Vec<f64>> = samples
                .chains
                .iter()
                .map(|c| c.states.iter().map(|s| s.omega_quad[i]).collect())
                .collect();
            worst.rhat = worst.rhat.max(split_rhat(&chains)?);
            worst.ess = worst.ess.min(effective_sample_size(&chains)?);
        }
        out.push(worst);
    }
    Ok(out)
}
