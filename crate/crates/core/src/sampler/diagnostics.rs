//! Rank-normalized split R-hat and effective sample size.
//!
//! R-hat is the larger of the rank-normalized bulk value and the value for
//! the folded draws (absolute deviation from the median). Bulk ESS is the
//! Geyer initial-monotone-sequence estimate on the rank-normalized split
//! chains.

use serde::{Deserialize, Serialize};

use super::{PosteriorDraws, SamplerError};
use crate::stats::{mean, normal_quantile, sorted_quantile, variance};

pub const RHAT_THRESHOLD: f64 = 1.01;
pub const MIN_CHAINS: usize = 2;
pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticFlag {
    RhatHigh {
        name: String,
        rhat: f64,
    },
    /// Zero variance in every chain.
    RhatUndefined {
        name: String,
    },
    Divergences {
        count: usize,
    },
    TreedepthSaturation {
        count: usize,
    },
}

impl DiagnosticFlag {
    /// Treedepth saturation is a warning; everything else fails the run.
    pub fn is_failure(&self) -> bool {
        !matches!(self, DiagnosticFlag::TreedepthSaturation { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    /// Monte Carlo standard error of the posterior mean: sd / sqrt(ESS),
    /// with ESS computed on the untransformed draws.
    pub mcse_mean: Vec<f64>,
    pub divergences: usize,
    pub treedepth_saturations: usize,
    pub flags: Vec<DiagnosticFlag>,
}

impl Diagnostics {
    pub fn passed(&self) -> bool {
        !self.flags.iter().any(DiagnosticFlag::is_failure)
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().filter(|r| !r.is_nan()).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess_bulk(&self) -> f64 {
        self.ess_bulk.iter().copied().filter(|e| !e.is_nan()).fold(f64::INFINITY, f64::min)
    }
}

/// Splits every chain into two halves, dropping the middle draw of odd
/// length chains.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            [c[..half].to_vec(), c[c.len() - half..].to_vec()]
        })
        .collect()
}

/// Replaces values by normal scores of their pooled ranks (average ranks
/// for ties).
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut indexed: Vec<(f64, usize, usize)> =
        chains.iter().enumerate().flat_map(|(c, xs)| xs.iter().enumerate().map(move |(i, &x)| (x, c, i))).collect();
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = indexed.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut start = 0;
    while start < indexed.len() {
        let mut end = start + 1;
        while end < indexed.len() && indexed[end].0 == indexed[start].0 {
            end += 1;
        }
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let z = normal_quantile((avg_rank - 0.375) / (total + 0.25));
        for &(_, c, i) in &indexed[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

/// Classic potential scale reduction on already split chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let within = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let between = n * variance(&means);
    let var_plus = (n - 1.0) / n * within + between / n;
    (var_plus / within).sqrt()
}

/// Split R-hat for one parameter given its draws per chain. NaN when every
/// draw is identical.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = rhat_basic(&rank_normalize(&split));

    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    let median = sorted_quantile(&all, 0.5);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|x| (x - median).abs()).collect()).collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Biased autocovariance at `lag` (denominator `n`).
fn autocovariance(xs: &[f64], m: f64, lag: usize) -> f64 {
    let n = xs.len();
    xs[..n - lag].iter().zip(&xs[lag..]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence. Autocovariances
/// are computed lazily, lag by lag, until the truncation point.
pub fn ess_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 || is_constant(chains) {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_acov = |lag: usize| -> f64 {
        chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, lag)).sum::<f64>() / m as f64
    };
    let chain_var: Vec<f64> =
        chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, 0) * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&means);
    }

    let mut rho = vec![0.0; n + 1];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 5 < n && rho_even + rho_odd > 0.0 {
        rho_even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        rho_odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho[max_t + 1] = rho_even;
    }

    // Enforce a monotonically decreasing sequence of pair sums.
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = prev / 2.0;
        }
        t += 2;
    }

    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t + 1]).max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: [`ess_basic`] on the rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    ess_basic(&rank_normalize(&split_chains(chains)))
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let mut it = chains.iter().flatten();
    match it.next() {
        None => true,
        Some(first) => it.all(|x| x == first),
    }
}

/// Convergence diagnostics for every parameter. Pinned columns get NaN
/// entries without a flag.
pub fn diagnose(draws: &PosteriorDraws) -> Result<Diagnostics, SamplerError> {
    let (chains, samples) = (draws.n_chains(), draws.n_samples());
    if chains < MIN_CHAINS || samples < MIN_SAMPLES {
        return Err(SamplerError::TooFewDraws { chains, samples, min_chains: MIN_CHAINS, min_samples: MIN_SAMPLES });
    }

    let mut diag = Diagnostics {
        names: draws.names().to_vec(),
        rhat: Vec::new(),
        ess_bulk: Vec::new(),
        mcse_mean: Vec::new(),
        divergences: draws.divergences(),
        treedepth_saturations: draws.treedepth_hits(),
        flags: Vec::new(),
    };

    for (k, name) in draws.names().iter().enumerate() {
        if draws.pinned()[k] {
            diag.rhat.push(f64::NAN);
            diag.ess_bulk.push(f64::NAN);
            diag.mcse_mean.push(f64::NAN);
            continue;
        }
        let per_chain: Vec<Vec<f64>> = (0..chains).map(|c| draws.chain_column(c, k)).collect();
        let rhat = split_rhat(&per_chain);
        let pooled: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let sd = variance(&pooled).sqrt();
        let ess_mean = ess_basic(&split_chains(&per_chain));
        diag.rhat.push(rhat);
        diag.ess_bulk.push(ess_bulk(&per_chain));
        diag.mcse_mean.push(if ess_mean.is_nan() { 0.0 } else { sd / ess_mean.sqrt() });

        if rhat.is_nan() {
            diag.flags.push(DiagnosticFlag::RhatUndefined { name: name.clone() });
        } else if rhat > RHAT_THRESHOLD {
            diag.flags.push(DiagnosticFlag::RhatHigh { name: name.clone(), rhat });
        }
    }
    if diag.divergences > 0 {
        diag.flags.push(DiagnosticFlag::Divergences { count: diag.divergences });
    }
    if diag.treedepth_saturations > 0 {
        diag.flags.push(DiagnosticFlag::TreedepthSaturation { count: diag.treedepth_saturations });
    }
    Ok(diag)
}
