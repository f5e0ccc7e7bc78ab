//! Posterior summaries: per-parameter moments and quantiles, the ability
//! curve by rank, and the mean ability gap between adjacent ranks.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::PosteriorDraws;
use crate::stats::{mean, sorted_quantile, variance};

#[derive(Debug, Error, PartialEq)]
pub enum PosteriorError {
    #[error("no draws to summarize")]
    Empty,
    #[error("rank gap needs at least two ranks, got top_n = {0}")]
    TooFewRanks(usize),
    #[error("top_n = {top_n} exceeds the {available} ranks in the curve")]
    BeyondCurve { top_n: usize, available: usize },
    #[error("draws have no ability columns a[2].. ")]
    NoAbilities,
    #[error("io error: {0}")]
    Io(String),
}

/// Quantile levels reported for every parameter.
pub const QUANTILES: [f64; 5] = [0.05, 0.16, 0.50, 0.84, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    /// Posterior standard deviation, i.e. the standard error of the estimate.
    pub sd: f64,
    pub q5: f64,
    pub q16: f64,
    pub q50: f64,
    pub q84: f64,
    pub q95: f64,
}

impl ParameterSummary {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = QUANTILES.map(|p| sorted_quantile(&sorted, p));
        Self {
            name: name.to_string(),
            mean: mean(values),
            sd: variance(values).sqrt(),
            q5: q[0],
            q16: q[1],
            q50: q[2],
            q84: q[3],
            q95: q[4],
        }
    }
}

/// Summaries over all chains pooled, in column order.
pub fn summarize(draws: &PosteriorDraws) -> Result<Vec<ParameterSummary>, PosteriorError> {
    if draws.n_samples() == 0 || draws.n_chains() == 0 {
        return Err(PosteriorError::Empty);
    }
    Ok(draws
        .names()
        .iter()
        .enumerate()
        .map(|(k, name)| ParameterSummary::from_values(name, &draws.pooled_column(k)))
        .collect())
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[ParameterSummary]) -> Result<(), PosteriorError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(|e| PosteriorError::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| PosteriorError::Io(e.to_string()))
}

pub fn read_summary_csv<R: std::io::Read>(r: R) -> Result<Vec<ParameterSummary>, PosteriorError> {
    csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>().map_err(|e| PosteriorError::Io(e.to_string()))
}

/// Posterior ability of one rank slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityPoint {
    pub rank: usize,
    pub mean: f64,
    pub sd: f64,
    pub q16: f64,
    pub q84: f64,
}

/// Abilities by rank, starting with the pinned `(1, 0, 0)` entry. Both the
/// `mean +/- sd` and the 16%-84% conventions are available per point.
pub fn ability_curve(draws: &PosteriorDraws) -> Result<Vec<AbilityPoint>, PosteriorError> {
    if draws.n_samples() == 0 {
        return Err(PosteriorError::Empty);
    }
    let mut curve = vec![AbilityPoint { rank: 1, mean: 0.0, sd: 0.0, q16: 0.0, q84: 0.0 }];
    for rank in 2.. {
        let Some(k) = draws.index_of(&format!("a[{rank}]")) else { break };
        let s = ParameterSummary::from_values("", &draws.pooled_column(k));
        curve.push(AbilityPoint { rank, mean: s.mean, sd: s.sd, q16: s.q16, q84: s.q84 });
    }
    if curve.len() < 2 {
        return Err(PosteriorError::NoAbilities);
    }
    Ok(curve)
}

pub fn write_curve_csv<W: Write>(w: W, curve: &[AbilityPoint]) -> Result<(), PosteriorError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["rank", "mean", "sd", "lo_sd", "hi_sd", "q16", "q84"])
        .map_err(|e| PosteriorError::Io(e.to_string()))?;
    for p in curve {
        wtr.write_record([
            p.rank.to_string(),
            p.mean.to_string(),
            p.sd.to_string(),
            (p.mean - p.sd).to_string(),
            (p.mean + p.sd).to_string(),
            p.q16.to_string(),
            p.q84.to_string(),
        ])
        .map_err(|e| PosteriorError::Io(e.to_string()))?;
    }
    wtr.flush().map_err(|e| PosteriorError::Io(e.to_string()))
}

/// Average ability drop from one rank to the next over ranks `1..=top_n`.
///
/// For a monotone curve this equals `|a(1) - a(top_n)| / (top_n - 1)`;
/// otherwise the mean absolute successive difference is returned.
pub fn mean_rank_gap(curve: &[AbilityPoint], top_n: usize) -> Result<f64, PosteriorError> {
    if top_n < 2 {
        return Err(PosteriorError::TooFewRanks(top_n));
    }
    if top_n > curve.len() {
        return Err(PosteriorError::BeyondCurve { top_n, available: curve.len() });
    }
    let values: Vec<f64> = curve[..top_n].iter().map(|p| p.mean).collect();
    let steps: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone = steps.iter().all(|&d| d <= 0.0) || steps.iter().all(|&d| d >= 0.0);
    Ok(if monotone {
        (values[0] - values[top_n - 1]).abs() / (top_n - 1) as f64
    } else {
        steps.iter().map(|d| d.abs()).sum::<f64>() / steps.len() as f64
    })
}
