//! No-U-Turn sampler with windowed adaptation, plus the draw container and
//! convergence diagnostics.
//!
//! Chains run in parallel on a rayon pool. Each chain owns a ChaCha8
//! stream selected by `(seed, chain index)`, so the output depends only on
//! the target and the configuration, not on thread scheduling.

mod adapt;
mod diagnostics;
mod draws;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{
    diagnose, ess_basic, ess_bulk, rank_normalize, split_chains, split_rhat, DiagnosticFlag, Diagnostics,
};
pub use draws::{ChainStats, PosteriorDraws};
pub use nuts::{leapfrog, PhasePoint};

use adapt::{DualAveraging, WindowedVariance};
use nuts::Nuts;

/// Minimum warmup length for the three-phase adaptation schedule
/// (75 initial, at least one 25-draw window, 50 terminal).
pub const MIN_ADAPT_WARMUP: usize = 150;

const MAX_INIT_ATTEMPTS: usize = 100;

/// A log density with gradient on an unconstrained real space.
///
/// Implementations must be deterministic and safe to evaluate from several
/// threads at once.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density at `position` and writes its gradient into
    /// `gradient`. A non-finite return value marks the point as invalid.
    fn log_density_gradient(&self, position: &[f64], gradient: &mut [f64]) -> f64;

    /// Names of the columns produced by [`LogDensity::constrain`].
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Maps a sampler position to the values recorded as a draw.
    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        position.to_vec()
    }

    /// Columns of the constrained output that are held constant by the
    /// target and therefore excluded from convergence checks.
    fn pinned(&self) -> Vec<bool> {
        vec![false; self.param_names().len()]
    }
}

impl<T: LogDensity + ?Sized> LogDensity for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density_gradient(&self, position: &[f64], gradient: &mut [f64]) -> f64 {
        (**self).log_density_gradient(position, gradient)
    }
    fn param_names(&self) -> Vec<String> {
        (**self).param_names()
    }
    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        (**self).constrain(position)
    }
    fn pinned(&self) -> Vec<bool> {
        (**self).pinned()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("chain {chain}: no finite log density and gradient after {attempts} initialization attempts")]
    InitFailed { chain: usize, attempts: usize },
    #[error("step size search failed in chain {chain}: {reason}")]
    StepSize { chain: usize, reason: String },
    #[error("diagnostics need at least {min_chains} chains of at least {min_samples} draws, got {chains} x {samples}")]
    TooFewDraws { chains: usize, samples: usize, min_chains: usize, min_samples: usize },
    #[error("malformed draws file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_treedepth: usize,
    pub seed: u64,
    /// Initial positions are drawn uniformly from `[-init_radius, init_radius]`.
    pub init_radius: f64,
    /// Step size and diagonal metric adaptation during warmup.
    pub adapt: bool,
    /// Starting step size. When adaptation is off this is the step size
    /// used throughout; `None` means a heuristic search from 1.
    pub step_size: Option<f64>,
    /// Worker threads for parallel chains; `None` uses one per chain.
    pub threads: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            target_accept: 0.8,
            max_treedepth: 10,
            seed: 0,
            init_radius: 2.0,
            adapt: true,
            step_size: None,
            threads: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |msg: String| Err(SamplerError::InvalidConfig(msg));
        if self.chains == 0 {
            return fail("chains must be at least 1".into());
        }
        if self.samples == 0 {
            return fail("samples must be at least 1".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail(format!("target_accept {} not in (0, 1)", self.target_accept));
        }
        if self.max_treedepth == 0 {
            return fail("max_treedepth must be at least 1".into());
        }
        if self.adapt && self.warmup < MIN_ADAPT_WARMUP {
            return fail(format!("warmup {} too short for adaptation (minimum {MIN_ADAPT_WARMUP})", self.warmup));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return fail(format!("init_radius {} must be finite and non-negative", self.init_radius));
        }
        if let Some(eps) = self.step_size {
            if !(eps > 0.0 && eps.is_finite()) {
                return fail(format!("step_size {eps} must be positive"));
            }
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        Ok(())
    }
}

/// Runs all chains and returns the post-warmup draws.
pub fn sample<T: LogDensity>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    let threads = config.threads.unwrap_or(config.chains).min(config.chains);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SamplerError::InvalidConfig(format!("thread pool: {e}")))?;
    let chains = pool.install(|| {
        (0..config.chains).into_par_iter().map(|chain| run_chain(target, config, chain)).collect::<Result<Vec<_>, _>>()
    })?;
    let (values, stats): (Vec<_>, Vec<_>) = chains.into_iter().unzip();
    Ok(PosteriorDraws::new(target.param_names(), values, stats, target.pinned(), config.max_treedepth))
}

/// Deterministic generator for one chain.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initialize<T: LogDensity>(
    target: &T,
    radius: f64,
    chain: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PhasePoint, SamplerError> {
    let dim = target.dim();
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<f64> =
            (0..dim).map(|_| if radius > 0.0 { rng.random_range(-radius..radius) } else { 0.0 }).collect();
        let mut grad = vec![0.0; dim];
        let logp = target.log_density_gradient(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(PhasePoint { p: vec![0.0; dim], q, grad, logp });
        }
    }
    Err(SamplerError::InitFailed { chain, attempts: MAX_INIT_ATTEMPTS })
}

fn run_chain<T: LogDensity>(
    target: &T,
    config: &SamplerConfig,
    chain: usize,
) -> Result<(Vec<f64>, ChainStats), SamplerError> {
    let mut rng = chain_rng(config.seed, chain);
    let mut state = initialize(target, config.init_radius, chain, &mut rng)?;

    let dim = target.dim();
    let mut nuts = Nuts::new(target, vec![1.0; dim], config.step_size.unwrap_or(1.0), config.max_treedepth);
    let step_size_err = |reason: String| SamplerError::StepSize { chain, reason };
    if config.adapt || config.step_size.is_none() {
        nuts.init_step_size(&state, &mut rng).map_err(step_size_err)?;
    }

    let mut dual = DualAveraging::new(config.target_accept, nuts.step_size);
    let mut windows = WindowedVariance::new(config.warmup, dim);

    let width = target.param_names().len();
    let mut values = Vec::with_capacity(config.samples * width);
    let mut stats = ChainStats::with_capacity(config.samples);

    for iteration in 0..config.warmup + config.samples {
        let transition = nuts.transition(&state, &mut rng);
        state = transition.point.clone();

        if iteration < config.warmup {
            if config.adapt {
                dual.learn(&mut nuts.step_size, transition.accept_stat);
                if windows.learn(&mut nuts.inv_mass, &state.q) {
                    nuts.init_step_size(&state, &mut rng).map_err(step_size_err)?;
                    dual.restart(nuts.step_size);
                }
                if iteration + 1 == config.warmup {
                    nuts.step_size = dual.final_step_size();
                }
            }
            continue;
        }

        values.extend(target.constrain(&state.q));
        stats.push(&transition, state.logp);
    }
    stats.step_size = nuts.step_size;
    stats.inv_metric = nuts.inv_mass.clone();
    Ok((values, stats))
}
