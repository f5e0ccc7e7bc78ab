//! Parameter space and log posterior density of the two model variants.
//!
//! Both variants share the likelihood
//! `y ~ normal(a[rank1] - a[rank2] + h * b (+ h_c * b_c), sigma_y)`
//! and the hierarchical ability prior
//! `a[j] ~ normal(beta * (j - 1) + gamma * sqrt(j - 1), sigma_a)` for `j >= 2`,
//! with `a[1] = 0` pinned. The scales are sampled as logs; the density
//! includes the Jacobian of that transform.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CountryCode, EncodedDataset, EncodedMatch};
use crate::sampler::LogDensity;
use crate::stats::{normal_log_pdf, LN_SQRT_2PI};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("at least two ranks must be modeled, got {0}")]
    TooFewRanks(usize),
    #[error("rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("prior scale {name} must be positive, got {value}")]
    InvalidPriorScale { name: &'static str, value: f64 },
    #[error("parameter vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("non-finite parameter {0}")]
    NonFinite(String),
    #[error("dataset is empty")]
    EmptyData,
    #[error("dataset ranks go up to {data}, model covers {model}")]
    DataRanks { data: usize, model: usize },
    #[error("dataset has no indicator column for tracked country {0}")]
    MissingCountry(CountryCode),
    #[error("fixed scales must be positive and finite, got ({0}, {1})")]
    InvalidFixedScales(f64, f64),
    #[error("non-centering weight must lie in [0, 1], got {0}")]
    InvalidNoncentering(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// One home-advantage effect shared by all venues.
    Global,
    /// Global effect plus an additive intercept per tracked country.
    CountryIntercepts,
}

impl std::str::FromStr for ModelVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(Self::Global),
            "country" | "country_intercepts" => Ok(Self::CountryIntercepts),
            _ => Err(format!("unknown model variant {s:?} (expected global or country)")),
        }
    }
}

/// Standard deviations of the normal priors. Half-normal for the scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorScales {
    pub h: f64,
    pub country: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl Default for PriorScales {
    fn default() -> Self {
        Self { h: 0.5, country: 0.2, beta: 2.0, gamma: 2.0, sigma: 2.0 }
    }
}

impl PriorScales {
    fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("h", self.h),
            ("country", self.country),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("sigma", self.sigma),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ModelError::InvalidPriorScale { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    pub ranks: usize,
    /// Empty for [`ModelVariant::Global`].
    pub tracked_countries: Vec<CountryCode>,
    pub priors: PriorScales,
}

/// Builds a spec with the default prior scales. The tracked countries are
/// dropped for the global variant.
pub fn make_spec(
    variant: ModelVariant,
    ranks: usize,
    tracked_countries: &[CountryCode],
) -> Result<ModelSpec, ModelError> {
    ModelSpec::new(variant, ranks, tracked_countries, PriorScales::default())
}

impl ModelSpec {
    pub fn new(
        variant: ModelVariant,
        ranks: usize,
        tracked_countries: &[CountryCode],
        priors: PriorScales,
    ) -> Result<Self, ModelError> {
        if ranks < 2 {
            return Err(ModelError::TooFewRanks(ranks));
        }
        priors.validate()?;
        let tracked_countries = match variant {
            ModelVariant::Global => Vec::new(),
            ModelVariant::CountryIntercepts => tracked_countries.to_vec(),
        };
        Ok(Self { variant, ranks, tracked_countries, priors })
    }

    pub fn n_countries(&self) -> usize {
        self.tracked_countries.len()
    }

    /// `(R - 1)` abilities, `h`, one intercept per tracked country, `beta`,
    /// `gamma`, and the two log scales.
    pub fn dimension(&self) -> usize {
        (self.ranks - 1) + 1 + self.n_countries() + 2 + 2
    }

    pub(crate) fn h_index(&self) -> usize {
        self.ranks - 1
    }

    pub(crate) fn country_index(&self, k: usize) -> usize {
        self.ranks + k
    }

    pub(crate) fn beta_index(&self) -> usize {
        self.ranks + self.n_countries()
    }

    pub(crate) fn log_sigma_y_index(&self) -> usize {
        self.beta_index() + 2
    }

    /// Names of the constrained parameters in layout order, as used for
    /// draw columns: `a[2]..a[R]`, `h`, `h_<CC>`, `beta`, `gamma`,
    /// `sigma_y`, `sigma_a`.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (2..=self.ranks).map(|j| format!("a[{j}]")).collect();
        names.push("h".into());
        names.extend(self.tracked_countries.iter().map(|c| format!("h_{c}")));
        names.extend(["beta", "gamma", "sigma_y", "sigma_a"].map(String::from));
        names
    }
}

/// A point in the unconstrained parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    /// Abilities of ranks `2..=R`; rank 1 is pinned at zero and not stored.
    pub abilities: Vec<f64>,
    pub h: f64,
    pub country_h: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub log_sigma_y: f64,
    pub log_sigma_a: f64,
}

impl ParameterVector {
    /// All zeros, so both scales are one.
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            abilities: vec![0.0; spec.ranks - 1],
            h: 0.0,
            country_h: vec![0.0; spec.n_countries()],
            beta: 0.0,
            gamma: 0.0,
            log_sigma_y: 0.0,
            log_sigma_a: 0.0,
        }
    }

    pub fn ranks(&self) -> usize {
        self.abilities.len() + 1
    }

    pub fn sigma_y(&self) -> f64 {
        self.log_sigma_y.exp()
    }

    pub fn sigma_a(&self) -> f64 {
        self.log_sigma_a.exp()
    }

    pub fn ability(&self, rank: usize) -> Result<f64, ModelError> {
        match rank {
            1 => Ok(0.0),
            r if r <= self.ranks() => Ok(self.abilities[r - 2]),
            r => Err(ModelError::RankOutOfRange { rank: r, max: self.ranks() }),
        }
    }

    pub fn set_ability(&mut self, rank: usize, value: f64) -> Result<(), ModelError> {
        match rank {
            r if (2..=self.ranks()).contains(&r) => {
                self.abilities[r - 2] = value;
                Ok(())
            }
            r => Err(ModelError::RankOutOfRange { rank: r, max: self.ranks() }),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.abilities.len() + self.country_h.len() + 5);
        v.extend_from_slice(&self.abilities);
        v.push(self.h);
        v.extend_from_slice(&self.country_h);
        v.extend([self.beta, self.gamma, self.log_sigma_y, self.log_sigma_a]);
        v
    }

    pub fn from_slice(spec: &ModelSpec, x: &[f64]) -> Result<Self, ModelError> {
        if x.len() != spec.dimension() {
            return Err(ModelError::DimensionMismatch { got: x.len(), expected: spec.dimension() });
        }
        let c = spec.n_countries();
        let b = spec.beta_index();
        Ok(Self {
            abilities: x[..spec.ranks - 1].to_vec(),
            h: x[spec.h_index()],
            country_h: x[spec.ranks..spec.ranks + c].to_vec(),
            beta: x[b],
            gamma: x[b + 1],
            log_sigma_y: x[b + 2],
            log_sigma_a: x[b + 3],
        })
    }

    fn check_against(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        let got = self.abilities.len() + self.country_h.len() + 5;
        if self.ranks() != spec.ranks || self.country_h.len() != spec.n_countries() {
            return Err(ModelError::DimensionMismatch { got, expected: spec.dimension() });
        }
        let names = spec.parameter_names();
        if let Some(i) = self.to_vec().iter().position(|v| !v.is_finite()) {
            let name = match i {
                i if i == spec.log_sigma_y_index() => "log_sigma_y".to_string(),
                i if i == spec.log_sigma_y_index() + 1 => "log_sigma_a".to_string(),
                i => names[i].clone(),
            };
            return Err(ModelError::NonFinite(name));
        }
        Ok(())
    }
}

/// Value of the log posterior and its gradient in the unconstrained
/// coordinates (same layout as [`ParameterVector::to_vec`]).
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityResult {
    pub log_density: f64,
    pub gradient: Vec<f64>,
}

/// The log posterior split into its additive pieces.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogDensityTerms {
    pub likelihood: f64,
    pub ability_prior: f64,
    /// Priors on `h`, the country intercepts, `beta` and `gamma`.
    pub effect_prior: f64,
    /// Half-normal priors on the two scales.
    pub scale_prior: f64,
    /// `log sigma_y + log sigma_a`.
    pub jacobian: f64,
}

impl LogDensityTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.ability_prior + self.effect_prior + self.scale_prior + self.jacobian
    }
}

/// Linear predictor of the margin for player 1.
///
/// `country_h` is matched to `m.country_home` by position, so both must
/// refer to the same tracked-country list; extra indicators are ignored
/// for the global variant (`country_h` empty).
pub fn predictor_mean(params: &ParameterVector, m: &EncodedMatch) -> Result<f64, ModelError> {
    let mut mu = params.ability(m.rank1)? - params.ability(m.rank2)? + params.h * f64::from(m.home);
    for (h_c, &b_c) in params.country_h.iter().zip(&m.country_home) {
        mu += h_c * f64::from(b_c);
    }
    Ok(mu)
}

/// Match with parameter offsets resolved.
#[derive(Debug, Clone, Copy)]
struct Prepared {
    ability1: Option<usize>,
    ability2: Option<usize>,
    home: f64,
    country: Option<(usize, f64)>,
    y: f64,
}

/// Log posterior for a fixed dataset with all index lookups precomputed.
#[derive(Debug, Clone)]
struct Evaluator {
    spec: ModelSpec,
    matches: Vec<Prepared>,
}

impl Evaluator {
    fn new(spec: &ModelSpec, data: &EncodedDataset) -> Result<Self, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyData);
        }
        let country_columns = spec
            .tracked_countries
            .iter()
            .map(|c| data.country_index(c).ok_or_else(|| ModelError::MissingCountry(c.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let slot = |rank: usize| -> Result<Option<usize>, ModelError> {
            match rank {
                1 => Ok(None),
                r if r <= spec.ranks => Ok(Some(r - 2)),
                r => Err(ModelError::DataRanks { data: r, model: spec.ranks }),
            }
        };
        let matches = data
            .matches
            .iter()
            .map(|m| {
                let country = country_columns
                    .iter()
                    .enumerate()
                    .find(|(_, &col)| m.country_home[col] != 0)
                    .map(|(k, &col)| (spec.country_index(k), f64::from(m.country_home[col])));
                Ok(Prepared {
                    ability1: slot(m.rank1)?,
                    ability2: slot(m.rank2)?,
                    home: f64::from(m.home),
                    country,
                    y: m.y,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(Self { spec: spec.clone(), matches })
    }

    /// Writes the gradient into `grad` (overwriting it) and returns the
    /// individual terms. `x` must have the spec's dimension.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> LogDensityTerms {
        let spec = &self.spec;
        let priors = &spec.priors;
        grad.iter_mut().for_each(|g| *g = 0.0);

        let h_idx = spec.h_index();
        let b_idx = spec.beta_index();
        let (beta, gamma) = (x[b_idx], x[b_idx + 1]);
        let (log_sigma_y, log_sigma_a) = (x[b_idx + 2], x[b_idx + 3]);
        let (sigma_y, sigma_a) = (log_sigma_y.exp(), log_sigma_a.exp());
        let h = x[h_idx];
        let ability = |slot: Option<usize>| slot.map_or(0.0, |i| x[i]);

        let mut terms = LogDensityTerms::default();

        // Likelihood.
        let inv_var_y = 1.0 / (sigma_y * sigma_y);
        let mut sq_sum = 0.0;
        for m in &self.matches {
            let mut mu = ability(m.ability1) - ability(m.ability2) + h * m.home;
            if let Some((i, b)) = m.country {
                mu += x[i] * b;
            }
            let resid = m.y - mu;
            sq_sum += resid * resid;
            let r = resid * inv_var_y;
            if let Some(i) = m.ability1 {
                grad[i] += r;
            }
            if let Some(i) = m.ability2 {
                grad[i] -= r;
            }
            grad[h_idx] += r * m.home;
            if let Some((i, b)) = m.country {
                grad[i] += r * b;
            }
        }
        let n = self.matches.len() as f64;
        terms.likelihood = -0.5 * sq_sum * inv_var_y - n * (log_sigma_y + LN_SQRT_2PI);
        grad[b_idx + 2] += sq_sum * inv_var_y - n;

        // Hierarchical ability prior.
        let inv_var_a = 1.0 / (sigma_a * sigma_a);
        let mut sq_sum = 0.0;
        for j in 2..=spec.ranks {
            let i = j - 2;
            let offset = (j - 1) as f64;
            let root = offset.sqrt();
            let resid = x[i] - beta * offset - gamma * root;
            sq_sum += resid * resid;
            let r = resid * inv_var_a;
            grad[i] -= r;
            grad[b_idx] += r * offset;
            grad[b_idx + 1] += r * root;
        }
        let n = (spec.ranks - 1) as f64;
        terms.ability_prior = -0.5 * sq_sum * inv_var_a - n * (log_sigma_a + LN_SQRT_2PI);
        grad[b_idx + 3] += sq_sum * inv_var_a - n;

        // Effect priors.
        let mut effect = normal_log_pdf(h, 0.0, priors.h);
        grad[h_idx] -= h / (priors.h * priors.h);
        for k in 0..spec.n_countries() {
            let i = spec.country_index(k);
            effect += normal_log_pdf(x[i], 0.0, priors.country);
            grad[i] -= x[i] / (priors.country * priors.country);
        }
        effect += normal_log_pdf(beta, 0.0, priors.beta);
        grad[b_idx] -= beta / (priors.beta * priors.beta);
        effect += normal_log_pdf(gamma, 0.0, priors.gamma);
        grad[b_idx + 1] -= gamma / (priors.gamma * priors.gamma);
        terms.effect_prior = effect;

        // Half-normal scale priors, differentiated through sigma = exp(log_sigma).
        let s2 = priors.sigma * priors.sigma;
        terms.scale_prior = 2.0 * std::f64::consts::LN_2
            + normal_log_pdf(sigma_y, 0.0, priors.sigma)
            + normal_log_pdf(sigma_a, 0.0, priors.sigma);
        grad[b_idx + 2] -= sigma_y * sigma_y / s2;
        grad[b_idx + 3] -= sigma_a * sigma_a / s2;

        terms.jacobian = log_sigma_y + log_sigma_a;
        grad[b_idx + 2] += 1.0;
        grad[b_idx + 3] += 1.0;

        terms
    }
}

/// Joint log posterior and its analytic gradient.
pub fn log_posterior(
    params: &ParameterVector,
    data: &EncodedDataset,
    spec: &ModelSpec,
) -> Result<LogDensityResult, ModelError> {
    params.check_against(spec)?;
    let evaluator = Evaluator::new(spec, data)?;
    let mut gradient = vec![0.0; spec.dimension()];
    let terms = evaluator.eval(&params.to_vec(), &mut gradient);
    Ok(LogDensityResult { log_density: terms.total(), gradient })
}

/// The log posterior broken into its additive terms.
pub fn log_posterior_terms(
    params: &ParameterVector,
    data: &EncodedDataset,
    spec: &ModelSpec,
) -> Result<LogDensityTerms, ModelError> {
    params.check_against(spec)?;
    let evaluator = Evaluator::new(spec, data)?;
    let mut gradient = vec![0.0; spec.dimension()];
    Ok(evaluator.eval(&params.to_vec(), &mut gradient))
}

/// Scales held fixed during sampling, which turns the remaining
/// coordinates into a jointly Gaussian posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedScales {
    pub sigma_y: f64,
    pub sigma_a: f64,
}

/// Fixed upper-triangular map `theta = U (beta, gamma)` under which the
/// trend coefficients are close to uncorrelated a posteriori.
///
/// `U` is the Cholesky factor of `X'X + I`, where the rows of `X` are
/// `(j - 1, sqrt(j - 1))` for `j = 2..=R`. The map is linear, so its
/// Jacobian is constant and the target density is unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TrendBasis {
    u11: f64,
    u12: f64,
    u22: f64,
}

impl TrendBasis {
    fn new(ranks: usize) -> Self {
        let (mut g11, mut g12, mut g22) = (1.0, 0.0, 1.0);
        for j in 2..=ranks {
            let t = (j - 1) as f64;
            g11 += t * t;
            g12 += t * t.sqrt();
            g22 += t;
        }
        let u11 = g11.sqrt();
        let u12 = g12 / u11;
        let u22 = (g22 - u12 * u12).sqrt();
        Self { u11, u12, u22 }
    }

    fn to_model(self, theta1: f64, theta2: f64) -> (f64, f64) {
        let gamma = theta2 / self.u22;
        ((theta1 - self.u12 * gamma) / self.u11, gamma)
    }

    fn to_sampler(self, beta: f64, gamma: f64) -> (f64, f64) {
        (self.u11 * beta + self.u12 * gamma, self.u22 * gamma)
    }

    fn pull_back(self, grad_beta: f64, grad_gamma: f64) -> (f64, f64) {
        let g1 = grad_beta / self.u11;
        (g1, (grad_gamma - self.u12 * g1) / self.u22)
    }
}

/// Orthonormal Helmert basis for the ability block. The first column is
/// the common level of all abilities, which the data pin down far less
/// precisely than the differences between them.
#[derive(Debug, Clone, PartialEq)]
struct AbilityBasis {
    n: usize,
    /// Column-major `n x n`.
    columns: Vec<f64>,
}

impl AbilityBasis {
    fn new(n: usize) -> Self {
        let mut columns = vec![0.0; n * n];
        if n > 0 {
            let level = 1.0 / (n as f64).sqrt();
            columns[..n].iter_mut().for_each(|v| *v = level);
        }
        for k in 1..n {
            let norm = ((k * (k + 1)) as f64).sqrt();
            let col = &mut columns[k * n..(k + 1) * n];
            col[..k].iter_mut().for_each(|v| *v = 1.0 / norm);
            col[k] = -(k as f64) / norm;
        }
        Self { n, columns }
    }

    /// `V z`.
    fn to_model(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, &zk) in z.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&self.columns[k * self.n..(k + 1) * self.n]) {
                *o += v * zk;
            }
        }
    }

    /// `V' a`, which is also the gradient pull-back.
    fn to_sampler(&self, a: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.columns[k * self.n..(k + 1) * self.n].iter().zip(a).map(|(v, x)| v * x).sum();
        }
    }
}

/// Ability spread assumed when choosing default non-centering weights.
const REFERENCE_SIGMA_A: f64 = 0.3;

/// Per-ability weight `v / (v + s^2)`, where `v` is the sampling variance
/// of the ability from its own matches and `s` is [`REFERENCE_SIGMA_A`].
/// Abilities the data barely inform are sampled relative to `sigma_a`;
/// well-measured ones move toward sampling their deviation directly.
fn default_noncentering(spec: &ModelSpec, data: &EncodedDataset) -> Vec<f64> {
    let n = data.len() as f64;
    let mean = data.matches.iter().map(|m| m.y).sum::<f64>() / n;
    let var = data.matches.iter().map(|m| (m.y - mean).powi(2)).sum::<f64>() / n;
    let var = if var > 0.0 { var } else { 1.0 };
    let mut counts = vec![0usize; spec.ranks + 1];
    for m in &data.matches {
        for r in [m.rank1, m.rank2] {
            if r <= spec.ranks {
                counts[r] += 1;
            }
        }
    }
    let prior = REFERENCE_SIGMA_A * REFERENCE_SIGMA_A;
    counts[2..].iter().map(|&c| if c == 0 { 1.0 } else { (var / c as f64) / (var / c as f64 + prior) }).collect()
}

/// A model bound to a dataset, exposed to the sampler.
///
/// Sampler coordinates reparameterize the unconstrained layout of
/// [`ModelSpec`]. `beta` and `gamma` are mapped through [`TrendBasis`].
/// Abilities are sampled as deviations from the trend, rotated into
/// [`AbilityBasis`] and scaled by `sigma_a^w` with a weight per rank, and
/// the target includes the log Jacobian `sum(w) * log sigma_a`. Scales are
/// dropped when they are fixed. Recorded draws are always on the model
/// scale.
///
/// The likelihood sum runs sequentially in match order, so evaluations are
/// bitwise reproducible.
#[derive(Debug, Clone)]
pub struct HierarchicalPosterior {
    evaluator: Evaluator,
    fixed: Option<FixedScales>,
    trend: TrendBasis,
    abilities: AbilityBasis,
    /// Non-centering weight per ability, ranks `2..=R`.
    noncentering: Vec<f64>,
}

impl HierarchicalPosterior {
    pub fn new(spec: &ModelSpec, data: &EncodedDataset) -> Result<Self, ModelError> {
        Ok(Self {
            evaluator: Evaluator::new(spec, data)?,
            fixed: None,
            trend: TrendBasis::new(spec.ranks),
            abilities: AbilityBasis::new(spec.ranks - 1),
            noncentering: default_noncentering(spec, data),
        })
    }

    /// Uses the same weight `w` for every ability in
    /// `a_j = mu_j + sigma_a^w * (V z)_j`. Zero samples deviations from the
    /// trend; one samples them in units of `sigma_a`.
    pub fn with_noncentering(mut self, w: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&w) {
            return Err(ModelError::InvalidNoncentering(w));
        }
        self.noncentering.iter_mut().for_each(|v| *v = w);
        Ok(self)
    }

    pub fn noncentering(&self) -> &[f64] {
        &self.noncentering
    }

    /// Trend means `mu_j` for ranks `2..=R` in ability order.
    fn trend_means(&self, beta: f64, gamma: f64) -> impl Iterator<Item = f64> {
        (1..=self.abilities.n).map(move |t| {
            let t = t as f64;
            beta * t + gamma * t.sqrt()
        })
    }

    /// Pins both scales; the sampled dimension drops by two.
    pub fn with_fixed_scales(mut self, scales: FixedScales) -> Result<Self, ModelError> {
        let ok = |s: f64| s > 0.0 && s.is_finite();
        if !ok(scales.sigma_y) || !ok(scales.sigma_a) {
            return Err(ModelError::InvalidFixedScales(scales.sigma_y, scales.sigma_a));
        }
        self.fixed = Some(scales);
        Ok(self)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.evaluator.spec
    }

    pub fn fixed_scales(&self) -> Option<FixedScales> {
        self.fixed
    }

    /// Maps a sampler position to the full unconstrained model layout.
    pub fn model_position(&self, position: &[f64]) -> Vec<f64> {
        let mut full = position.to_vec();
        if let Some(s) = self.fixed {
            full.extend([s.sigma_y.ln(), s.sigma_a.ln()]);
        }
        let b = self.evaluator.spec.beta_index();
        (full[b], full[b + 1]) = self.trend.to_model(full[b], full[b + 1]);
        let n = self.abilities.n;
        self.abilities.to_model(&position[..n], &mut full[..n]);
        let log_sigma_a = full[full.len() - 1];
        let (beta, gamma) = (full[b], full[b + 1]);
        for ((a, mu), w) in full[..n].iter_mut().zip(self.trend_means(beta, gamma)).zip(&self.noncentering) {
            *a = mu + (w * log_sigma_a).exp() * *a;
        }
        full
    }

    /// Inverse of [`Self::model_position`]. Fixed scales are dropped.
    pub fn sampler_position(&self, model: &[f64]) -> Vec<f64> {
        let mut x = model[..self.dim()].to_vec();
        let b = self.evaluator.spec.beta_index();
        (x[b], x[b + 1]) = self.trend.to_sampler(model[b], model[b + 1]);
        let n = self.abilities.n;
        let log_sigma_a = model[model.len() - 1];
        let deviations: Vec<f64> = model[..n]
            .iter()
            .zip(self.trend_means(model[b], model[b + 1]))
            .zip(&self.noncentering)
            .map(|((a, mu), w)| (a - mu) / (w * log_sigma_a).exp())
            .collect();
        self.abilities.to_sampler(&deviations, &mut x[..n]);
        x
    }
}

impl LogDensity for HierarchicalPosterior {
    fn dim(&self) -> usize {
        let full = self.evaluator.spec.dimension();
        if self.fixed.is_some() {
            full - 2
        } else {
            full
        }
    }

    fn log_density_gradient(&self, position: &[f64], gradient: &mut [f64]) -> f64 {
        if position.iter().any(|v| !v.is_finite()) {
            return f64::NAN;
        }
        let full = self.model_position(position);
        let mut full_grad = vec![0.0; full.len()];
        let mut lp = self.evaluator.eval(&full, &mut full_grad).total();
        let n = self.abilities.n;
        let b = self.evaluator.spec.beta_index();
        let last = full.len() - 1;
        let (mut g_beta, mut g_gamma, mut g_log_scale) = (0.0, 0.0, 0.0);
        for (k, mu) in self.trend_means(full[b], full[b + 1]).enumerate() {
            let (g, t, w) = (full_grad[k], (k + 1) as f64, self.noncentering[k]);
            g_beta += g * t;
            g_gamma += g * t.sqrt();
            g_log_scale += g * w * (full[k] - mu);
            full_grad[k] = g * (w * full[last]).exp();
        }
        full_grad[b] += g_beta;
        full_grad[b + 1] += g_gamma;
        if self.fixed.is_none() {
            let total: f64 = self.noncentering.iter().sum();
            lp += total * full[last];
            full_grad[last] += g_log_scale + total;
        }
        (full_grad[b], full_grad[b + 1]) = self.trend.pull_back(full_grad[b], full_grad[b + 1]);
        self.abilities.to_sampler(&full_grad[..n], &mut gradient[..n]);
        gradient[n..].copy_from_slice(&full_grad[n..position.len()]);
        lp
    }

    fn param_names(&self) -> Vec<String> {
        self.evaluator.spec.parameter_names()
    }

    fn constrain(&self, position: &[f64]) -> Vec<f64> {
        let mut out = self.model_position(position);
        let n = out.len();
        out[n - 2] = out[n - 2].exp();
        out[n - 1] = out[n - 1].exp();
        out
    }

    fn pinned(&self) -> Vec<bool> {
        let n = self.evaluator.spec.dimension();
        let mut pinned = vec![false; n];
        if self.fixed.is_some() {
            pinned[n - 2] = true;
            pinned[n - 1] = true;
        }
        pinned
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_tracked_countries, Provenance};

    fn cc(s: &str) -> CountryCode {
        CountryCode::new(s).unwrap()
    }

    fn dataset(matches: Vec<EncodedMatch>) -> EncodedDataset {
        EncodedDataset {
            matches,
            max_rank: 30,
            tracked_countries: default_tracked_countries(),
            provenance: Provenance::default(),
        }
    }

    fn single(rank1: usize, rank2: usize, home: i8, venue: &str, y: f64) -> EncodedMatch {
        let venue = cc(venue);
        EncodedMatch {
            rank1,
            rank2,
            home,
            country_home: crate::data::country_indicators(home, Some(&venue), &default_tracked_countries()),
            y,
            venue: Some(venue),
        }
    }

    #[test]
    fn spec_dimensions() {
        let g = make_spec(ModelVariant::Global, 30, &[]).unwrap();
        assert_eq!(g.dimension(), 34);
        assert_eq!(g.parameter_names().len(), 34);
        let c = make_spec(ModelVariant::CountryIntercepts, 30, &default_tracked_countries()).unwrap();
        assert_eq!(c.dimension(), 37);
        assert_eq!(make_spec(ModelVariant::Global, 1, &[]), Err(ModelError::TooFewRanks(1)));
        // Tracked countries are meaningless for the global variant.
        let g2 = make_spec(ModelVariant::Global, 30, &default_tracked_countries()).unwrap();
        assert_eq!(g2.dimension(), 34);
    }

    #[test]
    fn ability_lookup() {
        let spec = make_spec(ModelVariant::Global, 30, &[]).unwrap();
        let mut p = ParameterVector::zeros(&spec);
        p.set_ability(5, -0.7).unwrap();
        assert_eq!(p.ability(1).unwrap(), 0.0);
        assert_eq!(p.ability(5).unwrap(), -0.7);
        assert_eq!(p.ability(31), Err(ModelError::RankOutOfRange { rank: 31, max: 30 }));
        assert!(p.set_ability(1, 2.0).is_err());
    }

    #[test]
    fn predictor_means() {
        let spec = make_spec(ModelVariant::Global, 30, &[]).unwrap();
        let mut p = ParameterVector::zeros(&spec);
        p.abilities[0] = -0.5;
        assert_eq!(predictor_mean(&p, &single(4, 4, 0, "FRA", 1.0)).unwrap(), 0.0);
        assert_eq!(predictor_mean(&p, &single(1, 2, 0, "FRA", 1.0)).unwrap(), 0.5);

        let spec = make_spec(ModelVariant::CountryIntercepts, 30, &default_tracked_countries()).unwrap();
        let mut p = ParameterVector::zeros(&spec);
        p.h = 0.4;
        p.country_h[0] = 0.05;
        let mu = predictor_mean(&p, &single(7, 7, 1, "EGY", 1.0)).unwrap();
        // Independent hand evaluation: 0 - 0 + 0.4 * 1 + 0.05 * 1.
        assert!((mu - 0.45).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_data_term() {
        let spec = make_spec(ModelVariant::Global, 30, &[]).unwrap();
        let p = ParameterVector::zeros(&spec);
        let terms = log_posterior_terms(&p, &dataset(vec![single(1, 1, 0, "FRA", 3.0)]), &spec).unwrap();
        let expected = -0.5 * 9.0 - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((terms.likelihood - expected).abs() < 1e-14);
    }

    #[test]
    fn h_gradient_by_hand() {
        let spec = make_spec(ModelVariant::Global, 30, &[]).unwrap();
        let mut p = ParameterVector::zeros(&spec);
        p.h = 0.3;
        p.log_sigma_y = 0.4f64.ln();
        p.set_ability(3, 0.2).unwrap();
        let y = 2.0;
        let data = dataset(vec![single(3, 1, 1, "FRA", y)]);
        let res = log_posterior(&p, &data, &spec).unwrap();
        let mu = 0.2 + 0.3;
        let sigma_y = 0.4;
        let expected = (y - mu) / (sigma_y * sigma_y) - p.h / 0.25;
        assert!((res.gradient[spec.h_index()] - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = make_spec(ModelVariant::Global, 30, &[]).unwrap();
        let mut p = ParameterVector::zeros(&spec);
        let data = dataset(vec![single(1, 2, 0, "FRA", 1.0)]);
        p.h = f64::NAN;
        assert_eq!(log_posterior(&p, &data, &spec), Err(ModelError::NonFinite("h".into())));
        let p = ParameterVector::zeros(&make_spec(ModelVariant::Global, 10, &[]).unwrap());
        assert!(matches!(log_posterior(&p, &data, &spec), Err(ModelError::DimensionMismatch { .. })));
        let p = ParameterVector::zeros(&spec);
        assert_eq!(log_posterior(&p, &dataset(vec![]), &spec), Err(ModelError::EmptyData));
    }

    #[test]
    fn fixed_scale_target_drops_scale_coordinates() {
        let spec = make_spec(ModelVariant::Global, 5, &[]).unwrap();
        let data = EncodedDataset { max_rank: 5, ..dataset(vec![single(1, 2, 1, "FRA", 1.0)]) };
        let target = HierarchicalPosterior::new(&spec, &data)
            .unwrap()
            .with_fixed_scales(FixedScales { sigma_y: 1.5, sigma_a: 0.5 })
            .unwrap();
        assert_eq!(target.dim(), spec.dimension() - 2);
        let x = vec![0.1; target.dim()];
        let mut g = vec![0.0; target.dim()];
        let lp = target.log_density_gradient(&x, &mut g);

        let full = target.model_position(&x);
        assert_eq!(full.len(), spec.dimension());
        assert_eq!(full[spec.dimension() - 2], 1.5f64.ln());
        let p = ParameterVector::from_slice(&spec, &full).unwrap();
        let res = log_posterior(&p, &data, &spec).unwrap();
        assert_eq!(lp, res.log_density);
        let (n, b) = (spec.ranks - 1, spec.beta_index());
        assert_eq!(g[n..b], res.gradient[n..b]);
        assert_eq!(target.sampler_position(&full).len(), target.dim());
        let constrained = target.constrain(&x);
        assert!((constrained[spec.dimension() - 2] - 1.5).abs() < 1e-15);
        assert!(HierarchicalPosterior::new(&spec, &data)
            .unwrap()
            .with_fixed_scales(FixedScales { sigma_y: 0.0, sigma_a: 1.0 })
            .is_err());
    }

    #[test]
    fn ability_basis_is_orthonormal() {
        for n in [1, 2, 7, 29] {
            let basis = AbilityBasis::new(n);
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = (0..n).map(|r| basis.columns[i * n + r] * basis.columns[j * n + r]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12, "n={n} ({i},{j}) {dot}");
                }
            }
        }
    }

    #[test]
    fn trend_basis_round_trip_and_gradient() {
        for ranks in [2, 5, 30] {
            let basis = TrendBasis::new(ranks);
            let (t1, t2) = basis.to_sampler(-0.1, -0.2);
            let (beta, gamma) = basis.to_model(t1, t2);
            assert!((beta + 0.1).abs() < 1e-14 && (gamma + 0.2).abs() < 1e-14);
        }

        let spec = make_spec(ModelVariant::CountryIntercepts, 30, &default_tracked_countries()).unwrap();
        let data =
            dataset(vec![single(1, 2, 1, "EGY", 2.0), single(7, 3, -1, "USA", -1.0), single(30, 12, 0, "FRA", 3.0)]);
        let target = HierarchicalPosterior::new(&spec, &data).unwrap();
        let x: Vec<f64> = (0..target.dim()).map(|i| 0.3 * ((i as f64) * 0.7).sin()).collect();
        let mut g = vec![0.0; target.dim()];
        target.log_density_gradient(&x, &mut g);
        let mut scratch = vec![0.0; target.dim()];
        for i in 0..target.dim() {
            let (mut hi, mut lo) = (x.clone(), x.clone());
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (target.log_density_gradient(&hi, &mut scratch) - target.log_density_gradient(&lo, &mut scratch))
                / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0), "coordinate {i}: {fd} vs {}", g[i]);
        }
        let back = target.sampler_position(&target.model_position(&x));
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
