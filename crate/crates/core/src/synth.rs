//! Synthetic match data from known parameters, and the exact Gaussian
//! posterior obtained when both scales are held fixed.

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    country_indicators, CountryCode, EncodedDataset, EncodedMatch, MatchFormat, MatchRecord, Provenance, Termination,
    Tour,
};
use crate::model::{ModelError, ModelSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("schedule entry {index}: {message}")]
    Schedule { index: usize, message: String },
    #[error("margin {0} is not a best-of-five outcome")]
    NotDiscrete(f64),
    #[error("oracle precision matrix is not positive definite")]
    Singular,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Parameters of the generating process. `abilities[0]` is rank 1 and must
/// be zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub abilities: Vec<f64>,
    pub h: f64,
    pub tracked_countries: Vec<CountryCode>,
    pub country_h: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub sigma_y: f64,
    pub sigma_a: f64,
}

pub const DEFAULT_BETA: f64 = -0.1;
pub const DEFAULT_GAMMA: f64 = -0.2;
pub const DEFAULT_SIGMA_A: f64 = 0.3;

fn trend(beta: f64, gamma: f64, rank: usize) -> f64 {
    let offset = (rank - 1) as f64;
    beta * offset + gamma * offset.sqrt()
}

impl TrueParams {
    /// Abilities exactly on the default trend, no country effects.
    pub fn on_trend(ranks: usize, h: f64, sigma_y: f64) -> Self {
        Self {
            abilities: (1..=ranks).map(|j| trend(DEFAULT_BETA, DEFAULT_GAMMA, j)).collect(),
            h,
            tracked_countries: Vec::new(),
            country_h: Vec::new(),
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            sigma_y,
            sigma_a: DEFAULT_SIGMA_A,
        }
    }

    /// Redraws abilities 2..R around the trend with sd `sigma_a`.
    pub fn with_ability_noise(mut self, seed: u64) -> Result<Self, SynthError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.sigma_a).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
        for j in 2..=self.ranks() {
            self.abilities[j - 1] = trend(self.beta, self.gamma, j) + noise.sample(&mut rng);
        }
        Ok(self)
    }

    pub fn with_countries(mut self, tracked: &[CountryCode], effects: &[f64]) -> Result<Self, SynthError> {
        if tracked.len() != effects.len() {
            return Err(SynthError::InvalidParams(format!(
                "{} countries but {} effects",
                tracked.len(),
                effects.len()
            )));
        }
        self.tracked_countries = tracked.to_vec();
        self.country_h = effects.to_vec();
        Ok(self)
    }

    pub fn ranks(&self) -> usize {
        self.abilities.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.abilities.len() < 2 {
            return bad(format!("need at least 2 ranks, got {}", self.abilities.len()));
        }
        if self.abilities[0] != 0.0 {
            return bad(format!("ability of rank 1 must be 0, got {}", self.abilities[0]));
        }
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            return bad(format!("sigma_y must be positive, got {}", self.sigma_y));
        }
        if !(self.sigma_a > 0.0 && self.sigma_a.is_finite()) {
            return bad(format!("sigma_a must be positive, got {}", self.sigma_a));
        }
        if self.tracked_countries.len() != self.country_h.len() {
            return bad("country effects do not match tracked countries".into());
        }
        let all = self.abilities.iter().chain(&self.country_h).chain([&self.h, &self.beta, &self.gamma]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite value".into());
        }
        Ok(())
    }

    /// Constrained values in draw-column order for `spec`, so they can be
    /// compared with posterior summaries by name.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            (2..=self.ranks()).map(|j| (format!("a[{j}]"), self.abilities[j - 1])).collect();
        out.push(("h".into(), self.h));
        for (c, v) in self.tracked_countries.iter().zip(&self.country_h) {
            out.push((format!("h_{c}"), *v));
        }
        out.extend([
            ("beta".into(), self.beta),
            ("gamma".into(), self.gamma),
            ("sigma_y".into(), self.sigma_y),
            ("sigma_a".into(), self.sigma_a),
        ]);
        out
    }

    fn predictor(&self, m: &EncodedMatch) -> f64 {
        let mut mu = self.abilities[m.rank1 - 1] - self.abilities[m.rank2 - 1] + self.h * f64::from(m.home);
        for (h_c, &b) in self.country_h.iter().zip(&m.country_home) {
            mu += h_c * f64::from(b);
        }
        mu
    }
}

/// A match to simulate: who plays whom, where, and who is at home.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledMatch {
    pub rank1: usize,
    pub rank2: usize,
    /// +1 player 1 at home, -1 player 2 at home, 0 neither.
    pub home: i8,
    pub venue: Option<CountryCode>,
}

/// Venue mix and share of matches with exactly one home player.
const VENUE_WEIGHTS: [(Option<&str>, f64, f64); 4] =
    [(Some("EGY"), 329.0, 0.55), (Some("ENG"), 252.0, 0.35), (Some("USA"), 426.0, 0.20), (None, 333.0, 0.10)];

const OTHER_VENUES: [&str; 5] = ["FRA", "QAT", "HKG", "MAS", "SUI"];

/// A schedule of `n` matches between distinct ranks drawn uniformly from
/// `1..=ranks`, with venues and home indicators in roughly the proportions
/// of a professional season.
pub fn venue_mix_schedule(n: usize, ranks: usize, seed: u64) -> Result<Vec<ScheduledMatch>, SynthError> {
    if ranks < 2 {
        return Err(SynthError::InvalidParams(format!("need at least 2 ranks, got {ranks}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = VENUE_WEIGHTS.iter().map(|v| v.1).sum();
    let mut schedule = Vec::with_capacity(n);
    for _ in 0..n {
        let rank1 = rng.random_range(1..=ranks);
        let mut rank2 = rng.random_range(1..ranks);
        if rank2 >= rank1 {
            rank2 += 1;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = VENUE_WEIGHTS[VENUE_WEIGHTS.len() - 1];
        for w in VENUE_WEIGHTS {
            if u < w.1 {
                pick = w;
                break;
            }
            u -= w.1;
        }
        let venue = match pick.0 {
            Some(code) => code,
            None => OTHER_VENUES[rng.random_range(0..OTHER_VENUES.len())],
        };
        let home = if rng.random::<f64>() < pick.2 {
            if rng.random::<bool>() {
                1
            } else {
                -1
            }
        } else {
            0
        };
        schedule.push(ScheduledMatch {
            rank1,
            rank2,
            home,
            venue: Some(CountryCode::new(venue).expect("static code")),
        });
    }
    Ok(schedule)
}

/// Nearest best-of-five margin: magnitudes clamp to 3 and values in
/// (-1.5, 1.5) go to -1 or +1 by sign.
pub fn discretize(y: f64) -> f64 {
    let magnitude = if y.abs() < 1.5 {
        1.0
    } else if y.abs() < 2.5 {
        2.0
    } else {
        3.0
    };
    if y < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Draws one margin per scheduled match from the model. With `discretize`
/// the margins are snapped to best-of-five outcomes.
pub fn generate(
    truth: &TrueParams,
    schedule: &[ScheduledMatch],
    seed: u64,
    discretize_margins: bool,
) -> Result<EncodedDataset, SynthError> {
    truth.validate()?;
    let ranks = truth.ranks();
    let noise = Normal::new(0.0, truth.sigma_y).map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matches = Vec::with_capacity(schedule.len());
    for (index, s) in schedule.iter().enumerate() {
        for rank in [s.rank1, s.rank2] {
            if rank == 0 || rank > ranks {
                return Err(SynthError::Schedule { index, message: format!("rank {rank} outside 1..={ranks}") });
            }
        }
        if !(-1..=1).contains(&s.home) {
            return Err(SynthError::Schedule { index, message: format!("home indicator {}", s.home) });
        }
        let mut m = EncodedMatch {
            rank1: s.rank1,
            rank2: s.rank2,
            home: s.home,
            country_home: country_indicators(s.home, s.venue.as_ref(), &truth.tracked_countries),
            y: 0.0,
            venue: s.venue.clone(),
        };
        let y = truth.predictor(&m) + noise.sample(&mut rng);
        m.y = if discretize_margins { discretize(y) } else { y };
        matches.push(m);
    }
    let n = matches.len();
    Ok(EncodedDataset {
        matches,
        max_rank: ranks,
        tracked_countries: truth.tracked_countries.clone(),
        provenance: Provenance { input: n, retained: n, ..Default::default() },
    })
}

const AWAY_COUNTRIES: [&str; 4] = ["AUS", "NZL", "CAN", "GER"];

/// Raw match records that encode back to `dataset`. Margins must be
/// best-of-five outcomes. Player countries are chosen to reproduce each
/// home indicator.
pub fn to_match_records(dataset: &EncodedDataset) -> Result<Vec<MatchRecord>, SynthError> {
    let start = NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date");
    let neutral = CountryCode::new("XXN").expect("static code");
    dataset
        .matches
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let (won1, won2) = match m.y {
                y if y == 3.0 => (3, 0),
                y if y == 2.0 => (3, 1),
                y if y == 1.0 => (3, 2),
                y if y == -1.0 => (2, 3),
                y if y == -2.0 => (1, 3),
                y if y == -3.0 => (0, 3),
                y => return Err(SynthError::NotDiscrete(y)),
            };
            let venue = m.venue.clone().unwrap_or_else(|| neutral.clone());
            let away = |offset: usize| {
                AWAY_COUNTRIES
                    .iter()
                    .map(|c| CountryCode::new(c).expect("static code"))
                    .cycle()
                    .skip(offset)
                    .find(|c| *c != venue)
                    .expect("pool has more than one country")
            };
            let (c1, c2) = match m.home {
                1 => (venue.clone(), away(i)),
                -1 => (away(i), venue.clone()),
                _ => (away(i), away(i + 1)),
            };
            Ok(MatchRecord {
                match_id: format!("syn-{}", i + 1),
                date: start.checked_add_days(Days::new(i as u64 / 8)).expect("date in range"),
                player1_name: format!("Player {}", m.rank1),
                player2_name: format!("Player {}", m.rank2),
                player1_country: c1,
                player2_country: c2,
                venue_country: venue,
                player1_rank: m.rank1,
                player2_rank: m.rank2,
                games_won_p1: won1,
                games_won_p2: won2,
                format: MatchFormat::BestOf5,
                termination: Termination::Completed,
                tour: Tour::Gold,
            })
        })
        .collect()
}

/// Exact posterior of the Gaussian coordinates given fixed scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `a[2]..a[R]`, `h`, `h_<CC>`, `beta`, `gamma`.
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<Vec<f64>>,
}

impl OracleResult {
    pub fn sd(&self, i: usize) -> f64 {
        self.cov[i][i].sqrt()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Solves the normal equations of the linear-Gaussian model obtained by
/// fixing `sigma_y` and `sigma_a`. The ability prior enters as one extra
/// Gaussian observation per rank involving `a_j`, `beta` and `gamma`.
pub fn conjugate_oracle(
    data: &EncodedDataset,
    spec: &ModelSpec,
    sigma_y: f64,
    sigma_a: f64,
) -> Result<OracleResult, SynthError> {
    for s in [sigma_y, sigma_a] {
        if !(s > 0.0 && s.is_finite()) {
            return Err(SynthError::InvalidParams(format!("scales must be positive, got {s}")));
        }
    }
    let dim = spec.dimension() - 2;
    let h = spec.h_index();
    let b = spec.beta_index();
    let columns = spec
        .tracked_countries
        .iter()
        .map(|c| data.country_index(c).ok_or_else(|| ModelError::MissingCountry(c.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut precision = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut add = |row: &[(usize, f64)], target: f64, weight: f64| {
        for &(i, xi) in row {
            rhs[i] += weight * xi * target;
            for &(j, xj) in row {
                precision[(i, j)] += weight * xi * xj;
            }
        }
    };

    let w_y = 1.0 / (sigma_y * sigma_y);
    for m in &data.matches {
        for rank in [m.rank1, m.rank2] {
            if rank == 0 || rank > spec.ranks {
                return Err(ModelError::DataRanks { data: rank, model: spec.ranks }.into());
            }
        }
        let mut row = Vec::with_capacity(4);
        if m.rank1 > 1 {
            row.push((m.rank1 - 2, 1.0));
        }
        if m.rank2 > 1 {
            row.push((m.rank2 - 2, -1.0));
        }
        row.push((h, f64::from(m.home)));
        for (k, &col) in columns.iter().enumerate() {
            row.push((spec.country_index(k), f64::from(m.country_home[col])));
        }
        add(&row, m.y, w_y);
    }

    let w_a = 1.0 / (sigma_a * sigma_a);
    for j in 2..=spec.ranks {
        let offset = (j - 1) as f64;
        add(&[(j - 2, 1.0), (b, -offset), (b + 1, -offset.sqrt())], 0.0, w_a);
    }
    let p = &spec.priors;
    add(&[(h, 1.0)], 0.0, 1.0 / (p.h * p.h));
    for k in 0..spec.n_countries() {
        add(&[(spec.country_index(k), 1.0)], 0.0, 1.0 / (p.country * p.country));
    }
    add(&[(b, 1.0)], 0.0, 1.0 / (p.beta * p.beta));
    add(&[(b + 1, 1.0)], 0.0, 1.0 / (p.gamma * p.gamma));

    let chol = precision.cholesky().ok_or(SynthError::Singular)?;
    let mean = chol.solve(&rhs);
    let cov = chol.inverse();
    let cov = (0..dim).map(|i| (0..dim).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect()).collect();
    let mut names = spec.parameter_names();
    names.truncate(dim);
    Ok(OracleResult { names, mean: mean.iter().copied().collect(), cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_dataset, filter_matches, ColumnMapping};
    use crate::model::{make_spec, ModelVariant};

    fn cc(s: &str) -> CountryCode {
        CountryCode::new(s).unwrap()
    }

    fn one(rank1: usize, rank2: usize, home: i8) -> ScheduledMatch {
        ScheduledMatch { rank1, rank2, home, venue: Some(cc("EGY")) }
    }

    #[test]
    fn degenerate_noise_snaps_to_nearest_outcome() {
        let mut truth = TrueParams::on_trend(5, 2.4, 1e-9);
        truth.abilities = vec![0.0; 5];
        let d = generate(&truth, &vec![one(3, 3, 1); 50], 1, true).unwrap();
        assert!(d.matches.iter().all(|m| m.y == 2.0));
    }

    #[test]
    fn discretize_boundaries() {
        let cases = [(0.2, 1.0), (-0.2, -1.0), (1.49, 1.0), (1.5, 2.0), (-2.6, -3.0), (9.0, 3.0), (-9.0, -3.0)];
        for (y, want) in cases {
            assert_eq!(discretize(y), want, "y = {y}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let truth = TrueParams::on_trend(30, 0.4, 1.9).with_ability_noise(3).unwrap();
        let sched = venue_mix_schedule(200, 30, 9).unwrap();
        assert_eq!(generate(&truth, &sched, 5, true).unwrap(), generate(&truth, &sched, 5, true).unwrap());
        assert_ne!(generate(&truth, &sched, 5, true).unwrap(), generate(&truth, &sched, 6, true).unwrap());
    }

    #[test]
    fn continuous_margins_have_the_right_mean() {
        let mut truth = TrueParams::on_trend(2, 0.4, 1.9);
        truth.abilities = vec![0.0, 0.0];
        let d = generate(&truth, &vec![one(2, 2, 1); 100_000], 11, false).unwrap();
        let mean = d.matches.iter().map(|m| m.y).sum::<f64>() / d.len() as f64;
        assert!((mean - 0.4).abs() < 0.02, "{mean}");
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let truth = TrueParams::on_trend(5, 0.4, 1.9);
        assert!(matches!(generate(&truth, &[one(1, 6, 0)], 0, true), Err(SynthError::Schedule { index: 0, .. })));
        let mut bad = truth.clone();
        bad.sigma_y = 0.0;
        assert!(matches!(generate(&bad, &[one(1, 2, 0)], 0, true), Err(SynthError::InvalidParams(_))));
        bad = truth.clone();
        bad.abilities[0] = 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_proportions() {
        let sched = venue_mix_schedule(20_000, 30, 4).unwrap();
        assert!(sched.iter().all(|s| s.rank1 != s.rank2 && s.rank1 <= 30 && s.rank2 <= 30));
        let share =
            |code: &str| sched.iter().filter(|s| s.venue.as_ref().unwrap().as_str() == code).count() as f64 / 20_000.0;
        assert!((share("USA") - 426.0 / 1340.0).abs() < 0.015);
        assert!((share("EGY") - 329.0 / 1340.0).abs() < 0.015);
        let egypt: Vec<_> = sched.iter().filter(|s| s.venue.as_ref().unwrap().as_str() == "EGY").collect();
        let home_share = egypt.iter().filter(|s| s.home != 0).count() as f64 / egypt.len() as f64;
        assert!((home_share - 0.55).abs() < 0.03);
    }

    #[test]
    fn records_encode_back_to_the_dataset() {
        let tracked = crate::data::default_tracked_countries();
        let truth = TrueParams::on_trend(30, 0.4, 1.9).with_countries(&tracked, &[0.05, 0.0, -0.1]).unwrap();
        let d = generate(&truth, &venue_mix_schedule(300, 30, 2).unwrap(), 8, true).unwrap();
        let records = to_match_records(&d).unwrap();
        let mut buf = Vec::new();
        crate::data::write_matches(&mut buf, &records).unwrap();
        let read = crate::data::read_matches(buf.as_slice(), &ColumnMapping::default()).unwrap();
        let (kept, prov) = filter_matches(&read, 30);
        let again = encode_dataset(&kept, 30, &tracked, prov).unwrap();
        assert_eq!(again.matches, d.matches);

        let mut continuous = d.clone();
        continuous.matches[0].y = 0.7;
        assert_eq!(to_match_records(&continuous), Err(SynthError::NotDiscrete(0.7)));
    }

    fn dataset(matches: Vec<EncodedMatch>, ranks: usize) -> EncodedDataset {
        EncodedDataset { matches, max_rank: ranks, tracked_countries: vec![], provenance: Provenance::default() }
    }

    #[test]
    fn single_match_conjugate_update() {
        let m = EncodedMatch { rank1: 1, rank2: 1, home: 1, country_home: vec![], y: 1.0, venue: None };
        let spec = make_spec(ModelVariant::Global, 3, &[]).unwrap();
        let o = conjugate_oracle(&dataset(vec![m], 3), &spec, 1.0, 0.3).unwrap();
        assert!((o.mean[o.index_of("h").unwrap()] - 0.2).abs() < 1e-12);
        assert!((o.sd(o.index_of("h").unwrap()) - (1.0f64 / 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn prior_only_means_are_zero() {
        let spec = make_spec(ModelVariant::Global, 10, &[]).unwrap();
        let o = conjugate_oracle(&dataset(vec![], 10), &spec, 1.9, 0.3).unwrap();
        assert_eq!(o.mean.len(), spec.dimension() - 2);
        assert!(o.mean.iter().all(|m| m.abs() < 1e-12));
        // a_j = beta (j-1) + gamma sqrt(j-1) + noise, so its prior variance is
        // 4 (j-1)^2 + 4 (j-1) + sigma_a^2.
        let a3 = o.index_of("a[3]").unwrap();
        assert!((o.cov[a3][a3] - (16.0 + 8.0 + 0.09)).abs() < 1e-9);
    }

    #[test]
    fn covariance_is_symmetric_positive_definite() {
        let tracked = crate::data::default_tracked_countries();
        let truth = TrueParams::on_trend(30, 0.4, 1.9).with_countries(&tracked, &[0.1, 0.0, 0.0]).unwrap();
        let d = generate(&truth, &venue_mix_schedule(500, 30, 1).unwrap(), 2, true).unwrap();
        let spec = make_spec(ModelVariant::CountryIntercepts, 30, &tracked).unwrap();
        let o = conjugate_oracle(&d, &spec, 1.9, 0.3).unwrap();
        let n = o.mean.len();
        let cov = DMatrix::from_fn(n, n, |i, j| o.cov[i][j]);
        assert!((&cov - cov.transpose()).amax() < 1e-12);
        assert!(cov.symmetric_eigenvalues().iter().all(|&e| e > 0.0));
    }

    #[test]
    fn mean_moves_from_prior_towards_least_squares() {
        // With data only on h, the h mean is a precision-weighted blend of 0
        // and the sample mean, approaching the sample mean as sigma_y falls.
        let ys = [1.0, 2.0, -1.0, 3.0];
        let matches = ys
            .iter()
            .map(|&y| EncodedMatch { rank1: 2, rank2: 2, home: 1, country_home: vec![], y, venue: None })
            .collect();
        let d = dataset(matches, 2);
        let spec = make_spec(ModelVariant::Global, 2, &[]).unwrap();
        let ls = ys.iter().sum::<f64>() / 4.0;
        let mut last = 0.0;
        for sigma_y in [4.0, 1.0, 0.1] {
            let o = conjugate_oracle(&d, &spec, sigma_y, 0.3).unwrap();
            let got = o.mean[o.index_of("h").unwrap()];
            let w = 4.0 / (sigma_y * sigma_y);
            assert!((got - w * ls / (w + 4.0)).abs() < 1e-12);
            assert!(got > last && got < ls);
            last = got;
        }
    }
}
