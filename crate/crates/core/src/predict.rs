//! Predictive margins, 68% intervals, win probabilities and discrete
//! outcome probabilities for matchups between rank slots.
//!
//! By default predictions integrate over the posterior: each draw
//! contributes `normal(mu_s, sigma_y_s)` and the summary describes the
//! resulting mixture. Plug-in mode instead uses a single normal at the
//! posterior means of the predictor and of `sigma_y`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::CountryCode;
use crate::model::ModelVariant;
use crate::sampler::PosteriorDraws;
use crate::stats::{mean, normal_cdf, normal_quantile, sorted_quantile};

#[derive(Debug, Error, PartialEq)]
pub enum PredictError {
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("query is for the {query:?} model but the draws come from the {draws:?} model")]
    VariantMismatch { query: ModelVariant, draws: ModelVariant },
    #[error("draws lack column {0}")]
    MissingColumn(String),
    #[error("no draws")]
    Empty,
    #[error("{given} actual outcomes for {queries} queries")]
    ActualsLength { given: usize, queries: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// Best-of-five margins in ascending order.
pub const OUTCOMES: [f64; 6] = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
/// Boundaries between adjacent entries of [`OUTCOMES`].
pub const CUT_POINTS: [f64; 5] = [-2.5, -1.5, 0.0, 1.5, 2.5];

/// `Phi(mu / sigma)`: probability that a `normal(mu, sigma)` margin is
/// positive.
pub fn win_probability(mu: f64, sigma: f64) -> Result<f64, PredictError> {
    if !(sigma > 0.0) {
        return Err(PredictError::InvalidSigma(sigma));
    }
    Ok(normal_cdf(mu / sigma))
}

/// Bins a `normal(mu, sigma)` margin onto [`OUTCOMES`] at [`CUT_POINTS`].
/// The central interval is split at zero, so a zero margin gets no mass.
pub fn discretize_margin(mu: f64, sigma: f64) -> Result<[f64; 6], PredictError> {
    if !(sigma > 0.0) {
        return Err(PredictError::InvalidSigma(sigma));
    }
    let cdf = CUT_POINTS.map(|c| normal_cdf((c - mu) / sigma));
    let mut probs = [0.0; 6];
    probs[0] = cdf[0];
    for k in 1..5 {
        probs[k] = cdf[k] - cdf[k - 1];
    }
    probs[5] = normal_cdf((mu - CUT_POINTS[4]) / sigma);
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupQuery {
    pub label: Option<String>,
    pub rank1: usize,
    pub rank2: usize,
    pub venue: Option<CountryCode>,
    pub p1_home: bool,
    pub p2_home: bool,
    pub variant: ModelVariant,
}

impl MatchupQuery {
    pub fn home(&self) -> i8 {
        i8::from(self.p1_home) - i8::from(self.p2_home)
    }

    /// The same matchup seen from player 2.
    pub fn swapped(&self) -> Self {
        Self { rank1: self.rank2, rank2: self.rank1, p1_home: self.p2_home, p2_home: self.p1_home, ..self.clone() }
    }

    pub fn display_label(&self) -> String {
        self.label.clone().unwrap_or_else(|| format!("#{} vs #{}", self.rank1, self.rank2))
    }
}

/// Predictive distribution of one matchup under one home setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginPrediction {
    pub mean_margin: f64,
    /// 16% and 84% quantiles of the predictive margin.
    pub interval68: (f64, f64),
    /// 16% and 84% quantiles of the linear predictor alone, without
    /// outcome noise.
    pub mean_interval68: (f64, f64),
    pub win_probability: f64,
    /// Probabilities of the margins in [`OUTCOMES`].
    pub discrete: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub with_home: MarginPrediction,
    pub without_home: MarginPrediction,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictOptions {
    pub plug_in: bool,
}

/// Column positions of the model parameters within a set of draws.
#[derive(Debug, Clone)]
struct FittedColumns {
    variant: ModelVariant,
    ranks: usize,
    abilities: Vec<usize>,
    h: usize,
    countries: Vec<(CountryCode, usize)>,
    sigma_y: usize,
}

impl FittedColumns {
    fn locate(draws: &PosteriorDraws) -> Result<Self, PredictError> {
        let need = |name: &str| draws.index_of(name).ok_or_else(|| PredictError::MissingColumn(name.into()));
        let mut abilities = Vec::new();
        while let Some(k) = draws.index_of(&format!("a[{}]", abilities.len() + 2)) {
            abilities.push(k);
        }
        if abilities.is_empty() {
            return Err(PredictError::MissingColumn("a[2]".into()));
        }
        let countries: Vec<(CountryCode, usize)> = draws
            .names()
            .iter()
            .enumerate()
            .filter_map(|(k, n)| {
                let code = n.strip_prefix("h_")?;
                CountryCode::new(code).ok().map(|c| (c, k))
            })
            .collect();
        Ok(Self {
            variant: if countries.is_empty() { ModelVariant::Global } else { ModelVariant::CountryIntercepts },
            ranks: abilities.len() + 1,
            abilities,
            h: need("h")?,
            countries,
            sigma_y: need("sigma_y")?,
        })
    }

    fn check(&self, query: &MatchupQuery) -> Result<(), PredictError> {
        if query.variant != self.variant {
            return Err(PredictError::VariantMismatch { query: query.variant, draws: self.variant });
        }
        for rank in [query.rank1, query.rank2] {
            if rank == 0 || rank > self.ranks {
                return Err(PredictError::RankOutOfRange { rank, max: self.ranks });
            }
        }
        Ok(())
    }

    fn ability(&self, draw: &[f64], rank: usize) -> f64 {
        if rank == 1 {
            0.0
        } else {
            draw[self.abilities[rank - 2]]
        }
    }

    /// Linear predictor for one draw; `home` false drops every home term.
    fn predictor(&self, draw: &[f64], query: &MatchupQuery, home: bool) -> f64 {
        let mut mu = self.ability(draw, query.rank1) - self.ability(draw, query.rank2);
        if home {
            let b = f64::from(query.home());
            mu += draw[self.h] * b;
            if let Some(venue) = &query.venue {
                if let Some((_, k)) = self.countries.iter().find(|(c, _)| c == venue) {
                    mu += draw[*k] * b;
                }
            }
        }
        mu
    }
}

/// Quantile of an equally weighted normal mixture by bisection on its CDF.
fn mixture_quantile(components: &[(f64, f64)], p: f64) -> f64 {
    if let [(mu, sigma)] = components {
        return mu + sigma * normal_quantile(p);
    }
    let cdf = |x: f64| components.iter().map(|&(m, s)| normal_cdf((x - m) / s)).sum::<f64>() / components.len() as f64;
    let spread = components.iter().map(|c| c.1).fold(0.0, f64::max) * 10.0;
    let mut lo = components.iter().map(|c| c.0).fold(f64::INFINITY, f64::min) - spread;
    let mut hi = components.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max) + spread;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn summarize_mixture(components: &[(f64, f64)]) -> MarginPrediction {
    let mus: Vec<f64> = components.iter().map(|c| c.0).collect();
    let mut sorted = mus.clone();
    sorted.sort_by(f64::total_cmp);
    let n = components.len() as f64;
    let mut discrete = [0.0; 6];
    let mut win = 0.0;
    for &(mu, sigma) in components {
        // sigma > 0 is checked by the caller.
        let probs = discretize_margin(mu, sigma).unwrap();
        for (d, p) in discrete.iter_mut().zip(probs) {
            *d += p / n;
        }
        win += normal_cdf(mu / sigma) / n;
    }
    MarginPrediction {
        mean_margin: mean(&mus),
        interval68: (mixture_quantile(components, 0.16), mixture_quantile(components, 0.84)),
        mean_interval68: (sorted_quantile(&sorted, 0.16), sorted_quantile(&sorted, 0.84)),
        win_probability: win,
        discrete,
    }
}

pub fn predictive_margin(
    draws: &PosteriorDraws,
    query: &MatchupQuery,
    options: PredictOptions,
) -> Result<PredictiveSummary, PredictError> {
    if draws.n_samples() == 0 {
        return Err(PredictError::Empty);
    }
    let cols = FittedColumns::locate(draws)?;
    cols.check(query)?;
    let predict = |home: bool| -> Result<MarginPrediction, PredictError> {
        let mut components = Vec::with_capacity(draws.n_chains() * draws.n_samples());
        for draw in draws.iter_draws() {
            let sigma = draw[cols.sigma_y];
            if !(sigma > 0.0) {
                return Err(PredictError::InvalidSigma(sigma));
            }
            components.push((cols.predictor(draw, query, home), sigma));
        }
        if options.plug_in {
            let mu = mean(&components.iter().map(|c| c.0).collect::<Vec<_>>());
            let sigma = mean(&components.iter().map(|c| c.1).collect::<Vec<_>>());
            let mut plug = summarize_mixture(&[(mu, sigma)]);
            // The credible interval of the mean still comes from the draws.
            plug.mean_interval68 = summarize_mixture(&components).mean_interval68;
            Ok(plug)
        } else {
            Ok(summarize_mixture(&components))
        }
    };
    Ok(PredictiveSummary { with_home: predict(true)?, without_home: predict(false)? })
}

/// One line of a matchup report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub matchup: String,
    pub rank1: usize,
    pub rank2: usize,
    pub venue: Option<String>,
    pub b: i8,
    pub mean_home: f64,
    pub lo68_home: f64,
    pub hi68_home: f64,
    pub mean_nohome: f64,
    pub lo68_nohome: f64,
    pub hi68_nohome: f64,
    pub win_prob_home: f64,
    pub win_prob_nohome: f64,
    pub actual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupReport {
    pub rows: Vec<ReportRow>,
}

/// Predictions with and without home advantage for each query, in input
/// order, optionally alongside the observed margins.
pub fn matchup_report(
    draws: &PosteriorDraws,
    queries: &[MatchupQuery],
    actuals: Option<&[Option<f64>]>,
    options: PredictOptions,
) -> Result<MatchupReport, PredictError> {
    if let Some(a) = actuals {
        if a.len() != queries.len() {
            return Err(PredictError::ActualsLength { given: a.len(), queries: queries.len() });
        }
    }
    let rows = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let s = predictive_margin(draws, q, options)?;
            Ok(ReportRow {
                matchup: q.display_label(),
                rank1: q.rank1,
                rank2: q.rank2,
                venue: q.venue.as_ref().map(|v| v.to_string()),
                b: q.home(),
                mean_home: s.with_home.mean_margin,
                lo68_home: s.with_home.interval68.0,
                hi68_home: s.with_home.interval68.1,
                mean_nohome: s.without_home.mean_margin,
                lo68_nohome: s.without_home.interval68.0,
                hi68_nohome: s.without_home.interval68.1,
                win_prob_home: s.with_home.win_probability,
                win_prob_nohome: s.without_home.win_probability,
                actual: actuals.and_then(|a| a[i]),
            })
        })
        .collect::<Result<Vec<_>, PredictError>>()?;
    Ok(MatchupReport { rows })
}

impl MatchupReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PredictError> {
        let io = |e: csv::Error| PredictError::Io(e.to_string());
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row).map_err(io)?;
        }
        wtr.flush().map_err(|e| PredictError::Io(e.to_string()))
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, PredictError> {
        let rows = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<Vec<ReportRow>, _>>()
            .map_err(|e| PredictError::Io(e.to_string()))?;
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cc(s: &str) -> CountryCode {
        CountryCode::new(s).unwrap()
    }

    /// Single-draw posterior over 5 ranks, global model.
    fn point_draws(h: f64, sigma_y: f64) -> PosteriorDraws {
        let names = ["a[2]", "a[3]", "a[4]", "a[5]", "h", "beta", "gamma", "sigma_y", "sigma_a"];
        let values = vec![-0.3, -0.5, -0.8, -1.0, h, -0.1, -0.1, sigma_y, 0.3];
        PosteriorDraws::from_values(names.iter().map(|s| s.to_string()).collect(), vec![values])
    }

    fn query(rank1: usize, rank2: usize, p1_home: bool, p2_home: bool) -> MatchupQuery {
        MatchupQuery {
            label: None,
            rank1,
            rank2,
            venue: Some(cc("EGY")),
            p1_home,
            p2_home,
            variant: ModelVariant::Global,
        }
    }

    #[test]
    fn reference_win_probabilities() {
        assert!((win_probability(0.3, 1.8).unwrap() - 0.5662).abs() < 1e-4);
        assert!((win_probability(0.4, 1.9).unwrap() - 0.5834).abs() < 1e-4);
        assert_eq!(win_probability(0.0, 2.7).unwrap(), 0.5);
        assert_eq!(win_probability(1.0, 0.0), Err(PredictError::InvalidSigma(0.0)));
    }

    #[test]
    fn discrete_masses() {
        let p = discretize_margin(0.0, 1.0).unwrap();
        // Phi(1.5) - 0.5 from an independent high-precision evaluation.
        assert!((p[3] - 0.433_192_798_731_141_9).abs() < 1e-12);
        assert!((p[2] - p[3]).abs() < 1e-15);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let far = discretize_margin(10.0, 0.1).unwrap();
        assert!((far[5] - 1.0).abs() < 1e-12);
        assert!(discretize_margin(0.0, -1.0).is_err());
    }

    #[test]
    fn single_draw_interval_is_normal_quantiles() {
        let s =
            predictive_margin(&point_draws(0.4, 1.9), &query(3, 3, true, false), PredictOptions::default()).unwrap();
        assert!((s.with_home.mean_margin - 0.4).abs() < 1e-15);
        let z = 0.994_457_883_209_753;
        assert!((s.with_home.interval68.0 - (0.4 - 1.9 * z)).abs() < 1e-9);
        assert!((s.with_home.interval68.1 - (0.4 + 1.9 * z)).abs() < 1e-9);
        assert!((s.with_home.interval68.0 + 1.49).abs() < 5e-3);
        assert!((s.with_home.interval68.1 - 2.29).abs() < 5e-3);
        assert_eq!(s.with_home.mean_margin - s.without_home.mean_margin, 0.4);
    }

    #[test]
    fn country_effect_enters_with_home_only() {
        let names = ["a[2]", "h", "h_EGY", "h_ENG", "beta", "gamma", "sigma_y", "sigma_a"];
        let draws = PosteriorDraws::from_values(
            names.iter().map(|s| s.to_string()).collect(),
            vec![vec![-0.5, 0.4, 0.05, -0.1, 0.0, 0.0, 1.9, 0.3]],
        );
        let mut q = query(1, 2, true, false);
        q.variant = ModelVariant::CountryIntercepts;
        let s = predictive_margin(&draws, &q, PredictOptions::default()).unwrap();
        assert!((s.with_home.mean_margin - s.without_home.mean_margin - 0.45).abs() < 1e-15);
        q.variant = ModelVariant::Global;
        assert!(matches!(
            predictive_margin(&draws, &q, PredictOptions::default()),
            Err(PredictError::VariantMismatch { .. })
        ));
    }

    #[test]
    fn query_errors() {
        let d = point_draws(0.4, 1.9);
        assert_eq!(
            predictive_margin(&d, &query(1, 6, false, false), PredictOptions::default()),
            Err(PredictError::RankOutOfRange { rank: 6, max: 5 })
        );
    }

    #[test]
    fn plug_in_matches_reference_arithmetic() {
        let d = PosteriorDraws::from_values(
            vec!["a[2]".into(), "h".into(), "sigma_y".into()],
            vec![vec![0.0, 0.3, 1.7, 0.0, 0.5, 2.1]],
        );
        let s = predictive_margin(&d, &query(2, 2, true, false), PredictOptions { plug_in: true }).unwrap();
        assert!((s.with_home.win_probability - win_probability(0.4, 1.9).unwrap()).abs() < 1e-15);
        let mixed = predictive_margin(&d, &query(2, 2, true, false), PredictOptions::default()).unwrap();
        assert!(mixed.with_home.win_probability != s.with_home.win_probability);
    }

    #[test]
    fn report_rows_follow_input_order() {
        let d = point_draws(0.4, 1.9);
        let qs = vec![query(1, 5, false, false), query(2, 3, true, false), query(4, 1, false, true)];
        let actual = vec![Some(3.0), None, Some(-1.5)];
        let report = matchup_report(&d, &qs, Some(&actual), PredictOptions::default()).unwrap();
        assert_eq!(report.rows.iter().map(|r| r.rank1).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert_eq!(report.rows[1].actual, None);

        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let header = String::from_utf8_lossy(&buf).lines().next().unwrap().to_string();
        assert_eq!(
            header,
            "matchup,rank1,rank2,venue,b,mean_home,lo68_home,hi68_home,mean_nohome,lo68_nohome,\
             hi68_nohome,win_prob_home,win_prob_nohome,actual"
        );
        assert_eq!(MatchupReport::read_csv(buf.as_slice()).unwrap(), report);
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(serde_json::from_str::<MatchupReport>(&json).unwrap(), report);

        let no_actual = matchup_report(&d, &qs[..1], None, PredictOptions::default()).unwrap();
        assert_eq!(no_actual.rows[0].actual, None);
    }

    proptest! {
        #[test]
        fn win_probability_is_monotone(mu in -3f64..3.0, d in 0.01f64..1.0, sigma in 0.5f64..4.0) {
            prop_assert!(win_probability(mu + d, sigma).unwrap() > win_probability(mu, sigma).unwrap());
            if mu > 0.05 {
                prop_assert!(win_probability(mu, sigma + d).unwrap() < win_probability(mu, sigma).unwrap());
            }
        }

        #[test]
        fn discretization_partitions_unity(mu in -8f64..8.0, sigma in 0.05f64..6.0) {
            let p = discretize_margin(mu, sigma).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let q = discretize_margin(-mu, sigma).unwrap();
            for k in 0..6 {
                prop_assert!((p[k] - q[5 - k]).abs() < 1e-12);
            }
        }

        #[test]
        fn swapping_players_mirrors_prediction(
            r1 in 1usize..=5, r2 in 1usize..=5, home1: bool, home2: bool,
            h in -1f64..1.0, s1 in 0.5f64..3.0, s2 in 0.5f64..3.0,
        ) {
            let names = ["a[2]", "a[3]", "a[4]", "a[5]", "h", "sigma_y"];
            let d = PosteriorDraws::from_values(
                names.iter().map(|s| s.to_string()).collect(),
                vec![vec![-0.3, -0.5, -0.8, -1.0, h, s1, -0.2, -0.9, -0.4, -1.3, 0.5 * h, s2]],
            );
            let q = query(r1, r2, home1, home2);
            let a = predictive_margin(&d, &q, PredictOptions::default()).unwrap();
            let b = predictive_margin(&d, &q.swapped(), PredictOptions::default()).unwrap();
            for (x, y) in [(&a.with_home, &b.with_home), (&a.without_home, &b.without_home)] {
                prop_assert!((x.mean_margin + y.mean_margin).abs() < 1e-12);
                prop_assert!((x.interval68.0 + y.interval68.1).abs() < 1e-9);
                prop_assert!((x.interval68.1 + y.interval68.0).abs() < 1e-9);
                prop_assert!((x.win_probability + y.win_probability - 1.0).abs() < 1e-12);
                for k in 0..6 {
                    prop_assert!((x.discrete[k] - y.discrete[5 - k]).abs() < 1e-12);
                }
            }
        }
    }
}
