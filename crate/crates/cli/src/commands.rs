use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rankmargin_core::data::{
    count_matches, count_records, encode_dataset, filter_matches, head_to_head, head_to_head_encoded, load_matches,
    write_matches, ColumnMapping,
};
use rankmargin_core::model::{FixedScales, PriorScales};
use rankmargin_core::posterior::{ability_curve, mean_rank_gap, summarize, write_curve_csv, write_summary_csv};
use rankmargin_core::predict::{matchup_report, predictive_margin, PredictOptions};
use rankmargin_core::sampler::{diagnose, sample, SamplerError};
use rankmargin_core::synth::{generate, to_match_records, venue_mix_schedule, TrueParams};
use rankmargin_core::{
    CountryCode, Diagnostics, EncodedDataset, HierarchicalPosterior, MatchRecord, MatchupQuery, ModelSpec,
    ModelVariant, PosteriorDraws, SamplerConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::args::{DiagnoseArgs, FitArgs, PredictArgs, SimulateArgs, SummarizeArgs};
use crate::manifest::Run;

pub const EXIT_DIAGNOSTICS: i32 = 3;
pub const THREADS_ENV: &str = "RANKMARGIN_THREADS";

fn parse_countries(codes: &[String]) -> Result<Vec<CountryCode>> {
    codes.iter().filter(|c| !c.trim().is_empty()).map(|c| Ok(CountryCode::new(c)?)).collect()
}

fn mapping(columns: &Option<String>) -> Result<ColumnMapping> {
    Ok(match columns {
        Some(spec) => ColumnMapping::with_overrides(spec)?,
        None => ColumnMapping::default(),
    })
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// A dataset and, for CSV input, the filtered records it was encoded from.
struct Loaded {
    dataset: EncodedDataset,
    records: Option<Vec<MatchRecord>>,
}

fn load_data(path: &Path, ranks: usize, tracked: &[CountryCode], columns: &Option<String>) -> Result<Loaded> {
    if is_json(path) {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        let dataset = EncodedDataset::from_json(&value).with_context(|| format!("in {}", path.display()))?;
        return Ok(Loaded { dataset, records: None });
    }
    let records = load_matches(path, &mapping(columns)?)?;
    let (kept, provenance) = filter_matches(&records, ranks);
    let dataset = encode_dataset(&kept, ranks, tracked, provenance)?;
    Ok(Loaded { dataset, records: Some(kept) })
}

fn read_draws(path: &Path) -> Result<PosteriorDraws> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    PosteriorDraws::read_csv(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => bail!("{THREADS_ENV} must be a positive integer, got {v:?}"),
        },
        _ => Ok(None),
    }
}

fn parse_fixed_scales(text: &str) -> Result<FixedScales> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [sy, sa] = parts.as_slice() else {
        bail!("--fixed-scales expects SIGY,SIGA, got {text:?}");
    };
    let parse = |s: &str| s.parse::<f64>().with_context(|| format!("invalid scale {s:?} in --fixed-scales"));
    Ok(FixedScales { sigma_y: parse(sy)?, sigma_a: parse(sa)? })
}

fn print_diagnostics(diag: &Diagnostics) {
    println!(
        "diagnostics: max R-hat {:.4}, min bulk ESS {:.0}, {} divergent transitions, {} at max treedepth",
        diag.max_rhat(),
        diag.min_ess_bulk(),
        diag.divergences,
        diag.treedepth_saturations
    );
    for flag in &diag.flags {
        eprintln!("warning: {flag:?}");
    }
}

/// Diagnostics, or the reason they could not be computed.
fn diagnostics_report(draws: &PosteriorDraws) -> (serde_json::Value, bool) {
    match diagnose(draws) {
        Ok(diag) => {
            print_diagnostics(&diag);
            let passed = diag.passed();
            let mut value = serde_json::to_value(&diag).expect("serializable");
            value["passed"] = json!(passed);
            (value, passed)
        }
        Err(e @ SamplerError::TooFewDraws { .. }) => {
            eprintln!("warning: {e}");
            (json!({ "passed": false, "error": e.to_string() }), false)
        }
        Err(e) => (json!({ "passed": false, "error": e.to_string() }), false),
    }
}

pub fn fit(args: &FitArgs, run: &mut Run) -> Result<i32> {
    let tracked = parse_countries(&args.countries)?;
    let variant = ModelVariant::from(args.model);
    let priors = PriorScales { beta: args.prior_beta_scale, gamma: args.prior_gamma_scale, ..PriorScales::default() };
    let spec = ModelSpec::new(variant, args.ranks, &tracked, priors)?;

    run.input(&args.data)?;
    let Loaded { mut dataset, .. } = load_data(&args.data, args.ranks, &tracked, &args.columns)?;
    if variant == ModelVariant::CountryIntercepts {
        dataset = dataset.with_tracked_countries(&spec.tracked_countries)?;
    }
    println!(
        "{} matches kept of {} ({} retired or walkover, {} outside the top {})",
        dataset.provenance.retained,
        dataset.provenance.input,
        dataset.provenance.retired_or_walkover,
        dataset.provenance.rank_cutoff,
        args.ranks
    );

    let mut target = HierarchicalPosterior::new(&spec, &dataset)?;
    if let Some(text) = &args.fixed_scales {
        target = target.with_fixed_scales(parse_fixed_scales(text)?)?;
    }
    if let Some(w) = args.noncentering {
        target = target.with_noncentering(w)?;
    }
    let s = &args.sampler;
    let config = SamplerConfig {
        chains: s.chains,
        warmup: s.warmup,
        samples: s.samples,
        target_accept: s.target_accept,
        max_treedepth: s.max_treedepth,
        seed: s.seed,
        threads: threads_from_env()?,
        ..SamplerConfig::default()
    };
    run.resolved = json!({
        "spec": spec,
        "sampler": config,
        "fixed_scales": target.fixed_scales(),
        "noncentering": target.noncentering(),
        "provenance": dataset.provenance,
    });

    let draws = sample(&target, &config)?;
    run.write("draws.csv", |buf| Ok(draws.write_csv(buf)?))?;

    let summary = summarize(&draws)?;
    run.write("summary.csv", |buf| Ok(write_summary_csv(buf, &summary)?))?;
    run.write_json("summary.json", &summary)?;
    println!("{:<10} {:>8} {:>8} {:>8} {:>8}", "parameter", "mean", "sd", "5%", "95%");
    for row in summary.iter().filter(|r| !r.name.starts_with("a[")) {
        println!("{:<10} {:>8.3} {:>8.3} {:>8.3} {:>8.3}", row.name, row.mean, row.sd, row.q5, row.q95);
    }

    let (report, passed) = diagnostics_report(&draws);
    run.write_json("diagnostics.json", &report)?;
    Ok(if passed || args.allow_bad_diagnostics { 0 } else { EXIT_DIAGNOSTICS })
}

fn parse_flag(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

/// Reads a query file. Errors name the offending line.
pub fn read_queries(path: &Path, variant: ModelVariant) -> Result<(Vec<MatchupQuery>, Vec<Option<f64>>)> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().with_context(|| format!("cannot read header of {}", path.display()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(r1), Some(r2)) = (col("rank1"), col("rank2")) else {
        bail!("{}: line 1: query file needs rank1 and rank2 columns", path.display());
    };
    let (label, venue, h1, h2, actual) = (col("label"), col("venue"), col("p1_home"), col("p2_home"), col("actual"));

    let mut queries = Vec::new();
    let mut actuals = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |msg: String| anyhow::anyhow!("{}: line {line}: {msg}", path.display());
        let get = |k: Option<usize>| k.and_then(|k| record.get(k)).unwrap_or("");
        let rank = |k: usize, name: &str| {
            get(Some(k)).parse::<usize>().map_err(|_| fail(format!("{name} {:?} is not a rank", get(Some(k)))))
        };
        let flag = |k: Option<usize>, name: &str| {
            parse_flag(get(k)).ok_or_else(|| fail(format!("{name} {:?} is not a boolean", get(k))))
        };
        let venue = match get(venue) {
            "" => None,
            v => Some(CountryCode::new(v).map_err(|e| fail(e.to_string()))?),
        };
        queries.push(MatchupQuery {
            label: Some(get(label).to_string()).filter(|l| !l.is_empty()),
            rank1: rank(r1, "rank1")?,
            rank2: rank(r2, "rank2")?,
            venue,
            p1_home: flag(h1, "p1_home")?,
            p2_home: flag(h2, "p2_home")?,
            variant,
        });
        actuals.push(match get(actual) {
            "" => None,
            v => Some(v.parse::<f64>().map_err(|_| fail(format!("actual {v:?} is not a number")))?),
        });
    }
    if queries.is_empty() {
        bail!("{}: no queries", path.display());
    }
    Ok((queries, actuals))
}

fn draws_variant(draws: &PosteriorDraws) -> ModelVariant {
    let country = draws.names().iter().any(|n| n.strip_prefix("h_").is_some_and(|c| CountryCode::new(c).is_ok()));
    if country {
        ModelVariant::CountryIntercepts
    } else {
        ModelVariant::Global
    }
}

#[derive(Serialize)]
struct Prediction<'a> {
    query: &'a MatchupQuery,
    summary: rankmargin_core::PredictiveSummary,
}

pub fn predict(args: &PredictArgs, run: &mut Run) -> Result<i32> {
    run.input(&args.draws)?;
    let draws = read_draws(&args.draws)?;
    let variant = args.model.map_or_else(|| draws_variant(&draws), ModelVariant::from);

    let (queries, actuals) = match (&args.queries, args.rank1, args.rank2) {
        (Some(path), _, _) => {
            run.input(path)?;
            read_queries(path, variant)?
        }
        (None, Some(rank1), Some(rank2)) => {
            let venue = args.venue.as_deref().map(CountryCode::new).transpose()?;
            let query = MatchupQuery {
                label: args.label.clone(),
                rank1,
                rank2,
                venue,
                p1_home: args.p1_home,
                p2_home: args.p2_home,
                variant,
            };
            (vec![query], vec![None])
        }
        _ => bail!("give either --queries FILE or --rank1 and --rank2"),
    };

    let options = PredictOptions { plug_in: args.plug_in };
    let report = matchup_report(&draws, &queries, Some(&actuals), options)?;
    let detailed = queries
        .iter()
        .map(|q| Ok(Prediction { query: q, summary: predictive_margin(&draws, q, options)? }))
        .collect::<Result<Vec<_>>>()?;
    run.write("matchup_report.csv", |buf| Ok(report.write_csv(buf)?))?;
    run.write_json("matchup_report.json", &report)?;
    run.write_json("predictions.json", &detailed)?;
    run.resolved = json!({ "variant": variant, "plug_in": args.plug_in, "queries": queries.len() });

    println!(
        "{:<24} {:>22} {:>22} {:>7} {:>7}",
        "matchup", "home mean [68%]", "neutral mean [68%]", "P(win)", "P(win)"
    );
    for r in &report.rows {
        println!(
            "{:<24} {:>6.2} [{:>5.2},{:>5.2}]  {:>6.2} [{:>5.2},{:>5.2}]  {:>6.3} {:>6.3}",
            r.matchup,
            r.mean_home,
            r.lo68_home,
            r.hi68_home,
            r.mean_nohome,
            r.lo68_nohome,
            r.hi68_nohome,
            r.win_prob_home,
            r.win_prob_nohome
        );
    }
    Ok(0)
}

#[derive(Serialize)]
struct Truth<'a> {
    params: &'a TrueParams,
    matches: usize,
    continuous: bool,
    seed: u64,
}

pub fn simulate(args: &SimulateArgs, run: &mut Run) -> Result<i32> {
    let tracked = parse_countries(&args.countries)?;
    let effects = if args.country_effects.is_empty() { vec![0.0; tracked.len()] } else { args.country_effects.clone() };
    let mut truth = TrueParams::on_trend(args.ranks.max(2), args.h, args.sigma_y);
    if args.ranks < 2 {
        bail!("--ranks must be at least 2");
    }
    truth.beta = args.beta;
    truth.gamma = args.gamma;
    truth.sigma_a = args.sigma_a;
    truth.validate()?;
    // Independent seeds for the three random stages.
    let truth = truth.with_ability_noise(args.seed)?.with_countries(&tracked, &effects)?;
    let schedule = venue_mix_schedule(args.matches, args.ranks, args.seed.wrapping_add(1))?;
    let dataset = generate(&truth, &schedule, args.seed.wrapping_add(2), !args.continuous)?;

    run.write_json("dataset.json", &dataset.to_json())?;
    if !args.continuous {
        let records = to_match_records(&dataset)?;
        run.write("matches.csv", |buf| Ok(write_matches(buf, &records)?))?;
    }
    let t = Truth { params: &truth, matches: args.matches, continuous: args.continuous, seed: args.seed };
    run.write_json("truth.json", &t)?;
    let counts = count_matches(&dataset);
    run.resolved = json!({ "venue_counts": counts });
    println!("simulated {} matches over {} ranks into {}", dataset.len(), args.ranks, run.out_dir.display());
    Ok(0)
}

pub fn summarize_cmd(args: &SummarizeArgs, run: &mut Run) -> Result<i32> {
    if args.data.is_none() && args.draws.is_none() {
        bail!("summarize needs --data, --draws, or both");
    }
    if let Some(path) = &args.data {
        run.input(path)?;
        let loaded = load_data(path, args.ranks, &[], &args.columns)?;
        let (counts, h2h) = match &loaded.records {
            Some(records) => (count_records(records), head_to_head(records, args.top)),
            None => (count_matches(&loaded.dataset), head_to_head_encoded(&loaded.dataset, args.top)),
        };
        run.write("counts.csv", |buf| Ok(counts.write_csv(buf)?))?;
        run.write("head_to_head.csv", |buf| Ok(h2h.write_csv(buf)?))?;
        println!("wrote counts.csv and head_to_head.csv for {} matches", loaded.dataset.len());
    }
    if let Some(path) = &args.draws {
        run.input(path)?;
        let draws = read_draws(path)?;
        let curve = ability_curve(&draws)?;
        run.write("ability_curve.csv", |buf| Ok(write_curve_csv(buf, &curve)?))?;
        let top = args.top.min(curve.len());
        if top >= 2 {
            println!("mean ability gap between adjacent ranks in the top {top}: {:.3}", mean_rank_gap(&curve, top)?);
        }
        println!("wrote ability_curve.csv for ranks 1..={}", curve.len());
    }
    Ok(0)
}

pub fn diagnose_cmd(args: &DiagnoseArgs, run: &mut Run) -> Result<i32> {
    run.input(&args.draws)?;
    let draws = read_draws(&args.draws)?;
    let (report, passed) = diagnostics_report(&draws);
    run.write_json("diagnostics.json", &report)?;
    Ok(if passed || args.allow_bad_diagnostics { 0 } else { EXIT_DIAGNOSTICS })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_and_scales() {
        assert_eq!(parse_flag("Yes"), Some(true));
        assert_eq!(parse_flag(" 0 "), Some(false));
        assert_eq!(parse_flag(""), Some(false));
        assert_eq!(parse_flag("maybe"), None);
        let s = parse_fixed_scales("1.9, 0.3").unwrap();
        assert_eq!((s.sigma_y, s.sigma_a), (1.9, 0.3));
        assert!(parse_fixed_scales("1.9").is_err());
        assert!(parse_fixed_scales("a,b").is_err());
    }

    #[test]
    fn query_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        std::fs::write(&path, "Rank1,rank2,venue,p1_home,actual\n3,1,egy,1,-2\n2,5,,false,\n").unwrap();
        let (queries, actuals) = read_queries(&path, ModelVariant::Global).unwrap();
        assert_eq!(queries.len(), 2);
        assert_eq!((queries[0].rank1, queries[0].rank2, queries[0].home()), (3, 1, 1));
        assert_eq!(queries[0].venue.as_ref().unwrap().to_string(), "EGY");
        assert_eq!(queries[1].venue, None);
        assert_eq!(actuals, vec![Some(-2.0), None]);

        std::fs::write(&path, "rank1,rank2\n1,2\n1,2,3\n").unwrap();
        assert!(read_queries(&path, ModelVariant::Global).is_err());
        std::fs::write(&path, "rank1,venue\n1,EGY\n").unwrap();
        let err = read_queries(&path, ModelVariant::Global).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        std::fs::write(&path, "rank1,rank2,p2_home\n1,2,0\n1,2,0\n1,2,2\n").unwrap();
        let err = read_queries(&path, ModelVariant::Global).unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("p2_home"), "{err}");
    }

    #[test]
    fn variant_from_draw_columns() {
        let global = PosteriorDraws::from_values(vec!["a[2]".into(), "h".into()], vec![vec![0.0, 0.0]]);
        assert_eq!(draws_variant(&global), ModelVariant::Global);
        let country = PosteriorDraws::from_values(vec!["h".into(), "h_EGY".into()], vec![vec![0.0, 0.0]]);
        assert_eq!(draws_variant(&country), ModelVariant::CountryIntercepts);
    }
}
