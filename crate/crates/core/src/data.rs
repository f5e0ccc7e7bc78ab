//! Match records: CSV ingestion, inclusion rules, and encoding into the
//! numeric arrays consumed by the model.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("{} malformed row(s):\n{}", .0.len(), format_row_errors(.0))]
    Rows(Vec<RowError>),
    #[error("invalid country code {0:?}: expected three ASCII letters")]
    InvalidCountry(String),
    #[error("invalid score {won1}-{won2} for {format:?}")]
    InvalidScore { won1: u8, won2: u8, format: MatchFormat },
    #[error("rank {rank} outside 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("no matches after filtering")]
    Empty,
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("unknown column mapping key {0:?}")]
    UnknownMappingKey(String),
}

/// One offending data row. `row` counts data rows from 1; the header is
/// row 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

fn format_row_errors(errors: &[RowError]) -> String {
    errors.iter().map(|e| format!("  row {}: {}", e.row, e.message)).collect::<Vec<_>>().join("\n")
}

/// Upper-cased three-letter country code.
///
/// Sporting federations use codes such as `ENG` and `SCO` that are not in
/// ISO 3166, so only the shape is validated.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CountryCode(String);

impl CountryCode {
    pub fn new(code: &str) -> Result<Self, DataError> {
        let code = code.trim();
        if code.len() == 3 && code.chars().all(|c| c.is_ascii_alphabetic()) {
            Ok(Self(code.to_ascii_uppercase()))
        } else {
            Err(DataError::InvalidCountry(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CountryCode {
    type Error = DataError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<CountryCode> for String {
    fn from(value: CountryCode) -> Self {
        value.0
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for CountryCode {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// The three countries tracked by the country-intercept model by default.
pub fn default_tracked_countries() -> Vec<CountryCode> {
    ["EGY", "ENG", "USA"].iter().map(|c| CountryCode(c.to_string())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchFormat {
    BestOf5,
    BestOf3,
}

impl MatchFormat {
    fn games_to_win(self) -> u8 {
        match self {
            MatchFormat::BestOf5 => 3,
            MatchFormat::BestOf3 => 2,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match normalize_token(s).as_str() {
            "bestof5" | "bo5" | "5" => Some(Self::BestOf5),
            "bestof3" | "bo3" | "3" => Some(Self::BestOf3),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MatchFormat::BestOf5 => "bo5",
            MatchFormat::BestOf3 => "bo3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Retired,
    Walkover,
}

impl Termination {
    fn parse(s: &str) -> Option<Self> {
        match normalize_token(s).as_str() {
            "completed" | "complete" | "" => Some(Self::Completed),
            "retired" | "retirement" | "ret" => Some(Self::Retired),
            "walkover" | "wo" => Some(Self::Walkover),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Retired => "retired",
            Termination::Walkover => "walkover",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tour {
    Bronze,
    Silver,
    Gold,
    Platinum,
    WorldChampionship,
    TourFinals,
    Other,
}

impl Tour {
    fn parse(s: &str) -> Option<Self> {
        match normalize_token(s).as_str() {
            "bronze" => Some(Self::Bronze),
            "silver" => Some(Self::Silver),
            "gold" => Some(Self::Gold),
            "platinum" => Some(Self::Platinum),
            "worldchampionship" | "worldchampionships" | "worlds" => Some(Self::WorldChampionship),
            "tourfinals" | "worldtourfinals" | "finals" => Some(Self::TourFinals),
            "other" | "" => Some(Self::Other),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Tour::Bronze => "bronze",
            Tour::Silver => "silver",
            Tour::Gold => "gold",
            Tour::Platinum => "platinum",
            Tour::WorldChampionship => "world_championship",
            Tour::TourFinals => "tour_finals",
            Tour::Other => "other",
        }
    }
}

fn normalize_token(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).map(|c| c.to_ascii_lowercase()).collect()
}

/// One professional match as listed in the source data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub match_id: String,
    pub date: NaiveDate,
    pub player1_name: String,
    pub player2_name: String,
    pub player1_country: CountryCode,
    pub player2_country: CountryCode,
    pub venue_country: CountryCode,
    pub player1_rank: usize,
    pub player2_rank: usize,
    pub games_won_p1: u8,
    pub games_won_p2: u8,
    pub format: MatchFormat,
    pub termination: Termination,
    pub tour: Tour,
}

impl MatchRecord {
    /// The same match with the two players listed the other way round.
    pub fn swapped(&self) -> Self {
        Self {
            player1_name: self.player2_name.clone(),
            player2_name: self.player1_name.clone(),
            player1_country: self.player2_country.clone(),
            player2_country: self.player1_country.clone(),
            player1_rank: self.player2_rank,
            player2_rank: self.player1_rank,
            games_won_p1: self.games_won_p2,
            games_won_p2: self.games_won_p1,
            ..self.clone()
        }
    }
}

/// Logical CSV columns. The default header name of each is its snake-case
/// key as returned by [`Column::key`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Column {
    MatchId,
    Date,
    Player1,
    Player2,
    Country1,
    Country2,
    VenueCountry,
    Rank1,
    Rank2,
    Games1,
    Games2,
    Format,
    Termination,
    Tour,
}

impl Column {
    pub const ALL: [Column; 14] = [
        Column::MatchId,
        Column::Date,
        Column::Player1,
        Column::Player2,
        Column::Country1,
        Column::Country2,
        Column::VenueCountry,
        Column::Rank1,
        Column::Rank2,
        Column::Games1,
        Column::Games2,
        Column::Format,
        Column::Termination,
        Column::Tour,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Column::MatchId => "match_id",
            Column::Date => "date",
            Column::Player1 => "player1",
            Column::Player2 => "player2",
            Column::Country1 => "country1",
            Column::Country2 => "country2",
            Column::VenueCountry => "venue_country",
            Column::Rank1 => "rank1",
            Column::Rank2 => "rank2",
            Column::Games1 => "games1",
            Column::Games2 => "games2",
            Column::Format => "format",
            Column::Termination => "termination",
            Column::Tour => "tour",
        }
    }

    /// `match_id` is generated from the row number when absent.
    pub fn required(self) -> bool {
        !matches!(self, Column::MatchId)
    }

    fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.key() == key)
    }
}

/// Maps logical columns onto header names in a particular file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMapping {
    names: BTreeMap<Column, String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self { names: Column::ALL.into_iter().map(|c| (c, c.key().to_string())).collect() }
    }
}

impl ColumnMapping {
    /// Parses overrides of the form `rank1=WorldRank1,venue_country=Venue`.
    pub fn with_overrides(spec: &str) -> Result<Self, DataError> {
        let mut mapping = Self::default();
        for pair in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, header) = pair.split_once('=').ok_or_else(|| DataError::UnknownMappingKey(pair.to_string()))?;
            let column =
                Column::from_key(key.trim()).ok_or_else(|| DataError::UnknownMappingKey(key.trim().to_string()))?;
            mapping.names.insert(column, header.trim().to_string());
        }
        Ok(mapping)
    }

    pub fn header(&self, column: Column) -> &str {
        &self.names[&column]
    }
}

/// Reads match records from a CSV file.
///
/// Every data row is checked; if any row is malformed the error lists all
/// offending rows rather than stopping at the first.
pub fn load_matches(path: &Path, mapping: &ColumnMapping) -> Result<Vec<MatchRecord>, DataError> {
    let file =
        std::fs::File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    read_matches(file, mapping)
}

pub fn read_matches<R: std::io::Read>(reader: R, mapping: &ColumnMapping) -> Result<Vec<MatchRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut index = BTreeMap::new();
    let mut missing = Vec::new();
    for column in Column::ALL {
        let name = mapping.header(column);
        match headers.iter().position(|h| h == name) {
            Some(i) => {
                index.insert(column, i);
            }
            None if column.required() => missing.push(name.to_string()),
            None => {}
        }
    }
    if !missing.is_empty() {
        return Err(DataError::MissingColumns(missing));
    }

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_number = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError { row: row_number, message: e.to_string() });
                continue;
            }
        };
        let field = |c: Column| index.get(&c).and_then(|&i| row.get(i)).unwrap_or("");
        match parse_record(row_number, field) {
            Ok(r) => records.push(r),
            Err(message) => errors.push(RowError { row: row_number, message }),
        }
    }

    if errors.is_empty() {
        Ok(records)
    } else {
        Err(DataError::Rows(errors))
    }
}

fn parse_record<'a>(row_number: usize, field: impl Fn(Column) -> &'a str) -> Result<MatchRecord, String> {
    let mut problems = Vec::new();

    let date = NaiveDate::parse_from_str(field(Column::Date), "%Y-%m-%d")
        .map_err(|_| problems.push(format!("unparseable date {:?}", field(Column::Date))))
        .ok();
    let mut country =
        |c: Column| CountryCode::new(field(c)).map_err(|e| problems.push(format!("{}: {e}", c.key()))).ok();
    let country1 = country(Column::Country1);
    let country2 = country(Column::Country2);
    let venue = country(Column::VenueCountry);
    let mut rank = |c: Column| match field(c).parse::<usize>() {
        Ok(r) if r >= 1 => Some(r),
        Ok(r) => {
            problems.push(format!("{} must be >= 1, got {r}", c.key()));
            None
        }
        Err(_) => {
            problems.push(format!("unparseable {} {:?}", c.key(), field(c)));
            None
        }
    };
    let rank1 = rank(Column::Rank1);
    let rank2 = rank(Column::Rank2);
    let mut games = |c: Column| {
        field(c).parse::<u8>().map_err(|_| problems.push(format!("unparseable {} {:?}", c.key(), field(c)))).ok()
    };
    let games1 = games(Column::Games1);
    let games2 = games(Column::Games2);
    let format = MatchFormat::parse(field(Column::Format));
    if format.is_none() {
        problems.push(format!("unknown format {:?}", field(Column::Format)));
    }
    let termination = Termination::parse(field(Column::Termination));
    if termination.is_none() {
        problems.push(format!("unknown termination {:?}", field(Column::Termination)));
    }
    let tour = Tour::parse(field(Column::Tour));
    if tour.is_none() {
        problems.push(format!("unknown tour {:?}", field(Column::Tour)));
    }

    if let (Some(g1), Some(g2), Some(f), Some(Termination::Completed)) = (games1, games2, format, termination) {
        if let Err(e) = encode_margin(g1, g2, f) {
            problems.push(e.to_string());
        }
    }

    if !problems.is_empty() {
        return Err(problems.join("; "));
    }

    let match_id = match field(Column::MatchId) {
        "" => format!("row-{row_number}"),
        id => id.to_string(),
    };
    // All options are Some when no problems were recorded.
    Ok(MatchRecord {
        match_id,
        date: date.unwrap(),
        player1_name: field(Column::Player1).to_string(),
        player2_name: field(Column::Player2).to_string(),
        player1_country: country1.unwrap(),
        player2_country: country2.unwrap(),
        venue_country: venue.unwrap(),
        player1_rank: rank1.unwrap(),
        player2_rank: rank2.unwrap(),
        games_won_p1: games1.unwrap(),
        games_won_p2: games2.unwrap(),
        format: format.unwrap(),
        termination: termination.unwrap(),
        tour: tour.unwrap(),
    })
}

/// Writes records in the default column layout.
pub fn write_matches<W: std::io::Write>(writer: W, records: &[MatchRecord]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(Column::ALL.iter().map(|c| c.key()))?;
    for r in records {
        wtr.write_record([
            r.match_id.clone(),
            r.date.format("%Y-%m-%d").to_string(),
            r.player1_name.clone(),
            r.player2_name.clone(),
            r.player1_country.to_string(),
            r.player2_country.to_string(),
            r.venue_country.to_string(),
            r.player1_rank.to_string(),
            r.player2_rank.to_string(),
            r.games_won_p1.to_string(),
            r.games_won_p2.to_string(),
            r.format.label().to_string(),
            r.termination.label().to_string(),
            r.tour.label().to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| DataError::Io { path: "<output>".into(), source })?;
    Ok(())
}

/// Counts of records dropped by each inclusion rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub input: usize,
    pub retired_or_walkover: usize,
    pub rank_cutoff: usize,
    pub retained: usize,
}

/// Keeps completed matches between players ranked `max_rank` or better.
///
/// A record failing both rules is counted under retirement/walkover only.
pub fn filter_matches(records: &[MatchRecord], max_rank: usize) -> (Vec<MatchRecord>, Provenance) {
    let mut provenance = Provenance { input: records.len(), ..Default::default() };
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        if r.termination != Termination::Completed {
            provenance.retired_or_walkover += 1;
        } else if r.player1_rank > max_rank || r.player2_rank > max_rank {
            provenance.rank_cutoff += 1;
        } else {
            kept.push(r.clone());
        }
    }
    provenance.retained = kept.len();
    (kept, provenance)
}

/// Home indicator: +1 when only player 1 is at home, -1 when only player 2
/// is, 0 when neither or both are.
pub fn encode_home(p1_country: &CountryCode, p2_country: &CountryCode, venue: &CountryCode) -> i8 {
    let home1 = p1_country == venue;
    let home2 = p2_country == venue;
    i8::from(home1) - i8::from(home2)
}

/// Games won by player 1 minus games won by player 2, on the best-of-five
/// scale.
pub fn encode_margin(won1: u8, won2: u8, format: MatchFormat) -> Result<f64, DataError> {
    let need = format.games_to_win();
    let (hi, lo) = (won1.max(won2), won1.min(won2));
    if hi != need || lo >= need {
        return Err(DataError::InvalidScore { won1, won2, format });
    }
    let diff = f64::from(won1) - f64::from(won2);
    Ok(match format {
        MatchFormat::BestOf5 => diff,
        MatchFormat::BestOf3 => 1.5 * diff,
    })
}

/// One match in model-ready form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatch {
    pub rank1: usize,
    pub rank2: usize,
    /// Global home indicator in {-1, 0, 1}.
    pub home: i8,
    /// Home indicator per tracked country, aligned with
    /// [`EncodedDataset::tracked_countries`]. At most one entry is nonzero.
    pub country_home: Vec<i8>,
    pub y: f64,
    pub venue: Option<CountryCode>,
}

impl EncodedMatch {
    pub fn swapped(&self) -> Self {
        Self {
            rank1: self.rank2,
            rank2: self.rank1,
            home: -self.home,
            country_home: self.country_home.iter().map(|b| -b).collect(),
            y: -self.y,
            venue: self.venue.clone(),
        }
    }
}

/// Per-country indicator vector for a match with global indicator `home`
/// played in `venue`.
pub fn country_indicators(home: i8, venue: Option<&CountryCode>, tracked: &[CountryCode]) -> Vec<i8> {
    tracked.iter().map(|c| if Some(c) == venue { home } else { 0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub matches: Vec<EncodedMatch>,
    pub max_rank: usize,
    pub tracked_countries: Vec<CountryCode>,
    pub provenance: Provenance,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self { matches: self.matches.iter().map(EncodedMatch::swapped).collect(), ..self.clone() }
    }

    pub fn country_index(&self, code: &CountryCode) -> Option<usize> {
        self.tracked_countries.iter().position(|c| c == code)
    }

    /// Checks ranks, indicator values and per-country consistency.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.max_rank < 2 {
            return Err(DataError::Inconsistent(format!("max rank {} < 2", self.max_rank)));
        }
        for (i, m) in self.matches.iter().enumerate() {
            for rank in [m.rank1, m.rank2] {
                if rank == 0 || rank > self.max_rank {
                    return Err(DataError::RankOutOfRange { rank, max: self.max_rank });
                }
            }
            if !(-1..=1).contains(&m.home) {
                return Err(DataError::Inconsistent(format!("match {i}: home indicator {}", m.home)));
            }
            if m.country_home.len() != self.tracked_countries.len() {
                return Err(DataError::Inconsistent(format!(
                    "match {i}: {} country indicators for {} tracked countries",
                    m.country_home.len(),
                    self.tracked_countries.len()
                )));
            }
            let nonzero = m.country_home.iter().filter(|&&b| b != 0).count();
            if nonzero > 1 || m.country_home.iter().any(|&b| b != 0 && b != m.home) {
                return Err(DataError::Inconsistent(format!(
                    "match {i}: country indicators {:?} disagree with home indicator {}",
                    m.country_home, m.home
                )));
            }
            if !m.y.is_finite() {
                return Err(DataError::Inconsistent(format!("match {i}: non-finite margin")));
            }
        }
        Ok(())
    }

    /// Serializes to the flat array layout (`rank1`, `rank2`, `b`,
    /// `b_<country>`, `y`).
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::{json, Map, Value};
        let mut obj = Map::new();
        obj.insert("N".into(), json!(self.matches.len()));
        obj.insert("R".into(), json!(self.max_rank));
        obj.insert(
            "tracked_countries".into(),
            json!(self.tracked_countries.iter().map(|c| c.as_str()).collect::<Vec<_>>()),
        );
        obj.insert("rank1".into(), json!(self.matches.iter().map(|m| m.rank1).collect::<Vec<_>>()));
        obj.insert("rank2".into(), json!(self.matches.iter().map(|m| m.rank2).collect::<Vec<_>>()));
        obj.insert("b".into(), json!(self.matches.iter().map(|m| m.home).collect::<Vec<_>>()));
        for (k, c) in self.tracked_countries.iter().enumerate() {
            obj.insert(country_column(c), json!(self.matches.iter().map(|m| m.country_home[k]).collect::<Vec<_>>()));
        }
        obj.insert("y".into(), json!(self.matches.iter().map(|m| m.y).collect::<Vec<_>>()));
        obj.insert(
            "venue".into(),
            Value::Array(
                self.matches.iter().map(|m| m.venue.as_ref().map_or(Value::Null, |v| json!(v.as_str()))).collect(),
            ),
        );
        obj.insert("provenance".into(), serde_json::to_value(self.provenance).unwrap());
        Value::Object(obj)
    }

    /// Parses the layout written by [`EncodedDataset::to_json`]. `N`,
    /// `venue` and `provenance` are optional.
    pub fn from_json(value: &serde_json::Value) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(rename = "R")]
            max_rank: usize,
            #[serde(default)]
            tracked_countries: Vec<CountryCode>,
            rank1: Vec<usize>,
            rank2: Vec<usize>,
            b: Vec<i8>,
            y: Vec<f64>,
            #[serde(default)]
            venue: Option<Vec<Option<CountryCode>>>,
            #[serde(default)]
            provenance: Option<Provenance>,
        }
        let raw: Raw = serde_json::from_value(value.clone())?;
        let n = raw.y.len();
        if raw.rank1.len() != n || raw.rank2.len() != n || raw.b.len() != n {
            return Err(DataError::Inconsistent("array lengths differ".into()));
        }

        let mut missing = Vec::new();
        let mut country_cols = Vec::new();
        for c in &raw.tracked_countries {
            let key = country_column(c);
            match value.get(&key) {
                Some(v) => {
                    let col: Vec<i8> = serde_json::from_value(v.clone())?;
                    if col.len() != n {
                        return Err(DataError::Inconsistent(format!("{key} has {} entries, expected {n}", col.len())));
                    }
                    country_cols.push(col);
                }
                None => missing.push(key),
            }
        }
        if !missing.is_empty() {
            return Err(DataError::MissingColumns(missing));
        }

        let venues = raw.venue.unwrap_or_else(|| vec![None; n]);
        if venues.len() != n {
            return Err(DataError::Inconsistent("venue array length differs".into()));
        }
        let matches = (0..n)
            .map(|i| EncodedMatch {
                rank1: raw.rank1[i],
                rank2: raw.rank2[i],
                home: raw.b[i],
                country_home: country_cols.iter().map(|col| col[i]).collect(),
                y: raw.y[i],
                venue: venues[i].clone(),
            })
            .collect();
        let dataset = Self {
            matches,
            max_rank: raw.max_rank,
            tracked_countries: raw.tracked_countries,
            provenance: raw.provenance.unwrap_or(Provenance { input: n, retained: n, ..Default::default() }),
        };
        dataset.validate()?;
        Ok(dataset)
    }

    /// A copy restricted to the given tracked countries. Fails when one of
    /// them has no indicator column and the venue is unknown for some match.
    pub fn with_tracked_countries(&self, tracked: &[CountryCode]) -> Result<Self, DataError> {
        let mut missing = Vec::new();
        let matches = self
            .matches
            .iter()
            .map(|m| {
                let country_home = tracked
                    .iter()
                    .map(|c| match self.country_index(c) {
                        Some(k) => m.country_home[k],
                        None => match &m.venue {
                            Some(v) => i8::from(v == c) * m.home,
                            None => {
                                if !missing.contains(&country_column(c)) {
                                    missing.push(country_column(c));
                                }
                                0
                            }
                        },
                    })
                    .collect();
                EncodedMatch { country_home, ..m.clone() }
            })
            .collect();
        if !missing.is_empty() {
            return Err(DataError::MissingColumns(missing));
        }
        Ok(Self { matches, tracked_countries: tracked.to_vec(), ..self.clone() })
    }
}

pub fn country_column(code: &CountryCode) -> String {
    format!("b_{}", code.as_str().to_ascii_lowercase())
}

/// Encodes filtered records. Ranks above `max_rank` are rejected.
pub fn encode_dataset(
    records: &[MatchRecord],
    max_rank: usize,
    tracked_countries: &[CountryCode],
    provenance: Provenance,
) -> Result<EncodedDataset, DataError> {
    if records.is_empty() {
        return Err(DataError::Empty);
    }
    let mut matches = Vec::with_capacity(records.len());
    for r in records {
        for rank in [r.player1_rank, r.player2_rank] {
            if rank == 0 || rank > max_rank {
                return Err(DataError::RankOutOfRange { rank, max: max_rank });
            }
        }
        let home = encode_home(&r.player1_country, &r.player2_country, &r.venue_country);
        matches.push(EncodedMatch {
            rank1: r.player1_rank,
            rank2: r.player2_rank,
            home,
            country_home: country_indicators(home, Some(&r.venue_country), tracked_countries),
            y: encode_margin(r.games_won_p1, r.games_won_p2, r.format)?,
            venue: Some(r.venue_country.clone()),
        });
    }
    Ok(EncodedDataset { matches, max_rank, tracked_countries: tracked_countries.to_vec(), provenance })
}

/// Venue groups used in the match-count table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VenueGroup {
    Egypt,
    England,
    UnitedStates,
    Other,
}

impl VenueGroup {
    pub const ALL: [VenueGroup; 4] =
        [VenueGroup::Egypt, VenueGroup::England, VenueGroup::UnitedStates, VenueGroup::Other];

    pub fn of(venue: Option<&CountryCode>) -> Self {
        match venue.map(CountryCode::as_str) {
            Some("EGY") => VenueGroup::Egypt,
            Some("ENG") => VenueGroup::England,
            Some("USA") => VenueGroup::UnitedStates,
            _ => VenueGroup::Other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VenueGroup::Egypt => "Egypt",
            VenueGroup::England => "England",
            VenueGroup::UnitedStates => "U.S.",
            VenueGroup::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VenueCount {
    pub total: usize,
    pub with_home: usize,
}

/// Match counts by venue group and whether one player was at home.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub rows: Vec<(VenueGroup, VenueCount)>,
}

impl MatchCounts {
    fn tally<'a>(items: impl Iterator<Item = (Option<&'a CountryCode>, bool)>) -> Self {
        let mut rows: Vec<(VenueGroup, VenueCount)> =
            VenueGroup::ALL.iter().map(|&g| (g, VenueCount::default())).collect();
        for (venue, home) in items {
            let group = VenueGroup::of(venue);
            let entry = &mut rows.iter_mut().find(|(g, _)| *g == group).unwrap().1;
            entry.total += 1;
            entry.with_home += usize::from(home);
        }
        Self { rows }
    }

    pub fn get(&self, group: VenueGroup) -> VenueCount {
        self.rows.iter().find(|(g, _)| *g == group).map(|(_, c)| *c).unwrap_or_default()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["venue", "total", "with_home"])?;
        for (g, c) in &self.rows {
            wtr.write_record([g.label().to_string(), c.total.to_string(), c.with_home.to_string()])?;
        }
        wtr.flush().map_err(|source| DataError::Io { path: "<output>".into(), source })?;
        Ok(())
    }
}

pub fn count_matches(dataset: &EncodedDataset) -> MatchCounts {
    MatchCounts::tally(dataset.matches.iter().map(|m| (m.venue.as_ref(), m.home != 0)))
}

pub fn count_records(records: &[MatchRecord]) -> MatchCounts {
    MatchCounts::tally(records.iter().map(|r| {
        let home = encode_home(&r.player1_country, &r.player2_country, &r.venue_country);
        (Some(&r.venue_country), home != 0)
    }))
}

/// Head-to-head results between rank slots: for `i < j`, how often the
/// rank-`i` player beat the rank-`j` player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadToHead {
    pub top_n: usize,
    cells: BTreeMap<(usize, usize), (usize, usize)>,
}

impl HeadToHead {
    /// `(wins by the higher-ranked player, total)` or `None` when the pair
    /// never met.
    pub fn cell(&self, higher: usize, lower: usize) -> Option<(usize, usize)> {
        self.cells.get(&(higher, lower)).copied()
    }

    fn from_results(top_n: usize, results: impl Iterator<Item = (usize, usize, bool)>) -> Self {
        let mut cells = BTreeMap::new();
        for (r1, r2, p1_won) in results {
            if r1 == r2 || r1 > top_n || r2 > top_n {
                continue;
            }
            let (hi, lo, hi_won) = if r1 < r2 { (r1, r2, p1_won) } else { (r2, r1, !p1_won) };
            let cell = cells.entry((hi, lo)).or_insert((0, 0));
            cell.0 += usize::from(hi_won);
            cell.1 += 1;
        }
        Self { top_n, cells }
    }

    /// Matrix layout: row `i`, column `j`, `wins/total` above the diagonal
    /// and empty elsewhere.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["rank".to_string()];
        header.extend((1..=self.top_n).map(|j| j.to_string()));
        wtr.write_record(&header)?;
        for i in 1..=self.top_n {
            let mut row = vec![i.to_string()];
            for j in 1..=self.top_n {
                row.push(match self.cell(i, j) {
                    Some((w, t)) if i < j => format!("{w}/{t}"),
                    _ => String::new(),
                });
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|source| DataError::Io { path: "<output>".into(), source })?;
        Ok(())
    }
}

pub fn head_to_head(records: &[MatchRecord], top_n: usize) -> HeadToHead {
    HeadToHead::from_results(
        top_n,
        records.iter().map(|r| (r.player1_rank, r.player2_rank, r.games_won_p1 > r.games_won_p2)),
    )
}

pub fn head_to_head_encoded(dataset: &EncodedDataset, top_n: usize) -> HeadToHead {
    HeadToHead::from_results(top_n, dataset.matches.iter().map(|m| (m.rank1, m.rank2, m.y > 0.0)))
}
