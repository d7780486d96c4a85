//! Episode-level dataset: schema, CSV ingestion, validation and air ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of narrative acts each episode's script is scored over.
pub const ACTS: usize = 3;

/// Episodes a show needs before the rolling protocol can produce a forecast.
pub const ROLLING_MINIMUM_EPISODES: usize = 3;

/// Metadata columns, in the exact order they appear in a corpus file.
pub const METADATA_COLUMNS: [&str; 11] = [
    "show_id",
    "show_title",
    "season",
    "episode",
    "air_date",
    "length_minutes",
    "imdb_rating",
    "genre",
    "network",
    "viewers_millions",
    "canceled",
];

const DEFAULT_MANIFEST_JSON: &str = include_str!("../data/default_manifest.json");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input has no header row")]
    MissingHeader,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {reason}")]
    BadCell {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("duplicate episode {0}")]
    DuplicateEpisode(EpisodeKey),
    #[error("unknown show `{0}`")]
    UnknownShow(String),
    #[error("invalid score manifest: {0}")]
    InvalidManifest(String),
    #[error("episode {key} has {found} NLP scores, manifest expects {expected}")]
    NlpDimension {
        key: EpisodeKey,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Identifies one episode within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpisodeKey {
    pub show_id: String,
    pub season: u32,
    pub episode: u32,
}

impl fmt::Display for EpisodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} S{:02}E{:02}", self.show_id, self.season, self.episode)
    }
}

/// Ordered list of per-act score names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreManifest {
    names: Vec<String>,
    version: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Names(Vec<String>),
    Versioned { version: String, names: Vec<String> },
}

impl ScoreManifest {
    pub fn new(names: Vec<String>, version: impl Into<String>) -> Result<Self, CorpusError> {
        if names.is_empty() {
            return Err(CorpusError::InvalidManifest("no score names".into()));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(CorpusError::InvalidManifest("empty score name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(CorpusError::InvalidManifest(format!(
                    "duplicate score name `{name}`"
                )));
            }
        }
        Ok(Self {
            names,
            version: version.into(),
        })
    }

    /// The bundled 43-score manifest.
    pub fn default_manifest() -> Self {
        Self::from_json(DEFAULT_MANIFEST_JSON).expect("bundled manifest is valid")
    }

    /// Accepts either a bare JSON list of names or `{"version": .., "names": [..]}`.
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        match serde_json::from_str::<ManifestFile>(text)? {
            ManifestFile::Names(names) => Self::new(names, "unversioned"),
            ManifestFile::Versioned { version, names } => Self::new(names, version),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total NLP cells per episode.
    pub fn dimension(&self) -> usize {
        self.names.len() * ACTS
    }

    /// Column name for `act` (1-based) and score.
    pub fn column_name(act: usize, score: &str) -> String {
        format!("act{act}_{score}")
    }

    /// All NLP column names, act-major, in manifest order within each act.
    pub fn nlp_columns(&self) -> Vec<String> {
        (1..=ACTS)
            .flat_map(|act| self.names.iter().map(move |s| Self::column_name(act, s)))
            .collect()
    }

    /// Flat index of `(act, score)` into an episode's NLP vector.
    pub fn index_of(&self, act: usize, score: &str) -> Option<usize> {
        if !(1..=ACTS).contains(&act) {
            return None;
        }
        let pos = self.names.iter().position(|n| n == score)?;
        Some((act - 1) * self.names.len() + pos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub show_id: String,
    pub show_title: String,
    pub season: u32,
    pub episode: u32,
    pub air_date: NaiveDate,
    pub length_minutes: Option<f64>,
    pub imdb_rating: Option<f64>,
    pub genre: String,
    pub network: String,
    pub viewers_millions: f64,
    pub canceled: Option<bool>,
    /// Act-major NLP scores; see [`ScoreManifest::nlp_columns`].
    pub nlp: Vec<f64>,
}

impl EpisodeRecord {
    pub fn key(&self) -> EpisodeKey {
        EpisodeKey {
            show_id: self.show_id.clone(),
            season: self.season,
            episode: self.episode,
        }
    }

    fn air_order_key(&self) -> (NaiveDate, u32, u32) {
        (self.air_date, self.season, self.episode)
    }
}

/// Immutable, validated collection of episodes grouped by show.
///
/// Each show's episodes are stored in air order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCorpus {
    manifest: ScoreManifest,
    shows: BTreeMap<String, Vec<EpisodeRecord>>,
}

impl EpisodeCorpus {
    /// Builds a corpus from records, enforcing key uniqueness and NLP dimensionality.
    pub fn from_records(
        manifest: ScoreManifest,
        records: impl IntoIterator<Item = EpisodeRecord>,
    ) -> Result<Self, CorpusError> {
        let mut shows: BTreeMap<String, Vec<EpisodeRecord>> = BTreeMap::new();
        let mut keys = BTreeSet::new();
        for record in records {
            if record.nlp.len() != manifest.dimension() {
                return Err(CorpusError::NlpDimension {
                    key: record.key(),
                    expected: manifest.dimension(),
                    found: record.nlp.len(),
                });
            }
            if !keys.insert(record.key()) {
                return Err(CorpusError::DuplicateEpisode(record.key()));
            }
            shows.entry(record.show_id.clone()).or_default().push(record);
        }
        for episodes in shows.values_mut() {
            episodes.sort_by(|a, b| a.air_order_key().cmp(&b.air_order_key()));
        }
        Ok(Self { manifest, shows })
    }

    pub fn manifest(&self) -> &ScoreManifest {
        &self.manifest
    }

    pub fn show_ids(&self) -> impl Iterator<Item = &str> {
        self.shows.keys().map(String::as_str)
    }

    pub fn n_shows(&self) -> usize {
        self.shows.len()
    }

    pub fn n_episodes(&self) -> usize {
        self.shows.values().map(Vec::len).sum()
    }

    pub fn contains_show(&self, show_id: &str) -> bool {
        self.shows.contains_key(show_id)
    }

    /// Every record, show by show, each show in air order.
    pub fn records(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.shows.values().flatten()
    }

    /// A show's episodes sorted by air date, ties broken by (season, episode).
    pub fn air_order(&self, show_id: &str) -> Result<&[EpisodeRecord], CorpusError> {
        self.shows
            .get(show_id)
            .map(Vec::as_slice)
            .ok_or_else(|| CorpusError::UnknownShow(show_id.to_string()))
    }

    /// Copy of the corpus with one show's episodes edited in place.
    ///
    /// The edit must not touch the scheduling keys; air order is re-derived regardless.
    pub fn with_show_edited(
        &self,
        show_id: &str,
        edit: impl FnOnce(&mut [EpisodeRecord]),
    ) -> Result<Self, CorpusError> {
        let mut records: Vec<EpisodeRecord> = self.records().cloned().collect();
        let start = self
            .shows
            .range::<str, _>((std::ops::Bound::Unbounded, std::ops::Bound::Excluded(show_id)))
            .map(|(_, v)| v.len())
            .sum::<usize>();
        let len = self.air_order(show_id)?.len();
        edit(&mut records[start..start + len]);
        Self::from_records(self.manifest.clone(), records)
    }
}

fn header_names(manifest: &ScoreManifest) -> Vec<String> {
    METADATA_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(manifest.nlp_columns())
        .collect()
}

struct RowReader<'a> {
    record: &'a csv::StringRecord,
    columns: &'a [usize],
    row: usize,
}

impl RowReader<'_> {
    fn raw(&self, i: usize) -> &str {
        self.record.get(self.columns[i]).unwrap_or("").trim()
    }

    fn bad(&self, column: &str, reason: impl Into<String>) -> CorpusError {
        CorpusError::BadCell {
            row: self.row,
            column: column.to_string(),
            reason: reason.into(),
        }
    }

    fn required_str(&self, i: usize, name: &str) -> Result<String, CorpusError> {
        let v = self.raw(i);
        if v.is_empty() {
            return Err(self.bad(name, "required value is empty"));
        }
        Ok(v.to_string())
    }

    fn positive_int(&self, i: usize, name: &str) -> Result<u32, CorpusError> {
        let v: u32 = self
            .raw(i)
            .parse()
            .map_err(|e| self.bad(name, format!("not an integer: {e}")))?;
        if v == 0 {
            return Err(self.bad(name, "must be >= 1"));
        }
        Ok(v)
    }

    fn real(&self, i: usize, name: &str) -> Result<f64, CorpusError> {
        let v = self.raw(i);
        if v.is_empty() {
            return Err(self.bad(name, "required value is empty"));
        }
        v.parse()
            .map_err(|e| self.bad(name, format!("not a number: {e}")))
    }

    fn optional_real(&self, i: usize, name: &str) -> Result<Option<f64>, CorpusError> {
        if self.raw(i).is_empty() {
            Ok(None)
        } else {
            self.real(i, name).map(Some)
        }
    }
}

/// Strict ISO-8601 calendar date (`YYYY-MM-DD`).
pub fn parse_date(text: &str) -> Option<NaiveDate> {
    let b = text.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d").ok()
}

/// Parses a corpus CSV against the manifest's column schema.
///
/// Non-finite NLP values are accepted here and surfaced by [`validate_corpus`].
pub fn parse_corpus<R: Read>(source: R, manifest: &ScoreManifest) -> Result<EpisodeCorpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(CorpusError::MissingHeader);
    }
    let lookup: BTreeMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    let wanted = header_names(manifest);
    let columns = wanted
        .iter()
        .map(|name| {
            lookup
                .get(name.as_str())
                .copied()
                .ok_or_else(|| CorpusError::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut keys = BTreeSet::new();
    for (i, result) in reader.records().enumerate() {
        let record = result?;
        // 1-based, counting the header as row 1.
        let row = RowReader {
            record: &record,
            columns: &columns,
            row: i + 2,
        };
        let episode = parse_row(&row, &wanted)?;
        if !keys.insert(episode.key()) {
            return Err(CorpusError::DuplicateEpisode(episode.key()));
        }
        records.push(episode);
    }
    EpisodeCorpus::from_records(manifest.clone(), records)
}

fn parse_row(row: &RowReader<'_>, names: &[String]) -> Result<EpisodeRecord, CorpusError> {
    let air_date_raw = row.raw(4);
    let air_date = parse_date(air_date_raw)
        .ok_or_else(|| row.bad("air_date", format!("`{air_date_raw}` is not a YYYY-MM-DD date")))?;
    let length_minutes = row.optional_real(5, "length_minutes")?;
    if matches!(length_minutes, Some(v) if !(v >= 0.0 && v.is_finite())) {
        return Err(row.bad("length_minutes", "must be a nonnegative number"));
    }
    let imdb_rating = row.optional_real(6, "imdb_rating")?;
    if matches!(imdb_rating, Some(v) if !(0.0..=10.0).contains(&v)) {
        return Err(row.bad("imdb_rating", "must lie in [0, 10]"));
    }
    let viewers_millions = row.real(9, "viewers_millions")?;
    if !(viewers_millions >= 0.0 && viewers_millions.is_finite()) {
        return Err(row.bad("viewers_millions", "must be a nonnegative number"));
    }
    let canceled = match row.raw(10).to_ascii_lowercase().as_str() {
        "" => None,
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        other => return Err(row.bad("canceled", format!("`{other}` is not a boolean"))),
    };
    let nlp = (METADATA_COLUMNS.len()..names.len())
        .map(|i| row.real(i, &names[i]))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(EpisodeRecord {
        show_id: row.required_str(0, "show_id")?,
        show_title: row.raw(1).to_string(),
        season: row.positive_int(2, "season")?,
        episode: row.positive_int(3, "episode")?,
        air_date,
        length_minutes,
        imdb_rating,
        genre: row.raw(7).to_string(),
        network: row.raw(8).to_string(),
        viewers_millions,
        canceled,
        nlp,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the corpus in the schema [`parse_corpus`] reads, shows sorted by id,
/// episodes in air order. Floats use shortest round-trip formatting.
pub fn write_corpus<W: Write>(corpus: &EpisodeCorpus, sink: W) -> Result<(), CorpusError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(header_names(&corpus.manifest))?;
    for r in corpus.records() {
        let mut fields = vec![
            r.show_id.clone(),
            r.show_title.clone(),
            r.season.to_string(),
            r.episode.to_string(),
            r.air_date.format("%Y-%m-%d").to_string(),
            fmt_opt(r.length_minutes),
            fmt_opt(r.imdb_rating),
            r.genre.clone(),
            r.network.clone(),
            r.viewers_millions.to_string(),
            r.canceled.map(|b| b.to_string()).unwrap_or_default(),
        ];
        fields.extend(r.nlp.iter().map(|v| v.to_string()));
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowSummary {
    pub show_id: String,
    pub episodes: usize,
    pub first_air_date: NaiveDate,
    pub last_air_date: NaiveDate,
    pub below_rolling_minimum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonFiniteCell {
    pub episode: EpisodeKey,
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub shows: Vec<ShowSummary>,
    /// Shows with fewer than [`ROLLING_MINIMUM_EPISODES`] episodes.
    pub short_shows: usize,
    pub non_finite_cells: Vec<NonFiniteCell>,
}

impl ValidationReport {
    /// Number of flagged conditions.
    pub fn flag_count(&self) -> usize {
        self.short_shows + self.non_finite_cells.len()
    }

    /// True when the data itself is unusable (as opposed to merely short shows).
    pub fn has_errors(&self) -> bool {
        !self.non_finite_cells.is_empty()
    }
}

pub fn validate_corpus(corpus: &EpisodeCorpus) -> ValidationReport {
    let nlp_columns = corpus.manifest.nlp_columns();
    let mut shows = Vec::with_capacity(corpus.shows.len());
    let mut non_finite_cells = Vec::new();
    for (show_id, episodes) in &corpus.shows {
        // Stored in air order, so the ends bound the date range.
        let (Some(first), Some(last)) = (episodes.first(), episodes.last()) else {
            continue;
        };
        shows.push(ShowSummary {
            show_id: show_id.clone(),
            episodes: episodes.len(),
            first_air_date: first.air_date,
            last_air_date: last.air_date,
            below_rolling_minimum: episodes.len() < ROLLING_MINIMUM_EPISODES,
        });
        for e in episodes {
            for (value, column) in e.nlp.iter().zip(&nlp_columns) {
                if !value.is_finite() {
                    non_finite_cells.push(NonFiniteCell {
                        episode: e.key(),
                        column: column.clone(),
                        value: value.to_string(),
                    });
                }
            }
        }
    }
    let short_shows = shows.iter().filter(|s| s.below_rolling_minimum).count();
    ValidationReport {
        shows,
        short_shows,
        non_finite_cells,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_manifest() -> ScoreManifest {
        ScoreManifest::new(vec!["Joy".into(), "Fear".into()], "test").unwrap()
    }

    pub(crate) fn header(manifest: &ScoreManifest) -> String {
        header_names(manifest).join(",")
    }

    pub(crate) fn row(show: &str, season: u32, episode: u32, date: &str, viewers: f64) -> String {
        format!(
            "{show},Title {show},{season},{episode},{date},22,7.5,Sitcom,NBC,{viewers},false,1,2,3,4,5,6"
        )
    }

    fn parse(lines: &[String]) -> Result<EpisodeCorpus, CorpusError> {
        let m = tiny_manifest();
        let mut text = header(&m);
        for l in lines {
            text.push('\n');
            text.push_str(l);
        }
        parse_corpus(text.as_bytes(), &m)
    }

    #[test]
    fn default_manifest_has_43_scores() {
        let m = ScoreManifest::default_manifest();
        assert_eq!(m.len(), 43);
        assert_eq!(m.dimension(), 129);
        for named in ["Anger", "Joy", "Fear", "Positive", "Negative", "Insight", "Cause", "Analytic", "Clout", "Authenticity", "Tone"] {
            assert!(m.names().iter().any(|n| n == named), "{named}");
        }
    }

    #[test]
    fn manifest_rejects_duplicates_and_blanks() {
        assert!(ScoreManifest::new(vec!["a".into(), "a".into()], "v").is_err());
        assert!(ScoreManifest::new(vec![" ".into()], "v").is_err());
        assert!(ScoreManifest::new(vec![], "v").is_err());
        let m = ScoreManifest::from_json(r#"{"version":"2","names":["x","y"]}"#).unwrap();
        assert_eq!(m.version(), "2");
        assert_eq!(m.index_of(2, "y"), Some(3));
        assert_eq!(m.index_of(4, "y"), None);
    }

    #[test]
    fn empty_file_with_header_is_empty_corpus() {
        let c = parse(&[]).unwrap();
        assert_eq!(c.n_shows(), 0);
    }

    #[test]
    fn single_row_gives_one_show() {
        let c = parse(&[row("a", 1, 1, "2020-01-06", 3.0)]).unwrap();
        assert_eq!(c.n_shows(), 1);
        assert_eq!(c.n_episodes(), 1);
        let e = &c.air_order("a").unwrap()[0];
        assert_eq!(e.nlp, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(e.canceled, Some(false));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = parse(&[row("a", 1, 1, "2020-01-06", 3.0), row("a", 1, 1, "2020-01-13", 3.0)])
            .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateEpisode(k) if k.episode == 1));
    }

    #[test]
    fn missing_column_is_named() {
        let m = tiny_manifest();
        let text = header(&m).replace(",act3_Fear", "");
        let err = parse_corpus(text.as_bytes(), &m).unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn(c) if c == "act3_Fear"));
    }

    #[test]
    fn empty_input_has_no_header() {
        let err = parse_corpus(&b""[..], &tiny_manifest()).unwrap_err();
        assert!(matches!(err, CorpusError::MissingHeader | CorpusError::MissingColumn(_)));
    }

    #[test]
    fn bad_cells_are_reported() {
        let bad_date = row("a", 1, 1, "06/01/2020", 3.0);
        assert!(matches!(parse(&[bad_date]), Err(CorpusError::BadCell { column, row: 2, .. }) if column == "air_date"));
        let negative = row("a", 1, 1, "2020-01-06", -1.0);
        assert!(matches!(parse(&[negative]), Err(CorpusError::BadCell { column, .. }) if column == "viewers_millions"));
        let missing_nlp = row("a", 1, 1, "2020-01-06", 1.0).replace(",6", ",");
        assert!(matches!(parse(&[missing_nlp]), Err(CorpusError::BadCell { column, .. }) if column == "act3_Fear"));
        let season_zero = row("a", 0, 1, "2020-01-06", 1.0);
        assert!(matches!(parse(&[season_zero]), Err(CorpusError::BadCell { column, .. }) if column == "season"));
    }

    #[test]
    fn optional_metadata_may_be_blank() {
        let line = row("a", 1, 1, "2020-01-06", 1.0).replace(",22,7.5,", ",,,").replace(",false,", ",,");
        let c = parse(&[line]).unwrap();
        let e = &c.air_order("a").unwrap()[0];
        assert_eq!((e.length_minutes, e.imdb_rating, e.canceled), (None, None, None));
    }

    #[test]
    fn strict_dates() {
        assert!(parse_date("2020-01-06").is_some());
        assert!(parse_date("2020-1-6").is_none());
        assert!(parse_date("2020-02-30").is_none());
        assert!(parse_date("06-01-2020").is_none());
    }

    #[test]
    fn air_order_sorts_by_date_then_key() {
        let c = parse(&[
            row("a", 1, 6, "2020-01-13", 1.0),
            row("a", 1, 5, "2020-01-13", 1.0),
            row("a", 1, 1, "2020-01-06", 1.0),
        ])
        .unwrap();
        let eps: Vec<u32> = c.air_order("a").unwrap().iter().map(|e| e.episode).collect();
        assert_eq!(eps, vec![1, 5, 6]);
        assert!(matches!(c.air_order("zzz"), Err(CorpusError::UnknownShow(_))));
    }

    #[test]
    fn validation_flags_short_shows_and_nan() {
        let c = parse(&[row("a", 1, 1, "2020-01-06", 1.0), row("a", 1, 2, "2020-01-13", 1.0)]).unwrap();
        let report = validate_corpus(&c);
        assert_eq!(report.short_shows, 1);
        assert!(report.shows[0].below_rolling_minimum);

        let lines: Vec<String> = (1..=10)
            .map(|e| row("b", 1, e, &format!("2020-03-{:02}", e), 2.0))
            .collect();
        let c = parse(&lines).unwrap();
        let report = validate_corpus(&c);
        assert_eq!(report.flag_count(), 0);

        let nan = row("a", 1, 1, "2020-01-06", 1.0).replace(",5,6", ",NaN,6");
        let c = parse(&[nan]).unwrap();
        let report = validate_corpus(&c);
        assert_eq!(report.non_finite_cells.len(), 1);
        assert_eq!(report.non_finite_cells[0].column, "act3_Joy");
        assert_eq!(report.non_finite_cells[0].episode.episode, 1);
        assert!(report.has_errors());
    }
}
