//! Feature engineering: genre collapse, one-hot encoding, calendar features,
//! viewership dynamics, winsorization, and lag alignment into supervised frames.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, EpisodeCorpus, EpisodeKey, EpisodeRecord};

const DEFAULT_GENRE_MAP_JSON: &str = include_str!("../data/genre_map.json");
const FALLBACK_KEY: &str = "_fallback";

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("need at least {needed} episodes, show has {found}")]
    TooFewEpisodes { needed: usize, found: usize },
    #[error("moving-average window must be >= 1")]
    InvalidWindow,
    #[error("cannot fit winsorization on an empty column")]
    EmptyColumn,
    #[error("invalid percentile limits ({lower}, {upper})")]
    InvalidPercentiles { lower: f64, upper: f64 },
    #[error("unknown feature column `{0}`")]
    UnknownColumn(String),
    #[error("non-finite value in column `{column}` for episode {episode}")]
    NonFinite { column: String, episode: EpisodeKey },
    #[error("invalid genre map: {0}")]
    InvalidGenreMap(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Raw genre label to coarse label, total via a fallback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenreMap {
    map: BTreeMap<String, String>,
    fallback: String,
}

impl GenreMap {
    pub fn new(map: BTreeMap<String, String>, fallback: impl Into<String>) -> Self {
        Self {
            map,
            fallback: fallback.into(),
        }
    }

    /// The bundled 54-label to 14-class map, falling back to `Other`.
    pub fn default_map() -> Self {
        Self::from_json(DEFAULT_GENRE_MAP_JSON).expect("bundled genre map is valid")
    }

    /// JSON object of raw -> coarse labels plus a `"_fallback"` entry.
    pub fn from_json(text: &str) -> Result<Self, PreprocessError> {
        let mut map: BTreeMap<String, String> = serde_json::from_str(text)
            .map_err(|e| PreprocessError::InvalidGenreMap(e.to_string()))?;
        let fallback = map
            .remove(FALLBACK_KEY)
            .ok_or_else(|| PreprocessError::InvalidGenreMap("missing `_fallback` entry".into()))?;
        Ok(Self { map, fallback })
    }

    pub fn to_json(&self) -> String {
        let mut all = self.map.clone();
        all.insert(FALLBACK_KEY.into(), self.fallback.clone());
        serde_json::to_string_pretty(&all).expect("string map serializes")
    }

    pub fn fallback(&self) -> &str {
        &self.fallback
    }

    /// Distinct coarse labels, excluding the fallback.
    pub fn coarse_labels(&self) -> BTreeSet<&str> {
        self.map.values().map(String::as_str).collect()
    }

    pub fn collapse<'a>(&'a self, raw: &str) -> &'a str {
        self.map
            .get(raw.trim())
            .map(String::as_str)
            .unwrap_or(&self.fallback)
    }
}

pub fn collapse_genre<'a>(raw_label: &str, map: &'a GenreMap) -> &'a str {
    map.collapse(raw_label)
}

/// Indicator columns for a categorical column.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot {
    /// Sorted distinct labels, one per column.
    pub categories: Vec<String>,
    /// `columns[c][row]` is 1.0 iff row has `categories[c]`.
    pub columns: Vec<Vec<f64>>,
}

pub fn one_hot<S: AsRef<str>>(labels: &[S]) -> OneHot {
    let categories: Vec<String> = labels
        .iter()
        .map(|l| l.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let columns = categories
        .iter()
        .map(|c| {
            labels
                .iter()
                .map(|l| if l.as_ref() == c { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    OneHot {
        categories,
        columns,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeasonOfYear {
    Winter,
    Spring,
    Summer,
    Fall,
}

impl SeasonOfYear {
    pub fn from_month(month: u32) -> Self {
        match month {
            12 | 1 | 2 => Self::Winter,
            3..=5 => Self::Spring,
            6..=8 => Self::Summer,
            _ => Self::Fall,
        }
    }

    /// 1 = winter .. 4 = fall.
    pub fn ordinal(self) -> i32 {
        match self {
            Self::Winter => 1,
            Self::Spring => 2,
            Self::Summer => 3,
            Self::Fall => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodePosition {
    Premiere,
    Finale,
    Mid,
}

/// Smallest and largest episode number within one (show, season).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeasonExtents {
    pub first_episode: u32,
    pub last_episode: u32,
}

pub fn season_extents(episodes: &[EpisodeRecord]) -> BTreeMap<u32, SeasonExtents> {
    let mut out: BTreeMap<u32, SeasonExtents> = BTreeMap::new();
    for e in episodes {
        out.entry(e.season)
            .and_modify(|x| {
                x.first_episode = x.first_episode.min(e.episode);
                x.last_episode = x.last_episode.max(e.episode);
            })
            .or_insert(SeasonExtents {
                first_episode: e.episode,
                last_episode: e.episode,
            });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalFeatures {
    pub month: u32,
    pub year: i32,
    pub year_month: i32,
    /// 0 = Monday .. 6 = Sunday.
    pub day_of_week: u32,
    pub season_of_year: SeasonOfYear,
    pub year_season: i32,
    pub position: EpisodePosition,
}

/// A one-episode season counts as a premiere.
pub fn temporal_features(air_date: NaiveDate, episode: u32, extents: SeasonExtents) -> TemporalFeatures {
    let month = air_date.month();
    let year = air_date.year();
    let season_of_year = SeasonOfYear::from_month(month);
    let position = if episode == extents.first_episode {
        EpisodePosition::Premiere
    } else if episode == extents.last_episode {
        EpisodePosition::Finale
    } else {
        EpisodePosition::Mid
    };
    TemporalFeatures {
        month,
        year,
        year_month: year * 100 + month as i32,
        day_of_week: air_date.weekday().num_days_from_monday(),
        season_of_year,
        year_season: year * 10 + season_of_year.ordinal(),
        position,
    }
}

/// Relative change series. `values[0]` is always undefined; `zero_prior` lists
/// indices left undefined because the previous value was zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PctChange {
    pub values: Vec<Option<f64>>,
    pub zero_prior: Vec<usize>,
}

pub fn pct_change(series: &[f64]) -> PctChange {
    let mut values = Vec::with_capacity(series.len());
    let mut zero_prior = Vec::new();
    for (t, &v) in series.iter().enumerate() {
        if t == 0 {
            values.push(None);
        } else if series[t - 1] == 0.0 {
            values.push(None);
            zero_prior.push(t);
        } else {
            values.push(Some((v - series[t - 1]) / series[t - 1]));
        }
    }
    PctChange { values, zero_prior }
}

/// Trailing mean over fully filled windows only.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<Option<f64>>, PreprocessError> {
    if window == 0 {
        return Err(PreprocessError::InvalidWindow);
    }
    Ok((0..series.len())
        .map(|t| {
            (t + 1 >= window).then(|| {
                let slice = &series[t + 1 - window..=t];
                slice.iter().sum::<f64>() / window as f64
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorLimits {
    /// Lower percentile, in [0, 100).
    pub lower: f64,
    /// Upper percentile, in (lower, 100].
    pub upper: f64,
}

impl Default for WinsorLimits {
    fn default() -> Self {
        Self {
            lower: 1.0,
            upper: 99.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinsorStats {
    pub lower: f64,
    pub upper: f64,
    pub limits: WinsorLimits,
}

/// Percentile by linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn winsorize_fit(train_column: &[f64], lower_pct: f64, upper_pct: f64) -> Result<WinsorStats, PreprocessError> {
    if !(0.0..100.0).contains(&lower_pct) || !(upper_pct > lower_pct && upper_pct <= 100.0) {
        return Err(PreprocessError::InvalidPercentiles {
            lower: lower_pct,
            upper: upper_pct,
        });
    }
    if train_column.is_empty() {
        return Err(PreprocessError::EmptyColumn);
    }
    let mut sorted = train_column.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(WinsorStats {
        lower: percentile(&sorted, lower_pct),
        upper: percentile(&sorted, upper_pct),
        limits: WinsorLimits {
            lower: lower_pct,
            upper: upper_pct,
        },
    })
}

pub fn winsorize_value(value: f64, stats: &WinsorStats) -> f64 {
    value.clamp(stats.lower, stats.upper)
}

pub fn winsorize_apply(column: &[f64], stats: &WinsorStats) -> Vec<f64> {
    column.iter().map(|&v| winsorize_value(v, stats)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Level,
    PctChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub include_prev_viewership: bool,
    pub include_temporal: bool,
    pub include_gap_days: bool,
    pub target: TargetKind,
    pub ma_windows: Vec<usize>,
    pub winsor: Option<WinsorLimits>,
    /// Keep only these columns (frame order is preserved).
    pub restrict_to: Option<Vec<String>>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::rolling()
    }
}

impl FeatureConfig {
    /// Rolling retrain: no calendar or schedule columns, no smoothing.
    pub fn rolling() -> Self {
        Self {
            include_prev_viewership: true,
            include_temporal: false,
            include_gap_days: false,
            target: TargetKind::Level,
            ma_windows: Vec::new(),
            winsor: None,
            restrict_to: None,
        }
    }

    /// Nested selection: calendar columns, 3/5-episode averages, 1/99 winsorization.
    pub fn selection() -> Self {
        Self {
            include_prev_viewership: true,
            include_temporal: true,
            include_gap_days: false,
            target: TargetKind::Level,
            ma_windows: vec![3, 5],
            winsor: Some(WinsorLimits::default()),
            restrict_to: None,
        }
    }

    /// Metadata and NLP scores only.
    pub fn bare() -> Self {
        Self {
            include_prev_viewership: false,
            include_temporal: false,
            include_gap_days: false,
            target: TargetKind::Level,
            ma_windows: Vec::new(),
            winsor: None,
            restrict_to: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    /// Real-valued; eligible for winsorization.
    Continuous,
    /// Integer codes such as month or year.
    Ordinal,
    /// 0/1 one-hot or flag.
    Indicator,
}

/// Where a frame row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMeta {
    pub target: EpisodeKey,
    /// Air-order position of the target episode within its show.
    pub target_index: usize,
    pub target_air_date: NaiveDate,
    /// Viewership of the episode preceding the target.
    pub prev_level: f64,
    /// Unwinsorized target viewership.
    pub actual_level: f64,
}

/// Lag-aligned supervised design matrix: row features describe episodes
/// strictly before the row's target episode.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    columns: Vec<String>,
    kinds: Vec<ColumnKind>,
    data: Vec<f64>,
    targets: Vec<f64>,
    target_kind: TargetKind,
    meta: Vec<RowMeta>,
    dropped_rows: usize,
}

impl FeatureFrame {
    /// Builds a frame from a row-major matrix. Panics on shape mismatch.
    pub fn from_parts(
        columns: Vec<String>,
        kinds: Vec<ColumnKind>,
        data: Vec<f64>,
        targets: Vec<f64>,
        target_kind: TargetKind,
        meta: Vec<RowMeta>,
    ) -> Self {
        assert_eq!(columns.len(), kinds.len());
        assert_eq!(targets.len(), meta.len());
        assert_eq!(data.len(), columns.len() * targets.len());
        Self {
            columns,
            kinds,
            data,
            targets,
            target_kind,
            meta,
            dropped_rows: 0,
        }
    }

    /// Unlabelled frame for plain regression use (tests, tools).
    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>], targets: Vec<f64>) -> Self {
        let kinds = vec![ColumnKind::Continuous; columns.len()];
        let meta = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| RowMeta {
                target: EpisodeKey {
                    show_id: String::new(),
                    season: 1,
                    episode: i as u32 + 1,
                },
                target_index: i,
                target_air_date: NaiveDate::default(),
                prev_level: 0.0,
                actual_level: y,
            })
            .collect();
        let data = rows.iter().flatten().copied().collect();
        Self::from_parts(columns, kinds, data, targets, TargetKind::Level, meta)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.columns.len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.columns.len() + col]
    }

    pub fn column_values(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.value(r, col)).collect()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_kind(&self) -> TargetKind {
        self.target_kind
    }

    pub fn target_name(&self) -> &'static str {
        match self.target_kind {
            TargetKind::Level => "viewers_millions",
            TargetKind::PctChange => "viewers_pct_change",
        }
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    /// Rows discarded because a required cell was undefined.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Converts a model output for `row` back to viewers in millions.
    pub fn to_level(&self, row: usize, prediction: f64) -> f64 {
        match self.target_kind {
            TargetKind::Level => prediction,
            TargetKind::PctChange => self.meta[row].prev_level * (1.0 + prediction),
        }
    }

    /// Keeps the named columns, in this frame's column order.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, PreprocessError> {
        let wanted: BTreeSet<&str> = names.iter().map(|s| s.as_ref()).collect();
        for name in &wanted {
            if self.column_index(name).is_none() {
                return Err(PreprocessError::UnknownColumn(name.to_string()));
            }
        }
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&j| wanted.contains(self.columns[j].as_str()))
            .collect();
        let mut data = Vec::with_capacity(keep.len() * self.n_rows());
        for r in 0..self.n_rows() {
            data.extend(keep.iter().map(|&j| self.value(r, j)));
        }
        Ok(Self {
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            kinds: keep.iter().map(|&j| self.kinds[j]).collect(),
            data,
            targets: self.targets.clone(),
            target_kind: self.target_kind,
            meta: self.meta.clone(),
            dropped_rows: self.dropped_rows,
        })
    }

    /// Contiguous row range.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        let w = self.n_cols();
        Self {
            columns: self.columns.clone(),
            kinds: self.kinds.clone(),
            data: self.data[range.start * w..range.end * w].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            target_kind: self.target_kind,
            meta: self.meta[range].to_vec(),
            dropped_rows: self.dropped_rows,
        }
    }

    /// Stacks frames with identical columns and target kind, e.g. to pool shows.
    pub fn concat(frames: &[Self]) -> Result<Self, PreprocessError> {
        let Some(first) = frames.first() else {
            return Ok(Self::from_rows(Vec::new(), &[], Vec::new()));
        };
        let mut out = first.clone();
        for f in &frames[1..] {
            if f.columns != first.columns || f.target_kind != first.target_kind {
                let name = f
                    .columns
                    .iter()
                    .find(|c| !first.columns.contains(c))
                    .or_else(|| first.columns.iter().find(|c| !f.columns.contains(c)))
                    .cloned()
                    .unwrap_or_else(|| "<column order or target kind>".into());
                return Err(PreprocessError::UnknownColumn(name));
            }
            out.data.extend_from_slice(&f.data);
            out.targets.extend_from_slice(&f.targets);
            out.meta.extend_from_slice(&f.meta);
            out.dropped_rows += f.dropped_rows;
        }
        Ok(out)
    }

    /// Number of leading rows whose target precedes air-order index `index`.
    pub fn rows_before(&self, index: usize) -> usize {
        self.meta.partition_point(|m| m.target_index < index)
    }

    /// Row whose target sits at air-order `index`, if present.
    pub fn row_for_target(&self, index: usize) -> Option<usize> {
        let r = self.rows_before(index);
        (r < self.n_rows() && self.meta[r].target_index == index).then_some(r)
    }

    /// Fits winsorization on the first `train_rows` rows and applies it:
    /// continuous features on every row, targets on the training rows only.
    pub fn winsorized(&self, train_rows: usize, limits: WinsorLimits) -> Result<(Self, WinsorPlan), PreprocessError> {
        let plan = WinsorPlan::fit(self, train_rows, limits)?;
        let mut out = self.clone();
        plan.apply(&mut out, train_rows);
        Ok((out, plan))
    }
}

/// Per-column clip bounds fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WinsorPlan {
    pub features: Vec<(usize, WinsorStats)>,
    pub target: WinsorStats,
}

impl WinsorPlan {
    pub fn fit(frame: &FeatureFrame, train_rows: usize, limits: WinsorLimits) -> Result<Self, PreprocessError> {
        let train = frame.slice_rows(0..train_rows.min(frame.n_rows()));
        let features = (0..frame.n_cols())
            .filter(|&j| frame.kinds[j] == ColumnKind::Continuous)
            .map(|j| Ok((j, winsorize_fit(&train.column_values(j), limits.lower, limits.upper)?)))
            .collect::<Result<Vec<_>, PreprocessError>>()?;
        let target = winsorize_fit(train.targets(), limits.lower, limits.upper)?;
        Ok(Self { features, target })
    }

    /// Clips continuous features everywhere and targets of the first `train_rows` rows.
    pub fn apply(&self, frame: &mut FeatureFrame, train_rows: usize) {
        let w = frame.n_cols();
        for r in 0..frame.n_rows() {
            for (j, stats) in &self.features {
                let cell = &mut frame.data[r * w + j];
                *cell = winsorize_value(*cell, stats);
            }
        }
        for t in frame.targets.iter_mut().take(train_rows) {
            *t = winsorize_value(*t, &self.target);
        }
    }
}

/// Categorical vocabularies shared by every show in a corpus, so one-hot
/// columns are stable across shows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignContext {
    pub genre_map: GenreMap,
    pub genres: Vec<String>,
    pub networks: Vec<String>,
    pub nlp_columns: Vec<String>,
}

impl DesignContext {
    pub fn from_corpus(corpus: &EpisodeCorpus, genre_map: &GenreMap) -> Self {
        let genres: BTreeSet<String> = corpus
            .records()
            .map(|r| genre_map.collapse(&r.genre).to_string())
            .collect();
        let networks: BTreeSet<String> = corpus.records().map(|r| r.network.clone()).collect();
        Self {
            genre_map: genre_map.clone(),
            genres: genres.into_iter().collect(),
            networks: networks.into_iter().collect(),
            nlp_columns: corpus.manifest().nlp_columns(),
        }
    }
}

struct ColumnSpec {
    name: String,
    kind: ColumnKind,
}

fn col(name: impl Into<String>, kind: ColumnKind) -> ColumnSpec {
    ColumnSpec {
        name: name.into(),
        kind,
    }
}

/// Pairs features observable at episode t with viewership at t+1.
///
/// Rows whose required cells are undefined (unfilled moving-average windows,
/// zero-prior percentage change) are dropped and counted.
pub fn lag_align(
    episodes: &[EpisodeRecord],
    ctx: &DesignContext,
    config: &FeatureConfig,
) -> Result<FeatureFrame, PreprocessError> {
    let n = episodes.len();
    if n < 2 {
        return Err(PreprocessError::TooFewEpisodes { needed: 2, found: n });
    }
    let viewers: Vec<f64> = episodes.iter().map(|e| e.viewers_millions).collect();
    let averages = config
        .ma_windows
        .iter()
        .map(|&w| moving_average(&viewers, w))
        .collect::<Result<Vec<_>, _>>()?;
    let changes = pct_change(&viewers);
    let extents = season_extents(episodes);
    let with_length = episodes.iter().all(|e| e.length_minutes.is_some());
    let with_rating = episodes.iter().all(|e| e.imdb_rating.is_some());

    let mut specs = Vec::new();
    if config.include_prev_viewership {
        specs.push(col("prev_viewership", ColumnKind::Continuous));
    }
    for w in &config.ma_windows {
        specs.push(col(format!("ma{w}"), ColumnKind::Continuous));
    }
    if config.include_gap_days {
        specs.push(col("gap_days", ColumnKind::Continuous));
    }
    if with_length {
        specs.push(col("length_minutes", ColumnKind::Continuous));
    }
    if with_rating {
        specs.push(col("imdb_rating", ColumnKind::Continuous));
    }
    specs.extend(ctx.genres.iter().map(|g| col(format!("genre_{g}"), ColumnKind::Indicator)));
    specs.extend(ctx.networks.iter().map(|g| col(format!("network_{g}"), ColumnKind::Indicator)));
    if config.include_temporal {
        for name in [
            "air_date_ordinal",
            "season_number",
            "episode_number",
            "month",
            "year",
            "year_month",
            "day_of_week",
            "season_of_year",
            "year_season",
        ] {
            specs.push(col(name, ColumnKind::Ordinal));
        }
        for name in ["is_premiere", "is_finale", "is_mid_season"] {
            specs.push(col(name, ColumnKind::Indicator));
        }
    }
    specs.extend(ctx.nlp_columns.iter().map(|c| col(c.clone(), ColumnKind::Continuous)));

    let mut data = Vec::with_capacity(specs.len() * (n - 1));
    let mut targets = Vec::with_capacity(n - 1);
    let mut meta = Vec::with_capacity(n - 1);
    let mut dropped = 0;
    let mut cells: Vec<Option<f64>> = Vec::with_capacity(specs.len());
    for j in 1..n {
        let t = j - 1;
        let ep = &episodes[t];
        cells.clear();
        if config.include_prev_viewership {
            cells.push(Some(viewers[t]));
        }
        cells.extend(averages.iter().map(|ma| ma[t]));
        if config.include_gap_days {
            cells.push(Some((episodes[j].air_date - ep.air_date).num_days() as f64));
        }
        if with_length {
            cells.push(ep.length_minutes);
        }
        if with_rating {
            cells.push(ep.imdb_rating);
        }
        let genre = ctx.genre_map.collapse(&ep.genre);
        cells.extend(ctx.genres.iter().map(|g| Some(indicator(g == genre))));
        cells.extend(ctx.networks.iter().map(|g| Some(indicator(*g == ep.network))));
        if config.include_temporal {
            let tf = temporal_features(ep.air_date, ep.episode, extents[&ep.season]);
            let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
            cells.extend(
                [
                    (ep.air_date - epoch).num_days() as f64,
                    ep.season as f64,
                    ep.episode as f64,
                    tf.month as f64,
                    tf.year as f64,
                    tf.year_month as f64,
                    tf.day_of_week as f64,
                    tf.season_of_year.ordinal() as f64,
                    tf.year_season as f64,
                    indicator(tf.position == EpisodePosition::Premiere),
                    indicator(tf.position == EpisodePosition::Finale),
                    indicator(tf.position == EpisodePosition::Mid),
                ]
                .map(Some),
            );
        }
        cells.extend(ep.nlp.iter().copied().map(Some));
        debug_assert_eq!(cells.len(), specs.len());

        let target = match config.target {
            TargetKind::Level => Some(viewers[j]),
            TargetKind::PctChange => changes.values[j],
        };
        let (Some(target), true) = (target, cells.iter().all(Option::is_some)) else {
            dropped += 1;
            continue;
        };
        for (value, spec) in cells.iter().flatten().zip(&specs) {
            if !value.is_finite() {
                return Err(PreprocessError::NonFinite {
                    column: spec.name.clone(),
                    episode: ep.key(),
                });
            }
        }
        data.extend(cells.iter().flatten());
        targets.push(target);
        meta.push(RowMeta {
            target: episodes[j].key(),
            target_index: j,
            target_air_date: episodes[j].air_date,
            prev_level: viewers[t],
            actual_level: viewers[j],
        });
    }

    let mut frame = FeatureFrame::from_parts(
        specs.iter().map(|s| s.name.clone()).collect(),
        specs.iter().map(|s| s.kind).collect(),
        data,
        targets,
        config.target,
        meta,
    );
    frame.dropped_rows = dropped;
    Ok(frame)
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Full design for one show: lag alignment, optional column restriction, and,
/// when `train_rows` is given and the config asks for it, winsorization fitted
/// on those leading rows.
pub fn assemble_design(
    corpus: &EpisodeCorpus,
    show_id: &str,
    genre_map: &GenreMap,
    config: &FeatureConfig,
    train_rows: Option<usize>,
) -> Result<FeatureFrame, PreprocessError> {
    let ctx = DesignContext::from_corpus(corpus, genre_map);
    let episodes = corpus.air_order(show_id)?;
    let mut frame = lag_align(episodes, &ctx, config)?;
    if let Some(keep) = &config.restrict_to {
        frame = frame.select_columns(keep)?;
    }
    if let (Some(limits), Some(k)) = (config.winsor, train_rows) {
        frame = frame.winsorized(k, limits)?.0;
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ScoreManifest;
    use proptest::prelude::*;

    fn episodes(viewers: &[f64]) -> Vec<EpisodeRecord> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        viewers
            .iter()
            .enumerate()
            .map(|(i, &v)| EpisodeRecord {
                show_id: "s".into(),
                show_title: "S".into(),
                season: 1 + (i / 5) as u32,
                episode: 1 + (i % 5) as u32,
                air_date: start + chrono::Duration::days(7 * i as i64),
                length_minutes: Some(22.0),
                imdb_rating: Some(8.0),
                genre: "Sitcom".into(),
                network: "NBC".into(),
                viewers_millions: v,
                canceled: None,
                nlp: (0..6).map(|k| (i * 10 + k) as f64).collect(),
            })
            .collect()
    }

    fn context() -> DesignContext {
        DesignContext {
            genre_map: GenreMap::default_map(),
            genres: vec!["Comedy".into()],
            networks: vec!["NBC".into()],
            nlp_columns: ScoreManifest::new(vec!["Joy".into(), "Fear".into()], "t")
                .unwrap()
                .nlp_columns(),
        }
    }

    #[test]
    fn genre_collapse() {
        let map = GenreMap::default_map();
        assert_eq!(collapse_genre("Drama", &map), "Drama");
        assert_eq!(collapse_genre("Telenovela", &map), "Other");
        assert_eq!(collapse_genre("Sitcom", &map), "Comedy");
        assert_eq!(map.coarse_labels().len(), 14);
        let round = GenreMap::from_json(&map.to_json()).unwrap();
        assert_eq!(round, map);
        assert!(GenreMap::from_json(r#"{"a":"b"}"#).is_err());
    }

    #[test]
    fn one_hot_cases() {
        let a = one_hot(&["A", "A"]);
        assert_eq!(a.columns, vec![vec![1.0, 1.0]]);
        let ab = one_hot(&["A", "B"]);
        assert_eq!(ab.categories, vec!["A", "B"]);
        assert_eq!(ab.columns, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let map = GenreMap::default_map();
        let coarse: Vec<&str> = map.coarse_labels().into_iter().collect();
        assert_eq!(one_hot(&coarse).columns.len(), 14);
    }

    #[test]
    fn calendar_features() {
        let monday = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        let ext = SeasonExtents {
            first_episode: 1,
            last_episode: 10,
        };
        let tf = temporal_features(monday, 4, ext);
        assert_eq!((tf.month, tf.day_of_week, tf.season_of_year), (1, 0, SeasonOfYear::Winter));
        assert_eq!(tf.year_month, 202001);
        assert_eq!(tf.year_season, 20201);
        assert_eq!(tf.position, EpisodePosition::Mid);
        assert_eq!(temporal_features(monday, 10, ext).position, EpisodePosition::Finale);
        assert_eq!(temporal_features(monday, 1, ext).position, EpisodePosition::Premiere);
    }

    #[test]
    fn pct_change_cases() {
        assert_eq!(pct_change(&[3.0, 3.0, 3.0]).values, vec![None, Some(0.0), Some(0.0)]);
        assert_eq!(pct_change(&[2.0, 2.5]).values, vec![None, Some(0.25)]);
        let p = pct_change(&[1.0, 0.0, 5.0]);
        assert_eq!(p.values, vec![None, Some(-1.0), None]);
        assert_eq!(p.zero_prior, vec![2]);
    }

    #[test]
    fn moving_average_cases() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            moving_average(&s, 1).unwrap(),
            s.iter().map(|&v| Some(v)).collect::<Vec<_>>()
        );
        assert_eq!(moving_average(&s, 3).unwrap(), vec![None, None, Some(2.0), Some(3.0)]);
        assert_eq!(
            moving_average(&[2.5; 4], 3).unwrap(),
            vec![None, None, Some(2.5), Some(2.5)]
        );
        assert!(matches!(moving_average(&s, 0), Err(PreprocessError::InvalidWindow)));
    }

    /// Independent order-statistic percentile for the brute-force check.
    fn brute_percentile(values: &[f64], pct: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = pct / 100.0 * (v.len() as f64 - 1.0);
        let below = v[rank as usize];
        let above = v[(rank as usize + 1).min(v.len() - 1)];
        below + (rank - rank.trunc()) * (above - below)
    }

    #[test]
    fn winsorize_hundred_points() {
        let col: Vec<f64> = (1..=100).map(f64::from).collect();
        let stats = winsorize_fit(&col, 1.0, 99.0).unwrap();
        assert!((brute_percentile(&col, 1.0) - 1.99).abs() < 1e-12);
        assert!((brute_percentile(&col, 99.0) - 99.01).abs() < 1e-12);
        assert!((stats.lower - 1.99).abs() < 1e-12);
        assert!((stats.upper - 99.01).abs() < 1e-12);
        let out = winsorize_apply(&col, &stats);
        assert!((out[99] - 99.01).abs() < 1e-12);
        assert!((out[0] - 1.99).abs() < 1e-12);
        assert_eq!(out[50], 51.0);
    }

    #[test]
    fn winsorize_edges() {
        let stats = winsorize_fit(&[0.0, 10.0], 0.0, 100.0).unwrap();
        assert_eq!(winsorize_apply(&[1.0, 5.0, 9.0], &stats), vec![1.0, 5.0, 9.0]);
        assert!(matches!(winsorize_fit(&[], 1.0, 99.0), Err(PreprocessError::EmptyColumn)));
        assert!(winsorize_fit(&[1.0], 50.0, 50.0).is_err());
        assert!(winsorize_fit(&[1.0], -1.0, 50.0).is_err());
    }

    #[test]
    fn lag_align_shapes() {
        let ctx = context();
        let eps = episodes(&[1.0, 2.0, 3.0, 4.0]);
        let frame = lag_align(&eps, &ctx, &FeatureConfig::rolling()).unwrap();
        assert_eq!(frame.n_rows(), 3);
        assert!(frame.meta().iter().all(|m| m.target_index >= 1));
        assert_eq!(frame.targets(), &[2.0, 3.0, 4.0]);
        assert_eq!(frame.value(0, 0), 1.0);
        assert!(matches!(
            lag_align(&eps[..1], &ctx, &FeatureConfig::rolling()),
            Err(PreprocessError::TooFewEpisodes { .. })
        ));
    }

    #[test]
    fn lag_align_is_causal() {
        let ctx = context();
        let eps = episodes(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let mut perturbed = eps.clone();
        perturbed[3].nlp.iter_mut().for_each(|v| *v += 100.0);
        perturbed[3].viewers_millions = 40.0;
        let config = FeatureConfig::selection();
        let a = lag_align(&eps, &ctx, &config).unwrap();
        let b = lag_align(&perturbed, &ctx, &config).unwrap();
        for r in 0..a.n_rows() {
            let target = a.meta()[r].target_index;
            if target <= 3 {
                assert_eq!(a.row(r), b.row(r), "features for target {target}");
            }
            if target < 3 {
                assert_eq!(a.targets()[r], b.targets()[r]);
            }
        }
    }

    #[test]
    fn bare_config_is_metadata_plus_nlp() {
        let ctx = context();
        let frame = lag_align(&episodes(&[1.0, 2.0, 3.0]), &ctx, &FeatureConfig::bare()).unwrap();
        let mut expected = vec!["length_minutes", "imdb_rating", "genre_Comedy", "network_NBC"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        expected.extend(ctx.nlp_columns.clone());
        assert_eq!(frame.columns(), expected.as_slice());
    }

    #[test]
    fn rolling_and_selection_column_sets() {
        let ctx = context();
        let eps = episodes(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let rolling = lag_align(&eps, &ctx, &FeatureConfig::rolling()).unwrap();
        for banned in ["air_date_ordinal", "season_number", "episode_number", "month", "year"] {
            assert!(rolling.column_index(banned).is_none(), "{banned}");
        }
        let selection = lag_align(&eps, &ctx, &FeatureConfig::selection()).unwrap();
        for wanted in ["prev_viewership", "ma3", "ma5", "season_number"] {
            assert!(selection.column_index(wanted).is_some(), "{wanted}");
        }
        // ma5 needs five observed episodes, so the first row targets episode six.
        assert_eq!(selection.dropped_rows(), 4);
        assert_eq!(selection.meta()[0].target_index, 5);
        let ma5 = selection.column_index("ma5").unwrap();
        assert_eq!(selection.value(0, ma5), 3.0);
    }

    #[test]
    fn pct_target_round_trips_to_level() {
        let ctx = context();
        let mut config = FeatureConfig::rolling();
        config.target = TargetKind::PctChange;
        let frame = lag_align(&episodes(&[2.0, 0.0, 3.0, 4.5]), &ctx, &config).unwrap();
        // Target 3.0 has a zero prior and is dropped.
        assert_eq!(frame.dropped_rows(), 1);
        assert_eq!(frame.targets(), &[-1.0, 0.5]);
        assert_eq!(frame.to_level(1, 0.5), 4.5);
    }

    #[test]
    fn winsor_plan_uses_training_rows_only() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let mut targets: Vec<f64> = (0..10).map(f64::from).collect();
        targets[9] = 1000.0;
        let frame = FeatureFrame::from_rows(vec!["x".into()], &rows, targets);
        let (w, plan) = frame
            .winsorized(5, WinsorLimits { lower: 0.0, upper: 100.0 })
            .unwrap();
        assert_eq!(plan.target.upper, 4.0);
        // Features clip everywhere, test targets stay raw.
        assert_eq!(w.value(9, 0), 4.0);
        assert_eq!(w.targets()[9], 1000.0);
    }

    #[test]
    fn select_columns_keeps_frame_order() {
        let frame = FeatureFrame::from_rows(
            vec!["a".into(), "b".into(), "c".into()],
            &[vec![1.0, 2.0, 3.0]],
            vec![0.0],
        );
        let s = frame.select_columns(&["c", "a"]).unwrap();
        assert_eq!(s.columns(), &["a".to_string(), "c".to_string()]);
        assert_eq!(s.row(0), &[1.0, 3.0]);
        assert!(frame.select_columns(&["z"]).is_err());
    }

    proptest! {
        #[test]
        fn pct_change_reconstructs(series in prop::collection::vec(0.1f64..100.0, 1..40)) {
            let p = pct_change(&series);
            for t in 1..series.len() {
                let back = series[t - 1] * (1.0 + p.values[t].unwrap());
                prop_assert!((back - series[t]).abs() <= 1e-12 * series[t]);
            }
        }

        #[test]
        fn constant_moving_average(c in -50.0f64..50.0, n in 1usize..30, w in 1usize..8) {
            let out = moving_average(&vec![c; n], w).unwrap();
            for v in out.into_iter().flatten() {
                prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
            }
        }

        #[test]
        fn one_hot_rows_sum_to_one(labels in prop::collection::vec("[a-e]", 1..30)) {
            let oh = one_hot(&labels);
            for r in 0..labels.len() {
                let s: f64 = oh.columns.iter().map(|c| c[r]).sum();
                prop_assert_eq!(s, 1.0);
                prop_assert!(oh.columns.iter().all(|c| c[r] == 0.0 || c[r] == 1.0));
            }
        }

        #[test]
        fn winsorize_is_idempotent(
            train in prop::collection::vec(-100.0f64..100.0, 1..50),
            values in prop::collection::vec(-500.0f64..500.0, 0..50),
            lo in 0.0f64..49.0,
            hi in 51.0f64..100.0,
        ) {
            let stats = winsorize_fit(&train, lo, hi).unwrap();
            prop_assert!(stats.lower <= stats.upper);
            let once = winsorize_apply(&values, &stats);
            prop_assert_eq!(winsorize_apply(&once, &stats), once);
        }
    }
}
