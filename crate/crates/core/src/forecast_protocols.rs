//! Forecasting protocols and their evaluation.
//!
//! Every protocol predicts the target at air-order index `i` from a model fit
//! only on rows whose targets precede `i`. Rolling, persistence and ARX share
//! the evaluation window `2..n` (the third episode onward).

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosted_trees::{train, BoostError, BoostParams, FeatureGain, TreeEnsemble};
use crate::corpus::{CorpusError, EpisodeCorpus, EpisodeKey, EpisodeRecord};
use crate::preprocess::{lag_align, DesignContext, FeatureConfig, FeatureFrame, GenreMap, PreprocessError};
use crate::shap_explain::{shap_summary, ShapError, ShapSummary};

/// First evaluated target, 0-based: the rolling model needs one training pair.
pub const FIRST_TARGET: usize = 2;

/// Minimum show length for the 80/20 selection split.
pub const SELECTION_MIN_EPISODES: usize = 10;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("need at least {needed} episodes, show has {found}")]
    TooFewEpisodes { needed: usize, found: usize },
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("no target row could be built for `{0}` under this feature config")]
    NoEvaluableTargets(String),
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("invalid protocol parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Shap(#[from] ShapError),
}

impl ProtocolError {
    /// True when the show cannot support the protocol, as opposed to bad data or config.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Self::TooFewEpisodes { .. }
                | Self::EmptyEvaluation
                | Self::NoEvaluableTargets(_)
                | Self::Preprocess(PreprocessError::TooFewEpisodes { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Rolling,
    Selection,
    Combined,
    Persistence,
    Arx,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::Rolling,
        Protocol::Selection,
        Protocol::Combined,
        Protocol::Persistence,
        Protocol::Arx,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Rolling => "rolling",
            Protocol::Selection => "selection",
            Protocol::Combined => "combined",
            Protocol::Persistence => "persistence",
            Protocol::Arx => "arx",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownProtocol(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// `None` when fewer than two pairs or the actuals are constant.
    pub r2: Option<f64>,
    pub n: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// RMSE and R² over `(predicted, actual)` pairs, R² taken about the mean of
/// the evaluated actuals.
pub fn evaluate(pairs: &[(f64, f64)]) -> Result<Metrics, ProtocolError> {
    if pairs.is_empty() {
        return Err(ProtocolError::EmptyEvaluation);
    }
    let n = pairs.len();
    let actuals: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let m = mean(&actuals);
    let ss_res: f64 = pairs.iter().map(|(p, a)| (p - a) * (p - a)).sum();
    let ss_tot: f64 = actuals.iter().map(|a| (a - m) * (a - m)).sum();
    let r2 = (n >= 2 && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(Metrics {
        rmse: (ss_res / n as f64).sqrt(),
        r2,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub key: EpisodeKey,
    pub air_date: NaiveDate,
    /// Air-order position within the show.
    pub target_index: usize,
    pub predicted: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub show_id: String,
    pub protocol: Protocol,
    pub points: Vec<ForecastPoint>,
    pub metrics: Metrics,
    /// Gain importance of the last model fit, for tree protocols.
    pub importance: Option<Vec<FeatureGain>>,
}

impl ForecastSeries {
    fn new(
        show_id: &str,
        protocol: Protocol,
        points: Vec<ForecastPoint>,
        importance: Option<Vec<FeatureGain>>,
    ) -> Result<Self, ProtocolError> {
        let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.predicted, p.actual)).collect();
        Ok(Self {
            show_id: show_id.to_string(),
            protocol,
            metrics: evaluate(&pairs)?,
            points,
            importance,
        })
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.target_index).collect()
    }
}

fn point(episodes: &[EpisodeRecord], index: usize, predicted: f64) -> ForecastPoint {
    let e = &episodes[index];
    ForecastPoint {
        key: e.key(),
        air_date: e.air_date,
        target_index: index,
        predicted,
        actual: e.viewers_millions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingParams {
    pub features: FeatureConfig,
    pub boost: BoostParams,
    /// Refit every this many targets, reusing the last model in between.
    pub retrain_every: usize,
}

impl Default for RollingParams {
    fn default() -> Self {
        Self {
            features: FeatureConfig::rolling(),
            boost: BoostParams::default(),
            retrain_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub features: FeatureConfig,
    pub boost: BoostParams,
    pub top_k: usize,
    pub test_fraction: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            features: FeatureConfig::selection(),
            boost: BoostParams::default(),
            top_k: 20,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombinedParams {
    /// Used for both the stage-1 fit and every rolling step.
    pub features: FeatureConfig,
    pub boost: BoostParams,
    pub top_k: usize,
    pub test_fraction: f64,
    pub retrain_every: usize,
}

impl Default for CombinedParams {
    fn default() -> Self {
        Self {
            features: FeatureConfig {
                ma_windows: vec![3, 5],
                ..FeatureConfig::rolling()
            },
            boost: BoostParams::default(),
            top_k: 10,
            test_fraction: 0.2,
            retrain_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArxParams {
    /// Autoregressive lag order, >= 1.
    pub p: usize,
    pub include_gap: bool,
}

impl Default for ArxParams {
    fn default() -> Self {
        Self { p: 1, include_gap: true }
    }
}

/// Per-protocol settings, loadable from a partial JSON override file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub rolling: RollingParams,
    pub selection: SelectionParams,
    pub combined: CombinedParams,
    pub arx: ArxParams,
}

impl ProtocolConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Sets the boosting seed of every tree protocol.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rolling.boost.seed = seed;
        self.selection.boost.seed = seed;
        self.combined.boost.seed = seed;
        self
    }
}

fn show_frame(
    corpus: &EpisodeCorpus,
    show_id: &str,
    genre_map: &GenreMap,
    config: &FeatureConfig,
) -> Result<(Vec<EpisodeRecord>, FeatureFrame), ProtocolError> {
    let episodes = corpus.air_order(show_id)?.to_vec();
    let ctx = DesignContext::from_corpus(corpus, genre_map);
    let mut frame = lag_align(&episodes, &ctx, config)?;
    if let Some(keep) = &config.restrict_to {
        frame = frame.select_columns(keep)?;
    }
    Ok((episodes, frame))
}

/// Fits on `frame[..train_rows]`, winsorizing with training-only statistics
/// when configured, and returns the model plus the (possibly clipped) frame.
fn fit_prefix(
    frame: &FeatureFrame,
    train_rows: usize,
    config: &FeatureConfig,
    boost: &BoostParams,
) -> Result<(TreeEnsemble, FeatureFrame), ProtocolError> {
    let frame = match config.winsor {
        Some(limits) => frame.winsorized(train_rows, limits)?.0,
        None => frame.clone(),
    };
    let model = train(&frame.slice_rows(0..train_rows), boost)?;
    Ok((model, frame))
}

/// Rolling refits over the targets in `targets`; `frame` must already hold
/// only the columns the models may see.
fn rolling_over(
    episodes: &[EpisodeRecord],
    frame: &FeatureFrame,
    targets: std::ops::Range<usize>,
    config: &FeatureConfig,
    boost: &BoostParams,
    retrain_every: usize,
) -> Result<(Vec<ForecastPoint>, Option<TreeEnsemble>), ProtocolError> {
    if retrain_every == 0 {
        return Err(ProtocolError::InvalidParams("retrain_every must be >= 1".into()));
    }
    let mut points = Vec::new();
    let mut model: Option<TreeEnsemble> = None;
    let mut steps = 0usize;
    for i in targets {
        let Some(row) = frame.row_for_target(i) else { continue };
        let train_rows = frame.rows_before(i);
        if train_rows == 0 {
            continue;
        }
        let refit = model.is_none() || steps % retrain_every == 0;
        steps += 1;
        let view = if refit {
            let (m, clipped) = fit_prefix(frame, train_rows, config, boost)?;
            model = Some(m);
            clipped
        } else {
            match config.winsor {
                // Stale models still see features clipped with training-only stats.
                Some(limits) => frame.winsorized(train_rows, limits)?.0,
                None => frame.clone(),
            }
        };
        let m = model.as_ref().expect("model fit above");
        let predicted = view.to_level(row, m.predict_row(view.row(row))?);
        points.push(point(episodes, i, predicted));
    }
    Ok((points, model))
}

fn require(episodes: usize, needed: usize) -> Result<(), ProtocolError> {
    if episodes < needed {
        return Err(ProtocolError::TooFewEpisodes { needed, found: episodes });
    }
    Ok(())
}

/// Retrains before every target from the third episode on, using only rows
/// whose targets precede it.
pub fn rolling_forecast(
    corpus: &EpisodeCorpus,
    show_id: &str,
    genre_map: &GenreMap,
    params: &RollingParams,
) -> Result<ForecastSeries, ProtocolError> {
    require(corpus.air_order(show_id)?.len(), FIRST_TARGET + 1)?;
    let (episodes, frame) = show_frame(corpus, show_id, genre_map, &params.features)?;
    let (points, model) = rolling_over(
        &episodes,
        &frame,
        FIRST_TARGET..episodes.len(),
        &params.features,
        &params.boost,
        params.retrain_every,
    )?;
    if points.is_empty() {
        return Err(ProtocolError::NoEvaluableTargets(show_id.to_string()));
    }
    ForecastSeries::new(show_id, Protocol::Rolling, points, model.map(|m| m.gain_importance()))
}

/// Number of trailing target episodes held out for testing.
pub fn test_count(n_episodes: usize, fraction: f64) -> usize {
    ((fraction * n_episodes as f64).round() as usize).max(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub stage1: TreeEnsemble,
    /// Stage-1 gain ranking truncated to `min(top_k, columns)`.
    pub top_features: Vec<String>,
    pub stage2: TreeEnsemble,
    pub series: ForecastSeries,
    /// Stage-2 attributions over every row of the show.
    pub shap: ShapSummary,
    /// First held-out target index.
    pub split_index: usize,
}

fn check_fraction(fraction: f64) -> Result<(), ProtocolError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ProtocolError::InvalidParams(format!("test_fraction {fraction} outside (0, 1)")));
    }
    Ok(())
}

/// Chronological 80/20 split, stage-1 fit on all columns, stage-2 refit on
/// the stage-1 top-k, test-slice predictions.
pub fn selection_forecast(
    corpus: &EpisodeCorpus,
    show_id: &str,
    genre_map: &GenreMap,
    params: &SelectionParams,
) -> Result<SelectionResult, ProtocolError> {
    check_fraction(params.test_fraction)?;
    let n = corpus.air_order(show_id)?.len();
    require(n, SELECTION_MIN_EPISODES)?;
    let (episodes, frame) = show_frame(corpus, show_id, genre_map, &params.features)?;
    let split_index = n - test_count(n, params.test_fraction);
    let train_rows = frame.rows_before(split_index);
    if train_rows == 0 {
        return Err(ProtocolError::NoEvaluableTargets(show_id.to_string()));
    }

    let (stage1, clipped) = fit_prefix(&frame, train_rows, &params.features, &params.boost)?;
    let top_features = stage1.top_features(params.top_k);
    let reduced = clipped.select_columns(&top_features)?;
    let stage2 = train(&reduced.slice_rows(0..train_rows), &params.boost)?;

    let mut points = Vec::new();
    for row in train_rows..reduced.n_rows() {
        let predicted = reduced.to_level(row, stage2.predict_row(reduced.row(row))?);
        points.push(point(&episodes, reduced.meta()[row].target_index, predicted));
    }
    let shap = shap_summary(&stage2, &reduced, &[] as &[&str])?;
    let series = ForecastSeries::new(show_id, Protocol::Selection, points, Some(stage2.gain_importance()))?;
    Ok(SelectionResult {
        stage1,
        top_features,
        stage2,
        series,
        shap,
        split_index,
    })
}

/// Top-k from a stage-1 fit on the 80% slice, frozen, then rolling refits
/// over the held-out tail.
pub fn combined_forecast(
    corpus: &EpisodeCorpus,
    show_id: &str,
    genre_map: &GenreMap,
    params: &CombinedParams,
) -> Result<ForecastSeries, ProtocolError> {
    check_fraction(params.test_fraction)?;
    let n = corpus.air_order(show_id)?.len();
    require(n, SELECTION_MIN_EPISODES)?;
    let (episodes, frame) = show_frame(corpus, show_id, genre_map, &params.features)?;
    let split_index = n - test_count(n, params.test_fraction);
    let train_rows = frame.rows_before(split_index);
    if train_rows == 0 {
        return Err(ProtocolError::NoEvaluableTargets(show_id.to_string()));
    }
    let (stage1, _) = fit_prefix(&frame, train_rows, &params.features, &params.boost)?;
    let reduced = frame.select_columns(&stage1.top_features(params.top_k))?;
    let (points, model) = rolling_over(
        &episodes,
        &reduced,
        split_index..n,
        &params.features,
        &params.boost,
        params.retrain_every,
    )?;
    ForecastSeries::new(show_id, Protocol::Combined, points, model.map(|m| m.gain_importance()))
}

/// Predicts each target as the previous episode's viewership.
pub fn persistence_baseline(corpus: &EpisodeCorpus, show_id: &str) -> Result<ForecastSeries, ProtocolError> {
    let episodes = corpus.air_order(show_id)?;
    require(episodes.len(), FIRST_TARGET + 1)?;
    let points = (FIRST_TARGET..episodes.len())
        .map(|i| point(episodes, i, episodes[i - 1].viewers_millions))
        .collect();
    ForecastSeries::new(show_id, Protocol::Persistence, points, None)
}

fn gap_days(episodes: &[EpisodeRecord], t: usize) -> f64 {
    (episodes[t].air_date - episodes[t - 1].air_date).num_days() as f64
}

fn arx_regressors(episodes: &[EpisodeRecord], t: usize, params: &ArxParams) -> Vec<f64> {
    let mut x: Vec<f64> = (1..=params.p).map(|lag| episodes[t - lag].viewers_millions).collect();
    if params.include_gap {
        x.push(gap_days(episodes, t));
    }
    x.push(1.0);
    x
}

/// Minimum-norm least squares via SVD.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows.first().map_or(0, Vec::len);
    let a = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = top * (rows.len().max(k) as f64) * f64::EPSILON;
    svd.solve(&b, eps).expect("both singular bases computed").iter().copied().collect()
}

/// Least-squares ARX(p) with optional gap regressor, refit before each target.
/// Targets without any complete training equation fall back to persistence.
pub fn arx_baseline(corpus: &EpisodeCorpus, show_id: &str, params: &ArxParams) -> Result<ForecastSeries, ProtocolError> {
    if params.p == 0 {
        return Err(ProtocolError::InvalidParams("ARX lag order must be >= 1".into()));
    }
    let episodes = corpus.air_order(show_id)?;
    require(episodes.len(), params.p + 3)?;
    let mut points = Vec::new();
    for i in FIRST_TARGET..episodes.len() {
        let equations: Vec<usize> = (params.p..i).collect();
        let predicted = if equations.is_empty() {
            episodes[i - 1].viewers_millions
        } else {
            let rows: Vec<Vec<f64>> = equations.iter().map(|&t| arx_regressors(episodes, t, params)).collect();
            let y: Vec<f64> = equations.iter().map(|&t| episodes[t].viewers_millions).collect();
            let beta = least_squares(&rows, &y);
            arx_regressors(episodes, i, params).iter().zip(&beta).map(|(x, b)| x * b).sum()
        };
        points.push(point(episodes, i, predicted));
    }
    ForecastSeries::new(show_id, Protocol::Arx, points, None)
}

/// Output of one protocol run.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolRun {
    Series(ForecastSeries),
    Selection(Box<SelectionResult>),
}

impl ProtocolRun {
    pub fn series(&self) -> &ForecastSeries {
        match self {
            ProtocolRun::Series(s) => s,
            ProtocolRun::Selection(r) => &r.series,
        }
    }
}

pub fn run_protocol(
    corpus: &EpisodeCorpus,
    show_id: &str,
    genre_map: &GenreMap,
    protocol: Protocol,
    config: &ProtocolConfig,
) -> Result<ProtocolRun, ProtocolError> {
    Ok(match protocol {
        Protocol::Rolling => ProtocolRun::Series(rolling_forecast(corpus, show_id, genre_map, &config.rolling)?),
        Protocol::Selection => {
            ProtocolRun::Selection(Box::new(selection_forecast(corpus, show_id, genre_map, &config.selection)?))
        }
        Protocol::Combined => ProtocolRun::Series(combined_forecast(corpus, show_id, genre_map, &config.combined)?),
        Protocol::Persistence => ProtocolRun::Series(persistence_baseline(corpus, show_id)?),
        Protocol::Arx => ProtocolRun::Series(arx_baseline(corpus, show_id, &config.arx)?),
    })
}
