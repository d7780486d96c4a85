//! Seeded synthetic corpora with planted, exported ground truth.
//!
//! Viewership follows a mean-reverting recursion driven by a few act-level
//! scores of the previous episode:
//!
//! `v[t+1] = max(0, mu + rho * (v[t] - mu) + sum_k beta_k * (s_k[t] - m_k) + sigma * z)`
//!
//! where `m_k` is the show's planted mean for score `k`. Every show draws from
//! its own ChaCha stream, so output does not depend on thread count.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EpisodeCorpus, EpisodeRecord, ScoreManifest};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpEffect {
    /// 1-based act.
    pub act: usize,
    pub score: String,
    pub beta: f64,
}

/// A show whose scripts copy a parent's, perturbed cell-wise by `noise * N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinOff {
    /// Index of the parent among the independent shows.
    pub parent: usize,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Independent shows; spin-offs are added on top.
    pub n_shows: usize,
    pub episodes: (usize, usize),
    pub seasons: (usize, usize),
    /// Chance that a within-season gap is a 2-4 week break instead of a week.
    pub break_probability: f64,
    /// Between-season hiatus length in days.
    pub hiatus_days: (u32, u32),
    pub rho: f64,
    pub sigma: f64,
    pub mu_range: (f64, f64),
    pub score_mean_range: (f64, f64),
    pub score_episode_sd: f64,
    pub effects: Vec<NlpEffect>,
    pub spin_offs: Vec<SpinOff>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::pinned()
    }
}

const GENRES: [&str; 10] = [
    "Crime Drama",
    "Sitcom",
    "Adult Animation",
    "Police Procedural",
    "Mockumentary",
    "Sci-Fi",
    "Legal Drama",
    "Reality Competition",
    "Thriller",
    "Telenovela",
];

const NETWORKS: [&str; 7] = ["ABC", "AMC", "CBS", "FOX", "FX", "HBO", "NBC"];

impl SynthSpec {
    /// The reference corpus: 17 independent shows plus 3 spin-offs, rho = 0.9,
    /// two causal scores, and noise set for a 4:1 signal-to-noise ratio.
    pub fn pinned() -> Self {
        let effects = vec![
            NlpEffect {
                act: 3,
                score: "Joy".into(),
                beta: 0.15,
            },
            NlpEffect {
                act: 1,
                score: "Anger".into(),
                beta: -0.1,
            },
        ];
        let mut spec = Self {
            n_shows: 17,
            episodes: (45, 65),
            seasons: (2, 4),
            break_probability: 0.1,
            hiatus_days: (120, 250),
            rho: 0.9,
            sigma: 0.0,
            mu_range: (2.0, 12.0),
            score_mean_range: (5.0, 15.0),
            score_episode_sd: 1.0,
            effects,
            spin_offs: vec![
                SpinOff { parent: 0, noise: 0.05 },
                SpinOff { parent: 5, noise: 0.05 },
                SpinOff { parent: 11, noise: 0.05 },
            ],
            seed: 42,
        };
        spec.sigma = spec.signal_sd() / 4.0;
        spec
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Standard deviation of the planted score-driven term.
    pub fn signal_sd(&self) -> f64 {
        self.effects.iter().map(|e| e.beta * e.beta).sum::<f64>().sqrt() * self.score_episode_sd
    }

    pub fn total_shows(&self) -> usize {
        self.n_shows + self.spin_offs.len()
    }

    fn validate(&self, manifest: &ScoreManifest) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let finite = [
            self.rho,
            self.sigma,
            self.break_probability,
            self.mu_range.0,
            self.mu_range.1,
            self.score_mean_range.0,
            self.score_mean_range.1,
            self.score_episode_sd,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("parameters must be finite".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1)", self.rho));
        }
        if self.sigma < 0.0 || self.score_episode_sd < 0.0 {
            return bad("standard deviations must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.break_probability) {
            return bad("break_probability outside [0, 1]".into());
        }
        if self.episodes.0 == 0 || self.episodes.0 > self.episodes.1 {
            return bad(format!("bad episode range {:?}", self.episodes));
        }
        if self.seasons.0 == 0 || self.seasons.0 > self.seasons.1 {
            return bad(format!("bad season range {:?}", self.seasons));
        }
        if self.hiatus_days.0 > self.hiatus_days.1 {
            return bad("bad hiatus range".into());
        }
        if self.mu_range.0 < 0.0 || self.mu_range.0 > self.mu_range.1 {
            return bad("bad mu range".into());
        }
        if self.score_mean_range.0 > self.score_mean_range.1 {
            return bad("bad score mean range".into());
        }
        for e in &self.effects {
            if manifest.index_of(e.act, &e.score).is_none() {
                return bad(format!("effect on unknown score act{}_{}", e.act, e.score));
            }
            if !e.beta.is_finite() {
                return bad("effect beta must be finite".into());
            }
        }
        for s in &self.spin_offs {
            if s.parent >= self.n_shows {
                return bad(format!("spin-off parent {} out of range", s.parent));
            }
            if !(s.noise >= 0.0 && s.noise.is_finite()) {
                return bad("spin-off noise must be finite and >= 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalFeature {
    pub column: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowTruth {
    pub show_id: String,
    pub mu: f64,
    pub rho: f64,
    pub episodes: usize,
    pub seasons: usize,
    pub spin_off_of: Option<String>,
}

/// Machine-readable description of what a spec plants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub seed: u64,
    pub rho: f64,
    pub sigma: f64,
    pub signal_sd: f64,
    pub causal_features: Vec<CausalFeature>,
    pub shows: Vec<ShowTruth>,
    /// (parent, spin-off) show ids.
    pub spin_off_pairs: Vec<(String, String)>,
}

impl PlantedTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Show-level draws made before any episode is generated.
#[derive(Debug, Clone)]
struct ShowPlan {
    show_id: String,
    title: String,
    mu: f64,
    episodes: usize,
    seasons: usize,
    start: NaiveDate,
    genre: String,
    network: String,
    length: f64,
    rating: f64,
    canceled: bool,
    score_means: Vec<f64>,
    spin_off: Option<(usize, f64)>,
}

fn stream(seed: u64, show: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(show as u64 * 4 + purpose);
    rng
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

fn plan_show(spec: &SynthSpec, index: usize, dimension: usize) -> ShowPlan {
    let mut rng = stream(spec.seed, index, 0);
    let episodes = rng.gen_range(spec.episodes.0..=spec.episodes.1);
    let seasons = rng.gen_range(spec.seasons.0..=spec.seasons.1).min(episodes);
    let epoch = NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date");
    let start = epoch + Duration::days(rng.gen_range(0..4000));
    let score_means = (0..dimension)
        .map(|_| round_to(rng.gen_range(spec.score_mean_range.0..=spec.score_mean_range.1), 4))
        .collect();
    ShowPlan {
        show_id: format!("show_{:02}", index + 1),
        title: format!("Synthetic Show {}", index + 1),
        mu: round_to(rng.gen_range(spec.mu_range.0..=spec.mu_range.1), 3),
        episodes,
        seasons,
        start,
        genre: GENRES[rng.gen_range(0..GENRES.len())].to_string(),
        network: NETWORKS[rng.gen_range(0..NETWORKS.len())].to_string(),
        length: if rng.gen_bool(0.5) { 22.0 } else { 44.0 },
        rating: rng.gen_range(6.0..9.0),
        canceled: rng.gen_bool(0.3),
        score_means,
        spin_off: None,
    }
}

fn plans(spec: &SynthSpec, dimension: usize) -> Vec<ShowPlan> {
    let mut out: Vec<ShowPlan> = (0..spec.n_shows).map(|i| plan_show(spec, i, dimension)).collect();
    for (k, s) in spec.spin_offs.iter().enumerate() {
        let index = spec.n_shows + k;
        let parent = &out[s.parent];
        let mut p = plan_show(spec, index, dimension);
        p.title = format!("{}: Origins", parent.title);
        p.episodes = parent.episodes;
        p.seasons = parent.seasons;
        p.genre = parent.genre.clone();
        p.network = parent.network.clone();
        p.score_means = parent.score_means.clone();
        p.spin_off = Some((s.parent, s.noise));
        out.push(p);
    }
    out
}

/// Episode counts per season, earliest seasons taking any remainder.
fn season_sizes(episodes: usize, seasons: usize) -> Vec<usize> {
    (0..seasons)
        .map(|s| episodes / seasons + usize::from(s < episodes % seasons))
        .collect()
}

fn schedule(plan: &ShowPlan, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(u32, u32, NaiveDate)> {
    let mut out = Vec::with_capacity(plan.episodes);
    let mut date = plan.start;
    for (s, size) in season_sizes(plan.episodes, plan.seasons).into_iter().enumerate() {
        for e in 0..size {
            if !out.is_empty() {
                let gap = if e == 0 {
                    // Whole weeks keep the weekday stable across seasons.
                    let days = rng.gen_range(spec.hiatus_days.0..=spec.hiatus_days.1);
                    7 * (days / 7).max(1)
                } else if rng.gen_bool(spec.break_probability) {
                    7 * rng.gen_range(2..=4)
                } else {
                    7
                };
                date += Duration::days(gap as i64);
            }
            out.push((s as u32 + 1, e as u32 + 1, date));
        }
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

fn generate_scores(plan: &ShowPlan, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..plan.episodes)
        .map(|_| {
            plan.score_means
                .iter()
                .map(|m| round_to(m + spec.score_episode_sd * normal(rng), 4))
                .collect()
        })
        .collect()
}

fn generate_show(
    plan: &ShowPlan,
    spec: &SynthSpec,
    index: usize,
    effects: &[(usize, f64)],
    scores: Vec<Vec<f64>>,
) -> Vec<EpisodeRecord> {
    let mut rng = stream(spec.seed, index, 2);
    let dates = schedule(plan, spec, &mut rng);
    let mut viewers = Vec::with_capacity(plan.episodes);
    let mut v = plan.mu;
    for t in 0..plan.episodes {
        viewers.push(v);
        let drive: f64 = effects
            .iter()
            .map(|&(k, beta)| beta * (scores[t][k] - plan.score_means[k]))
            .sum();
        let next = plan.mu + spec.rho * (v - plan.mu) + drive + spec.sigma * normal(&mut rng);
        v = round_to(next.max(0.0), 4);
    }
    dates
        .into_iter()
        .zip(viewers)
        .zip(scores)
        .map(|(((season, episode, air_date), viewers_millions), nlp)| EpisodeRecord {
            show_id: plan.show_id.clone(),
            show_title: plan.title.clone(),
            season,
            episode,
            air_date,
            length_minutes: Some(round_to(plan.length + rng.gen_range(-1.0..1.0), 1)),
            imdb_rating: Some(round_to((plan.rating + 0.3 * normal(&mut rng)).clamp(0.0, 10.0), 1)),
            genre: plan.genre.clone(),
            network: plan.network.clone(),
            viewers_millions,
            canceled: Some(plan.canceled),
            nlp,
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Builds the corpus for `spec` under `manifest`.
pub fn generate_corpus(spec: &SynthSpec, manifest: &ScoreManifest) -> Result<EpisodeCorpus, SynthError> {
    spec.validate(manifest)?;
    let dimension = manifest.dimension();
    let plans = plans(spec, dimension);

    if !spec.spin_offs.is_empty() {
        let min_gap = (0..spec.n_shows)
            .flat_map(|a| (a + 1..spec.n_shows).map(move |b| (a, b)))
            .map(|(a, b)| distance(&plans[a].score_means, &plans[b].score_means))
            .fold(f64::INFINITY, f64::min);
        let widest = spec.spin_offs.iter().map(|s| s.noise).fold(0.0, f64::max);
        if widest * (dimension as f64).sqrt() >= min_gap / 2.0 {
            return Err(SynthError::InvalidSpec(format!(
                "spin-off noise {widest} is not small against the closest show pair ({min_gap:.3} apart)"
            )));
        }
    }

    let effects: Vec<(usize, f64)> = spec
        .effects
        .iter()
        .map(|e| (manifest.index_of(e.act, &e.score).expect("validated"), e.beta))
        .collect();

    let base: Vec<(Vec<Vec<f64>>, Vec<EpisodeRecord>)> = (0..spec.n_shows)
        .into_par_iter()
        .map(|i| {
            let scores = generate_scores(&plans[i], spec, &mut stream(spec.seed, i, 1));
            let records = generate_show(&plans[i], spec, i, &effects, scores.clone());
            (scores, records)
        })
        .collect();
    let spin: Vec<Vec<EpisodeRecord>> = (spec.n_shows..plans.len())
        .into_par_iter()
        .map(|i| {
            let plan = &plans[i];
            let (parent, noise) = plan.spin_off.expect("spin-off plan");
            let mut rng = stream(spec.seed, i, 1);
            let scores = base[parent]
                .0
                .iter()
                .map(|ep| ep.iter().map(|v| round_to(v + noise * normal(&mut rng), 4)).collect())
                .collect();
            generate_show(plan, spec, i, &effects, scores)
        })
        .collect();

    let records = base.into_iter().flat_map(|(_, r)| r).chain(spin.into_iter().flatten());
    EpisodeCorpus::from_records(manifest.clone(), records)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

pub fn describe_planted_truth(spec: &SynthSpec, manifest: &ScoreManifest) -> Result<PlantedTruth, SynthError> {
    spec.validate(manifest)?;
    let plans = plans(spec, manifest.dimension());
    let shows = plans
        .iter()
        .map(|p| ShowTruth {
            show_id: p.show_id.clone(),
            mu: p.mu,
            rho: spec.rho,
            episodes: p.episodes,
            seasons: p.seasons,
            spin_off_of: p.spin_off.map(|(parent, _)| plans[parent].show_id.clone()),
        })
        .collect::<Vec<_>>();
    let spin_off_pairs = shows
        .iter()
        .filter_map(|s| s.spin_off_of.clone().map(|p| (p, s.show_id.clone())))
        .collect();
    Ok(PlantedTruth {
        seed: spec.seed,
        rho: spec.rho,
        sigma: spec.sigma,
        signal_sd: spec.signal_sd(),
        causal_features: spec
            .effects
            .iter()
            .filter(|e| e.beta != 0.0)
            .map(|e| CausalFeature {
                column: ScoreManifest::column_name(e.act, &e.score),
                beta: e.beta,
            })
            .collect(),
        shows,
        spin_off_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    fn small() -> SynthSpec {
        SynthSpec {
            n_shows: 4,
            episodes: (8, 12),
            spin_offs: vec![SpinOff { parent: 1, noise: 0.05 }],
            ..SynthSpec::pinned()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let m = ScoreManifest::default_manifest();
        let a = generate_corpus(&small(), &m).unwrap();
        let b = generate_corpus(&small(), &m).unwrap();
        assert_eq!(a, b);
        let other = generate_corpus(&SynthSpec { seed: 7, ..small() }, &m).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn degenerate_dynamics_are_constant() {
        let m = ScoreManifest::default_manifest();
        let spec = SynthSpec {
            sigma: 0.0,
            rho: 0.0,
            effects: vec![],
            ..small()
        };
        let c = generate_corpus(&spec, &m).unwrap();
        let truth = describe_planted_truth(&spec, &m).unwrap();
        for show in &truth.shows {
            let eps = c.air_order(&show.show_id).unwrap();
            assert!(eps.iter().all(|e| e.viewers_millions == show.mu));
        }
    }

    #[test]
    fn zero_noise_clone_copies_scripts() {
        let m = ScoreManifest::default_manifest();
        let spec = SynthSpec {
            spin_offs: vec![SpinOff { parent: 2, noise: 0.0 }],
            ..small()
        };
        let c = generate_corpus(&spec, &m).unwrap();
        let parent = c.air_order("show_03").unwrap();
        let clone = c.air_order("show_05").unwrap();
        assert_eq!(parent.len(), clone.len());
        for (a, b) in parent.iter().zip(clone) {
            assert_eq!(a.nlp, b.nlp);
        }
    }

    #[test]
    fn generated_corpus_validates_cleanly() {
        let m = ScoreManifest::default_manifest();
        let c = generate_corpus(&small(), &m).unwrap();
        assert_eq!(c.n_shows(), 5);
        assert_eq!(validate_corpus(&c).flag_count(), 0);
        let empty = generate_corpus(&SynthSpec { n_shows: 0, spin_offs: vec![], ..small() }, &m).unwrap();
        assert_eq!(empty.n_shows(), 0);
    }

    #[test]
    fn truth_lists_causal_columns() {
        let m = ScoreManifest::default_manifest();
        let none = describe_planted_truth(&SynthSpec { effects: vec![], ..small() }, &m).unwrap();
        assert!(none.causal_features.is_empty());
        let joy = SynthSpec {
            effects: vec![
                NlpEffect { act: 3, score: "Joy".into(), beta: 0.2 },
                NlpEffect { act: 2, score: "Fear".into(), beta: 0.0 },
            ],
            ..small()
        };
        let truth = describe_planted_truth(&joy, &m).unwrap();
        assert_eq!(truth.causal_features, vec![CausalFeature { column: "act3_Joy".into(), beta: 0.2 }]);
        assert_eq!(truth.spin_off_pairs, vec![("show_02".to_string(), "show_05".to_string())]);
        assert_eq!(PlantedTruth::from_json(&truth.to_json()).unwrap(), truth);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let m = ScoreManifest::default_manifest();
        let cases = [
            SynthSpec { rho: 1.0, ..small() },
            SynthSpec { sigma: -1.0, ..small() },
            SynthSpec { episodes: (5, 2), ..small() },
            SynthSpec { spin_offs: vec![SpinOff { parent: 9, noise: 0.0 }], ..small() },
            SynthSpec { spin_offs: vec![SpinOff { parent: 0, noise: 5.0 }], ..small() },
            SynthSpec {
                effects: vec![NlpEffect { act: 4, score: "Joy".into(), beta: 1.0 }],
                ..small()
            },
        ];
        for spec in cases {
            assert!(matches!(generate_corpus(&spec, &m), Err(SynthError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn long_series_autocorrelation_tracks_rho() {
        let m = ScoreManifest::default_manifest();
        for rho in [0.3, 0.6, 0.9] {
            let spec = SynthSpec {
                n_shows: 1,
                episodes: (600, 600),
                rho,
                sigma: 0.05,
                effects: vec![],
                spin_offs: vec![],
                mu_range: (8.0, 8.0),
                ..SynthSpec::pinned()
            };
            let c = generate_corpus(&spec, &m).unwrap();
            let v: Vec<f64> = c.air_order("show_01").unwrap().iter().map(|e| e.viewers_millions).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let num: f64 = v.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
            let den: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
            let r1 = num / den;
            assert!((r1 - rho).abs() < 0.1, "rho {rho}, lag-1 {r1}");
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = SynthSpec::pinned();
        assert_eq!(SynthSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!((spec.signal_sd() / spec.sigma - 4.0).abs() < 1e-12);
    }
}
