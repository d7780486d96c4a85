//! Content similarity between shows: Euclidean distance over per-show mean
//! act-level score vectors, optionally z-scored across shows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, EpisodeCorpus};

/// How episode vectors are combined into a show profile.
pub const AGGREGATION: &str = "mean";

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("unknown show `{0}`")]
    UnknownShow(String),
    #[error("need at least 2 profiles, have {0}")]
    TooFewProfiles(usize),
    #[error("k must be >= 1")]
    InvalidK,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowProfile {
    pub show_id: String,
    pub vector: Vec<f64>,
    pub episodes: usize,
}

pub fn aggregate_profile(corpus: &EpisodeCorpus, show_id: &str) -> Result<ShowProfile, SimilarityError> {
    let episodes = corpus.air_order(show_id).map_err(|e| match e {
        CorpusError::UnknownShow(s) => SimilarityError::UnknownShow(s),
        other => SimilarityError::Corpus(other),
    })?;
    let mut vector = vec![0.0; corpus.manifest().dimension()];
    for e in episodes {
        for (acc, v) in vector.iter_mut().zip(&e.nlp) {
            *acc += v;
        }
    }
    let n = episodes.len() as f64;
    vector.iter_mut().for_each(|v| *v /= n);
    Ok(ShowProfile {
        show_id: show_id.to_string(),
        vector,
        episodes: episodes.len(),
    })
}

/// Profiles of every show, in show-id order.
pub fn corpus_profiles(corpus: &EpisodeCorpus) -> Result<Vec<ShowProfile>, SimilarityError> {
    corpus.show_ids().map(|s| aggregate_profile(corpus, s)).collect()
}

/// Per-dimension location and population standard deviation across shows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance dimensions map to 0.
    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }
}

pub fn standardize_profiles(profiles: &[ShowProfile]) -> Result<(Vec<ShowProfile>, Standardizer), SimilarityError> {
    if profiles.len() < 2 {
        return Err(SimilarityError::TooFewProfiles(profiles.len()));
    }
    let d = profiles[0].vector.len();
    let n = profiles.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| profiles.iter().map(|p| p.vector[j]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..d)
        .map(|j| {
            let var = profiles.iter().map(|p| (p.vector[j] - mean[j]).powi(2)).sum::<f64>() / n;
            // Guards a spread that is pure rounding noise around a constant.
            if var.sqrt() <= 1e-12 * mean[j].abs().max(1.0) {
                0.0
            } else {
                var.sqrt()
            }
        })
        .collect();
    let scaler = Standardizer { mean, std };
    let out = profiles
        .iter()
        .map(|p| ShowProfile {
            vector: scaler.transform(&p.vector),
            ..p.clone()
        })
        .collect();
    Ok((out, scaler))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub show_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborList {
    pub query: String,
    /// Ascending distance, ties by show id; never contains the query.
    pub neighbors: Vec<Neighbor>,
}

/// The `k` nearest shows to `query`, clamped to the number of other shows.
/// With `standardize`, profiles are z-scored across all of `profiles` first.
pub fn nearest_shows(
    profiles: &[ShowProfile],
    query: &str,
    k: usize,
    standardize: bool,
) -> Result<NeighborList, SimilarityError> {
    if k == 0 {
        return Err(SimilarityError::InvalidK);
    }
    let standardized;
    let pool = if standardize {
        standardized = standardize_profiles(profiles)?.0;
        &standardized
    } else {
        profiles
    };
    let q = pool
        .iter()
        .find(|p| p.show_id == query)
        .ok_or_else(|| SimilarityError::UnknownShow(query.to_string()))?;
    let mut neighbors: Vec<Neighbor> = pool
        .iter()
        .filter(|p| p.show_id != query)
        .map(|p| Neighbor {
            show_id: p.show_id.clone(),
            distance: euclidean(&q.vector, &p.vector),
        })
        .collect();
    neighbors.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.show_id.cmp(&b.show_id)));
    neighbors.truncate(k);
    Ok(NeighborList {
        query: query.to_string(),
        neighbors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EpisodeRecord, ScoreManifest};
    use chrono::NaiveDate;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn corpus(shows: &[(&str, Vec<Vec<f64>>)]) -> EpisodeCorpus {
        let manifest = ScoreManifest::new(vec!["Joy".into()], "t").unwrap();
        let day = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let records = shows.iter().flat_map(|(id, eps)| {
            eps.iter().enumerate().map(move |(i, nlp)| EpisodeRecord {
                show_id: id.to_string(),
                show_title: id.to_string(),
                season: 1,
                episode: i as u32 + 1,
                air_date: day + chrono::Duration::days(7 * i as i64),
                length_minutes: None,
                imdb_rating: None,
                genre: "Drama".into(),
                network: "HBO".into(),
                viewers_millions: 1.0,
                canceled: None,
                nlp: nlp.clone(),
            })
        });
        EpisodeCorpus::from_records(manifest, records).unwrap()
    }

    fn profile(id: &str, v: Vec<f64>) -> ShowProfile {
        ShowProfile {
            show_id: id.into(),
            vector: v,
            episodes: 1,
        }
    }

    #[test]
    fn aggregation_cases() {
        let c = corpus(&[
            ("one", vec![vec![0.5, 1.0, 2.0]]),
            ("same", vec![vec![3.0, 1.0, 0.0]; 4]),
            ("pair", vec![vec![0.2, 0.0, 1.0], vec![0.4, 0.0, 3.0]]),
        ]);
        assert_eq!(aggregate_profile(&c, "one").unwrap().vector, vec![0.5, 1.0, 2.0]);
        assert_eq!(aggregate_profile(&c, "same").unwrap().vector, vec![3.0, 1.0, 0.0]);
        let pair = aggregate_profile(&c, "pair").unwrap();
        assert!((pair.vector[0] - 0.3).abs() < 1e-15);
        assert_eq!(pair.episodes, 2);
        assert!(matches!(aggregate_profile(&c, "nope"), Err(SimilarityError::UnknownShow(_))));
    }

    #[test]
    fn standardization_cases() {
        let (two, _) = standardize_profiles(&[profile("a", vec![1.0, 5.0, 2.0]), profile("b", vec![3.0, 5.0, -4.0])]).unwrap();
        assert_eq!(two[0].vector, vec![-1.0, 0.0, 1.0]);
        assert_eq!(two[1].vector, vec![1.0, 0.0, -1.0]);
        assert!(matches!(
            standardize_profiles(&[profile("a", vec![1.0])]),
            Err(SimilarityError::TooFewProfiles(1))
        ));
    }

    #[test]
    fn duplicates_rank_first_and_k_clamps() {
        let ps = vec![
            profile("a", vec![0.0, 0.0]),
            profile("b", vec![3.0, 4.0]),
            profile("c", vec![0.0, 0.0]),
            profile("d", vec![1.0, 0.0]),
        ];
        let n = nearest_shows(&ps, "a", 10, false).unwrap();
        let ids: Vec<&str> = n.neighbors.iter().map(|x| x.show_id.as_str()).collect();
        assert_eq!(ids, ["c", "d", "b"]);
        assert_eq!(n.neighbors[0].distance, 0.0);
        assert_eq!(n.neighbors[2].distance, 5.0);
        assert!(matches!(nearest_shows(&ps, "zz", 1, false), Err(SimilarityError::UnknownShow(_))));
        assert!(matches!(nearest_shows(&ps, "a", 0, false), Err(SimilarityError::InvalidK)));
    }

    #[test]
    fn ties_break_by_show_id() {
        let ps = vec![
            profile("q", vec![0.0]),
            profile("z", vec![1.0]),
            profile("m", vec![-1.0]),
        ];
        let n = nearest_shows(&ps, "q", 2, false).unwrap();
        assert_eq!(n.neighbors[0].show_id, "m");
        assert_eq!(n.neighbors[1].show_id, "z");
    }

    fn vectors() -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-20.0f64..20.0, 4), 3..8)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn standardized_dimensions_are_centered(vs in vectors()) {
            let ps: Vec<_> = vs.into_iter().enumerate().map(|(i, v)| profile(&format!("s{i}"), v)).collect();
            let (z, _) = standardize_profiles(&ps).unwrap();
            for j in 0..4 {
                let m: f64 = z.iter().map(|p| p.vector[j]).sum::<f64>() / z.len() as f64;
                prop_assert!(m.abs() < 1e-12);
            }
        }

        #[test]
        fn metric_axioms(vs in vectors()) {
            for a in &vs {
                prop_assert_eq!(euclidean(a, a), 0.0);
                for b in &vs {
                    let ab = euclidean(a, b);
                    prop_assert!(ab >= 0.0);
                    prop_assert_eq!(ab, euclidean(b, a));
                    for c in &vs {
                        prop_assert!(euclidean(a, c) <= ab + euclidean(b, c) + 1e-9);
                    }
                }
            }
        }

        #[test]
        fn ranking_ignores_positive_rescaling(vs in vectors(), scale in 0.01f64..100.0) {
            let ps: Vec<_> = vs.iter().enumerate().map(|(i, v)| profile(&format!("s{i}"), v.clone())).collect();
            let scaled: Vec<_> = ps
                .iter()
                .map(|p| ShowProfile { vector: p.vector.iter().map(|x| x * scale).collect(), ..p.clone() })
                .collect();
            let ids = |l: NeighborList| l.neighbors.into_iter().map(|n| n.show_id).collect::<Vec<_>>();
            let base = nearest_shows(&ps, "s0", 10, true).unwrap();
            let rescaled = nearest_shows(&scaled, "s0", 10, true).unwrap();
            // Scaling perturbs distances by rounding only, so compare where gaps are resolvable.
            let resolvable = base.neighbors.windows(2).all(|w| w[1].distance - w[0].distance > 1e-9);
            if resolvable {
                prop_assert_eq!(ids(base), ids(rescaled));
            }
        }
    }

    #[test]
    fn zero_noise_spin_off_sits_at_distance_zero() {
        use crate::synthgen::{generate_corpus, SpinOff, SynthSpec};
        let spec = SynthSpec {
            n_shows: 5,
            episodes: (10, 12),
            spin_offs: vec![SpinOff { parent: 3, noise: 0.0 }],
            ..SynthSpec::pinned()
        };
        let c = generate_corpus(&spec, &ScoreManifest::default_manifest()).unwrap();
        let ps = corpus_profiles(&c).unwrap();
        let n = nearest_shows(&ps, "show_04", 1, true).unwrap();
        assert_eq!(n.neighbors[0].show_id, "show_06");
        assert_eq!(n.neighbors[0].distance, 0.0);
    }
}
