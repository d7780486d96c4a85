//! Predictions for targets before `i` must not move when episodes at or after
//! `i` change.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewcast::boosted_trees::BoostParams;
use viewcast::corpus::{EpisodeCorpus, ScoreManifest};
use viewcast::forecast_protocols::{run_protocol, Protocol, ProtocolConfig};
use viewcast::preprocess::GenreMap;
use viewcast::synthgen::{generate_corpus, SynthSpec};

fn config() -> ProtocolConfig {
    let boost = BoostParams { rounds: 15, ..BoostParams::default() };
    let mut c = ProtocolConfig::default();
    c.rolling.boost = boost.clone();
    c.selection.boost = boost.clone();
    c.combined.boost = boost;
    c
}

fn mutate(corpus: &EpisodeCorpus, show: &str, from: usize, rng: &mut ChaCha8Rng) -> EpisodeCorpus {
    corpus
        .with_show_edited(show, |eps| {
            for e in &mut eps[from..] {
                e.viewers_millions = rng.gen_range(0.5..20.0);
                e.imdb_rating = Some(rng.gen_range(0.0..10.0));
                e.length_minutes = Some(rng.gen_range(10.0..90.0));
                e.nlp.iter_mut().for_each(|v| *v = rng.gen_range(-50.0..50.0));
            }
        })
        .unwrap()
}

fn earlier(corpus: &EpisodeCorpus, show: &str, protocol: Protocol, cut: usize) -> Vec<(usize, u64)> {
    let run = run_protocol(corpus, show, &GenreMap::default_map(), protocol, &config()).unwrap();
    run.series()
        .points
        .iter()
        .filter(|p| p.target_index < cut)
        .map(|p| (p.target_index, p.predicted.to_bits()))
        .collect()
}

#[test]
fn every_protocol_is_causal() {
    let spec = SynthSpec {
        n_shows: 3,
        episodes: (14, 20),
        spin_offs: vec![],
        seed: 5,
        ..SynthSpec::pinned()
    };
    let corpus = generate_corpus(&spec, &ScoreManifest::default_manifest()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..15 {
        let show = format!("show_{:02}", trial % 3 + 1);
        let n = corpus.air_order(&show).unwrap().len();
        let cut = rng.gen_range(3..n);
        let mutated = mutate(&corpus, &show, cut, &mut rng);
        for protocol in Protocol::ALL {
            let before = earlier(&corpus, &show, protocol, cut);
            let after = earlier(&mutated, &show, protocol, cut);
            assert_eq!(before, after, "{protocol} {show} cut {cut}");
        }
    }
}
