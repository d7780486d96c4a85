//! Prints per-show rolling vs persistence errors, rank-1 gain features and
//! spin-off neighbors for the pinned synthetic corpus, or for the spec file
//! given as the first argument.

use std::time::Instant;

use viewcast::corpus::ScoreManifest;
use viewcast::forecast_protocols::{persistence_baseline, rolling_forecast, RollingParams};
use viewcast::preprocess::GenreMap;
use viewcast::similarity::{corpus_profiles, nearest_shows};
use viewcast::synthgen::{describe_planted_truth, generate_corpus, SynthSpec};

fn main() {
    let spec = match std::env::args().nth(1) {
        Some(path) => SynthSpec::from_json(&std::fs::read_to_string(path).expect("readable spec")).expect("spec json"),
        None => SynthSpec::pinned(),
    };
    let manifest = ScoreManifest::default_manifest();
    let corpus = generate_corpus(&spec, &manifest).expect("pinned spec is valid");
    let truth = describe_planted_truth(&spec, &manifest).expect("pinned spec is valid");
    let genres = GenreMap::default_map();
    println!("shows {} episodes {}", corpus.n_shows(), corpus.n_episodes());

    let start = Instant::now();
    let (mut wins, mut prev_top) = (0, 0);
    for show in corpus.show_ids() {
        let rolling = rolling_forecast(&corpus, show, &genres, &RollingParams::default()).expect("rolling");
        let persistence = persistence_baseline(&corpus, show).expect("persistence");
        let top = rolling.importance.as_ref().expect("tree importance")[0].feature.clone();
        wins += usize::from(rolling.metrics.rmse <= persistence.metrics.rmse);
        prev_top += usize::from(top == "prev_viewership" || top.starts_with("ma"));
        println!(
            "{show} n={} rolling={:.4} persistence={:.4} top={top}",
            rolling.metrics.n, rolling.metrics.rmse, persistence.metrics.rmse
        );
    }
    println!("rolling <= persistence on {wins}/{} shows; lag feature on top for {prev_top}", corpus.n_shows());
    println!("rolling pass took {:.2?}", start.elapsed());

    let profiles = corpus_profiles(&corpus).expect("profiles");
    for (parent, clone) in &truth.spin_off_pairs {
        let a = nearest_shows(&profiles, parent, 1, true).expect("neighbors");
        let b = nearest_shows(&profiles, clone, 1, true).expect("neighbors");
        println!("{parent} -> {} ; {clone} -> {}", a.neighbors[0].show_id, b.neighbors[0].show_id);
    }
}
