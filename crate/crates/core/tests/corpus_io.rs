use proptest::prelude::*;
use viewcast::corpus::{parse_corpus, validate_corpus, write_corpus, ScoreManifest};
use viewcast::synthgen::{generate_corpus, SpinOff, SynthSpec};

fn small_spec(seed: u64, n_shows: usize) -> SynthSpec {
    SynthSpec {
        n_shows,
        episodes: (3, 9),
        seasons: (1, 2),
        spin_offs: if n_shows > 1 { vec![SpinOff { parent: 0, noise: 0.05 }] } else { vec![] },
        seed,
        ..SynthSpec::pinned()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn written_corpora_parse_back_identically(seed in any::<u64>(), n_shows in 0usize..4) {
        let manifest = ScoreManifest::default_manifest();
        let corpus = generate_corpus(&small_spec(seed, n_shows), &manifest).unwrap();
        let mut bytes = Vec::new();
        write_corpus(&corpus, &mut bytes).unwrap();
        let back = parse_corpus(bytes.as_slice(), &manifest).unwrap();
        prop_assert_eq!(&back, &corpus);
        let mut again = Vec::new();
        write_corpus(&back, &mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }
}

#[test]
fn bundled_sample_corpus_is_clean() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/sample_corpus.csv");
    let file = std::fs::File::open(path).unwrap();
    let corpus = parse_corpus(file, &ScoreManifest::default_manifest()).unwrap();
    assert_eq!(corpus.n_shows(), 6);
    let report = validate_corpus(&corpus);
    assert_eq!(report.flag_count(), 0);
}

#[test]
fn bundled_spec_is_the_pinned_spec() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/synth_spec.json")).unwrap();
    assert_eq!(SynthSpec::from_json(&text).unwrap(), SynthSpec::pinned());
}
