mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdlm::lexicon::{ablate_edges, parse_lexicon, read_lexicon, serialize_lexicon, write_lexicon, Lexicon, NormalizationMode};
use sdlm::Error;

fn edges(lex: &Lexicon) -> BTreeSet<(String, usize, String)> {
    lex.sense_ids()
        .flat_map(|s| {
            let word = lex.word(lex.owner(s)).to_string();
            let ordinal = lex.sense_ordinal(s);
            lex.sememes_of(s).iter().map(move |&k| (word.clone(), ordinal, lex.sememe(k).to_string()))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_round_trip_preserves_ids(seed in any::<u64>(), words in 1usize..40, sememes in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lex = common::random_lexicon(&mut rng, words, 4, sememes, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        write_lexicon(&lex, &path).unwrap();
        let back = read_lexicon(&path).unwrap();
        prop_assert_eq!(back.words(), lex.words());
        prop_assert_eq!(back.sememes(), lex.sememes());
        for s in lex.sense_ids() {
            prop_assert_eq!(back.sememes_of(s), lex.sememes_of(s));
        }
        prop_assert_eq!(back.stats(), lex.stats());
    }

    #[test]
    fn ablation_removes_a_subset(seed in any::<u64>(), fraction in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lex = common::random_lexicon(&mut rng, 30, 3, 20, 5);
        let ablated = ablate_edges(&lex, fraction, seed).unwrap();
        let (full, kept) = (edges(&lex), edges(&ablated));
        prop_assert!(kept.is_subset(&full));
        prop_assert!(full.len() - kept.len() <= (fraction * full.len() as f64).floor() as usize);
        prop_assert_eq!(ablated.num_sememes(), lex.num_sememes());
        prop_assert_eq!(ablated.num_senses(), lex.num_senses());
        for s in ablated.sense_ids() {
            prop_assert!(!ablated.sememes_of(s).is_empty());
        }
    }
}

#[test]
fn ten_percent_of_a_multi_sememe_lexicon() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lex = common::random_lexicon(&mut rng, 100, 3, 50, 6);
    let ablated = ablate_edges(&lex, 0.1, 9).unwrap();
    let removed = lex.edge_count() - ablated.edge_count();
    assert_eq!(removed, lex.edge_count() / 10);
    assert_eq!(edges(&ablate_edges(&lex, 0.1, 9).unwrap()), edges(&ablated));
    assert_ne!(edges(&ablate_edges(&lex, 0.1, 10).unwrap()), edges(&ablated));
}

#[test]
fn normalization_constants_follow_degrees() {
    let lex = parse_lexicon("bank\t0\tplace,money,institution\nbank\t1\tland,river\nriver\t0\tland,river,water\n".as_bytes()).unwrap();
    let river = lex.word_id("river").unwrap();
    let s = lex.senses_of(river)[0];
    let water = lex.sememe_ids().find(|&k| lex.sememe(k) == "water").unwrap();
    let land = lex.sememe_ids().find(|&k| lex.sememe(k) == "land").unwrap();
    assert_eq!(lex.normalization_constant(water, s, NormalizationMode::Left).unwrap(), 1.0 / 3.0);
    let sym = lex.normalization_constant(land, s, NormalizationMode::Symmetric).unwrap();
    assert!((sym - 1.0 / 6f64.sqrt()).abs() < 1e-15);
    assert!(matches!(lex.normalization_constant(water, lex.senses_of(river)[0], NormalizationMode::Left), Ok(_)));
    let bank0 = lex.senses_of(lex.word_id("bank").unwrap())[0];
    assert!(matches!(lex.normalization_constant(water, bank0, NormalizationMode::Left), Err(Error::Contract(_))));
}

#[test]
fn malformed_files_report_lines() {
    let cases: [(&str, usize); 3] = [
        ("a\t0\tx\nb\t1\ty\n", 2),
        ("a\t0\tx\n# c\na\tzero\ty\n", 3),
        ("a\t0\tx\tz\n", 1),
    ];
    for (text, line) in cases {
        match parse_lexicon(text.as_bytes()) {
            Err(Error::Schema { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
            other => panic!("{text:?}: expected a schema error, got {other:?}"),
        }
    }
    let mut out = Vec::new();
    serialize_lexicon(&parse_lexicon("a\t0\tx\n".as_bytes()).unwrap(), &mut out).unwrap();
    assert!(String::from_utf8(out).unwrap().contains("a\t0\tx"));
}
