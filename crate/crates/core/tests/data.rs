use normshare::data::{
    generate_synthetic_corpus, load_pairs, split_train_validation, truncate, write_pairs, Position,
    Rule, RuleSet, SyntheticOptions, TaskDataset, TaskKind, TokenPair,
};
use normshare::evalkit::identity_baseline;
use numcore::seeded_rng;
use proptest::prelude::*;

fn dataset(n: usize) -> TaskDataset {
    let pairs = (0..n)
        .map(|i| TokenPair::new(format!("v{i}"), format!("u{i}")))
        .collect();
    TaskDataset::new("XX", TaskKind::Normalization, "xx", pairs)
}

#[test]
fn pair_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("EN.tsv");
    let pairs = vec![
        TokenPair::new("vnd", "und"),
        TokenPair::new("Theyr", "their"),
        TokenPair::new("großę", "große"),
    ];
    write_pairs(&path, &pairs).unwrap();
    let back = load_pairs(&path, TaskKind::Normalization, "en").unwrap();
    assert_eq!(back.name, "EN");
    assert_eq!(back.pairs, pairs);
}

#[test]
fn nfc_makes_composed_and_decomposed_input_equal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tsv");
    std::fs::write(&path, "e\u{301}r\tér\n").unwrap();
    let back = load_pairs(&path, TaskKind::Normalization, "xx").unwrap();
    assert_eq!(back.pairs[0].source, back.pairs[0].target);
}

proptest! {
    #[test]
    fn truncation_is_a_prefix(n in 1usize..200, k in 0usize..250) {
        let ds = dataset(n);
        let t = truncate(&ds, k);
        prop_assert_eq!(t.len(), k.min(n));
        prop_assert_eq!(&t.pairs[..], &ds.pairs[..k.min(n)]);
    }

    #[test]
    fn split_partitions_in_order(n in 10usize..500) {
        let ds = dataset(n);
        let (train, val) = split_train_validation(&ds, 0.9).unwrap();
        prop_assert!(!train.is_empty() && !val.is_empty());
        prop_assert_eq!(train.len(), (n * 9).div_ceil(10));
        let joined: Vec<TokenPair> = train.pairs.iter().chain(&val.pairs).cloned().collect();
        prop_assert_eq!(joined, ds.pairs);
    }

    #[test]
    fn autoencoding_pairs_are_identities(seed in 0u64..1000) {
        let options = SyntheticOptions {
            lexicon_size: 50,
            tokens: 100,
            aux_size: 60,
            ..SyntheticOptions::default()
        };
        let corpus = generate_synthetic_corpus(seed, &options, &RuleSet::historical()).unwrap();
        prop_assert!(corpus.autoencoding.pairs.iter().all(|p| p.source == p.target));
        prop_assert!(corpus.normalization.pairs.iter().all(|p| corpus.lexicon.contains(&p.target)));
    }
}

#[test]
fn rule_frequencies_match_their_probabilities() {
    let rules = RuleSet {
        rules: vec![
            Rule::Replace {
                from: "u".into(),
                to: "v".into(),
                at: Position::Initial,
                prob: 0.8,
            },
            Rule::Replace {
                from: "ei".into(),
                to: "ey".into(),
                at: Position::Any,
                prob: 0.5,
            },
        ],
    };
    let mut rng = seeded_rng(17);
    let draws = 20_000;
    let (mut unchanged, mut initial, mut inner) = (0, 0, 0);
    for _ in 0..draws {
        let w = rules.corrupt("umbeit", &mut rng);
        unchanged += usize::from(w == "umbeit");
        initial += usize::from(w.starts_with('v'));
        inner += usize::from(w.contains("ey"));
    }
    let frac = |k: usize| k as f64 / draws as f64;
    assert!(
        (frac(unchanged) - 0.2 * 0.5).abs() < 0.03,
        "{}",
        frac(unchanged)
    );
    assert!((frac(initial) - 0.8).abs() < 0.03, "{}", frac(initial));
    assert!((frac(inner) - 0.5).abs() < 0.03, "{}", frac(inner));
}

#[test]
fn zero_probability_rules_give_a_perfect_identity_baseline() {
    let options = SyntheticOptions {
        lexicon_size: 100,
        tokens: 500,
        aux_size: 100,
        ..SyntheticOptions::default()
    };
    let corpus =
        generate_synthetic_corpus(3, &options, &RuleSet::historical().scaled(0.0)).unwrap();
    assert_eq!(identity_baseline(&corpus.normalization), 100.0);
    let corrupted = generate_synthetic_corpus(3, &options, &RuleSet::historical()).unwrap();
    assert!(identity_baseline(&corrupted.normalization) < 90.0);
}

#[test]
fn scaling_rules_moves_the_identity_baseline_monotonically() {
    let options = SyntheticOptions {
        lexicon_size: 400,
        tokens: 4000,
        aux_size: 100,
        ..SyntheticOptions::default()
    };
    let baselines: Vec<f64> = [0.25, 0.5, 1.0, 1.5]
        .iter()
        .map(|&s| {
            let c =
                generate_synthetic_corpus(9, &options, &RuleSet::historical().scaled(s)).unwrap();
            identity_baseline(&c.normalization)
        })
        .collect();
    assert!(baselines.windows(2).all(|w| w[0] > w[1]), "{baselines:?}");
}
