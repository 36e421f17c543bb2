mod common;

use finadapt::baselines::{
    lexicon_classify, BaselineError, NaiveBayesModel, SentimentLexicon, NEGATIVE, NEUTRAL, POSITIVE,
};
use proptest::prelude::*;

use common::{brute_nb_posterior, fixture, softmax};

fn toy_lexicon() -> SentimentLexicon {
    SentimentLexicon::from_csv(fixture("toy_lexicon.csv")).unwrap()
}

#[test]
fn toy_lexicon_loads() {
    let lex = toy_lexicon();
    assert_eq!(lex.positive_terms.len() + lex.negative_terms.len(), 20);
    assert_eq!(lexicon_classify(&lex, "Profit growth strong"), POSITIVE);
    assert_eq!(lexicon_classify(&lex, "Record profit, but a lawsuit, a loss and a default"), NEGATIVE);
    assert_eq!(lexicon_classify(&lex, "Gains offset the impairment"), NEUTRAL);
    assert_eq!(lexicon_classify(&lex, "The meeting is on Tuesday"), NEUTRAL);
}

proptest! {
    #[test]
    fn lexicon_ignores_word_order(words in prop::collection::vec(
        prop::sample::select(vec!["gain", "loss", "weak", "strong", "the", "firm", "rose"]), 0..12),
        seed: u64,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let lex = toy_lexicon();
        let mut shuffled = words.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(
            lexicon_classify(&lex, &words.join(" ")),
            lexicon_classify(&lex, &shuffled.join(" "))
        );
    }

    #[test]
    fn nb_matches_brute_force(
        docs in prop::collection::vec(
            (prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..4), 0usize..2),
            2..=3),
        query in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "z"]), 0..5),
        smoothing in 0.1f64..2.0,
    ) {
        let labels = ["x", "y"];
        let texts: Vec<String> = docs.iter().map(|(w, _)| w.join(" ")).collect();
        let corpus: Vec<(&str, &str)> = texts.iter().zip(&docs).map(|(t, (_, l))| (t.as_str(), labels[*l])).collect();
        prop_assume!(labels.iter().all(|l| corpus.iter().any(|(_, c)| c == l)));
        let owned: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        let model = NaiveBayesModel::train_with_labels(&corpus, &owned, smoothing).unwrap();
        let q = query.join(" ");
        let got = softmax(&model.log_scores(&q));
        let want = brute_nb_posterior(&corpus, &labels, smoothing, &q);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn nb_distributions_normalize(docs in prop::collection::vec(("[a-e ]{1,12}", 0usize..3), 3..10)) {
        let labels = ["p", "q", "r"];
        let corpus: Vec<(&str, &str)> = docs.iter().map(|(t, l)| (t.as_str(), labels[*l])).collect();
        prop_assume!(corpus.iter().any(|(t, _)| !t.trim().is_empty()));
        let model = NaiveBayesModel::train(&corpus, 1.0).unwrap();
        let prior: f64 = model.log_priors.iter().map(|p| p.exp()).sum();
        prop_assert!((prior - 1.0).abs() < 1e-9);
        for ll in &model.log_likelihoods {
            let s: f64 = ll.values().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn separable_corpus_is_learned() {
    let corpus = [
        ("profit growth record", "positive"),
        ("strong gains beat", "positive"),
        ("loss decline lawsuit", "negative"),
        ("weak drop miss", "negative"),
        ("meeting scheduled agenda", "neutral"),
        ("board announced agenda", "neutral"),
    ];
    let model = NaiveBayesModel::train(&corpus, 1.0).unwrap();
    for (text, label) in corpus {
        assert_eq!(model.predict(text), label);
    }
}

#[test]
fn bad_lexicon_files() {
    assert!(matches!(
        SentimentLexicon::from_csv_str("up,positive\nup,negative\n"),
        Err(BaselineError::OverlappingTerm(_))
    ));
    assert!(matches!(
        SentimentLexicon::from_csv_str("word,polarity\n"),
        Err(BaselineError::EmptyLexicon)
    ));
}
