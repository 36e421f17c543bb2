//! Classical sentiment baselines: a dictionary scorer and multinomial Naive
//! Bayes over bag-of-words counts.
//!
//! Both share one tokenizer: split on non-alphanumeric characters, lowercase.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalharness::{score_predictions, Answer, EvalError, EvalRun, Prediction, TaskSpec};

pub const POSITIVE: &str = "positive";
pub const NEGATIVE: &str = "negative";
pub const NEUTRAL: &str = "neutral";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("`{0}` is listed as both positive and negative")]
    OverlappingTerm(String),
    #[error("line {line}: unknown polarity `{polarity}`")]
    InvalidPolarity { line: usize, polarity: String },
    #[error("smoothing must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("no training example for label `{0}`")]
    MissingClass(String),
    #[error("training label `{0}` is not in the label list")]
    UnknownLabel(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Lowercased alphanumeric runs.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SentimentLexicon {
    pub positive_terms: BTreeSet<String>,
    pub negative_terms: BTreeSet<String>,
}

impl SentimentLexicon {
    pub fn new<'a>(
        positive: impl IntoIterator<Item = &'a str>,
        negative: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, BaselineError> {
        let lex = Self {
            positive_terms: positive.into_iter().map(str::to_lowercase).collect(),
            negative_terms: negative.into_iter().map(str::to_lowercase).collect(),
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.positive_terms.is_empty() && self.negative_terms.is_empty() {
            return Err(BaselineError::EmptyLexicon);
        }
        if let Some(w) = self.positive_terms.intersection(&self.negative_terms).next() {
            return Err(BaselineError::OverlappingTerm(w.clone()));
        }
        Ok(())
    }

    /// Reads a two-column `word,polarity` CSV. A `word,polarity` header row
    /// is optional; extra columns are ignored.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        let reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        Self::from_csv_reader(reader)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, BaselineError> {
        let reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        Self::from_csv_reader(reader)
    }

    fn from_csv_reader<R: std::io::Read>(mut reader: csv::Reader<R>) -> Result<Self, BaselineError> {
        let mut lex = Self::default();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let (Some(word), Some(pol)) = (rec.get(0), rec.get(1)) else {
                continue;
            };
            if word.is_empty() || word.starts_with('#') {
                continue;
            }
            let pol = pol.to_lowercase();
            if i == 0 && word.eq_ignore_ascii_case("word") && pol == "polarity" {
                continue;
            }
            let set = match pol.as_str() {
                "positive" | "pos" => &mut lex.positive_terms,
                "negative" | "neg" => &mut lex.negative_terms,
                _ => {
                    return Err(BaselineError::InvalidPolarity {
                        line: i + 1,
                        polarity: pol,
                    })
                }
            };
            set.insert(word.to_lowercase());
        }
        lex.validate()?;
        Ok(lex)
    }

    /// (positive hits, negative hits), counting repeats.
    pub fn hits(&self, sentence: &str) -> (usize, usize) {
        let mut p = 0;
        let mut n = 0;
        for t in word_tokens(sentence) {
            if self.positive_terms.contains(&t) {
                p += 1;
            } else if self.negative_terms.contains(&t) {
                n += 1;
            }
        }
        (p, n)
    }
}

/// Majority polarity by term counts; ties and no hits are neutral.
pub fn lexicon_classify(lex: &SentimentLexicon, sentence: &str) -> &'static str {
    let (p, n) = lex.hits(sentence);
    match p.cmp(&n) {
        std::cmp::Ordering::Greater => POSITIVE,
        std::cmp::Ordering::Less => NEGATIVE,
        std::cmp::Ordering::Equal => NEUTRAL,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    /// Labels in tie-breaking order.
    pub labels: Vec<String>,
    pub log_priors: Vec<f64>,
    /// Per label, log-likelihood of every vocabulary word.
    pub log_likelihoods: Vec<BTreeMap<String, f64>>,
    pub smoothing: f64,
}

impl NaiveBayesModel {
    /// Trains with labels ordered by first appearance in the corpus.
    pub fn train<S: AsRef<str>, L: AsRef<str>>(
        corpus: &[(S, L)],
        smoothing: f64,
    ) -> Result<Self, BaselineError> {
        let mut labels: Vec<String> = Vec::new();
        for (_, l) in corpus {
            if !labels.iter().any(|x| x == l.as_ref()) {
                labels.push(l.as_ref().to_string());
            }
        }
        Self::train_with_labels(corpus, &labels, smoothing)
    }

    /// Trains over an explicit label list; every label needs an example.
    pub fn train_with_labels<S: AsRef<str>, L: AsRef<str>>(
        corpus: &[(S, L)],
        labels: &[String],
        smoothing: f64,
    ) -> Result<Self, BaselineError> {
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(BaselineError::InvalidSmoothing(smoothing));
        }
        if corpus.is_empty() {
            return Err(BaselineError::EmptyCorpus);
        }
        let index: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let mut docs = vec![0usize; labels.len()];
        let mut counts: Vec<HashMap<String, usize>> = vec![HashMap::new(); labels.len()];
        let mut vocab: BTreeSet<String> = BTreeSet::new();
        for (text, label) in corpus {
            let &k = index
                .get(label.as_ref())
                .ok_or_else(|| BaselineError::UnknownLabel(label.as_ref().to_string()))?;
            docs[k] += 1;
            for t in word_tokens(text.as_ref()) {
                *counts[k].entry(t.clone()).or_insert(0) += 1;
                vocab.insert(t);
            }
        }
        if let Some(k) = docs.iter().position(|&d| d == 0) {
            return Err(BaselineError::MissingClass(labels[k].clone()));
        }

        let n = corpus.len() as f64;
        let v = vocab.len() as f64;
        let log_priors = docs.iter().map(|&d| (d as f64 / n).ln()).collect();
        let log_likelihoods = counts
            .iter()
            .map(|c| {
                let total = c.values().sum::<usize>() as f64;
                let denom = total + smoothing * v;
                vocab
                    .iter()
                    .map(|w| {
                        let cnt = c.get(w).copied().unwrap_or(0) as f64;
                        (w.clone(), ((cnt + smoothing) / denom).ln())
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            labels: labels.to_vec(),
            log_priors,
            log_likelihoods,
            smoothing,
        })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.log_likelihoods.first().map_or(0, BTreeMap::len)
    }

    /// Unnormalized log posterior per label; unknown tokens are skipped.
    pub fn log_scores(&self, text: &str) -> Vec<f64> {
        let tokens = word_tokens(text);
        self.labels
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let ll = &self.log_likelihoods[k];
                self.log_priors[k] + tokens.iter().filter_map(|t| ll.get(t)).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, text: &str) -> &str {
        let scores = self.log_scores(text);
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        &self.labels[best]
    }
}

fn label_corpus(spec: &TaskSpec) -> Result<Vec<(String, String)>, BaselineError> {
    spec.samples
        .iter()
        .map(|s| match &s.gold {
            Answer::Label(l) => Ok((s.input.clone(), l.clone())),
            Answer::Entities(_) => Err(EvalError::AnswerKindMismatch(s.id.clone()).into()),
        })
        .collect()
}

fn evaluate_with(spec: &TaskSpec, f: impl Fn(&str) -> String) -> Result<EvalRun, BaselineError> {
    let predictions: Vec<Prediction> = spec
        .samples
        .iter()
        .map(|s| Prediction {
            sample_id: s.id.clone(),
            predicted: Answer::Label(f(&s.input)),
            gold: s.gold.clone(),
            scores: None,
            subtask: s.subtask.clone(),
        })
        .collect();
    let report = score_predictions(spec.header.task, &predictions)?;
    Ok(EvalRun {
        report,
        predictions,
    })
}

pub fn evaluate_lexicon(lex: &SentimentLexicon, spec: &TaskSpec) -> Result<EvalRun, BaselineError> {
    label_corpus(spec)?;
    let mut run = evaluate_with(spec, |s| lexicon_classify(lex, s).to_string())?;
    run.report.model = Some("lexicon".into());
    Ok(run)
}

/// Trains on `train` (label order from its header when present) and scores `eval`.
pub fn evaluate_naive_bayes(
    train: &TaskSpec,
    eval: &TaskSpec,
    smoothing: f64,
) -> Result<(NaiveBayesModel, EvalRun), BaselineError> {
    let corpus = label_corpus(train)?;
    let model = match &train.header.labels {
        Some(labels) => NaiveBayesModel::train_with_labels(&corpus, labels, smoothing)?,
        None => NaiveBayesModel::train(&corpus, smoothing)?,
    };
    label_corpus(eval)?;
    let mut run = evaluate_with(eval, |s| model.predict(s).to_string())?;
    run.report.model = Some("naive_bayes".into());
    Ok((model, run))
}
