//! Shared fixtures and brute-force reference implementations.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use finadapt::augment::EntityTag;
use finadapt::evalharness::{Answer, Prediction};
use finadapt::modelio::{ClientConfig, CompletionBackend, ModelClient};
use finadapt::tokenization::{Tokenizer, TokenId};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn tokenizer() -> &'static Tokenizer {
    static TOK: OnceLock<Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| Tokenizer::from_file(fixture("tokenizer.json")).expect("fixture tokenizer"))
}

pub fn fast_client(backend: impl CompletionBackend + 'static) -> ModelClient {
    ModelClient::new(
        Arc::new(backend),
        ClientConfig {
            max_retries: 2,
            initial_backoff_ms: 1,
            max_backoff_ms: 4,
            concurrency: 4,
        },
    )
}

/// Reference packer: materialize the whole stream, then cut.
pub fn brute_pack(docs: &[Vec<TokenId>], sep: TokenId, block_len: usize) -> (Vec<Vec<TokenId>>, usize) {
    let mut stream = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        if i > 0 {
            stream.push(sep);
        }
        stream.extend(d);
    }
    let n_blocks = stream.len() / block_len;
    let blocks = (0..n_blocks)
        .map(|i| stream[i * block_len..(i + 1) * block_len].to_vec())
        .collect();
    (blocks, stream.len() - n_blocks * block_len)
}

pub fn label_predictions(gold: &[String], pred: &[String]) -> Vec<Prediction> {
    gold.iter()
        .zip(pred)
        .enumerate()
        .map(|(i, (g, p))| Prediction {
            sample_id: format!("s{i}"),
            predicted: Answer::Label(p.clone()),
            gold: Answer::Label(g.clone()),
            scores: None,
            subtask: None,
        })
        .collect()
}

pub fn entity_predictions(gold: &[Vec<EntityTag>], pred: &[Vec<EntityTag>]) -> Vec<Prediction> {
    gold.iter()
        .zip(pred)
        .enumerate()
        .map(|(i, (g, p))| Prediction {
            sample_id: format!("s{i}"),
            predicted: Answer::Entities(p.clone()),
            gold: Answer::Entities(g.clone()),
            scores: None,
            subtask: None,
        })
        .collect()
}

pub fn brute_accuracy(gold: &[String], pred: &[String]) -> f64 {
    let mut hit = 0.0;
    for i in 0..gold.len() {
        if gold[i] == pred[i] {
            hit += 1.0;
        }
    }
    hit / gold.len() as f64
}

/// Weighted F1 through explicit precision and recall per gold class.
pub fn brute_weighted_f1(gold: &[String], pred: &[String]) -> f64 {
    let classes: BTreeSet<&String> = gold.iter().collect();
    let n = gold.len() as f64;
    let mut total = 0.0;
    for c in classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        for i in 0..gold.len() {
            match (&gold[i] == c, &pred[i] == c) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += f1 * (tp + fneg) / n;
    }
    total
}

/// Micro F1 through pooled precision and recall.
pub fn brute_entity_f1(gold: &[Vec<EntityTag>], pred: &[Vec<EntityTag>]) -> f64 {
    let mut tp = 0.0;
    let mut n_pred = 0.0;
    let mut n_gold = 0.0;
    for (g, p) in gold.iter().zip(pred) {
        let g: Vec<&EntityTag> = dedup(g);
        let p: Vec<&EntityTag> = dedup(p);
        n_gold += g.len() as f64;
        n_pred += p.len() as f64;
        for e in &p {
            if g.contains(e) {
                tp += 1.0;
            }
        }
    }
    if n_gold == 0.0 && n_pred == 0.0 {
        return 1.0;
    }
    let precision = if n_pred > 0.0 { tp / n_pred } else { 0.0 };
    let recall = if n_gold > 0.0 { tp / n_gold } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn dedup(v: &[EntityTag]) -> Vec<&EntityTag> {
    let mut out: Vec<&EntityTag> = Vec::new();
    for e in v {
        if !out.contains(&e) {
            out.push(e);
        }
    }
    out
}

/// Normalized NB posteriors from raw counts, multiplied in linear space.
pub fn brute_nb_posterior(
    corpus: &[(&str, &str)],
    labels: &[&str],
    smoothing: f64,
    text: &str,
) -> Vec<f64> {
    let tokenize = |s: &str| -> Vec<String> {
        s.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
            .collect()
    };
    let mut vocab: BTreeSet<String> = BTreeSet::new();
    for (t, _) in corpus {
        vocab.extend(tokenize(t));
    }
    let v = vocab.len() as f64;
    let mut joint = Vec::new();
    for &label in labels {
        let docs: Vec<&str> = corpus.iter().filter(|(_, l)| *l == label).map(|(t, _)| *t).collect();
        let mut counts: HashMap<String, f64> = HashMap::new();
        let mut total = 0.0;
        for d in &docs {
            for tok in tokenize(d) {
                *counts.entry(tok).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
        let mut p = docs.len() as f64 / corpus.len() as f64;
        for tok in tokenize(text) {
            if vocab.contains(&tok) {
                p *= (counts.get(&tok).copied().unwrap_or(0.0) + smoothing) / (total + smoothing * v);
            }
        }
        joint.push(p);
    }
    let z: f64 = joint.iter().sum();
    joint.into_iter().map(|p| p / z).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}
