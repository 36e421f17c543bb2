//! Evaluation harness.
//!
//! Classification tasks (FPB, FiQA-SA, Headlines) are decided by constrained
//! label decoding: every allowed label is scored as a forced continuation of
//! the prompt and the most probable one wins. NER is free generation parsed
//! with the entity-list grammar. Metrics: weighted F1, accuracy and
//! micro entity-level F1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{parse_entities_lenient, EntityTag};
use crate::instruct::{render_prompt, InstructError, TaskKind};
use crate::modelio::{BackendError, GenerationRequest, ModelClient};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task has no samples")]
    EmptyTask,
    #[error("no predictions to score")]
    EmptyPredictions,
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("prediction `{0}` does not match the metric's answer kind")]
    AnswerKindMismatch(String),
    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Template(#[from] InstructError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Gold or predicted answer: a class label or a set of entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Label(String),
    Entities(Vec<EntityTag>),
}

impl Answer {
    pub fn label(&self) -> Option<&str> {
        match self {
            Answer::Label(l) => Some(l),
            Answer::Entities(_) => None,
        }
    }

    pub fn entities(&self) -> Option<&[EntityTag]> {
        match self {
            Answer::Entities(e) => Some(e),
            Answer::Label(_) => None,
        }
    }
}

type LabelScores = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub id: String,
    pub input: String,
    pub gold: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHeader {
    pub task: TaskKind,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub header: TaskHeader,
    pub samples: Vec<EvalSample>,
}

impl TaskSpec {
    pub fn is_classification(&self) -> bool {
        self.header.task != TaskKind::Ner
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |m: String| Err(EvalError::InvalidSpec(m));
        match (&self.header.labels, self.is_classification()) {
            (Some(labels), true) => {
                let distinct: HashSet<_> = labels.iter().collect();
                if labels.len() < 2 || distinct.len() != labels.len() {
                    return invalid("classification needs at least two distinct labels".into());
                }
                if labels.iter().any(|l| l.is_empty()) {
                    return invalid("labels must be non-empty".into());
                }
            }
            (None, true) => return invalid("classification task without a label set".into()),
            (Some(_), false) => return invalid("NER task must not declare labels".into()),
            (None, false) => {}
        }
        for s in &self.samples {
            match (&s.gold, &self.header.labels) {
                (Answer::Label(g), Some(labels)) if !labels.contains(g) => {
                    return invalid(format!("sample `{}` has gold `{g}` outside the label set", s.id))
                }
                (Answer::Entities(_), Some(_)) => {
                    return invalid(format!("sample `{}` has entity gold in a classification task", s.id))
                }
                (Answer::Label(_), None) => {
                    return invalid(format!("sample `{}` has label gold in an NER task", s.id))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn prompt(&self, sample: &EvalSample) -> Result<String, EvalError> {
        Ok(render_prompt(&self.header.instruction, &sample.input)?)
    }
}

#[derive(Deserialize)]
struct RawSample {
    id: serde_json::Value,
    input: String,
    gold: RawGold,
    #[serde(default)]
    subtask: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawGold {
    Text(String),
    Entities(Vec<EntityTag>),
}

fn id_string(v: serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

/// Loads a task file. Without `header_path`, the first record of the file
/// must be the header (`{task, instruction, labels?}`).
pub fn load_task(
    path: impl AsRef<Path>,
    header_path: Option<&Path>,
) -> Result<TaskSpec, EvalError> {
    let path = path.as_ref();
    let bad = |line: usize, message: String| EvalError::BadRecord {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut header: Option<TaskHeader> = match header_path {
        Some(h) => {
            let file = File::open(h)?;
            Some(serde_json::from_reader(BufReader::new(file)).map_err(|e| {
                EvalError::BadRecord {
                    path: h.display().to_string(),
                    line: 1,
                    message: e.to_string(),
                }
            })?)
        }
        None => None,
    };

    let mut samples = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(serde_json::from_str(&line).map_err(|e| bad(i + 1, format!("header: {e}")))?);
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| bad(i + 1, e.to_string()))?;
        let is_ner = header.as_ref().map(|h| h.task == TaskKind::Ner).unwrap_or(false);
        let gold = match raw.gold {
            RawGold::Text(t) if is_ner => Answer::Entities(parse_entities_lenient(&t)),
            RawGold::Text(t) => Answer::Label(t.trim().to_string()),
            RawGold::Entities(e) => Answer::Entities(e),
        };
        samples.push(EvalSample {
            id: id_string(raw.id),
            input: raw.input,
            gold,
            subtask: raw.subtask,
        });
    }
    let header = header.ok_or(EvalError::EmptyTask)?;
    let spec = TaskSpec { header, samples };
    spec.validate()?;
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub predicted: Answer,
    pub gold: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
}

/// Argmax of the label log-probabilities; ties go to the earlier label.
pub fn argmax_label(labels: &[String], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..scores.len().min(labels.len()) {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

/// Scores every label as a forced continuation and returns the most probable.
pub async fn classify_constrained(
    client: &ModelClient,
    prompt: &str,
    labels: &[String],
) -> Result<(String, BTreeMap<String, f64>), EvalError> {
    let scored = client.score_continuations(prompt, labels).await?;
    let values: Vec<f64> = scored.iter().map(|s| s.total_logprob).collect();
    let best = argmax_label(labels, &values);
    let map = labels.iter().cloned().zip(values).collect();
    Ok((labels[best].clone(), map))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            max_new_tokens: 64,
            stop_sequences: vec!["\n".into()],
        }
    }
}

/// Unconstrained generation parsed into entities; unparseable output is an
/// empty prediction.
pub async fn generate_ner(
    client: &ModelClient,
    prompt: &str,
    settings: &GenerationSettings,
) -> Result<Vec<EntityTag>, EvalError> {
    let req = GenerationRequest::new(prompt, settings.max_new_tokens)
        .with_stop(settings.stop_sequences.iter().cloned());
    let reply = client.complete(&req).await?;
    Ok(parse_entities_lenient(&reply))
}

fn label_pairs(preds: &[Prediction]) -> Result<Vec<(&str, &str)>, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    preds
        .iter()
        .map(|p| match (p.gold.label(), p.predicted.label()) {
            (Some(g), Some(pr)) => Ok((g, pr)),
            _ => Err(EvalError::AnswerKindMismatch(p.sample_id.clone())),
        })
        .collect()
}

/// Fraction of predictions equal to gold.
pub fn accuracy(preds: &[Prediction]) -> Result<f64, EvalError> {
    let pairs = label_pairs(preds)?;
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Per-class F1 averaged with gold-frequency weights. A class F1 with a zero
/// denominator counts as 0.
pub fn weighted_f1(preds: &[Prediction]) -> Result<f64, EvalError> {
    let pairs = label_pairs(preds)?;
    let mut support: HashMap<&str, usize> = HashMap::new();
    let mut tp: HashMap<&str, usize> = HashMap::new();
    let mut predicted: HashMap<&str, usize> = HashMap::new();
    for &(g, p) in &pairs {
        *support.entry(g).or_insert(0) += 1;
        *predicted.entry(p).or_insert(0) += 1;
        if g == p {
            *tp.entry(g).or_insert(0) += 1;
        }
    }
    let n = pairs.len() as f64;
    let mut classes: Vec<&str> = support.keys().copied().collect();
    classes.sort_unstable();
    let total = classes
        .into_iter()
        .map(|c| {
            let tp = tp.get(c).copied().unwrap_or(0) as f64;
            let denom = (support[c] + predicted.get(c).copied().unwrap_or(0)) as f64;
            let f1 = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
            f1 * support[c] as f64 / n
        })
        .sum();
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Global exact-match counts over (surface, type) sets.
pub fn entity_counts(preds: &[Prediction]) -> Result<EntityCounts, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    let mut c = EntityCounts {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    for p in preds {
        let (Some(gold), Some(pred)) = (p.gold.entities(), p.predicted.entities()) else {
            return Err(EvalError::AnswerKindMismatch(p.sample_id.clone()));
        };
        let gold: HashSet<&EntityTag> = gold.iter().collect();
        let pred: HashSet<&EntityTag> = pred.iter().collect();
        let tp = gold.intersection(&pred).count();
        c.true_positives += tp;
        c.false_positives += pred.len() - tp;
        c.false_negatives += gold.len() - tp;
    }
    Ok(c)
}

/// Micro F1 over exact entity matches. With no entities on either side the
/// prediction agrees with gold and scores 1.
pub fn entity_f1(preds: &[Prediction]) -> Result<f64, EvalError> {
    let c = entity_counts(preds)?;
    let denom = 2 * c.true_positives + c.false_positives + c.false_negatives;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * c.true_positives as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskScore {
    pub name: String,
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub task: TaskKind,
    pub metric: String,
    pub value: f64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subtasks: Vec<SubtaskScore>,
    #[serde(default)]
    pub extras: BTreeMap<String, f64>,
    #[serde(default)]
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
}

fn group_by_subtask(preds: &[Prediction]) -> BTreeMap<String, Vec<Prediction>> {
    let mut groups: BTreeMap<String, Vec<Prediction>> = BTreeMap::new();
    for p in preds {
        if let Some(s) = &p.subtask {
            groups.entry(s.clone()).or_default().push(p.clone());
        }
    }
    groups
}

/// Aggregates predictions into a report following the per-task protocol.
pub fn score_predictions(task: TaskKind, preds: &[Prediction]) -> Result<EvalReport, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyTask);
    }
    let mut extras = BTreeMap::new();
    let mut assumptions = Vec::new();
    let mut subtasks = Vec::new();

    let (metric, value) = if task == TaskKind::Ner {
        let c = entity_counts(preds)?;
        extras.insert("true_positives".into(), c.true_positives as f64);
        extras.insert("false_positives".into(), c.false_positives as f64);
        extras.insert("false_negatives".into(), c.false_negatives as f64);
        assumptions.push("entity F1 is micro-averaged over exact (surface, type) matches".into());
        ("entity_f1", entity_f1(preds)?)
    } else {
        assumptions.push("F1 is per-class F1 weighted by gold class frequency".into());
        let pooled = weighted_f1(preds)?;
        extras.insert("accuracy".into(), accuracy(preds)?);
        for (name, group) in group_by_subtask(preds) {
            subtasks.push(SubtaskScore {
                name,
                value: weighted_f1(&group)?,
                count: group.len(),
            });
        }
        if task == TaskKind::Headline && !subtasks.is_empty() {
            if subtasks.iter().map(|s| s.count).sum::<usize>() != preds.len() {
                return Err(EvalError::InvalidSpec(
                    "every Headlines sample needs a subtask".into(),
                ));
            }
            extras.insert("pooled_weighted_f1".into(), pooled);
            assumptions.push("Headlines score is the unweighted mean over subtasks".into());
            let mean = subtasks.iter().map(|s| s.value).sum::<f64>() / subtasks.len() as f64;
            ("weighted_f1", mean)
        } else {
            ("weighted_f1", pooled)
        }
    };

    Ok(EvalReport {
        model: None,
        task,
        metric: metric.into(),
        value,
        count: preds.len(),
        subtasks,
        extras,
        assumptions,
    })
}

/// Runs every sample through the model and scores the task.
pub async fn run_eval(
    spec: &TaskSpec,
    client: &ModelClient,
    settings: &GenerationSettings,
) -> Result<EvalRun, EvalError> {
    spec.validate()?;
    if spec.samples.is_empty() {
        return Err(EvalError::EmptyTask);
    }
    let prompts = spec
        .samples
        .iter()
        .map(|s| spec.prompt(s))
        .collect::<Result<Vec<_>, _>>()?;
    let labels = spec.header.labels.clone().unwrap_or_default();
    let in_flight = client.config().concurrency.max(1) * 2;

    let outputs: Vec<Result<(Answer, Option<LabelScores>), EvalError>> =
        futures::stream::iter(prompts.iter().map(|prompt| {
            let labels = &labels;
            async move {
                if spec.is_classification() {
                    let (label, scores) = classify_constrained(client, prompt, labels).await?;
                    Ok((Answer::Label(label), Some(scores)))
                } else {
                    let ents = generate_ner(client, prompt, settings).await?;
                    Ok((Answer::Entities(ents), None))
                }
            }
        }))
        .buffered(in_flight)
        .collect()
        .await;

    let mut predictions = Vec::with_capacity(outputs.len());
    for (sample, out) in spec.samples.iter().zip(outputs) {
        let (predicted, scores) = out?;
        predictions.push(Prediction {
            sample_id: sample.id.clone(),
            predicted,
            gold: sample.gold.clone(),
            scores,
            subtask: sample.subtask.clone(),
        });
    }
    let report = score_predictions(spec.header.task, &predictions)?;
    Ok(EvalRun {
        report,
        predictions,
    })
}

pub fn write_predictions<W: Write>(preds: &[Prediction], writer: W) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

const TABLE_TASKS: [TaskKind; 4] = [
    TaskKind::Fpb,
    TaskKind::FiqaSa,
    TaskKind::Headline,
    TaskKind::Ner,
];

/// Grid with one row per model and one F1 column per evaluated task.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, TaskKind), f64> = HashMap::new();
    for r in reports {
        let model = r.model.clone().unwrap_or_else(|| "model".into());
        if !rows.contains(&model) {
            rows.push(model.clone());
        }
        cells.insert((model, r.task), r.value);
    }
    let mut out = format!("{:<24}", "Model");
    for t in TABLE_TASKS {
        out.push_str(&format!(" {:>9}", t.display_name()));
    }
    out.push('\n');
    for model in rows {
        out.push_str(&format!("{model:<24}"));
        for t in TABLE_TASKS {
            match cells.get(&(model.clone(), t)) {
                Some(v) => out.push_str(&format!(" {v:>9.2}")),
                None => out.push_str(&format!(" {:>9}", "-")),
            }
        }
        out.push('\n');
    }
    out
}
