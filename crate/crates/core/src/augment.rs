//! Instruction augmentation with a generator LLM.
//!
//! Sentiment subsets get new inputs written by the generator from a labelled
//! example (dynamic one-shot); NER gets tags for existing unlabelled
//! sentences from a fixed one-shot prompt. Replies are parsed, validated and
//! deduplicated before they become instruction samples.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instruct::{InstructionSample, Provenance, TaskKind};
use crate::modelio::{BackendError, GenerationRequest, ModelClient};

pub const SENTIMENT_OPEN_TAG: &str = "<stc>";
pub const SENTIMENT_CLOSE_TAG: &str = "</stc>";

const NER_INSTRUCTION: &str = "Identify the named entities that represent a person ('PER'), an organization ('ORG'), or a location ('LOC') in a financial context. Use the format 'Entities: entity name, entity type'.";
const NER_EXAMPLE_SENTENCE: &str =
    "The Bank gave money to the Borrower to open a business in New York.";
const NER_EXAMPLE_ENTITIES: &str = "Bank, ORG | Borrower, PER | New York, LOC";
const NER_FOLLOW_UP: &str = "Do the same with this sentence, identifying 'PER', 'ORG', 'LOC' entities.";

/// Marker after which the seed sentence is placed in the NER prompt.
pub const NER_SENTENCE_MARKER: &str = "Sentence:";

const QUOTES: &[char] = &['\'', '"', '\u{2018}', '\u{2019}', '\u{201C}', '\u{201D}', '`'];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AugmentError {
    #[error("unparseable generation: {0}")]
    UnparseableGeneration(String),
    #[error("generated span is empty")]
    EmptySpan,
    #[error("unknown entity type `{0}`")]
    UnknownEntityType(String),
    #[error("no valid entities in reply")]
    NoValidEntities,
    #[error("invalid sentiment label `{0}`")]
    InvalidLabel(String),
    #[error("task {0} cannot be augmented")]
    UnsupportedTask(TaskKind),
    #[error("no seeds supplied")]
    NoSeeds,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Negative,
    Neutral,
}

impl SentimentLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
        }
    }
}

impl FromStr for SentimentLabel {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Ok(SentimentLabel::Positive),
            "negative" => Ok(SentimentLabel::Negative),
            "neutral" => Ok(SentimentLabel::Neutral),
            _ => Err(AugmentError::InvalidLabel(s.to_string())),
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentSeed {
    pub sentence: String,
    pub label: SentimentLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NerSeed {
    pub sentence: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityType {
    #[serde(rename = "PER")]
    Per,
    #[serde(rename = "ORG")]
    Org,
    #[serde(rename = "LOC")]
    Loc,
}

impl EntityType {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Org => "ORG",
            EntityType::Loc => "LOC",
        }
    }
}

impl FromStr for EntityType {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "PER" => Ok(EntityType::Per),
            "ORG" => Ok(EntityType::Org),
            "LOC" => Ok(EntityType::Loc),
            other => Err(AugmentError::UnknownEntityType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityTag {
    pub surface: String,
    #[serde(rename = "type")]
    pub etype: EntityType,
}

impl EntityTag {
    pub fn new(surface: impl Into<String>, etype: EntityType) -> Self {
        Self {
            surface: surface.into(),
            etype,
        }
    }
}

/// Dynamic one-shot prompt asking for a new sentence with the seed's label.
pub fn build_sentiment_prompt(seed: &SentimentSeed) -> String {
    format!(
        "Write a sentence with a {} financial sentiment. Use the format {SENTIMENT_OPEN_TAG} sentence {SENTIMENT_CLOSE_TAG}. Reuse terms from the example. Example: '{SENTIMENT_OPEN_TAG} {} {SENTIMENT_CLOSE_TAG}'",
        seed.label, seed.sentence
    )
}

/// Trimmed content of the first `<stc> .. </stc>` span. A reply cut at the
/// closing tag by a stop sequence is accepted up to its end.
pub fn parse_sentiment_response(text: &str) -> Result<String, AugmentError> {
    let start = text
        .find(SENTIMENT_OPEN_TAG)
        .ok_or_else(|| AugmentError::UnparseableGeneration("no <stc> span".into()))?;
    let after = &text[start + SENTIMENT_OPEN_TAG.len()..];
    let content = match after.find(SENTIMENT_CLOSE_TAG) {
        Some(end) => &after[..end],
        None => after,
    };
    if content.contains(SENTIMENT_OPEN_TAG) {
        return Err(AugmentError::UnparseableGeneration("nested <stc> tag".into()));
    }
    let content = content.trim();
    if content.is_empty() {
        return Err(AugmentError::EmptySpan);
    }
    Ok(content.to_string())
}

/// Fixed one-shot tagging prompt followed by the seed sentence.
pub fn build_ner_prompt(seed: &NerSeed) -> String {
    format!(
        "{NER_INSTRUCTION}\n{NER_SENTENCE_MARKER} '{NER_EXAMPLE_SENTENCE}'; Entities: '{NER_EXAMPLE_ENTITIES}'\n{NER_FOLLOW_UP}\n{NER_SENTENCE_MARKER} '{}'; Entities:",
        seed.sentence
    )
}

fn strip_quotes(s: &str) -> &str {
    s.trim().trim_matches(QUOTES).trim()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ItemRejection {
    Unparseable,
    UnknownType,
    Absent,
}

#[derive(Debug, Default)]
struct ItemParse {
    entities: Vec<EntityTag>,
    rejections: Vec<ItemRejection>,
    unknown_type: Option<String>,
}

fn parse_entity_items(text: &str, sentence: Option<&str>) -> ItemParse {
    let mut body = text.trim_start();
    if let Some(rest) = body.strip_prefix("Entities:") {
        body = rest;
    }
    let body = strip_quotes(body.lines().next().unwrap_or(""));

    let mut parsed = ItemParse::default();
    for item in body.split('|') {
        let item = strip_quotes(item);
        if item.is_empty() {
            continue;
        }
        let Some((name, etype)) = item.rsplit_once(',') else {
            parsed.rejections.push(ItemRejection::Unparseable);
            continue;
        };
        let name = strip_quotes(name);
        let etype = strip_quotes(etype);
        if name.is_empty() {
            parsed.rejections.push(ItemRejection::Unparseable);
            continue;
        }
        let etype = match etype.parse::<EntityType>() {
            Ok(t) => t,
            Err(_) => {
                parsed.unknown_type.get_or_insert_with(|| etype.to_string());
                parsed.rejections.push(ItemRejection::UnknownType);
                continue;
            }
        };
        if sentence.is_some_and(|s| !s.contains(name)) {
            parsed.rejections.push(ItemRejection::Absent);
            continue;
        }
        let tag = EntityTag::new(name, etype);
        if !parsed.entities.contains(&tag) {
            parsed.entities.push(tag);
        }
    }
    parsed
}

/// Parses `name, TYPE | name, TYPE` replies against the tagged sentence.
///
/// Items with an unknown type or a surface absent from `sentence` are
/// dropped; the reply fails only if no item survives.
pub fn parse_ner_response(text: &str, sentence: &str) -> Result<Vec<EntityTag>, AugmentError> {
    let parsed = parse_entity_items(text, Some(sentence));
    if !parsed.entities.is_empty() {
        return Ok(parsed.entities);
    }
    if parsed
        .rejections
        .iter()
        .all(|r| *r == ItemRejection::Unparseable)
    {
        return Err(AugmentError::UnparseableGeneration(text.to_string()));
    }
    if let Some(t) = parsed.unknown_type {
        return Err(AugmentError::UnknownEntityType(t));
    }
    Err(AugmentError::NoValidEntities)
}

/// Same grammar without the sentence check; unusable items are dropped and
/// an unparseable reply yields no entities.
pub fn parse_entities_lenient(text: &str) -> Vec<EntityTag> {
    parse_entity_items(text, None).entities
}

/// How NER answers are written into instruction samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NerAnswerFormat {
    /// `Bank, ORG | New York, LOC`
    #[default]
    EntityList,
    /// One `token TAG` line per whitespace token with BIO tags.
    Bio,
}

pub fn format_entity_list(entities: &[EntityTag]) -> String {
    entities
        .iter()
        .map(|e| format!("{}, {}", e.surface, e.etype.as_str()))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// BIO lines, or `None` if some entity does not align with whole tokens.
pub fn format_bio(sentence: &str, entities: &[EntityTag]) -> Option<String> {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    let mut tags: Vec<String> = vec!["O".to_string(); tokens.len()];
    for e in entities {
        let span: Vec<&str> = e.surface.split_whitespace().collect();
        if span.is_empty() || span.len() > tokens.len() {
            return None;
        }
        let start = (0..=tokens.len() - span.len()).find(|&i| {
            tokens[i..i + span.len()] == span[..]
                && tags[i..i + span.len()].iter().all(|t| t == "O")
        })?;
        for (k, tag) in tags[start..start + span.len()].iter_mut().enumerate() {
            let prefix = if k == 0 { "B" } else { "I" };
            *tag = format!("{prefix}-{}", e.etype.as_str());
        }
    }
    Some(
        tokens
            .iter()
            .zip(&tags)
            .map(|(t, tag)| format!("{t} {tag}"))
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

/// Case-folded, whitespace-collapsed form used for duplicate detection.
pub fn dedup_key(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone)]
pub enum Seeds {
    Sentiment(Vec<SentimentSeed>),
    Ner(Vec<NerSeed>),
}

impl Seeds {
    pub fn len(&self) -> usize {
        match self {
            Seeds::Sentiment(s) => s.len(),
            Seeds::Ner(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub task: TaskKind,
    pub target_new: usize,
    /// Reply budget as a multiple of `target_new`.
    pub budget_multiple: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    /// `None` selects the per-task default (`</stc>` or newline).
    pub stop_sequences: Option<Vec<String>>,
    pub seed: u64,
    /// Instruction text for synthetic samples; empty selects a default.
    pub instruction: String,
    pub ner_format: NerAnswerFormat,
    pub id_prefix: String,
    /// Cap on rejection examples kept per category.
    pub max_examples: usize,
    /// Requests issued per round; replies of a round are accepted in order.
    pub wave_size: usize,
}

impl AugmentConfig {
    pub fn new(task: TaskKind, target_new: usize) -> Self {
        Self {
            task,
            target_new,
            budget_multiple: 3,
            temperature: 0.8,
            max_new_tokens: 128,
            stop_sequences: None,
            seed: 0,
            instruction: String::new(),
            ner_format: NerAnswerFormat::EntityList,
            id_prefix: "aug".into(),
            max_examples: 5,
            wave_size: 32,
        }
    }

    pub fn effective_stop_sequences(&self) -> Vec<String> {
        match &self.stop_sequences {
            Some(s) => s.clone(),
            None if self.task == TaskKind::Ner => vec!["\n".into()],
            None => vec![SENTIMENT_CLOSE_TAG.into()],
        }
    }

    pub fn effective_instruction(&self) -> String {
        if !self.instruction.is_empty() {
            return self.instruction.clone();
        }
        match self.task {
            TaskKind::Ner => "Identify the named entities of type person (PER), organization (ORG) or location (LOC) in the sentence. Answer with 'entity name, entity type' items separated by '|'.".into(),
            _ => "What is the sentiment of this financial sentence? Answer with positive, negative or neutral.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionExample {
    pub reason: String,
    pub reply: String,
}

/// Settings that shape acceptance, echoed at the top of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub task: TaskKind,
    pub dedup_criterion: String,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
    pub ner_answer_format: NerAnswerFormat,
    pub reply_budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationBatchReport {
    pub header: ReportHeader,
    pub requested: usize,
    pub replies: usize,
    pub generated: usize,
    pub rejected_parse: usize,
    pub rejected_duplicate: usize,
    pub rejected_validation: usize,
    pub budget_exhausted: bool,
    /// NER seeds skipped before prompting because their sentence was already present.
    pub seeds_skipped_duplicate: usize,
    pub examples: BTreeMap<String, Vec<RejectionExample>>,
}

impl AugmentationBatchReport {
    pub fn accounting_holds(&self) -> bool {
        self.generated + self.rejected_parse + self.rejected_duplicate + self.rejected_validation
            == self.replies
    }

    fn reject(&mut self, category: &str, reason: String, reply: &str, cap: usize) {
        match category {
            "parse" => self.rejected_parse += 1,
            "duplicate" => self.rejected_duplicate += 1,
            _ => self.rejected_validation += 1,
        }
        let bucket = self.examples.entry(category.to_string()).or_default();
        if bucket.len() < cap {
            bucket.push(RejectionExample {
                reason,
                reply: reply.to_string(),
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentationOutcome {
    pub samples: Vec<InstructionSample>,
    pub report: AugmentationBatchReport,
}

/// Deterministic label schedule proportional to the seed label counts
/// (smooth weighted round robin).
struct LabelSchedule {
    labels: Vec<(SentimentLabel, i64)>,
    current: Vec<i64>,
    total: i64,
}

impl LabelSchedule {
    fn new(seeds: &[SentimentSeed]) -> Self {
        let mut counts: BTreeMap<SentimentLabel, i64> = BTreeMap::new();
        for s in seeds {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        let labels: Vec<_> = counts.into_iter().collect();
        let total = labels.iter().map(|(_, n)| n).sum();
        Self {
            current: vec![0; labels.len()],
            labels,
            total,
        }
    }

    fn next(&mut self) -> SentimentLabel {
        for (cur, (_, w)) in self.current.iter_mut().zip(&self.labels) {
            *cur += w;
        }
        let (best, _) = self
            .current
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("at least one label");
        self.current[best] -= self.total;
        self.labels[best].0
    }
}

enum Pending {
    Sentiment(SentimentSeed),
    Ner(NerSeed),
}

/// Generates up to `config.target_new` accepted samples.
///
/// `existing_inputs` holds [`dedup_key`]s of inputs already in the dataset.
/// Stops early with `budget_exhausted` once `budget_multiple * target_new`
/// replies were consumed (or NER seeds ran out).
pub async fn run_augmentation(
    config: &AugmentConfig,
    seeds: &Seeds,
    client: &ModelClient,
    existing_inputs: &HashSet<String>,
) -> Result<AugmentationOutcome, AugmentError> {
    match (config.task, seeds) {
        (TaskKind::Fpb | TaskKind::FiqaSa, Seeds::Sentiment(_)) | (TaskKind::Ner, Seeds::Ner(_)) => {}
        (task, _) => return Err(AugmentError::UnsupportedTask(task)),
    }
    let stops = config.effective_stop_sequences();
    let budget = config.budget_multiple.saturating_mul(config.target_new);
    let mut report = AugmentationBatchReport {
        header: ReportHeader {
            task: config.task,
            dedup_criterion: "case-folded, whitespace-collapsed input text".into(),
            temperature: config.temperature,
            stop_sequences: stops.clone(),
            ner_answer_format: config.ner_format,
            reply_budget: budget,
            seed: config.seed,
        },
        requested: config.target_new,
        replies: 0,
        generated: 0,
        rejected_parse: 0,
        rejected_duplicate: 0,
        rejected_validation: 0,
        budget_exhausted: false,
        seeds_skipped_duplicate: 0,
        examples: BTreeMap::new(),
    };
    let mut samples = Vec::new();
    if config.target_new == 0 {
        return Ok(AugmentationOutcome { samples, report });
    }
    if seeds.is_empty() {
        return Err(AugmentError::NoSeeds);
    }

    let instruction = config.effective_instruction();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = existing_inputs.clone();

    let (mut schedule, by_label) = match seeds {
        Seeds::Sentiment(s) => {
            let mut by_label: BTreeMap<SentimentLabel, Vec<&SentimentSeed>> = BTreeMap::new();
            for seed in s {
                by_label.entry(seed.label).or_default().push(seed);
            }
            (Some(LabelSchedule::new(s)), by_label)
        }
        Seeds::Ner(_) => (None, BTreeMap::new()),
    };
    let mut ner_queue: Vec<&NerSeed> = match seeds {
        Seeds::Ner(s) => {
            let mut q: Vec<&NerSeed> = s.iter().collect();
            q.shuffle(&mut rng);
            q.reverse();
            q
        }
        Seeds::Sentiment(_) => Vec::new(),
    };

    let cap = config.max_examples;
    while samples.len() < config.target_new {
        let remaining_budget = budget - report.replies;
        if remaining_budget == 0 {
            report.budget_exhausted = true;
            break;
        }
        let wave = (config.target_new - samples.len())
            .min(remaining_budget)
            .min(config.wave_size.max(1));

        let mut pending = Vec::with_capacity(wave);
        let mut requests = Vec::with_capacity(wave);
        while pending.len() < wave {
            let (prompt, item) = if let Some(schedule) = schedule.as_mut() {
                let label = schedule.next();
                let pool = &by_label[&label];
                let seed = (*pool[rng.gen_range(0..pool.len())]).clone();
                (build_sentiment_prompt(&seed), Pending::Sentiment(seed))
            } else {
                let Some(seed) = ner_queue.pop() else { break };
                let key = dedup_key(&seed.sentence);
                if seed.sentence.trim().is_empty() || seen.contains(&key) {
                    report.seeds_skipped_duplicate += 1;
                    continue;
                }
                (build_ner_prompt(seed), Pending::Ner(seed.clone()))
            };
            let mut req = GenerationRequest::new(prompt, config.max_new_tokens)
                .with_temperature(config.temperature)
                .with_stop(stops.iter().cloned());
            req.seed = Some(rng.gen());
            requests.push(req);
            pending.push(item);
        }
        if pending.is_empty() {
            report.budget_exhausted = true;
            break;
        }

        let replies = client.complete_many(&requests).await;
        for (item, reply) in pending.into_iter().zip(replies) {
            let reply = reply?;
            report.replies += 1;
            let (input, answer) = match item {
                Pending::Sentiment(seed) => match parse_sentiment_response(&reply) {
                    Ok(sentence) => (sentence, seed.label.as_str().to_string()),
                    Err(e) => {
                        report.reject("parse", e.to_string(), &reply, cap);
                        continue;
                    }
                },
                Pending::Ner(seed) => match parse_ner_response(&reply, &seed.sentence) {
                    Ok(entities) => {
                        let answer = match config.ner_format {
                            NerAnswerFormat::EntityList => Some(format_entity_list(&entities)),
                            NerAnswerFormat::Bio => format_bio(&seed.sentence, &entities),
                        };
                        match answer {
                            Some(a) => (seed.sentence.clone(), a),
                            None => {
                                report.reject(
                                    "validation",
                                    "entities do not align with sentence tokens".into(),
                                    &reply,
                                    cap,
                                );
                                continue;
                            }
                        }
                    }
                    Err(e @ AugmentError::UnparseableGeneration(_)) => {
                        report.reject("parse", e.to_string(), &reply, cap);
                        continue;
                    }
                    Err(e) => {
                        report.reject("validation", e.to_string(), &reply, cap);
                        continue;
                    }
                },
            };

            let key = dedup_key(&input);
            if seen.contains(&key) {
                report.reject("duplicate", "input already present".into(), &reply, cap);
                continue;
            }
            let sample = InstructionSample {
                task: config.task,
                instruction: instruction.clone(),
                input,
                answer,
                sample_id: format!(
                    "{}-{}-{:06}",
                    config.id_prefix,
                    config.task.as_str(),
                    samples.len() + 1
                ),
                provenance: Provenance::Synthetic,
            };
            if let Err(e) = sample.validate() {
                report.reject("validation", e.to_string(), &reply, cap);
                continue;
            }
            seen.insert(key);
            samples.push(sample);
        }
    }

    report.generated = samples.len();
    debug_assert!(report.accounting_holds());
    Ok(AugmentationOutcome { samples, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentiment_prompt_layout() {
        let seed = SentimentSeed {
            sentence: "Shares of Standard Chartered ( STAN ) rose 1.2 % in the FTSE 100".into(),
            label: SentimentLabel::Positive,
        };
        let p = build_sentiment_prompt(&seed);
        assert!(p.starts_with("Write a sentence with a positive financial sentiment."));
        assert_eq!(
            p,
            "Write a sentence with a positive financial sentiment. Use the format <stc> sentence </stc>. Reuse terms from the example. Example: '<stc> Shares of Standard Chartered ( STAN ) rose 1.2 % in the FTSE 100 </stc>'"
        );
        assert_eq!(p, build_sentiment_prompt(&seed));
        let neutral = SentimentSeed {
            label: SentimentLabel::Neutral,
            ..seed
        };
        assert!(build_sentiment_prompt(&neutral).starts_with("Write a sentence with a neutral "));
    }

    #[test]
    fn sentiment_span_extraction() {
        assert_eq!(
            parse_sentiment_response("<stc> Revenue grew 5 % . </stc>").unwrap(),
            "Revenue grew 5 % ."
        );
        assert_eq!(
            parse_sentiment_response("chatter <stc> A </stc> trailing <stc> B </stc>").unwrap(),
            "A"
        );
        assert_eq!(parse_sentiment_response("<stc> cut by stop ").unwrap(), "cut by stop");
        assert!(matches!(
            parse_sentiment_response("no tags here"),
            Err(AugmentError::UnparseableGeneration(_))
        ));
        assert!(matches!(
            parse_sentiment_response("<stc>   </stc>"),
            Err(AugmentError::EmptySpan)
        ));
        assert!(matches!(
            parse_sentiment_response("<stc> a <stc> b </stc>"),
            Err(AugmentError::UnparseableGeneration(_))
        ));
    }

    #[test]
    fn ner_prompt_layout() {
        let a = build_ner_prompt(&NerSeed {
            sentence: "Goldman Sachs opened in London.".into(),
        });
        let b = build_ner_prompt(&NerSeed {
            sentence: "He said \"Borrower\" and 'Bank'.".into(),
        });
        assert!(a.contains("Bank, ORG | Borrower, PER | New York, LOC"));
        assert!(a.starts_with("Identify the named entities that represent a person ('PER')"));
        let cut_a = a.rfind(NER_SENTENCE_MARKER).unwrap();
        let cut_b = b.rfind(NER_SENTENCE_MARKER).unwrap();
        assert_eq!(a[..cut_a], b[..cut_b]);
        assert_ne!(a[cut_a..], b[cut_b..]);
        assert!(b.contains("He said \"Borrower\" and 'Bank'."));
        assert!(a.ends_with("; Entities:"));
    }

    #[test]
    fn ner_reply_parsing() {
        let sentence = "Goldman Sachs hired staff in London.";
        assert_eq!(
            parse_ner_response("'Goldman Sachs, ORG | London, LOC'", sentence).unwrap(),
            vec![
                EntityTag::new("Goldman Sachs", EntityType::Org),
                EntityTag::new("London", EntityType::Loc)
            ]
        );
        assert!(matches!(
            parse_ner_response("'Goldman, BANK'", sentence),
            Err(AugmentError::UnknownEntityType(t)) if t == "BANK"
        ));
        assert!(matches!(
            parse_ner_response("'Paris, LOC'", sentence),
            Err(AugmentError::NoValidEntities)
        ));
        assert!(matches!(
            parse_ner_response("garbage", sentence),
            Err(AugmentError::UnparseableGeneration(_))
        ));
        assert_eq!(
            parse_ner_response(" London, LOC | London, LOC | Paris, LOC\nmore", sentence).unwrap(),
            vec![EntityTag::new("London", EntityType::Loc)]
        );
        assert_eq!(
            parse_ner_response("Entities: 'London, LOC'", sentence).unwrap().len(),
            1
        );
    }

    #[test]
    fn bio_serialization() {
        let e = vec![
            EntityTag::new("New York", EntityType::Loc),
            EntityTag::new("Bank", EntityType::Org),
        ];
        assert_eq!(
            format_bio("Bank in New York", &e).unwrap(),
            "Bank B-ORG\nin O\nNew B-LOC\nYork I-LOC"
        );
        assert!(format_bio("Banking", &[EntityTag::new("Bank", EntityType::Org)]).is_none());
        assert_eq!(format_entity_list(&e), "New York, LOC | Bank, ORG");
    }

    #[test]
    fn dedup_key_normalizes() {
        assert_eq!(dedup_key("  Profits   ROSE\n"), dedup_key("profits rose"));
    }

    #[test]
    fn label_schedule_is_proportional() {
        let seeds: Vec<SentimentSeed> = [(SentimentLabel::Positive, 6), (SentimentLabel::Negative, 3), (SentimentLabel::Neutral, 1)]
            .iter()
            .flat_map(|&(l, n)| {
                (0..n).map(move |i| SentimentSeed {
                    sentence: format!("{l} {i}"),
                    label: l,
                })
            })
            .collect();
        let mut sched = LabelSchedule::new(&seeds);
        let mut counts = BTreeMap::new();
        for _ in 0..100 {
            *counts.entry(sched.next()).or_insert(0) += 1;
        }
        assert_eq!(counts[&SentimentLabel::Positive], 60);
        assert_eq!(counts[&SentimentLabel::Negative], 30);
        assert_eq!(counts[&SentimentLabel::Neutral], 10);
    }
}
