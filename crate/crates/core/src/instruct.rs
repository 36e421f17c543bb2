//! Instruction dataset: the three-header text template, one-instruction-per-input
//! down-sampling and per-task accounting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INSTRUCTION_HEADER: &str = "### Instruction:";
pub const INPUT_HEADER: &str = "### Input:";
pub const ANSWER_HEADER: &str = "### Answer:";

/// Subsets dropped entirely when building the dataset.
pub const DEFAULT_EXCLUDED_TASKS: &[&str] = &["bigdata22", "acl18", "cikm18"];

#[derive(Debug, Error)]
pub enum InstructError {
    #[error("field `{field}` contains the template marker `{marker}`")]
    TemplateCollision {
        field: &'static str,
        marker: &'static str,
    },
    #[error("answer must not be empty")]
    EmptyAnswer,
    #[error("malformed instruction text: {0}")]
    MalformedInstruction(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("{path}:{line}: {message}")]
    BadRecord {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Fpb,
    FiqaSa,
    Ner,
    Headline,
    Finqa,
    Convfinqa,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Fpb,
        TaskKind::FiqaSa,
        TaskKind::Ner,
        TaskKind::Headline,
        TaskKind::Finqa,
        TaskKind::Convfinqa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Fpb => "fpb",
            TaskKind::FiqaSa => "fiqa_sa",
            TaskKind::Ner => "ner",
            TaskKind::Headline => "headline",
            TaskKind::Finqa => "finqa",
            TaskKind::Convfinqa => "convfinqa",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TaskKind::Fpb => "FPB",
            TaskKind::FiqaSa => "FiQA-SA",
            TaskKind::Ner => "NER",
            TaskKind::Headline => "Headline",
            TaskKind::Finqa => "FinQA",
            TaskKind::Convfinqa => "ConvFinQA",
        }
    }
}

fn normalize_task_name(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for TaskKind {
    type Err = InstructError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize_task_name(s).as_str() {
            "fpb" => Ok(TaskKind::Fpb),
            "fiqasa" | "fiqa" => Ok(TaskKind::FiqaSa),
            "ner" => Ok(TaskKind::Ner),
            "headline" | "headlines" => Ok(TaskKind::Headline),
            "finqa" => Ok(TaskKind::Finqa),
            "convfinqa" => Ok(TaskKind::Convfinqa),
            _ => Err(InstructError::UnknownTask(s.to_string())),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    Original,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub task: TaskKind,
    pub instruction: String,
    pub input: String,
    pub answer: String,
    #[serde(rename = "id")]
    pub sample_id: String,
    #[serde(default)]
    pub provenance: Provenance,
}

/// The three text slots of the template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateFields {
    pub instruction: String,
    pub input: String,
    pub answer: String,
}

fn check_markers(field: &'static str, value: &str) -> Result<(), InstructError> {
    for marker in [INSTRUCTION_HEADER, INPUT_HEADER, ANSWER_HEADER] {
        if value.contains(marker) {
            return Err(InstructError::TemplateCollision { field, marker });
        }
    }
    Ok(())
}

impl InstructionSample {
    pub fn validate(&self) -> Result<(), InstructError> {
        check_markers("instruction", &self.instruction)?;
        check_markers("input", &self.input)?;
        check_markers("answer", &self.answer)?;
        if self.answer.trim().is_empty() {
            return Err(InstructError::EmptyAnswer);
        }
        Ok(())
    }

    pub fn fields(&self) -> TemplateFields {
        TemplateFields {
            instruction: self.instruction.clone(),
            input: self.input.clone(),
            answer: self.answer.clone(),
        }
    }
}

/// Renders a sample as
/// `### Instruction: ..\n### Input: ..\n### Answer: ..`.
pub fn render(sample: &InstructionSample) -> Result<String, InstructError> {
    sample.validate()?;
    Ok(format!(
        "{INSTRUCTION_HEADER} {}\n{INPUT_HEADER} {}\n{ANSWER_HEADER} {}",
        sample.instruction, sample.input, sample.answer
    ))
}

/// Template with the answer slot left open; the model continues after the
/// trailing space.
pub fn render_prompt(instruction: &str, input: &str) -> Result<String, InstructError> {
    check_markers("instruction", instruction)?;
    check_markers("input", input)?;
    Ok(format!(
        "{INSTRUCTION_HEADER} {instruction}\n{INPUT_HEADER} {input}\n{ANSWER_HEADER} "
    ))
}

fn strip_one_space(s: &str) -> &str {
    s.strip_prefix(' ').unwrap_or(s)
}

pub fn parse(text: &str) -> Result<TemplateFields, InstructError> {
    let malformed = |m: &str| InstructError::MalformedInstruction(m.to_string());
    for marker in [INSTRUCTION_HEADER, INPUT_HEADER, ANSWER_HEADER] {
        match text.matches(marker).count() {
            0 => return Err(malformed(&format!("missing `{marker}`"))),
            1 => {}
            _ => return Err(malformed(&format!("`{marker}` appears more than once"))),
        }
    }
    let rest = text
        .strip_prefix(INSTRUCTION_HEADER)
        .ok_or_else(|| malformed("text must start with the instruction header"))?;
    let input_sep = format!("\n{INPUT_HEADER}");
    let answer_sep = format!("\n{ANSWER_HEADER}");
    let (instruction, rest) = rest
        .split_once(&input_sep)
        .ok_or_else(|| malformed("input header must follow the instruction on a new line"))?;
    let (input, answer) = rest
        .split_once(&answer_sep)
        .ok_or_else(|| malformed("answer header must follow the input on a new line"))?;
    Ok(TemplateFields {
        instruction: strip_one_space(instruction).to_string(),
        input: strip_one_space(input).to_string(),
        answer: strip_one_space(answer).to_string(),
    })
}

/// Keeps the first sample of every (task, input, answer) group.
pub fn downsample(samples: Vec<InstructionSample>) -> Vec<InstructionSample> {
    let mut seen: HashSet<(TaskKind, String, String)> = HashSet::with_capacity(samples.len());
    samples
        .into_iter()
        .filter(|s| seen.insert((s.task, s.input.clone(), s.answer.clone())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_task: BTreeMap<TaskKind, usize>,
    pub total: usize,
}

impl Default for DatasetStats {
    fn default() -> Self {
        Self {
            per_task: TaskKind::ALL.iter().map(|&t| (t, 0)).collect(),
            total: 0,
        }
    }
}

impl DatasetStats {
    pub fn count(&self, task: TaskKind) -> usize {
        self.per_task.get(&task).copied().unwrap_or(0)
    }

    pub fn merge(&self, other: &DatasetStats) -> DatasetStats {
        let mut out = self.clone();
        for (&task, &n) in &other.per_task {
            *out.per_task.entry(task).or_insert(0) += n;
        }
        out.total += other.total;
        out
    }

    /// Per-task table; excluded subsets are listed with a zero count.
    pub fn to_table(&self, excluded: &[&str]) -> String {
        let mut out = format!("{:<12} {:>10}\n", "Subset", "Samples");
        for task in TaskKind::ALL {
            out.push_str(&format!(
                "{:<12} {:>10}\n",
                task.display_name(),
                self.count(task)
            ));
        }
        for name in excluded {
            out.push_str(&format!("{:<12} {:>10}\n", name, 0));
        }
        out.push_str(&format!("{:<12} {:>10}\n", "TOTAL", self.total));
        out
    }
}

pub fn stats(samples: &[InstructionSample]) -> DatasetStats {
    let mut st = DatasetStats::default();
    for s in samples {
        *st.per_task.entry(s.task).or_insert(0) += 1;
    }
    st.total = samples.len();
    st
}

/// Task names removed at load time.
#[derive(Debug, Clone)]
pub struct TaskFilter {
    excluded: HashSet<String>,
}

impl Default for TaskFilter {
    fn default() -> Self {
        Self::new(DEFAULT_EXCLUDED_TASKS.iter().copied())
    }
}

impl TaskFilter {
    pub fn new<'a>(excluded: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            excluded: excluded.into_iter().map(normalize_task_name).collect(),
        }
    }

    pub fn is_excluded(&self, task_name: &str) -> bool {
        self.excluded.contains(&normalize_task_name(task_name))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub excluded: BTreeMap<String, usize>,
}

#[derive(Deserialize)]
struct RawRecord {
    task: String,
    #[serde(default)]
    instruction: String,
    input: String,
    answer: String,
    id: String,
    #[serde(default)]
    provenance: Provenance,
}

/// Reads a dataset JSON-lines file, dropping records of excluded tasks.
pub fn read_dataset(
    path: impl AsRef<Path>,
    filter: &TaskFilter,
) -> Result<(Vec<InstructionSample>, LoadReport), InstructError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    let mut report = LoadReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| InstructError::BadRecord {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if filter.is_excluded(&raw.task) {
            *report.excluded.entry(raw.task).or_insert(0) += 1;
            continue;
        }
        let task = raw.task.parse().map_err(|e: InstructError| bad(e.to_string()))?;
        let sample = InstructionSample {
            task,
            instruction: raw.instruction,
            input: raw.input,
            answer: raw.answer,
            sample_id: raw.id,
            provenance: raw.provenance,
        };
        sample.validate().map_err(|e| bad(e.to_string()))?;
        samples.push(sample);
    }
    report.loaded = samples.len();
    Ok((samples, report))
}

pub fn write_dataset<W: Write>(samples: &[InstructionSample], writer: W) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Serialize)]
struct RenderedRecord<'a> {
    id: &'a str,
    task: TaskKind,
    text: String,
}

/// One `{"id", "task", "text"}` record per sample, `text` being the rendered template.
pub fn write_rendered<W: Write>(samples: &[InstructionSample], writer: W) -> Result<(), InstructError> {
    let mut w = BufWriter::new(writer);
    for s in samples {
        let rec = RenderedRecord {
            id: &s.sample_id,
            task: s.task,
            text: render(s)?,
        };
        serde_json::to_writer(&mut w, &rec).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Replaces instruction text per task (tasks absent from the map keep theirs).
pub fn rewrite_instructions(
    samples: &mut [InstructionSample],
    instructions: &HashMap<TaskKind, String>,
) -> Result<(), InstructError> {
    for s in samples.iter_mut() {
        if let Some(instr) = instructions.get(&s.task) {
            check_markers("instruction", instr)?;
            s.instruction = instr.clone();
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(instruction: &str, input: &str, answer: &str) -> InstructionSample {
        InstructionSample {
            task: TaskKind::Fpb,
            instruction: instruction.into(),
            input: input.into(),
            answer: answer.into(),
            sample_id: "fpb-1".into(),
            provenance: Provenance::Original,
        }
    }

    #[test]
    fn render_layout() {
        let s = sample("Classify the sentiment.", "Profits rose.", "positive");
        assert_eq!(
            render(&s).unwrap(),
            "### Instruction: Classify the sentiment.\n### Input: Profits rose.\n### Answer: positive"
        );
        assert_eq!(parse(&render(&s).unwrap()).unwrap(), s.fields());
    }

    #[test]
    fn prompt_is_render_without_answer() {
        let s = sample("Classify.", "Profits rose.", "positive");
        let prompt = render_prompt(&s.instruction, &s.input).unwrap();
        assert_eq!(format!("{prompt}{}", s.answer), render(&s).unwrap());
    }

    #[test]
    fn collision_rejected() {
        let s = sample("Classify.", "Profits ### Answer: rose.", "positive");
        assert!(matches!(
            render(&s),
            Err(InstructError::TemplateCollision { field: "input", .. })
        ));
        assert!(matches!(
            render(&sample("a", "b", " ")),
            Err(InstructError::EmptyAnswer)
        ));
    }

    #[test]
    fn malformed_texts() {
        let missing = "### Instruction: a\n### Answer: c";
        assert!(matches!(
            parse(missing),
            Err(InstructError::MalformedInstruction(_))
        ));
        let reordered = "### Instruction: a\n### Answer: c\n### Input: b";
        assert!(matches!(
            parse(reordered),
            Err(InstructError::MalformedInstruction(_))
        ));
        let leading = "### Input: b\n### Instruction: a\n### Answer: c";
        assert!(parse(leading).is_err());
    }

    #[test]
    fn downsample_ten_to_one() {
        let samples: Vec<_> = (0..10)
            .map(|i| sample(&format!("instruction {i}"), "same input", "neutral"))
            .collect();
        let out = downsample(samples);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].instruction, "instruction 0");
        assert!(downsample(Vec::new()).is_empty());
    }

    #[test]
    fn same_input_in_other_task_is_kept() {
        let mut a = sample("i", "x", "positive");
        let b = a.clone();
        a.task = TaskKind::FiqaSa;
        assert_eq!(downsample(vec![a, b]).len(), 2);
    }

    #[test]
    fn stats_of_empty_dataset() {
        let st = stats(&[]);
        assert_eq!(st.total, 0);
        assert!(st.per_task.values().all(|&n| n == 0));
        assert_eq!(st.per_task.len(), TaskKind::ALL.len());
    }

    #[test]
    fn task_names_parse_leniently() {
        assert_eq!("FIQA-SA".parse::<TaskKind>().unwrap(), TaskKind::FiqaSa);
        assert_eq!("headlines".parse::<TaskKind>().unwrap(), TaskKind::Headline);
        assert!("cikm18".parse::<TaskKind>().is_err());
        assert!(TaskFilter::default().is_excluded("BigData22"));
    }
}
