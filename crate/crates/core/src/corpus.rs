//! Document dataset for further pre-training.
//!
//! Documents of one source are encoded, joined with a single end-of-text id,
//! cut into fixed-length blocks (the trailing partial block is dropped),
//! down-sampled to a token budget and finally shuffled together with the
//! blocks of every other source.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tokenization::{TokenId, Tokenizer};

/// Context length of one pre-training example.
pub const DEFAULT_BLOCK_LEN: usize = 2048;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no documents found for source `{source_tag}` (pattern `{pattern}`)")]
    NoDocumentsFound { source_tag: String, pattern: String },
    #[error("invalid glob pattern `{pattern}`: {message}")]
    BadPattern { pattern: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("duplicate document id `{doc_id}` in source `{source_tag}`")]
    DuplicateDocId { source_tag: String, doc_id: String },
    #[error("block length must be at least 2, got {0}")]
    InvalidBlockLen(usize),
    #[error("source `{source_tag}` has {available} tokens in blocks, budget asks for {target}")]
    InsufficientData {
        source_tag: String,
        available: usize,
        target: usize,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("malformed block file: {0}")]
    MalformedBlocks(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub text: String,
    pub source_tag: String,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenBlock {
    #[serde(rename = "source")]
    pub source_tag: String,
    #[serde(rename = "index")]
    pub block_index: usize,
    pub ids: Vec<TokenId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub files: usize,
    pub documents: usize,
    /// JSON-lines records that failed to parse or lacked a `text` field.
    pub skipped_malformed: usize,
    /// Documents that were empty after trimming whitespace.
    pub skipped_empty: usize,
}

#[derive(Debug, Clone)]
pub struct IngestedSource {
    pub documents: Vec<RawDocument>,
    pub report: IngestReport,
}

#[derive(Deserialize)]
struct JsonlRecord {
    text: String,
    #[serde(default)]
    id: Option<serde_json::Value>,
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "ndjson")
    )
}

/// Reads every file matched by `pattern` (a directory means all files in it).
///
/// Files are visited in lexicographic path order. Plain-text files contribute
/// one document each; `.jsonl`/`.ndjson` files contribute one per record.
pub fn ingest_source(pattern: &str, source_tag: &str) -> Result<IngestedSource, CorpusError> {
    let effective = if Path::new(pattern).is_dir() {
        format!("{}/*", pattern.trim_end_matches('/'))
    } else {
        pattern.to_string()
    };
    let paths = glob::glob(&effective).map_err(|e| CorpusError::BadPattern {
        pattern: pattern.to_string(),
        message: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = paths
        .filter_map(Result::ok)
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let mut report = IngestReport {
        files: files.len(),
        ..IngestReport::default()
    };
    let mut documents = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut push = |doc: RawDocument, report: &mut IngestReport| -> Result<(), CorpusError> {
        if doc.text.trim().is_empty() {
            report.skipped_empty += 1;
            return Ok(());
        }
        if !seen_ids.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId {
                source_tag: source_tag.to_string(),
                doc_id: doc.doc_id,
            });
        }
        documents.push(doc);
        Ok(())
    };

    for path in &files {
        let io_err = |source| CorpusError::Io {
            path: path.clone(),
            source,
        };
        if is_jsonl(path) {
            let reader = BufReader::new(File::open(path).map_err(io_err)?);
            for (line_no, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<JsonlRecord>(&line) {
                    Ok(rec) => {
                        let doc_id = match rec.id {
                            Some(serde_json::Value::String(s)) => s,
                            Some(other) => other.to_string(),
                            None => format!("{}:{}", path.display(), line_no + 1),
                        };
                        push(
                            RawDocument {
                                text: rec.text,
                                source_tag: source_tag.to_string(),
                                doc_id,
                            },
                            &mut report,
                        )?;
                    }
                    Err(e) => {
                        log::warn!("{}:{}: skipping record: {e}", path.display(), line_no + 1);
                        report.skipped_malformed += 1;
                    }
                }
            }
        } else {
            let mut text = String::new();
            File::open(path)
                .and_then(|mut f| f.read_to_string(&mut text))
                .map_err(io_err)?;
            push(
                RawDocument {
                    text,
                    source_tag: source_tag.to_string(),
                    doc_id: path.display().to_string(),
                },
                &mut report,
            )?;
        }
    }

    report.documents = documents.len();
    if documents.is_empty() {
        return Err(CorpusError::NoDocumentsFound {
            source_tag: source_tag.to_string(),
            pattern: pattern.to_string(),
        });
    }
    Ok(IngestedSource { documents, report })
}

/// Output of packing one source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSource {
    pub source_tag: String,
    pub block_len: usize,
    pub blocks: Vec<TokenBlock>,
    pub num_docs: usize,
    /// Sum of the encoded lengths of all documents (separators excluded).
    pub doc_tokens: usize,
    pub separators: usize,
    /// Tail of the concatenation shorter than one block, not emitted.
    pub dropped_remainder: usize,
}

impl PackedSource {
    pub fn emitted_tokens(&self) -> usize {
        self.blocks.len() * self.block_len
    }
}

/// Concatenates documents with one end-of-text id between neighbours and
/// slices the stream into non-overlapping blocks of `block_len`.
pub fn pack_source<I>(
    docs: I,
    tokenizer: &Tokenizer,
    source_tag: &str,
    block_len: usize,
) -> Result<PackedSource, CorpusError>
where
    I: IntoIterator<Item = RawDocument>,
{
    pack_encoded(
        docs.into_iter().map(|d| tokenizer.encode(&d.text)),
        tokenizer.end_of_text_id(),
        source_tag,
        block_len,
    )
}

/// Packing over already-encoded documents.
pub fn pack_encoded<I>(
    encoded_docs: I,
    separator: TokenId,
    source_tag: &str,
    block_len: usize,
) -> Result<PackedSource, CorpusError>
where
    I: IntoIterator<Item = Vec<TokenId>>,
{
    if block_len < 2 {
        return Err(CorpusError::InvalidBlockLen(block_len));
    }
    let mut blocks = Vec::new();
    let mut buffer: Vec<TokenId> = Vec::with_capacity(block_len * 2);
    let mut num_docs = 0;
    let mut doc_tokens = 0;

    for ids in encoded_docs {
        if num_docs > 0 {
            buffer.push(separator);
        }
        num_docs += 1;
        doc_tokens += ids.len();
        buffer.extend_from_slice(&ids);

        let full = buffer.len() / block_len;
        if full > 0 {
            for chunk in buffer[..full * block_len].chunks_exact(block_len) {
                blocks.push(TokenBlock {
                    source_tag: source_tag.to_string(),
                    block_index: blocks.len(),
                    ids: chunk.to_vec(),
                });
            }
            buffer.drain(..full * block_len);
        }
    }

    Ok(PackedSource {
        source_tag: source_tag.to_string(),
        block_len,
        blocks,
        num_docs,
        doc_tokens,
        separators: num_docs.saturating_sub(1),
        dropped_remainder: buffer.len(),
    })
}

/// Seeded shuffle, then keep the first `target_tokens / block_len` blocks.
pub fn sample_to_budget(
    mut blocks: Vec<TokenBlock>,
    block_len: usize,
    target_tokens: usize,
    seed: u64,
) -> Result<Vec<TokenBlock>, CorpusError> {
    if block_len < 2 {
        return Err(CorpusError::InvalidBlockLen(block_len));
    }
    let available = blocks.len() * block_len;
    if target_tokens > available {
        return Err(CorpusError::InsufficientData {
            source_tag: blocks
                .first()
                .map(|b| b.source_tag.clone())
                .unwrap_or_default(),
            available,
            target: target_tokens,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    blocks.shuffle(&mut rng);
    blocks.truncate(target_tokens / block_len);
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub tag: String,
    pub glob: String,
    pub target_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub block_len: usize,
    pub shuffle_seed: u64,
    pub sources: Vec<SourceEntry>,
}

impl MixtureManifest {
    /// Loads a manifest; relative globs are resolved against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: Self = serde_json::from_str(&raw)
            .map_err(|e| CorpusError::InvalidManifest(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for src in &mut manifest.sources {
            if Path::new(&src.glob).is_relative() {
                src.glob = base.join(&src.glob).display().to_string();
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.block_len < 2 {
            return Err(CorpusError::InvalidBlockLen(self.block_len));
        }
        if self.sources.is_empty() {
            return Err(CorpusError::InvalidManifest("no sources".into()));
        }
        let mut tags = HashSet::new();
        for src in &self.sources {
            if src.target_tokens == 0 {
                return Err(CorpusError::InvalidManifest(format!(
                    "source `{}` has a zero token budget",
                    src.tag
                )));
            }
            if !tags.insert(src.tag.as_str()) {
                return Err(CorpusError::InvalidManifest(format!(
                    "duplicate source tag `{}`",
                    src.tag
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub tag: String,
    pub target_tokens: usize,
    pub documents: usize,
    pub skipped_malformed: usize,
    pub skipped_empty: usize,
    pub available_blocks: usize,
    pub dropped_remainder: usize,
    pub blocks: usize,
    pub tokens: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub block_len: usize,
    pub shuffle_seed: u64,
    pub sources: Vec<SourceReport>,
    pub total_blocks: usize,
    pub total_tokens: usize,
}

impl MixtureReport {
    fn from_counts(manifest: &MixtureManifest, mut sources: Vec<SourceReport>) -> Self {
        let total_blocks: usize = sources.iter().map(|s| s.blocks).sum();
        let total_tokens = total_blocks * manifest.block_len;
        for s in &mut sources {
            s.percent = if total_blocks == 0 {
                0.0
            } else {
                100.0 * s.blocks as f64 / total_blocks as f64
            };
        }
        Self {
            block_len: manifest.block_len,
            shuffle_seed: manifest.shuffle_seed,
            sources,
            total_blocks,
            total_tokens,
        }
    }

    /// Table-1 style summary: subset, tokens, percentage.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>12} {:>7}\n", "Subset", "# Tokens", "%");
        for s in &self.sources {
            out.push_str(&format!("{:<12} {:>12} {:>7.1}\n", s.tag, s.tokens, s.percent));
        }
        out.push_str(&format!("{:<12} {:>12} {:>7.1}\n", "Total", self.total_tokens, 100.0));
        out
    }
}

/// Per-source sampling seed derived from the manifest seed and the tag.
pub fn source_seed(shuffle_seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(shuffle_seed.to_le_bytes());
    h.update(tag.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Packs, budgets and globally shuffles every source of the manifest.
pub fn build_mixture(
    manifest: &MixtureManifest,
    tokenizer: &Tokenizer,
) -> Result<(Vec<TokenBlock>, MixtureReport), CorpusError> {
    manifest.validate()?;

    let per_source: Vec<Result<(Vec<TokenBlock>, SourceReport), CorpusError>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = manifest
                .sources
                .iter()
                .map(|src| {
                    scope.spawn(move || {
                        let ingested = ingest_source(&src.glob, &src.tag)?;
                        let packed =
                            pack_source(ingested.documents, tokenizer, &src.tag, manifest.block_len)?;
                        let available_blocks = packed.blocks.len();
                        let dropped_remainder = packed.dropped_remainder;
                        let selected = sample_to_budget(
                            packed.blocks,
                            manifest.block_len,
                            src.target_tokens,
                            source_seed(manifest.shuffle_seed, &src.tag),
                        )
                        .map_err(|e| match e {
                            CorpusError::InsufficientData {
                                available, target, ..
                            } => CorpusError::InsufficientData {
                                source_tag: src.tag.clone(),
                                available,
                                target,
                            },
                            other => other,
                        })?;
                        let report = SourceReport {
                            tag: src.tag.clone(),
                            target_tokens: src.target_tokens,
                            documents: ingested.report.documents,
                            skipped_malformed: ingested.report.skipped_malformed,
                            skipped_empty: ingested.report.skipped_empty,
                            available_blocks,
                            dropped_remainder,
                            blocks: selected.len(),
                            tokens: selected.len() * manifest.block_len,
                            percent: 0.0,
                        };
                        Ok((selected, report))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("packing thread panicked"))
                .collect()
        });

    let mut all_blocks = Vec::new();
    let mut reports = Vec::with_capacity(per_source.len());
    for result in per_source {
        let (blocks, report) = result?;
        all_blocks.extend(blocks);
        reports.push(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(manifest.shuffle_seed);
    all_blocks.shuffle(&mut rng);

    Ok((all_blocks, MixtureReport::from_counts(manifest, reports)))
}

/// Count of blocks per source tag.
pub fn blocks_per_source(blocks: &[TokenBlock]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for b in blocks {
        *counts.entry(b.source_tag.as_str()).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockFormat {
    JsonLines,
    /// Per block: little-endian u32 length followed by that many u32 ids.
    Binary,
}

pub fn write_blocks<W: Write>(
    blocks: &[TokenBlock],
    format: BlockFormat,
    writer: W,
) -> io::Result<()> {
    let mut w = BufWriter::new(writer);
    match format {
        BlockFormat::JsonLines => {
            for b in blocks {
                serde_json::to_writer(&mut w, b)?;
                w.write_all(b"\n")?;
            }
        }
        BlockFormat::Binary => {
            for b in blocks {
                let len = u32::try_from(b.ids.len())
                    .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "block too long"))?;
                w.write_all(&len.to_le_bytes())?;
                for id in &b.ids {
                    w.write_all(&id.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()
}

pub fn read_blocks_jsonl<R: Read>(reader: R) -> Result<Vec<TokenBlock>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::MalformedBlocks(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CorpusError::MalformedBlocks(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Reads the binary format back into id lists.
pub fn read_blocks_binary(bytes: &[u8]) -> Result<Vec<Vec<TokenId>>, CorpusError> {
    let mut out = Vec::new();
    let mut words = bytes
        .chunks(4)
        .map(|c| <[u8; 4]>::try_from(c).map(u32::from_le_bytes));
    while let Some(len) = words.next() {
        let len = len.map_err(|_| CorpusError::MalformedBlocks("truncated length".into()))?;
        let ids = (0..len)
            .map(|_| match words.next() {
                Some(Ok(id)) => Ok(id),
                _ => Err(CorpusError::MalformedBlocks("truncated block".into())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ids);
    }
    Ok(out)
}
