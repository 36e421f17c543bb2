//! Byte-level BPE tokenizer loaded from a standard `tokenizer.json` definition.
//!
//! Only inference is supported: the vocabulary and merge table are read from
//! disk and applied as-is. Text is first split on added/special tokens, then
//! pre-tokenized with the GPT-2 byte-level pattern, mapped to the byte-level
//! alphabet and merged by rank.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use fancy_regex::Regex;
use serde::Deserialize;
use thiserror::Error;

pub type TokenId = u32;

/// Surface strings recognised as the end-of-text separator, in priority order.
pub const END_OF_TEXT_SURFACES: &[&str] = &[
    "<|endoftext|>",
    "<endoftext>",
    "<|end_of_text|>",
    "</s>",
    "<eos>",
];

/// Surface strings recognised as the padding token, in priority order.
pub const PAD_SURFACES: &[&str] = &["<|padding|>", "<pad>", "<|pad|>", "[PAD]"];

const PRETOKENIZE_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read tokenizer definition {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed tokenizer definition: {0}")]
    Malformed(String),
    #[error("tokenizer definition has no `{0}` special token")]
    MissingSpecialToken(&'static str),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenIdOutOfRange { id: TokenId, vocab_size: usize },
}

/// Ids of the special tokens the pipeline relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub end_of_text: TokenId,
    pub pad: Option<TokenId>,
}

/// Token ids tagged with the corpus they came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub source_tag: String,
}

#[derive(Deserialize)]
struct DefinitionFile {
    #[serde(default)]
    added_tokens: Vec<AddedTokenDef>,
    model: ModelDef,
}

#[derive(Deserialize)]
struct AddedTokenDef {
    id: TokenId,
    content: String,
    #[serde(default)]
    special: bool,
}

#[derive(Deserialize)]
struct ModelDef {
    #[serde(rename = "type", default)]
    kind: Option<String>,
    vocab: HashMap<String, TokenId>,
    #[serde(default)]
    merges: Vec<MergeDef>,
    #[serde(default)]
    unk_token: Option<String>,
}

/// Older definitions store merges as `"a b"`, newer ones as `["a", "b"]`.
#[derive(Deserialize)]
#[serde(untagged)]
enum MergeDef {
    Joined(String),
    Pair(String, String),
}

#[derive(Debug, Clone)]
struct AddedToken {
    id: TokenId,
    content: String,
    special: bool,
}

/// Immutable after load; share behind an `Arc` for concurrent readers.
#[derive(Debug)]
pub struct Tokenizer {
    vocab: HashMap<String, TokenId>,
    id_to_token: Vec<Option<String>>,
    merge_ranks: HashMap<(String, String), usize>,
    /// Sorted longest-first so the splitter prefers the longest match.
    added: Vec<AddedToken>,
    added_by_id: HashMap<TokenId, usize>,
    unk: Option<TokenId>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    pretokenizer: Regex,
    special: SpecialTokens,
    source: PathBuf,
}

/// GPT-2 reversible byte → printable-char mapping.
fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        table[b as usize] = if printable {
            char::from(b)
        } else {
            let c = char::from_u32(256 + extra).expect("valid code point");
            extra += 1;
            c
        };
    }
    table
}

/// Loads a tokenizer definition, resolving `end_of_text` and `pad` from the
/// built-in surface lists.
pub fn load_tokenizer(path: impl AsRef<Path>) -> Result<Tokenizer, TokenizerError> {
    Tokenizer::from_file(path)
}

impl Tokenizer {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&raw, path)
    }

    pub fn from_json_str(raw: &str, source: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let def: DefinitionFile =
            serde_json::from_str(raw).map_err(|e| TokenizerError::Malformed(e.to_string()))?;
        if let Some(kind) = def.model.kind.as_deref() {
            if kind != "BPE" {
                return Err(TokenizerError::Malformed(format!(
                    "unsupported model type `{kind}`, expected BPE"
                )));
            }
        }
        if def.model.vocab.is_empty() {
            return Err(TokenizerError::Malformed("empty vocabulary".into()));
        }

        let mut vocab = def.model.vocab;
        for tok in &def.added_tokens {
            match vocab.get(&tok.content) {
                Some(&id) if id != tok.id => {
                    return Err(TokenizerError::Malformed(format!(
                        "added token `{}` has id {} but vocabulary maps it to {id}",
                        tok.content, tok.id
                    )))
                }
                _ => {
                    vocab.insert(tok.content.clone(), tok.id);
                }
            }
        }

        let max_id = vocab.values().copied().max().unwrap_or(0) as usize;
        let mut id_to_token: Vec<Option<String>> = vec![None; max_id + 1];
        for (token, &id) in &vocab {
            let slot = &mut id_to_token[id as usize];
            if let Some(prev) = slot {
                return Err(TokenizerError::Malformed(format!(
                    "id {id} assigned to both `{prev}` and `{token}`"
                )));
            }
            *slot = Some(token.clone());
        }

        let mut merge_ranks = HashMap::with_capacity(def.model.merges.len());
        for (rank, merge) in def.model.merges.into_iter().enumerate() {
            let (a, b) = match merge {
                MergeDef::Pair(a, b) => (a, b),
                MergeDef::Joined(s) => {
                    let mut parts = s.splitn(2, ' ');
                    match (parts.next(), parts.next()) {
                        (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                            (a.to_string(), b.to_string())
                        }
                        _ => {
                            return Err(TokenizerError::Malformed(format!(
                                "merge rule `{s}` is not a space-separated pair"
                            )))
                        }
                    }
                }
            };
            let merged = format!("{a}{b}");
            if !vocab.contains_key(&merged) {
                return Err(TokenizerError::Malformed(format!(
                    "merge `{a} {b}` produces `{merged}` which is not in the vocabulary"
                )));
            }
            merge_ranks.entry((a, b)).or_insert(rank);
        }

        let mut added: Vec<AddedToken> = def
            .added_tokens
            .into_iter()
            .filter(|t| !t.content.is_empty())
            .map(|t| AddedToken {
                id: t.id,
                content: t.content,
                special: t.special,
            })
            .collect();
        added.sort_by(|a, b| {
            b.content
                .len()
                .cmp(&a.content.len())
                .then_with(|| a.content.cmp(&b.content))
        });
        let added_by_id = added
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id, i))
            .collect::<HashMap<_, _>>();

        let unk = match def.model.unk_token {
            Some(name) => Some(*vocab.get(&name).ok_or_else(|| {
                TokenizerError::Malformed(format!("unk token `{name}` not in vocabulary"))
            })?),
            None => None,
        };

        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect::<HashMap<_, _>>();
        if unk.is_none() {
            if let Some(missing) = byte_encoder
                .iter()
                .find(|c| !vocab.contains_key(&c.to_string()))
            {
                return Err(TokenizerError::Malformed(format!(
                    "byte symbol `{missing}` missing from vocabulary and no unk token defined"
                )));
            }
        }

        let lookup = |surfaces: &[&str]| {
            surfaces
                .iter()
                .find_map(|s| added.iter().find(|t| t.content == *s).map(|t| t.id))
        };
        let end_of_text =
            lookup(END_OF_TEXT_SURFACES).ok_or(TokenizerError::MissingSpecialToken("end_of_text"))?;
        let pad = lookup(PAD_SURFACES);

        let pretokenizer =
            Regex::new(PRETOKENIZE_PATTERN).map_err(|e| TokenizerError::Malformed(e.to_string()))?;

        Ok(Self {
            vocab,
            id_to_token,
            merge_ranks,
            added,
            added_by_id,
            unk,
            byte_encoder,
            byte_decoder,
            pretokenizer,
            special: SpecialTokens { end_of_text, pad },
            source: source.as_ref().to_path_buf(),
        })
    }

    /// One past the largest id defined by the file.
    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn special_tokens(&self) -> SpecialTokens {
        self.special
    }

    pub fn end_of_text_id(&self) -> TokenId {
        self.special.end_of_text
    }

    pub fn pad_id(&self) -> Option<TokenId> {
        self.special.pad
    }

    pub fn definition_source(&self) -> &Path {
        &self.source
    }

    /// Surface string of a token id as stored in the definition.
    pub fn token_surface(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).and_then(|t| t.as_deref())
    }

    pub fn token_id(&self, surface: &str) -> Option<TokenId> {
        self.vocab.get(surface).copied()
    }

    /// Encodes text, emitting added tokens (including `end_of_text`) atomically.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            match self.find_added(rest) {
                Some((start, tok)) => {
                    self.encode_ordinary_into(&rest[..start], &mut ids);
                    ids.push(tok.id);
                    rest = &rest[start + tok.content.len()..];
                }
                None => {
                    self.encode_ordinary_into(rest, &mut ids);
                    break;
                }
            }
        }
        ids
    }

    /// Encodes text treating added-token surfaces as ordinary characters.
    pub fn encode_ordinary(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        self.encode_ordinary_into(text, &mut ids);
        ids
    }

    pub fn encode_sequence(&self, text: &str, source_tag: &str) -> TokenSequence {
        TokenSequence {
            ids: self.encode(text),
            source_tag: source_tag.to_string(),
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        let mut pending: Vec<u8> = Vec::new();
        for &id in ids {
            let vocab_size = self.vocab_size();
            let surface = self
                .token_surface(id)
                .ok_or(TokenizerError::TokenIdOutOfRange { id, vocab_size })?;
            if self.added_by_id.contains_key(&id) {
                out.push_str(&String::from_utf8_lossy(&pending));
                pending.clear();
                out.push_str(surface);
                continue;
            }
            for c in surface.chars() {
                match self.byte_decoder.get(&c) {
                    Some(&b) => pending.push(b),
                    None => {
                        let mut buf = [0u8; 4];
                        pending.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        out.push_str(&String::from_utf8_lossy(&pending));
        Ok(out)
    }

    /// Whether `id` is an added token flagged as special.
    pub fn is_special(&self, id: TokenId) -> bool {
        self.added_by_id
            .get(&id)
            .map(|&i| self.added[i].special)
            .unwrap_or(false)
    }

    fn find_added(&self, text: &str) -> Option<(usize, &AddedToken)> {
        let mut best: Option<(usize, &AddedToken)> = None;
        for tok in &self.added {
            if let Some(pos) = text.find(&tok.content) {
                // `added` is longest-first, so only a strictly earlier match wins.
                if best.is_none_or(|(p, _)| pos < p) {
                    best = Some((pos, tok));
                }
            }
        }
        best
    }

    fn encode_ordinary_into(&self, text: &str, ids: &mut Vec<TokenId>) {
        if text.is_empty() {
            return;
        }
        for piece in self.pretokenizer.find_iter(text) {
            // The pattern has no failure modes beyond backtrack limits on
            // pathological input; fall back to the whole remainder then.
            let piece = match piece {
                Ok(m) => m.as_str(),
                Err(_) => text,
            };
            self.bpe_into(piece, ids);
        }
    }

    fn bpe_into(&self, piece: &str, ids: &mut Vec<TokenId>) {
        let mut symbols: Vec<String> = piece
            .bytes()
            .map(|b| self.byte_encoder[b as usize].to_string())
            .collect();

        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.merge_ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self.merge_ranks.get(&(symbols[i].clone(), symbols[i + 1].clone()))
                        == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }

        for sym in symbols {
            match self.vocab.get(&sym) {
                Some(&id) => ids.push(id),
                None => {
                    // Unmerged symbols are single byte chars; each maps to unk.
                    if let Some(unk) = self.unk {
                        ids.extend(std::iter::repeat_n(unk, sym.chars().count()));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Tokenizer {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tokenizer.json");
        load_tokenizer(path).unwrap()
    }

    #[test]
    fn vocab_size_matches_file_entries() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tokenizer.json");
        let raw: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        let entries = raw["model"]["vocab"].as_object().unwrap().len();
        assert_eq!(fixture().vocab_size(), entries);
        assert!(entries <= 200);
    }

    #[test]
    fn missing_end_of_text_is_rejected() {
        let path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/tokenizer_no_eot.json"
        );
        assert!(matches!(
            load_tokenizer(path),
            Err(TokenizerError::MissingSpecialToken("end_of_text"))
        ));
    }

    #[test]
    fn missing_file_and_garbage() {
        assert!(matches!(
            load_tokenizer("/nonexistent/tokenizer.json"),
            Err(TokenizerError::Io { .. })
        ));
        assert!(matches!(
            Tokenizer::from_json_str("{not json", "x"),
            Err(TokenizerError::Malformed(_))
        ));
        let unigram = r#"{"model": {"type": "Unigram", "vocab": {"a": 0}}}"#;
        assert!(matches!(
            Tokenizer::from_json_str(unigram, "x"),
            Err(TokenizerError::Malformed(_))
        ));
    }

    #[test]
    fn empty_text_encodes_to_nothing() {
        let t = fixture();
        assert!(t.encode("").is_empty());
        assert_eq!(t.decode(&[]).unwrap(), "");
    }

    #[test]
    fn end_of_text_surface_is_one_id() {
        let t = fixture();
        // id 0 in the fixture definition
        assert_eq!(t.end_of_text_id(), 0);
        assert_eq!(t.encode("<|endoftext|>"), vec![0]);
        assert_eq!(t.decode(&[0]).unwrap(), "<|endoftext|>");
        assert_eq!(t.pad_id(), Some(1));
        assert!(t.is_special(0));
    }

    #[test]
    fn ordinary_encoding_does_not_split_specials() {
        let t = fixture();
        let ids = t.encode_ordinary("<|endoftext|>");
        assert!(ids.len() > 1);
        assert!(!ids.contains(&0));
        assert_eq!(t.decode(&ids).unwrap(), "<|endoftext|>");
    }

    #[test]
    fn repeated_word_encodes_identically() {
        let t = fixture();
        let ids = t.encode("hello hello");
        let hello = t.encode("hello");
        assert_eq!(&ids[..hello.len()], hello.as_slice());
        assert_eq!(&ids[ids.len() - hello.len()..], hello.as_slice());
    }

    #[test]
    fn round_trip_and_out_of_range() {
        let t = fixture();
        let ids = t.encode("EDGAR filing 10-K");
        assert_eq!(t.decode(&ids).unwrap(), "EDGAR filing 10-K");
        let bad = t.vocab_size() as TokenId;
        assert!(matches!(
            t.decode(&[bad]),
            Err(TokenizerError::TokenIdOutOfRange { .. })
        ));
    }

    #[test]
    fn sentiment_labels_share_no_token_prefix() {
        let t = fixture();
        let labels = ["positive", "negative", "neutral"];
        let firsts: Vec<TokenId> = labels.iter().map(|l| t.encode(l)[0]).collect();
        assert_ne!(firsts[0], firsts[1]);
        assert_ne!(firsts[0], firsts[2]);
        assert_ne!(firsts[1], firsts[2]);
        assert_ne!(t.encode("yes")[0], t.encode("no")[0]);
    }
}
