use std::fs;
use std::sync::OnceLock;

use finadapt::tokenization::{load_tokenizer, Tokenizer};
use proptest::prelude::*;
use serde::Deserialize;

fn fixture_path(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn fixture() -> &'static Tokenizer {
    static TOKENIZER: OnceLock<Tokenizer> = OnceLock::new();
    TOKENIZER.get_or_init(|| load_tokenizer(fixture_path("tokenizer.json")).unwrap())
}

#[derive(Deserialize)]
struct Reference {
    text: String,
    ids: Vec<u32>,
}

/// `tokenizer_reference.json` was produced by the HuggingFace `tokenizers`
/// library on the same definition file.
#[test]
fn matches_reference_implementation() {
    let t = fixture();
    let cases: Vec<Reference> =
        serde_json::from_str(&fs::read_to_string(fixture_path("tokenizer_reference.json")).unwrap())
            .unwrap();
    assert!(!cases.is_empty());
    for case in cases {
        assert_eq!(t.encode(&case.text), case.ids, "text {:?}", case.text);
    }
}

#[test]
fn separator_between_documents_is_atomic() {
    let t = fixture();
    let ids = t.encode("doc one<|endoftext|>doc two");
    assert_eq!(ids.iter().filter(|&&id| id == t.end_of_text_id()).count(), 1);
}

#[test]
fn non_ascii_falls_back_to_unk() {
    let t = fixture();
    let ids = t.encode("café");
    let unk = t.token_id("<|unk|>").unwrap();
    assert_eq!(ids.iter().filter(|&&id| id == unk).count(), 2);
}

proptest! {
    #[test]
    fn ascii_round_trip(s in "[\\x00-\\x7f]{0,80}") {
        let t = fixture();
        let ids = t.encode_ordinary(&s);
        prop_assert!(ids.iter().all(|&id| (id as usize) < t.vocab_size()));
        prop_assert_eq!(t.decode(&ids).unwrap(), s);
    }

    #[test]
    fn encoding_is_deterministic(s in "[ -~]{0,60}") {
        let t = fixture();
        prop_assert_eq!(t.encode(&s), t.encode(&s));
    }

    #[test]
    fn end_of_text_stays_one_id(a in "[a-z ]{0,20}", b in "[a-z ]{0,20}") {
        let t = fixture();
        let ids = t.encode(&format!("{a}<|endoftext|>{b}"));
        prop_assert_eq!(ids.iter().filter(|&&id| id == t.end_of_text_id()).count(), 1);
        let mut expected = t.encode(&a);
        expected.push(t.end_of_text_id());
        expected.extend(t.encode(&b));
        prop_assert_eq!(ids, expected);
    }
}
