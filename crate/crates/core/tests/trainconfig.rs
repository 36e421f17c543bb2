use finadapt::trainconfig::{emit_config, fit_to_context, Stage, TrainConfig, TrainConfigFile};
use proptest::prelude::*;

proptest! {
    #[test]
    fn fit_is_exact_length_and_keeps_prefix(ids in prop::collection::vec(0u32..50, 0..2500)) {
        let c = emit_config(Stage::InstructionFinetune);
        let out = fit_to_context(&ids, &c, 1, 50).unwrap();
        prop_assert_eq!(out.len(), 1000);
        let k = ids.len().min(1000);
        prop_assert_eq!(&out[..k], &ids[..k]);
        prop_assert!(out[k..].iter().all(|&t| t == 1));
    }
}

#[test]
fn config_file_round_trips() {
    let file = TrainConfigFile {
        config: emit_config(Stage::DocsPretrain),
        train_data: "blocks.jsonl".into(),
        eval_data: None,
        tokenizer: Some("tokenizer.json".into()),
        seed: 42,
    };
    let json = file.to_json();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["stage"], "docs_pretrain");
    assert_eq!(value["seed"], 42);
    assert_eq!(value["context_len"], 2048);
    let back: TrainConfigFile = serde_json::from_str(&json).unwrap();
    assert_eq!(back, file);
}

#[test]
fn tampered_config_fails_validation() {
    let mut c: TrainConfig = emit_config(Stage::DocsPretrain);
    c.context_len = 1000;
    assert!(c.validate().is_err());
    let mut c = emit_config(Stage::InstructionFinetune);
    c.optimizer = "sgd".into();
    assert!(c.validate().is_err());
}
