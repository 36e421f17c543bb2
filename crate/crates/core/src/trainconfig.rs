//! Training configurations for the two fine-tuning stages.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenization::TokenId;

#[derive(Debug, Error, PartialEq)]
pub enum TrainConfigError {
    #[error("pad id {pad_id} is outside the vocabulary of {vocab_size}")]
    PadOutOfRange { pad_id: TokenId, vocab_size: usize },
    #[error("fit_to_context needs an instruction_finetune config")]
    WrongStage,
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DocsPretrain,
    InstructionFinetune,
}

impl std::str::FromStr for Stage {
    type Err = TrainConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "docs_pretrain" | "1" => Ok(Stage::DocsPretrain),
            "instruction_finetune" | "2" => Ok(Stage::InstructionFinetune),
            other => Err(TrainConfigError::Invalid(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadTokenPolicy {
    None,
    PadToContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTarget {
    Full,
    AnswerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub context_len: usize,
    pub epochs: u32,
    pub checkpoints_per_epoch: u32,
    pub optimizer: String,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: u32,
    pub grad_accum: u32,
    pub pad_token_policy: PadTokenPolicy,
    pub select_best_by: String,
    pub loss_target: LossTarget,
    /// Exclude pad positions from the loss.
    pub mask_pad_loss: bool,
}

pub fn emit_config(stage: Stage) -> TrainConfig {
    let (context_len, epochs, checkpoints_per_epoch, pad_token_policy) = match stage {
        Stage::DocsPretrain => (2048, 2, 4, PadTokenPolicy::None),
        Stage::InstructionFinetune => (1000, 1, 1, PadTokenPolicy::PadToContext),
    };
    TrainConfig {
        stage,
        context_len,
        epochs,
        checkpoints_per_epoch,
        optimizer: "adamw".into(),
        learning_rate: 1e-4,
        weight_decay: 0.1,
        batch_size: 32,
        grad_accum: 4,
        pad_token_policy,
        select_best_by: "eval_loss".into(),
        loss_target: LossTarget::Full,
        mask_pad_loss: pad_token_policy == PadTokenPolicy::PadToContext,
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> u32 {
        self.batch_size * self.grad_accum
    }

    pub fn validate(&self) -> Result<(), TrainConfigError> {
        let bad = |m: &str| Err(TrainConfigError::Invalid(m.into()));
        if self.context_len == 0 || self.epochs == 0 || self.checkpoints_per_epoch == 0 {
            return bad("context_len, epochs and checkpoints_per_epoch must be positive");
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return bad("batch_size and grad_accum must be positive");
        }
        if self.optimizer != "adamw" {
            return bad("optimizer must be adamw");
        }
        let rates_ok = self.learning_rate > 0.0 && self.weight_decay >= 0.0;
        if !rates_ok {
            return bad("learning_rate must be positive and weight_decay non-negative");
        }
        let stage_ok = match self.stage {
            Stage::DocsPretrain => {
                self.context_len == 2048
                    && self.epochs == 2
                    && self.checkpoints_per_epoch == 4
                    && self.pad_token_policy == PadTokenPolicy::None
            }
            Stage::InstructionFinetune => {
                self.context_len == 1000
                    && self.epochs == 1
                    && self.pad_token_policy == PadTokenPolicy::PadToContext
            }
        };
        if !stage_ok {
            return bad("stage invariants violated");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Truncates to `context_len` or right-pads with `pad_id`.
pub fn fit_to_context(
    ids: &[TokenId],
    config: &TrainConfig,
    pad_id: TokenId,
    vocab_size: usize,
) -> Result<Vec<TokenId>, TrainConfigError> {
    if config.stage != Stage::InstructionFinetune {
        return Err(TrainConfigError::WrongStage);
    }
    if pad_id as usize >= vocab_size {
        return Err(TrainConfigError::PadOutOfRange { pad_id, vocab_size });
    }
    let n = config.context_len;
    let mut out: Vec<TokenId> = ids.iter().copied().take(n).collect();
    out.resize(n, pad_id);
    Ok(out)
}

/// Config file handed to the trainer: the stage record plus its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfigFile {
    #[serde(flatten)]
    pub config: TrainConfig,
    pub train_data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<PathBuf>,
    pub seed: u64,
}

impl TrainConfigFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_values() {
        let c = emit_config(Stage::DocsPretrain);
        assert_eq!((c.context_len, c.epochs, c.checkpoints_per_epoch), (2048, 2, 4));
        assert_eq!(c.effective_batch(), 128);
        c.validate().unwrap();
        let c = emit_config(Stage::InstructionFinetune);
        assert_eq!((c.context_len, c.epochs), (1000, 1));
        assert_eq!(c.pad_token_policy, PadTokenPolicy::PadToContext);
        c.validate().unwrap();
    }

    #[test]
    fn emission_is_deterministic() {
        assert_eq!(
            emit_config(Stage::DocsPretrain).to_json(),
            emit_config(Stage::DocsPretrain).to_json()
        );
    }

    #[test]
    fn fit_cases() {
        let c = emit_config(Stage::InstructionFinetune);
        let long: Vec<TokenId> = (0..1200).collect();
        assert_eq!(fit_to_context(&long, &c, 1, 2000).unwrap(), long[..1000].to_vec());
        let exact: Vec<TokenId> = (0..1000).collect();
        assert_eq!(fit_to_context(&exact, &c, 1, 2000).unwrap(), exact);
        let short: Vec<TokenId> = (0..10).collect();
        let out = fit_to_context(&short, &c, 1, 2000).unwrap();
        assert_eq!(out.len(), 1000);
        assert!(out[10..].iter().all(|&t| t == 1));
        assert!(matches!(
            fit_to_context(&short, &c, 5, 5),
            Err(TrainConfigError::PadOutOfRange { .. })
        ));
        assert_eq!(
            fit_to_context(&short, &emit_config(Stage::DocsPretrain), 1, 2000),
            Err(TrainConfigError::WrongStage)
        );
    }

    #[test]
    fn stage_names_parse() {
        assert_eq!("docs-pretrain".parse::<Stage>().unwrap(), Stage::DocsPretrain);
        assert_eq!("2".parse::<Stage>().unwrap(), Stage::InstructionFinetune);
        assert!("three".parse::<Stage>().is_err());
    }
}
