//! Toolkit for adapting causal language models to the financial domain.
//!
//! The crate covers the data side of a two-stage fine-tuning workflow
//! (document packing for further pre-training, instruction dataset
//! construction and LLM-driven augmentation), the emission of training
//! configurations, and an evaluation harness with constrained label
//! decoding plus classical sentiment baselines.

pub mod tokenization;
pub mod corpus;
pub mod instruct;
pub mod modelio;
pub mod augment;
pub mod evalharness;
pub mod baselines;
pub mod trainconfig;
