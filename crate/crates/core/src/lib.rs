//! Ontology-guided self-training data pipeline.
//!
//! Concepts from an ontology are turned into paired instructions (with and
//! without ontology context), answered by a seed model, scored for
//! inconsistency, and the most inconsistent pairs are emitted as SFT and DPO
//! training files. An evaluation harness measures hypernym discovery (MRR),
//! multiple-choice QA accuracy and response distribution shift.

pub mod curation;
pub mod digest;
pub mod eval;
pub mod gateway;
pub mod metrics;
pub mod ontology;
pub mod pipeline;
pub mod prompts;
