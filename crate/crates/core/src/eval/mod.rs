//! Evaluation harness: hypernym discovery (MRR), multiple-choice QA
//! accuracy, and response distribution shift.

pub mod hypernym;
pub mod qa;
pub mod shift;

pub use hypernym::{
    evaluate_hypernyms, first_match_rank, generate_eval_definitions, load_hypernym_dataset, mrr,
    parse_hypernym_output, DefinitionOutcome, HypernymItem, MAX_CANDIDATES,
};
pub use qa::{accuracy, evaluate_qa, extract_choice, load_qa_dataset, render_qa_prompt, AccuracyReport, QaItem};
pub use shift::{distribution_shift, ShiftReport};

use crate::gateway::GatewayError;
use crate::prompts::PromptError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{0}")]
    Alignment(String),
    #[error("no items to evaluate")]
    Empty,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("every item failed; first error: {0}")]
    AllFailed(GatewayError),
}

/// A per-item failure kept in reports instead of aborting the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub item: String,
    pub error: String,
}

/// Contents of `eval_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub display: String,
    pub n: usize,
    pub backend_id: String,
    pub template_versions: BTreeMap<String, String>,
    #[serde(default)]
    pub breakdown: BTreeMap<String, f64>,
    pub items: serde_json::Value,
    pub errors: Vec<ItemError>,
}
