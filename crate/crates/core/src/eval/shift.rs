use super::{EvalError, ItemError};
use crate::gateway::{bounded_map, Gateway, GatewayError, GenParams};
use crate::metrics::cosine;
use crate::prompts::PromptText;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub n: usize,
    pub mean_cosine: f64,
    pub per_item: Vec<(String, f64)>,
    pub excluded: Vec<ItemError>,
}

/// Mean embedding cosine between the model's responses and reference
/// responses to the same instructions. Failed items are excluded from the
/// mean and listed.
pub fn distribution_shift(
    instructions: &[(String, String)],
    model: &Gateway,
    reference_responses: &[String],
    embedder: &Gateway,
    params: &GenParams,
    parallelism: usize,
) -> Result<ShiftReport, EvalError> {
    if instructions.is_empty() {
        return Err(EvalError::Empty);
    }
    if instructions.len() != reference_responses.len() {
        return Err(EvalError::Alignment(format!(
            "{} instructions but {} reference responses",
            instructions.len(),
            reference_responses.len()
        )));
    }
    let jobs: Vec<(&(String, String), &String)> = instructions.iter().zip(reference_responses).collect();
    let outcomes = bounded_map(&jobs, parallelism, |((_, instruction), reference)| {
        let response = model.generate(&PromptText::raw(instruction.as_str()), params)?;
        let a = embedder.embed(&response.text)?;
        let b = embedder.embed(reference)?;
        cosine(&a.vector, &b.vector).map_err(|e| GatewayError::Schema(e.to_string()))
    });

    let mut per_item = Vec::new();
    let mut excluded = Vec::new();
    let mut first_error = None;
    for (((id, _), _), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(c) => per_item.push((id.clone(), c)),
            Err(e) => {
                excluded.push(ItemError {
                    item: id.clone(),
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if per_item.is_empty() {
        return Err(EvalError::AllFailed(first_error.expect("at least one item failed")));
    }
    let mean_cosine = per_item.iter().map(|(_, c)| c).sum::<f64>() / per_item.len() as f64;
    Ok(ShiftReport {
        n: per_item.len(),
        mean_cosine,
        per_item,
        excluded,
    })
}
