use super::manifest::io_err;
use super::*;
use crate::eval::{
    accuracy, distribution_shift, evaluate_hypernyms, evaluate_qa, first_match_rank, generate_eval_definitions,
    load_hypernym_dataset, load_qa_dataset, mrr, EvalReport, ItemError,
};
use serde::Deserialize;
use serde_json::json;
use std::collections::BTreeMap;

pub const EVAL_REPORT_FILE: &str = "eval_report.json";

#[derive(Debug, Clone, PartialEq)]
pub enum EvalTask {
    Hypernym {
        data: PathBuf,
        gold: PathBuf,
        /// Generate a definition per term and include it in the query.
        with_definitions: bool,
    },
    Qa {
        /// (dataset name, JSONL path)
        datasets: Vec<(String, PathBuf)>,
    },
    Shift {
        /// JSONL lines `{"id", "instruction", "reference"}`.
        instructions: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
struct ShiftLine {
    id: Option<String>,
    instruction: String,
    reference: String,
}

/// Fails when every item errored: the backend is unusable, not the data.
fn check_not_all_failed(errors: &[ItemError], n: usize) -> Result<(), PipelineError> {
    if n > 0 && errors.len() >= n {
        return Err(PipelineError::Backend {
            context: format!("all {n} evaluation items failed"),
            source: GatewayError::Network(errors[0].error.clone()),
        });
    }
    Ok(())
}

impl Pipeline {
    /// Builds a pipeline for evaluation only; ontology paths are not needed.
    pub fn for_eval(config: PipelineConfig) -> Result<Self, PipelineError> {
        let templates = load_templates(&config)?;
        let gateway = build_gateway(&config)?;
        Ok(Pipeline {
            config,
            templates,
            gateway,
        })
    }

    pub fn evaluate(&self, task: &EvalTask) -> Result<EvalReport, PipelineError> {
        let params = &self.config.generation;
        let par = self.config.parallelism.max(1);
        let mut versions = BTreeMap::new();
        let mut keep_version = |id: &str| {
            if let Ok(t) = self.templates.get(id) {
                versions.insert(id.to_owned(), t.version().to_owned());
            }
        };
        let report = match task {
            EvalTask::Hypernym {
                data,
                gold,
                with_definitions,
            } => {
                let mut items = load_hypernym_dataset(data, gold)?;
                let mut errors = Vec::new();
                keep_version(crate::prompts::HYPERNYM_QUERY);
                if *with_definitions {
                    keep_version(crate::prompts::DEFINITION_FEWSHOT);
                    let outcome = generate_eval_definitions(&items, &self.gateway, &self.templates, params, par)?;
                    for it in &mut items {
                        it.definition = outcome.definitions.get(&it.term).cloned();
                    }
                    errors.extend(outcome.misses);
                }
                let failures = evaluate_hypernyms(&mut items, &self.gateway, &self.templates, params, par)?;
                check_not_all_failed(&failures, items.len())?;
                errors.extend(failures);
                let value = mrr(&items)?;
                let rows: Vec<_> = items
                    .iter()
                    .map(|it| {
                        json!({
                            "term": it.term,
                            "definition": it.definition,
                            "gold": it.gold,
                            "predictions": it.predictions,
                            "first_match_rank": first_match_rank(it),
                        })
                    })
                    .collect();
                EvalReport {
                    task: "hypernym".into(),
                    metric: "mrr".into(),
                    value,
                    display: format!("MRR: {value:?}"),
                    n: items.len(),
                    backend_id: String::new(),
                    template_versions: versions,
                    breakdown: BTreeMap::new(),
                    items: json!(rows),
                    errors,
                }
            }
            EvalTask::Qa { datasets } => {
                if datasets.is_empty() {
                    return Err(PipelineError::Usage("qa evaluation needs at least one --dataset".into()));
                }
                let mut items = Vec::new();
                for (name, path) in datasets {
                    items.extend(load_qa_dataset(path, name)?);
                }
                for it in &items {
                    keep_version(it.template_id());
                }
                let errors = evaluate_qa(&mut items, &self.gateway, &self.templates, params, par)?;
                check_not_all_failed(&errors, items.len())?;
                let acc = accuracy(&items)?;
                EvalReport {
                    task: "qa".into(),
                    metric: "accuracy".into(),
                    value: acc.accuracy,
                    display: format!("accuracy: {} ({}/{})", acc.percent(), acc.correct, acc.total),
                    n: acc.total,
                    backend_id: String::new(),
                    template_versions: versions,
                    breakdown: acc.per_dataset.iter().map(|(k, d)| (k.clone(), d.accuracy)).collect(),
                    items: json!(items),
                    errors,
                }
            }
            EvalTask::Shift { instructions } => {
                let text = std::fs::read_to_string(instructions).map_err(|e| io_err(instructions, e))?;
                let mut pairs = Vec::new();
                let mut references = Vec::new();
                for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let row: ShiftLine = serde_json::from_str(line).map_err(|e| {
                        PipelineError::Eval(crate::eval::EvalError::Parse {
                            file: instructions.clone(),
                            line: i + 1,
                            reason: e.to_string(),
                        })
                    })?;
                    pairs.push((row.id.unwrap_or_else(|| format!("#{}", i + 1)), row.instruction));
                    references.push(row.reference);
                }
                let shift = distribution_shift(&pairs, &self.gateway, &references, &self.gateway, params, par)?;
                EvalReport {
                    task: "shift".into(),
                    metric: "mean_cosine".into(),
                    value: shift.mean_cosine,
                    display: format!("mean cosine: {:?} (n={})", shift.mean_cosine, shift.n),
                    n: shift.n,
                    backend_id: String::new(),
                    template_versions: versions,
                    breakdown: BTreeMap::new(),
                    items: json!(shift.per_item),
                    errors: shift.excluded,
                }
            }
        };
        Ok(EvalReport {
            backend_id: self.gateway.backend_id().to_owned(),
            ..report
        })
    }

    /// Runs `task` and writes the report to `out` (default
    /// `<output_dir>/eval_report.json`).
    pub fn run_eval(&self, task: &EvalTask, out: Option<&Path>) -> Result<(EvalReport, PathBuf), PipelineError> {
        let report = self.evaluate(task)?;
        let path = out
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.output_dir().join(EVAL_REPORT_FILE));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        manifest::write_atomic(&path, text.as_bytes())?;
        Ok((report, path))
    }
}
