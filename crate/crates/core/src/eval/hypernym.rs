use super::{EvalError, ItemError};
use crate::gateway::{bounded_map, Gateway, GenParams};
use crate::prompts::{clean_definition, TemplateSet};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

/// Parsed candidate lists are truncated to this many entries.
pub const MAX_CANDIDATES: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypernymItem {
    pub term: String,
    pub definition: Option<String>,
    /// Case-folded, de-duplicated, in file order.
    pub gold: Vec<String>,
    pub predictions: Vec<String>,
}

impl HypernymItem {
    pub fn new(term: impl Into<String>, gold: &[&str]) -> Self {
        HypernymItem {
            term: term.into(),
            definition: None,
            gold: fold_unique(gold.iter().copied()),
            predictions: Vec::new(),
        }
    }
}

fn fold_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .map(|s| s.trim().to_lowercase())
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect()
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a line-aligned pair: `term<TAB>category` data lines and
/// tab-separated gold hypernym lines.
pub fn load_hypernym_dataset(data_path: &Path, gold_path: &Path) -> Result<Vec<HypernymItem>, EvalError> {
    let data = read(data_path)?;
    let gold = read(gold_path)?;
    let data_lines: Vec<&str> = data.lines().collect();
    let gold_lines: Vec<&str> = gold.lines().collect();
    if data_lines.len() != gold_lines.len() {
        return Err(EvalError::Alignment(format!(
            "{} has {} lines but {} has {}",
            data_path.display(),
            data_lines.len(),
            gold_path.display(),
            gold_lines.len()
        )));
    }
    data_lines
        .iter()
        .zip(&gold_lines)
        .enumerate()
        .map(|(i, (d, g))| {
            let term = d.split('\t').next().unwrap_or_default().trim();
            if term.is_empty() {
                return Err(EvalError::Parse {
                    file: data_path.to_path_buf(),
                    line: i + 1,
                    reason: "empty term".into(),
                });
            }
            let gold = fold_unique(g.split('\t'));
            if gold.is_empty() {
                return Err(EvalError::Parse {
                    file: gold_path.to_path_buf(),
                    line: i + 1,
                    reason: "empty gold line".into(),
                });
            }
            Ok(HypernymItem {
                term: term.to_owned(),
                definition: None,
                gold,
                predictions: Vec::new(),
            })
        })
        .collect()
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\d+[.)]|[-*•])\s*").unwrap())
}

/// Splits model output into an ordered candidate list: comma/newline
/// separated, enumeration markers stripped, case-folded, de-duplicated,
/// capped at [`MAX_CANDIDATES`].
pub fn parse_hypernym_output(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.split([',', '\n'])
        .map(|piece| {
            let piece = piece.trim();
            let piece = marker_re().replace(piece, "");
            piece.trim().trim_end_matches('.').trim().to_lowercase()
        })
        .filter(|c| !c.is_empty() && seen.insert(c.clone()))
        .take(MAX_CANDIDATES)
        .collect()
}

/// 1-based position of the first prediction found in the gold set.
pub fn first_match_rank(item: &HypernymItem) -> Option<usize> {
    item.predictions
        .iter()
        .position(|p| item.gold.iter().any(|g| g == &p.to_lowercase()))
        .map(|i| i + 1)
}

/// Mean reciprocal rank; items with no match contribute 0.
pub fn mrr(items: &[HypernymItem]) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: f64 = items
        .iter()
        .map(|it| first_match_rank(it).map_or(0.0, |r| 1.0 / r as f64))
        .sum();
    Ok(total / items.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DefinitionOutcome {
    pub definitions: BTreeMap<String, String>,
    pub misses: Vec<ItemError>,
}

/// One zero-shot definition per unique term, used to disambiguate queries.
pub fn generate_eval_definitions(
    items: &[HypernymItem],
    gateway: &Gateway,
    templates: &TemplateSet,
    params: &GenParams,
    parallelism: usize,
) -> Result<DefinitionOutcome, EvalError> {
    let mut seen = HashSet::new();
    let terms: Vec<&str> = items
        .iter()
        .map(|i| i.term.as_str())
        .filter(|t| seen.insert(*t))
        .collect();
    let prompts = terms
        .iter()
        .map(|t| templates.render_definition_completion(t, &[]))
        .collect::<Result<Vec<_>, _>>()?;
    let results = gateway.generate_batch(&prompts, params, parallelism);
    let mut out = DefinitionOutcome::default();
    for (term, res) in terms.iter().zip(results) {
        match res {
            Ok(r) => {
                out.definitions.insert((*term).to_owned(), clean_definition(term, &r.text));
            }
            Err(e) => out.misses.push(ItemError {
                item: (*term).to_owned(),
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Queries the model for every item and fills `predictions`. Items whose
/// generation fails keep an empty prediction list and are reported.
pub fn evaluate_hypernyms(
    items: &mut [HypernymItem],
    gateway: &Gateway,
    templates: &TemplateSet,
    params: &GenParams,
    parallelism: usize,
) -> Result<Vec<ItemError>, EvalError> {
    let prompts = items
        .iter()
        .map(|it| templates.render_hypernym_query(&it.term, it.definition.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;
    let results = bounded_map(&prompts, parallelism, |p| gateway.generate(p, params));
    let mut errors = Vec::new();
    for (item, res) in items.iter_mut().zip(results) {
        match res {
            Ok(r) => item.predictions = parse_hypernym_output(&r.text),
            Err(e) => {
                item.predictions.clear();
                errors.push(ItemError {
                    item: item.term.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(errors)
}
