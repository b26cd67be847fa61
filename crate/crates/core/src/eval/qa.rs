use super::{EvalError, ItemError};
use crate::gateway::{bounded_map, Gateway, GenParams};
use crate::prompts::{PromptText, TemplateSet};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

const YES_NO_MAYBE: [&str; 3] = ["yes", "no", "maybe"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub dataset: String,
    pub question: String,
    pub context: Option<String>,
    /// (label, text) in presentation order. Labels are `A`, `B`, ... or
    /// the set {yes, no, maybe}.
    pub options: Vec<(String, String)>,
    pub gold_letter: String,
    pub predicted_letter: Option<String>,
    #[serde(default)]
    pub response: Option<String>,
}

fn normalize_label(raw: &str) -> String {
    let t = raw.trim();
    if YES_NO_MAYBE.contains(&t.to_lowercase().as_str()) {
        t.to_lowercase()
    } else {
        t.to_uppercase()
    }
}

fn check_labels(options: &[(String, String)]) -> Result<(), String> {
    if options.is_empty() {
        return Err("no options".into());
    }
    let consecutive = options
        .iter()
        .enumerate()
        .all(|(i, (l, _))| i < 26 && l.as_bytes() == [b'A' + i as u8]);
    let mut words: Vec<&str> = options.iter().map(|(l, _)| l.as_str()).collect();
    words.sort_unstable();
    let ynm = words == ["maybe", "no", "yes"];
    if consecutive || ynm {
        Ok(())
    } else {
        Err("option labels must run A, B, C... or be yes/no/maybe".into())
    }
}

impl QaItem {
    /// Parses one JSONL record with fields `question`, `options` (object
    /// label → text, or an array lettered from A), optional `context` and
    /// `answer`.
    pub fn from_json(dataset: &str, v: &Value) -> Result<Self, String> {
        let question = v
            .get("question")
            .and_then(Value::as_str)
            .filter(|q| !q.trim().is_empty())
            .ok_or("missing question")?
            .to_owned();
        let answer = v.get("answer").and_then(Value::as_str).ok_or("missing answer")?;
        let gold_letter = normalize_label(answer);
        let options: Vec<(String, String)> = match v.get("options") {
            Some(Value::Object(map)) => map
                .iter()
                .map(|(k, t)| {
                    t.as_str()
                        .map(|t| (normalize_label(k), t.to_owned()))
                        .ok_or_else(|| format!("option {k} is not a string"))
                })
                .collect::<Result<_, _>>()?,
            Some(Value::Array(list)) => list
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.as_str()
                        .filter(|_| i < 26)
                        .map(|t| (((b'A' + i as u8) as char).to_string(), t.to_owned()))
                        .ok_or_else(|| format!("option {i} is not a string"))
                })
                .collect::<Result<_, _>>()?,
            None | Some(Value::Null) if YES_NO_MAYBE.contains(&gold_letter.as_str()) => YES_NO_MAYBE
                .iter()
                .map(|w| (w.to_string(), w.to_string()))
                .collect(),
            _ => return Err("missing options".into()),
        };
        check_labels(&options)?;
        if !options.iter().any(|(l, _)| *l == gold_letter) {
            return Err(format!("answer {gold_letter} is not an option"));
        }
        let context = v
            .get("context")
            .and_then(Value::as_str)
            .filter(|c| !c.trim().is_empty())
            .map(str::to_owned);
        Ok(QaItem {
            dataset: dataset.to_owned(),
            question,
            context,
            options,
            gold_letter,
            predicted_letter: None,
            response: None,
        })
    }

    /// Template used to prompt for this item's dataset.
    pub fn template_id(&self) -> &'static str {
        let name = self.dataset.to_lowercase();
        if name.contains("pubmedqa") {
            "qa_pubmedqa"
        } else if name.contains("medmcqa") {
            "qa_medmcqa"
        } else if name.contains("usmle") {
            "qa_usmle"
        } else {
            "qa_medqa"
        }
    }
}

/// Loads a QA JSONL file; the dataset name is used for per-dataset
/// breakdowns and template choice.
pub fn load_qa_dataset(path: &Path, dataset: &str) -> Result<Vec<QaItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, reason: String| EvalError::Parse {
        file: path.to_path_buf(),
        line,
        reason,
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Value = serde_json::from_str(l).map_err(|e| parse_err(i + 1, e.to_string()))?;
            QaItem::from_json(dataset, &v).map_err(|e| parse_err(i + 1, e))
        })
        .collect()
}

pub fn render_qa_prompt(templates: &TemplateSet, item: &QaItem) -> Result<PromptText, EvalError> {
    let options = item
        .options
        .iter()
        .map(|(l, t)| if l == t { l.clone() } else { format!("{l}. {t}") })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(templates.get(item.template_id())?.render(&[
        ("question", Some(&item.question)),
        ("options", Some(&options)),
        ("context", item.context.as_deref()),
    ])?)
}

fn answer_is_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\banswer(?:\s+is)?\s*[:\-]?\s*\(?([A-Za-z]+)\b").unwrap())
}

/// Matches the opening token of a response against the option labels.
/// A single-letter label must stand alone or carry brackets/punctuation
/// ("B", "(B)", "B."), so a sentence opening with the article "A" does
/// not count; word labels (yes/no/maybe) match case-insensitively.
fn leading_label<'a>(text: &str, options: &'a [(String, String)]) -> Option<&'a str> {
    let trimmed = text.trim();
    let first = trimmed.split_whitespace().next()?;
    let alone = first.len() == trimmed.len();
    let core = first.trim_start_matches(['(', '[']);
    let bracketed = core.len() != first.len();
    let core_stripped = core.trim_end_matches([')', ']', '.', ',', ':', ';', '!', '?']);
    let punctuated = core_stripped.len() != core.len();
    options.iter().map(|(l, _)| l.as_str()).find(|label| {
        if label.len() == 1 {
            core_stripped == *label && (alone || bracketed || punctuated)
        } else {
            core_stripped.eq_ignore_ascii_case(label)
        }
    })
}

/// First occurrence of `needle` not embedded in a longer word.
fn find_word(haystack: &str, needle: &str) -> Option<usize> {
    haystack.match_indices(needle).map(|(i, _)| i).find(|&i| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

/// Rule-ordered answer extraction: a leading label token, then an
/// "answer is X" phrase, then an option's full text. Returns only labels
/// present in `options`.
pub fn extract_choice(text: &str, options: &[(String, String)]) -> Option<String> {
    if let Some(l) = leading_label(text, options) {
        return Some(l.to_owned());
    }
    for cap in answer_is_re().captures_iter(text) {
        let found = &cap[1];
        if let Some((l, _)) = options.iter().find(|(l, _)| l.eq_ignore_ascii_case(found)) {
            return Some(l.clone());
        }
    }
    let lower = text.to_lowercase();
    options
        .iter()
        .filter(|(_, t)| !t.trim().is_empty())
        .filter_map(|(l, t)| find_word(&lower, &t.trim().to_lowercase()).map(|pos| (pos, std::cmp::Reverse(t.len()), l)))
        .min()
        .map(|(_, _, l)| l.clone())
}

/// Prompts the model for every item and records the extracted choice.
pub fn evaluate_qa(
    items: &mut [QaItem],
    gateway: &Gateway,
    templates: &TemplateSet,
    params: &GenParams,
    parallelism: usize,
) -> Result<Vec<ItemError>, EvalError> {
    let prompts = items
        .iter()
        .map(|it| render_qa_prompt(templates, it))
        .collect::<Result<Vec<_>, _>>()?;
    let results = bounded_map(&prompts, parallelism, |p| gateway.generate(p, params));
    let mut errors = Vec::new();
    for (i, (item, res)) in items.iter_mut().zip(results).enumerate() {
        match res {
            Ok(r) => {
                item.predicted_letter = extract_choice(&r.text, &item.options);
                item.response = Some(r.text);
            }
            Err(e) => {
                item.predicted_letter = None;
                errors.push(ItemError {
                    item: format!("{}#{}", item.dataset, i + 1),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(errors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub per_dataset: BTreeMap<String, DatasetAccuracy>,
}

impl AccuracyReport {
    /// Percentage with one decimal, e.g. `75.0%`.
    pub fn percent(&self) -> String {
        format!("{:.1}%", self.accuracy * 100.0)
    }
}

/// Fraction of items whose prediction equals the gold label; a missing
/// prediction counts as wrong.
pub fn accuracy(items: &[QaItem]) -> Result<AccuracyReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let hit = |it: &QaItem| it.predicted_letter.as_deref() == Some(it.gold_letter.as_str());
    let mut per: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for it in items {
        let e = per.entry(it.dataset.clone()).or_default();
        e.1 += 1;
        if hit(it) {
            e.0 += 1;
        }
    }
    let correct = items.iter().filter(|it| hit(it)).count();
    Ok(AccuracyReport {
        correct,
        total: items.len(),
        accuracy: correct as f64 / items.len() as f64,
        per_dataset: per
            .into_iter()
            .map(|(k, (c, t))| {
                (
                    k,
                    DatasetAccuracy {
                        correct: c,
                        total: t,
                        accuracy: c as f64 / t as f64,
                    },
                )
            })
            .collect(),
    })
}
