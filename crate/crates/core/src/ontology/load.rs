use super::{Concept, ConceptId, OntologyError, OntologyStore};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

struct Line<'a> {
    number: usize,
    fields: Vec<&'a str>,
}

fn read(path: &Path) -> Result<String, OntologyError> {
    std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-blank, non-comment lines split on tabs, with 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = Line<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some(Line {
                number: i + 1,
                fields: line.split('\t').collect(),
            })
        }
    })
}

struct Ctx<'p> {
    file: &'p Path,
}

impl Ctx<'_> {
    fn err(&self, line: usize, reason: impl Into<String>) -> OntologyError {
        OntologyError::Malformed {
            file: PathBuf::from(self.file),
            line,
            reason: reason.into(),
        }
    }

    fn id(&self, line: usize, raw: &str) -> Result<ConceptId, OntologyError> {
        ConceptId::new(raw).map_err(|_| self.err(line, format!("invalid concept id {raw:?}")))
    }

    fn expect_fields(&self, line: &Line<'_>, n: usize) -> Result<(), OntologyError> {
        if line.fields.len() != n {
            return Err(self.err(
                line.number,
                format!("expected {n} tab-separated fields, found {}", line.fields.len()),
            ));
        }
        Ok(())
    }
}

/// Loads concepts, is-a relations and optional descriptions from the TSV
/// interchange files.
pub fn load_ontology(
    concepts_file: &Path,
    relations_file: &Path,
    descriptions_file: Option<&Path>,
) -> Result<OntologyStore, OntologyError> {
    let mut concepts: BTreeMap<ConceptId, Concept> = BTreeMap::new();

    let text = read(concepts_file)?;
    let ctx = Ctx { file: concepts_file };
    for line in data_lines(&text) {
        ctx.expect_fields(&line, 2)?;
        let id = ctx.id(line.number, line.fields[0])?;
        let label = line.fields[1].trim();
        if label.is_empty() {
            return Err(ctx.err(line.number, "empty preferred label"));
        }
        if concepts.contains_key(&id) {
            return Err(ctx.err(line.number, format!("duplicate concept id {id}")));
        }
        concepts.insert(id.clone(), Concept::new(id, label));
    }

    let text = read(relations_file)?;
    let ctx = Ctx { file: relations_file };
    for line in data_lines(&text) {
        ctx.expect_fields(&line, 2)?;
        let child = ctx.id(line.number, line.fields[0])?;
        let parent = ctx.id(line.number, line.fields[1])?;
        if child == parent {
            return Err(ctx.err(line.number, format!("self-loop at {child}")));
        }
        if !concepts.contains_key(&parent) {
            return Err(ctx.err(
                line.number,
                format!("dangling hypernym reference: {child} -> {parent}"),
            ));
        }
        let Some(concept) = concepts.get_mut(&child) else {
            return Err(ctx.err(line.number, format!("unknown child concept {child}")));
        };
        if concept.hypernyms.contains(&parent) {
            tracing::warn!(file = %relations_file.display(), line = line.number, "duplicate is-a edge ignored");
            continue;
        }
        concept.hypernyms.push(parent);
    }

    if let Some(path) = descriptions_file {
        let text = read(path)?;
        let ctx = Ctx { file: path };
        for line in data_lines(&text) {
            ctx.expect_fields(&line, 3)?;
            let id = ctx.id(line.number, line.fields[0])?;
            let body = line.fields[2].trim();
            if body.is_empty() {
                return Err(ctx.err(line.number, "empty description text"));
            }
            let Some(concept) = concepts.get_mut(&id) else {
                return Err(ctx.err(line.number, format!("description for unknown concept {id}")));
            };
            match line.fields[1] {
                "synonym" => {
                    if body != concept.label && !concept.synonyms.iter().any(|s| s == body) {
                        concept.synonyms.push(body.to_owned());
                    }
                }
                "definition" => {
                    if concept.definition.is_some() {
                        return Err(ctx.err(line.number, format!("second definition for {id}")));
                    }
                    concept.definition = Some(body.to_owned());
                }
                other => {
                    return Err(ctx.err(line.number, format!("unknown description kind {other:?}")));
                }
            }
        }
    }

    OntologyStore::from_concepts(concepts.into_values().collect())
}
