//! Prompt templates and rendering.
//!
//! Templates are plain text with `{name}` placeholders. Substitution is a
//! single pass: substituted values are never re-scanned, so labels cannot
//! alter template structure. A template line that references an optional
//! value which is absent is dropped entirely (this is how the zero-shot
//! definition prompt and the definition-less hypernym query are produced).

use crate::digest::sha256_hex;
use crate::ontology::OntologyContext;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {0} is not loaded")]
    MissingTemplate(String),
    #[error("template {template}: placeholder {{{name}}} is not allowed here")]
    ForbiddenPlaceholder { template: String, name: String },
    #[error("template {template}: no value supplied for {{{name}}}")]
    Unresolved { template: String, name: String },
    #[error("template {0} is empty")]
    EmptyTemplate(String),
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Diverse,
    Conceptual,
    Professional,
}

impl CorpusKind {
    /// All kinds in emission order.
    pub const ALL: [CorpusKind; 3] = [CorpusKind::Diverse, CorpusKind::Conceptual, CorpusKind::Professional];

    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::Diverse => "diverse",
            CorpusKind::Conceptual => "conceptual",
            CorpusKind::Professional => "professional",
        }
    }

    pub fn plain_template(self) -> &'static str {
        self.as_str()
    }

    pub fn onto_template(self) -> &'static str {
        match self {
            CorpusKind::Diverse => "diverse_onto",
            CorpusKind::Conceptual => "conceptual_onto",
            CorpusKind::Professional => "professional_onto",
        }
    }
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CorpusKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown corpus kind {s:?}"))
    }
}

/// A rendered prompt with the identity of the template that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub template_id: String,
    pub template_version: String,
}

impl PromptText {
    /// A prompt not produced from a template (e.g. an external instruction file).
    pub fn raw(text: impl Into<String>) -> Self {
        PromptText {
            text: text.into(),
            template_id: "raw".into(),
            template_version: String::new(),
        }
    }
}

pub const DEFINITION_FEWSHOT: &str = "definition_fewshot";
pub const HYPERNYM_QUERY: &str = "hypernym_query";

const ONTO_FIELDS: [&str; 3] = ["definition", "hypernyms", "synonyms"];

fn allowed_placeholders(template_id: &str) -> Option<&'static [&'static str]> {
    Some(match template_id {
        "diverse" | "conceptual" | "professional" => &["concept"],
        "diverse_onto" | "conceptual_onto" | "professional_onto" => {
            &["concept", "definition", "hypernyms", "synonyms"]
        }
        DEFINITION_FEWSHOT => &["concept", "examples"],
        HYPERNYM_QUERY => &["term", "definition"],
        id if id.starts_with("qa_") => &["question", "options", "context"],
        _ => return None,
    })
}

const DEFAULTS: &[(&str, &str)] = &[
    ("diverse", include_str!("../templates/diverse.txt")),
    ("diverse_onto", include_str!("../templates/diverse_onto.txt")),
    ("conceptual", include_str!("../templates/conceptual.txt")),
    ("conceptual_onto", include_str!("../templates/conceptual_onto.txt")),
    ("professional", include_str!("../templates/professional.txt")),
    ("professional_onto", include_str!("../templates/professional_onto.txt")),
    (DEFINITION_FEWSHOT, include_str!("../templates/definition_fewshot.txt")),
    (HYPERNYM_QUERY, include_str!("../templates/hypernym_query.txt")),
    ("qa_medqa", include_str!("../templates/qa_medqa.txt")),
    ("qa_medmcqa", include_str!("../templates/qa_medmcqa.txt")),
    ("qa_pubmedqa", include_str!("../templates/qa_pubmedqa.txt")),
    ("qa_usmle", include_str!("../templates/qa_usmle.txt")),
];

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: String,
    body: String,
    version: String,
    placeholders: BTreeSet<String>,
}

impl Template {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Self, PromptError> {
        let id = id.into();
        let body = body.into();
        if body.trim().is_empty() {
            return Err(PromptError::EmptyTemplate(id));
        }
        let placeholders: BTreeSet<String> = placeholder_re()
            .captures_iter(&body)
            .map(|c| c[1].to_owned())
            .collect();
        if let Some(allowed) = allowed_placeholders(&id) {
            if let Some(bad) = placeholders.iter().find(|p| !allowed.contains(&p.as_str())) {
                return Err(PromptError::ForbiddenPlaceholder {
                    template: id,
                    name: bad.clone(),
                });
            }
        }
        Ok(Template {
            version: sha256_hex(body.as_bytes()),
            id,
            body,
            placeholders,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Content digest of the template body.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn placeholders(&self) -> &BTreeSet<String> {
        &self.placeholders
    }

    /// Substitutes `values`. A `None` value drops every line that references it.
    pub fn render(&self, values: &[(&str, Option<&str>)]) -> Result<PromptText, PromptError> {
        let lookup: BTreeMap<&str, Option<&str>> = values.iter().copied().collect();
        let re = placeholder_re();
        let mut out = String::with_capacity(self.body.len() + 64);
        for line in self.body.split_inclusive('\n') {
            let mut absent = false;
            for cap in re.captures_iter(line) {
                match lookup.get(&cap[1]) {
                    Some(None) => absent = true,
                    Some(Some(_)) => {}
                    None => {
                        return Err(PromptError::Unresolved {
                            template: self.id.clone(),
                            name: cap[1].to_owned(),
                        })
                    }
                }
            }
            if absent {
                continue;
            }
            let mut last = 0;
            for cap in re.captures_iter(line) {
                let whole = cap.get(0).unwrap();
                out.push_str(&line[last..whole.start()]);
                out.push_str(lookup[&cap[1]].unwrap_or_default());
                last = whole.end();
            }
            out.push_str(&line[last..]);
        }
        let text = out.trim_end().to_owned();
        Ok(PromptText {
            text,
            template_id: self.id.clone(),
            template_version: self.version.clone(),
        })
    }
}

/// Joins a label list with ", ", rendering an empty list as "none".
pub fn join_list(items: &[String]) -> String {
    if items.is_empty() {
        "none".to_owned()
    } else {
        items.join(", ")
    }
}

/// Collapses line breaks (and surrounding whitespace) into single spaces.
pub fn single_line(text: &str) -> String {
    text.split(['\n', '\r'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// First non-empty line of a completion, without an echoed `label:` prefix.
pub fn clean_definition(label: &str, text: &str) -> String {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or_default();
    let lower = line.to_lowercase();
    let prefix = format!("{}:", label.to_lowercase());
    match line.get(prefix.len()..) {
        Some(rest) if lower.starts_with(&prefix) => rest.trim().to_owned(),
        _ => line.to_owned(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    /// The built-in templates.
    pub fn defaults() -> Self {
        let mut set = TemplateSet::default();
        for (id, body) in DEFAULTS {
            set.insert(Template::new(*id, *body).expect("built-in template is valid"));
        }
        set
    }

    /// Loads every `<id>.txt` file in `dir`. Files not named after a known
    /// template are ignored, except `qa_*.txt`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = TemplateSet::default();
        let entries = std::fs::read_dir(dir).map_err(|source| PromptError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if allowed_placeholders(id).is_none() {
                continue;
            }
            let body = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            set.insert(Template::new(id, body)?);
        }
        Ok(set)
    }

    /// Replaces templates of `self` with those of `other`.
    pub fn merge(&mut self, other: TemplateSet) {
        self.templates.extend(other.templates);
    }

    pub fn insert(&mut self, template: Template) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Result<&Template, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::MissingTemplate(id.to_owned()))
    }

    /// Template id → content digest, for provenance records.
    pub fn versions(&self) -> BTreeMap<String, String> {
        self.templates
            .values()
            .map(|t| (t.id.clone(), t.version.clone()))
            .collect()
    }

    /// Text preceding `{hypernyms}` on its line in the ontology-augmented
    /// template of `kind`. Its presence in a prompt marks an ontology block.
    pub fn ontology_sentinel(&self, kind: CorpusKind) -> Option<String> {
        let t = self.templates.get(kind.onto_template())?;
        t.body.lines().find_map(|line| {
            let pos = line.find("{hypernyms}")?;
            let prefix = line[..pos].trim();
            (!prefix.is_empty()).then(|| prefix.to_owned())
        })
    }

    pub fn render_corpus_instruction(
        &self,
        kind: CorpusKind,
        concept_label: &str,
    ) -> Result<PromptText, PromptError> {
        if concept_label.trim().is_empty() {
            return Err(PromptError::EmptyInput("concept label"));
        }
        let t = self.get(kind.plain_template())?;
        if let Some(f) = ONTO_FIELDS.iter().find(|f| t.placeholders.contains(**f)) {
            return Err(PromptError::ForbiddenPlaceholder {
                template: t.id.clone(),
                name: (*f).to_owned(),
            });
        }
        t.render(&[("concept", Some(concept_label))])
    }

    pub fn render_corpus_instruction_with_ontology(
        &self,
        kind: CorpusKind,
        ctx: &OntologyContext,
    ) -> Result<PromptText, PromptError> {
        if ctx.concept_label.trim().is_empty() {
            return Err(PromptError::EmptyInput("concept label"));
        }
        let t = self.get(kind.onto_template())?;
        let definition = if ctx.definition.trim().is_empty() {
            "none".to_owned()
        } else {
            single_line(&ctx.definition)
        };
        let hypernyms = join_list(&ctx.hypernym_labels);
        let synonyms = join_list(&ctx.synonym_labels);
        t.render(&[
            ("concept", Some(&ctx.concept_label)),
            ("definition", Some(&definition)),
            ("hypernyms", Some(&hypernyms)),
            ("synonyms", Some(&synonyms)),
        ])
    }

    /// Few-shot definition completion prompt; with no examples the example
    /// block is omitted (zero-shot form).
    pub fn render_definition_completion(
        &self,
        concept_label: &str,
        examples: &[(String, String)],
    ) -> Result<PromptText, PromptError> {
        if concept_label.trim().is_empty() {
            return Err(PromptError::EmptyInput("concept label"));
        }
        let block = examples
            .iter()
            .map(|(label, def)| format!("{}: {}", single_line(label), single_line(def)))
            .collect::<Vec<_>>()
            .join("\n");
        let label = single_line(concept_label);
        self.get(DEFINITION_FEWSHOT)?.render(&[
            ("concept", Some(&label)),
            ("examples", (!examples.is_empty()).then_some(block.as_str())),
        ])
    }

    pub fn render_hypernym_query(
        &self,
        term: &str,
        definition: Option<&str>,
    ) -> Result<PromptText, PromptError> {
        if term.trim().is_empty() {
            return Err(PromptError::EmptyInput("term"));
        }
        let definition = definition
            .map(single_line)
            .filter(|d| !d.is_empty());
        self.get(HYPERNYM_QUERY)?.render(&[
            ("term", Some(term)),
            ("definition", definition.as_deref()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::DefinitionProvenance;

    fn ctx(hypernyms: &[&str], synonyms: &[&str]) -> OntologyContext {
        OntologyContext {
            concept_label: "asthma".into(),
            definition: "A chronic airway disease.".into(),
            definition_provenance: DefinitionProvenance::Source,
            hypernym_labels: hypernyms.iter().map(|s| s.to_string()).collect(),
            synonym_labels: synonyms.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn no_placeholders(text: &str) {
        assert!(!placeholder_re().is_match(text), "unresolved placeholder in {text}");
    }

    #[test]
    fn diverse_instruction_mentions_concept() {
        let set = TemplateSet::defaults();
        let p = set.render_corpus_instruction(CorpusKind::Diverse, "asthma").unwrap();
        assert!(p.text.contains("asthma"));
        assert!(p.text.contains("knowledge card"));
        assert_eq!(p.template_id, "diverse");
        no_placeholders(&p.text);
        let again = set.render_corpus_instruction(CorpusKind::Diverse, "asthma").unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn braces_in_labels_pass_through() {
        let set = TemplateSet::defaults();
        let p = set
            .render_corpus_instruction(CorpusKind::Conceptual, "odd {concept} {x")
            .unwrap();
        assert!(p.text.contains("\"odd {concept} {x\""));
    }

    #[test]
    fn onto_prompt_slots() {
        let set = TemplateSet::defaults();
        let p = set
            .render_corpus_instruction_with_ontology(CorpusKind::Diverse, &ctx(&["respiratory disorder"], &[]))
            .unwrap();
        assert!(p.text.contains("Hypernyms: respiratory disorder\n"));
        assert!(p.text.contains("Synonyms: none\n"));
        no_placeholders(&p.text);
    }

    #[test]
    fn onto_prompt_is_block_plus_plain() {
        let set = TemplateSet::defaults();
        for kind in CorpusKind::ALL {
            let plain = set.render_corpus_instruction(kind, "asthma").unwrap();
            let onto = set
                .render_corpus_instruction_with_ontology(kind, &ctx(&["a", "b"], &["c"]))
                .unwrap();
            let block = onto.text.strip_suffix(&plain.text).expect("plain text is the suffix");
            assert!(block.contains("Hypernyms: a, b"));
            assert!(!plain.text.contains(&set.ontology_sentinel(kind).unwrap()));
        }
    }

    #[test]
    fn sentinel_is_derived_from_template() {
        let set = TemplateSet::defaults();
        assert_eq!(set.ontology_sentinel(CorpusKind::Professional).as_deref(), Some("Hypernyms:"));
    }

    #[test]
    fn definition_completion_examples() {
        let set = TemplateSet::defaults();
        let ex = vec![
            ("asthma".to_string(), "airway disease".to_string()),
            ("pneumonia".to_string(), "lung\ninfection".to_string()),
            ("croup".to_string(), "laryngotracheitis".to_string()),
        ];
        let p = set.render_definition_completion("bronchiolitis", &ex).unwrap();
        let lines: Vec<&str> = p.text.lines().collect();
        assert_eq!(lines[1], "asthma: airway disease");
        assert_eq!(lines[2], "pneumonia: lung infection");
        assert_eq!(lines[3], "croup: laryngotracheitis");
        assert_eq!(lines[4], "bronchiolitis:");

        let zero = set.render_definition_completion("bronchiolitis", &[]).unwrap();
        assert_eq!(zero.text.lines().count(), 2);
        no_placeholders(&zero.text);
    }

    #[test]
    fn hypernym_query_definition_block() {
        let set = TemplateSet::defaults();
        let bare = set.render_hypernym_query("aspirin", None).unwrap();
        assert!(!bare.text.contains("Definition:"));
        assert!(bare.text.contains("comma-separated"));
        let with = set
            .render_hypernym_query("aspirin", Some("a salicylate drug"))
            .unwrap();
        assert!(with.text.contains("Definition: a salicylate drug"));
        assert_eq!(with, set.render_hypernym_query("aspirin", Some("a salicylate drug")).unwrap());
    }

    #[test]
    fn plain_template_cannot_use_ontology_fields() {
        let err = Template::new("diverse", "About {concept}: {hypernyms}").unwrap_err();
        assert!(matches!(err, PromptError::ForbiddenPlaceholder { .. }));
        let err = Template::new("hypernym_query", "{term} {concept}").unwrap_err();
        assert!(matches!(err, PromptError::ForbiddenPlaceholder { .. }));
    }

    #[test]
    fn version_tracks_content() {
        let a = Template::new("diverse", "About {concept}.").unwrap();
        let b = Template::new("diverse", "About {concept}.").unwrap();
        let c = Template::new("diverse", "About {concept}!").unwrap();
        assert_eq!(a.version(), b.version());
        assert_ne!(a.version(), c.version());
    }

    #[test]
    fn definition_cleanup() {
        assert_eq!(clean_definition("Aspirin", "aspirin: a drug.\nmore"), "a drug.");
        assert_eq!(clean_definition("x", "\n  plain text  "), "plain text");
    }

    #[test]
    fn missing_template_is_an_error() {
        let set = TemplateSet::default();
        assert!(matches!(
            set.render_corpus_instruction(CorpusKind::Diverse, "x"),
            Err(PromptError::MissingTemplate(_))
        ));
    }

    #[test]
    fn load_dir_reads_known_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("diverse.txt"), "Card for {concept}.\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "{whatever}").unwrap();
        let set = TemplateSet::load_dir(dir.path()).unwrap();
        let p = set.render_corpus_instruction(CorpusKind::Diverse, "x").unwrap();
        assert_eq!(p.text, "Card for x.");
        assert!(set.get("conceptual").is_err());
    }

    #[test]
    fn empty_label_rejected() {
        let set = TemplateSet::defaults();
        assert!(set.render_corpus_instruction(CorpusKind::Diverse, "  ").is_err());
        assert!(set.render_hypernym_query("", None).is_err());
    }
}
