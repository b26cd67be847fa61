//! Ontology store: TSV ingestion, per-concept context assembly and
//! few-shot example retrieval.

mod load;
mod validate;

pub use load::load_ontology;
pub use validate::ValidationReport;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("{}:{line}: {reason}", file.display())]
    Malformed {
        file: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid concept id {0:?}")]
    InvalidId(String),
    #[error("duplicate concept id {0}")]
    DuplicateConcept(ConceptId),
    #[error("concept {child} references unknown hypernym {parent}")]
    DanglingHypernym { child: ConceptId, parent: ConceptId },
    #[error("self-loop at {0}")]
    SelfLoop(ConceptId),
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error("concept {0}: {1}")]
    InvalidConcept(ConceptId, String),
}

/// Opaque stable concept identifier (e.g. a SNOMED SCTID).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(id: impl Into<String>) -> Result<Self, OntologyError> {
        let id = id.into();
        if id.is_empty() || id.trim() != id {
            return Err(OntologyError::InvalidId(id));
        }
        Ok(ConceptId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ConceptId {
    type Error = OntologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ConceptId::new(s)
    }
}

impl From<ConceptId> for String {
    fn from(id: ConceptId) -> String {
        id.0
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub id: ConceptId,
    pub label: String,
    pub synonyms: Vec<String>,
    pub definition: Option<String>,
    pub hypernyms: Vec<ConceptId>,
}

impl Concept {
    pub fn new(id: ConceptId, label: impl Into<String>) -> Self {
        Concept {
            id,
            label: label.into(),
            synonyms: Vec::new(),
            definition: None,
            hypernyms: Vec::new(),
        }
    }

    fn check(&self) -> Result<(), OntologyError> {
        let bad = |msg: &str| Err(OntologyError::InvalidConcept(self.id.clone(), msg.into()));
        if self.label.trim().is_empty() {
            return bad("empty label");
        }
        if self.synonyms.iter().any(|s| s == &self.label) {
            return bad("label repeated among synonyms");
        }
        if self.hypernyms.contains(&self.id) {
            return Err(OntologyError::SelfLoop(self.id.clone()));
        }
        let unique: HashSet<_> = self.hypernyms.iter().collect();
        if unique.len() != self.hypernyms.len() {
            return bad("duplicate hypernym");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyStats {
    pub concepts: usize,
    pub definitions: usize,
    pub isa_edges: usize,
}

/// Immutable, validated concept map. Iteration order is sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyStore {
    concepts: BTreeMap<ConceptId, Concept>,
    stats: OntologyStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefinitionProvenance {
    Source,
    ModelCompleted,
}

/// Caps on the number of hypernym and synonym labels in a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextCaps {
    pub hypernyms: usize,
    pub synonyms: usize,
}

impl Default for ContextCaps {
    fn default() -> Self {
        ContextCaps {
            hypernyms: 8,
            synonyms: 8,
        }
    }
}

impl ContextCaps {
    pub fn unbounded() -> Self {
        ContextCaps {
            hypernyms: usize::MAX,
            synonyms: usize::MAX,
        }
    }
}

/// Ontology knowledge injected into a prompt for one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyContext {
    pub concept_label: String,
    pub definition: String,
    pub definition_provenance: DefinitionProvenance,
    pub hypernym_labels: Vec<String>,
    pub synonym_labels: Vec<String>,
}

impl OntologyStore {
    /// Builds a store from concepts, checking per-concept invariants and
    /// referential integrity. Cycles are accepted; see [`OntologyStore::validate`].
    pub fn from_concepts(concepts: Vec<Concept>) -> Result<Self, OntologyError> {
        let mut map = BTreeMap::new();
        for c in concepts {
            c.check()?;
            if map.contains_key(&c.id) {
                return Err(OntologyError::DuplicateConcept(c.id));
            }
            map.insert(c.id.clone(), c);
        }
        for c in map.values() {
            if let Some(parent) = c.hypernyms.iter().find(|h| !map.contains_key(*h)) {
                return Err(OntologyError::DanglingHypernym {
                    child: c.id.clone(),
                    parent: parent.clone(),
                });
            }
        }
        let stats = OntologyStats {
            concepts: map.len(),
            definitions: map.values().filter(|c| c.definition.is_some()).count(),
            isa_edges: map.values().map(|c| c.hypernyms.len()).sum(),
        };
        Ok(OntologyStore {
            concepts: map,
            stats,
        })
    }

    pub fn stats(&self) -> OntologyStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &ConceptId) -> Option<&Concept> {
        self.concepts.get(id)
    }

    fn require(&self, id: &ConceptId) -> Result<&Concept, OntologyError> {
        self.get(id)
            .ok_or_else(|| OntologyError::UnknownConcept(id.clone()))
    }

    /// Concepts in ascending id order.
    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    /// Concepts with no hypernyms.
    pub fn roots(&self) -> Vec<&ConceptId> {
        self.concepts
            .values()
            .filter(|c| c.hypernyms.is_empty())
            .map(|c| &c.id)
            .collect()
    }

    /// Direct children of `id`, in ascending id order.
    pub fn children(&self, id: &ConceptId) -> Vec<&ConceptId> {
        self.concepts
            .values()
            .filter(|c| c.hypernyms.contains(id))
            .map(|c| &c.id)
            .collect()
    }

    pub fn missing_definition_concepts(&self) -> Vec<ConceptId> {
        self.concepts
            .values()
            .filter(|c| c.definition.is_none())
            .map(|c| c.id.clone())
            .collect()
    }

    /// Assembles the ontology context of a concept. A source definition takes
    /// precedence over a model-completed one; lists keep stored order and are
    /// truncated to `caps`.
    pub fn ontology_context(
        &self,
        id: &ConceptId,
        completed_defs: &BTreeMap<ConceptId, String>,
        caps: ContextCaps,
    ) -> Result<OntologyContext, OntologyError> {
        let concept = self.require(id)?;
        let (definition, definition_provenance) = match (&concept.definition, completed_defs.get(id)) {
            (Some(d), _) => (d.clone(), DefinitionProvenance::Source),
            (None, Some(d)) if !d.trim().is_empty() => (d.clone(), DefinitionProvenance::ModelCompleted),
            _ => (String::new(), DefinitionProvenance::Source),
        };
        let hypernym_labels = concept
            .hypernyms
            .iter()
            .take(caps.hypernyms)
            .map(|h| self.concepts[h].label.clone())
            .collect();
        let synonym_labels = concept.synonyms.iter().take(caps.synonyms).cloned().collect();
        Ok(OntologyContext {
            concept_label: concept.label.clone(),
            definition,
            definition_provenance,
            hypernym_labels,
            synonym_labels,
        })
    }

    /// Up to `n` (label, definition) pairs from defined concepts near `id`:
    /// siblings first, then ancestors by distance, then every other defined
    /// concept by id. Never includes `id` itself.
    pub fn few_shot_examples(&self, id: &ConceptId, n: usize) -> Vec<(String, String)> {
        let mut order: Vec<&ConceptId> = Vec::new();
        let mut seen: HashSet<&ConceptId> = HashSet::from([id]);
        let Some(concept) = self.get(id) else {
            return Vec::new();
        };

        let siblings: BTreeSet<&ConceptId> = concept
            .hypernyms
            .iter()
            .flat_map(|h| self.children(h))
            .collect();
        for s in siblings {
            if seen.insert(s) {
                order.push(s);
            }
        }

        let mut queue: VecDeque<&ConceptId> = VecDeque::new();
        let mut visited: HashSet<&ConceptId> = HashSet::from([id]);
        let mut level: Vec<&ConceptId> = concept.hypernyms.iter().collect();
        while !level.is_empty() {
            level.sort();
            level.dedup();
            let mut next = Vec::new();
            for a in level {
                if !visited.insert(a) {
                    continue;
                }
                queue.push_back(a);
                next.extend(self.concepts[a].hypernyms.iter());
            }
            level = next;
        }
        for a in queue {
            if seen.insert(a) {
                order.push(a);
            }
        }

        for c in self.concepts.keys() {
            if seen.insert(c) {
                order.push(c);
            }
        }

        order
            .into_iter()
            .filter_map(|cid| {
                let c = &self.concepts[cid];
                c.definition
                    .as_ref()
                    .filter(|d| !d.trim().is_empty())
                    .map(|d| (c.label.clone(), d.clone()))
            })
            .take(n)
            .collect()
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }
}
