use super::{ConceptId, OntologyStore};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

/// Structural warnings over the is-a graph. None of these are load errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub roots: Vec<ConceptId>,
    pub self_loops: Vec<ConceptId>,
    /// Strongly connected components of size > 1, each sorted by id.
    pub cycles: Vec<Vec<ConceptId>>,
    /// Concepts with no hypernym path to a root.
    pub orphans: Vec<ConceptId>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.self_loops.is_empty() && self.cycles.is_empty() && self.orphans.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} cycles, {} orphans",
            self.cycles.len(),
            self.orphans.len()
        )?;
        if !self.self_loops.is_empty() {
            write!(f, ", {} self-loops", self.self_loops.len())?;
        }
        Ok(())
    }
}

pub(super) fn validate(store: &OntologyStore) -> ValidationReport {
    let mut graph = DiGraph::<&ConceptId, ()>::new();
    let index: BTreeMap<&ConceptId, _> = store
        .concepts()
        .map(|c| (&c.id, graph.add_node(&c.id)))
        .collect();
    let mut self_loops = Vec::new();
    let mut children: BTreeMap<&ConceptId, Vec<&ConceptId>> = BTreeMap::new();
    for c in store.concepts() {
        for h in &c.hypernyms {
            if h == &c.id {
                self_loops.push(c.id.clone());
            }
            graph.add_edge(index[&c.id], index[h], ());
            children.entry(h).or_default().push(&c.id);
        }
    }

    let mut cycles: Vec<Vec<ConceptId>> = tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1)
        .map(|scc| {
            let mut ids: Vec<ConceptId> = scc.into_iter().map(|n| graph[n].clone()).collect();
            ids.sort();
            ids
        })
        .collect();
    cycles.sort();

    let roots: Vec<ConceptId> = store.roots().into_iter().cloned().collect();
    let mut reached: BTreeSet<&ConceptId> = BTreeSet::new();
    let mut queue: VecDeque<&ConceptId> = roots.iter().collect();
    while let Some(id) = queue.pop_front() {
        if !reached.insert(id) {
            continue;
        }
        if let Some(kids) = children.get(id) {
            queue.extend(kids.iter().copied());
        }
    }
    let orphans = store
        .concepts()
        .map(|c| &c.id)
        .filter(|id| !reached.contains(id))
        .cloned()
        .collect();

    ValidationReport {
        roots,
        self_loops,
        cycles,
        orphans,
    }
}
