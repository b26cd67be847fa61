use super::manifest::{io_err, write_atomic};
use super::*;
use crate::curation::{
    emit_dpo, emit_sft, impure_instructions, rank_and_select, score_report, selection_manifest, GenerationRecord,
    SelectionEntry,
};
use crate::gateway::{GatewayError, GenerationResult};
use crate::metrics::hybrid_score;
use crate::ontology::{load_ontology, Concept, ConceptId, DefinitionProvenance, OntologyStats, OntologyStore, ValidationReport};
use crate::prompts::{clean_definition, CorpusKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub(super) type Counts = BTreeMap<String, u64>;

/// Contents of `ontology.json`.
#[derive(Debug, Serialize, Deserialize)]
struct OntologySnapshot {
    stats: OntologyStats,
    validation: ValidationReport,
    concepts: Vec<Concept>,
}

/// One line of `completed_definitions.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
struct CompletedDefinition {
    concept_id: ConceptId,
    label: String,
    definition: String,
    provenance: DefinitionProvenance,
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("row serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn counts<const N: usize>(pairs: [(&str, usize); N]) -> Counts {
    pairs.into_iter().map(|(k, v)| (k.to_owned(), v as u64)).collect()
}

impl Pipeline {
    pub(super) fn run_one(&self, stage: Stage) -> Result<Counts, PipelineError> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::CompleteDefs => self.complete_definitions(),
            Stage::Generate => self.generate(),
            Stage::Score => self.score(),
            Stage::Select => self.select(),
            Stage::Emit => self.emit(),
            Stage::Report => self.report(),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    fn load_store(&self) -> Result<OntologyStore, PipelineError> {
        let snap: OntologySnapshot = read_json(&self.out(ONTOLOGY_FILE))?;
        Ok(OntologyStore::from_concepts(snap.concepts)?)
    }

    fn ingest(&self) -> Result<Counts, PipelineError> {
        let c = &self.config;
        let store = load_ontology(c.concepts_path()?, c.relations_path()?, c.ontology.descriptions.as_deref())?;
        let validation = store.validate();
        if !validation.is_clean() {
            tracing::warn!(%validation, "ontology has structural issues");
        }
        let stats = store.stats();
        let missing = store.missing_definition_concepts().len();
        let counts = counts([
            ("concepts", stats.concepts),
            ("definitions", stats.definitions),
            ("isa_edges", stats.isa_edges),
            ("missing_definitions", missing),
            ("cycles", validation.cycles.len()),
            ("orphans", validation.orphans.len()),
        ]);
        let snap = OntologySnapshot {
            stats,
            validation,
            concepts: store.concepts().cloned().collect(),
        };
        write_json(&self.out(ONTOLOGY_FILE), &snap)?;
        Ok(counts)
    }

    fn complete_definitions(&self) -> Result<Counts, PipelineError> {
        let store = self.load_store()?;
        let missing = store.missing_definition_concepts();
        let labels: Vec<&str> = missing
            .iter()
            .map(|id| store.get(id).map(|c| c.label.as_str()).unwrap_or_default())
            .collect();
        let prompts = missing
            .iter()
            .zip(&labels)
            .map(|(id, label)| {
                let examples = store.few_shot_examples(id, self.config.few_shot);
                self.templates.render_definition_completion(label, &examples)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let results = self
            .gateway
            .generate_batch(&prompts, &self.config.generation, self.config.parallelism);

        let mut rows = Vec::new();
        let mut empty = 0;
        for ((id, label), res) in missing.iter().zip(&labels).zip(results) {
            let text = match res {
                Ok(r) => clean_definition(label, &r.text),
                Err(GatewayError::EmptyCompletion) => String::new(),
                Err(source) => {
                    return Err(PipelineError::Backend {
                        context: format!("definition completion for {id}"),
                        source,
                    })
                }
            };
            if text.is_empty() {
                empty += 1;
                continue;
            }
            rows.push(CompletedDefinition {
                concept_id: id.clone(),
                label: (*label).to_owned(),
                definition: text,
                provenance: DefinitionProvenance::ModelCompleted,
            });
        }
        write_jsonl(&self.out(DEFINITIONS_FILE), &rows)?;
        Ok(counts([
            ("requested", missing.len()),
            ("completed", rows.len()),
            ("empty", empty),
        ]))
    }

    fn generate(&self) -> Result<Counts, PipelineError> {
        let store = self.load_store()?;
        let defs: BTreeMap<ConceptId, String> = read_jsonl::<CompletedDefinition>(&self.out(DEFINITIONS_FILE))?
            .into_iter()
            .map(|d| (d.concept_id, d.definition))
            .collect();

        let mut slots = Vec::new();
        let mut prompts = Vec::new();
        for concept in store.concepts() {
            let ctx = store.ontology_context(&concept.id, &defs, self.config.caps)?;
            for kind in CorpusKind::ALL {
                let plain = self.templates.render_corpus_instruction(kind, &concept.label)?;
                let onto = self.templates.render_corpus_instruction_with_ontology(kind, &ctx)?;
                slots.push((concept.id.clone(), kind, plain.clone(), onto.clone()));
                prompts.push(plain);
                prompts.push(onto);
            }
        }
        let mut results = self
            .gateway
            .generate_batch(&prompts, &self.config.generation, self.config.parallelism)
            .into_iter();
        let mut take = |id: &ConceptId, kind: CorpusKind, which: &str| -> Result<String, PipelineError> {
            match results.next().expect("one result per prompt") {
                Ok(GenerationResult { text, .. }) => Ok(text),
                Err(GatewayError::EmptyCompletion) => Ok(String::new()),
                Err(source) => Err(PipelineError::Backend {
                    context: format!("{which} response for {id}/{kind}"),
                    source,
                }),
            }
        };

        let mut records = Vec::with_capacity(slots.len());
        for (id, kind, plain, onto) in slots {
            let y = take(&id, kind, "plain")?;
            let y_onto = take(&id, kind, "ontology-guided")?;
            records.push(GenerationRecord::new(id, kind, plain, onto, y, y_onto));
        }
        let flagged = records.iter().filter(|r| r.is_flagged()).count();
        write_jsonl(&self.out(GENERATIONS_FILE), &records)?;
        Ok(counts([
            ("concepts", store.len()),
            ("records", records.len()),
            ("flagged", flagged),
        ]))
    }

    fn score(&self) -> Result<Counts, PipelineError> {
        let mut records: Vec<GenerationRecord> = read_jsonl(&self.out(GENERATIONS_FILE))?;
        let scorable: Vec<usize> = (0..records.len()).filter(|&i| records[i].is_scorable()).collect();
        let texts: Vec<String> = scorable
            .iter()
            .flat_map(|&i| [records[i].y.clone(), records[i].y_onto.clone()])
            .collect();
        let mut embeddings = self.gateway.embed_batch(&texts, self.config.parallelism).into_iter();

        let mut unscorable = 0;
        for r in records.iter_mut() {
            r.scores = None;
        }
        for &i in &scorable {
            let r = &mut records[i];
            let mut next = || {
                embeddings.next().expect("one embedding per text").map_err(|source| PipelineError::Backend {
                    context: format!("embedding for {}/{}", r.concept_id, r.kind),
                    source,
                })
            };
            let e_y = next()?;
            let e_yo = next()?;
            match hybrid_score(&r.y, &r.y_onto, &e_y.vector, &e_yo.vector) {
                Ok(s) => r.scores = Some(s),
                Err(e) => {
                    tracing::warn!(concept = %r.concept_id, kind = %r.kind, error = %e, "record left unscored");
                    unscorable += 1;
                }
            }
        }
        write_jsonl(&self.out(SCORES_FILE), &records)?;
        Ok(counts([
            ("scored", scorable.len() - unscorable),
            ("unscored", records.len() - scorable.len() + unscorable),
            ("embeddings", texts.len()),
        ]))
    }

    fn select(&self) -> Result<Counts, PipelineError> {
        let records: Vec<GenerationRecord> = read_jsonl(&self.out(SCORES_FILE))?;
        let entries = selection_manifest(&records, self.config.k);
        write_json(&self.out(SELECTION_FILE), &entries)?;
        let mut c = Counts::new();
        for kind in CorpusKind::ALL {
            let n = entries.iter().filter(|e| e.kind == kind && e.selected).count();
            c.insert(format!("selected_{kind}"), n as u64);
        }
        c.insert("entries".into(), entries.len() as u64);
        Ok(c)
    }

    fn emit(&self) -> Result<Counts, PipelineError> {
        let records: Vec<GenerationRecord> = read_jsonl(&self.out(SCORES_FILE))?;
        let entries: Vec<SelectionEntry> = read_json(&self.out(SELECTION_FILE))?;
        let selection = rank_and_select(&records, self.config.k);
        let listed: Vec<(&ConceptId, CorpusKind)> = entries
            .iter()
            .filter(|e| e.selected)
            .map(|e| (&e.concept_id, e.kind))
            .collect();
        let actual: Vec<(&ConceptId, CorpusKind)> = selection.iter().map(|r| (&r.concept_id, r.kind)).collect();
        if listed != actual {
            return Err(PipelineError::Data(format!(
                "{SELECTION_FILE} does not match {SCORES_FILE}; re-run the select stage"
            )));
        }

        let sentinels: Vec<String> = CorpusKind::ALL
            .iter()
            .filter_map(|k| self.templates.ontology_sentinel(*k))
            .collect();
        if let Some(r) = impure_instructions(&selection, &sentinels).first() {
            return Err(PipelineError::Data(format!(
                "plain instruction for {}/{} contains an ontology block",
                r.concept_id, r.kind
            )));
        }

        let sft_path = self.out(SFT_FILE);
        let sft = emit_sft(&selection, &sft_path).map_err(|e| io_err(&sft_path, e))?;
        let dpo_path = self.out(DPO_FILE);
        let dpo = emit_dpo(&selection, &dpo_path).map_err(|e| io_err(&dpo_path, e))?;
        Ok(counts([
            ("sft_examples", sft),
            ("dpo_examples", dpo.written),
            ("dpo_skipped_identical", dpo.skipped_identical),
        ]))
    }

    fn report(&self) -> Result<Counts, PipelineError> {
        let records: Vec<GenerationRecord> = read_jsonl(&self.out(SCORES_FILE))?;
        let report = score_report(&records, self.config.bin_width);
        write_json(&self.out(REPORT_FILE), &report)?;
        Ok(counts([
            ("scored_records", report.scored_records),
            ("unscored_records", report.unscored_records),
        ]))
    }
}
