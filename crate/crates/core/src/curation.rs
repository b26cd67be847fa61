//! Selection of the most inconsistent response pairs and emission of
//! training files.
//!
//! Emitted prompts are always the plain instruction: the trained model must
//! reproduce the ontology-guided response without seeing the ontology.

use crate::metrics::ScoreBreakdown;
use crate::ontology::ConceptId;
use crate::prompts::{CorpusKind, PromptText};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{self, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFlag {
    EmptyY,
    EmptyYOnto,
    Refusal,
}

const REFUSAL_PREFIXES: &[&str] = &[
    "i'm sorry",
    "i am sorry",
    "i cannot",
    "i can't",
    "i can not",
    "i apologize",
    "as an ai",
    "sorry, but",
    "i'm unable",
    "i am unable",
];

/// Heuristic: does the response open with a stock refusal?
pub fn looks_like_refusal(text: &str) -> bool {
    let head = text.trim_start().to_lowercase().replace('\u{2019}', "'");
    REFUSAL_PREFIXES.iter().any(|p| head.starts_with(p))
}

/// One concept × corpus kind with both responses and their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub concept_id: ConceptId,
    pub kind: CorpusKind,
    pub instruction: PromptText,
    pub onto_instruction: PromptText,
    pub y: String,
    pub y_onto: String,
    #[serde(default)]
    pub scores: Option<ScoreBreakdown>,
    #[serde(default)]
    pub flags: BTreeSet<RecordFlag>,
}

impl GenerationRecord {
    /// Builds a record, deriving flags from the two responses.
    pub fn new(
        concept_id: ConceptId,
        kind: CorpusKind,
        instruction: PromptText,
        onto_instruction: PromptText,
        y: String,
        y_onto: String,
    ) -> Self {
        let mut flags = BTreeSet::new();
        if y.trim().is_empty() {
            flags.insert(RecordFlag::EmptyY);
        }
        if y_onto.trim().is_empty() {
            flags.insert(RecordFlag::EmptyYOnto);
        }
        if looks_like_refusal(&y) || looks_like_refusal(&y_onto) {
            flags.insert(RecordFlag::Refusal);
        }
        GenerationRecord {
            concept_id,
            kind,
            instruction,
            onto_instruction,
            y,
            y_onto,
            scores: None,
            flags,
        }
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// Unflagged with both responses present.
    pub fn is_scorable(&self) -> bool {
        !self.is_flagged() && !self.y.trim().is_empty() && !self.y_onto.trim().is_empty()
    }

    pub fn hybrid(&self) -> Option<f64> {
        self.scores.map(|s| s.hybrid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoExample {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

impl From<&GenerationRecord> for SftExample {
    fn from(r: &GenerationRecord) -> Self {
        SftExample {
            instruction: r.instruction.text.clone(),
            input: String::new(),
            output: r.y_onto.clone(),
        }
    }
}

/// Lowest-scoring records per kind, in selection order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    per_kind: Vec<(CorpusKind, Vec<GenerationRecord>)>,
}

impl Selection {
    pub fn kind(&self, kind: CorpusKind) -> &[GenerationRecord] {
        self.per_kind
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| v.as_slice())
            .unwrap_or(&[])
    }

    /// All selected records, kinds in emission order.
    pub fn iter(&self) -> impl Iterator<Item = &GenerationRecord> {
        self.per_kind.iter().flat_map(|(_, v)| v.iter())
    }

    pub fn len(&self) -> usize {
        self.per_kind.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scored, unflagged records of `kind`, ascending by hybrid score with ties
/// broken by concept id.
pub fn ranked(records: &[GenerationRecord], kind: CorpusKind) -> Vec<&GenerationRecord> {
    let mut pool: Vec<&GenerationRecord> = records
        .iter()
        .filter(|r| r.kind == kind && r.is_scorable() && r.scores.is_some())
        .collect();
    pool.sort_by(|a, b| {
        let (sa, sb) = (a.hybrid().unwrap(), b.hybrid().unwrap());
        sa.total_cmp(&sb).then_with(|| a.concept_id.cmp(&b.concept_id))
    });
    pool
}

/// Selects the `k` lowest-scoring records independently for each kind.
pub fn rank_and_select(records: &[GenerationRecord], k: usize) -> Selection {
    assert!(k >= 1, "k must be at least 1");
    Selection {
        per_kind: CorpusKind::ALL
            .into_iter()
            .map(|kind| {
                let chosen = ranked(records, kind).into_iter().take(k).cloned().collect();
                (kind, chosen)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub concept_id: ConceptId,
    pub kind: CorpusKind,
    pub hybrid: Option<f64>,
    pub rank: Option<usize>,
    pub selected: bool,
    pub flags: BTreeSet<RecordFlag>,
}

/// Audit listing of every record: rank within its kind (1-based, absent for
/// unscored records) and whether it was selected.
pub fn selection_manifest(records: &[GenerationRecord], k: usize) -> Vec<SelectionEntry> {
    let mut out = Vec::with_capacity(records.len());
    for kind in CorpusKind::ALL {
        let order = ranked(records, kind);
        for (i, r) in order.iter().enumerate() {
            out.push(SelectionEntry {
                concept_id: r.concept_id.clone(),
                kind,
                hybrid: r.hybrid(),
                rank: Some(i + 1),
                selected: i < k,
                flags: r.flags.clone(),
            });
        }
        let mut rest: Vec<&GenerationRecord> = records
            .iter()
            .filter(|r| r.kind == kind && !(r.is_scorable() && r.scores.is_some()))
            .collect();
        rest.sort_by(|a, b| a.concept_id.cmp(&b.concept_id));
        out.extend(rest.into_iter().map(|r| SelectionEntry {
            concept_id: r.concept_id.clone(),
            kind,
            hybrid: r.hybrid(),
            rank: None,
            selected: false,
            flags: r.flags.clone(),
        }));
    }
    out
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> io::Result<usize> {
    let mut buf = Vec::new();
    let mut n = 0;
    for row in rows {
        serde_json::to_writer(&mut buf, &row)?;
        buf.push(b'\n');
        n += 1;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    Ok(n)
}

/// Writes `{instruction, input, output}` lines; returns the line count.
pub fn emit_sft(selection: &Selection, path: &Path) -> io::Result<usize> {
    write_jsonl(path, selection.iter().map(SftExample::from))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoSummary {
    pub written: usize,
    /// Records whose two responses are byte-identical.
    pub skipped_identical: usize,
}

/// Writes `{prompt, chosen, rejected}` lines with the ontology-guided
/// response preferred.
pub fn emit_dpo(selection: &Selection, path: &Path) -> io::Result<DpoSummary> {
    let skipped_identical = selection.iter().filter(|r| r.y == r.y_onto).count();
    let written = write_jsonl(
        path,
        selection.iter().filter(|r| r.y != r.y_onto).map(|r| DpoExample {
            prompt: r.instruction.text.clone(),
            chosen: r.y_onto.clone(),
            rejected: r.y.clone(),
        }),
    )?;
    Ok(DpoSummary {
        written,
        skipped_identical,
    })
}

/// Selected records whose emitted prompt contains any ontology sentinel.
pub fn impure_instructions<'a>(selection: &'a Selection, sentinels: &[String]) -> Vec<&'a GenerationRecord> {
    selection
        .iter()
        .filter(|r| sentinels.iter().any(|s| r.instruction.text.contains(s.as_str())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    RougeL,
    Bleu4,
    Hybrid,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Cosine, Metric::RougeL, Metric::Bleu4, Metric::Hybrid];

    /// Closed value range of the metric.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Cosine => (-1.0, 1.0),
            Metric::RougeL | Metric::Bleu4 => (0.0, 1.0),
            Metric::Hybrid => (-1.0, 3.0),
        }
    }

    pub fn of(self, s: &ScoreBreakdown) -> f64 {
        match self {
            Metric::Cosine => s.cosine,
            Metric::RougeL => s.rouge_l,
            Metric::Bleu4 => s.bleu_4,
            Metric::Hybrid => s.hybrid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub metric: Metric,
    /// `"all"` or a corpus kind.
    pub scope: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Uniform bins over the metric's range. Bins are right-open except the
/// last, which is closed; out-of-range drift is clamped into the range.
pub fn histogram(metric: Metric, scope: &str, values: &[f64], bin_width: f64) -> ScoreHistogram {
    assert!(bin_width > 0.0 && bin_width.is_finite(), "bin width must be positive");
    let (lo, hi) = metric.range();
    let raw = (hi - lo) / bin_width;
    let mut n = raw.round();
    if (raw - n).abs() > 1e-9 {
        n = raw.ceil();
    }
    let n = (n as usize).max(1);
    let mut edges: Vec<f64> = (0..n).map(|i| lo + i as f64 * bin_width).collect();
    edges.push(hi);
    let mut counts = vec![0u64; n];
    for &v in values {
        let v = v.clamp(lo, hi);
        let mut idx = (((v - lo) / bin_width).floor() as usize).min(n - 1);
        while idx > 0 && v < edges[idx] {
            idx -= 1;
        }
        while idx + 1 < n && v >= edges[idx + 1] {
            idx += 1;
        }
        counts[idx] += 1;
    }
    ScoreHistogram {
        metric,
        scope: scope.to_owned(),
        bin_edges: edges,
        counts,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Population standard deviation.
    pub stdev: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

pub fn summary_stats(values: &[f64]) -> SummaryStats {
    let n = values.len();
    if n == 0 {
        return SummaryStats {
            n,
            mean: None,
            median: None,
            stdev: None,
            min: None,
            max: None,
        };
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    SummaryStats {
        n,
        mean: Some(mean),
        median: Some(median),
        stdev: Some(var.sqrt()),
        min: sorted.first().copied(),
        max: sorted.last().copied(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub metric: Metric,
    pub scope: String,
    pub stats: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bin_width: f64,
    pub scored_records: usize,
    pub unscored_records: usize,
    pub histograms: Vec<ScoreHistogram>,
    pub stats: Vec<StatsRow>,
}

/// Distribution of consistency scores over all scored records and per kind.
pub fn score_report(records: &[GenerationRecord], bin_width: f64) -> ScoreReport {
    let scored: Vec<&GenerationRecord> = records.iter().filter(|r| r.scores.is_some()).collect();
    let mut scopes: Vec<(String, Vec<&GenerationRecord>)> = vec![("all".to_owned(), scored.clone())];
    for kind in CorpusKind::ALL {
        scopes.push((
            kind.as_str().to_owned(),
            scored.iter().copied().filter(|r| r.kind == kind).collect(),
        ));
    }
    let mut histograms = Vec::new();
    let mut stats = Vec::new();
    for (scope, recs) in &scopes {
        for metric in Metric::ALL {
            let values: Vec<f64> = recs.iter().map(|r| metric.of(r.scores.as_ref().unwrap())).collect();
            histograms.push(histogram(metric, scope, &values, bin_width));
            stats.push(StatsRow {
                metric,
                scope: scope.clone(),
                stats: summary_stats(&values),
            });
        }
    }
    ScoreReport {
        bin_width,
        scored_records: scored.len(),
        unscored_records: records.len() - scored.len(),
        histograms,
        stats,
    }
}
