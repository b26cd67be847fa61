//! Word-level similarity metrics and the hybrid inconsistency score.
//!
//! The hybrid score of a response pair is `cosine + ROUGE-L + BLEU-4`, with
//! the plain response as candidate and the ontology-guided response as
//! reference. Low scores mark pairs whose responses disagree most.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Value substituted for a zero n-gram precision before taking logs.
pub const BLEU_EPSILON: f64 = 1e-9;

const BLEU_MAX_ORDER: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite vector entry")]
    NonFinite,
}

/// A lowercased, punctuation-trimmed token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    /// Builds a sequence from raw tokens, dropping empty strings.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(
            tokens
                .into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercases, splits on whitespace and strips leading/trailing ASCII
/// punctuation from each token. Inner punctuation is kept.
pub fn tokenize(text: &str) -> TokenSeq {
    let lowered = text.to_lowercase();
    TokenSeq(
        lowered
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect(),
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // Two rolling rows over the shorter sequence.
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// ROUGE-L F-measure (beta = 1) over whole-text token LCS.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate.tokens(), reference.tokens());
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence-level BLEU-4 with uniform weights, add-epsilon smoothing for
/// zero precisions and the standard brevity penalty.
pub fn bleu_4(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    let c = candidate.len();
    if c == 0 {
        return 0.0;
    }
    let r = reference.len();
    let mut log_sum = 0.0;
    for n in 1..=BLEU_MAX_ORDER {
        let cand = ngram_counts(candidate.tokens(), n);
        let refs = ngram_counts(reference.tokens(), n);
        let total = c.saturating_sub(n - 1);
        let clipped: usize = cand
            .iter()
            .map(|(gram, &count)| count.min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        let p = if total == 0 || clipped == 0 {
            BLEU_EPSILON
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln() / BLEU_MAX_ORDER as f64;
    }
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * log_sum.exp()
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::DimMismatch(u.len(), v.len()));
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu2: f64 = u.iter().map(|a| a * a).sum();
    let nv2: f64 = v.iter().map(|a| a * a).sum();
    if nu2 == 0.0 || nv2 == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    // sqrt of the product keeps cosine(u, u) at exactly 1.
    Ok((dot / (nu2 * nv2).sqrt()).clamp(-1.0, 1.0))
}

/// Component scores of one response pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub cosine: f64,
    pub rouge_l: f64,
    pub bleu_4: f64,
    pub hybrid: f64,
}

impl ScoreBreakdown {
    pub fn from_components(cosine: f64, rouge_l: f64, bleu_4: f64) -> Self {
        ScoreBreakdown {
            cosine,
            rouge_l,
            bleu_4,
            hybrid: cosine + rouge_l + bleu_4,
        }
    }
}

/// Scores the plain response `y` (candidate) against the ontology-guided
/// response `y_onto` (reference).
pub fn hybrid_score(
    y: &str,
    y_onto: &str,
    e_y: &[f64],
    e_yo: &[f64],
) -> Result<ScoreBreakdown, MetricError> {
    let cos = cosine(e_y, e_yo)?;
    let cand = tokenize(y);
    let reference = tokenize(y_onto);
    Ok(ScoreBreakdown::from_components(
        cos,
        rouge_l(&cand, &reference),
        bleu_4(&cand, &reference),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> TokenSeq {
        TokenSeq::from_tokens(s.split_whitespace())
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("The cat, sat."), seq("the cat sat"));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("state-of-the-art"), seq("state-of-the-art"));
        assert_eq!(tokenize("ÉCOLE ... (x)"), seq("école x"));
    }

    #[test]
    fn rouge_l_examples() {
        assert_eq!(rouge_l(&seq("a b c"), &seq("a b c")), 1.0);
        let f = rouge_l(&seq("the cat sat on mat"), &seq("the cat lay on mat"));
        assert!((f - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l(&seq("a b"), &seq("c d")), 0.0);
        assert_eq!(rouge_l(&seq(""), &seq("c d")), 0.0);
    }

    #[test]
    fn bleu_examples() {
        assert!((bleu_4(&seq("a b c d e"), &seq("a b c d e")) - 1.0).abs() < 1e-15);
        let short = bleu_4(&seq("a b c d"), &seq("a b c d e"));
        assert!((short - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
        assert!((short - 0.7788).abs() < 1e-4);
        assert_eq!(bleu_4(&seq(""), &seq("a")), 0.0);
    }

    #[test]
    fn short_identical_sequences_are_smoothed() {
        // 3 tokens: p1..p3 = 1, p4 has no candidate 4-grams.
        let s = seq("a b c");
        let expected = (BLEU_EPSILON.ln() / 4.0).exp();
        assert!((bleu_4(&s, &s) - expected).abs() < 1e-15);
        assert!(bleu_4(&s, &s) < 1.0);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, -3.0], &[-1.0, 3.0]).unwrap(), -1.0);
        assert_eq!(cosine(&[1.0], &[1.0, 2.0]), Err(MetricError::DimMismatch(1, 2)));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), Err(MetricError::ZeroNorm));
        assert_eq!(cosine(&[f64::NAN], &[1.0]), Err(MetricError::NonFinite));
    }

    #[test]
    fn hybrid_identical_is_three() {
        let e = [0.3, -0.2, 0.9];
        let s = hybrid_score("the cat sat on the mat", "the cat sat on the mat", &e, &e).unwrap();
        assert_eq!(s.hybrid, 3.0);
    }

    #[test]
    fn hybrid_disjoint_orthogonal_is_near_zero() {
        let s = hybrid_score("alpha beta gamma delta", "one two three four", &[1.0, 0.0], &[0.0, 1.0])
            .unwrap();
        assert_eq!(s.cosine, 0.0);
        assert_eq!(s.rouge_l, 0.0);
        assert!(s.hybrid >= 0.0 && s.hybrid < 1e-6);
    }
}
