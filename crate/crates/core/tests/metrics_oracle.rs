mod common;

use common::*;
use ontoforge::metrics::{bleu_4, cosine, hybrid_score, rouge_l, tokenize, TokenSeq};
use proptest::prelude::*;

fn seq(tokens: &[String]) -> TokenSeq {
    TokenSeq::from_tokens(tokens.iter().cloned())
}

/// Small vocabulary so random pairs share n-grams often.
fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 0..=max)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

#[test]
fn frozen_oracle_values() {
    let cand = toks(&["the", "cat", "sat", "on", "the", "mat"]);
    let reference = toks(&["the", "cat", "is", "on", "the", "mat"]);
    assert_eq!(oracle_lcs(&cand, &reference), 5);
    assert!((oracle_rouge_l(&cand, &reference) - 10.0 / 12.0).abs() < 1e-15);
    assert!((oracle_bleu_4(&cand, &reference) - 0.00334370152488211).abs() < 1e-15);
    assert!((bleu_4(&seq(&cand), &seq(&reference)) - 0.00334370152488211).abs() < 1e-12);

    let short = toks(&["x", "y", "z"]);
    assert!((oracle_bleu_4(&short, &short) - 0.005623413251903491).abs() < 1e-15);
    assert!((bleu_4(&seq(&short), &seq(&short)) - 0.005623413251903491).abs() < 1e-12);

    let four = toks(&["a", "b", "c", "d"]);
    let five = toks(&["a", "b", "c", "d", "e"]);
    assert!((oracle_bleu_4(&four, &five) - 0.7788007830714049).abs() < 1e-15);
}

#[test]
fn documented_examples() {
    let c = tokenize("the cat sat on mat");
    let r = tokenize("the cat lay on mat");
    assert!((rouge_l(&c, &r) - 0.8).abs() < 1e-12);
    assert_eq!(rouge_l(&tokenize("a b"), &tokenize("c d")), 0.0);
    assert_eq!(bleu_4(&tokenize(""), &tokenize("a b")), 0.0);
    let s = tokenize("one two three four five");
    assert_eq!(bleu_4(&s, &s), 1.0);
    assert_eq!(rouge_l(&s, &s), 1.0);
}

#[test]
fn disjoint_orthogonal_pair_is_near_zero() {
    let s = hybrid_score("alpha beta gamma delta", "one two three four", &[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert_eq!(s.cosine, 0.0);
    assert_eq!(s.rouge_l, 0.0);
    assert!(s.hybrid >= 0.0 && s.hybrid < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn rouge_and_bleu_match_oracles(a in tokens(30), b in tokens(30)) {
        let (sa, sb) = (seq(&a), seq(&b));
        prop_assert!((rouge_l(&sa, &sb) - oracle_rouge_l(&a, &b)).abs() <= 1e-12);
        prop_assert!((bleu_4(&sa, &sb) - oracle_bleu_4(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn rouge_symmetric_for_equal_lengths(pair in (0usize..=30).prop_flat_map(|n| {
        let v = prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), n);
        (v.clone(), v)
    })) {
        let a: Vec<String> = pair.0.into_iter().map(String::from).collect();
        let b: Vec<String> = pair.1.into_iter().map(String::from).collect();
        prop_assert_eq!(rouge_l(&seq(&a), &seq(&b)), rouge_l(&seq(&b), &seq(&a)));
    }

    #[test]
    fn self_similarity(a in tokens(30)) {
        let s = seq(&a);
        if !a.is_empty() {
            prop_assert_eq!(rouge_l(&s, &s), 1.0);
        }
        if a.len() >= 4 {
            prop_assert!((bleu_4(&s, &s) - 1.0).abs() <= 1e-12);
        } else if !a.is_empty() {
            let b = bleu_4(&s, &s);
            prop_assert!(b < 1.0);
            prop_assert!((b - oracle_bleu_4(&a, &a)).abs() <= 1e-12);
        }
    }

    #[test]
    fn hybrid_range_and_exact_sum(
        y in "[a-e ]{0,40}",
        yo in "[a-e ]{0,40}",
        u in prop::collection::vec(-1.0f64..1.0, 8),
        v in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        prop_assume!(u.iter().any(|x| *x != 0.0) && v.iter().any(|x| *x != 0.0));
        let s = hybrid_score(&y, &yo, &u, &v).unwrap();
        prop_assert!(s.hybrid >= -1.0 - 1e-9 && s.hybrid <= 3.0 + 1e-9);
        prop_assert_eq!(s.hybrid.to_bits(), (s.cosine + s.rouge_l + s.bleu_4).to_bits());
        prop_assert_eq!(s, hybrid_score(&y, &yo, &u, &v).unwrap());
        prop_assert_eq!(s.cosine, cosine(&u, &v).unwrap());
    }
}
