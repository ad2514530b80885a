use serde::{Deserialize, Serialize};

use crate::corpus::SnippetId;
use crate::error::{Error, Result};
use crate::selection::RankedList;

pub const DEFAULT_ROUGE_BETA: f64 = 1.2;

/// 1 if a gold id is ranked within the top `k`, else 0.
pub fn recall_at_k(ranked: &RankedList, gold: &[SnippetId], k: usize) -> f64 {
    match ranked.best_rank(gold) {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

/// Reciprocal rank of the best-ranked gold id, 0 beyond rank `k`.
pub fn mrr_at_k(ranked: &RankedList, gold: &[SnippetId], k: usize) -> f64 {
    match ranked.best_rank(gold) {
        Some(r) if r <= k => 1.0 / r as f64,
        _ => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Precision, recall and F1 of positive decisions; 0/0 counts as 0.
pub fn precision_recall_f1(decisions: &[bool], labels: &[bool]) -> Result<Prf> {
    if decisions.len() != labels.len() {
        return Err(Error::Usage(format!("{} decisions for {} labels", decisions.len(), labels.len())));
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fneg = 0.0;
    for (&d, &l) in decisions.iter().zip(labels) {
        match (d, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    Ok(Prf { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall) })
}

/// Clipped unigram precision times the brevity penalty
/// `exp(min(0, 1 − |ref|/|cand|))`. An empty candidate scores 0.
pub fn bleu1(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut ref_counts = std::collections::HashMap::new();
    for w in reference {
        *ref_counts.entry(w.as_str()).or_insert(0usize) += 1;
    }
    let mut clipped = 0usize;
    for w in candidate {
        if let Some(c) = ref_counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                clipped += 1;
            }
        }
    }
    let precision = clipped as f64 / candidate.len() as f64;
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64).min(0.0).exp();
    precision * bp
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1 + β²)PR / (R + β²P)`.
pub fn rouge_l_with_beta(candidate: &[String], reference: &[String], beta: f64) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    rouge_l_with_beta(candidate, reference, DEFAULT_ROUGE_BETA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::ScoreKind;

    fn t(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn ranked_with_gold_at(rank: usize) -> (RankedList, Vec<SnippetId>) {
        let items = (0..8).map(|i| (SnippetId::new("d", "e", i.to_string()), -(i as f64))).collect();
        let r = RankedList::from_scores(items, 8, ScoreKind::Similarity);
        let gold = vec![r.entries[rank - 1].id.clone()];
        (r, gold)
    }

    #[test]
    fn ranking_metrics() {
        let (r, g) = ranked_with_gold_at(1);
        assert_eq!((recall_at_k(&r, &g, 1), mrr_at_k(&r, &g, 5)), (1.0, 1.0));
        let (r, g) = ranked_with_gold_at(3);
        assert_eq!((recall_at_k(&r, &g, 1), recall_at_k(&r, &g, 5)), (0.0, 1.0));
        assert_eq!(mrr_at_k(&r, &g, 5), 1.0 / 3.0);
        let (r, g) = ranked_with_gold_at(6);
        assert_eq!((recall_at_k(&r, &g, 5), mrr_at_k(&r, &g, 5)), (0.0, 0.0));
    }

    #[test]
    fn prf_conventions() {
        let p = precision_recall_f1(&[true, false], &[true, false]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = precision_recall_f1(&[false, false], &[true, false]).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let mut dec = vec![true; 10];
        let mut lab = vec![true; 8];
        lab.extend([false, false]);
        dec.extend([false, false]);
        lab.extend([true, true]);
        let p = precision_recall_f1(&dec, &lab).unwrap();
        assert!((p.precision - 0.8).abs() < 1e-15 && (p.recall - 0.8).abs() < 1e-15 && (p.f1 - 0.8).abs() < 1e-15);
        assert!(precision_recall_f1(&[true], &[]).is_err());
    }

    #[test]
    fn text_metrics() {
        let c = t("a b c d");
        let r = t("a c");
        assert_eq!(bleu1(&c, &r), 0.5);
        assert_eq!(lcs_len(&c, &r), 2);
        let expected = (1.0 + 1.44) * 0.5 * 1.0 / (1.0 + 1.44 * 0.5);
        assert_eq!(rouge_l(&c, &r), expected);
        assert_eq!(bleu1(&r, &r), 1.0);
        assert_eq!(rouge_l(&r, &r), 1.0);
        assert_eq!(bleu1(&t("x y"), &r), 0.0);
        assert_eq!(rouge_l(&t("x y"), &r), 0.0);
        assert_eq!(bleu1(&[], &r), 0.0);
        // short candidate pays the brevity penalty
        assert!((bleu1(&t("a"), &t("a c")) - (-1.0f64).exp()).abs() < 1e-15);
    }
}
