//! Retrieval-augmented generation: the selected snippet is a latent
//! variable, marginalized over the renormalized top-n of a ranking.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{DialogContext, KnowledgeBase, Snippet, SnippetId};
use crate::error::{Error, Result};
use crate::generation::decode::{decode_with, DecodeConfig};
use crate::generation::model::{softmax, GeneratorModel};
use crate::selection::{RankedList, ScoreKind};

pub const DEFAULT_TOP_N: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    SoftmaxOverScores,
    ProportionalOverProbs,
}

impl Calibration {
    /// Softmax for similarities, proportional for probabilities.
    pub fn for_scores(kind: ScoreKind) -> Self {
        match kind {
            ScoreKind::Similarity => Calibration::SoftmaxOverScores,
            ScoreKind::Probability => Calibration::ProportionalOverProbs,
        }
    }

    pub fn apply(self, scores: &[f64]) -> Vec<f64> {
        match self {
            Calibration::SoftmaxOverScores => softmax(scores),
            Calibration::ProportionalOverProbs => {
                let sum: f64 = scores.iter().sum();
                if sum > 0.0 {
                    scores.iter().map(|s| s / sum).collect()
                } else {
                    vec![1.0 / scores.len() as f64; scores.len()]
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RagPosterior {
    pub entries: Vec<(SnippetId, f64)>,
    pub n: usize,
}

impl RagPosterior {
    /// All mass on one snippet.
    pub fn single(id: SnippetId) -> Self {
        Self { entries: vec![(id, 1.0)], n: 1 }
    }

    pub fn to_json(&self) -> Value {
        json!(self.entries.iter().map(|(id, p)| json!({"id": id.to_string(), "p": p})).collect::<Vec<_>>())
    }

    fn resolve<'kb>(&self, kb: &'kb KnowledgeBase) -> Result<Vec<(&'kb Snippet, f64)>> {
        self.entries
            .iter()
            .map(|(id, p)| {
                kb.get(id)
                    .map(|s| (s, *p))
                    .ok_or_else(|| Error::Integrity(format!("posterior snippet {id} not in knowledge base")))
            })
            .collect()
    }
}

/// Keeps the top `n` entries of `ranked` and renormalizes their scores.
pub fn renormalize_topn(ranked: &RankedList, n: usize, calibration: Calibration) -> Result<RagPosterior> {
    if ranked.is_empty() {
        return Err(Error::Usage("cannot build a posterior from an empty ranking".into()));
    }
    if n == 0 {
        return Err(Error::Usage("n must be at least 1".into()));
    }
    let top = &ranked.entries[..n.min(ranked.len())];
    let scores: Vec<f64> = top.iter().map(|e| e.score).collect();
    let probs = calibration.apply(&scores);
    Ok(RagPosterior { entries: top.iter().map(|e| e.id.clone()).zip(probs).collect(), n })
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log Σ_k p̃(k) · p(response | ctx, k)`, in log space.
pub fn rag_sequence_logprob(
    g: &GeneratorModel,
    posterior: &RagPosterior,
    kb: &KnowledgeBase,
    ctx: &DialogContext,
    response: &[usize],
) -> Result<f64> {
    let terms: Vec<f64> = posterior
        .resolve(kb)?
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(s, p)| p.ln() + g.sequence_logprob(ctx, s, response))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Token-level mixture decoding with the posterior fixed for the whole
/// decode. Each component applies the repetition penalty before mixing.
pub fn rag_decode(
    g: &GeneratorModel,
    posterior: &RagPosterior,
    kb: &KnowledgeBase,
    ctx: &DialogContext,
    cfg: &DecodeConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let comps: Vec<_> = posterior
        .resolve(kb)?
        .into_iter()
        .map(|(s, p)| (g.condition(ctx, s), p))
        .collect();
    Ok(decode_with(|prefix| mixture(g, &comps, prefix, cfg.repetition_penalty), cfg))
}

pub(crate) fn mixture(g: &GeneratorModel, comps: &[(crate::encoder::Embedding, f64)], prefix: &[usize], penalty: f64) -> Vec<f64> {
    let mut out = vec![0.0; g.vocab_size()];
    for (h, p) in comps {
        for (o, q) in out.iter_mut().zip(g.step_dist(prefix, h, penalty)) {
            *o += p * q;
        }
    }
    out
}

/// Mixture next-token distribution for `prefix`; exposed for inspection.
pub fn rag_next_token_dist(
    g: &GeneratorModel,
    posterior: &RagPosterior,
    kb: &KnowledgeBase,
    ctx: &DialogContext,
    prefix: &[usize],
    penalty: f64,
) -> Result<Vec<f64>> {
    let comps: Vec<_> = posterior.resolve(kb)?.into_iter().map(|(s, p)| (g.condition(ctx, s), p)).collect();
    Ok(mixture(g, &comps, prefix, penalty))
}

/// One generated response as a JSON line.
pub fn response_json_line(query_id: &str, text: &str, posterior: &RagPosterior) -> Value {
    json!({
        "query_id": query_id,
        "response_text": text,
        "snippet_ids": posterior.entries.iter().map(|(id, _)| id.to_string()).collect::<Vec<_>>(),
        "posterior": posterior.entries.iter().map(|(_, p)| *p).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::RankedList;

    fn list(scores: &[f64], kind: ScoreKind) -> RankedList {
        RankedList::from_scores(
            scores.iter().enumerate().map(|(i, s)| (SnippetId::new("d", "e", i.to_string()), *s)).collect(),
            1,
            kind,
        )
    }

    #[test]
    fn proportional_arithmetic() {
        let p = renormalize_topn(&list(&[0.9, 0.3, 0.3], ScoreKind::Probability), 3, Calibration::ProportionalOverProbs).unwrap();
        let v: Vec<f64> = p.entries.iter().map(|e| e.1).collect();
        for (a, b) in v.iter().zip([0.6, 0.2, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_and_symmetric() {
        let p = renormalize_topn(&list(&[3.0, 1.0], ScoreKind::Similarity), 1, Calibration::SoftmaxOverScores).unwrap();
        assert_eq!(p.entries.len(), 1);
        assert_eq!(p.entries[0].1, 1.0);
        for c in [Calibration::SoftmaxOverScores, Calibration::ProportionalOverProbs] {
            let p = renormalize_topn(&list(&[0.4, 0.4], ScoreKind::Probability), 2, c).unwrap();
            assert_eq!((p.entries[0].1, p.entries[1].1), (0.5, 0.5));
        }
        let p = renormalize_topn(&list(&[0.4, 0.4], ScoreKind::Probability), 9, Calibration::SoftmaxOverScores).unwrap();
        assert_eq!(p.entries.len(), 2);
    }

    #[test]
    fn errors() {
        let empty = list(&[], ScoreKind::Similarity);
        assert!(matches!(renormalize_topn(&empty, 1, Calibration::SoftmaxOverScores), Err(Error::Usage(_))));
        let one = list(&[1.0], ScoreKind::Similarity);
        assert!(matches!(renormalize_topn(&one, 0, Calibration::SoftmaxOverScores), Err(Error::Usage(_))));
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }
}
