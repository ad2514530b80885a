//! Dense retrieval: snippets are embedded once offline; a query costs a
//! single context-encoder call plus a scan over the index.

use crate::checkpoint::DualEncoder;
use crate::corpus::{DialogContext, InputConfig, KnowledgeBase, SnippetId};
use crate::encoder::{encode, raw_similarity, Embedding, EncoderParams, SimilarityKind};
use crate::error::{Error, Result};
use crate::selection::{RankedList, ScoreKind, Selector};

/// Row-major matrix of snippet embeddings in knowledge-base order.
#[derive(Clone, Debug, PartialEq)]
pub struct SnippetIndex {
    pub ids: Vec<SnippetId>,
    pub embeddings: Vec<f64>,
    pub dim: usize,
    pub kind: SimilarityKind,
    pub input: InputConfig,
}

impl SnippetIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// Similarity of `query` to every indexed snippet.
    pub fn scores(&self, query: &Embedding) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::Usage(format!("query has dimension {}, index has {}", query.dim(), self.dim)));
        }
        Ok((0..self.len()).map(|i| raw_similarity(query.as_slice(), self.row(i), self.kind)).collect())
    }
}

/// Embeds every snippet with the snippet tower; the domain and entity fields
/// are included in the rendering per `input`.
pub fn build_index(snippet_encoder: &EncoderParams, kb: &KnowledgeBase, input: InputConfig, kind: SimilarityKind) -> SnippetIndex {
    let mut embeddings = Vec::with_capacity(kb.len() * snippet_encoder.embed_dim);
    for s in kb.snippets() {
        embeddings.extend(encode(snippet_encoder, &input.snippet_tokens(s)).0);
    }
    SnippetIndex {
        ids: kb.snippets().iter().map(|s| s.id.clone()).collect(),
        embeddings,
        dim: snippet_encoder.embed_dim,
        kind,
        input,
    }
}

/// Top-`top_k` snippets by similarity; exactly one model call.
pub fn select_dkr(context_encoder: &EncoderParams, index: &SnippetIndex, ctx: &DialogContext, top_k: usize) -> Result<RankedList> {
    if index.is_empty() {
        return Err(Error::Usage("cannot retrieve from an empty index".into()));
    }
    if top_k == 0 {
        return Err(Error::Usage("top_k must be at least 1".into()));
    }
    let query = encode(context_encoder, &index.input.context_tokens(ctx));
    let scores = index.scores(&query)?;
    let items = index.ids.iter().cloned().zip(scores).collect();
    Ok(RankedList::from_scores(items, 1, ScoreKind::Similarity).truncated(top_k))
}

/// A trained dual encoder with its precomputed index.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseRetriever {
    pub context_encoder: EncoderParams,
    pub index: SnippetIndex,
    pub top_k: usize,
}

impl DenseRetriever {
    pub fn new(enc: &DualEncoder, kb: &KnowledgeBase, input: InputConfig, kind: SimilarityKind, top_k: usize) -> Self {
        Self { context_encoder: enc.context.clone(), index: build_index(&enc.snippet, kb, input, kind), top_k }
    }
}

impl Selector for DenseRetriever {
    fn select(&self, _kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList> {
        select_dkr(&self.context_encoder, &self.index, ctx, self.top_k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Snippet;
    use crate::encoder::EncoderShape;

    fn kb(n: usize) -> KnowledgeBase {
        KnowledgeBase::from_snippets(
            (0..n)
                .map(|i| Snippet {
                    id: SnippetId::new("taxi", "*", i.to_string()),
                    entity_name: None,
                    question: format!("question {i}"),
                    answer: format!("answer {i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_call_regardless_of_size() {
        let shape = EncoderShape { bucket_count: 64, embed_dim: 5 };
        let enc = DualEncoder { context: shape.init(1), snippet: shape.init(2) };
        for n in [1, 7, 40] {
            let kb = kb(n);
            let r = DenseRetriever::new(&enc, &kb, InputConfig::default(), SimilarityKind::Dot, 5);
            let out = r.select(&kb, &DialogContext::user("question 3")).unwrap();
            assert_eq!(out.model_calls, 1);
            assert_eq!(out.len(), n.min(5));
            assert!(out.entries.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }

    #[test]
    fn empty_index_and_zero_k() {
        let shape = EncoderShape { bucket_count: 8, embed_dim: 2 };
        let empty = build_index(&shape.zeros(), &kb(0), InputConfig::default(), SimilarityKind::Dot);
        assert!(matches!(select_dkr(&shape.zeros(), &empty, &DialogContext::user("x"), 3), Err(Error::Usage(_))));
        let idx = build_index(&shape.zeros(), &kb(2), InputConfig::default(), SimilarityKind::Dot);
        assert!(matches!(select_dkr(&shape.zeros(), &idx, &DialogContext::user("x"), 0), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_encoder_ties_by_id() {
        let shape = EncoderShape { bucket_count: 8, embed_dim: 2 };
        let kb = kb(12);
        let idx = build_index(&shape.zeros(), &kb, InputConfig::default(), SimilarityKind::NegativeEuclidean);
        let r = select_dkr(&shape.zeros(), &idx, &DialogContext::user("x"), 12).unwrap();
        let ids: Vec<&str> = r.ids().map(|i| i.doc_id.as_str()).collect();
        assert_eq!(ids, ["0", "1", "10", "11", "2", "3", "4", "5", "6", "7", "8", "9"]);
    }
}
