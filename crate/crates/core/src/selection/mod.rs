//! Knowledge selection: flat relevance scan, the hierarchical cascade, dense
//! retrieval over a precomputed index and the multi-task flat scan. Every
//! selector reports how many times it invoked a model.

pub mod cascade;
pub mod dense;
pub mod relevance;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{DialogContext, KnowledgeBase, SnippetId};
use crate::error::{Error, Result};
use crate::heads::sigmoid;
use crate::metric_learning::multitask::{SharedTrunkModel, DOC_TASK};

pub use cascade::{select_hierarchical, train_cascade, CascadeModels, CascadeVariant};
pub use dense::{build_index, select_dkr, DenseRetriever, SnippetIndex};
pub use relevance::{score_relevance, CallCounter, RelevanceModel};

/// What the scores of a ranked list mean; decides how they are turned into
/// a posterior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Independent relevance probabilities in (0, 1).
    Probability,
    /// Unbounded similarities.
    Similarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: SnippetId,
    pub score: f64,
}

/// Candidates in descending score order, ties broken by ascending id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    pub model_calls: usize,
    pub score_kind: ScoreKind,
}

impl RankedList {
    /// Sorts by `key` (descending, then id) and keeps `score` for reporting.
    /// Probability lists sort on the logit so saturated probabilities still
    /// rank correctly.
    pub fn from_keyed(mut items: Vec<(SnippetId, f64, f64)>, model_calls: usize, score_kind: ScoreKind) -> Self {
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self {
            entries: items.into_iter().map(|(id, _, score)| RankedEntry { id, score }).collect(),
            model_calls,
            score_kind,
        }
    }

    pub fn from_scores(items: Vec<(SnippetId, f64)>, model_calls: usize, score_kind: ScoreKind) -> Self {
        Self::from_keyed(items.into_iter().map(|(id, s)| (id, s, s)).collect(), model_calls, score_kind)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }

    pub fn ids(&self) -> impl Iterator<Item = &SnippetId> {
        self.entries.iter().map(|e| &e.id)
    }

    /// 1-based rank of the best-placed gold id.
    pub fn best_rank(&self, gold: &[SnippetId]) -> Option<usize> {
        self.entries.iter().position(|e| gold.contains(&e.id)).map(|i| i + 1)
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn to_json_line(&self, query_id: &str) -> Value {
        json!({
            "query_id": query_id,
            "entries": self.entries.iter().map(|e| json!({
                "domain": e.id.domain,
                "entity_id": e.id.entity_id,
                "doc_id": e.id.doc_id,
                "score": e.score,
            })).collect::<Vec<_>>(),
            "model_calls": self.model_calls,
        })
    }
}

/// Anything that ranks knowledge snippets for a dialog context.
pub trait Selector {
    fn select(&self, kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList>;
}

/// Scores every snippet with the relevance classifier; `|K|` model calls.
pub fn select_flat(m: &RelevanceModel, kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList> {
    if kb.is_empty() {
        return Err(Error::Usage("cannot select from an empty knowledge base".into()));
    }
    let ctx_emb = m.encode_context(&m.input.context_tokens(ctx));
    let mut calls = CallCounter::default();
    let items = kb
        .snippets()
        .iter()
        .map(|s| {
            calls.tick();
            let logit = m.logit_with(&ctx_emb, &m.input.snippet_tokens(s));
            (s.id.clone(), logit, sigmoid(logit))
        })
        .collect();
    Ok(RankedList::from_keyed(items, calls.count(), ScoreKind::Probability))
}

impl Selector for RelevanceModel {
    fn select(&self, kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList> {
        select_flat(self, kb, ctx)
    }
}

/// Flat scan over all snippets with the document head of a shared-trunk model.
pub fn multitask_select(m: &SharedTrunkModel, kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList> {
    m.head(DOC_TASK)?;
    if kb.is_empty() {
        return Err(Error::Usage("cannot select from an empty knowledge base".into()));
    }
    let ctx_emb = m.context_embedding(&m.input.context_tokens(ctx));
    let mut calls = CallCounter::default();
    let items = kb
        .snippets()
        .iter()
        .map(|s| {
            calls.tick();
            let logit = m.logit_with(DOC_TASK, &ctx_emb, Some(&m.input.snippet_tokens(s)))?;
            Ok((s.id.clone(), logit, sigmoid(logit)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankedList::from_keyed(items, calls.count(), ScoreKind::Probability))
}

impl Selector for SharedTrunkModel {
    fn select(&self, kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList> {
        multitask_select(self, kb, ctx)
    }
}

/// Returns the gold snippets of a labeled dialog as a ranked list, in the
/// order they are labeled; used when evaluating on ground-truth inputs.
pub fn gold_list(gold: &[SnippetId]) -> RankedList {
    RankedList {
        entries: gold.iter().map(|id| RankedEntry { id: id.clone(), score: 1.0 }).collect(),
        model_calls: 0,
        score_kind: ScoreKind::Probability,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InputConfig, Snippet};
    use crate::encoder::EncoderShape;

    fn kb() -> KnowledgeBase {
        let mut v = Vec::new();
        for (e, name) in [("2", "Bravo"), ("1", "Alpha")] {
            for doc in ["1", "0"] {
                v.push(Snippet {
                    id: SnippetId::new("hotel", e, doc),
                    entity_name: Some(name.into()),
                    question: format!("q {e} {doc}"),
                    answer: format!("a {e} {doc}"),
                });
            }
        }
        KnowledgeBase::from_snippets(v).unwrap()
    }

    const SHAPE: EncoderShape = EncoderShape { bucket_count: 32, embed_dim: 4 };

    #[test]
    fn flat_ties_are_lexicographic() {
        let kb = kb();
        let m = RelevanceModel::zeros(SHAPE, InputConfig::default());
        let r = select_flat(&m, &kb, &DialogContext::user("hello")).unwrap();
        assert_eq!(r.model_calls, 4);
        let ids: Vec<String> = r.ids().map(|i| i.to_string()).collect();
        assert_eq!(ids, ["hotel/1/0", "hotel/1/1", "hotel/2/0", "hotel/2/1"]);
        assert!(r.entries.iter().all(|e| e.score == 0.5));
    }

    #[test]
    fn flat_singleton() {
        let kb = KnowledgeBase::from_snippets(vec![kb().snippets()[0].clone()]).unwrap();
        let m = RelevanceModel::new(SHAPE, InputConfig::default(), 1);
        let r = select_flat(&m, &kb, &DialogContext::user("x")).unwrap();
        assert_eq!((r.len(), r.model_calls), (1, 1));
    }

    #[test]
    fn empty_kb_is_usage_error() {
        let kb = KnowledgeBase::from_snippets(vec![]).unwrap();
        let m = RelevanceModel::zeros(SHAPE, InputConfig::default());
        assert!(matches!(select_flat(&m, &kb, &DialogContext::user("x")), Err(Error::Usage(_))));
    }

    #[test]
    fn ranks_and_json_lines() {
        let r = RankedList::from_scores(
            vec![(SnippetId::new("a", "1", "0"), 0.2), (SnippetId::new("a", "1", "1"), 0.9)],
            2,
            ScoreKind::Similarity,
        );
        assert_eq!(r.best_rank(&[SnippetId::new("a", "1", "0")]), Some(2));
        assert_eq!(r.best_rank(&[SnippetId::new("z", "1", "0")]), None);
        let line = r.to_json_line("q7");
        assert_eq!(line["entries"][0]["doc_id"], "1");
        assert_eq!(line["model_calls"], 2);
    }

    #[test]
    fn multitask_without_doc_head() {
        let m = SharedTrunkModel {
            trunk: SHAPE.zeros(),
            heads: Default::default(),
            input: InputConfig::default(),
        };
        assert!(matches!(multitask_select(&m, &kb(), &DialogContext::user("x")), Err(Error::Usage(_))));
    }
}
