//! The demo's operations as plain Rust, so they run and test natively.

use dialknow::checkpoint::DualEncoder;
use dialknow::corpus::{snippet_text, DialogContext, InputConfig, KnowledgeBase, LabeledDialog};
use dialknow::encoder::{tokenize, EncoderShape, SimilarityKind};
use dialknow::evaluation::{bleu1, lcs_len, rouge_l};
use dialknow::generation::{renormalize_topn, Calibration};
use dialknow::metric_learning::{train_dkr, DkrLoss, TrainConfig};
use dialknow::selection::{CascadeModels, DenseRetriever, RelevanceModel, Selector};
use dialknow::toy::{make_toy, ToyConfig};
use serde::Serialize;

/// Keeps the explorer responsive in a browser tab.
pub const MAX_SNIPPETS: usize = 65_536;

#[derive(Debug, PartialEq, Serialize)]
pub struct CallCounts {
    pub snippets: usize,
    pub flat: usize,
    pub three_stage: usize,
    pub two_stage: usize,
    pub dkr: usize,
    /// flat / three-stage.
    pub speedup: f64,
}

/// Model calls per query of each selector on a synthetic kb, counted by
/// running the selectors rather than by formula.
pub fn call_counts(domains: usize, entities: usize, docs: usize) -> Result<CallCounts, String> {
    let snippets = domains.saturating_mul(entities).saturating_mul(docs);
    if snippets > MAX_SNIPPETS {
        return Err(format!("{snippets} snippets exceeds the demo limit of {MAX_SNIPPETS}"));
    }
    let cfg = ToyConfig { domains, entities_per_domain: entities, docs_per_entity: docs, dialogs: 0, ..Default::default() };
    let (kb, _) = make_toy(&cfg).map_err(|e| e.to_string())?;
    // weights do not change how many calls a selector makes
    let shape = EncoderShape { bucket_count: 64, embed_dim: 4 };
    let input = InputConfig::default();
    let m = |seed| RelevanceModel::new(shape, input, seed);
    let ctx = DialogContext::user("is there parking");
    let calls = |s: &dyn Selector| s.select(&kb, &ctx).map(|r| r.model_calls).map_err(|e| e.to_string());
    let flat = calls(&m(1))?;
    let three_stage = calls(&CascadeModels::ThreeStage { domain: m(2), entity: m(3), document: m(4) })?;
    let two_stage = calls(&CascadeModels::TwoStage { domain_entity: m(5), document: m(6) })?;
    let enc = DualEncoder { context: shape.init(7), snippet: shape.init(8) };
    let dkr = calls(&DenseRetriever::new(&enc, &kb, input, SimilarityKind::Dot, 1))?;
    Ok(CallCounts { snippets: kb.len(), flat, three_stage, two_stage, dkr, speedup: flat as f64 / three_stage as f64 })
}

#[derive(Debug, PartialEq, Serialize)]
pub struct TextScores {
    pub candidate_tokens: Vec<String>,
    pub reference_tokens: Vec<String>,
    pub bleu1: f64,
    pub rouge_l: f64,
    pub lcs: usize,
}

pub fn text_scores(candidate: &str, reference: &str) -> TextScores {
    let (c, r) = (tokenize(candidate), tokenize(reference));
    TextScores { bleu1: bleu1(&c, &r), rouge_l: rouge_l(&c, &r), lcs: lcs_len(&c, &r), candidate_tokens: c, reference_tokens: r }
}

#[derive(Debug, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub text: String,
    pub score: f64,
    /// Mass in the retrieval-augmented posterior; zero outside the top n.
    pub posterior: f64,
}

#[derive(Debug, PartialEq, Serialize)]
pub struct Retrieval {
    pub hits: Vec<Hit>,
    pub model_calls: usize,
}

/// A dense retriever trained on a small toy corpus.
pub struct DkrDemo {
    kb: KnowledgeBase,
    dialogs: Vec<LabeledDialog>,
    retriever: DenseRetriever,
    pub final_loss: f64,
}

impl DkrDemo {
    pub fn train(seed: u64, steps: usize) -> Result<Self, String> {
        let (kb, dialogs) = make_toy(&ToyConfig { seed, ..Default::default() }).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            learning_rate: 2.0,
            steps,
            batch_size: 8,
            seed,
            encoder: EncoderShape { bucket_count: 4096, embed_dim: 32 },
            ..Default::default()
        };
        let (enc, trace) = train_dkr(&dialogs, &kb, DkrLoss::Nll, &cfg).map_err(|e| e.to_string())?;
        let retriever = DenseRetriever::new(&enc, &kb, cfg.input, SimilarityKind::Dot, kb.len());
        Ok(Self { kb, dialogs, retriever, final_loss: trace.0.last().copied().unwrap_or(f64::NAN) })
    }

    /// Training dialogs flattened to one line each, for the page's query
    /// picker; earlier turns carry the entity the last turn refers to.
    pub fn example_queries(&self, count: usize) -> Vec<String> {
        self.dialogs
            .iter()
            .take(count)
            .map(|d| d.context.turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" "))
            .collect()
    }

    /// Fraction of training dialogs whose gold snippet ranks first.
    pub fn training_r1(&self) -> Result<f64, String> {
        let mut hits = 0;
        for d in &self.dialogs {
            let r = self.retriever.select(&self.kb, &d.context).map_err(|e| e.to_string())?;
            hits += usize::from(r.top().is_some_and(|t| t.id == d.gold_snippets[0]));
        }
        Ok(hits as f64 / self.dialogs.len() as f64)
    }

    /// Top `k` snippets for a one-turn query, with the softmax posterior
    /// over the top `n`.
    pub fn retrieve(&self, query: &str, k: usize, n: usize) -> Result<Retrieval, String> {
        if k == 0 || n == 0 {
            return Err("k and n must be at least 1".into());
        }
        let ranked = self.retriever.select(&self.kb, &DialogContext::user(query)).map_err(|e| e.to_string())?;
        let posterior = renormalize_topn(&ranked, n, Calibration::for_scores(ranked.score_kind)).map_err(|e| e.to_string())?;
        let hits = ranked
            .entries
            .iter()
            .take(k)
            .map(|e| {
                let s = self.kb.get(&e.id).expect("ranked ids come from the kb");
                Hit {
                    id: e.id.to_string(),
                    text: snippet_text(s, true, true),
                    score: e.score,
                    posterior: posterior.entries.iter().find(|(id, _)| *id == e.id).map_or(0.0, |p| p.1),
                }
            })
            .collect();
        Ok(Retrieval { hits, model_calls: ranked.model_calls })
    }
}
