//! Hierarchical selection: pick a domain, then an entity, then rank only
//! that entity's documents. Decisions between stages are hard argmaxes.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::corpus::{DialogContext, KnowledgeBase, LabeledDialog, Snippet, SnippetId};
use crate::encoder::tokenize;
use crate::error::{Error, Result};
use crate::heads::sigmoid;
use crate::metric_learning::sampling::NegativeSampling;
use crate::metric_learning::train::{knowledge_seeking, train_pairs, LossTrace, PairExample, TrainConfig};
use crate::rng::{derive, seeded, Rng};
use crate::selection::relevance::{put_input, take_input, CallCounter, RelevanceModel};
use crate::selection::{RankedList, ScoreKind, Selector};

pub fn domain_candidate(domain: &str) -> String {
    domain.to_string()
}

pub fn entity_candidate(kb: &KnowledgeBase, domain: &str, entity_id: &str) -> String {
    format!("{domain} | {}", kb.entity_name(domain, entity_id).unwrap_or(entity_id))
}

/// Document-stage rendering: domain and entity were decided upstream.
pub fn document_candidate(s: &Snippet) -> String {
    format!("{} | {}", s.question, s.answer)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeVariant {
    /// Separate domain, entity and document models.
    ThreeStage,
    /// Joint domain+entity model, then a document model.
    TwoStage,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CascadeModels {
    ThreeStage { domain: RelevanceModel, entity: RelevanceModel, document: RelevanceModel },
    TwoStage { domain_entity: RelevanceModel, document: RelevanceModel },
}

impl CascadeModels {
    pub fn variant(&self) -> CascadeVariant {
        match self {
            CascadeModels::ThreeStage { .. } => CascadeVariant::ThreeStage,
            CascadeModels::TwoStage { .. } => CascadeVariant::TwoStage,
        }
    }

    fn document(&self) -> &RelevanceModel {
        match self {
            CascadeModels::ThreeStage { document, .. } | CascadeModels::TwoStage { document, .. } => document,
        }
    }
}

/// Highest-logit candidate; candidates arrive in lexicographic order and the
/// first maximum wins.
fn argmax<'a, I>(m: &RelevanceModel, ctx_tokens: &[String], candidates: I, calls: &mut CallCounter) -> Option<I::Item>
where
    I: IntoIterator<Item = (&'a str, &'a str, String)>,
{
    let ctx = m.encode_context(ctx_tokens);
    let mut best: Option<(f64, I::Item)> = None;
    for cand in candidates {
        calls.tick();
        let logit = m.logit_with(&ctx, &tokenize(&cand.2));
        if best.as_ref().is_none_or(|(b, _)| logit > *b) {
            best = Some((logit, cand));
        }
    }
    best.map(|(_, c)| c)
}

pub fn select_hierarchical(c: &CascadeModels, kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList> {
    if kb.is_empty() {
        return Err(Error::Usage("cannot select from an empty knowledge base".into()));
    }
    let mut calls = CallCounter::default();
    let (domain, entity) = match c {
        CascadeModels::ThreeStage { domain, entity, .. } => {
            let ctx_tokens = domain.input.context_tokens(ctx);
            let d = argmax(domain, &ctx_tokens, kb.domains().map(|d| (d, "", domain_candidate(d))), &mut calls)
                .map(|x| x.0)
                .expect("non-empty knowledge base has a domain");
            let ctx_tokens = entity.input.context_tokens(ctx);
            let e = argmax(
                entity,
                &ctx_tokens,
                kb.populated_entities(d).map(|e| (d, e, entity_candidate(kb, d, e))),
                &mut calls,
            )
            .map(|x| x.1)
            .expect("a domain holds at least one populated entity");
            (d, e)
        }
        CascadeModels::TwoStage { domain_entity, .. } => {
            let ctx_tokens = domain_entity.input.context_tokens(ctx);
            let pairs = kb
                .domains()
                .flat_map(|d| kb.populated_entities(d).map(move |e| (d, e, entity_candidate(kb, d, e))));
            let best = argmax(domain_entity, &ctx_tokens, pairs, &mut calls).expect("non-empty knowledge base");
            (best.0, best.1)
        }
    };
    let doc_model = c.document();
    let ctx_emb = doc_model.encode_context(&doc_model.input.context_tokens(ctx));
    let items = kb
        .snippets_of(domain, entity)
        .iter()
        .map(|s| {
            calls.tick();
            let logit = doc_model.logit_with(&ctx_emb, &tokenize(&document_candidate(s)));
            (s.id.clone(), logit, sigmoid(logit))
        })
        .collect();
    Ok(RankedList::from_keyed(items, calls.count(), ScoreKind::Probability))
}

impl Selector for CascadeModels {
    fn select(&self, kb: &KnowledgeBase, ctx: &DialogContext) -> Result<RankedList> {
        select_hierarchical(self, kb, ctx)
    }
}

/// Trains one stage: each dialog yields its gold candidate as positive and
/// up to `num_negatives` other candidates of the same stage as negatives.
fn train_stage<F>(
    dialogs: &[&LabeledDialog],
    cfg: &TrainConfig,
    seed: u64,
    candidates: F,
) -> Result<(RelevanceModel, LossTrace)>
where
    F: Fn(&SnippetId) -> Result<(String, Vec<String>)>,
{
    let contexts: Vec<Vec<String>> = dialogs.iter().map(|d| cfg.input.context_tokens(&d.context)).collect();
    let stage: Vec<(String, Vec<String>)> =
        dialogs.iter().map(|d| candidates(&d.gold_snippets[0])).collect::<Result<_>>()?;
    let mut model = RelevanceModel::new(cfg.encoder, cfg.input, derive(seed, 1));
    let mut rng: Rng = seeded(derive(seed, 2));
    let NegativeSampling { num_negatives, .. } = cfg.sampling;
    let trace = train_pairs(&mut model, cfg, &mut rng, |rng| {
        let picks: Vec<usize> = if cfg.batch_size >= dialogs.len() {
            (0..dialogs.len()).collect()
        } else {
            (0..cfg.batch_size).map(|_| rand::Rng::gen_range(rng, 0..dialogs.len())).collect()
        };
        let mut batch = Vec::new();
        for i in picks {
            let (positive, others) = &stage[i];
            batch.push(PairExample { context: contexts[i].clone(), candidate: tokenize(positive), label: true });
            let take = num_negatives.min(others.len());
            for j in rand::seq::index::sample(rng, others.len(), take) {
                batch.push(PairExample { context: contexts[i].clone(), candidate: tokenize(&others[j]), label: false });
            }
        }
        Ok(batch)
    })?;
    Ok((model, trace))
}

/// Trains every stage of the chosen cascade variant. Negatives for a stage
/// are drawn from the candidates that stage competes against at inference:
/// other domains, other entities of the gold domain, other documents of the
/// gold entity (or all other entities for the joint domain+entity stage).
pub fn train_cascade(
    corpus: &[LabeledDialog],
    kb: &KnowledgeBase,
    variant: CascadeVariant,
    cfg: &TrainConfig,
) -> Result<(CascadeModels, Vec<LossTrace>)> {
    cfg.validate()?;
    let dialogs = knowledge_seeking(corpus);
    if dialogs.is_empty() {
        return Err(Error::Config("cascade training needs knowledge-seeking dialogs".into()));
    }
    let lookup = |id: &SnippetId| {
        kb.get(id).ok_or_else(|| Error::Integrity(format!("gold snippet {id} not in knowledge base")))
    };
    let document = |id: &SnippetId| {
        let gold = lookup(id)?;
        let others = kb
            .snippets_of(&id.domain, &id.entity_id)
            .iter()
            .filter(|s| s.id != *id)
            .map(document_candidate)
            .collect();
        Ok((document_candidate(gold), others))
    };
    let (doc_model, doc_trace) = train_stage(&dialogs, cfg, derive(cfg.seed, 30), document)?;
    match variant {
        CascadeVariant::ThreeStage => {
            let (domain, t1) = train_stage(&dialogs, cfg, derive(cfg.seed, 10), |id| {
                lookup(id)?;
                let others = kb.domains().filter(|d| *d != id.domain).map(domain_candidate).collect();
                Ok((domain_candidate(&id.domain), others))
            })?;
            let (entity, t2) = train_stage(&dialogs, cfg, derive(cfg.seed, 20), |id| {
                lookup(id)?;
                let others = kb
                    .populated_entities(&id.domain)
                    .filter(|e| *e != id.entity_id)
                    .map(|e| entity_candidate(kb, &id.domain, e))
                    .collect();
                Ok((entity_candidate(kb, &id.domain, &id.entity_id), others))
            })?;
            Ok((CascadeModels::ThreeStage { domain, entity, document: doc_model }, vec![t1, t2, doc_trace]))
        }
        CascadeVariant::TwoStage => {
            let (domain_entity, t1) = train_stage(&dialogs, cfg, derive(cfg.seed, 40), |id| {
                lookup(id)?;
                let others = kb
                    .domains()
                    .flat_map(|d| kb.populated_entities(d).map(move |e| (d, e)))
                    .filter(|(d, e)| !(*d == id.domain && *e == id.entity_id))
                    .map(|(d, e)| entity_candidate(kb, d, e))
                    .collect();
                Ok((entity_candidate(kb, &id.domain, &id.entity_id), others))
            })?;
            Ok((CascadeModels::TwoStage { domain_entity, document: doc_model }, vec![t1, doc_trace]))
        }
    }
}

impl Checkpointable for CascadeModels {
    const KIND: &'static str = "cascade";

    fn write_into(&self, ck: &mut Checkpoint) {
        ck.meta.insert("variant".into(), json!(self.variant()));
        match self {
            CascadeModels::ThreeStage { domain, entity, document } => {
                put_input(ck, &document.input);
                domain.write_prefixed(ck, "domain.");
                entity.write_prefixed(ck, "entity.");
                document.write_prefixed(ck, "document.");
            }
            CascadeModels::TwoStage { domain_entity, document } => {
                put_input(ck, &document.input);
                domain_entity.write_prefixed(ck, "domain_entity.");
                document.write_prefixed(ck, "document.");
            }
        }
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        let variant: CascadeVariant = serde_json::from_value(
            ck.meta.get("variant").cloned().ok_or_else(|| Error::Checkpoint("missing variant".into()))?,
        )?;
        let input = take_input(ck)?;
        Ok(match variant {
            CascadeVariant::ThreeStage => CascadeModels::ThreeStage {
                domain: RelevanceModel::read_prefixed(ck, "domain.", input)?,
                entity: RelevanceModel::read_prefixed(ck, "entity.", input)?,
                document: RelevanceModel::read_prefixed(ck, "document.", input)?,
            },
            CascadeVariant::TwoStage => CascadeModels::TwoStage {
                domain_entity: RelevanceModel::read_prefixed(ck, "domain_entity.", input)?,
                document: RelevanceModel::read_prefixed(ck, "document.", input)?,
            },
        })
    }
}
