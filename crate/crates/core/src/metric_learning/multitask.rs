//! Hard parameter sharing: one encoder trunk, one affine head per task.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::corpus::{snippet_text, InputConfig, KnowledgeBase, LabeledDialog};
use crate::encoder::{forward, tokenize, EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::heads::{pair_features, pair_features_backward, sigmoid, AffineHead, HeadGrads};
use crate::metric_learning::losses::binary_ce_loss;
use crate::metric_learning::train::{knowledge_seeking, LossTrace, TrainConfig};
use crate::rng::{derive, seeded, Rng};
use crate::selection::cascade::{domain_candidate, entity_candidate};

pub const DOMAIN_TASK: &str = "domain";
pub const ENTITY_TASK: &str = "entity";
pub const DOC_TASK: &str = "doc";
pub const DETECTION_TASK: &str = "detection";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    /// `[c ; s ; c ⊙ s ; |c − s|]` over context and candidate.
    Pair,
    /// The context embedding alone.
    Context,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub input: HeadInput,
    pub head: AffineHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskExample {
    pub context: Vec<String>,
    pub candidate: Option<Vec<String>>,
    pub label: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedTrunkModel {
    pub trunk: EncoderParams,
    pub heads: BTreeMap<String, TaskHead>,
    pub input: InputConfig,
}

impl SharedTrunkModel {
    pub fn head(&self, task: &str) -> Result<&TaskHead> {
        self.heads.get(task).ok_or_else(|| Error::Usage(format!("unknown task {task:?}")))
    }

    fn features(&self, head: &TaskHead, ctx: &[f64], candidate: Option<&[String]>) -> Result<Vec<f64>> {
        match (head.input, candidate) {
            (HeadInput::Pair, Some(c)) => Ok(pair_features(ctx, forward(&self.trunk, c).output.as_slice())),
            (HeadInput::Context, None) => Ok(ctx.to_vec()),
            (HeadInput::Pair, None) => Err(Error::Usage("pair task needs a candidate".into())),
            (HeadInput::Context, Some(_)) => Err(Error::Usage("context-only task takes no candidate".into())),
        }
    }

    pub fn logit(&self, task: &str, ctx_tokens: &[String], candidate: Option<&[String]>) -> Result<f64> {
        let head = self.head(task)?;
        let ctx = forward(&self.trunk, ctx_tokens).output;
        Ok(head.head.logit(&self.features(head, ctx.as_slice(), candidate)?))
    }

    /// Logit with a precomputed context embedding; used by flat scans.
    pub fn logit_with(&self, task: &str, ctx: &[f64], candidate: Option<&[String]>) -> Result<f64> {
        let head = self.head(task)?;
        Ok(head.head.logit(&self.features(head, ctx, candidate)?))
    }

    pub fn probability(&self, task: &str, ctx_tokens: &[String], candidate: Option<&[String]>) -> Result<f64> {
        Ok(sigmoid(self.logit(task, ctx_tokens, candidate)?))
    }

    pub fn context_embedding(&self, ctx_tokens: &[String]) -> Vec<f64> {
        forward(&self.trunk, ctx_tokens).output.0
    }

    fn backward(&self, head: &TaskHead, ex: &TaskExample) -> (f64, EncoderGrads, HeadGrads) {
        let ct = forward(&self.trunk, &ex.context);
        match &ex.candidate {
            Some(cand) => {
                let st = forward(&self.trunk, cand);
                let feats = pair_features(ct.output.as_slice(), st.output.as_slice());
                let (loss, g) = binary_ce_loss(head.head.logit(&feats), ex.label);
                let (hg, dfeat) = head.head.backward(&feats, g);
                let (dc, ds) = pair_features_backward(ct.output.as_slice(), st.output.as_slice(), &dfeat);
                let mut trunk = ct.backward(&self.trunk, &dc);
                trunk.add_scaled(&st.backward(&self.trunk, &ds), 1.0);
                (loss, trunk, hg)
            }
            None => {
                let (loss, g) = binary_ce_loss(head.head.logit(ct.output.as_slice()), ex.label);
                let (hg, dctx) = head.head.backward(ct.output.as_slice(), g);
                (loss, ct.backward(&self.trunk, &dctx), hg)
            }
        }
    }
}

/// Trains one shared trunk on several binary tasks. Tasks are visited
/// round-robin, one per step; a step updates the trunk and that task's head.
pub fn train_shared_trunk(tasks: &[(String, Vec<TaskExample>)], cfg: &TrainConfig) -> Result<(SharedTrunkModel, LossTrace)> {
    cfg.validate()?;
    if tasks.len() < 2 {
        return Err(Error::Config("multi-task training needs at least two tasks".into()));
    }
    let d = cfg.encoder.embed_dim;
    let mut heads = BTreeMap::new();
    for (t, (name, examples)) in tasks.iter().enumerate() {
        let first = examples
            .first()
            .ok_or_else(|| Error::Config(format!("task {name:?} has no examples")))?;
        let input = if first.candidate.is_some() { HeadInput::Pair } else { HeadInput::Context };
        if examples.iter().any(|e| e.candidate.is_some() != first.candidate.is_some()) {
            return Err(Error::Config(format!("task {name:?} mixes pair and context-only examples")));
        }
        let dim = if input == HeadInput::Pair { 4 * d } else { d };
        let head = TaskHead { input, head: AffineHead::new(dim, derive(cfg.seed, 100 + t as u64)) };
        if heads.insert(name.clone(), head).is_some() {
            return Err(Error::Config(format!("task {name:?} declared twice")));
        }
    }
    let mut model = SharedTrunkModel { trunk: cfg.encoder.init(derive(cfg.seed, 1)), heads, input: cfg.input };
    let mut rng = seeded(derive(cfg.seed, 2));
    let mut trace = LossTrace::default();
    for step in 0..cfg.steps {
        let (name, examples) = &tasks[step % tasks.len()];
        let picks: Vec<usize> = if cfg.batch_size >= examples.len() {
            (0..examples.len()).collect()
        } else {
            (0..cfg.batch_size).map(|_| rng.gen_range(0..examples.len())).collect()
        };
        let scale = 1.0 / picks.len() as f64;
        let head = model.heads[name].clone();
        let mut g_trunk = EncoderGrads::zeros(d);
        let mut g_head = HeadGrads::zeros(head.head.input_dim());
        let mut total = 0.0;
        for i in picks {
            let (loss, gt, gh) = model.backward(&head, &examples[i]);
            total += loss;
            g_trunk.add_scaled(&gt, scale);
            g_head.add_scaled(&gh, scale);
        }
        model.trunk.apply(&g_trunk, cfg.learning_rate);
        model.heads.get_mut(name).unwrap().head.apply(&g_head, cfg.learning_rate);
        trace.0.push(total * scale);
    }
    Ok((model, trace))
}

/// Domain, entity and document relevance tasks built from the corpus. Each
/// stage only sees the snippet fields it decides on; the document task uses
/// the full snippet rendering so its head can also rank all snippets flat.
/// Negatives per positive: every other candidate of the stage, capped at
/// `negatives` (drawn at random when capped).
pub fn hierarchy_tasks(
    corpus: &[LabeledDialog],
    kb: &KnowledgeBase,
    input: &InputConfig,
    negatives: usize,
    seed: u64,
) -> Result<Vec<(String, Vec<TaskExample>)>> {
    let mut rng = seeded(seed);
    let mut domain = Vec::new();
    let mut entity = Vec::new();
    let mut doc = Vec::new();
    let domains: Vec<&str> = kb.domains().collect();
    for d in knowledge_seeking(corpus) {
        let gold = &d.gold_snippets[0];
        let snippet = kb
            .get(gold)
            .ok_or_else(|| Error::Integrity(format!("gold snippet {gold} not in knowledge base")))?;
        let ctx = input.context_tokens(&d.context);
        let push = |out: &mut Vec<TaskExample>, cand: String, label: bool| {
            out.push(TaskExample { context: ctx.clone(), candidate: Some(tokenize(&cand)), label })
        };
        push(&mut domain, domain_candidate(&gold.domain), true);
        for other in pick(&mut rng, domains.iter().copied().filter(|x| *x != gold.domain).collect(), negatives) {
            push(&mut domain, domain_candidate(other), false);
        }
        push(&mut entity, entity_candidate(kb, &gold.domain, &gold.entity_id), true);
        let others = kb.populated_entities(&gold.domain).filter(|e| *e != gold.entity_id).collect();
        for e in pick(&mut rng, others, negatives) {
            push(&mut entity, entity_candidate(kb, &gold.domain, e), false);
        }
        push(&mut doc, snippet_text(snippet, input.include_domain, input.include_entity), true);
        let others: Vec<_> = kb.snippets().iter().filter(|s| s.id != *gold).collect();
        for s in pick(&mut rng, others, negatives) {
            push(&mut doc, snippet_text(s, input.include_domain, input.include_entity), false);
        }
    }
    Ok(vec![(DOMAIN_TASK.into(), domain), (ENTITY_TASK.into(), entity), (DOC_TASK.into(), doc)])
}

/// Context-only detection examples (label = knowledge-seeking).
pub fn detection_task(corpus: &[LabeledDialog], input: &InputConfig) -> (String, Vec<TaskExample>) {
    let examples = corpus
        .iter()
        .map(|d| TaskExample { context: input.context_tokens(&d.context), candidate: None, label: d.target })
        .collect();
    (DETECTION_TASK.into(), examples)
}

fn pick<T: Copy>(rng: &mut Rng, items: Vec<T>, n: usize) -> Vec<T> {
    if items.len() <= n {
        return items;
    }
    rand::seq::index::sample(rng, items.len(), n).into_iter().map(|i| items[i]).collect()
}

impl Checkpointable for SharedTrunkModel {
    const KIND: &'static str = "shared_trunk";

    fn write_into(&self, ck: &mut Checkpoint) {
        crate::selection::relevance::put_input(ck, &self.input);
        ck.put_encoder("trunk", &self.trunk);
        let tasks: BTreeMap<&String, HeadInput> = self.heads.iter().map(|(k, v)| (k, v.input)).collect();
        ck.meta.insert("tasks".into(), json!(tasks));
        for (name, head) in &self.heads {
            crate::selection::relevance::put_head(ck, &format!("head.{name}"), &head.head);
        }
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        let tasks: BTreeMap<String, HeadInput> = serde_json::from_value(
            ck.meta.get("tasks").cloned().ok_or_else(|| Error::Checkpoint("missing task list".into()))?,
        )?;
        let mut heads = BTreeMap::new();
        for (name, input) in tasks {
            let head = crate::selection::relevance::take_head(ck, &format!("head.{name}"))?;
            heads.insert(name, TaskHead { input, head });
        }
        Ok(Self {
            trunk: ck.take_encoder("trunk")?,
            heads,
            input: crate::selection::relevance::take_input(ck)?,
        })
    }
}
