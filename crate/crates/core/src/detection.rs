//! Knowledge-seeking turn detection: a context-only classifier and a
//! retrieval-augmented variant that marginalizes a (context, snippet)
//! classifier over the top-n retrieved snippets.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::corpus::{DialogContext, InputConfig, KnowledgeBase, LabeledDialog};
use crate::encoder::{forward, EncoderGrads, EncoderParams, EncoderShape};
use crate::error::{Error, Result};
use crate::generation::rag::{renormalize_topn, Calibration};
use crate::heads::{sigmoid, AffineHead, HeadGrads};
use crate::metric_learning::losses::binary_ce_loss;
use crate::metric_learning::train::{draw_batch, train_pairs, LossTrace, PairExample, TrainConfig};
use crate::rng::{derive, seeded};
use crate::selection::relevance::{put_head, put_input, take_head, take_input, RelevanceModel};
use crate::selection::Selector;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub probability: f64,
    pub decision: bool,
}

impl Detection {
    pub fn from_probability(probability: f64, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(Self { probability, decision: probability >= threshold })
    }

    pub fn to_json_line(&self, query_id: &str) -> Value {
        json!({"query_id": query_id, "probability": self.probability, "decision": self.decision})
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("threshold must lie in (0, 1), got {t}")))
    }
}

/// Context tower plus a scalar affine head.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionModel {
    pub tower: EncoderParams,
    pub head: AffineHead,
    pub input: InputConfig,
}

impl DetectionModel {
    pub fn new(shape: EncoderShape, input: InputConfig, seed: u64) -> Self {
        Self { tower: shape.init(derive(seed, 1)), head: AffineHead::new(shape.embed_dim, derive(seed, 2)), input }
    }

    pub fn zeros(shape: EncoderShape, input: InputConfig) -> Self {
        Self { tower: shape.zeros(), head: AffineHead::zeros(shape.embed_dim), input }
    }

    pub fn logit(&self, ctx: &DialogContext) -> f64 {
        self.head.logit(forward(&self.tower, &self.input.context_tokens(ctx)).output.as_slice())
    }

    pub fn probability(&self, ctx: &DialogContext) -> f64 {
        sigmoid(self.logit(ctx))
    }

    fn backward(&self, tokens: &[String], label: bool) -> (f64, EncoderGrads, HeadGrads) {
        let t = forward(&self.tower, tokens);
        let (loss, g) = binary_ce_loss(self.head.logit(t.output.as_slice()), label);
        let (hg, dx) = self.head.backward(t.output.as_slice(), g);
        (loss, t.backward(&self.tower, &dx), hg)
    }
}

pub fn detect(m: &DetectionModel, ctx: &DialogContext, threshold: f64) -> Result<Detection> {
    Detection::from_probability(m.probability(ctx), threshold)
}

/// Scores (context, snippet) pairs for the detection label.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDetectionModel(pub RelevanceModel);

impl JointDetectionModel {
    pub fn pair_probability(&self, ctx_tokens: &[String], snippet_tokens: &[String]) -> f64 {
        sigmoid(self.0.logit(ctx_tokens, snippet_tokens))
    }
}

/// Retrieval-augmented detection: `Σ_k p̃(k) · p(detect | ctx, k)` over the
/// renormalized top-n of `selector`, calibrated by the ranking's score kind.
pub fn detect_rad(
    jm: &JointDetectionModel,
    selector: &dyn Selector,
    kb: &KnowledgeBase,
    ctx: &DialogContext,
    n: usize,
    threshold: f64,
) -> Result<Detection> {
    check_threshold(threshold)?;
    if n == 0 {
        return Err(Error::Usage("n must be at least 1".into()));
    }
    if kb.is_empty() {
        return Err(Error::Usage("cannot detect against an empty knowledge base".into()));
    }
    let ranked = selector.select(kb, ctx)?;
    let posterior = renormalize_topn(&ranked, n, Calibration::for_scores(ranked.score_kind))?;
    let input = jm.0.input;
    let ctx_emb = jm.0.encode_context(&input.context_tokens(ctx));
    let mut p = 0.0;
    for (id, w) in &posterior.entries {
        let s = kb.get(id).ok_or_else(|| Error::Integrity(format!("selected snippet {id} not in knowledge base")))?;
        p += w * sigmoid(jm.0.logit_with(&ctx_emb, &input.snippet_tokens(s)));
    }
    Detection::from_probability(p, threshold)
}

fn check_both_classes(corpus: &[LabeledDialog]) -> Result<()> {
    let pos = corpus.iter().filter(|d| d.target).count();
    if pos == 0 || pos == corpus.len() {
        return Err(Error::Config("detector training needs both positive and negative turns".into()));
    }
    Ok(())
}

pub fn train_detector(corpus: &[LabeledDialog], cfg: &TrainConfig) -> Result<(DetectionModel, LossTrace)> {
    cfg.validate()?;
    check_both_classes(corpus)?;
    let tokens: Vec<Vec<String>> = corpus.iter().map(|d| cfg.input.context_tokens(&d.context)).collect();
    let mut m = DetectionModel::new(cfg.encoder, cfg.input, derive(cfg.seed, 1));
    let mut rng = seeded(derive(cfg.seed, 2));
    let mut trace = LossTrace::default();
    for _ in 0..cfg.steps {
        let batch = draw_batch(&mut rng, corpus.len(), cfg.batch_size);
        let scale = 1.0 / batch.len() as f64;
        let mut gt = EncoderGrads::zeros(cfg.encoder.embed_dim);
        let mut gh = HeadGrads::zeros(cfg.encoder.embed_dim);
        let mut total = 0.0;
        for i in batch {
            let (l, et, eh) = m.backward(&tokens[i], corpus[i].target);
            total += l;
            gt.add_scaled(&et, scale);
            gh.add_scaled(&eh, scale);
        }
        m.tower.apply(&gt, cfg.learning_rate);
        m.head.apply(&gh, cfg.learning_rate);
        trace.0.push(total * scale);
    }
    Ok((m, trace))
}

/// Positives are paired with their gold snippet, negatives with a
/// uniformly random snippet.
pub fn train_joint_detector(
    corpus: &[LabeledDialog],
    kb: &KnowledgeBase,
    cfg: &TrainConfig,
) -> Result<(JointDetectionModel, LossTrace)> {
    cfg.validate()?;
    check_both_classes(corpus)?;
    if kb.is_empty() {
        return Err(Error::Config("joint detector training needs a knowledge base".into()));
    }
    let mut positives = Vec::new();
    for d in corpus.iter().filter(|d| d.target) {
        let id = d
            .gold_snippets
            .first()
            .ok_or_else(|| Error::Integrity("knowledge-seeking turn without gold snippet".into()))?;
        positives.push(kb.position(id).ok_or_else(|| Error::Integrity(format!("gold snippet {id} not in knowledge base")))?);
    }
    let tokens: Vec<Vec<String>> = corpus.iter().map(|d| cfg.input.context_tokens(&d.context)).collect();
    let gold: Vec<Option<usize>> = {
        let mut it = positives.into_iter();
        corpus.iter().map(|d| if d.target { it.next() } else { None }).collect()
    };
    let mut m = RelevanceModel::new(cfg.encoder, cfg.input, derive(cfg.seed, 1));
    let mut rng = seeded(derive(cfg.seed, 2));
    let input = cfg.input;
    let trace = train_pairs(&mut m, cfg, &mut rng, |rng| {
        Ok(draw_batch(rng, corpus.len(), cfg.batch_size)
            .into_iter()
            .map(|i| {
                let k = gold[i].unwrap_or_else(|| rng.gen_range(0..kb.len()));
                PairExample {
                    context: tokens[i].clone(),
                    candidate: input.snippet_tokens(&kb.snippets()[k]),
                    label: corpus[i].target,
                }
            })
            .collect())
    })?;
    Ok((JointDetectionModel(m), trace))
}

impl Checkpointable for DetectionModel {
    const KIND: &'static str = "detector";

    fn write_into(&self, ck: &mut Checkpoint) {
        put_input(ck, &self.input);
        ck.put_encoder("tower", &self.tower);
        put_head(ck, "head", &self.head);
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        let m = Self { tower: ck.take_encoder("tower")?, head: take_head(ck, "head")?, input: take_input(ck)? };
        if m.head.input_dim() != m.tower.embed_dim {
            return Err(Error::Checkpoint("detector head does not match the tower".into()));
        }
        Ok(m)
    }
}

impl Checkpointable for JointDetectionModel {
    const KIND: &'static str = "joint_detector";

    fn write_into(&self, ck: &mut Checkpoint) {
        self.0.write_into(ck);
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        RelevanceModel::read_from(ck).map(JointDetectionModel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: EncoderShape = EncoderShape { bucket_count: 32, embed_dim: 4 };

    #[test]
    fn zero_model_half() {
        let m = DetectionModel::zeros(SHAPE, InputConfig::default());
        let d = detect(&m, &DialogContext::user("anything"), 0.5).unwrap();
        assert_eq!(d, Detection { probability: 0.5, decision: true });
        assert!(detect(&m, &DialogContext::user("x"), 1.0).is_err());
        assert!(detect(&m, &DialogContext::user("x"), 0.0).is_err());
    }

    #[test]
    fn threshold_monotone() {
        let m = DetectionModel::new(SHAPE, InputConfig::default(), 5);
        let ctx = DialogContext::user("is there parking");
        let mut last = true;
        for i in 1..100 {
            let d = detect(&m, &ctx, i as f64 / 100.0).unwrap();
            assert!(last || !d.decision);
            last = d.decision;
        }
    }

    #[test]
    fn single_class_rejected() {
        let d = LabeledDialog {
            context: DialogContext::user("x"),
            target: false,
            gold_snippets: vec![],
            gold_response: None,
            source: None,
        };
        assert!(matches!(train_detector(&[d.clone(), d], &TrainConfig::default()), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = DetectionModel::new(SHAPE, InputConfig::default(), 2);
        let back = DetectionModel::from_checkpoint(&Checkpoint::from_bytes(&m.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
