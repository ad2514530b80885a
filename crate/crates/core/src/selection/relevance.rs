use serde_json::json;

use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::corpus::InputConfig;
use crate::encoder::{forward, tokenize, Embedding, EncoderGrads, EncoderParams, EncoderShape};
use crate::error::{Error, Result};
use crate::heads::{pair_features, pair_features_backward, sigmoid, AffineHead, HeadGrads};
use crate::rng::derive;

/// Counts scorer invocations within one query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounter(usize);

impl CallCounter {
    pub fn tick(&mut self) {
        self.0 += 1;
    }

    pub fn count(&self) -> usize {
        self.0
    }
}

/// Binary relevance classifier over a (context, candidate) pair: two towers
/// joined by an affine head on `[c ; s ; c ⊙ s ; |c − s|]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceModel {
    pub context_tower: EncoderParams,
    pub candidate_tower: EncoderParams,
    pub head: AffineHead,
    pub input: InputConfig,
}

#[derive(Clone, Debug)]
pub struct RelevanceGrads {
    pub context: EncoderGrads,
    pub candidate: EncoderGrads,
    pub head: HeadGrads,
}

impl RelevanceGrads {
    pub fn zeros(embed_dim: usize) -> Self {
        Self {
            context: EncoderGrads::zeros(embed_dim),
            candidate: EncoderGrads::zeros(embed_dim),
            head: HeadGrads::zeros(4 * embed_dim),
        }
    }

    pub fn add_scaled(&mut self, other: &RelevanceGrads, scale: f64) {
        self.context.add_scaled(&other.context, scale);
        self.candidate.add_scaled(&other.candidate, scale);
        self.head.add_scaled(&other.head, scale);
    }
}

impl RelevanceModel {
    pub fn new(shape: EncoderShape, input: InputConfig, seed: u64) -> Self {
        Self {
            context_tower: shape.init(derive(seed, 1)),
            candidate_tower: shape.init(derive(seed, 2)),
            head: AffineHead::new(4 * shape.embed_dim, derive(seed, 3)),
            input,
        }
    }

    pub fn zeros(shape: EncoderShape, input: InputConfig) -> Self {
        Self {
            context_tower: shape.zeros(),
            candidate_tower: shape.zeros(),
            head: AffineHead::zeros(4 * shape.embed_dim),
            input,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.context_tower.embed_dim
    }

    pub fn encode_context(&self, ctx_tokens: &[String]) -> Embedding {
        forward(&self.context_tower, ctx_tokens).output
    }

    pub fn logit_with(&self, ctx: &Embedding, cand_tokens: &[String]) -> f64 {
        let cand = forward(&self.candidate_tower, cand_tokens).output;
        self.head.logit(&pair_features(ctx.as_slice(), cand.as_slice()))
    }

    pub fn logit(&self, ctx_tokens: &[String], cand_tokens: &[String]) -> f64 {
        self.logit_with(&self.encode_context(ctx_tokens), cand_tokens)
    }

    /// Logit and the gradient of `dlogit · logit` for all parameters.
    pub fn backward(&self, ctx_tokens: &[String], cand_tokens: &[String], dlogit: f64) -> (f64, RelevanceGrads) {
        let (logit, grads, _) = self.backward_with(ctx_tokens, cand_tokens, |_| dlogit);
        (logit, grads)
    }

    /// Like [`backward`](Self::backward), with the upstream gradient computed
    /// from the logit (e.g. a loss derivative). Also returns the loss-side value.
    pub fn backward_with<F: FnOnce(f64) -> f64>(
        &self,
        ctx_tokens: &[String],
        cand_tokens: &[String],
        upstream: F,
    ) -> (f64, RelevanceGrads, f64) {
        let ct = forward(&self.context_tower, ctx_tokens);
        let st = forward(&self.candidate_tower, cand_tokens);
        let feats = pair_features(ct.output.as_slice(), st.output.as_slice());
        let logit = self.head.logit(&feats);
        let g = upstream(logit);
        let (head, dfeat) = self.head.backward(&feats, g);
        let (dc, ds) = pair_features_backward(ct.output.as_slice(), st.output.as_slice(), &dfeat);
        let grads = RelevanceGrads {
            context: ct.backward(&self.context_tower, &dc),
            candidate: st.backward(&self.candidate_tower, &ds),
            head,
        };
        (logit, grads, g)
    }

    pub fn apply(&mut self, grads: &RelevanceGrads, learning_rate: f64) {
        self.context_tower.apply(&grads.context, learning_rate);
        self.candidate_tower.apply(&grads.candidate, learning_rate);
        self.head.apply(&grads.head, learning_rate);
    }

    pub fn scale_head(&mut self, c: f64) {
        self.head.weights.iter_mut().for_each(|w| *w *= c);
        self.head.bias *= c;
    }
}

/// Probability that `cand_text` is relevant to the context. Counts as one
/// model invocation.
pub fn score_relevance(m: &RelevanceModel, ctx_tokens: &[String], cand_text: &str, calls: &mut CallCounter) -> f64 {
    calls.tick();
    sigmoid(m.logit(ctx_tokens, &tokenize(cand_text)))
}

pub(crate) fn put_input(ck: &mut Checkpoint, input: &InputConfig) {
    ck.meta.insert("input".into(), json!(input));
}

pub(crate) fn take_input(ck: &Checkpoint) -> Result<InputConfig> {
    let v = ck.meta.get("input").ok_or_else(|| Error::Checkpoint("missing input config".into()))?;
    Ok(serde_json::from_value(v.clone())?)
}

pub(crate) fn put_head(ck: &mut Checkpoint, name: &str, head: &AffineHead) {
    ck.push(format!("{name}.weights"), vec![head.weights.len()], head.weights.clone());
    ck.push(format!("{name}.bias"), vec![1], vec![head.bias]);
}

pub(crate) fn take_head(ck: &Checkpoint, name: &str) -> Result<AffineHead> {
    Ok(AffineHead {
        weights: ck.tensor(&format!("{name}.weights"))?.data.clone(),
        bias: *ck
            .tensor(&format!("{name}.bias"))?
            .data
            .first()
            .ok_or_else(|| Error::Checkpoint(format!("empty {name}.bias")))?,
    })
}

impl RelevanceModel {
    pub(crate) fn write_prefixed(&self, ck: &mut Checkpoint, prefix: &str) {
        ck.put_encoder(&format!("{prefix}context"), &self.context_tower);
        ck.put_encoder(&format!("{prefix}candidate"), &self.candidate_tower);
        put_head(ck, &format!("{prefix}head"), &self.head);
    }

    pub(crate) fn read_prefixed(ck: &Checkpoint, prefix: &str, input: InputConfig) -> Result<Self> {
        let m = Self {
            context_tower: ck.take_encoder(&format!("{prefix}context"))?,
            candidate_tower: ck.take_encoder(&format!("{prefix}candidate"))?,
            head: take_head(ck, &format!("{prefix}head"))?,
            input,
        };
        if m.head.input_dim() != 4 * m.embed_dim() || m.candidate_tower.embed_dim != m.embed_dim() {
            return Err(Error::Checkpoint("relevance model dimensions are inconsistent".into()));
        }
        Ok(m)
    }
}

impl Checkpointable for RelevanceModel {
    const KIND: &'static str = "relevance";

    fn write_into(&self, ck: &mut Checkpoint) {
        put_input(ck, &self.input);
        self.write_prefixed(ck, "");
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        Self::read_prefixed(ck, "", take_input(ck)?)
    }
}
