//! Generator training on (context, snippet, response) triples and joint
//! RAG fine-tuning of the generator with the retrieval context tower.

use serde_json::json;

use crate::checkpoint::{Checkpoint, Checkpointable};
use crate::corpus::{KnowledgeBase, LabeledDialog, Snippet};
use crate::encoder::{forward, similarity_grad, tokenize, EncoderGrads, EncoderParams};
use crate::error::{Error, Result};
use crate::generation::model::{softmax, GeneratorGrads, GeneratorModel, Vocabulary};
use crate::generation::rag::log_sum_exp;
use crate::metric_learning::train::{draw_batch, LossTrace, TrainConfig};
use crate::rng::{derive, seeded};
use crate::selection::{relevance, SnippetIndex, Selector};

/// Which snippet the generator is conditioned on during training.
#[derive(Clone, Copy)]
pub enum Conditioning<'a> {
    /// The first gold snippet.
    Gold,
    /// The top-ranked snippet of a selector.
    Selected(&'a dyn Selector),
}

/// Knowledge-seeking dialogs with a gold snippet and a gold response.
fn generation_examples(corpus: &[LabeledDialog]) -> Vec<&LabeledDialog> {
    corpus
        .iter()
        .filter(|d| d.target && !d.gold_snippets.is_empty() && d.gold_response.is_some())
        .collect()
}

/// Fits a generator with teacher-forced cross-entropy: each step takes the
/// batch mean of per-response summed token losses (including `<eos>`).
pub fn train_generator(
    corpus: &[LabeledDialog],
    kb: &KnowledgeBase,
    conditioning: Conditioning<'_>,
    max_vocab: usize,
    cfg: &TrainConfig,
) -> Result<(GeneratorModel, LossTrace)> {
    cfg.validate()?;
    let dialogs = generation_examples(corpus);
    if dialogs.is_empty() {
        return Err(Error::Config("generator training needs dialogs with gold responses".into()));
    }
    let responses: Vec<Vec<String>> = dialogs.iter().map(|d| tokenize(d.gold_response.as_deref().unwrap())).collect();
    let vocab = Vocabulary::build(responses.iter().map(|r| r.as_slice()), max_vocab);
    let mut g = GeneratorModel::new(vocab, cfg.encoder, cfg.input, derive(cfg.seed, 1));
    let mut examples: Vec<(&LabeledDialog, &Snippet, Vec<usize>)> = Vec::with_capacity(dialogs.len());
    for (d, r) in dialogs.iter().zip(&responses) {
        let snippet = match conditioning {
            Conditioning::Gold => {
                let id = &d.gold_snippets[0];
                kb.get(id).ok_or_else(|| Error::Integrity(format!("gold snippet {id} not in knowledge base")))?
            }
            Conditioning::Selected(sel) => {
                let ranked = sel.select(kb, &d.context)?;
                let top = ranked.top().ok_or_else(|| Error::Usage("selector returned an empty ranking".into()))?;
                kb.get(&top.id).ok_or_else(|| Error::Integrity(format!("selected snippet {} not in knowledge base", top.id)))?
            }
        };
        examples.push((d, snippet, g.vocab.encode(r)));
    }
    let mut rng = seeded(derive(cfg.seed, 2));
    let mut trace = LossTrace::default();
    for _ in 0..cfg.steps {
        let batch = draw_batch(&mut rng, examples.len(), cfg.batch_size);
        let scale = 1.0 / batch.len() as f64;
        let mut grads = GeneratorGrads::zeros(g.vocab_size(), g.embed_dim());
        let mut total = 0.0;
        for i in batch {
            let (d, s, r) = &examples[i];
            let (loss, gi) = g.nll_backward(&d.context, s, r);
            total += loss;
            grads.add_scaled(&gi, scale);
        }
        g.apply(&grads, cfg.learning_rate);
        trace.0.push(total * scale);
    }
    Ok((g, trace))
}

/// Indices of the `n` best-scoring rows (ties by row order) with `gold`
/// forced in by replacing the last member when absent.
pub fn top_n_with_gold(scores: &[f64], n: usize, gold: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n.max(1));
    if !order.contains(&gold) {
        *order.last_mut().unwrap() = gold;
    }
    order
}

#[derive(Clone, Debug)]
pub struct RagJointOutput {
    pub generator: GeneratorModel,
    pub context_encoder: EncoderParams,
    pub trace: LossTrace,
}

/// Joint fine-tuning: per dialog, retrieve the top-n snippets from the
/// fixed index, force-include the gold snippet, softmax the similarities
/// into a posterior and minimize the negative sequence-level marginal
/// log-likelihood. Only the generator and the context tower move; the
/// index (and the snippet tower behind it) is read-only.
pub fn train_rag_joint(
    generator: GeneratorModel,
    context_encoder: EncoderParams,
    index: &SnippetIndex,
    corpus: &[LabeledDialog],
    kb: &KnowledgeBase,
    n: usize,
    cfg: &TrainConfig,
) -> Result<RagJointOutput> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(Error::Usage("cannot train against an empty index".into()));
    }
    if context_encoder.embed_dim != index.dim {
        return Err(Error::Config("context encoder and index dimensions differ".into()));
    }
    let dialogs = generation_examples(corpus);
    if dialogs.is_empty() {
        return Err(Error::Config("joint training needs dialogs with gold responses".into()));
    }
    let snippets: Vec<&Snippet> = index
        .ids
        .iter()
        .map(|id| kb.get(id).ok_or_else(|| Error::Integrity(format!("indexed snippet {id} not in knowledge base"))))
        .collect::<Result<_>>()?;
    let examples: Vec<(Vec<String>, usize, Vec<usize>)> = dialogs
        .iter()
        .map(|d| {
            let gold = &d.gold_snippets[0];
            let row = index
                .ids
                .iter()
                .position(|id| id == gold)
                .ok_or_else(|| Error::Integrity(format!("gold snippet {gold} not in index")))?;
            let resp = generator.response_ids(d.gold_response.as_deref().unwrap());
            Ok((index.input.context_tokens(&d.context), row, resp))
        })
        .collect::<Result<_>>()?;

    let mut g = generator;
    let mut ctx_enc = context_encoder;
    let d = ctx_enc.embed_dim;
    let mut rng = seeded(derive(cfg.seed, 4));
    let mut trace = LossTrace::default();
    for _ in 0..cfg.steps {
        let batch = draw_batch(&mut rng, examples.len(), cfg.batch_size);
        let scale = 1.0 / batch.len() as f64;
        let mut g_gen = GeneratorGrads::zeros(g.vocab_size(), g.embed_dim());
        let mut g_ctx = EncoderGrads::zeros(d);
        let mut total = 0.0;
        for i in batch {
            let (ctx_tokens, gold, resp) = &examples[i];
            let dialog = dialogs[i];
            let q = forward(&ctx_enc, ctx_tokens);
            let scores = index.scores(&q.output)?;
            let chosen = top_n_with_gold(&scores, n, *gold);
            let prior = softmax(&chosen.iter().map(|&k| scores[k]).collect::<Vec<_>>());
            let mut joint = Vec::with_capacity(chosen.len());
            let mut comp_grads = Vec::with_capacity(chosen.len());
            for (&k, p) in chosen.iter().zip(&prior) {
                let (nll, gk) = g.nll_backward(&dialog.context, snippets[k], resp);
                joint.push(p.ln() - nll);
                comp_grads.push(gk);
            }
            let lse = log_sum_exp(&joint);
            total -= lse;
            let post: Vec<f64> = joint.iter().map(|j| (j - lse).exp()).collect();
            let mut dq = vec![0.0; d];
            for ((&k, (p, w)), gk) in chosen.iter().zip(prior.iter().zip(&post)).zip(&comp_grads) {
                g_gen.add_scaled(gk, scale * w);
                let ds = p - w;
                if ds != 0.0 {
                    for (a, b) in dq.iter_mut().zip(similarity_grad(q.output.as_slice(), index.row(k), index.kind)) {
                        *a += ds * b;
                    }
                }
            }
            g_ctx.add_scaled(&q.backward(&ctx_enc, &dq), scale);
        }
        g.apply(&g_gen, cfg.learning_rate);
        ctx_enc.apply(&g_ctx, cfg.learning_rate);
        trace.0.push(total * scale);
    }
    Ok(RagJointOutput { generator: g, context_encoder: ctx_enc, trace })
}

impl Checkpointable for GeneratorModel {
    const KIND: &'static str = "generator";

    fn write_into(&self, ck: &mut Checkpoint) {
        relevance::put_input(ck, &self.input);
        ck.meta.insert("vocabulary".into(), json!(self.vocab));
        let v = self.vocab_size();
        ck.push("bigram", vec![v, v], self.bigram.clone());
        ck.push("cond_weights", vec![v, self.embed_dim()], self.cond_weights.clone());
        ck.push("cond_bias", vec![v], self.cond_bias.clone());
        ck.put_encoder("tower", &self.condition_tower);
    }

    fn read_from(ck: &Checkpoint) -> Result<Self> {
        let vocab: Vocabulary = serde_json::from_value(
            ck.meta.get("vocabulary").cloned().ok_or_else(|| Error::Checkpoint("missing vocabulary".into()))?,
        )?;
        let g = Self {
            vocab,
            bigram: ck.tensor("bigram")?.data.clone(),
            cond_weights: ck.tensor("cond_weights")?.data.clone(),
            cond_bias: ck.tensor("cond_bias")?.data.clone(),
            condition_tower: ck.take_encoder("tower")?,
            input: relevance::take_input(ck)?,
        };
        g.validate()?;
        Ok(g)
    }
}
