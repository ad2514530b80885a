//! Plain-SGD training loops for the dual encoder and for pairwise relevance
//! classifiers.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::DualEncoder;
use crate::corpus::{InputConfig, KnowledgeBase, LabeledDialog, Snippet};
use crate::encoder::{forward, EncoderGrads, EncoderShape, SimilarityKind};
use crate::error::{Error, Result};
use crate::metric_learning::losses::{binary_ce_loss, nll_loss, triplet_loss, TripletConfig};
use crate::metric_learning::sampling::{sample_negatives_with, HardMining, NegativeSampling};
use crate::rng::{derive, seeded, Rng};
use crate::selection::relevance::{RelevanceGrads, RelevanceModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub sampling: NegativeSampling,
    pub seed: u64,
    pub encoder: EncoderShape,
    pub input: InputConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            steps: 1000,
            batch_size: 8,
            sampling: NegativeSampling::default(),
            seed: 0,
            encoder: EncoderShape::default(),
            input: InputConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.encoder.bucket_count == 0 || self.encoder.embed_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        self.sampling.validate()
    }
}

/// Mean training loss per step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace(pub Vec<f64>);

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.0.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }

    /// Trailing-window means; empty when the trace is shorter than `window`.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 || self.0.len() < window {
            return Vec::new();
        }
        self.0.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DkrLoss {
    Triplet(TripletConfig),
    Nll,
}

impl DkrLoss {
    /// Similarity the retriever ranks with after training with this loss.
    pub fn similarity(&self) -> SimilarityKind {
        match self {
            DkrLoss::Triplet(_) => SimilarityKind::NegativeEuclidean,
            DkrLoss::Nll => SimilarityKind::Dot,
        }
    }
}

pub(crate) fn knowledge_seeking(corpus: &[LabeledDialog]) -> Vec<&LabeledDialog> {
    corpus.iter().filter(|d| d.target && !d.gold_snippets.is_empty()).collect()
}

pub(crate) fn draw_batch(rng: &mut Rng, len: usize, batch_size: usize) -> Vec<usize> {
    if batch_size >= len {
        (0..len).collect()
    } else {
        (0..batch_size).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Trains the context and snippet towers of a dense retriever.
///
/// Each step draws `batch_size` dialogs (the whole corpus when the batch is
/// at least as large), uses the first gold snippet as positive and samples
/// negatives per `cfg.sampling`. Both towers are updated with plain SGD on
/// the batch-mean loss.
pub fn train_dkr(
    corpus: &[LabeledDialog],
    kb: &KnowledgeBase,
    loss: DkrLoss,
    cfg: &TrainConfig,
) -> Result<(DualEncoder, LossTrace)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("dense retrieval training needs a non-empty corpus".into()));
    }
    if corpus.iter().any(|d| !d.target || d.gold_snippets.is_empty()) {
        return Err(Error::Config("dense retrieval training takes knowledge-seeking dialogs only".into()));
    }
    let gold_pos: Vec<usize> = corpus
        .iter()
        .map(|d| {
            kb.position(&d.gold_snippets[0])
                .ok_or_else(|| Error::Integrity(format!("gold snippet {} not in knowledge base", d.gold_snippets[0])))
        })
        .collect::<Result<_>>()?;
    let contexts: Vec<Vec<String>> = corpus.iter().map(|d| cfg.input.context_tokens(&d.context)).collect();
    let snippet_tokens: Vec<Vec<String>> = kb.snippets().iter().map(|s| cfg.input.snippet_tokens(s)).collect();

    let mut enc = DualEncoder {
        context: cfg.encoder.init(derive(cfg.seed, 1)),
        snippet: cfg.encoder.init(derive(cfg.seed, 2)),
    };
    let mut rng = seeded(derive(cfg.seed, 3));
    let kind = loss.similarity();
    let d = cfg.encoder.embed_dim;
    let mut trace = LossTrace::default();

    for _ in 0..cfg.steps {
        let batch = draw_batch(&mut rng, corpus.len(), cfg.batch_size);
        let scale = 1.0 / batch.len() as f64;
        let mut g_ctx = EncoderGrads::zeros(d);
        let mut g_snip = EncoderGrads::zeros(d);
        let mut total = 0.0;
        for &i in &batch {
            let anchor = forward(&enc.context, &contexts[i]);
            let positive = forward(&enc.snippet, &snippet_tokens[gold_pos[i]]);
            let embed = |s: &Snippet| forward(&enc.snippet, &snippet_tokens[kb.position(&s.id).unwrap()]).output;
            let hard = HardMining { anchor: &anchor.output, embed: &embed, kind };
            let negatives: Vec<_> = sample_negatives_with(&mut rng, kb, &corpus[i].gold_snippets[0], &cfg.sampling, Some(&hard))?
                .into_iter()
                .map(|s| forward(&enc.snippet, &snippet_tokens[kb.position(&s.id).unwrap()]))
                .collect();
            match loss {
                DkrLoss::Nll => {
                    let neg_out: Vec<_> = negatives.iter().map(|t| t.output.clone()).collect();
                    let (l, g) = nll_loss(&anchor.output, &positive.output, &neg_out)?;
                    total += l;
                    g_ctx.add_scaled(&anchor.backward(&enc.context, &g.anchor), scale);
                    g_snip.add_scaled(&positive.backward(&enc.snippet, &g.positive), scale);
                    for (t, gn) in negatives.iter().zip(&g.negatives) {
                        g_snip.add_scaled(&t.backward(&enc.snippet, gn), scale);
                    }
                }
                DkrLoss::Triplet(tc) => {
                    let m = negatives.len() as f64;
                    let mut ga = vec![0.0; d];
                    let mut gp = vec![0.0; d];
                    for t in &negatives {
                        let (l, g) = triplet_loss(&anchor.output, &positive.output, &t.output, &tc);
                        total += l / m;
                        for k in 0..d {
                            ga[k] += g.anchor[k] / m;
                            gp[k] += g.positive[k] / m;
                        }
                        let gn: Vec<f64> = g.negative.iter().map(|v| v / m).collect();
                        g_snip.add_scaled(&t.backward(&enc.snippet, &gn), scale);
                    }
                    g_ctx.add_scaled(&anchor.backward(&enc.context, &ga), scale);
                    g_snip.add_scaled(&positive.backward(&enc.snippet, &gp), scale);
                }
            }
        }
        enc.context.apply(&g_ctx, cfg.learning_rate);
        enc.snippet.apply(&g_snip, cfg.learning_rate);
        trace.0.push(total * scale);
    }
    Ok((enc, trace))
}

/// One labeled (context, candidate) pair for a binary relevance classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct PairExample {
    pub context: Vec<String>,
    pub candidate: Vec<String>,
    pub label: bool,
}

/// SGD step on the mean binary cross-entropy of `batch`; returns the mean loss.
pub fn pair_sgd_step(model: &mut RelevanceModel, batch: &[PairExample], learning_rate: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = RelevanceGrads::zeros(model.embed_dim());
    let mut total = 0.0;
    for ex in batch {
        let mut loss = 0.0;
        let (_, g, _) = model.backward_with(&ex.context, &ex.candidate, |logit| {
            let (l, dl) = binary_ce_loss(logit, ex.label);
            loss = l;
            dl
        });
        total += loss;
        grads.add_scaled(&g, scale);
    }
    model.apply(&grads, learning_rate);
    total * scale
}

/// Runs `cfg.steps` SGD steps; `make_batch` supplies each step's examples.
pub fn train_pairs<F>(model: &mut RelevanceModel, cfg: &TrainConfig, rng: &mut Rng, mut make_batch: F) -> Result<LossTrace>
where
    F: FnMut(&mut Rng) -> Result<Vec<PairExample>>,
{
    let mut trace = LossTrace::default();
    for _ in 0..cfg.steps {
        let batch = make_batch(rng)?;
        trace.0.push(pair_sgd_step(model, &batch, cfg.learning_rate));
    }
    Ok(trace)
}

/// Flat relevance classifier: each sampled dialog contributes its gold
/// snippet as a positive and `num_negatives` random snippets as negatives.
pub fn train_relevance(
    corpus: &[LabeledDialog],
    kb: &KnowledgeBase,
    cfg: &TrainConfig,
) -> Result<(RelevanceModel, LossTrace)> {
    cfg.validate()?;
    let dialogs = knowledge_seeking(corpus);
    if dialogs.is_empty() {
        return Err(Error::Config("relevance training needs knowledge-seeking dialogs".into()));
    }
    let contexts: Vec<Vec<String>> = dialogs.iter().map(|d| cfg.input.context_tokens(&d.context)).collect();
    let mut model = RelevanceModel::new(cfg.encoder, cfg.input, derive(cfg.seed, 1));
    let mut rng = seeded(derive(cfg.seed, 2));
    let mut sampling = cfg.sampling;
    sampling.num_negatives = sampling.num_negatives.min(kb.len().saturating_sub(1)).max(1);
    sampling.strategy = crate::metric_learning::SamplingStrategy::Random;
    let input = cfg.input;
    let trace = train_pairs(&mut model, cfg, &mut rng, |rng| {
        let mut batch = Vec::new();
        for i in draw_batch(rng, dialogs.len(), cfg.batch_size) {
            let gold = &dialogs[i].gold_snippets[0];
            let positive = kb
                .get(gold)
                .ok_or_else(|| Error::Integrity(format!("gold snippet {gold} not in knowledge base")))?;
            batch.push(PairExample {
                context: contexts[i].clone(),
                candidate: input.snippet_tokens(positive),
                label: true,
            });
            for neg in sample_negatives_with(rng, kb, gold, &sampling, None)? {
                batch.push(PairExample {
                    context: contexts[i].clone(),
                    candidate: input.snippet_tokens(neg),
                    label: false,
                });
            }
        }
        Ok(batch)
    })?;
    Ok((model, trace))
}
