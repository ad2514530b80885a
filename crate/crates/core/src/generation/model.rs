//! Conditional language model: next-token logits are a bigram table plus an
//! affine read-out of the encoded (context ∥ snippet) text.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogContext, InputConfig, Snippet};
use crate::encoder::{forward, tokenize, Embedding, EncoderGrads, EncoderParams, EncoderShape, EncoderTrace, INIT_RANGE};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const SPECIALS: [&str; 3] = ["<bos>", "<eos>", "<unk>"];
pub const DEFAULT_MAX_VOCAB: usize = 2000;

/// Closed word list: the three specials, then the most frequent training
/// words (ties alphabetical), at most `max_words` of them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    pub fn build<'a, I>(responses: I, max_words: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in responses {
            for w in r {
                if !SPECIALS.contains(&w.as_str()) {
                    *counts.entry(w.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut kept: Vec<&str> = ranked.into_iter().take(max_words).map(|(w, _)| w).collect();
        kept.sort_unstable();
        words.extend(kept.into_iter().map(String::from));
        words.into()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn words_of(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.word(i).to_string()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub vocab: Vocabulary,
    /// `|V| × |V|`, row = previous token.
    pub bigram: Vec<f64>,
    /// `|V| × d`, row = output token.
    pub cond_weights: Vec<f64>,
    pub cond_bias: Vec<f64>,
    pub condition_tower: EncoderParams,
    pub input: InputConfig,
}

#[derive(Clone, Debug)]
pub struct GeneratorGrads {
    pub bigram: BTreeMap<usize, Vec<f64>>,
    pub cond_weights: Vec<f64>,
    pub cond_bias: Vec<f64>,
    pub tower: EncoderGrads,
}

impl GeneratorGrads {
    pub fn zeros(vocab: usize, embed_dim: usize) -> Self {
        Self {
            bigram: BTreeMap::new(),
            cond_weights: vec![0.0; vocab * embed_dim],
            cond_bias: vec![0.0; vocab],
            tower: EncoderGrads::zeros(embed_dim),
        }
    }

    pub fn add_scaled(&mut self, other: &GeneratorGrads, scale: f64) {
        for (r, g) in &other.bigram {
            let row = self.bigram.entry(*r).or_insert_with(|| vec![0.0; g.len()]);
            row.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
        }
        self.cond_weights.iter_mut().zip(&other.cond_weights).for_each(|(a, b)| *a += scale * b);
        self.cond_bias.iter_mut().zip(&other.cond_bias).for_each(|(a, b)| *a += scale * b);
        self.tower.add_scaled(&other.tower, scale);
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Divides positive logits of already generated tokens by `penalty` and
/// multiplies negative ones, once per distinct token. A penalty of exactly 1
/// leaves the logits untouched.
pub fn apply_repetition_penalty(logits: &mut [f64], generated: &BTreeSet<usize>, penalty: f64) {
    if penalty == 1.0 {
        return;
    }
    for &t in generated {
        if let Some(l) = logits.get_mut(t) {
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
}

impl GeneratorModel {
    pub fn new(vocab: Vocabulary, shape: EncoderShape, input: InputConfig, seed: u64) -> Self {
        let v = vocab.len();
        let d = shape.embed_dim;
        let mut rng = seeded(derive(seed, 1));
        let cond_weights = (0..v * d).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
        Self {
            vocab,
            bigram: vec![0.0; v * v],
            cond_weights,
            cond_bias: vec![0.0; v],
            condition_tower: shape.init(derive(seed, 2)),
            input,
        }
    }

    pub fn zeros(vocab: Vocabulary, shape: EncoderShape, input: InputConfig) -> Self {
        let v = vocab.len();
        Self {
            vocab,
            bigram: vec![0.0; v * v],
            cond_weights: vec![0.0; v * shape.embed_dim],
            cond_bias: vec![0.0; v],
            condition_tower: shape.zeros(),
            input,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.condition_tower.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vocab_size();
        let d = self.embed_dim();
        if self.bigram.len() != v * v || self.cond_weights.len() != v * d || self.cond_bias.len() != v {
            return Err(Error::Checkpoint("generator tensors do not match the vocabulary".into()));
        }
        if v < SPECIALS.len() || (0..SPECIALS.len()).any(|i| self.vocab.word(i) != SPECIALS[i]) {
            return Err(Error::Checkpoint("vocabulary must start with <bos>, <eos>, <unk>".into()));
        }
        self.condition_tower.validate()?;
        if !self.bigram.iter().chain(&self.cond_weights).chain(&self.cond_bias).all(|x| x.is_finite()) {
            return Err(Error::Checkpoint("generator parameters are not finite".into()));
        }
        Ok(())
    }

    /// Tokens the condition tower sees: context followed by the snippet.
    pub fn condition_tokens(&self, ctx: &DialogContext, snippet: &Snippet) -> Vec<String> {
        let mut t = self.input.context_tokens(ctx);
        t.extend(self.input.snippet_tokens(snippet));
        t
    }

    pub fn condition_trace(&self, ctx: &DialogContext, snippet: &Snippet) -> EncoderTrace {
        forward(&self.condition_tower, &self.condition_tokens(ctx, snippet))
    }

    pub fn condition(&self, ctx: &DialogContext, snippet: &Snippet) -> Embedding {
        self.condition_trace(ctx, snippet).output
    }

    /// Unpenalized next-token logits after `prev`.
    pub fn logits(&self, prev: usize, h: &Embedding) -> Vec<f64> {
        let v = self.vocab_size();
        let d = self.embed_dim();
        let row = &self.bigram[prev * v..(prev + 1) * v];
        (0..v)
            .map(|w| {
                let wr = &self.cond_weights[w * d..(w + 1) * d];
                row[w] + self.cond_bias[w] + wr.iter().zip(&h.0).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Next-token distribution for a prefix that starts with `<bos>`; the
    /// tokens after `<bos>` count as generated for the repetition penalty.
    pub fn step_dist(&self, prefix: &[usize], h: &Embedding, penalty: f64) -> Vec<f64> {
        let prev = *prefix.last().unwrap_or(&BOS);
        let mut logits = self.logits(prev, h);
        let generated: BTreeSet<usize> = prefix.iter().skip(1).copied().collect();
        apply_repetition_penalty(&mut logits, &generated, penalty);
        softmax(&logits)
    }

    /// Teacher-forced log-probability of `response` followed by `<eos>`.
    pub fn sequence_logprob_with(&self, h: &Embedding, response: &[usize]) -> f64 {
        let mut prev = BOS;
        let mut total = 0.0;
        for &y in response.iter().chain(std::iter::once(&EOS)) {
            total += log_softmax_at(&self.logits(prev, h), y);
            prev = y;
        }
        total
    }

    pub fn sequence_logprob(&self, ctx: &DialogContext, snippet: &Snippet, response: &[usize]) -> f64 {
        self.sequence_logprob_with(&self.condition(ctx, snippet), response)
    }

    /// Teacher-forced negative log-likelihood of `response` + `<eos>` and its
    /// gradient with respect to every parameter.
    pub fn nll_backward(&self, ctx: &DialogContext, snippet: &Snippet, response: &[usize]) -> (f64, GeneratorGrads) {
        let trace = self.condition_trace(ctx, snippet);
        self.nll_backward_with(&trace, response)
    }

    pub fn nll_backward_with(&self, trace: &EncoderTrace, response: &[usize]) -> (f64, GeneratorGrads) {
        let v = self.vocab_size();
        let d = self.embed_dim();
        let h = &trace.output;
        let mut g = GeneratorGrads::zeros(v, d);
        let mut dh = vec![0.0; d];
        let mut loss = 0.0;
        let mut prev = BOS;
        for &y in response.iter().chain(std::iter::once(&EOS)) {
            let logits = self.logits(prev, h);
            loss -= log_softmax_at(&logits, y);
            let mut dl = softmax(&logits);
            dl[y] -= 1.0;
            let row = g.bigram.entry(prev).or_insert_with(|| vec![0.0; v]);
            for w in 0..v {
                row[w] += dl[w];
                g.cond_bias[w] += dl[w];
                let wr = &self.cond_weights[w * d..(w + 1) * d];
                let gw = &mut g.cond_weights[w * d..(w + 1) * d];
                for k in 0..d {
                    gw[k] += dl[w] * h.0[k];
                    dh[k] += dl[w] * wr[k];
                }
            }
            prev = y;
        }
        g.tower = trace.backward(&self.condition_tower, &dh);
        (loss, g)
    }

    pub fn apply(&mut self, g: &GeneratorGrads, learning_rate: f64) {
        let v = self.vocab_size();
        for (r, row) in &g.bigram {
            for (p, x) in self.bigram[r * v..(r + 1) * v].iter_mut().zip(row) {
                *p -= learning_rate * x;
            }
        }
        self.cond_weights.iter_mut().zip(&g.cond_weights).for_each(|(p, x)| *p -= learning_rate * x);
        self.cond_bias.iter_mut().zip(&g.cond_bias).for_each(|(p, x)| *p -= learning_rate * x);
        self.condition_tower.apply(&g.tower, learning_rate);
    }

    /// Tokenizes and maps a response string to vocabulary ids.
    pub fn response_ids(&self, response: &str) -> Vec<usize> {
        self.vocab.encode(&tokenize(response))
    }

    /// Joins decoded ids into text, dropping specials other than `<unk>`.
    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BOS && i != EOS)
            .map(|&i| self.vocab.word(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub(crate) fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[i] - lse
}

/// Next-token distribution for `prefix` (starting with `<bos>`) given the
/// context and the conditioning snippet.
pub fn next_token_dist(
    g: &GeneratorModel,
    prefix: &[usize],
    ctx: &DialogContext,
    snippet: &Snippet,
    penalty: f64,
) -> Vec<f64> {
    g.step_dist(prefix, &g.condition(ctx, snippet), penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SnippetId;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn snippet() -> Snippet {
        Snippet { id: SnippetId::new("hotel", "1", "0"), entity_name: Some("Alpha".into()), question: "Pets?".into(), answer: "No.".into() }
    }

    fn vocab() -> Vocabulary {
        let a = toks("yes it has parking");
        let b = toks("no parking sorry");
        Vocabulary::build([a.as_slice(), b.as_slice()], 100)
    }

    #[test]
    fn vocabulary_layout() {
        let v = vocab();
        assert_eq!(v.word(BOS), "<bos>");
        assert_eq!(v.word(3), "has");
        assert_eq!(v.id("parking"), 6);
        assert_eq!(v.id("zebra"), UNK);
        let capped = Vocabulary::build([toks("b a a c c c").as_slice()], 2);
        assert_eq!(capped.len(), 5);
        assert_eq!(capped.id("b"), UNK);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }

    #[test]
    fn zero_model_is_uniform() {
        let g = GeneratorModel::zeros(vocab(), EncoderShape { bucket_count: 16, embed_dim: 3 }, InputConfig::default());
        let p = next_token_dist(&g, &[BOS], &DialogContext::user("hi"), &snippet(), 1.2);
        let u = 1.0 / g.vocab_size() as f64;
        assert!(p.iter().all(|x| (x - u).abs() < 1e-15));
    }

    #[test]
    fn penalty_lowers_repeated_positive_logit() {
        let mut g = GeneratorModel::new(vocab(), EncoderShape { bucket_count: 16, embed_dim: 3 }, InputConfig::default(), 4);
        let v = g.vocab_size();
        g.bigram[5 * v + 5] = 3.0;
        let ctx = DialogContext::user("hi");
        let plain = next_token_dist(&g, &[BOS, 5], &ctx, &snippet(), 1.0);
        let pen = next_token_dist(&g, &[BOS, 5], &ctx, &snippet(), 1.2);
        assert!(pen[5] < plain[5]);
        let fresh = next_token_dist(&g, &[BOS], &ctx, &snippet(), 1.0);
        let h = g.condition(&ctx, &snippet());
        let unpen = softmax(&g.logits(BOS, &h));
        assert_eq!(fresh, unpen);
    }

    #[test]
    fn logprob_matches_nll() {
        let g = GeneratorModel::new(vocab(), EncoderShape { bucket_count: 16, embed_dim: 3 }, InputConfig::default(), 8);
        let ctx = DialogContext::user("parking please");
        let r = g.response_ids("yes it has parking");
        let lp = g.sequence_logprob(&ctx, &snippet(), &r);
        let (nll, _) = g.nll_backward(&ctx, &snippet(), &r);
        assert!(lp < 0.0);
        assert!((lp + nll).abs() < 1e-12);
        assert_eq!(g.render(&r), "yes it has parking");
    }
}
