//! Greedy, beam and nucleus decoding over an arbitrary next-token
//! distribution, so single-snippet and mixture decoding share one code path.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogContext, Snippet};
use crate::error::{Error, Result};
use crate::generation::model::{GeneratorModel, BOS, EOS};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    Beam,
    Nucleus,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub beam_size: usize,
    pub repetition_penalty: f64,
    pub max_length: usize,
    pub nucleus_p: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { strategy: DecodeStrategy::Beam, beam_size: 4, repetition_penalty: 1.2, max_length: 60, nucleus_p: 0.9, seed: 0 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::Config(format!("repetition_penalty must be ≥ 1, got {}", self.repetition_penalty)));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(Error::Config(format!("nucleus_p must lie in (0, 1], got {}", self.nucleus_p)));
        }
        Ok(())
    }

    pub fn greedy() -> Self {
        Self { strategy: DecodeStrategy::Greedy, ..Self::default() }
    }
}

/// Highest-probability token; the lowest id wins ties.
fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Decodes with `dist(prefix)` as the next-token distribution. `<bos>` is
/// never emitted: its mass is removed and the rest renormalized. The returned
/// tokens exclude `<bos>` and the terminating `<eos>`; `max_length` counts
/// generated tokens including `<eos>`.
pub fn decode_with<F>(dist: F, cfg: &DecodeConfig) -> Vec<usize>
where
    F: Fn(&[usize]) -> Vec<f64>,
{
    let dist = |prefix: &[usize]| {
        let mut p = dist(prefix);
        if let Some(b) = p.get_mut(BOS) {
            *b = 0.0;
        }
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|x| *x /= total);
        }
        p
    };
    match cfg.strategy {
        DecodeStrategy::Greedy => sample_loop(&dist, cfg, argmax),
        DecodeStrategy::Nucleus => {
            let mut rng = seeded(cfg.seed);
            sample_loop(&dist, cfg, |p| sample_nucleus(p, cfg.nucleus_p, rng.gen::<f64>()))
        }
        DecodeStrategy::Beam => beam(&dist, cfg),
    }
}

fn sample_loop<F, P>(dist: &F, cfg: &DecodeConfig, mut pick: P) -> Vec<usize>
where
    F: Fn(&[usize]) -> Vec<f64>,
    P: FnMut(&[f64]) -> usize,
{
    let mut prefix = vec![BOS];
    for _ in 0..cfg.max_length {
        let t = pick(&dist(&prefix));
        if t == EOS {
            break;
        }
        prefix.push(t);
    }
    prefix.split_off(1)
}

/// Smallest highest-probability set with mass ≥ `p`, renormalized, then
/// inverse-CDF sampling with `u ∈ [0, 1)`.
pub fn nucleus_set(probs: &[f64], p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push((i, probs[i]));
        mass += probs[i];
        if mass >= p {
            break;
        }
    }
    kept.into_iter().map(|(i, q)| (i, q / mass)).collect()
}

fn sample_nucleus(probs: &[f64], p: f64, u: f64) -> usize {
    let set = nucleus_set(probs, p);
    let mut acc = 0.0;
    for &(i, q) in &set {
        acc += q;
        if u < acc {
            return i;
        }
    }
    set.last().map(|x| x.0).unwrap_or(EOS)
}

struct Hyp {
    tokens: Vec<usize>,
    score: f64,
}

/// Beam search ranked by total log-probability. Expansions that emit
/// `<eos>` retire; the search ends when no hypothesis is alive or the length
/// cap is reached, then the best retired or alive hypothesis wins.
fn beam<F>(dist: &F, cfg: &DecodeConfig) -> Vec<usize>
where
    F: Fn(&[usize]) -> Vec<f64>,
{
    let mut alive = vec![Hyp { tokens: vec![BOS], score: 0.0 }];
    let mut done: Vec<Hyp> = Vec::new();
    for _ in 0..cfg.max_length {
        // (score, beam, prob, token)
        let mut cands: Vec<(f64, usize, f64, usize)> = Vec::new();
        for (b, h) in alive.iter().enumerate() {
            for (t, &p) in dist(&h.tokens).iter().enumerate() {
                if p > 0.0 {
                    cands.push((h.score + p.ln(), b, p, t));
                }
            }
        }
        cands.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then(x.1.cmp(&y.1))
                .then(y.2.total_cmp(&x.2))
                .then(x.3.cmp(&y.3))
        });
        cands.truncate(cfg.beam_size);
        let mut next = Vec::new();
        for (score, b, _, t) in cands {
            let mut tokens = alive[b].tokens.clone();
            if t == EOS {
                done.push(Hyp { tokens, score });
            } else {
                tokens.push(t);
                next.push(Hyp { tokens, score });
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    let best = done
        .into_iter()
        .chain(alive)
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
        .map(|(_, h)| h.tokens)
        .unwrap_or_else(|| vec![BOS]);
    best[1..].to_vec()
}

/// Decodes a response conditioned on one snippet.
pub fn decode(g: &GeneratorModel, ctx: &DialogContext, snippet: &Snippet, cfg: &DecodeConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let h = g.condition(ctx, snippet);
    Ok(decode_with(|prefix| g.step_dist(prefix, &h, cfg.repetition_penalty), cfg))
}
