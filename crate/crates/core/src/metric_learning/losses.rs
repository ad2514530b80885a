use serde::{Deserialize, Serialize};

use crate::encoder::{dot, euclidean, Embedding};
use crate::error::{Error, Result};
use crate::heads::sigmoid;

pub const DEFAULT_MARGIN: f64 = 1.0;

/// Hinge on euclidean distances: `max(0, ‖a−p‖ − ‖a−n‖ + margin)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletConfig {
    pub margin: f64,
}

impl TripletConfig {
    pub fn new(margin: f64) -> Result<Self> {
        if !(margin.is_finite() && margin > 0.0) {
            return Err(Error::Config(format!("triplet margin must be finite and positive, got {margin}")));
        }
        Ok(Self { margin })
    }
}

impl Default for TripletConfig {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrads {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

fn unit_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    let dist = euclidean(a, b);
    if dist == 0.0 {
        vec![0.0; a.len()]
    } else {
        a.iter().zip(b).map(|(x, y)| (x - y) / dist).collect()
    }
}

pub fn triplet_loss(
    anchor: &Embedding,
    positive: &Embedding,
    negative: &Embedding,
    cfg: &TripletConfig,
) -> (f64, TripletGrads) {
    let (a, p, n) = (anchor.as_slice(), positive.as_slice(), negative.as_slice());
    let d = a.len();
    let raw = euclidean(a, p) - euclidean(a, n) + cfg.margin;
    if raw <= 0.0 {
        let zero = vec![0.0; d];
        return (0.0, TripletGrads { anchor: zero.clone(), positive: zero.clone(), negative: zero });
    }
    let u_ap = unit_diff(a, p);
    let u_an = unit_diff(a, n);
    let grads = TripletGrads {
        anchor: u_ap.iter().zip(&u_an).map(|(x, y)| x - y).collect(),
        positive: u_ap.iter().map(|x| -x).collect(),
        negative: u_an,
    };
    (raw, grads)
}

/// `−log softmax(scores)[target]`, computed against the maximum score so
/// nothing overflows. When the target holds the maximum, the sum of the
/// remaining terms goes through `ln_1p`, keeping tiny losses positive.
pub fn softmax_nll(scores: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let loss = if scores[target] == max {
        let others: f64 = exps.iter().enumerate().filter(|(i, _)| *i != target).map(|(_, e)| e).sum::<f64>()
            / exps[target];
        others.ln_1p()
    } else {
        (max - scores[target]) + total.ln()
    };
    let mut grad = probs;
    grad[target] -= 1.0;
    (loss, grad)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NllGrads {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Negative log-likelihood of the positive among `{positive} ∪ negatives`
/// under a softmax over dot products with the anchor.
pub fn nll_loss(anchor: &Embedding, positive: &Embedding, negatives: &[Embedding]) -> Result<(f64, NllGrads)> {
    if negatives.is_empty() {
        return Err(Error::Usage("nll_loss needs at least one negative".into()));
    }
    let a = anchor.as_slice();
    let samples: Vec<&[f64]> = std::iter::once(positive.as_slice())
        .chain(negatives.iter().map(Embedding::as_slice))
        .collect();
    if samples.iter().any(|s| s.len() != a.len()) {
        return Err(Error::Usage("embedding dimensions differ".into()));
    }
    let scores: Vec<f64> = samples.iter().map(|s| dot(a, s)).collect();
    let (loss, dscores) = softmax_nll(&scores, 0);
    let mut g_anchor = vec![0.0; a.len()];
    for (s, g) in samples.iter().zip(&dscores) {
        for (ga, v) in g_anchor.iter_mut().zip(s.iter()) {
            *ga += g * v;
        }
    }
    let per_sample: Vec<Vec<f64>> = dscores.iter().map(|g| a.iter().map(|v| g * v).collect()).collect();
    let mut iter = per_sample.into_iter();
    let g_pos = iter.next().unwrap();
    Ok((loss, NllGrads { anchor: g_anchor, positive: g_pos, negatives: iter.collect() }))
}

/// Numerically stable binary cross-entropy on a logit. Returns the loss and
/// its derivative with respect to the logit, `σ(logit) − label`.
pub fn binary_ce_loss(logit: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { 0.0 };
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding(v.to_vec())
    }

    #[test]
    fn triplet_examples() {
        let cfg = TripletConfig::new(0.5).unwrap();
        // |a-p| = 1, |a-n| = 3
        let (loss, g) = triplet_loss(&e(&[0.0, 0.0]), &e(&[1.0, 0.0]), &e(&[0.0, 3.0]), &cfg);
        assert_eq!(loss, 0.0);
        assert!(g.anchor.iter().chain(&g.positive).chain(&g.negative).all(|v| *v == 0.0));
        // |a-p| = 2, |a-n| = 1
        let (loss, _) = triplet_loss(&e(&[0.0, 0.0]), &e(&[2.0, 0.0]), &e(&[0.0, 1.0]), &cfg);
        assert!((loss - 1.5).abs() < 1e-12);
        assert!(TripletConfig::new(0.0).is_err());
        assert!(TripletConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn nll_uniform_and_saturated() {
        let a = e(&[0.0, 0.0]);
        let negs = vec![e(&[1.0, 2.0]); 4];
        let (loss, _) = nll_loss(&a, &e(&[3.0, 1.0]), &negs).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);

        let a = e(&[1.0, 0.0]);
        let negs = vec![e(&[0.0, 1.0]); 4];
        let (loss, _) = nll_loss(&a, &e(&[50.0, 0.0]), &negs).unwrap();
        assert!(loss > 0.0 && loss < 1e-20, "{loss}");
        assert!(nll_loss(&a, &a, &[]).is_err());
    }

    #[test]
    fn bce_examples() {
        let (loss, g) = binary_ce_loss(0.0, true);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, -0.5);
        let (loss, g) = binary_ce_loss(50.0, true);
        assert!(loss < 1e-20 && g.abs() < 1e-20);
        let (loss, _) = binary_ce_loss(-800.0, true);
        assert!((loss - 800.0).abs() < 1e-9);
    }
}
