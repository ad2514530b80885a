//! Affine scoring heads and the pairwise interaction features
//! `[c ; s ; c ⊙ s ; |c − s|]` shared by every relevance-style model.

use rand::Rng;

use crate::encoder::INIT_RANGE;
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq)]
pub struct AffineHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AffineHead {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let weights = (0..input_dim).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
        Self { weights, bias: 0.0 }
    }

    pub fn zeros(input_dim: usize) -> Self {
        Self { weights: vec![0.0; input_dim], bias: 0.0 }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Gradient of `g · logit(x)` with respect to the weights, bias and input.
    pub fn backward(&self, x: &[f64], g: f64) -> (HeadGrads, Vec<f64>) {
        let grads = HeadGrads { weights: x.iter().map(|v| g * v).collect(), bias: g };
        let dx = self.weights.iter().map(|w| g * w).collect();
        (grads, dx)
    }

    pub fn apply(&mut self, grads: &HeadGrads, learning_rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w -= learning_rate * g;
        }
        self.bias -= learning_rate * grads.bias;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl HeadGrads {
    pub fn zeros(input_dim: usize) -> Self {
        Self { weights: vec![0.0; input_dim], bias: 0.0 }
    }

    pub fn add_scaled(&mut self, other: &HeadGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        self.bias += scale * other.bias;
    }
}

pub fn pair_features(c: &[f64], s: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(4 * c.len());
    f.extend_from_slice(c);
    f.extend_from_slice(s);
    f.extend(c.iter().zip(s).map(|(a, b)| a * b));
    f.extend(c.iter().zip(s).map(|(a, b)| (a - b).abs()));
    f
}

/// Splits a gradient on the pair features into gradients on `c` and `s`.
/// The derivative of `|x|` at zero is taken as zero.
pub fn pair_features_backward(c: &[f64], s: &[f64], df: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = c.len();
    let (g_c, rest) = df.split_at(d);
    let (g_s, rest) = rest.split_at(d);
    let (g_prod, g_abs) = rest.split_at(d);
    let mut dc = g_c.to_vec();
    let mut ds = g_s.to_vec();
    for i in 0..d {
        let sign = match c[i] - s[i] {
            x if x > 0.0 => 1.0,
            x if x < 0.0 => -1.0,
            _ => 0.0,
        };
        dc[i] += g_prod[i] * s[i] + g_abs[i] * sign;
        ds[i] += g_prod[i] * c[i] - g_abs[i] * sign;
    }
    (dc, ds)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
