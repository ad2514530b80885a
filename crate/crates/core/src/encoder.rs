//! Tokenizer and the single-tower text encoder.
//!
//! Forward map: `tanh(P · mean(table[hash(t)] for t in tokens) + b)`.
//! Token ids come from a fixed FNV-1a hash into `bucket_count` rows, so there
//! is no vocabulary to build and nothing is ever out of vocabulary.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{FIELD_SEPARATOR, SYSTEM_TAG, USER_TAG};
use crate::error::{Error, Result};
use crate::rng::seeded;

pub const DEFAULT_BUCKET_COUNT: usize = 32768;
pub const DEFAULT_EMBED_DIM: usize = 64;
pub const INIT_RANGE: f64 = 0.1;

const RESERVED: [&str; 3] = [USER_TAG, SYSTEM_TAG, FIELD_SEPARATOR];

/// NFC-normalizes, lowercases and splits on non-alphanumeric runs. The
/// speaker tags and the field separator survive as whole tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let norm = text.nfc().collect::<String>().to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = norm.as_str();
    while let Some(c) = rest.chars().next() {
        if let Some(tag) = RESERVED.iter().find(|t| rest.starts_with(**t)) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push((*tag).to_string());
            rest = &rest[tag.len()..];
            continue;
        }
        if c.is_alphanumeric() {
            word.push(c);
        } else if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        rest = &rest[c.len_utf8()..];
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn bucket_of(token: &str, bucket_count: usize) -> usize {
    (fnv1a(token.as_bytes()) % bucket_count as u64) as usize
}

/// Table size and width of an encoder tower.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub bucket_count: usize,
    pub embed_dim: usize,
}

impl Default for EncoderShape {
    fn default() -> Self {
        Self { bucket_count: DEFAULT_BUCKET_COUNT, embed_dim: DEFAULT_EMBED_DIM }
    }
}

impl EncoderShape {
    pub fn init(&self, seed: u64) -> EncoderParams {
        EncoderParams::new(self.bucket_count, self.embed_dim, seed)
    }

    pub fn zeros(&self) -> EncoderParams {
        EncoderParams::zeros(self.bucket_count, self.embed_dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Weights of one encoder tower. Matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub bucket_count: usize,
    pub embed_dim: usize,
    pub seed: u64,
    /// `bucket_count × embed_dim`
    pub token_table: Vec<f64>,
    /// `embed_dim × embed_dim`, output index major.
    pub projection: Vec<f64>,
    pub projection_bias: Vec<f64>,
}

impl EncoderParams {
    /// Uniform(-0.1, 0.1) initialization from `seed`.
    pub fn new(bucket_count: usize, embed_dim: usize, seed: u64) -> Self {
        assert!(bucket_count > 0 && embed_dim > 0, "encoder dimensions must be positive");
        let mut rng = seeded(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect()
        };
        let token_table = draw(bucket_count * embed_dim);
        let projection = draw(embed_dim * embed_dim);
        let projection_bias = draw(embed_dim);
        Self { bucket_count, embed_dim, seed, token_table, projection, projection_bias }
    }

    pub fn zeros(bucket_count: usize, embed_dim: usize) -> Self {
        Self {
            bucket_count,
            embed_dim,
            seed: 0,
            token_table: vec![0.0; bucket_count * embed_dim],
            projection: vec![0.0; embed_dim * embed_dim],
            projection_bias: vec![0.0; embed_dim],
        }
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.token_table[bucket * self.embed_dim..(bucket + 1) * self.embed_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.token_table
            .iter()
            .chain(&self.projection)
            .chain(&self.projection_bias)
            .all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embed_dim;
        if self.token_table.len() != self.bucket_count * d
            || self.projection.len() != d * d
            || self.projection_bias.len() != d
        {
            return Err(Error::Checkpoint("encoder dimensions are inconsistent".into()));
        }
        if !self.is_finite() {
            return Err(Error::Checkpoint("encoder holds non-finite values".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, grads: &EncoderGrads, learning_rate: f64) {
        let d = self.embed_dim;
        for (bucket, g) in &grads.rows {
            let row = &mut self.token_table[bucket * d..(bucket + 1) * d];
            for (w, gi) in row.iter_mut().zip(g) {
                *w -= learning_rate * gi;
            }
        }
        for (w, g) in self.projection.iter_mut().zip(&grads.projection) {
            *w -= learning_rate * g;
        }
        for (w, g) in self.projection_bias.iter_mut().zip(&grads.bias) {
            *w -= learning_rate * g;
        }
    }
}

/// Gradients of one tower. Token-table rows are sparse and kept in bucket order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub rows: BTreeMap<usize, Vec<f64>>,
    pub projection: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(embed_dim: usize) -> Self {
        Self {
            rows: BTreeMap::new(),
            projection: vec![0.0; embed_dim * embed_dim],
            bias: vec![0.0; embed_dim],
        }
    }

    pub fn add_scaled(&mut self, other: &EncoderGrads, scale: f64) {
        for (bucket, g) in &other.rows {
            let row = self.rows.entry(*bucket).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in row.iter_mut().zip(g) {
                *a += scale * b;
            }
        }
        for (a, b) in self.projection.iter_mut().zip(&other.projection) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().flatten().chain(&self.projection).chain(&self.bias).all(|v| *v == 0.0)
    }
}

/// Intermediate values of one forward pass, enough to run the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    buckets: Vec<usize>,
    mean: Vec<f64>,
    pub output: Embedding,
}

pub fn forward(p: &EncoderParams, tokens: &[String]) -> EncoderTrace {
    let d = p.embed_dim;
    let buckets: Vec<usize> = tokens.iter().map(|t| bucket_of(t, p.bucket_count)).collect();
    let mut mean = vec![0.0; d];
    if !buckets.is_empty() {
        for &b in &buckets {
            for (m, v) in mean.iter_mut().zip(p.row(b)) {
                *m += v;
            }
        }
        let inv = 1.0 / buckets.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
    }
    let output = (0..d)
        .map(|i| {
            let row = &p.projection[i * d..(i + 1) * d];
            let z: f64 = row.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>() + p.projection_bias[i];
            z.tanh()
        })
        .collect();
    EncoderTrace { buckets, mean, output: Embedding(output) }
}

impl EncoderTrace {
    pub fn backward(&self, p: &EncoderParams, upstream: &[f64]) -> EncoderGrads {
        let d = p.embed_dim;
        assert_eq!(upstream.len(), d, "upstream gradient has the wrong dimension");
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&self.output.0)
            .map(|(g, y)| g * (1.0 - y * y))
            .collect();
        let mut grads = EncoderGrads::zeros(d);
        for i in 0..d {
            for j in 0..d {
                grads.projection[i * d + j] = dz[i] * self.mean[j];
            }
        }
        grads.bias.copy_from_slice(&dz);
        if !self.buckets.is_empty() {
            let inv = 1.0 / self.buckets.len() as f64;
            let mut dmean = vec![0.0; d];
            for i in 0..d {
                let row = &p.projection[i * d..(i + 1) * d];
                for (dm, w) in dmean.iter_mut().zip(row) {
                    *dm += w * dz[i];
                }
            }
            for &b in &self.buckets {
                let row = grads.rows.entry(b).or_insert_with(|| vec![0.0; d]);
                for (r, dm) in row.iter_mut().zip(&dmean) {
                    *r += dm * inv;
                }
            }
        }
        grads
    }
}

pub fn encode(p: &EncoderParams, tokens: &[String]) -> Embedding {
    forward(p, tokens).output
}

/// Exact gradients of `upstream · encode(p, tokens)` with respect to the parameters.
pub fn encode_backward(p: &EncoderParams, tokens: &[String], upstream: &[f64]) -> EncoderGrads {
    forward(p, tokens).backward(p, upstream)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Dot,
    NegativeEuclidean,
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!("embedding dimensions differ: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Higher is more relevant under both kinds.
pub fn similarity(a: &Embedding, b: &Embedding, kind: SimilarityKind) -> Result<f64> {
    check_dims(&a.0, &b.0)?;
    Ok(raw_similarity(&a.0, &b.0, kind))
}

pub(crate) fn raw_similarity(a: &[f64], b: &[f64], kind: SimilarityKind) -> f64 {
    match kind {
        SimilarityKind::Dot => dot(a, b),
        SimilarityKind::NegativeEuclidean => -euclidean(a, b),
    }
}

/// Gradient of `similarity(a, b)` with respect to `a`. The euclidean
/// gradient is taken as zero where `a == b`.
pub fn similarity_grad(a: &[f64], b: &[f64], kind: SimilarityKind) -> Vec<f64> {
    match kind {
        SimilarityKind::Dot => b.to_vec(),
        SimilarityKind::NegativeEuclidean => {
            let dist = euclidean(a, b);
            if dist == 0.0 {
                vec![0.0; a.len()]
            } else {
                a.iter().zip(b).map(|(x, y)| -(x - y) / dist).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(toks("Do you provide dry cleaning?"), ["do", "you", "provide", "dry", "cleaning"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("<user> Hi!"), ["<user>", "hi"]);
        assert_eq!(toks("hotel | Allenbell"), ["hotel", "|", "allenbell"]);
        assert_eq!(toks("<SYSTEM>ok"), ["<system>", "ok"]);
        // NFC: decomposed e + combining acute equals precomposed
        assert_eq!(toks("Cafe\u{301}"), toks("Café"));
    }

    #[test]
    fn hash_is_fixed() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(bucket_of("hotel", 32768), (fnv1a(b"hotel") % 32768) as usize);
    }

    #[test]
    fn zero_params_give_zero_embedding() {
        let p = EncoderParams::zeros(64, 8);
        assert_eq!(encode(&p, &toks("anything at all")), Embedding::zeros(8));
        assert_eq!(encode(&p, &[]), Embedding::zeros(8));
    }

    #[test]
    fn encoding_is_deterministic_and_order_invariant() {
        let p = EncoderParams::new(128, 8, 7);
        let a = toks("one two three four");
        let mut b = a.clone();
        b.reverse();
        assert_eq!(encode(&p, &a), encode(&p, &a));
        let (ea, eb) = (encode(&p, &a), encode(&p, &b));
        for (x, y) in ea.0.iter().zip(&eb.0) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(EncoderParams::new(128, 8, 7), p);
    }

    #[test]
    fn empty_tokens_map_bias_through_tanh() {
        let p = EncoderParams::new(32, 4, 1);
        let e = encode(&p, &[]);
        for (v, b) in e.0.iter().zip(&p.projection_bias) {
            assert_eq!(*v, b.tanh());
        }
    }

    #[test]
    fn backward_edge_cases() {
        let p = EncoderParams::new(64, 6, 3);
        let t = toks("alpha beta");
        assert!(encode_backward(&p, &t, &[0.0; 6]).is_zero());
        let single = toks("alpha");
        let g = encode_backward(&p, &single, &[1.0; 6]);
        assert_eq!(g.rows.len(), 1);
        assert!(g.rows.contains_key(&bucket_of("alpha", 64)));
    }

    #[test]
    fn similarity_examples() {
        let e = |v: &[f64]| Embedding(v.to_vec());
        let a = e(&[0.3, -0.2]);
        assert_eq!(similarity(&a, &a, SimilarityKind::NegativeEuclidean).unwrap(), 0.0);
        assert_eq!(similarity(&e(&[1.0, 0.0]), &e(&[0.0, 1.0]), SimilarityKind::Dot).unwrap(), 0.0);
        assert_eq!(
            similarity(&e(&[3.0, 4.0]), &e(&[0.0, 0.0]), SimilarityKind::NegativeEuclidean).unwrap(),
            -5.0
        );
        assert!(matches!(
            similarity(&e(&[1.0]), &e(&[1.0, 2.0]), SimilarityKind::Dot),
            Err(Error::Usage(_))
        ));
    }
}
