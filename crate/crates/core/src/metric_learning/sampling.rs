use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::{KnowledgeBase, Snippet, SnippetId};
use crate::encoder::{raw_similarity, Embedding, SimilarityKind};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub const DEFAULT_NUM_NEGATIVES: usize = 8;
pub const DEFAULT_HARD_POOL_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Random,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSampling {
    pub strategy: SamplingStrategy,
    pub num_negatives: usize,
    /// Size of the random pool hard negatives are mined from.
    pub hard_pool_size: usize,
    pub seed: u64,
}

impl Default for NegativeSampling {
    fn default() -> Self {
        Self {
            strategy: SamplingStrategy::Random,
            num_negatives: DEFAULT_NUM_NEGATIVES,
            hard_pool_size: DEFAULT_HARD_POOL_SIZE,
            seed: 0,
        }
    }
}

impl NegativeSampling {
    pub fn validate(&self) -> Result<()> {
        if self.num_negatives == 0 {
            return Err(Error::Config("num_negatives must be at least 1".into()));
        }
        if self.strategy == SamplingStrategy::Hard && self.hard_pool_size < self.num_negatives {
            return Err(Error::Config(format!(
                "hard_pool_size {} is smaller than num_negatives {}",
                self.hard_pool_size, self.num_negatives
            )));
        }
        Ok(())
    }
}

/// Anchor and snippet embedder needed to mine hard negatives.
pub struct HardMining<'a> {
    pub anchor: &'a Embedding,
    pub embed: &'a dyn Fn(&Snippet) -> Embedding,
    pub kind: SimilarityKind,
}

/// Draws negatives for `gold` with a generator seeded from `cfg.seed`.
pub fn sample_negatives<'kb>(
    kb: &'kb KnowledgeBase,
    gold: &SnippetId,
    cfg: &NegativeSampling,
    hard: Option<&HardMining<'_>>,
) -> Result<Vec<&'kb Snippet>> {
    sample_negatives_with(&mut seeded(cfg.seed), kb, gold, cfg, hard)
}

/// Same as [`sample_negatives`] but drawing from a caller-owned stream;
/// trainers use this so consecutive steps see different negatives.
///
/// Random: `m` snippets uniformly without replacement, gold excluded.
/// Hard: a uniform pool of `hard_pool_size` (capped at what is available),
/// ranked by similarity to the anchor, best `m` kept. Ties keep pool order.
pub fn sample_negatives_with<'kb>(
    rng: &mut Rng,
    kb: &'kb KnowledgeBase,
    gold: &SnippetId,
    cfg: &NegativeSampling,
    hard: Option<&HardMining<'_>>,
) -> Result<Vec<&'kb Snippet>> {
    cfg.validate()?;
    let snippets = kb.snippets();
    let gold_pos = kb.position(gold);
    let available = snippets.len() - gold_pos.is_some() as usize;
    if available < cfg.num_negatives {
        return Err(Error::Config(format!(
            "need {} negatives but only {available} non-gold snippets exist",
            cfg.num_negatives
        )));
    }
    // map an index over the non-gold snippets back to the full list
    let resolve = |i: usize| match gold_pos {
        Some(g) if i >= g => &snippets[i + 1],
        _ => &snippets[i],
    };
    match cfg.strategy {
        SamplingStrategy::Random => {
            Ok(index::sample(rng, available, cfg.num_negatives).into_iter().map(resolve).collect())
        }
        SamplingStrategy::Hard => {
            let hard = hard.ok_or_else(|| {
                Error::Config("hard negative sampling needs an anchor and a snippet embedder".into())
            })?;
            let pool_size = cfg.hard_pool_size.min(available);
            let pool: Vec<&Snippet> =
                index::sample(rng, available, pool_size).into_iter().map(resolve).collect();
            let mut scored: Vec<(f64, usize)> = pool
                .iter()
                .enumerate()
                .map(|(i, s)| (raw_similarity(hard.anchor.as_slice(), (hard.embed)(s).as_slice(), hard.kind), i))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            Ok(scored.into_iter().take(cfg.num_negatives).map(|(_, i)| pool[i]).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Snippet;

    fn kb(n: usize) -> KnowledgeBase {
        KnowledgeBase::from_snippets(
            (0..n)
                .map(|i| Snippet {
                    id: SnippetId::new("hotel", "1", format!("{i:03}")),
                    entity_name: Some("Inn".into()),
                    question: format!("q{i}"),
                    answer: format!("a{i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn forced_random_choice() {
        let kb = kb(2);
        let gold = kb.snippets()[0].id.clone();
        let cfg = NegativeSampling { num_negatives: 1, ..Default::default() };
        let got = sample_negatives(&kb, &gold, &cfg, None).unwrap();
        assert_eq!(got[0].id, kb.snippets()[1].id);
    }

    #[test]
    fn insufficient_negatives() {
        let kb = kb(3);
        let gold = kb.snippets()[0].id.clone();
        let cfg = NegativeSampling { num_negatives: 3, ..Default::default() };
        assert!(matches!(sample_negatives(&kb, &gold, &cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn hard_prefers_the_anchor_match() {
        let kb = kb(10);
        let gold = kb.snippets()[0].id.clone();
        let target = kb.snippets()[7].id.clone();
        let embed = |s: &Snippet| Embedding(vec![if s.id == target { 1.0 } else { -1.0 }, 0.5]);
        let anchor = Embedding(vec![1.0, 0.5]);
        let hard = HardMining { anchor: &anchor, embed: &embed, kind: SimilarityKind::NegativeEuclidean };
        let cfg = NegativeSampling {
            strategy: SamplingStrategy::Hard,
            num_negatives: 3,
            hard_pool_size: 100,
            seed: 4,
        };
        let got = sample_negatives(&kb, &gold, &cfg, Some(&hard)).unwrap();
        assert_eq!(got[0].id, target);
        assert!(got.iter().all(|s| s.id != gold));
        assert!(sample_negatives(&kb, &gold, &cfg, None).is_err());
    }

    #[test]
    fn seeded_samples_repeat() {
        let kb = kb(40);
        let gold = kb.snippets()[5].id.clone();
        let cfg = NegativeSampling { num_negatives: 8, seed: 11, ..Default::default() };
        let a: Vec<_> = sample_negatives(&kb, &gold, &cfg, None).unwrap().iter().map(|s| s.id.clone()).collect();
        let b: Vec<_> = sample_negatives(&kb, &gold, &cfg, None).unwrap().iter().map(|s| s.id.clone()).collect();
        assert_eq!(a, b);
        assert!(!a.contains(&gold));
    }
}
