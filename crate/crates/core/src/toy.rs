//! Seeded synthetic corpora: a regular domain/entity/document hierarchy and
//! dialogs whose last user turn names the entity and the topic asked about,
//! so selection is separable by construction.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogContext, KnowledgeBase, LabeledDialog, Snippet, SnippetId, Speaker, Turn, SENTINEL_ENTITY};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded, Rng};

pub const TOY_SOURCE: &str = "toy";

const DOMAINS: [&str; 8] = ["hotel", "restaurant", "taxi", "train", "attraction", "museum", "park", "spa"];
const TOPICS: [&str; 24] = [
    "parking", "wifi", "breakfast", "pool", "gym", "pets", "smoking", "laundry", "elevator", "balcony", "minibar",
    "sauna", "shuttle", "luggage", "heating", "terrace", "garden", "massage", "bikes", "lockers", "kitchen",
    "television", "safe", "towels",
];
const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ru", "ze", "po", "ta", "ni", "sa", "ve", "do", "fu", "ge", "hi", "ja", "bo"];
const FILLERS: [&str; 24] = [
    "please", "thanks", "maybe", "today", "tonight", "really", "also", "just", "well", "okay", "great", "sure",
    "hmm", "so", "then", "now", "quite", "rather", "very", "soon", "again", "perhaps", "kindly", "actually",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub domains: usize,
    pub entities_per_domain: usize,
    pub docs_per_entity: usize,
    /// Domain-wide documents under the sentinel entity.
    pub domain_docs: usize,
    pub dialogs: usize,
    /// Share of dialogs whose last turn is not knowledge-seeking.
    pub non_seeking_fraction: f64,
    /// Shared filler words appended to each user turn; more filler means
    /// more vocabulary overlap between unrelated dialogs.
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            domains: 4,
            entities_per_domain: 4,
            docs_per_entity: 4,
            domain_docs: 0,
            dialogs: 200,
            non_seeking_fraction: 0.0,
            filler_words: 2,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 || self.entities_per_domain == 0 || self.docs_per_entity == 0 {
            return Err(Error::Config("toy corpus needs at least one domain, entity and document".into()));
        }
        if !(0.0..=1.0).contains(&self.non_seeking_fraction) {
            return Err(Error::Config("non_seeking_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn domain_name(i: usize) -> String {
    DOMAINS.get(i).map_or_else(|| format!("domain{i}"), |s| s.to_string())
}

pub fn topic_name(j: usize) -> String {
    TOPICS.get(j).map_or_else(|| format!("topic{j}"), |s| s.to_string())
}

/// Capitalized three-syllable pseudoword, unique per global entity index.
pub fn entity_name(i: usize) -> String {
    let mut s = format!("{}{}{}", SYLLABLES[i % 16], SYLLABLES[(i / 16) % 16], SYLLABLES[(i / 256) % 16]);
    if i >= 4096 {
        s.push_str(&(i / 4096).to_string());
    }
    let mut c = s.chars();
    let first = c.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

fn fillers(rng: &mut Rng, n: usize) -> String {
    (0..n).map(|_| *FILLERS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn turn(speaker: Speaker, text: String) -> Turn {
    Turn { speaker, text: text.trim().to_string() }
}

const NUMBERS: [&str; 7] = ["two", "three", "four", "five", "six", "seven", "eight"];

pub fn make_toy(cfg: &ToyConfig) -> Result<(KnowledgeBase, Vec<LabeledDialog>)> {
    cfg.validate()?;
    let mut rng = seeded(derive(cfg.seed, 7));
    let mut snippets = Vec::new();
    for d in 0..cfg.domains {
        let domain = domain_name(d);
        for j in 0..cfg.domain_docs {
            let topic = topic_name(j);
            snippets.push(Snippet {
                id: SnippetId::new(&domain, SENTINEL_ENTITY, j.to_string()),
                entity_name: None,
                question: format!("Is {topic} available at every {domain}?"),
                answer: format!("Every {domain} here offers {topic}."),
            });
        }
        for e in 0..cfg.entities_per_domain {
            let name = entity_name(d * cfg.entities_per_domain + e);
            for j in 0..cfg.docs_per_entity {
                let topic = topic_name(j);
                let verb = if rng.gen_bool(0.5) { "offers" } else { "lacks" };
                snippets.push(Snippet {
                    id: SnippetId::new(&domain, e.to_string(), j.to_string()),
                    entity_name: Some(name.clone()),
                    question: format!("Do you offer {topic}?"),
                    answer: format!("{name} {verb} {topic}."),
                });
            }
        }
    }
    let kb = KnowledgeBase::from_snippets(snippets)?;
    let mut dialogs = Vec::with_capacity(cfg.dialogs);
    for _ in 0..cfg.dialogs {
        let s = &kb.snippets()[rng.gen_range(0..kb.len())];
        let domain = &s.id.domain;
        let seeking = !rng.gen_bool(cfg.non_seeking_fraction);
        let mut turns = Vec::new();
        let (last, response);
        match &s.entity_name {
            Some(name) => {
                turns.push(turn(Speaker::User, format!("i need a {domain} called {name} {}", fillers(&mut rng, cfg.filler_words))));
                turns.push(turn(Speaker::System, format!("{name} is a fine {domain} . anything else ?")));
                let lower = name.to_lowercase();
                let topic = topic_of(s);
                if seeking {
                    last = format!("do you know if they have {topic} ? {}", fillers(&mut rng, cfg.filler_words));
                    response = if s.answer.contains(" offers ") {
                        format!("yes , {lower} offers {topic} .")
                    } else {
                        format!("sorry , {lower} lacks {topic} .")
                    };
                } else {
                    let k = NUMBERS.choose(&mut rng).unwrap();
                    last = format!("please book {name} for {k} people {}", fillers(&mut rng, cfg.filler_words));
                    response = format!("i have booked {lower} for {k} people .");
                }
            }
            None => {
                turns.push(turn(Speaker::User, format!("i am looking for a {domain} {}", fillers(&mut rng, cfg.filler_words))));
                turns.push(turn(Speaker::System, format!("there are many {domain} options .")));
                let topic = topic_of(s);
                if seeking {
                    last = format!("do they all have {topic} ? {}", fillers(&mut rng, cfg.filler_words));
                    response = format!("yes , every {domain} offers {topic} .");
                } else {
                    last = format!("please book any {domain} for tonight {}", fillers(&mut rng, cfg.filler_words));
                    response = format!("i have booked a {domain} for tonight .");
                }
            }
        }
        turns.push(turn(Speaker::User, last));
        dialogs.push(LabeledDialog {
            context: DialogContext::new(turns),
            target: seeking,
            gold_snippets: if seeking { vec![s.id.clone()] } else { vec![] },
            gold_response: Some(response),
            source: Some(TOY_SOURCE.into()),
        });
    }
    Ok((kb, dialogs))
}

/// Topic word of a toy snippet: the last word of its answer.
fn topic_of(s: &Snippet) -> String {
    s.answer.trim_end_matches('.').rsplit(' ').next().unwrap_or_default().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_summary() {
        let cfg = ToyConfig { entities_per_domain: 16, docs_per_entity: 16, dialogs: 0, ..Default::default() };
        let (kb, _) = make_toy(&cfg).unwrap();
        let s = kb.summary();
        assert_eq!((s.domains, s.entities, s.snippets), (4, 64, 1024));
    }

    #[test]
    fn dialogs_are_consistent() {
        let cfg = ToyConfig { non_seeking_fraction: 0.3, domain_docs: 2, ..Default::default() };
        let (kb, dialogs) = make_toy(&cfg).unwrap();
        assert_eq!(kb.len(), 4 * 4 * 4 + 4 * 2);
        assert_eq!(dialogs.len(), 200);
        for d in &dialogs {
            assert!(d.context.is_query());
            assert_eq!(d.target, !d.gold_snippets.is_empty());
            for g in &d.gold_snippets {
                let s = kb.get(g).unwrap();
                assert!(d.context.render().contains(&topic_of(s)));
            }
        }
        assert!(dialogs.iter().any(|d| !d.target));
    }

    #[test]
    fn seeded() {
        let a = make_toy(&ToyConfig::default()).unwrap();
        let b = make_toy(&ToyConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = make_toy(&ToyConfig { seed: 1, ..Default::default() }).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn names_unique() {
        let names: std::collections::BTreeSet<String> = (0..5000).map(entity_name).collect();
        assert_eq!(names.len(), 5000);
        assert_eq!(entity_name(0), "Kakaka");
    }
}
