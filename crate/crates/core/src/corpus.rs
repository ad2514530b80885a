//! Dialogs, the domain → entity → snippet hierarchy, and ingestion of the
//! challenge JSON files (knowledge, logs, labels).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use unicode_normalization::UnicodeNormalization;

use crate::encoder::tokenize;
use crate::error::{Error, Result};

/// Entity id of the domain-level pseudo-entity.
pub const SENTINEL_ENTITY: &str = "*";
pub const FIELD_SEPARATOR: &str = "|";
pub const USER_TAG: &str = "<user>";
pub const SYSTEM_TAG: &str = "<system>";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnippetId {
    pub domain: String,
    pub entity_id: String,
    pub doc_id: String,
}

impl SnippetId {
    pub fn new(
        domain: impl Into<String>,
        entity_id: impl Into<String>,
        doc_id: impl Into<String>,
    ) -> Self {
        Self {
            domain: domain.into(),
            entity_id: entity_id.into(),
            doc_id: doc_id.into(),
        }
    }

    pub fn is_domain_level(&self) -> bool {
        self.entity_id == SENTINEL_ENTITY
    }
}

impl fmt::Display for SnippetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.domain, self.entity_id, self.doc_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: SnippetId,
    pub entity_name: Option<String>,
    pub question: String,
    pub answer: String,
}

/// Renders a snippet as `domain | entity | question | answer`, omitting
/// fields per the flags. A missing entity name is always omitted.
pub fn snippet_text(s: &Snippet, include_domain: bool, include_entity: bool) -> String {
    let mut fields: Vec<&str> = Vec::with_capacity(4);
    if include_domain {
        fields.push(&s.id.domain);
    }
    if include_entity {
        if let Some(name) = &s.entity_name {
            fields.push(name);
        }
    }
    fields.push(&s.question);
    fields.push(&s.answer);
    fields.join(" | ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct EntityEntry {
    name: Option<String>,
    range: Range<usize>,
}

/// The knowledge hierarchy. Snippets are stored in `SnippetId` order, so the
/// documents of every entity form one contiguous block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeBase {
    snippets: Vec<Snippet>,
    domains: BTreeMap<String, BTreeMap<String, EntityEntry>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbSummary {
    pub domains: usize,
    /// Entities holding at least one snippet (domain-level pseudo-entities included).
    pub entities: usize,
    pub snippets: usize,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl KnowledgeBase {
    /// Builds the hierarchy from a flat snippet list. Each domain always
    /// receives a sentinel entity, named after the domain.
    pub fn from_snippets(snippets: Vec<Snippet>) -> Result<Self> {
        let mut snippets: Vec<Snippet> = snippets
            .into_iter()
            .map(|mut s| {
                s.question = normalize_ws(&s.question);
                s.answer = normalize_ws(&s.answer);
                if s.id.is_domain_level() {
                    s.entity_name = Some(s.id.domain.clone());
                }
                s
            })
            .collect();
        for s in &snippets {
            if s.id.domain.is_empty() {
                return Err(Error::Integrity(format!("snippet {} has an empty domain", s.id)));
            }
            if s.question.is_empty() || s.answer.is_empty() {
                return Err(Error::Integrity(format!(
                    "snippet {} has an empty question or answer",
                    s.id
                )));
            }
        }
        snippets.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = snippets.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Integrity(format!("duplicate doc_id {}", w[0].id)));
        }

        let mut domains: BTreeMap<String, BTreeMap<String, EntityEntry>> = BTreeMap::new();
        let mut start = 0;
        while start < snippets.len() {
            let key = (&snippets[start].id.domain, &snippets[start].id.entity_id);
            let mut end = start + 1;
            while end < snippets.len()
                && (&snippets[end].id.domain, &snippets[end].id.entity_id) == key
            {
                end += 1;
            }
            let name = snippets[start].entity_name.clone();
            if let Some(s) = snippets[start..end].iter().find(|s| s.entity_name != name) {
                return Err(Error::Integrity(format!(
                    "inconsistent entity name for {}/{}",
                    s.id.domain, s.id.entity_id
                )));
            }
            domains
                .entry(key.0.clone())
                .or_default()
                .insert(key.1.clone(), EntityEntry { name, range: start..end });
            start = end;
        }
        for (domain, entities) in domains.iter_mut() {
            entities
                .entry(SENTINEL_ENTITY.to_string())
                .or_insert_with(|| EntityEntry { name: Some(domain.clone()), range: 0..0 });
        }
        Ok(Self { snippets, domains })
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }

    /// Every entity id of a domain, sentinel included, in lexicographic order.
    pub fn entity_ids<'a>(&'a self, domain: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.domains
            .get(domain)
            .into_iter()
            .flat_map(|e| e.keys().map(String::as_str))
    }

    /// Entities of a domain that hold at least one snippet.
    pub fn populated_entities<'a>(&'a self, domain: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.domains
            .get(domain)
            .into_iter()
            .flat_map(|e| e.iter().filter(|(_, v)| !v.range.is_empty()).map(|(k, _)| k.as_str()))
    }

    pub fn entity_name(&self, domain: &str, entity_id: &str) -> Option<&str> {
        self.domains.get(domain)?.get(entity_id)?.name.as_deref()
    }

    pub fn snippets_of(&self, domain: &str, entity_id: &str) -> &[Snippet] {
        match self.domains.get(domain).and_then(|e| e.get(entity_id)) {
            Some(entry) => &self.snippets[entry.range.clone()],
            None => &[],
        }
    }

    pub fn position(&self, id: &SnippetId) -> Option<usize> {
        self.snippets.binary_search_by(|s| s.id.cmp(id)).ok()
    }

    pub fn get(&self, id: &SnippetId) -> Option<&Snippet> {
        self.position(id).map(|i| &self.snippets[i])
    }

    pub fn summary(&self) -> KbSummary {
        KbSummary {
            domains: self.domains.len(),
            entities: self
                .domains
                .values()
                .map(|e| e.values().filter(|v| !v.range.is_empty()).count())
                .sum(),
            snippets: self.snippets.len(),
        }
    }

    /// Canonical re-serialization in the challenge layout
    /// (`domain → entity_id → {name, docs: {doc_id → {title, body}}}`).
    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        for (domain, entities) in &self.domains {
            let mut ents = Map::new();
            for (entity_id, entry) in entities {
                if entry.range.is_empty() {
                    continue;
                }
                let mut docs = Map::new();
                for s in &self.snippets[entry.range.clone()] {
                    docs.insert(
                        s.id.doc_id.clone(),
                        json!({ "title": s.question, "body": s.answer }),
                    );
                }
                ents.insert(entity_id.clone(), json!({ "name": entry.name, "docs": docs }));
            }
            root.insert(domain.clone(), Value::Object(ents));
        }
        Value::Object(root)
    }
}

/// JSON object kept as ordered key/value pairs so duplicate keys are visible.
struct Pairs<T>(Vec<(String, T)>);

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Pairs<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PairsVisitor<T>(std::marker::PhantomData<T>);
        impl<'de, T: Deserialize<'de>> Visitor<'de> for PairsVisitor<T> {
            type Value = Pairs<T>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    out.push((key, map.next_value()?));
                }
                Ok(Pairs(out))
            }
        }
        deserializer.deserialize_map(PairsVisitor(std::marker::PhantomData))
    }
}

#[derive(Deserialize)]
struct RawDoc {
    #[serde(alias = "title")]
    question: String,
    #[serde(alias = "body")]
    answer: String,
}

/// Either `{name, docs: {...}}` or a bare `{doc_id: doc}` map.
struct RawEntity {
    name: Option<String>,
    docs: Vec<(String, RawDoc)>,
}

impl<'de> Deserialize<'de> for RawEntity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntityVisitor;
        impl<'de> Visitor<'de> for EntityVisitor {
            type Value = RawEntity;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an entity object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut name = None;
                let mut nested: Option<Vec<(String, RawDoc)>> = None;
                let mut bare = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "name" => name = map.next_value::<Option<String>>()?,
                        "docs" => nested = Some(map.next_value::<Pairs<RawDoc>>()?.0),
                        _ => bare.push((key, map.next_value::<RawDoc>()?)),
                    }
                }
                let docs = match nested {
                    Some(_) if !bare.is_empty() => {
                        return Err(de::Error::custom("entity mixes `docs` with bare documents"))
                    }
                    Some(docs) => docs,
                    None => bare,
                };
                Ok(RawEntity { name, docs })
            }
        }
        deserializer.deserialize_map(EntityVisitor)
    }
}

fn first_duplicate<T>(pairs: &[(String, T)]) -> Option<&str> {
    let mut seen = BTreeSet::new();
    pairs.iter().map(|(k, _)| k.as_str()).find(|k| !seen.insert(*k))
}

fn parse_json<'a, T: Deserialize<'a>>(bytes: &'a [u8]) -> Result<T> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Format {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| Error::Format { path: ".".into(), message: e.to_string() })?;
    Ok(value)
}

/// Parses a knowledge file into a [`KnowledgeBase`].
pub fn load_knowledge(bytes: &[u8]) -> Result<KnowledgeBase> {
    let raw: Pairs<Pairs<RawEntity>> = parse_json(bytes)?;
    if let Some(d) = first_duplicate(&raw.0) {
        return Err(Error::Integrity(format!("duplicate domain {d}")));
    }
    let mut snippets = Vec::new();
    for (domain, entities) in raw.0 {
        if let Some(e) = first_duplicate(&entities.0) {
            return Err(Error::Integrity(format!("duplicate entity {domain}/{e}")));
        }
        for (entity_id, entity) in entities.0 {
            if let Some(doc) = first_duplicate(&entity.docs) {
                return Err(Error::Integrity(format!(
                    "duplicate doc_id {domain}/{entity_id}/{doc}"
                )));
            }
            for (doc_id, doc) in entity.docs {
                snippets.push(Snippet {
                    id: SnippetId::new(domain.clone(), entity_id.clone(), doc_id),
                    entity_name: entity.name.clone(),
                    question: doc.question,
                    answer: doc.answer,
                });
            }
        }
    }
    KnowledgeBase::from_snippets(snippets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => USER_TAG,
            Speaker::System => SYSTEM_TAG,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogContext {
    pub turns: Vec<Turn>,
}

impl DialogContext {
    pub fn new(turns: Vec<Turn>) -> Self {
        Self { turns }
    }

    /// Single user turn; handy for queries typed by hand.
    pub fn user(text: impl Into<String>) -> Self {
        Self { turns: vec![Turn { speaker: Speaker::User, text: text.into() }] }
    }

    /// True when the context can be used as a query: non-empty, ending on a user turn.
    pub fn is_query(&self) -> bool {
        matches!(self.turns.last(), Some(t) if t.speaker == Speaker::User)
    }

    /// Full speaker-tagged text, oldest turn first.
    pub fn render(&self) -> String {
        self.turns
            .iter()
            .map(|t| format!("{} {}", t.speaker.tag(), t.text))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Speaker-tagged tokens of `ctx`, truncated from the oldest end so that at
/// most `max_tokens` remain.
pub fn context_text(ctx: &DialogContext, max_tokens: usize) -> Vec<String> {
    let mut tokens = Vec::new();
    for turn in &ctx.turns {
        tokens.push(turn.speaker.tag().to_string());
        tokens.extend(tokenize(&turn.text));
    }
    let cut = tokens.len().saturating_sub(max_tokens.max(1));
    tokens.split_off(cut)
}

pub const DEFAULT_MAX_CONTEXT_TOKENS: usize = 384;

/// How a model renders its inputs: context budget and snippet fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputConfig {
    pub max_context_tokens: usize,
    pub include_domain: bool,
    pub include_entity: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self { max_context_tokens: DEFAULT_MAX_CONTEXT_TOKENS, include_domain: true, include_entity: true }
    }
}

impl InputConfig {
    pub fn context_tokens(&self, ctx: &DialogContext) -> Vec<String> {
        context_text(ctx, self.max_context_tokens)
    }

    pub fn snippet_tokens(&self, s: &Snippet) -> Vec<String> {
        tokenize(&snippet_text(s, self.include_domain, self.include_entity))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDialog {
    pub context: DialogContext,
    /// Whether the last user turn is knowledge-seeking.
    pub target: bool,
    pub gold_snippets: Vec<SnippetId>,
    pub gold_response: Option<String>,
    /// Data-source tag used for per-slice breakdowns.
    pub source: Option<String>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    text: String,
}

#[derive(Deserialize)]
struct RawRef {
    domain: String,
    entity_id: Value,
    doc_id: Value,
}

#[derive(Deserialize)]
struct RawLabel {
    target: bool,
    #[serde(default)]
    knowledge: Vec<RawRef>,
    response: Option<String>,
    source: Option<String>,
}

fn id_string(v: &Value, what: &str) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::Format {
            path: what.to_string(),
            message: format!("expected string or number, got {other}"),
        }),
    }
}

fn parse_speaker(s: &str, path: &str) -> Result<Speaker> {
    match s.nfc().collect::<String>().to_lowercase().as_str() {
        "u" | "user" => Ok(Speaker::User),
        "s" | "system" => Ok(Speaker::System),
        other => Err(Error::Format { path: path.into(), message: format!("unknown speaker {other:?}") }),
    }
}

/// Pairs dialog logs with their labels, preserving order.
pub fn load_dialogs(logs: &[u8], labels: &[u8]) -> Result<Vec<LabeledDialog>> {
    let logs: Vec<Vec<RawTurn>> = parse_json(logs)?;
    let labels: Vec<RawLabel> = parse_json(labels)?;
    if logs.len() != labels.len() {
        return Err(Error::Alignment { logs: logs.len(), labels: labels.len() });
    }
    logs.into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (log, label))| {
            if log.is_empty() {
                return Err(Error::Format { path: format!("[{i}]"), message: "empty dialog".into() });
            }
            let turns = log
                .into_iter()
                .enumerate()
                .map(|(j, t)| {
                    Ok(Turn {
                        speaker: parse_speaker(&t.speaker, &format!("[{i}][{j}].speaker"))?,
                        text: t.text,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let gold = label
                .knowledge
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    Ok(SnippetId::new(
                        r.domain.clone(),
                        id_string(&r.entity_id, &format!("[{i}].knowledge[{j}].entity_id"))?,
                        id_string(&r.doc_id, &format!("[{i}].knowledge[{j}].doc_id"))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            if label.target == gold.is_empty() {
                return Err(Error::Integrity(format!(
                    "label {i}: target={} with {} knowledge references",
                    label.target,
                    gold.len()
                )));
            }
            Ok(LabeledDialog {
                context: DialogContext { turns },
                target: label.target,
                gold_snippets: gold,
                gold_response: label.response,
                source: label.source,
            })
        })
        .collect()
}

/// Serializes dialogs back into `(logs, labels)` documents.
pub fn dialogs_to_json(dialogs: &[LabeledDialog]) -> (Value, Value) {
    let logs = dialogs
        .iter()
        .map(|d| {
            Value::Array(
                d.context
                    .turns
                    .iter()
                    .map(|t| {
                        let speaker = match t.speaker {
                            Speaker::User => "U",
                            Speaker::System => "S",
                        };
                        json!({ "speaker": speaker, "text": t.text })
                    })
                    .collect(),
            )
        })
        .collect();
    let labels = dialogs
        .iter()
        .map(|d| {
            let mut label = Map::new();
            label.insert("target".into(), Value::Bool(d.target));
            if d.target {
                label.insert(
                    "knowledge".into(),
                    Value::Array(
                        d.gold_snippets
                            .iter()
                            .map(|g| json!({"domain": g.domain, "entity_id": g.entity_id, "doc_id": g.doc_id}))
                            .collect(),
                    ),
                );
            }
            if let Some(r) = &d.gold_response {
                label.insert("response".into(), Value::String(r.clone()));
            }
            if let Some(s) = &d.source {
                label.insert("source".into(), Value::String(s.clone()));
            }
            Value::Object(label)
        })
        .collect();
    (Value::Array(logs), Value::Array(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn allenbell() -> Snippet {
        Snippet {
            id: SnippetId::new("hotel", "11", "3"),
            entity_name: Some("Allenbell".into()),
            question: "Do you provide dry cleaning?".into(),
            answer: "Allenbell does not provide dry cleaning service.".into(),
        }
    }

    #[test]
    fn minimal_knowledge_file() {
        let kb = load_knowledge(br#"{"hotel": {"*": {"0": {"question": "q?", "answer": "a."}}}}"#)
            .unwrap();
        assert_eq!(kb.summary(), KbSummary { domains: 1, entities: 1, snippets: 1 });
        assert_eq!(kb.entity_ids("hotel").collect::<Vec<_>>(), vec!["*"]);
        assert_eq!(kb.snippets()[0].entity_name.as_deref(), Some("hotel"));
    }

    #[test]
    fn challenge_layout_with_numeric_ids() {
        let kb = load_knowledge(
            br#"{"hotel": {"1": {"name": "Allenbell", "docs": {"0": {"title": "Q1?", "body": "A1."},
                                                           "2": {"title": "Q2?", "body": "A2."}}}},
                 "taxi": {"*": {"name": null, "docs": {"0": {"title": "Q?", "body": "A."}}}}}"#,
        )
        .unwrap();
        assert_eq!(kb.len(), 3);
        // sentinel added to hotel, populated in taxi
        assert_eq!(kb.entity_ids("hotel").collect::<Vec<_>>(), vec!["*", "1"]);
        assert_eq!(kb.populated_entities("hotel").collect::<Vec<_>>(), vec!["1"]);
        assert_eq!(kb.entity_name("taxi", "*"), Some("taxi"));
        assert_eq!(kb.snippets_of("hotel", "1").len(), 2);
    }

    #[test]
    fn duplicate_doc_id_is_integrity_error() {
        let err = load_knowledge(
            br#"{"hotel": {"*": {"0": {"question": "q", "answer": "a"}, "0": {"question": "q", "answer": "b"}}}}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn parse_failure_carries_path() {
        let err = load_knowledge(br#"{"hotel": {"*": {"0": {"question": 3, "answer": "a"}}}}"#)
            .unwrap_err();
        match err {
            Error::Format { path, .. } => assert!(path.contains("hotel"), "{path}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_answer_rejected() {
        let err = load_knowledge(br#"{"hotel": {"*": {"0": {"question": "q", "answer": "  "}}}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn snippet_rendering() {
        let s = allenbell();
        assert_eq!(
            snippet_text(&s, true, true),
            "hotel | Allenbell | Do you provide dry cleaning? | Allenbell does not provide dry cleaning service."
        );
        assert_eq!(
            snippet_text(&s, false, false),
            "Do you provide dry cleaning? | Allenbell does not provide dry cleaning service."
        );
        assert_eq!(snippet_text(&s, true, true), snippet_text(&s.clone(), true, true));
        let anonymous = Snippet { entity_name: None, ..s };
        assert_eq!(
            snippet_text(&anonymous, true, true),
            "hotel | Do you provide dry cleaning? | Allenbell does not provide dry cleaning service."
        );
    }

    #[test]
    fn dialog_labels() {
        let logs = br#"[[{"speaker": "U", "text": "hi"}], [{"speaker": "U", "text": "dry cleaning?"}]]"#;
        let labels = br#"[{"target": false},
                          {"target": true, "knowledge": [{"domain": "hotel", "entity_id": 11, "doc_id": 3}],
                           "response": "No."}]"#;
        let d = load_dialogs(logs, labels).unwrap();
        assert!(!d[0].target && d[0].gold_snippets.is_empty());
        assert!(d[1].target);
        assert_eq!(d[1].gold_snippets, vec![SnippetId::new("hotel", "11", "3")]);
        assert_eq!(d[1].gold_response.as_deref(), Some("No."));
    }

    #[test]
    fn misaligned_dialogs() {
        let logs = br#"[[{"speaker": "U", "text": "a"}], [{"speaker": "U", "text": "b"}], [{"speaker": "U", "text": "c"}]]"#;
        let labels = br#"[{"target": false}, {"target": false}]"#;
        assert!(matches!(
            load_dialogs(logs, labels),
            Err(Error::Alignment { logs: 3, labels: 2 })
        ));
    }

    #[test]
    fn context_truncation() {
        let ctx = DialogContext::new(vec![
            Turn { speaker: Speaker::User, text: "one two three four".into() },
            Turn { speaker: Speaker::System, text: "five six seven".into() },
        ]);
        let all = context_text(&ctx, 384);
        assert_eq!(all.len(), 9);
        assert_eq!(all[0], USER_TAG);
        let short = context_text(&ctx, 4);
        assert_eq!(short, vec!["<system>", "five", "six", "seven"]);
        let long: String = (0..500).map(|i| format!("w{i} ")).collect();
        let ctx = DialogContext::user(long);
        let t384 = context_text(&ctx, 384);
        let t128 = context_text(&ctx, 128);
        assert_eq!(t384.len(), 384);
        assert_eq!(t384.last().unwrap(), "w499");
        assert!(t384.ends_with(&t128));
    }
}
