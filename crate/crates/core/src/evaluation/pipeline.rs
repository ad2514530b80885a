//! End-to-end evaluation with ground-truth or cascaded stage inputs.
//!
//! Selection and generation metrics are averaged over knowledge-seeking
//! turns. In cascaded mode a turn the detector misses is not selected or
//! generated for and contributes 0; a block is absent when no turn could be
//! scored at all.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{DialogContext, KnowledgeBase, LabeledDialog};
use crate::detection::{detect, Detection, DetectionModel};
use crate::encoder::tokenize;
use crate::error::{Error, Result};
use crate::evaluation::metrics::{bleu1, mrr_at_k, precision_recall_f1, recall_at_k, rouge_l_with_beta, Prf, DEFAULT_ROUGE_BETA};
use crate::generation::{rag_decode, renormalize_topn, response_json_line, Calibration, DecodeConfig, GeneratorModel, RagPosterior};
use crate::selection::{gold_list, RankedList, Selector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    GroundTruth,
    Cascaded,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::GroundTruth => "ground-truth",
            EvalMode::Cascaded => "cascaded",
        }
    }
}

pub trait Detector {
    fn detect(&self, ctx: &DialogContext) -> Result<Detection>;
}

impl<F: Fn(&DialogContext) -> Result<Detection>> Detector for F {
    fn detect(&self, ctx: &DialogContext) -> Result<Detection> {
        self(ctx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdDetector {
    pub model: DetectionModel,
    pub threshold: f64,
}

impl Detector for ThresholdDetector {
    fn detect(&self, ctx: &DialogContext) -> Result<Detection> {
        detect(&self.model, ctx, self.threshold)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedResponse {
    pub tokens: Vec<String>,
    pub posterior: RagPosterior,
}

pub trait ResponseGenerator {
    /// Responds given the selection stage's ranking (the gold snippets in
    /// ground-truth mode).
    fn generate(&self, kb: &KnowledgeBase, ctx: &DialogContext, selected: &RankedList) -> Result<GeneratedResponse>;
}

impl<F> ResponseGenerator for F
where
    F: Fn(&KnowledgeBase, &DialogContext, &RankedList) -> Result<GeneratedResponse>,
{
    fn generate(&self, kb: &KnowledgeBase, ctx: &DialogContext, selected: &RankedList) -> Result<GeneratedResponse> {
        self(kb, ctx, selected)
    }
}

/// Decodes from the renormalized top-n of the ranking; `n = 1` conditions
/// on the top snippet alone.
#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeResponder {
    pub model: GeneratorModel,
    pub decode: DecodeConfig,
    pub n: usize,
}

impl ResponseGenerator for KnowledgeResponder {
    fn generate(&self, kb: &KnowledgeBase, ctx: &DialogContext, selected: &RankedList) -> Result<GeneratedResponse> {
        let posterior = renormalize_topn(selected, self.n, Calibration::for_scores(selected.score_kind))?;
        let ids = rag_decode(&self.model, &posterior, kb, ctx, &self.decode)?;
        Ok(GeneratedResponse { tokens: self.model.vocab.words_of(&ids), posterior })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub mrr_at_5: f64,
    /// Knowledge-seeking turns (the denominator).
    pub turns: usize,
    /// Turns that were actually ranked.
    pub evaluated: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub overall: SelectionMetrics,
    pub by_source: BTreeMap<String, SelectionMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub bleu1: f64,
    pub rouge_l: f64,
    pub turns: usize,
    pub evaluated: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub overall: GenerationMetrics,
    pub by_source: BTreeMap<String, GenerationMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub turns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: EvalMode,
    pub turns: usize,
    /// Absent in ground-truth mode, where the detector is not consulted.
    pub detection: Option<DetectionReport>,
    pub selection: Option<SelectionReport>,
    pub generation: Option<GenerationReport>,
}

/// Per-turn outputs, keyed by the turn's position in the corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PipelineOutputs {
    pub detections: Vec<(String, Detection)>,
    pub rankings: Vec<(String, RankedList)>,
    pub responses: Vec<(String, GeneratedResponse)>,
}

impl PipelineOutputs {
    pub fn detection_lines(&self) -> Vec<Value> {
        self.detections.iter().map(|(q, d)| d.to_json_line(q)).collect()
    }

    pub fn selection_lines(&self) -> Vec<Value> {
        self.rankings.iter().map(|(q, r)| r.to_json_line(q)).collect()
    }

    pub fn response_lines(&self) -> Vec<Value> {
        self.responses
            .iter()
            .map(|(q, r)| response_json_line(q, &r.tokens.join(" "), &r.posterior))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: EvalMode,
    pub rouge_beta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { mode: EvalMode::Cascaded, rouge_beta: DEFAULT_ROUGE_BETA }
    }
}

#[derive(Default)]
struct Acc {
    sums: [f64; 3],
    turns: usize,
    evaluated: usize,
}

impl Acc {
    fn mean(&self, i: usize) -> f64 {
        if self.turns == 0 {
            0.0
        } else {
            self.sums[i] / self.turns as f64
        }
    }

    fn selection(&self) -> SelectionMetrics {
        SelectionMetrics { r_at_1: self.mean(0), r_at_5: self.mean(1), mrr_at_5: self.mean(2), turns: self.turns, evaluated: self.evaluated }
    }

    fn generation(&self) -> GenerationMetrics {
        GenerationMetrics { bleu1: self.mean(0), rouge_l: self.mean(1), turns: self.turns, evaluated: self.evaluated }
    }
}

#[derive(Default)]
struct Sliced {
    overall: Acc,
    slices: BTreeMap<String, Acc>,
}

impl Sliced {
    fn count(&mut self, source: &str) {
        self.overall.turns += 1;
        self.slices.entry(source.to_string()).or_default().turns += 1;
    }

    fn add(&mut self, source: &str, values: &[f64]) {
        for acc in [&mut self.overall, self.slices.get_mut(source).expect("counted first")] {
            acc.evaluated += 1;
            for (s, v) in acc.sums.iter_mut().zip(values) {
                *s += v;
            }
        }
    }
}

pub const DEFAULT_SOURCE: &str = "default";

pub fn evaluate_pipeline(
    detector: &dyn Detector,
    selector: &dyn Selector,
    generator: &dyn ResponseGenerator,
    kb: &KnowledgeBase,
    corpus: &[LabeledDialog],
    cfg: &PipelineConfig,
) -> Result<(PipelineReport, PipelineOutputs)> {
    let mut out = PipelineOutputs::default();
    let mut decisions = Vec::new();
    let mut labels = Vec::new();
    let mut sel = Sliced::default();
    let mut gen = Sliced::default();
    for (i, d) in corpus.iter().enumerate() {
        let qid = i.to_string();
        let source = d.source.as_deref().unwrap_or(DEFAULT_SOURCE);
        let proceed = match cfg.mode {
            EvalMode::GroundTruth => d.target,
            EvalMode::Cascaded => {
                let det = detector.detect(&d.context)?;
                decisions.push(det.decision);
                labels.push(d.target);
                out.detections.push((qid.clone(), det));
                det.decision
            }
        };
        let seeking = d.target && !d.gold_snippets.is_empty();
        let has_reference = seeking && d.gold_response.is_some();
        if seeking {
            sel.count(source);
        }
        if has_reference {
            gen.count(source);
        }
        if !proceed {
            continue;
        }
        let ranked = selector.select(kb, &d.context)?;
        if seeking {
            let g = &d.gold_snippets;
            sel.add(source, &[recall_at_k(&ranked, g, 1), recall_at_k(&ranked, g, 5), mrr_at_k(&ranked, g, 5)]);
        }
        let conditioning = match cfg.mode {
            EvalMode::GroundTruth => gold_list(&d.gold_snippets),
            EvalMode::Cascaded => ranked.clone(),
        };
        out.rankings.push((qid.clone(), ranked));
        if conditioning.is_empty() {
            continue;
        }
        let response = generator.generate(kb, &d.context, &conditioning)?;
        if has_reference {
            let reference = tokenize(d.gold_response.as_deref().unwrap());
            gen.add(
                source,
                &[bleu1(&response.tokens, &reference), rouge_l_with_beta(&response.tokens, &reference, cfg.rouge_beta)],
            );
        }
        out.responses.push((qid, response));
    }
    let detection = match cfg.mode {
        EvalMode::GroundTruth => None,
        EvalMode::Cascaded => {
            let Prf { precision, recall, f1 } = precision_recall_f1(&decisions, &labels)?;
            Some(DetectionReport { precision, recall, f1, turns: decisions.len() })
        }
    };
    let selection = (sel.overall.evaluated > 0).then(|| SelectionReport {
        overall: sel.overall.selection(),
        by_source: sel.slices.iter().map(|(k, a)| (k.clone(), a.selection())).collect(),
    });
    let generation = (gen.overall.evaluated > 0).then(|| GenerationReport {
        overall: gen.overall.generation(),
        by_source: gen.slices.iter().map(|(k, a)| (k.clone(), a.generation())).collect(),
    });
    Ok((PipelineReport { mode: cfg.mode, turns: corpus.len(), detection, selection, generation }, out))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| format!("{:>8}", "-"), |x| format!("{x:>8.4}"))
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from)
    }

    /// Aligned columns: detection F1 | R@1 R@5 MRR@5 | BLEU-1 ROUGE-L, one
    /// row for the whole set and one per data source.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "{:<24}\t{:>8}\t{:>8}\t{:>8}\t{:>8}\t{:>8}\t{:>8}\n",
            "slice", "det_F1", "R@1", "R@5", "MRR@5", "BLEU-1", "ROUGE-L"
        );
        let row = |name: &str, f1: Option<f64>, s: Option<&SelectionMetrics>, g: Option<&GenerationMetrics>| {
            format!(
                "{:<24}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                name,
                cell(f1),
                cell(s.map(|s| s.r_at_1)),
                cell(s.map(|s| s.r_at_5)),
                cell(s.map(|s| s.mrr_at_5)),
                cell(g.map(|g| g.bleu1)),
                cell(g.map(|g| g.rouge_l)),
            )
        };
        out.push_str(&row(
            self.mode.name(),
            self.detection.as_ref().map(|d| d.f1),
            self.selection.as_ref().map(|s| &s.overall),
            self.generation.as_ref().map(|g| &g.overall),
        ));
        let mut sources: Vec<&String> = Vec::new();
        if let Some(s) = &self.selection {
            sources.extend(s.by_source.keys());
        }
        if let Some(g) = &self.generation {
            sources.extend(g.by_source.keys());
        }
        sources.sort();
        sources.dedup();
        for src in sources {
            out.push_str(&row(
                &format!("{}/{}", self.mode.name(), src),
                None,
                self.selection.as_ref().and_then(|s| s.by_source.get(src)),
                self.generation.as_ref().and_then(|g| g.by_source.get(src)),
            ));
        }
        out
    }
}
