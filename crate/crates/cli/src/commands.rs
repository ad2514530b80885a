use std::collections::{BTreeMap, HashMap};

use dialknow::checkpoint::{Checkpoint, Checkpointable, DualEncoder};
use dialknow::corpus::{DialogContext, InputConfig, KnowledgeBase, LabeledDialog};
use dialknow::detection::{
    detect_rad, train_detector, train_joint_detector, Detection, DetectionModel, JointDetectionModel,
};
use dialknow::encoder::{tokenize, SimilarityKind};
use dialknow::evaluation::{
    benchmark_latency, evaluate_pipeline, EvalMode, GeneratedResponse, KnowledgeResponder, LatencyReport,
    PipelineConfig, ResponseGenerator, ThresholdDetector,
};
use dialknow::generation::{train_generator, train_rag_joint, Conditioning, GeneratorModel, RagPosterior};
use dialknow::metric_learning::{
    detection_task, hierarchy_tasks, train_dkr, train_relevance, train_shared_trunk, LossTrace, SharedTrunkModel,
};
use dialknow::metric_learning::multitask::DETECTION_TASK;
use dialknow::rng::derive;
use dialknow::selection::{
    build_index, gold_list, train_cascade, CascadeModels, CascadeVariant, DenseRetriever, RankedList,
    RelevanceModel, Selector,
};
use dialknow::toy::make_toy;

use crate::config::{ConditioningName, DetectorKind, RunConfig};
use crate::error::{CliError, Result};
use crate::run::Run;

pub const ORACLE: &str = "oracle";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Task {
    Detector,
    SelectorFlat,
    SelectorCascade,
    Dkr,
    Generator,
    RagJoint,
    Multitask,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Detector => "detector",
            Task::SelectorFlat => "selector-flat",
            Task::SelectorCascade => "selector-cascade",
            Task::Dkr => "dkr",
            Task::Generator => "generator",
            Task::RagJoint => "rag-joint",
            Task::Multitask => "multitask",
        }
    }
}

fn name_or<'a>(cfg: &'a RunConfig, default: &'a str) -> &'a str {
    cfg.name.as_deref().unwrap_or(default)
}

fn required<'a>(value: &'a Option<String>, key: &str) -> Result<&'a str> {
    value.as_deref().ok_or_else(|| CliError::Config(format!("{key} is required")))
}

fn summary_line(kb: &KnowledgeBase, dialogs: &[LabeledDialog]) -> String {
    let s = kb.summary();
    let seeking = dialogs.iter().filter(|d| d.target).count();
    format!(
        "domains={} entities={} snippets={} dialogs={} knowledge_seeking={}",
        s.domains,
        s.entities,
        s.snippets,
        dialogs.len(),
        seeking
    )
}

fn write_summary(run: &mut Run, kb: &KnowledgeBase, dialogs: &[LabeledDialog]) -> Result<()> {
    let s = kb.summary();
    let summary = serde_json::json!({
        "domains": s.domains,
        "entities": s.entities,
        "snippets": s.snippets,
        "dialogs": dialogs.len(),
        "knowledge_seeking": dialogs.iter().filter(|d| d.target).count(),
    });
    run.write_json("summary.json", &summary)?;
    println!("{}", summary_line(kb, dialogs));
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let mut run = Run::create("data", name_or(cfg, "corpus"))?;
    let path = |p: &Option<std::path::PathBuf>, key: &str| {
        p.clone().ok_or_else(|| CliError::Config(format!("{key} is required")))
    };
    let kb = dialknow::corpus::load_knowledge(&run.read(&path(&cfg.knowledge, "knowledge")?)?)?;
    let dialogs = match (&cfg.logs, &cfg.labels) {
        (Some(logs), Some(labels)) => {
            let logs = run.read(logs)?;
            let labels = run.read(labels)?;
            dialknow::corpus::load_dialogs(&logs, &labels)?
        }
        (None, None) => Vec::new(),
        _ => return Err(CliError::Config("logs and labels must be given together".into())),
    };
    run.write_corpus(&kb, &dialogs)?;
    write_summary(&mut run, &kb, &dialogs)?;
    println!("wrote {}", run.finish("ingest", cfg)?.display());
    Ok(())
}

pub fn make_toy_corpus(cfg: &RunConfig) -> Result<()> {
    let mut run = Run::create("data", name_or(cfg, "toy"))?;
    let (kb, dialogs) = make_toy(&cfg.toy())?;
    run.write_corpus(&kb, &dialogs)?;
    write_summary(&mut run, &kb, &dialogs)?;
    println!("wrote {}", run.finish("make-toy", cfg)?.display());
    Ok(())
}

fn dual_checkpoint(enc: &DualEncoder, kind: SimilarityKind, input: InputConfig) -> Result<Checkpoint> {
    let mut ck = enc.to_checkpoint();
    ck.meta.insert("similarity".into(), serde_json::to_value(kind)?);
    ck.meta.insert("input".into(), serde_json::to_value(input)?);
    Ok(ck)
}

fn dual_from(ck: &Checkpoint) -> Result<(DualEncoder, SimilarityKind, InputConfig)> {
    let meta = |key: &str| {
        ck.meta
            .get(key)
            .cloned()
            .ok_or_else(|| CliError::Config(format!("dual encoder checkpoint lacks {key} metadata")))
    };
    let enc = DualEncoder::from_checkpoint(ck)?;
    Ok((enc, serde_json::from_value(meta("similarity")?)?, serde_json::from_value(meta("input")?)?))
}

fn write_trace(run: &mut Run, file: &str, trace: &LossTrace) -> Result<()> {
    run.write(file, trace.to_csv().as_bytes())
}

fn report_loss(trace: &LossTrace) {
    if let (Some(first), Some(last)) = (trace.0.first(), trace.0.last()) {
        println!("loss {first:.4} -> {last:.4} over {} steps", trace.0.len());
    }
}

fn seeking(dialogs: &[LabeledDialog]) -> Vec<LabeledDialog> {
    dialogs.iter().filter(|d| d.target && !d.gold_snippets.is_empty()).cloned().collect()
}

pub fn train(cfg: &RunConfig, task: Task) -> Result<()> {
    let mut run = Run::create("models", name_or(cfg, task.name()))?;
    let (kb, dialogs) = run.read_corpus(cfg)?;
    let tc = cfg.train();
    let trace = match task {
        Task::Detector => match cfg.detector_kind {
            DetectorKind::Plain => {
                let (m, t) = train_detector(&dialogs, &tc)?;
                run.save("model.ckpt", &m)?;
                t
            }
            DetectorKind::Joint => {
                let (m, t) = train_joint_detector(&dialogs, &kb, &tc)?;
                run.save("model.ckpt", &m)?;
                t
            }
        },
        Task::SelectorFlat => {
            let (m, t) = train_relevance(&dialogs, &kb, &tc)?;
            run.save("model.ckpt", &m)?;
            t
        }
        Task::SelectorCascade => {
            let (m, traces) = train_cascade(&dialogs, &kb, cfg.cascade_variant, &tc)?;
            run.save("model.ckpt", &m)?;
            let stages: &[&str] = match cfg.cascade_variant {
                CascadeVariant::ThreeStage => &["domain", "entity", "document"],
                CascadeVariant::TwoStage => &["domain-entity", "document"],
            };
            for (stage, t) in stages.iter().zip(&traces) {
                write_trace(&mut run, &format!("loss-{stage}.csv"), t)?;
                print!("{stage}: ");
                report_loss(t);
            }
            return finish_train(run, cfg, task);
        }
        Task::Dkr => {
            let loss = cfg.dkr_loss()?;
            let (enc, t) = train_dkr(&seeking(&dialogs), &kb, loss, &tc)?;
            run.write("model.ckpt", &dual_checkpoint(&enc, loss.similarity(), tc.input)?.to_bytes())?;
            t
        }
        Task::Generator => {
            let selector = match cfg.conditioning {
                ConditioningName::Gold => None,
                ConditioningName::Selected => Some(load_selector(&mut run, cfg, None)?),
            };
            let conditioning = match &selector {
                None => Conditioning::Gold,
                Some(s) => Conditioning::Selected(s.as_ref()),
            };
            let (g, t) = train_generator(&dialogs, &kb, conditioning, cfg.max_vocab, &tc)?;
            run.save("model.ckpt", &g)?;
            t
        }
        Task::RagJoint => {
            let ck = run.read_checkpoint("retriever", required(&cfg.retriever, "retriever")?)?;
            let (enc, kind, input) = dual_from(&ck)?;
            let g = GeneratorModel::from_checkpoint(&run.read_checkpoint("generator", required(&cfg.generator, "generator")?)?)?;
            let index = build_index(&enc.snippet, &kb, input, kind);
            let out = train_rag_joint(g, enc.context.clone(), &index, &dialogs, &kb, cfg.top_n, &tc)?;
            run.save("model.ckpt", &out.generator)?;
            let tuned = DualEncoder { context: out.context_encoder, snippet: enc.snippet };
            run.write("retriever.ckpt", &dual_checkpoint(&tuned, kind, input)?.to_bytes())?;
            out.trace
        }
        Task::Multitask => {
            let input = cfg.input();
            let mut tasks = hierarchy_tasks(&dialogs, &kb, &input, cfg.num_negatives, derive(cfg.seed(), 50))?;
            let positives = dialogs.iter().filter(|d| d.target).count();
            if positives > 0 && positives < dialogs.len() {
                tasks.push(detection_task(&dialogs, &input));
            }
            let (m, t) = train_shared_trunk(&tasks, &tc)?;
            run.save("model.ckpt", &m)?;
            t
        }
    };
    write_trace(&mut run, "loss.csv", &trace)?;
    report_loss(&trace);
    finish_train(run, cfg, task)
}

fn finish_train(run: Run, cfg: &RunConfig, task: Task) -> Result<()> {
    println!("wrote {}", run.finish(&format!("train {}", task.name()), cfg)?.display());
    Ok(())
}

/// Answers every stage from the corpus labels.
struct Oracle(HashMap<String, LabeledDialog>);

impl Oracle {
    fn new(dialogs: &[LabeledDialog]) -> Self {
        Self(dialogs.iter().map(|d| (d.context.render(), d.clone())).collect())
    }

    fn label(&self, ctx: &DialogContext) -> dialknow::Result<&LabeledDialog> {
        self.0
            .get(&ctx.render())
            .ok_or_else(|| dialknow::Error::Usage("oracle asked about an unlabeled context".into()))
    }
}

impl Selector for Oracle {
    fn select(&self, _kb: &KnowledgeBase, ctx: &DialogContext) -> dialknow::Result<RankedList> {
        Ok(gold_list(&self.label(ctx)?.gold_snippets))
    }
}

impl ResponseGenerator for Oracle {
    fn generate(&self, _kb: &KnowledgeBase, ctx: &DialogContext, selected: &RankedList) -> dialknow::Result<GeneratedResponse> {
        let d = self.label(ctx)?;
        let top = selected
            .top()
            .ok_or_else(|| dialknow::Error::Usage("oracle response without a selected snippet".into()))?;
        Ok(GeneratedResponse {
            tokens: tokenize(d.gold_response.as_deref().unwrap_or("")),
            posterior: RagPosterior::single(top.id.clone()),
        })
    }
}

/// Builds a selector from a checkpoint of any selection-capable kind.
fn selector_from(ck: &Checkpoint, kb: &KnowledgeBase, top_k: usize) -> Result<Box<dyn Selector>> {
    Ok(match ck.kind.as_str() {
        RelevanceModel::KIND => Box::new(RelevanceModel::from_checkpoint(ck)?),
        CascadeModels::KIND => Box::new(CascadeModels::from_checkpoint(ck)?),
        SharedTrunkModel::KIND => Box::new(SharedTrunkModel::from_checkpoint(ck)?),
        DualEncoder::KIND => {
            let (enc, kind, input) = dual_from(ck)?;
            Box::new(DenseRetriever::new(&enc, kb, input, kind, top_k))
        }
        other => return Err(CliError::Config(format!("a {other} checkpoint cannot select knowledge"))),
    })
}

fn load_selector(run: &mut Run, cfg: &RunConfig, kb: Option<&KnowledgeBase>) -> Result<Box<dyn Selector>> {
    let reference = required(&cfg.selector, "selector")?;
    let ck = run.read_checkpoint("selector", reference)?;
    let owned;
    let kb = match kb {
        Some(kb) => kb,
        None => {
            owned = run.read_corpus(cfg)?.0;
            &owned
        }
    };
    // R@5 and MRR@5 need at least five ranked entries
    selector_from(&ck, kb, cfg.top_k.max(5))
}

enum DetectorModel {
    Plain(ThresholdDetector),
    Joint(JointDetectionModel),
    Multitask(SharedTrunkModel),
}

fn detector_from(ck: &Checkpoint, threshold: f64) -> Result<DetectorModel> {
    Ok(match ck.kind.as_str() {
        DetectionModel::KIND => DetectorModel::Plain(ThresholdDetector { model: DetectionModel::from_checkpoint(ck)?, threshold }),
        JointDetectionModel::KIND => DetectorModel::Joint(JointDetectionModel::from_checkpoint(ck)?),
        SharedTrunkModel::KIND => {
            let m = SharedTrunkModel::from_checkpoint(ck)?;
            m.head(DETECTION_TASK)?;
            DetectorModel::Multitask(m)
        }
        other => return Err(CliError::Config(format!("a {other} checkpoint cannot detect knowledge-seeking turns"))),
    })
}

pub fn evaluate(cfg: &RunConfig, mode: EvalMode) -> Result<()> {
    let mut run = Run::create("eval", name_or(cfg, mode.name()))?;
    let (kb, dialogs) = run.read_corpus(cfg)?;
    let oracle = Oracle::new(&dialogs);

    let selector_ref = required(&cfg.selector, "selector")?;
    let selector: Box<dyn Selector + '_> = if selector_ref == ORACLE {
        Box::new(Oracle::new(&dialogs))
    } else {
        load_selector(&mut run, cfg, Some(&kb))?
    };

    let generator_ref = required(&cfg.generator, "generator")?;
    let generator: Box<dyn ResponseGenerator> = if generator_ref == ORACLE {
        Box::new(Oracle::new(&dialogs))
    } else {
        let model = GeneratorModel::from_checkpoint(&run.read_checkpoint("generator", generator_ref)?)?;
        Box::new(KnowledgeResponder { model, decode: cfg.decode_config(), n: cfg.top_n })
    };

    let detector_model = match (mode, cfg.detector.as_deref()) {
        (EvalMode::GroundTruth, _) | (_, Some(ORACLE)) => None,
        (EvalMode::Cascaded, Some(reference)) => Some(detector_from(&run.read_checkpoint("detector", reference)?, cfg.threshold)?),
        (EvalMode::Cascaded, None) => return Err(CliError::Config("detector is required in cascaded mode".into())),
    };
    let threshold = cfg.threshold;
    let top_n = cfg.top_n;
    let detector = |ctx: &DialogContext| -> dialknow::Result<Detection> {
        use dialknow::evaluation::Detector as _;
        match &detector_model {
            Some(DetectorModel::Plain(d)) => d.detect(ctx),
            Some(DetectorModel::Joint(jm)) => detect_rad(jm, selector.as_ref(), &kb, ctx, top_n, threshold),
            Some(DetectorModel::Multitask(m)) => {
                Detection::from_probability(m.probability(DETECTION_TASK, &m.input.context_tokens(ctx), None)?, threshold)
            }
            None => Detection::from_probability(if oracle.label(ctx)?.target { 1.0 } else { 0.0 }, threshold),
        }
    };

    let pcfg = PipelineConfig { mode, rouge_beta: cfg.rouge_beta };
    let (report, outputs) = evaluate_pipeline(&detector, selector.as_ref(), generator.as_ref(), &kb, &dialogs, &pcfg)?;
    run.write("report.json", report.to_json()?.as_bytes())?;
    let tsv = report.to_tsv();
    run.write("report.tsv", tsv.as_bytes())?;
    if mode == EvalMode::Cascaded {
        run.write_lines("detection.jsonl", &outputs.detection_lines())?;
    }
    run.write_lines("selection.jsonl", &outputs.selection_lines())?;
    run.write_lines("responses.jsonl", &outputs.response_lines())?;
    print!("{tsv}");
    println!("wrote {}", run.finish(&format!("evaluate {}", mode.name()), cfg)?.display());
    Ok(())
}

/// Latency and model calls per turn. With a `selector` configured only that
/// model is measured; otherwise freshly initialized flat, three-stage,
/// two-stage and dense selectors are compared (call counts do not depend on
/// training).
pub fn bench(cfg: &RunConfig) -> Result<()> {
    let mut run = Run::create("bench", name_or(cfg, "bench"))?;
    let (kb, dialogs) = run.read_corpus(cfg)?;
    let queries: Vec<DialogContext> =
        dialogs.iter().filter(|d| d.target).take(cfg.bench_turns).map(|d| d.context.clone()).collect();
    let mut selectors: Vec<(String, Box<dyn Selector>)> = Vec::new();
    match &cfg.selector {
        Some(reference) => selectors.push((reference.clone(), load_selector(&mut run, cfg, Some(&kb))?)),
        None => {
            let (shape, input, seed) = (cfg.shape(), cfg.input(), cfg.seed());
            let rel = |stream| RelevanceModel::new(shape, input, derive(seed, stream));
            selectors.push(("flat".into(), Box::new(rel(1))));
            selectors.push((
                "three-stage".into(),
                Box::new(CascadeModels::ThreeStage { domain: rel(2), entity: rel(3), document: rel(4) }),
            ));
            selectors.push(("two-stage".into(), Box::new(CascadeModels::TwoStage { domain_entity: rel(5), document: rel(6) })));
            let enc = DualEncoder { context: shape.init(derive(seed, 7)), snippet: shape.init(derive(seed, 8)) };
            selectors.push(("dkr".into(), Box::new(DenseRetriever::new(&enc, &kb, input, SimilarityKind::Dot, cfg.top_k))));
        }
    }
    let mut reports: BTreeMap<String, LatencyReport> = BTreeMap::new();
    let mut tsv = String::from("selector\tmodel_calls_per_turn\tseconds_per_turn\tturns_measured\n");
    for (name, s) in &selectors {
        let r = benchmark_latency(|ctx| Ok(s.select(&kb, ctx)?.model_calls), &queries, cfg.warmup, cfg.repeats)?;
        tsv.push_str(&format!("{name}\t{}\t{:.3e}\t{}\n", r.model_calls_per_turn, r.seconds_per_turn, r.turns_measured));
        reports.insert(name.clone(), r);
    }
    run.write_json("bench.json", &reports)?;
    run.write("bench.tsv", tsv.as_bytes())?;
    print!("{tsv}");
    println!("wrote {}", run.finish("bench", cfg)?.display());
    Ok(())
}
