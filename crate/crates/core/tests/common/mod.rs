//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use dialknow::corpus::{DialogContext, InputConfig, KnowledgeBase, LabeledDialog, Snippet, Speaker, Turn};
use dialknow::encoder::{forward, tokenize, EncoderParams, EncoderShape, Embedding};
use dialknow::evaluation::recall_at_k;
use dialknow::generation::{GeneratorModel, Vocabulary};
use dialknow::metric_learning::{binary_ce_loss, nll_loss, triplet_loss, TrainConfig, TripletConfig};
use dialknow::rng::{seeded, Rng};
use dialknow::selection::Selector;
use dialknow::toy::{make_toy, ToyConfig};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_CASES: usize = 100;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`; zero when both vectors vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn central_diff<F: FnMut(&[f64]) -> f64>(x: &[f64], mut f: F) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(&x);
            x[i] = orig - FD_STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteResult {
    pub cases: usize,
    pub max_rel: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.cases >= GRAD_CASES && self.max_rel <= GRAD_REL_TOL
    }
}

fn uniform(rng: &mut Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

const WORDS: [&str; 12] = ["hotel", "wifi", "free", "parking", "is", "the", "a", "do", "you", "have", "pets", "allowed"];

fn random_tokens(rng: &mut Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string()).collect()
}

fn flatten_encoder(p: &EncoderParams) -> Vec<f64> {
    let mut v = p.token_table.clone();
    v.extend(&p.projection);
    v.extend(&p.projection_bias);
    v
}

fn unflatten_encoder(p: &mut EncoderParams, v: &[f64]) -> usize {
    let (a, b) = (p.token_table.len(), p.projection.len());
    let c = p.projection_bias.len();
    p.token_table.copy_from_slice(&v[..a]);
    p.projection.copy_from_slice(&v[a..a + b]);
    p.projection_bias.copy_from_slice(&v[a + b..a + b + c]);
    a + b + c
}

fn dense_encoder_grads(p: &EncoderParams, g: &dialknow::encoder::EncoderGrads) -> Vec<f64> {
    let d = p.embed_dim;
    let mut rows = vec![0.0; p.token_table.len()];
    for (bucket, r) in &g.rows {
        rows[bucket * d..(bucket + 1) * d].copy_from_slice(r);
    }
    rows.extend(&g.projection);
    rows.extend(&g.bias);
    rows
}

fn random_encoder(rng: &mut Rng, bucket_count: usize, dim: usize) -> EncoderParams {
    let mut p = EncoderParams::zeros(bucket_count, dim);
    let n = flatten_encoder(&p).len();
    unflatten_encoder(&mut p, &uniform(rng, n, 1.0));
    p
}

/// `upstream · encode(p, tokens)` over random 5-token inputs.
pub fn encoder_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..cases {
        let p = random_encoder(&mut rng, 16, 4);
        let tokens = random_tokens(&mut rng, 5);
        let upstream = uniform(&mut rng, 4, 1.0);
        let analytic = dense_encoder_grads(&p, &forward(&p, &tokens).backward(&p, &upstream));
        let mut q = p.clone();
        let numeric = central_diff(&flatten_encoder(&p), |v| {
            unflatten_encoder(&mut q, v);
            forward(&q, &tokens).output.0.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        });
        max_rel = max_rel.max(rel_err(&analytic, &numeric));
    }
    SuiteResult { cases, max_rel }
}

/// Triplet loss with respect to anchor, positive and negative. Cases within
/// 1e-3 of the hinge are redrawn so the finite difference never straddles it.
pub fn triplet_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let cfg = TripletConfig::default();
    let d = 8;
    let mut max_rel: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let x = uniform(&mut rng, 3 * d, 1.0);
        let split = |v: &[f64]| (Embedding(v[..d].to_vec()), Embedding(v[d..2 * d].to_vec()), Embedding(v[2 * d..].to_vec()));
        let (a, p, n) = split(&x);
        let (_, g) = triplet_loss(&a, &p, &n, &cfg);
        let dist = |u: &Embedding, v: &Embedding| u.0.iter().zip(&v.0).map(|(s, t)| (s - t).powi(2)).sum::<f64>().sqrt();
        if (dist(&a, &p) - dist(&a, &n) + cfg.margin).abs() < 1e-3 {
            continue;
        }
        let analytic: Vec<f64> = g.anchor.iter().chain(&g.positive).chain(&g.negative).copied().collect();
        let numeric = central_diff(&x, |v| {
            let (a, p, n) = split(v);
            triplet_loss(&a, &p, &n, &cfg).0
        });
        max_rel = max_rel.max(rel_err(&analytic, &numeric));
        done += 1;
    }
    SuiteResult { cases, max_rel }
}

/// NLL over dot products, 8 negatives.
pub fn nll_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let (d, m) = (8, 8);
    let mut max_rel: f64 = 0.0;
    let split = |v: &[f64]| {
        let e: Vec<Embedding> = v.chunks(d).map(|c| Embedding(c.to_vec())).collect();
        (e[0].clone(), e[1].clone(), e[2..].to_vec())
    };
    for _ in 0..cases {
        let x = uniform(&mut rng, (m + 2) * d, 1.0);
        let (a, p, n) = split(&x);
        let (_, g) = nll_loss(&a, &p, &n).unwrap();
        let mut analytic = g.anchor.clone();
        analytic.extend(&g.positive);
        g.negatives.iter().for_each(|v| analytic.extend(v));
        let numeric = central_diff(&x, |v| {
            let (a, p, n) = split(v);
            nll_loss(&a, &p, &n).unwrap().0
        });
        max_rel = max_rel.max(rel_err(&analytic, &numeric));
    }
    SuiteResult { cases, max_rel }
}

/// Binary cross-entropy with respect to logits in [-10, 10].
pub fn bce_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let mut max_rel: f64 = 0.0;
    for _ in 0..cases {
        let logit = rng.gen_range(-10.0..10.0);
        let label = rng.gen_bool(0.5);
        let (_, analytic) = binary_ce_loss(logit, label);
        let numeric = central_diff(&[logit], |v| binary_ce_loss(v[0], label).0);
        max_rel = max_rel.max(rel_err(&[analytic], &numeric));
    }
    SuiteResult { cases, max_rel }
}

fn flatten_generator(g: &GeneratorModel) -> Vec<f64> {
    let mut v = g.bigram.clone();
    v.extend(&g.cond_weights);
    v.extend(&g.cond_bias);
    v.extend(flatten_encoder(&g.condition_tower));
    v
}

fn unflatten_generator(g: &mut GeneratorModel, v: &[f64]) {
    let (a, b, c) = (g.bigram.len(), g.cond_weights.len(), g.cond_bias.len());
    g.bigram.copy_from_slice(&v[..a]);
    g.cond_weights.copy_from_slice(&v[a..a + b]);
    g.cond_bias.copy_from_slice(&v[a + b..a + b + c]);
    unflatten_encoder(&mut g.condition_tower, &v[a + b + c..]);
}

pub fn small_context() -> DialogContext {
    DialogContext::new(vec![
        Turn { speaker: Speaker::User, text: "i need a hotel with parking".into() },
        Turn { speaker: Speaker::System, text: "the acorn is a fine hotel".into() },
        Turn { speaker: Speaker::User, text: "do they allow pets ?".into() },
    ])
}

pub fn small_snippet() -> Snippet {
    Snippet {
        id: dialknow::corpus::SnippetId::new("hotel", "3", "0"),
        entity_name: Some("Acorn".into()),
        question: "Are pets allowed?".into(),
        answer: "Pets are not allowed.".into(),
    }
}

/// Teacher-forced generator NLL with respect to every parameter.
pub fn generator_suite(cases: usize, seed: u64) -> SuiteResult {
    let mut rng = seeded(seed);
    let responses: Vec<Vec<String>> = ["yes pets are allowed", "no parking here"].iter().map(|r| tokenize(r)).collect();
    let vocab = Vocabulary::build(responses.iter().map(Vec::as_slice), 100);
    let ctx = small_context();
    let snippet = small_snippet();
    let shape = EncoderShape { bucket_count: 8, embed_dim: 3 };
    let mut max_rel: f64 = 0.0;
    for _ in 0..cases {
        let mut g = GeneratorModel::zeros(vocab.clone(), shape, InputConfig::default());
        let n = flatten_generator(&g).len();
        unflatten_generator(&mut g, &uniform(&mut rng, n, 1.0));
        let len = rng.gen_range(1..5);
        let response: Vec<usize> = (0..len).map(|_| rng.gen_range(2..g.vocab_size())).collect();
        let (_, grads) = g.nll_backward(&ctx, &snippet, &response);
        let v = g.vocab_size();
        let mut analytic = vec![0.0; v * v];
        for (r, row) in &grads.bigram {
            analytic[r * v..(r + 1) * v].copy_from_slice(row);
        }
        analytic.extend(&grads.cond_weights);
        analytic.extend(&grads.cond_bias);
        analytic.extend(dense_encoder_grads(&g.condition_tower, &grads.tower));
        let mut q = g.clone();
        let numeric = central_diff(&flatten_generator(&g), |x| {
            unflatten_generator(&mut q, x);
            -q.sequence_logprob(&ctx, &snippet, &response)
        });
        max_rel = max_rel.max(rel_err(&analytic, &numeric));
    }
    SuiteResult { cases, max_rel }
}

// Pinned desk-scale training setup.

pub const TOY_SEED: u64 = 1;
pub const TRAIN_SEED: u64 = 1;
pub const R1_TARGET: f64 = 0.95;

pub fn toy_corpus() -> (KnowledgeBase, Vec<LabeledDialog>) {
    make_toy(&ToyConfig { seed: TOY_SEED, ..Default::default() }).unwrap()
}

pub fn toy_shape() -> EncoderShape {
    EncoderShape { bucket_count: 4096, embed_dim: 32 }
}

pub fn dkr_config() -> TrainConfig {
    TrainConfig { learning_rate: 2.0, steps: 5000, batch_size: 8, seed: TRAIN_SEED, encoder: toy_shape(), ..Default::default() }
}

pub fn cascade_config() -> TrainConfig {
    TrainConfig { learning_rate: 2.0, steps: 30_000, batch_size: 4, seed: TRAIN_SEED, encoder: toy_shape(), ..Default::default() }
}

pub fn generator_config() -> TrainConfig {
    TrainConfig { learning_rate: 0.5, steps: 500, batch_size: 8, seed: TRAIN_SEED, encoder: toy_shape(), ..Default::default() }
}

pub fn rag_joint_config() -> TrainConfig {
    TrainConfig { learning_rate: 0.1, steps: 120, batch_size: 1000, seed: TRAIN_SEED, encoder: toy_shape(), ..Default::default() }
}

/// Training R@1 over the knowledge-seeking dialogs.
pub fn training_r1(sel: &dyn Selector, kb: &KnowledgeBase, dialogs: &[LabeledDialog]) -> f64 {
    let seeking: Vec<&LabeledDialog> = dialogs.iter().filter(|d| d.target).collect();
    let hits: f64 = seeking.iter().map(|d| recall_at_k(&sel.select(kb, &d.context).unwrap(), &d.gold_snippets, 1)).sum();
    hits / seeking.len() as f64
}

/// Every window of the `window`-step moving average is no larger than the
/// previous one (up to 1e-12 of rounding).
pub fn moving_average_non_increasing(trace: &[f64], window: usize) -> bool {
    let ma: Vec<f64> = trace.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect();
    !ma.is_empty() && ma.windows(2).all(|w| w[1] <= w[0] + 1e-12)
}

pub const MARGINAL_TOL: f64 = 1e-9;

/// Largest absolute gap between the library's top-|K| marginals and a
/// brute-force sum over every snippet, for `rag_sequence_logprob` and
/// `detect_rad` (with both a similarity and a probability selector).
pub fn marginalization_gaps(seed: u64) -> (f64, f64) {
    use dialknow::checkpoint::DualEncoder;
    use dialknow::detection::{detect_rad, JointDetectionModel};
    use dialknow::encoder::{encode, SimilarityKind};
    use dialknow::generation::{rag_sequence_logprob, renormalize_topn, Calibration};
    use dialknow::heads::sigmoid;
    use dialknow::selection::{DenseRetriever, RelevanceModel};

    let (kb, dialogs) = toy_corpus();
    let k = kb.len();
    assert!(k <= 64);
    let shape = EncoderShape { bucket_count: 512, embed_dim: 8 };
    let input = InputConfig::default();
    let mut rng = seeded(seed);
    let scaled = |rng: &mut Rng| {
        let mut p = EncoderParams::zeros(shape.bucket_count, shape.embed_dim);
        let n = flatten_encoder(&p).len();
        unflatten_encoder(&mut p, &uniform(rng, n, 1.0));
        p
    };
    let enc = DualEncoder { context: scaled(&mut rng), snippet: scaled(&mut rng) };
    let dense = DenseRetriever::new(&enc, &kb, input, SimilarityKind::Dot, k);
    let mut flat = RelevanceModel::new(shape, input, seed);
    flat.context_tower = scaled(&mut rng);
    flat.candidate_tower = scaled(&mut rng);
    let mut jm = JointDetectionModel(RelevanceModel::new(shape, input, seed + 1));
    jm.0.context_tower = scaled(&mut rng);
    jm.0.candidate_tower = scaled(&mut rng);
    jm.0.head.weights.iter_mut().for_each(|w| *w *= 10.0);
    let responses: Vec<Vec<String>> = dialogs.iter().filter_map(|d| d.gold_response.as_deref()).map(tokenize).collect();
    let vocab = Vocabulary::build(responses.iter().map(Vec::as_slice), 100);
    let mut g = GeneratorModel::new(vocab, shape, input, seed);
    g.condition_tower = scaled(&mut rng);

    let (mut rag_gap, mut det_gap): (f64, f64) = (0.0, 0.0);
    for d in dialogs.iter().take(8) {
        let ctx = &d.context;
        let ctx_tokens = input.context_tokens(ctx);
        // Brute-force posteriors over every snippet.
        let c = encode(&enc.context, &ctx_tokens);
        let sims: Vec<f64> = kb
            .snippets()
            .iter()
            .map(|s| c.0.iter().zip(&encode(&enc.snippet, &input.snippet_tokens(s)).0).map(|(a, b)| a * b).sum())
            .collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = sims.iter().map(|s| (s - max).exp()).sum();
        let soft: Vec<f64> = sims.iter().map(|s| (s - max).exp() / z).collect();
        let probs: Vec<f64> = kb.snippets().iter().map(|s| sigmoid(flat.logit(&ctx_tokens, &input.snippet_tokens(s)))).collect();
        let total: f64 = probs.iter().sum();
        let prop: Vec<f64> = probs.iter().map(|p| p / total).collect();

        let response = g.response_ids(d.gold_response.as_deref().unwrap());
        let exact: f64 = kb
            .snippets()
            .iter()
            .zip(&soft)
            .map(|(s, w)| w * g.sequence_logprob(ctx, s, &response).exp())
            .sum::<f64>()
            .ln();
        let ranked = dense.select(&kb, ctx).unwrap();
        let posterior = renormalize_topn(&ranked, k, Calibration::for_scores(ranked.score_kind)).unwrap();
        let lib = rag_sequence_logprob(&g, &posterior, &kb, ctx, &response).unwrap();
        rag_gap = rag_gap.max((lib - exact).abs());

        let pair: Vec<f64> = kb.snippets().iter().map(|s| jm.pair_probability(&ctx_tokens, &input.snippet_tokens(s))).collect();
        for (sel, weights) in [(&dense as &dyn Selector, &soft), (&flat as &dyn Selector, &prop)] {
            let exact: f64 = weights.iter().zip(&pair).map(|(w, p)| w * p).sum();
            let lib = detect_rad(&jm, sel, &kb, ctx, k, 0.5).unwrap().probability;
            det_gap = det_gap.max((lib - exact).abs());
        }
    }
    (rag_gap, det_gap)
}

/// Model calls per query of each selector on the 4 × 16 × 16 synthetic kb:
/// `(flat, three-stage, two-stage, dense)`.
pub fn synthetic_call_counts() -> (usize, usize, usize, usize) {
    use dialknow::checkpoint::DualEncoder;
    use dialknow::encoder::SimilarityKind;
    use dialknow::selection::{CascadeModels, DenseRetriever, RelevanceModel};

    let (kb, _) = make_toy(&ToyConfig { entities_per_domain: 16, docs_per_entity: 16, dialogs: 0, ..Default::default() }).unwrap();
    assert_eq!(kb.len(), 1024);
    let shape = EncoderShape { bucket_count: 512, embed_dim: 8 };
    let input = InputConfig::default();
    let m = |s| RelevanceModel::new(shape, input, s);
    let ctx = small_context();
    let flat = m(1).select(&kb, &ctx).unwrap().model_calls;
    let three = CascadeModels::ThreeStage { domain: m(2), entity: m(3), document: m(4) };
    let two = CascadeModels::TwoStage { domain_entity: m(5), document: m(6) };
    let enc = DualEncoder { context: shape.init(7), snippet: shape.init(8) };
    let dense = DenseRetriever::new(&enc, &kb, input, SimilarityKind::Dot, 10);
    (
        flat,
        three.select(&kb, &ctx).unwrap().model_calls,
        two.select(&kb, &ctx).unwrap().model_calls,
        dense.select(&kb, &ctx).unwrap().model_calls,
    )
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

/// Exact field-level ingest of the bundled fixture plus a serialize →
/// reload round trip. Returns a description of the first mismatch.
pub fn fixture_ingest_check() -> Result<(), String> {
    use dialknow::corpus::{dialogs_to_json, load_dialogs, load_knowledge, SnippetId};

    let kb = load_knowledge(&fixture("knowledge.json")).map_err(|e| e.to_string())?;
    let s = kb.summary();
    if (s.domains, s.entities, s.snippets) != (4, 5, 10) {
        return Err(format!("summary {s:?}"));
    }
    let cafe = kb.get(&SnippetId::new("hotel", "12", "0")).ok_or("hotel/12/0 missing")?;
    if cafe.entity_name.as_deref() != Some("Café Jello Gallery")
        || cafe.question != "Can I bring my dog?"
        || cafe.answer != "Pets are welcome for a small fee."
    {
        return Err(format!("hotel/12/0 = {cafe:?}"));
    }
    let taxi = kb.get(&SnippetId::new("taxi", "*", "1")).ok_or("taxi/*/1 missing")?;
    if taxi.entity_name.as_deref() != Some("taxi") || !taxi.id.is_domain_level() {
        return Err(format!("taxi/*/1 = {taxi:?}"));
    }
    if kb.get(&SnippetId::new("restaurant", "7", "3")).is_none() || kb.get(&SnippetId::new("restaurant", "7", "1")).is_some() {
        return Err("restaurant/7 doc ids not kept verbatim".into());
    }
    let reloaded = load_knowledge(&serde_json::to_vec(&kb.to_json()).unwrap()).map_err(|e| e.to_string())?;
    if reloaded != kb {
        return Err("knowledge round trip differs".into());
    }

    let dialogs = load_dialogs(&fixture("logs.json"), &fixture("labels.json")).map_err(|e| e.to_string())?;
    let targets: Vec<bool> = dialogs.iter().map(|d| d.target).collect();
    if targets != [true, false, true, true] {
        return Err(format!("targets {targets:?}"));
    }
    if dialogs[0].gold_snippets != [SnippetId::new("hotel", "1", "2")]
        || dialogs[2].gold_snippets != [SnippetId::new("taxi", "*", "0")]
        || dialogs[0].source.as_deref() != Some("sf_written")
        || dialogs[2].source.as_deref() != Some("sf_spoken")
        || dialogs[1].gold_response.is_some()
        || dialogs[3].gold_response.as_deref() != Some("Dogs are welcome for a small fee.")
    {
        return Err("dialog labels differ from the fixture".into());
    }
    for d in &dialogs {
        if d.gold_snippets.iter().any(|g| kb.get(g).is_none()) {
            return Err("a gold snippet is missing from the knowledge base".into());
        }
    }
    let (logs, labels) = dialogs_to_json(&dialogs);
    let again = load_dialogs(&serde_json::to_vec(&logs).unwrap(), &serde_json::to_vec(&labels).unwrap()).map_err(|e| e.to_string())?;
    if again != dialogs {
        return Err("dialog round trip differs".into());
    }
    Ok(())
}

pub const DSTC9_TRAIN_SNIPPETS: usize = 2900;
pub const DSTC9_TEST_SNIPPETS: usize = 12039;

/// Snippet counts of the published knowledge files named by
/// `DSTC9_KNOWLEDGE_TRAIN` / `DSTC9_KNOWLEDGE_TEST`; `None` when unset.
pub fn dstc9_counts() -> Vec<(&'static str, usize, Option<usize>)> {
    [("DSTC9_KNOWLEDGE_TRAIN", DSTC9_TRAIN_SNIPPETS), ("DSTC9_KNOWLEDGE_TEST", DSTC9_TEST_SNIPPETS)]
        .into_iter()
        .map(|(var, expected)| {
            let got = std::env::var_os(var).map(|path| {
                let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{var}: {e}"));
                dialknow::corpus::load_knowledge(&bytes).unwrap().len()
            });
            (var, expected, got)
        })
        .collect()
}

/// Trains every model family briefly and evaluates in both modes, returning
/// each artifact's bytes.
pub fn determinism_artifacts() -> Vec<(String, Vec<u8>)> {
    use dialknow::checkpoint::Checkpointable;
    use dialknow::detection::{train_detector, train_joint_detector};
    use dialknow::evaluation::{evaluate_pipeline, EvalMode, KnowledgeResponder, PipelineConfig, ThresholdDetector};
    use dialknow::generation::{train_generator, train_rag_joint, Conditioning, DecodeConfig, DecodeStrategy};
    use dialknow::metric_learning::{detection_task, hierarchy_tasks, train_dkr, train_relevance, train_shared_trunk, DkrLoss};
    use dialknow::selection::{build_index, train_cascade, CascadeVariant, DenseRetriever};

    let (kb, dialogs) = make_toy(&ToyConfig { non_seeking_fraction: 0.2, dialogs: 60, seed: 5, ..Default::default() }).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.5,
        steps: 60,
        batch_size: 4,
        seed: 9,
        encoder: EncoderShape { bucket_count: 512, embed_dim: 16 },
        ..Default::default()
    };
    let mut out: Vec<(String, Vec<u8>)> = Vec::new();
    let mut push = |name: &str, bytes: Vec<u8>| out.push((name.to_string(), bytes));

    let seeking: Vec<LabeledDialog> = dialogs.iter().filter(|d| d.target).cloned().collect();
    let (dkr, t) = train_dkr(&seeking, &kb, DkrLoss::Nll, &cfg).unwrap();
    push("dkr.ckpt", dkr.to_checkpoint().to_bytes());
    push("dkr.loss.csv", t.to_csv().into_bytes());
    let (triplet, _) = train_dkr(&seeking, &kb, DkrLoss::Triplet(TripletConfig::default()), &cfg).unwrap();
    push("dkr-triplet.ckpt", triplet.to_checkpoint().to_bytes());
    let (flat, _) = train_relevance(&dialogs, &kb, &cfg).unwrap();
    push("flat.ckpt", flat.to_checkpoint().to_bytes());
    for variant in [CascadeVariant::ThreeStage, CascadeVariant::TwoStage] {
        let (c, _) = train_cascade(&dialogs, &kb, variant, &cfg).unwrap();
        push(&format!("cascade-{variant:?}.ckpt"), c.to_checkpoint().to_bytes());
    }
    let (det, _) = train_detector(&dialogs, &cfg).unwrap();
    push("detector.ckpt", det.to_checkpoint().to_bytes());
    let (jd, _) = train_joint_detector(&dialogs, &kb, &cfg).unwrap();
    push("joint-detector.ckpt", jd.to_checkpoint().to_bytes());
    let mut tasks = hierarchy_tasks(&dialogs, &kb, &cfg.input, 2, 9).unwrap();
    tasks.push(detection_task(&dialogs, &cfg.input));
    let (mt, _) = train_shared_trunk(&tasks, &cfg).unwrap();
    push("multitask.ckpt", mt.to_checkpoint().to_bytes());
    let (g, _) = train_generator(&dialogs, &kb, Conditioning::Gold, 200, &cfg).unwrap();
    push("generator.ckpt", g.to_checkpoint().to_bytes());
    let index = build_index(&dkr.snippet, &kb, cfg.input, dialknow::encoder::SimilarityKind::Dot);
    let joint = train_rag_joint(g.clone(), dkr.context.clone(), &index, &dialogs, &kb, 3, &TrainConfig { steps: 10, ..cfg }).unwrap();
    push("rag-joint.generator.ckpt", joint.generator.to_checkpoint().to_bytes());
    push("rag-joint.context.ckpt", joint.context_encoder.to_checkpoint().to_bytes());

    let detector = ThresholdDetector { model: det, threshold: 0.5 };
    let selector = DenseRetriever::new(&dkr, &kb, cfg.input, dialknow::encoder::SimilarityKind::Dot, 5);
    for strategy in [DecodeStrategy::Beam, DecodeStrategy::Nucleus] {
        let responder = KnowledgeResponder { model: g.clone(), decode: DecodeConfig { strategy, max_length: 12, seed: 3, ..Default::default() }, n: 3 };
        for mode in [EvalMode::GroundTruth, EvalMode::Cascaded] {
            let (report, outputs) =
                evaluate_pipeline(&detector, &selector, &responder, &kb, &dialogs, &PipelineConfig { mode, ..Default::default() }).unwrap();
            let tag = format!("{strategy:?}-{}", mode.name());
            push(&format!("report-{tag}.json"), report.to_json().unwrap().into_bytes());
            push(&format!("report-{tag}.tsv"), report.to_tsv().into_bytes());
            let lines: Vec<String> = outputs
                .detection_lines()
                .into_iter()
                .chain(outputs.selection_lines())
                .chain(outputs.response_lines())
                .map(|v| v.to_string())
                .collect();
            push(&format!("outputs-{tag}.jsonl"), lines.join("\n").into_bytes());
        }
    }
    out
}
