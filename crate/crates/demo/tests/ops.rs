use dialknow_demo::ops::{call_counts, text_scores, DkrDemo, MAX_SNIPPETS};

#[test]
fn explorer_counts_calls_on_the_synthetic_kb() {
    let c = call_counts(4, 16, 16).unwrap();
    assert_eq!((c.snippets, c.flat, c.three_stage, c.two_stage, c.dkr), (1024, 1024, 36, 80, 1));
    assert!((c.speedup - 1024.0 / 36.0).abs() < 1e-12);
}

#[test]
fn explorer_rejects_oversized_kbs() {
    assert!(call_counts(MAX_SNIPPETS, 2, 1).is_err());
    assert!(call_counts(0, 4, 4).is_err());
}

#[test]
fn text_scores_hand_example() {
    let s = text_scores("a b c d", "a c");
    assert_eq!((s.bleu1, s.lcs), (0.5, 2));
    // P = 0.5, R = 1, β = 1.2
    let b2 = 1.2f64 * 1.2;
    assert!((s.rouge_l - (1.0 + b2) * 0.5 / (1.0 + b2 * 0.5)).abs() < 1e-12);
    assert_eq!(text_scores("same words", "same words").bleu1, 1.0);
}

#[test]
fn trained_retriever_ranks_and_calibrates() {
    let demo = DkrDemo::train(1, 5000).unwrap();
    let r1 = demo.training_r1().unwrap();
    assert!(r1 >= 0.95, "training R@1 {r1}");
    let query = &demo.example_queries(3)[0];
    let r = demo.retrieve(query, 8, 5).unwrap();
    assert_eq!((r.hits.len(), r.model_calls), (8, 1));
    assert!(r.hits.windows(2).all(|w| w[0].score >= w[1].score));
    let mass: f64 = r.hits.iter().map(|h| h.posterior).sum();
    assert!((mass - 1.0).abs() < 1e-12);
    assert!(r.hits[5..].iter().all(|h| h.posterior == 0.0));
    assert!(demo.retrieve(query, 0, 5).is_err());
}
