//! Ranking, classification and text-overlap metrics, end-to-end pipeline
//! evaluation and the latency benchmark.

pub mod bench;
pub mod metrics;
pub mod pipeline;

pub use bench::{benchmark_latency, LatencyReport};
pub use metrics::{bleu1, lcs_len, mrr_at_k, precision_recall_f1, recall_at_k, rouge_l, rouge_l_with_beta, Prf, DEFAULT_ROUGE_BETA};
pub use pipeline::{
    evaluate_pipeline, Detector, DetectionReport, EvalMode, GeneratedResponse, GenerationMetrics, GenerationReport,
    KnowledgeResponder, PipelineConfig, PipelineOutputs, PipelineReport, ResponseGenerator, SelectionMetrics,
    SelectionReport, ThresholdDetector,
};
