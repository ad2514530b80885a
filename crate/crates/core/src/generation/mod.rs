//! Response generation: a small conditional language model, three decoding
//! strategies and retrieval-augmented marginalization over top-n snippets.

pub mod decode;
pub mod model;
pub mod rag;
pub mod train;

pub use decode::{decode, decode_with, nucleus_set, DecodeConfig, DecodeStrategy};
pub use model::{
    apply_repetition_penalty, next_token_dist, softmax, GeneratorGrads, GeneratorModel, Vocabulary, BOS,
    DEFAULT_MAX_VOCAB, EOS, UNK,
};
pub use rag::{
    rag_decode, rag_next_token_dist, rag_sequence_logprob, renormalize_topn, response_json_line, Calibration,
    RagPosterior, DEFAULT_TOP_N,
};
pub use train::{top_n_with_gold, train_generator, train_rag_joint, Conditioning, RagJointOutput};
