//! Losses, negative sampling and the training loops for dense retrieval,
//! relevance classifiers and the shared-trunk multi-task model.

pub mod losses;
pub mod multitask;
pub mod sampling;
pub mod train;

pub use losses::{binary_ce_loss, nll_loss, softmax_nll, triplet_loss, NllGrads, TripletConfig, TripletGrads};
pub use multitask::{
    detection_task, hierarchy_tasks, train_shared_trunk, HeadInput, SharedTrunkModel, TaskExample, TaskHead,
};
pub use sampling::{sample_negatives, sample_negatives_with, HardMining, NegativeSampling, SamplingStrategy};
pub use train::{pair_sgd_step, train_dkr, train_pairs, train_relevance, DkrLoss, LossTrace, PairExample, TrainConfig};
