//! Training loops: multi-task sampling, embedding distillation, relevance
//! training with translation alignment, self-distillation and binary
//! online-student distillation.

mod config;
mod data;
mod ebr;
mod online;
mod optim;
mod relevance;
mod sampler;
mod self_distill;
mod trainer;

pub use config::TrainConfig;
pub use data::{
    eval_pairs, predict_pairs, product_ids, query_ids, relevance_examples, relevance_f1,
    translation_examples, EvalPair, RqaMap, SoftLabelMap,
};
pub use ebr::{cvr_examples, ebr_top_k, recall_at_k, recall_set, train_ebr_distill, RecallSet};
pub use online::{
    distill_online, online_candidates, student_scores, Candidates, OnlineInputs, OnlineOutcome,
    StudentResult, StudentSummary, DEFAULT_M, DEFAULT_N,
};
pub use optim::AdamW;
pub use relevance::{train_relevance, translation_alignment_step, RelevanceData};
pub use sampler::MultitaskSampler;
pub use self_distill::{
    label_pairs, self_distill, RoundLogEntry, RoundResult, SelfDistillInputs, SelfDistillOutcome,
};
pub use trainer::{train_loop, EvalPoint, LossPoint, Task, TrainOutcome};
