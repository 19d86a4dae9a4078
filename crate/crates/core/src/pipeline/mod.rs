//! End-to-end orchestration: configuration, splits, stage computations,
//! run directories with manifests, and the ablation harness.

mod ablation;
mod commands;
mod config;
mod data;
mod run;
mod stages;

pub use ablation::{
    round_row_name, run_ablation, AblationReport, AblationRow, EbrSummary, OnlineSummary,
    RqaAccuracy, REPORT_FORMAT_VERSION,
};
pub use commands::{
    ablation_stage, distill_online_stage, eval_stage, gen, index, label_stage, load_students,
    rqa_stage, self_distill_stage, serving_state, train_ebr_stage, train_stage, BestRound,
    CheckpointContext, Context, EbrMetrics, Selection, METRIC_DEFECT_ACCURACY, METRIC_EM_ACCURACY,
    METRIC_MICRO_F1, METRIC_RECALL_AT_10,
};
pub use config::{
    OnlineConfig, OnlineTeacher, PipelineConfig, RetrievalConfig, ServingConfig, SplitConfig,
    StageToggles, TeacherConfig, TeacherKind,
};
pub use data::{
    ambiguous_pairs, make_splits, pairs_of, queries_of, QuerySplit, Split, Splits, StageData,
    SPLITS_FORMAT_VERSION,
};
pub use run::{
    checkpoint_in, metrics_in, read_json, sha256_file, soft_labels_in, write_json, ArtifactDigest,
    RunDir, RunManifest, Stage, MANIFEST_VERSION,
};
pub use stages::*;
