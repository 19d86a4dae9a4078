//! Twin-tower encoder, three-class relevance head, loss functions and their
//! analytic gradients.

mod checkpoint;
mod encoder;
mod head;
mod loss;
mod objective;
mod params;
mod tensor;

pub use checkpoint::{
    config_hash, Checkpoint, CheckpointMeta, ModelKind, ModelParams, TensorInfo, CHECKPOINT_VERSION,
};
pub use encoder::{
    backward, encode, encode_ids, fnv1a64, hash_token, token_ids, EmbeddingVector, EncodeTrace,
    Tower,
};
pub use head::{
    calibrate, head_logits, joint_features, predict_relevance, relevance_from_embeddings, sigmoid,
    softmax3, DEFAULT_SCALE,
};
pub use loss::{
    binary_kd_loss, blended_loss, blended_target, contrastive_distill_loss, mse_distill_loss,
    soft_ce, DEFAULT_ALPHA, LOG_EPS,
};
pub use objective::{
    check_grad, grad, loss, AlignmentObjective, BinaryKdObjective, CvrExample, EbrDistillObjective,
    KdExample, Objective, RelevanceExample, RelevanceObjective, GRAD_CHECK_FLOOR,
};
pub use params::{ModelConfig, ParamSet, RelevanceModel, TowerParams};
pub use tensor::{dot, norm, Matrix};
