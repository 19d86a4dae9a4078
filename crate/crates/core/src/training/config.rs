use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DEFAULT_ALPHA, DEFAULT_SCALE};

/// Optimization settings shared by every training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_initial: f64,
    /// Learning rate reached at `max_steps` under linear decay.
    pub lr_final: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Weight of the hard-label term when soft labels are present.
    pub alpha: f64,
    /// Sampling weight of translation-alignment batches relative to relevance batches.
    pub mt_weight: f64,
    /// In-batch negatives per positive for embedding distillation.
    pub negatives: usize,
    pub sd_rounds: usize,
    pub eval_every: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Cosine scale `s` of `σ(s·cos)`.
    pub scale: f64,
    /// Compare CVR against the raw inner product instead of `σ(s·cos)`.
    pub raw_inner_product: bool,
    /// Start each self-distillation round from the previous round's parameters.
    pub continue_rounds: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 1e-2,
            lr_final: 0.0,
            batch_size: 32,
            max_steps: 2000,
            seed: 42,
            alpha: DEFAULT_ALPHA,
            mt_weight: 0.1,
            negatives: 4,
            sd_rounds: 2,
            eval_every: 200,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            scale: DEFAULT_SCALE,
            raw_inner_product: false,
            continue_rounds: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.mt_weight >= 0.0 && self.mt_weight.is_finite()) {
            return fail(format!("mt_weight {} must be >= 0", self.mt_weight));
        }
        if self.negatives == 0 {
            return fail("negatives must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be >= 1".into());
        }
        if !(self.lr_initial > 0.0) || !(self.lr_final >= 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("invalid optimizer moments".into());
        }
        if !(self.weight_decay >= 0.0) || !(self.scale > 0.0) {
            return fail("weight_decay must be >= 0 and scale > 0".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if self.max_steps == 0 {
            return self.lr_initial;
        }
        let t = step as f64 / self.max_steps as f64;
        self.lr_initial + (self.lr_final - self.lr_initial) * t
    }
}
