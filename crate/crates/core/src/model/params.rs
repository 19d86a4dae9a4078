use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::error::{Error, Result};

/// Shapes and initialization of a twin-tower encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_out: usize,
    /// Standard deviation of the token-embedding initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 4096,
            d_emb: 32,
            d_out: 32,
            init_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_emb == 0 || self.d_out == 0 {
            return Err(Error::validation("model dims must be positive"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::validation("init_std must be positive"));
        }
        Ok(())
    }
}

/// Anything that exposes its parameters as a list of matrices.
///
/// Training, gradient checking and checkpointing all go through this view.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Rounds every parameter to the nearest `f32`, the on-disk precision.
    fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

impl ParamSet for Matrix {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![("matrix", self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![self]
    }
}

/// Shared token-embedding table plus one projection per tower.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerParams {
    /// `vocab_size × d_emb`
    pub embedding: Matrix,
    /// `d_emb × d_out`
    pub query_proj: Matrix,
    /// `d_emb × d_out`
    pub product_proj: Matrix,
}

impl TowerParams {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Normal::new(0.0, config.init_std).expect("positive std");
        let proj = Normal::new(0.0, 1.0 / (config.d_emb as f64).sqrt()).expect("positive std");
        let mut sample = |rows: usize, cols: usize, dist: &Normal<f64>| {
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| dist.sample(&mut rng)).collect(),
            )
        };
        let mut params = TowerParams {
            embedding: sample(config.vocab_size, config.d_emb, &emb),
            query_proj: sample(config.d_emb, config.d_out, &proj),
            product_proj: sample(config.d_emb, config.d_out, &proj),
        };
        params.round_to_f32();
        Ok(params)
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows
    }

    pub fn d_emb(&self) -> usize {
        self.embedding.cols
    }

    pub fn d_out(&self) -> usize {
        self.query_proj.cols
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_emb();
        let ok = self.vocab_size() > 0
            && d > 0
            && self.d_out() > 0
            && self.query_proj.rows == d
            && self.product_proj.rows == d
            && self.product_proj.cols == self.d_out();
        if !ok {
            return Err(Error::validation("inconsistent tower parameter shapes"));
        }
        if !self.is_finite() {
            return Err(Error::validation(
                "tower parameters contain non-finite values",
            ));
        }
        Ok(())
    }
}

impl ParamSet for TowerParams {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("embedding", &self.embedding),
            ("query_proj", &self.query_proj),
            ("product_proj", &self.product_proj),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.embedding,
            &mut self.query_proj,
            &mut self.product_proj,
        ]
    }
}

/// Twin towers plus a linear three-class head over the joint pair feature
/// `[e_q ; e_p ; e_q ⊙ e_p ; |e_q − e_p|]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceModel {
    pub towers: TowerParams,
    /// `4·d_out × 3`, columns ordered (exact, substitute, irrelevant).
    pub head: Matrix,
    /// `1 × 3`
    pub head_bias: Matrix,
}

impl RelevanceModel {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let towers = TowerParams::init(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        let fan_in = 4 * config.d_out;
        let dist = Normal::new(0.0, 0.1 / (fan_in as f64).sqrt()).expect("positive std");
        let head = Matrix::from_vec(
            fan_in,
            3,
            (0..fan_in * 3).map(|_| dist.sample(&mut rng)).collect(),
        );
        let mut model = RelevanceModel {
            towers,
            head,
            head_bias: Matrix::zeros(1, 3),
        };
        model.round_to_f32();
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.towers.validate()?;
        if self.head.rows != 4 * self.towers.d_out() || self.head.cols != 3 {
            return Err(Error::validation(format!(
                "head is {}×{}, expected {}×3",
                self.head.rows,
                self.head.cols,
                4 * self.towers.d_out()
            )));
        }
        if self.head_bias.rows != 1 || self.head_bias.cols != 3 {
            return Err(Error::validation("head bias must be 1×3"));
        }
        Ok(())
    }
}

impl ParamSet for RelevanceModel {
    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut t = self.towers.tensors();
        t.push(("head", &self.head));
        t.push(("head_bias", &self.head_bias));
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.towers.tensors_mut();
        t.push(&mut self.head);
        t.push(&mut self.head_bias);
        t
    }
}
