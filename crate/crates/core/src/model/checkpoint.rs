use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{ParamSet, RelevanceModel, TowerParams};
use super::tensor::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CSRMCKPT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Towers plus the three-class head.
    Relevance,
    /// Twin towers only (retrieval encoder or binary student).
    Towers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// JSON header of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_out: usize,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub dev_metric: f64,
    pub dev_metric_name: String,
    pub round: usize,
    pub step: usize,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Relevance(RelevanceModel),
    Towers(TowerParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Relevance(_) => ModelKind::Relevance,
            ModelParams::Towers(_) => ModelKind::Towers,
        }
    }

    pub fn towers(&self) -> &TowerParams {
        match self {
            ModelParams::Relevance(m) => &m.towers,
            ModelParams::Towers(t) => t,
        }
    }

    fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            ModelParams::Relevance(m) => m.tensors(),
            ModelParams::Towers(t) => t.tensors(),
        }
    }
}

/// Parameters plus the metadata needed to reproduce and compare them.
///
/// Values are stored as little-endian `f32`; callers that need the stored
/// dev metric to be exactly recomputable should evaluate a model whose
/// parameters were passed through [`ParamSet::round_to_f32`].
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

/// Hex SHA-256 of the canonical (key-sorted, compact) JSON encoding.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("json values always serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

impl Checkpoint {
    pub fn new(
        params: ModelParams,
        config: serde_json::Value,
        dev_metric_name: &str,
        dev_metric: f64,
        round: usize,
        step: usize,
    ) -> Self {
        let t = params.towers();
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            kind: params.kind(),
            vocab_size: t.vocab_size(),
            d_emb: t.d_emb(),
            d_out: t.d_out(),
            config_hash: config_hash(&config),
            config,
            dev_metric,
            dev_metric_name: dev_metric_name.to_string(),
            round,
            step,
            tensors: params
                .tensors()
                .iter()
                .map(|(name, m)| TensorInfo {
                    name: name.to_string(),
                    rows: m.rows,
                    cols: m.cols,
                })
                .collect(),
        };
        Checkpoint { meta, params }
    }

    pub fn relevance(&self) -> Result<&RelevanceModel> {
        match &self.params {
            ModelParams::Relevance(m) => Ok(m),
            ModelParams::Towers(_) => Err(Error::Checkpoint(
                "expected a relevance model, found towers".into(),
            )),
        }
    }

    pub fn towers(&self) -> &TowerParams {
        self.params.towers()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.meta.tensors.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, m) in self.params.tensors() {
            for v in &m.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let meta: CheckpointMeta = serde_json::from_slice(body)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                meta.format_version
            )));
        }
        let mut data = &bytes[12 + hlen..];
        let mut read =
            |info: &TensorInfo, name: &str, rows: usize, cols: usize| -> Result<Matrix> {
                if info.name != name || info.rows != rows || info.cols != cols {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} is {}×{}, expected {name} {rows}×{cols}",
                        info.name, info.rows, info.cols
                    )));
                }
                let n = rows * cols * 4;
                if data.len() < n {
                    return Err(Error::Checkpoint(format!("tensor {name} truncated")));
                }
                let values = data[..n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect();
                data = &data[n..];
                Ok(Matrix::from_vec(rows, cols, values))
            };
        let (v, e, o) = (meta.vocab_size, meta.d_emb, meta.d_out);
        let expected: Vec<(&str, usize, usize)> = match meta.kind {
            ModelKind::Towers => vec![
                ("embedding", v, e),
                ("query_proj", e, o),
                ("product_proj", e, o),
            ],
            ModelKind::Relevance => vec![
                ("embedding", v, e),
                ("query_proj", e, o),
                ("product_proj", e, o),
                ("head", 4 * o, 3),
                ("head_bias", 1, 3),
            ],
        };
        if meta.tensors.len() != expected.len() {
            return Err(bad("tensor list does not match model kind"));
        }
        let mut mats = Vec::new();
        for (info, (name, r, c)) in meta.tensors.iter().zip(&expected) {
            mats.push(read(info, name, *r, *c)?);
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let mut it = mats.into_iter();
        let towers = TowerParams {
            embedding: it.next().expect("checked length"),
            query_proj: it.next().expect("checked length"),
            product_proj: it.next().expect("checked length"),
        };
        let params = match meta.kind {
            ModelKind::Towers => ModelParams::Towers(towers),
            ModelKind::Relevance => ModelParams::Relevance(RelevanceModel {
                towers,
                head: it.next().expect("checked length"),
                head_bias: it.next().expect("checked length"),
            }),
        };
        let finite = match &params {
            ModelParams::Relevance(m) => m.is_finite(),
            ModelParams::Towers(t) => t.is_finite(),
        };
        if !finite {
            return Err(bad("checkpoint contains non-finite parameters"));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
