use serde::{Deserialize, Serialize};

use super::params::TowerParams;
use super::tensor::{dot, norm};
use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::retrieval::RqaFeature;

/// Which side of the twin-tower model a text goes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tower {
    Query,
    Product,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// FNV-1a of the token bytes, reduced modulo the vocabulary size.
pub fn hash_token(token: &str, vocab_size: usize) -> usize {
    (fnv1a64(token.as_bytes()) % vocab_size as u64) as usize
}

/// Hashed token stream for one encoder input.
///
/// On the query tower the RQA titles are appended after the query tokens;
/// the product tower ignores `rqa`.
pub fn token_ids(
    tower: Tower,
    text: &str,
    rqa: Option<&RqaFeature>,
    vocab_size: usize,
) -> Vec<usize> {
    let mut ids: Vec<usize> = tokenize(text)
        .iter()
        .map(|t| hash_token(t, vocab_size))
        .collect();
    if tower == Tower::Query {
        if let Some(feature) = rqa {
            for title in &feature.retrieved_titles {
                ids.extend(tokenize(title).iter().map(|t| hash_token(t, vocab_size)));
            }
        }
    }
    ids
}

/// Unit-norm output of a tower.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `v`; fails on a zero or non-finite vector.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        let n = norm(&v);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::NonFinite(format!(
                "cannot normalize vector with norm {n}"
            )));
        }
        Ok(EmbeddingVector(v.into_iter().map(|x| x / n).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncodeTrace {
    pub tower: Tower,
    pub ids: Vec<usize>,
    pub mean: Vec<f64>,
    pub z_norm: f64,
    pub output: Vec<f64>,
}

pub fn encode(
    params: &TowerParams,
    tower: Tower,
    text: &str,
    rqa: Option<&RqaFeature>,
) -> Result<EmbeddingVector> {
    let ids = token_ids(tower, text, rqa, params.vocab_size());
    let trace = encode_ids(params, tower, &ids)?;
    Ok(EmbeddingVector(trace.output))
}

pub fn encode_ids(params: &TowerParams, tower: Tower, ids: &[usize]) -> Result<EncodeTrace> {
    if ids.is_empty() {
        return Err(Error::validation("cannot encode an empty token stream"));
    }
    let d = params.d_emb();
    let mut mean = vec![0.0; d];
    for &id in ids {
        for (m, v) in mean.iter_mut().zip(params.embedding.row(id)) {
            *m += v;
        }
    }
    let inv = 1.0 / ids.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let proj = match tower {
        Tower::Query => &params.query_proj,
        Tower::Product => &params.product_proj,
    };
    let z = proj.left_mul(&mean);
    let z_norm = norm(&z);
    if !(z_norm.is_finite() && z_norm > 0.0) {
        return Err(Error::NonFinite(format!(
            "projected embedding has norm {z_norm}"
        )));
    }
    let output = z.iter().map(|v| v / z_norm).collect();
    Ok(EncodeTrace {
        tower,
        ids: ids.to_vec(),
        mean,
        z_norm,
        output,
    })
}

/// Accumulates into `grads` the gradient of a loss whose gradient with
/// respect to the encoder output is `g_out`.
pub fn backward(params: &TowerParams, trace: &EncodeTrace, g_out: &[f64], grads: &mut TowerParams) {
    let e = &trace.output;
    let eg = dot(e, g_out);
    let g_z: Vec<f64> = e
        .iter()
        .zip(g_out)
        .map(|(ei, gi)| (gi - ei * eg) / trace.z_norm)
        .collect();
    let (proj, g_proj) = match trace.tower {
        Tower::Query => (&params.query_proj, &mut grads.query_proj),
        Tower::Product => (&params.product_proj, &mut grads.product_proj),
    };
    g_proj.add_outer(&trace.mean, &g_z);
    let g_mean = proj.right_mul(&g_z);
    let inv = 1.0 / trace.ids.len() as f64;
    for &id in &trace.ids {
        for (g, gm) in grads.embedding.row_mut(id).iter_mut().zip(&g_mean) {
            *g += gm * inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{ModelConfig, ParamSet};
    use crate::model::tensor::Matrix;

    fn toy() -> TowerParams {
        TowerParams {
            embedding: Matrix::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0, -1.0, 3.0]),
            query_proj: Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 2.0]),
            product_proj: Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 1.0]),
        }
    }

    #[test]
    fn fnv1a_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(
            hash_token("", usize::MAX),
            (0xcbf29ce484222325u64 % usize::MAX as u64) as usize
        );
        assert_eq!(
            hash_token("a", usize::MAX),
            (0xaf63dc4c8601ec8cu64 % usize::MAX as u64) as usize
        );
        assert!(hash_token("nike", 4096) < 4096);
    }

    #[test]
    fn two_token_toy_matches_hand_computation() {
        let p = toy();
        // rows 0 and 1: mean (0.5, 0.5); query proj gives (0.5, 1.5); normalized / sqrt(2.5)
        let t = encode_ids(&p, Tower::Query, &[0, 1]).unwrap();
        let n = 2.5f64.sqrt();
        assert!((t.output[0] - 0.5 / n).abs() < 1e-12);
        assert!((t.output[1] - 1.5 / n).abs() < 1e-12);
        // product proj gives (1.0, 0.5)
        let t = encode_ids(&p, Tower::Product, &[0, 1]).unwrap();
        let n = 1.25f64.sqrt();
        assert!((t.output[0] - 1.0 / n).abs() < 1e-12);
        assert!((t.output[1] - 0.5 / n).abs() < 1e-12);
    }

    #[test]
    fn empty_stream_rejected() {
        let p = toy();
        assert!(matches!(
            encode(&p, Tower::Query, "", None),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            encode(&p, Tower::Query, " ,. ", None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rqa_only_query_is_encodable() {
        let p = TowerParams::init(&ModelConfig::default(), 1).unwrap();
        let f = RqaFeature::new(
            "q",
            vec!["red shoe".into()],
            crate::retrieval::RetrieverTag::Bm25,
        );
        let e = encode(&p, Tower::Query, "", Some(&f)).unwrap();
        assert!((norm(e.as_slice()) - 1.0).abs() < 1e-9);
        assert!(encode(&p, Tower::Product, "", Some(&f)).is_err());
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let p = TowerParams::init(&ModelConfig::default(), 3).unwrap();
        let a = encode(&p, Tower::Query, "Nike Sneakers", None).unwrap();
        let b = encode(&p, Tower::Query, "Nike Sneakers", None).unwrap();
        assert_eq!(a, b);
        assert!((norm(a.as_slice()) - 1.0).abs() < 1e-6);
        assert_eq!(p.num_params(), 4096 * 32 + 2 * 32 * 32);
    }
}
