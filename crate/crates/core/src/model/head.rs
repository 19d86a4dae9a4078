use super::encoder::{encode, EmbeddingVector, Tower};
use super::params::RelevanceModel;
use crate::corpus::SoftLabel;
use crate::error::{Error, Result};
use crate::retrieval::RqaFeature;

/// Cosine scale used to turn a twin-tower score into a probability.
pub const DEFAULT_SCALE: f64 = 8.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(s·c)`.
///
/// ```
/// use csrm::model::calibrate;
/// assert_eq!(calibrate(0.0, 8.0), 0.5);
/// assert!((calibrate(1.0, 8.0) - 0.999665).abs() < 1e-6);
/// ```
pub fn calibrate(cosine: f64, scale: f64) -> f64 {
    sigmoid(scale * cosine)
}

pub fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|z| (z - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// `[e_q ; e_p ; e_q ⊙ e_p ; |e_q − e_p|]`
pub fn joint_features(eq: &[f64], ep: &[f64]) -> Vec<f64> {
    let d = eq.len();
    let mut x = Vec::with_capacity(4 * d);
    x.extend_from_slice(eq);
    x.extend_from_slice(ep);
    x.extend(eq.iter().zip(ep).map(|(a, b)| a * b));
    x.extend(eq.iter().zip(ep).map(|(a, b)| (a - b).abs()));
    x
}

/// Head logits in `(exact, substitute, irrelevant)` order.
pub fn head_logits(model: &RelevanceModel, eq: &[f64], ep: &[f64]) -> [f64; 3] {
    let x = joint_features(eq, ep);
    let z = model.head.left_mul(&x);
    let b = model.head_bias.row(0);
    [z[0] + b[0], z[1] + b[1], z[2] + b[2]]
}

pub fn relevance_from_embeddings(
    model: &RelevanceModel,
    eq: &EmbeddingVector,
    ep: &EmbeddingVector,
) -> Result<SoftLabel> {
    let d = model.towers.d_out();
    if eq.dim() != d || ep.dim() != d {
        return Err(Error::validation(format!(
            "embedding dims ({}, {}) do not match model d_out {d}",
            eq.dim(),
            ep.dim()
        )));
    }
    let p = softmax3(head_logits(model, eq.as_slice(), ep.as_slice()));
    SoftLabel::new(p[0], p[1], p[2])
}

pub fn predict_relevance(
    model: &RelevanceModel,
    query_text: &str,
    rqa: Option<&RqaFeature>,
    product_text: &str,
) -> Result<SoftLabel> {
    model.validate()?;
    let eq = encode(&model.towers, Tower::Query, query_text, rqa)?;
    let ep = encode(&model.towers, Tower::Product, product_text, None)?;
    relevance_from_embeddings(model, &eq, &ep)
}
