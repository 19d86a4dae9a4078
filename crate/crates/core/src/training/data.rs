use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{
    Corpus, LabeledPair, Product, Query, RelevanceLabel, SoftLabel, TranslationPair,
};
use crate::error::{Error, Result};
use crate::model::{
    blended_target, encode_ids, head_logits, softmax3, token_ids, RelevanceExample, RelevanceModel,
    Tower,
};
use crate::retrieval::RqaFeature;

/// RQA features keyed by query id.
pub type RqaMap = BTreeMap<String, RqaFeature>;

/// Soft labels keyed by pair id (`query::product`).
pub type SoftLabelMap = BTreeMap<String, SoftLabel>;

/// A labeled pair with its token streams, ready for batch inference.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPair {
    pub pair_id: String,
    pub query: Vec<usize>,
    pub product: Vec<usize>,
    pub label: RelevanceLabel,
}

pub fn query_ids(query: &Query, rqa: Option<&RqaMap>, vocab_size: usize) -> Vec<usize> {
    let feature = rqa.and_then(|m| m.get(&query.id));
    token_ids(Tower::Query, &query.text, feature, vocab_size)
}

pub fn product_ids(product: &Product, vocab_size: usize) -> Vec<usize> {
    token_ids(Tower::Product, &product.relevance_text(), None, vocab_size)
}

fn resolve<'c>(corpus: &'c Corpus, pair: &LabeledPair) -> Result<(&'c Query, &'c Product)> {
    let q = corpus
        .query(&pair.query)
        .ok_or_else(|| Error::validation(format!("unknown query {}", pair.query)))?;
    let p = corpus
        .product(&pair.product)
        .ok_or_else(|| Error::validation(format!("unknown product {}", pair.product)))?;
    Ok((q, p))
}

/// Training examples; with `soft` present every pair must have a soft label
/// and the target is `α·one_hot(label) + (1−α)·soft`.
pub fn relevance_examples(
    corpus: &Corpus,
    pairs: &[LabeledPair],
    rqa: Option<&RqaMap>,
    soft: Option<&SoftLabelMap>,
    alpha: f64,
    vocab_size: usize,
) -> Result<Vec<RelevanceExample>> {
    if let Some(soft) = soft {
        let missing: Vec<String> = pairs
            .iter()
            .map(LabeledPair::pair_id)
            .filter(|id| !soft.contains_key(id))
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(10).map(String::as_str).collect();
            return Err(Error::validation(format!(
                "soft labels missing for {} pair(s): {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > 10 { ", ..." } else { "" }
            )));
        }
    }
    pairs
        .iter()
        .map(|pair| {
            let (q, p) = resolve(corpus, pair)?;
            let s = soft.map(|m| &m[&pair.pair_id()]);
            Ok(RelevanceExample {
                query: query_ids(q, rqa, vocab_size),
                product: product_ids(p, vocab_size),
                target: blended_target(pair.label, s, alpha),
            })
        })
        .collect()
}

pub fn eval_pairs(
    corpus: &Corpus,
    pairs: &[LabeledPair],
    rqa: Option<&RqaMap>,
    vocab_size: usize,
) -> Result<Vec<EvalPair>> {
    pairs
        .iter()
        .map(|pair| {
            let (q, p) = resolve(corpus, pair)?;
            Ok(EvalPair {
                pair_id: pair.pair_id(),
                query: query_ids(q, rqa, vocab_size),
                product: product_ids(p, vocab_size),
                label: pair.label,
            })
        })
        .collect()
}

/// Token streams of translation pairs; pairs with an empty side are dropped.
pub fn translation_examples(
    pairs: &[TranslationPair],
    vocab_size: usize,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    pairs
        .iter()
        .map(|t| {
            (
                token_ids(Tower::Query, &t.source_text, None, vocab_size),
                token_ids(Tower::Query, &t.target_text, None, vocab_size),
            )
        })
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .collect()
}

/// Soft predictions for every pair, in input order.
pub fn predict_pairs(model: &RelevanceModel, pairs: &[EvalPair]) -> Result<Vec<SoftLabel>> {
    pairs
        .par_iter()
        .map(|p| {
            let eq = encode_ids(&model.towers, Tower::Query, &p.query)?;
            let ep = encode_ids(&model.towers, Tower::Product, &p.product)?;
            let s = softmax3(head_logits(model, &eq.output, &ep.output));
            SoftLabel::new(s[0], s[1], s[2])
        })
        .collect()
}

pub fn relevance_f1(model: &RelevanceModel, pairs: &[EvalPair]) -> Result<f64> {
    let preds: Vec<RelevanceLabel> = predict_pairs(model, pairs)?
        .iter()
        .map(SoftLabel::argmax)
        .collect();
    let labels: Vec<RelevanceLabel> = pairs.iter().map(|p| p.label).collect();
    crate::metrics::micro_f1(&preds, &labels)
}
