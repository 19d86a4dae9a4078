use std::collections::BTreeSet;

use rayon::prelude::*;

use super::config::TrainConfig;
use super::trainer::{train_loop, Task, TrainOutcome};
use crate::corpus::{true_label, Corpus, Product, Query, RelevanceLabel};
use crate::error::{Error, Result};
use crate::model::{encode_ids, token_ids, CvrExample, EbrDistillObjective, Tower, TowerParams};
use crate::retrieval::{EmbeddingIndex, PseudoPair};
use crate::teacher::{batch_cvr, LabelCache, PairRequest, TeacherScorer};

/// Held-out queries with the set of exact-match products in a candidate pool.
pub struct RecallSet {
    pub queries: Vec<(Vec<usize>, BTreeSet<String>)>,
    pub products: Vec<Product>,
}

/// Queries without any exact match in `products` are left out.
pub fn recall_set(queries: &[&Query], products: &[Product], vocab_size: usize) -> RecallSet {
    let queries = queries
        .iter()
        .filter_map(|q| {
            let exact: BTreeSet<String> = products
                .iter()
                .filter(|p| true_label(q, p) == RelevanceLabel::Exact)
                .map(|p| p.id.clone())
                .collect();
            let ids = token_ids(Tower::Query, &q.text, None, vocab_size);
            (!exact.is_empty() && !ids.is_empty()).then_some((ids, exact))
        })
        .collect();
    RecallSet {
        queries,
        products: products.to_vec(),
    }
}

/// Mean over queries of `|top-k ∩ exact| / min(|exact|, k)`.
pub fn recall_at_k(towers: &TowerParams, set: &RecallSet, k: usize) -> Result<f64> {
    if set.queries.is_empty() {
        return Err(Error::validation("recall over zero queries"));
    }
    let index = crate::retrieval::build_embedding_index(towers, &set.products)?;
    let per_query: Vec<f64> = set
        .queries
        .par_iter()
        .map(|(ids, exact)| {
            let e = encode_ids(towers, Tower::Query, ids)?;
            let hits = index.search(&e.output, k)?;
            let found = hits.iter().filter(|(id, _)| exact.contains(id)).count();
            Ok(found as f64 / exact.len().min(k) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// Attaches teacher CVR to every pseudo pair.
pub fn cvr_examples(
    corpus: &Corpus,
    pairs: &[PseudoPair],
    teacher: &dyn TeacherScorer,
    cache: &mut LabelCache,
    vocab_size: usize,
) -> Result<Vec<CvrExample>> {
    if !teacher.capabilities().cvr {
        return Err(Error::Capability(format!(
            "teacher {} cannot estimate cvr; embedding distillation needs it",
            teacher.identity()
        )));
    }
    let mut reqs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let query = corpus
            .query(&p.query_id)
            .ok_or_else(|| Error::validation(format!("unknown query {}", p.query_id)))?;
        let product = corpus
            .product(&p.product_id)
            .ok_or_else(|| Error::validation(format!("unknown product {}", p.product_id)))?;
        reqs.push(PairRequest {
            query,
            rqa: None,
            product,
        });
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cvr = batch_cvr(teacher, &reqs, cache, threads)?;
    Ok(reqs
        .iter()
        .zip(cvr)
        .map(|(r, c)| CvrExample {
            query: token_ids(Tower::Query, &r.query.text, None, vocab_size),
            product: token_ids(
                Tower::Product,
                &r.product.relevance_text(),
                None,
                vocab_size,
            ),
            cvr: c,
        })
        .collect())
}

/// Distills teacher CVR into the twin towers with the contrastive plus
/// squared-error objective; the dev metric is recall@10 of exact matches.
pub fn train_ebr_distill(
    init: TowerParams,
    examples: &[CvrExample],
    dev: &RecallSet,
    config: &TrainConfig,
) -> Result<TrainOutcome<TowerParams>> {
    init.validate()?;
    if examples.is_empty() {
        return Err(Error::validation(
            "embedding distillation needs at least one pseudo pair",
        ));
    }
    let tasks = vec![Task {
        name: "ebr",
        len: examples.len(),
        weight: 1.0,
        build: Box::new(|idx: &[usize]| {
            Box::new(EbrDistillObjective {
                examples: idx.iter().map(|&i| examples[i].clone()).collect(),
                negatives: config.negatives,
                scale: config.scale,
                raw_inner_product: config.raw_inner_product,
            }) as Box<_>
        }),
    }];
    train_loop(
        init,
        &tasks,
        &|t: &TowerParams| recall_at_k(t, dev, 10),
        config,
    )
}

/// Searches `index` with the query tower; empty token streams yield no hits.
pub fn ebr_top_k(
    towers: &TowerParams,
    index: &EmbeddingIndex,
    query: &Query,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let ids = token_ids(Tower::Query, &query.text, None, towers.vocab_size());
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let e = encode_ids(towers, Tower::Query, &ids)?;
    index.search(&e.output, k)
}
