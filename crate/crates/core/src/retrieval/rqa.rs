use serde::{Deserialize, Serialize};

use super::bm25::Bm25Index;
use super::dense::EmbeddingIndex;
use crate::corpus::{Corpus, Query};
use crate::error::{Error, Result};
use crate::model::{encode, Tower, TowerParams};

pub const DEFAULT_RQA_K: usize = 3;
pub const DEFAULT_RQA_MAX_CHARS: usize = 256;
pub const RQA_SEPARATOR: &str = " | ";

/// Which retriever produced an augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverTag {
    Bm25,
    /// Embedding retriever distilled on source-market data.
    Ebr,
    /// Embedding retriever retrained with target-market behavior.
    EbrLocal,
}

impl RetrieverTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrieverTag::Bm25 => "bm25",
            RetrieverTag::Ebr => "ebr",
            RetrieverTag::EbrLocal => "ebr_local",
        }
    }
}

/// Retrieved catalog titles appended to a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqaFeature {
    pub query_id: String,
    pub retrieved_titles: Vec<String>,
    /// Products the titles were taken from, same order.
    #[serde(default)]
    pub retrieved_ids: Vec<String>,
    pub retriever_tag: RetrieverTag,
}

impl RqaFeature {
    pub fn new(query_id: &str, titles: Vec<String>, tag: RetrieverTag) -> Self {
        RqaFeature {
            query_id: query_id.to_string(),
            retrieved_titles: titles,
            retrieved_ids: Vec::new(),
            retriever_tag: tag,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.retrieved_titles.is_empty()
    }

    /// Titles joined by `" | "`.
    pub fn joined(&self) -> String {
        self.retrieved_titles.join(RQA_SEPARATOR)
    }
}

/// Anything that ranks catalog products for a query text.
pub trait Retriever: Sync {
    fn tag(&self) -> RetrieverTag;
    fn retrieve(&self, query_text: &str, k: usize) -> Result<Vec<(String, f64)>>;
}

impl Retriever for Bm25Index {
    fn tag(&self) -> RetrieverTag {
        RetrieverTag::Bm25
    }

    fn retrieve(&self, query_text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        Ok(self.search(query_text, k))
    }
}

/// Query tower plus a precomputed product index.
pub struct EbrRetriever<'a> {
    pub towers: &'a TowerParams,
    pub index: &'a EmbeddingIndex,
    pub tag: RetrieverTag,
}

impl Retriever for EbrRetriever<'_> {
    fn tag(&self) -> RetrieverTag {
        self.tag
    }

    fn retrieve(&self, query_text: &str, k: usize) -> Result<Vec<(String, f64)>> {
        match encode(self.towers, Tower::Query, query_text, None) {
            Ok(e) => self.index.search(e.as_slice(), k),
            Err(Error::Validation(_)) => Ok(Vec::new()),
            Err(e) => Err(e),
        }
    }
}

/// Top-`k` titles for `query`, dropping trailing titles so that the joined
/// text fits in `max_chars`.
pub fn build_rqa(
    corpus: &Corpus,
    query: &Query,
    retriever: &dyn Retriever,
    k: usize,
    max_chars: usize,
) -> Result<RqaFeature> {
    if k == 0 {
        return Err(Error::validation("RQA needs k >= 1"));
    }
    let hits = retriever.retrieve(&query.text, k)?;
    let mut feature = RqaFeature::new(&query.id, Vec::new(), retriever.tag());
    let mut used = 0;
    for (pid, _) in hits {
        let product = corpus
            .product(&pid)
            .ok_or_else(|| Error::validation(format!("retrieved unknown product {pid}")))?;
        let add = product.title.chars().count()
            + if feature.is_empty() {
                0
            } else {
                RQA_SEPARATOR.len()
            };
        if used + add > max_chars {
            break;
        }
        used += add;
        feature.retrieved_titles.push(product.title.clone());
        feature.retrieved_ids.push(pid);
    }
    Ok(feature)
}

/// Fraction of features with at least one retrieved product in the query's
/// ground-truth category.
pub fn rqa_accuracy(corpus: &Corpus, features: &[RqaFeature]) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::validation("rqa_accuracy over an empty feature set"));
    }
    let mut correct = 0;
    for f in features {
        let q = corpus
            .query(&f.query_id)
            .ok_or_else(|| Error::validation(format!("unknown query {}", f.query_id)))?;
        let hit = f
            .retrieved_ids
            .iter()
            .filter_map(|id| corpus.product(id))
            .any(|p| p.category == q.category);
        if hit {
            correct += 1;
        }
    }
    Ok(correct as f64 / features.len() as f64)
}
