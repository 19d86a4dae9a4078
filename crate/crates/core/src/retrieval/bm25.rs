use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Product, Query};
use crate::error::{Error, Result};

pub const BM25_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Inverted index over tokenized product titles with Okapi BM25 scoring.
///
/// Documents are stored sorted by product id, so posting lists (which hold
/// document positions) are sorted by product id as well and the index does not
/// depend on the order products were supplied in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub format_version: u32,
    pub k1: f64,
    pub b: f64,
    pub n_docs: usize,
    pub avgdl: f64,
    pub doc_ids: Vec<String>,
    pub doc_len: Vec<usize>,
    /// term → [(document position, term frequency)]
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
}

/// A BM25 hit used as a pseudo query-product pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoPair {
    pub query_id: String,
    pub product_id: String,
    pub score: f64,
}

pub fn build_bm25(products: &[Product], k1: f64, b: f64) -> Result<Bm25Index> {
    if products.is_empty() {
        return Err(Error::validation(
            "cannot build a BM25 index over zero products",
        ));
    }
    if !(k1 >= 0.0 && k1.is_finite()) || !(0.0..=1.0).contains(&b) {
        return Err(Error::validation(format!(
            "invalid BM25 parameters k1={k1} b={b}"
        )));
    }
    let mut docs: Vec<&Product> = products.iter().collect();
    docs.sort_by(|x, y| x.id.cmp(&y.id));
    if let Some(w) = docs.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::validation(format!(
            "duplicate product id {}",
            w[0].id
        )));
    }
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_len = Vec::with_capacity(docs.len());
    for (pos, p) in docs.iter().enumerate() {
        let tokens = tokenize(&p.title);
        doc_len.push(tokens.len());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (t, n) in tf {
            postings.entry(t).or_default().push((pos as u32, n));
        }
    }
    let n_docs = docs.len();
    let avgdl = doc_len.iter().sum::<usize>() as f64 / n_docs as f64;
    Ok(Bm25Index {
        format_version: BM25_FORMAT_VERSION,
        k1,
        b,
        n_docs,
        avgdl,
        doc_ids: docs.iter().map(|p| p.id.clone()).collect(),
        doc_len,
        postings,
    })
}

impl Bm25Index {
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Top-`k` documents by BM25 score, ties broken by ascending product id.
    /// Documents matching no query term are never returned.
    pub fn search(&self, query_text: &str, k: usize) -> Vec<(String, f64)> {
        let mut scores = vec![0.0; self.n_docs];
        let mut matched = vec![false; self.n_docs];
        for term in tokenize(query_text) {
            let Some(list) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(&term);
            for &(pos, tf) in list {
                let pos = pos as usize;
                let tf = f64::from(tf);
                let norm = 1.0 - self.b + self.b * self.doc_len[pos] as f64 / self.avgdl;
                scores[pos] += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm);
                matched[pos] = true;
            }
        }
        let mut hits: Vec<(usize, f64)> = (0..self.n_docs)
            .filter(|&i| matched[i])
            .map(|i| (i, scores[i]))
            .collect();
        // positions are already in id order, so a stable sort on score alone keeps the id tie-break
        hits.sort_by(|a, b| b.1.total_cmp(&a.1));
        hits.truncate(k);
        hits.into_iter()
            .map(|(i, s)| (self.doc_ids[i].clone(), s))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let index: Bm25Index = serde_json::from_slice(&bytes)?;
        if index.format_version != BM25_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported BM25 index version {}",
                index.format_version
            )));
        }
        if index.n_docs == 0
            || index.doc_ids.len() != index.n_docs
            || index.doc_len.len() != index.n_docs
        {
            return Err(Error::validation("inconsistent BM25 index"));
        }
        Ok(index)
    }
}

pub fn bm25_search(index: &Bm25Index, query_text: &str, k: usize) -> Vec<(String, f64)> {
    index.search(query_text, k)
}

/// Concatenated top-`k` BM25 hits of every query, grouped by query in input order.
pub fn generate_pseudo_pairs(index: &Bm25Index, queries: &[Query], k: usize) -> Vec<PseudoPair> {
    queries
        .iter()
        .flat_map(|q| {
            index
                .search(&q.text, k)
                .into_iter()
                .map(|(pid, score)| PseudoPair {
                    query_id: q.id.clone(),
                    product_id: pid,
                    score,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Language;

    fn product(id: &str, title: &str) -> Product {
        Product {
            id: id.into(),
            title: title.into(),
            description: String::new(),
            brand: "b".into(),
            category: "x/y".into(),
            language: Language::L1,
        }
    }

    fn query(id: &str, text: &str) -> Query {
        Query {
            id: id.into(),
            text: text.into(),
            brand: None,
            category: "x/y".into(),
            language: Language::L1,
        }
    }

    #[test]
    fn counts_and_lengths() {
        let docs = [product("d1", "a b"), product("d2", "a"), product("d3", "c")];
        let idx = build_bm25(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(idx.n_docs, 3);
        assert!((idx.avgdl - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(idx.df("a"), 2);
        assert_eq!(idx.df("c"), 1);
        assert!(!idx.postings.contains_key("zzz"));
        assert!(build_bm25(&[], 1.2, 0.75).is_err());
        assert!(build_bm25(&docs, 1.2, 1.5).is_err());
    }

    #[test]
    fn search_basics() {
        let docs = [product("d1", "red shoe")];
        let idx = build_bm25(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
        assert!(idx.search("blue hat", 5).is_empty());
        assert_eq!(idx.search("red shoe", 5)[0].0, "d1");
    }

    #[test]
    fn ties_break_by_id_regardless_of_input_order() {
        let a = [
            product("z", "red"),
            product("m", "red"),
            product("a", "red"),
        ];
        let mut b = a.clone();
        b.reverse();
        let ia = build_bm25(&a, DEFAULT_K1, DEFAULT_B).unwrap();
        let ib = build_bm25(&b, DEFAULT_K1, DEFAULT_B).unwrap();
        assert_eq!(ia, ib);
        let ids: Vec<String> = ia.search("red", 3).into_iter().map(|h| h.0).collect();
        assert_eq!(ids, ["a", "m", "z"]);
    }

    #[test]
    fn pseudo_pairs() {
        let docs = [product("d1", "a b"), product("d2", "a"), product("d3", "c")];
        let idx = build_bm25(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
        assert!(generate_pseudo_pairs(&idx, &[], 5).is_empty());
        let pairs = generate_pseudo_pairs(&idx, &[query("q1", "a"), query("q2", "c")], 5);
        assert_eq!(pairs.iter().filter(|p| p.query_id == "q1").count(), 2);
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].query_id, "q2");
    }

    #[test]
    fn persistence_round_trip() {
        let docs = [product("d1", "a b"), product("d2", "a")];
        let idx = build_bm25(&docs, DEFAULT_K1, DEFAULT_B).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bm25.json");
        idx.save(&path).unwrap();
        assert_eq!(Bm25Index::load(&path).unwrap(), idx);
    }
}
