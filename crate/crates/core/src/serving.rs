//! In-process scoring state: precomputed product embeddings for the exact-match
//! and defect students, an LRU cache of query embeddings, and atomic refresh.
//!
//! Readers clone an `Arc` to the current [`Generation`] and score against it
//! alone, so a refresh that lands mid-request is never observed.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, RwLock};

use lru::LruCache;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Product;
use crate::error::{Error, Result};
use crate::model::{calibrate, dot, encode, Checkpoint, Tower, TowerParams};
use crate::retrieval::{build_embedding_index, EmbeddingIndex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServingOptions {
    /// Products with `defect_score >= defect_threshold` are filtered.
    pub defect_threshold: f64,
    pub cache_capacity: usize,
    /// Calibration scale of `σ(scale · cos)`.
    pub scale: f64,
}

impl Default for ServingOptions {
    fn default() -> Self {
        ServingOptions {
            defect_threshold: 0.5,
            cache_capacity: 10_000,
            scale: crate::model::DEFAULT_SCALE,
        }
    }
}

impl ServingOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.defect_threshold) {
            return Err(Error::validation(format!(
                "defect_threshold must lie in [0, 1], got {}",
                self.defect_threshold
            )));
        }
        if self.cache_capacity == 0 {
            return Err(Error::validation("cache_capacity must be at least 1"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::validation("scale must be positive"));
        }
        Ok(())
    }
}

/// The two binary students.
#[derive(Clone, Debug)]
pub struct StudentPair {
    pub em: Checkpoint,
    pub defect: Checkpoint,
}

impl StudentPair {
    pub fn validate(&self) -> Result<()> {
        for (name, ck) in [("em", &self.em), ("defect", &self.defect)] {
            ck.towers()
                .validate()
                .map_err(|e| Error::Checkpoint(format!("{name} checkpoint: {e}")))?;
        }
        Ok(())
    }
}

/// One immutable index generation.
#[derive(Debug)]
pub struct Generation {
    pub id: u64,
    pub students: StudentPair,
    pub em_index: EmbeddingIndex,
    pub defect_index: EmbeddingIndex,
    rows: HashMap<String, usize>,
}

impl Generation {
    fn build(id: u64, students: StudentPair, products: &[Product]) -> Result<Self> {
        students.validate()?;
        let (em_index, defect_index) = rayon::join(
            || build_embedding_index(students.em.towers(), products),
            || build_embedding_index(students.defect.towers(), products),
        );
        let (em_index, defect_index) = (em_index?, defect_index?);
        let mut rows = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            if rows.insert(p.id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate product id {}", p.id)));
            }
        }
        Ok(Generation {
            id,
            students,
            em_index,
            defect_index,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, product_id: &str) -> bool {
        self.rows.contains_key(product_id)
    }
}

/// Score of one product, or why it could not be scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreEntry {
    Scored {
        product_id: String,
        em_score: f64,
        defect_score: f64,
        filtered: bool,
    },
    Failed {
        product_id: String,
        error: String,
    },
}

impl ScoreEntry {
    pub fn product_id(&self) -> &str {
        match self {
            ScoreEntry::Scored { product_id, .. } | ScoreEntry::Failed { product_id, .. } => {
                product_id
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub generation: u64,
    pub results: Vec<ScoreEntry>,
}

#[derive(Clone, Debug)]
struct QueryEmbeddings {
    em: Arc<[f64]>,
    defect: Arc<[f64]>,
}

/// Shared scoring state; cheap to share behind an `Arc`.
pub struct ServingState {
    options: ServingOptions,
    current: RwLock<Arc<Generation>>,
    // Keyed by generation so a refresh that swaps checkpoints never serves a stale embedding.
    cache: Mutex<LruCache<(u64, String), QueryEmbeddings>>,
    refresh_lock: Mutex<()>,
}

impl ServingState {
    pub fn new(
        students: StudentPair,
        products: &[Product],
        options: ServingOptions,
    ) -> Result<Self> {
        options.validate()?;
        let capacity = NonZeroUsize::new(options.cache_capacity).expect("validated capacity");
        let generation = Generation::build(1, students, products)?;
        Ok(ServingState {
            options,
            current: RwLock::new(Arc::new(generation)),
            cache: Mutex::new(LruCache::new(capacity)),
            refresh_lock: Mutex::new(()),
        })
    }

    pub fn options(&self) -> &ServingOptions {
        &self.options
    }

    /// Snapshot of the current generation.
    pub fn generation(&self) -> Arc<Generation> {
        self.current
            .read()
            .expect("generation lock poisoned")
            .clone()
    }

    pub fn cache_size(&self) -> usize {
        self.cache.lock().expect("cache lock poisoned").len()
    }

    fn query_embeddings(&self, generation: &Generation, query: &str) -> Result<QueryEmbeddings> {
        let key = (generation.id, query.to_string());
        if let Some(hit) = self.cache.lock().expect("cache lock poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let em = encode(generation.students.em.towers(), Tower::Query, query, None)?;
        let defect = encode(
            generation.students.defect.towers(),
            Tower::Query,
            query,
            None,
        )?;
        let value = QueryEmbeddings {
            em: em.into_inner().into(),
            defect: defect.into_inner().into(),
        };
        self.cache
            .lock()
            .expect("cache lock poisoned")
            .put(key, value.clone());
        Ok(value)
    }

    /// Scores `product_ids` for `query` against a single generation.
    pub fn score(&self, query: &str, product_ids: &[String]) -> Result<ScoreResponse> {
        let generation = self.generation();
        if product_ids.is_empty() {
            return Ok(ScoreResponse {
                generation: generation.id,
                results: Vec::new(),
            });
        }
        let q = self.query_embeddings(&generation, query)?;
        let scale = self.options.scale;
        let results = product_ids
            .iter()
            .map(|id| match generation.rows.get(id) {
                None => ScoreEntry::Failed {
                    product_id: id.clone(),
                    error: format!("unknown product id {id} in generation {}", generation.id),
                },
                Some(&row) => {
                    let em_score =
                        calibrate(dot(&q.em, generation.em_index.vectors.row(row)), scale);
                    let defect_score = calibrate(
                        dot(&q.defect, generation.defect_index.vectors.row(row)),
                        scale,
                    );
                    ScoreEntry::Scored {
                        product_id: id.clone(),
                        em_score,
                        defect_score,
                        filtered: defect_score >= self.options.defect_threshold,
                    }
                }
            })
            .collect();
        Ok(ScoreResponse {
            generation: generation.id,
            results,
        })
    }

    /// Re-embeds `products` (with new students if given) and swaps the result
    /// in. On error the current generation stays live.
    pub fn refresh_index(
        &self,
        products: &[Product],
        students: Option<StudentPair>,
    ) -> Result<u64> {
        let _writer = self.refresh_lock.lock().expect("refresh lock poisoned");
        let current = self.generation();
        let students = students.unwrap_or_else(|| current.students.clone());
        let next = Generation::build(current.id + 1, students, products)?;
        let id = next.id;
        *self.current.write().expect("generation lock poisoned") = Arc::new(next);
        log::info!("serving generation {id}: {} products", products.len());
        Ok(id)
    }
}

/// Offline reference: `σ(scale · cos)` of `towers` for each (query text, product).
pub fn offline_scores(
    towers: &TowerParams,
    pairs: &[(&str, &Product)],
    scale: f64,
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|(q, p)| {
            let eq = encode(towers, Tower::Query, q, None)?;
            let ep = encode(towers, Tower::Product, &p.relevance_text(), None)?;
            Ok(calibrate(eq.cosine(&ep), scale))
        })
        .collect()
}
