//! Queries, products, labels and the synthetic bilingual world they live in.
//!
//! Everything downstream (retrieval, teachers, training, metrics) consumes the
//! types defined here. Two abstract languages, [`Language::L1`] (the
//! established source market) and [`Language::L2`] (the cold-start target
//! market), are linked by a bijective [`Lexicon`], so every cross-lingual
//! claim can be checked against ground truth.

mod io;
mod labels;
mod tokenize;
mod world;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_jsonl, save_jsonl, split, SCHEMA_VERSION};
pub use labels::{inject_label_noise, true_label};
pub use tokenize::{is_non_segmented, tokenize};
pub use world::{generate_world, Lexicon, SyntheticWorldSpec, WorldInfo};

/// Language tag of a text, product or query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Language {
    /// Source-market language.
    L1,
    /// Target-market language.
    L2,
}

impl Language {
    pub fn market(self) -> Market {
        match self {
            Language::L1 => Market::Source,
            Language::L2 => Market::Target,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Language::L1 => "L1",
            Language::L2 => "L2",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Market {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub title: String,
    pub description: String,
    pub brand: String,
    /// Taxonomy path, `department/leaf`.
    pub category: String,
    pub language: Language,
}

impl Product {
    /// Text seen by the relevance model's product tower: title plus category path.
    pub fn relevance_text(&self) -> String {
        format!("{} {}", self.title, self.category)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    /// Brand matched against the world's brand dictionary, if any.
    pub brand: Option<String>,
    /// Ground-truth intent category (taxonomy path). Used only by oracles.
    pub category: String,
    pub language: Language,
}

/// Three-level relevance grade. Integer codes are fixed: 0, 1, 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RelevanceLabel {
    Irrelevant = 0,
    Substitute = 1,
    Exact = 2,
}

impl RelevanceLabel {
    pub const ALL: [RelevanceLabel; 3] = [
        RelevanceLabel::Irrelevant,
        RelevanceLabel::Substitute,
        RelevanceLabel::Exact,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Position of this class in a `(p_e, p_s, p_i)` triplet.
    pub fn simplex_index(self) -> usize {
        match self {
            RelevanceLabel::Exact => 0,
            RelevanceLabel::Substitute => 1,
            RelevanceLabel::Irrelevant => 2,
        }
    }

    pub fn from_simplex_index(i: usize) -> Self {
        match i {
            0 => RelevanceLabel::Exact,
            1 => RelevanceLabel::Substitute,
            _ => RelevanceLabel::Irrelevant,
        }
    }

    pub fn one_hot(self) -> SoftLabel {
        let mut p = [0.0; 3];
        p[self.simplex_index()] = 1.0;
        SoftLabel::from_array(p)
    }
}

impl TryFrom<u8> for RelevanceLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(RelevanceLabel::Irrelevant),
            1 => Ok(RelevanceLabel::Substitute),
            2 => Ok(RelevanceLabel::Exact),
            other => Err(format!("relevance label must be 0, 1 or 2, got {other}")),
        }
    }
}

impl From<RelevanceLabel> for u8 {
    fn from(l: RelevanceLabel) -> u8 {
        l.code()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    /// Query id.
    pub query: String,
    /// Product id.
    pub product: String,
    pub label: RelevanceLabel,
    pub market: Market,
}

impl LabeledPair {
    pub fn pair_id(&self) -> String {
        pair_id(&self.query, &self.product)
    }
}

pub fn pair_id(query_id: &str, product_id: &str) -> String {
    format!("{query_id}::{product_id}")
}

/// Probability triplet over (exact, substitute, irrelevant).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    pub p_e: f64,
    pub p_s: f64,
    pub p_i: f64,
}

impl SoftLabel {
    pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

    /// Checked constructor: every component in `[0, 1]` and the sum within 1e-9 of one.
    pub fn new(p_e: f64, p_s: f64, p_i: f64) -> Result<Self> {
        let s = SoftLabel { p_e, p_s, p_i };
        s.validate(Self::SIMPLEX_TOLERANCE)?;
        Ok(s)
    }

    pub(crate) fn from_array(p: [f64; 3]) -> Self {
        SoftLabel {
            p_e: p[0],
            p_s: p[1],
            p_i: p[2],
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p_e, self.p_s, self.p_i]
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let p = self.to_array();
        if p.iter()
            .any(|v| !v.is_finite() || *v < -tol || *v > 1.0 + tol)
        {
            return Err(Error::validation(format!(
                "soft label component outside [0,1]: {self:?}"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::validation(format!(
                "soft label off the simplex (sum {sum}): {self:?}"
            )));
        }
        Ok(())
    }

    pub fn argmax(&self) -> RelevanceLabel {
        let p = self.to_array();
        let mut best = 0;
        for i in 1..3 {
            if p[i] > p[best] {
                best = i;
            }
        }
        RelevanceLabel::from_simplex_index(best)
    }

    pub fn prob(&self, label: RelevanceLabel) -> f64 {
        self.to_array()[label.simplex_index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationKind {
    Category,
    Brand,
    Title,
    Query,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub source_text: String,
    pub target_text: String,
    pub kind: TranslationKind,
}

/// Aggregated historical exposure of a product under a query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub query_id: String,
    pub product_id: String,
    pub impressions: u32,
    pub conversions: u32,
}

impl ImpressionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.impressions == 0 || self.conversions > self.impressions {
            return Err(Error::validation(format!(
                "impression record {}::{} needs 1 <= impressions and conversions <= impressions",
                self.query_id, self.product_id
            )));
        }
        Ok(())
    }
}

/// File names of the on-disk corpus layout.
pub mod files {
    pub const PRODUCTS: &str = "products.jsonl";
    pub const QUERIES: &str = "queries.jsonl";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const TRANSLATIONS: &str = "translations.jsonl";
    pub const IMPRESSIONS: &str = "impressions.jsonl";
    pub const WORLD: &str = "world.json";
}

/// A generated (or loaded) world: catalog, queries, labels, translations and logs.
///
/// Immutable once built; lookups by id go through private indexes.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub world: WorldInfo,
    pub products: Vec<Product>,
    pub queries: Vec<Query>,
    pub pairs: Vec<LabeledPair>,
    pub translations: Vec<TranslationPair>,
    pub impressions: Vec<ImpressionRecord>,
    product_index: HashMap<String, usize>,
    query_index: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.world == other.world
            && self.products == other.products
            && self.queries == other.queries
            && self.pairs == other.pairs
            && self.translations == other.translations
            && self.impressions == other.impressions
    }
}

impl Corpus {
    pub fn new(
        world: WorldInfo,
        products: Vec<Product>,
        queries: Vec<Query>,
        pairs: Vec<LabeledPair>,
        translations: Vec<TranslationPair>,
        impressions: Vec<ImpressionRecord>,
    ) -> Result<Self> {
        let mut product_index = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            if p.title.trim().is_empty() {
                return Err(Error::validation(format!(
                    "product {} has an empty title",
                    p.id
                )));
            }
            if product_index.insert(p.id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate product id {}", p.id)));
            }
        }
        let mut query_index = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if q.text.trim().is_empty() {
                return Err(Error::validation(format!("query {} has empty text", q.id)));
            }
            if query_index.insert(q.id.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate query id {}", q.id)));
            }
        }
        for pair in &pairs {
            if !query_index.contains_key(&pair.query) || !product_index.contains_key(&pair.product)
            {
                return Err(Error::validation(format!(
                    "pair {} references an unknown query or product",
                    pair.pair_id()
                )));
            }
        }
        for rec in &impressions {
            rec.validate()?;
        }
        Ok(Corpus {
            world,
            products,
            queries,
            pairs,
            translations,
            impressions,
            product_index,
            query_index,
        })
    }

    pub fn product(&self, id: &str) -> Option<&Product> {
        self.product_index.get(id).map(|&i| &self.products[i])
    }

    pub fn query(&self, id: &str) -> Option<&Query> {
        self.query_index.get(id).map(|&i| &self.queries[i])
    }

    pub fn products_in(&self, language: Language) -> impl Iterator<Item = &Product> {
        self.products.iter().filter(move |p| p.language == language)
    }

    pub fn queries_in(&self, language: Language) -> impl Iterator<Item = &Query> {
        self.queries.iter().filter(move |q| q.language == language)
    }

    /// Oracle label of a stored pair, looked up by ids.
    pub fn oracle_label(&self, query_id: &str, product_id: &str) -> Option<RelevanceLabel> {
        Some(true_label(self.query(query_id)?, self.product(product_id)?))
    }

    /// True when the query text omits its intent category's leaf word.
    pub fn is_ambiguous(&self, query: &Query) -> bool {
        let leaf = query.category.rsplit('/').next().unwrap_or(&query.category);
        let leaf_tokens = tokenize(leaf);
        let tokens = tokenize(&query.text);
        !leaf_tokens.iter().all(|t| tokens.contains(t))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let world = serde_json::to_string_pretty(&self.world)?;
        std::fs::write(dir.join(files::WORLD), world + "\n")
            .map_err(|e| Error::io(dir.join(files::WORLD), e))?;
        save_jsonl(&dir.join(files::PRODUCTS), &self.products)?;
        save_jsonl(&dir.join(files::QUERIES), &self.queries)?;
        save_jsonl(&dir.join(files::PAIRS), &self.pairs)?;
        save_jsonl(&dir.join(files::TRANSLATIONS), &self.translations)?;
        save_jsonl(&dir.join(files::IMPRESSIONS), &self.impressions)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let world_path = dir.join(files::WORLD);
        let raw = std::fs::read_to_string(&world_path).map_err(|e| Error::io(&world_path, e))?;
        let world: WorldInfo = serde_json::from_str(&raw)?;
        Corpus::new(
            world,
            load_jsonl(&dir.join(files::PRODUCTS))?,
            load_jsonl(&dir.join(files::QUERIES))?,
            load_jsonl(&dir.join(files::PAIRS))?,
            load_jsonl(&dir.join(files::TRANSLATIONS))?,
            load_jsonl(&dir.join(files::IMPRESSIONS))?,
        )
    }
}
