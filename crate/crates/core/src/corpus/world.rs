//! Desk-scale synthetic market generator.
//!
//! The world has `n_categories` leaf categories grouped into departments, a
//! brand dictionary, and a pool of attribute tokens owned by categories. Each
//! category also owns two *alias* tokens: colloquial words shoppers use
//! instead of the category name. One alias is used by source-market queries,
//! the other by target-market queries. Aliases show up in product titles too,
//! but more often in titles of the category's confusable *partner*, which is
//! what makes term matching unreliable for alias-only queries.
//!
//! All text is generated in L1 and translated token by token through the
//! [`Lexicon`], so `true_label` survives translation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    true_label, Corpus, ImpressionRecord, LabeledPair, Language, Product, Query, RelevanceLabel,
    TranslationKind, TranslationPair,
};
use crate::error::{Error, Result};

/// Bijective word map from L1 to L2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<String, String>",
    into = "BTreeMap<String, String>"
)]
pub struct Lexicon {
    forward: BTreeMap<String, String>,
    backward: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new(forward: BTreeMap<String, String>) -> Result<Self> {
        let mut backward = BTreeMap::new();
        for (src, dst) in &forward {
            if src.is_empty()
                || dst.is_empty()
                || src.contains(char::is_whitespace)
                || dst.contains(char::is_whitespace)
            {
                return Err(Error::validation(format!(
                    "lexicon entry {src:?} -> {dst:?} is not a single word"
                )));
            }
            if let Some(prev) = backward.insert(dst.clone(), src.clone()) {
                return Err(Error::validation(format!(
                    "lexicon is not bijective: {prev:?} and {src:?} both map to {dst:?}"
                )));
            }
        }
        Ok(Lexicon { forward, backward })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn to_l2(&self, word: &str) -> Option<&str> {
        self.forward.get(word).map(String::as_str)
    }

    pub fn to_l1(&self, word: &str) -> Option<&str> {
        self.backward.get(word).map(String::as_str)
    }

    /// Translates space- and slash-separated text word by word.
    pub fn translate(&self, text: &str, to: Language) -> Result<String> {
        let map = match to {
            Language::L2 => &self.forward,
            Language::L1 => &self.backward,
        };
        let mut out = String::with_capacity(text.len() * 2);
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut String| -> Result<()> {
            if !word.is_empty() {
                let t = map.get(word.as_str()).ok_or_else(|| {
                    Error::validation(format!("word {word:?} missing from lexicon"))
                })?;
                out.push_str(t);
                word.clear();
            }
            Ok(())
        };
        for c in text.chars() {
            if c == ' ' || c == '/' {
                flush(&mut word, &mut out)?;
                out.push(c);
            } else {
                word.push(c);
            }
        }
        flush(&mut word, &mut out)?;
        Ok(out)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.forward.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

impl TryFrom<BTreeMap<String, String>> for Lexicon {
    type Error = Error;
    fn try_from(m: BTreeMap<String, String>) -> Result<Self> {
        Lexicon::new(m)
    }
}

impl From<Lexicon> for BTreeMap<String, String> {
    fn from(l: Lexicon) -> Self {
        l.forward
    }
}

/// Knobs of the synthetic world. Counts are per language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldSpec {
    pub n_categories: usize,
    pub n_brands: usize,
    /// Total attribute pool; split evenly over categories (two aliases each, the rest general).
    pub n_attribute_tokens: usize,
    pub n_products: usize,
    pub n_queries: usize,
    pub pairs_per_query: usize,
    pub brands_per_category: usize,
    pub query_brand_rate: f64,
    /// Fraction of queries that name an alias instead of the category.
    pub ambiguous_query_rate: f64,
    pub title_translation_rate: f64,
    pub query_translation_rate: f64,
    pub impressions_per_query: usize,
    /// Explicit lexicon; generated from the seed when absent.
    pub lexicon: Option<Lexicon>,
    /// Label noise rate applied to target-market training labels by the pipeline.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            n_categories: 12,
            n_brands: 24,
            n_attribute_tokens: 72,
            n_products: 960,
            n_queries: 480,
            pairs_per_query: 8,
            brands_per_category: 4,
            query_brand_rate: 0.6,
            ambiguous_query_rate: 0.4,
            title_translation_rate: 0.5,
            query_translation_rate: 0.2,
            impressions_per_query: 30,
            lexicon: None,
            noise_rate: 0.2,
            seed: 42,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_categories", self.n_categories),
            ("n_brands", self.n_brands),
            ("n_attribute_tokens", self.n_attribute_tokens),
            ("n_products", self.n_products),
            ("n_queries", self.n_queries),
            ("pairs_per_query", self.pairs_per_query),
            ("brands_per_category", self.brands_per_category),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::validation(format!(
                    "world spec: {name} must be positive"
                )));
            }
        }
        if self.n_categories < 2 {
            return Err(Error::validation(
                "world spec: need at least two categories",
            ));
        }
        if self.n_attribute_tokens < 3 * self.n_categories {
            return Err(Error::validation(
                "world spec: n_attribute_tokens must be at least 3 per category",
            ));
        }
        if self.brands_per_category > self.n_brands {
            return Err(Error::validation(
                "world spec: brands_per_category exceeds n_brands",
            ));
        }
        let rates = [
            ("query_brand_rate", self.query_brand_rate),
            ("ambiguous_query_rate", self.ambiguous_query_rate),
            ("title_translation_rate", self.title_translation_rate),
            ("query_translation_rate", self.query_translation_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::validation(format!(
                    "world spec: {name} must lie in [0, 1]"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::validation(
                "world spec: noise_rate must lie in [0, 1)",
            ));
        }
        Ok(())
    }
}

/// World-level metadata saved alongside the record files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldInfo {
    pub spec: SyntheticWorldSpec,
    pub lexicon: Lexicon,
    pub taxonomy_l1: Vec<String>,
    pub taxonomy_l2: Vec<String>,
    pub brands_l1: Vec<String>,
    pub brands_l2: Vec<String>,
}

impl WorldInfo {
    pub fn taxonomy(&self, lang: Language) -> &[String] {
        match lang {
            Language::L1 => &self.taxonomy_l1,
            Language::L2 => &self.taxonomy_l2,
        }
    }

    pub fn brand_dictionary(&self, lang: Language) -> &[String] {
        match lang {
            Language::L1 => &self.brands_l1,
            Language::L2 => &self.brands_l2,
        }
    }
}

const CONSONANTS: &[u8] = b"bdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

fn unique_words(rng: &mut ChaCha8Rng, n: usize, used: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng);
        if used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn cjk_word(rng: &mut ChaCha8Rng) -> String {
    (0..2)
        .map(|_| {
            char::from_u32(0x4E00 + rng.random_range(0..3000u32)).expect("valid CJK code point")
        })
        .collect()
}

struct Vocab {
    depts: Vec<String>,
    leaves: Vec<String>,
    brands: Vec<String>,
    attrs: Vec<String>,
    attrs_per_cat: usize,
}

impl Vocab {
    fn partner(&self, c: usize) -> usize {
        let n = self.leaves.len();
        if (c ^ 1) < n {
            c ^ 1
        } else {
            (c + 1) % n
        }
    }

    fn alias(&self, c: usize, which: usize) -> &str {
        &self.attrs[c * self.attrs_per_cat + which]
    }

    fn general(&self, c: usize) -> &[String] {
        &self.attrs[c * self.attrs_per_cat + 2..(c + 1) * self.attrs_per_cat]
    }

    fn path(&self, c: usize) -> String {
        format!("{}/{}", self.depts[c % self.depts.len()], self.leaves[c])
    }
}

struct Catalog {
    products: Vec<Product>,
    // (category, brand) of each product, in L1 index space
    meta: Vec<(usize, usize)>,
    by_category: Vec<Vec<usize>>,
}

/// Generates a full bilingual world. Deterministic for a fixed spec.
pub fn generate_world(spec: &SyntheticWorldSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_cat = spec.n_categories;
    let attrs_per_cat = spec.n_attribute_tokens / n_cat;
    let n_dept = n_cat.div_ceil(3);

    let mut used = BTreeSet::new();
    let vocab = Vocab {
        depts: unique_words(&mut rng, n_dept, &mut used),
        leaves: unique_words(&mut rng, n_cat, &mut used),
        brands: unique_words(&mut rng, spec.n_brands, &mut used),
        attrs: unique_words(&mut rng, attrs_per_cat * n_cat, &mut used),
        attrs_per_cat,
    };

    let lexicon = match &spec.lexicon {
        Some(lex) => {
            if let Some(w) = used.iter().find(|w| lex.to_l2(w).is_none()) {
                return Err(Error::validation(format!(
                    "lexicon does not cover world word {w:?}"
                )));
            }
            lex.clone()
        }
        None => {
            let mut targets = BTreeSet::new();
            let mut map = BTreeMap::new();
            for w in &used {
                let t = loop {
                    let t = cjk_word(&mut rng);
                    if targets.insert(t.clone()) {
                        break t;
                    }
                };
                map.insert(w.clone(), t);
            }
            Lexicon::new(map)?
        }
    };

    let brands_of: Vec<Vec<usize>> = (0..n_cat)
        .map(|_| {
            let mut all: Vec<usize> = (0..spec.n_brands).collect();
            all.shuffle(&mut rng);
            let mut b = all[..spec.brands_per_category].to_vec();
            b.sort_unstable();
            b
        })
        .collect();

    let tr = |text: &str, lang: Language| -> Result<String> {
        match lang {
            Language::L1 => Ok(text.to_string()),
            Language::L2 => lexicon.translate(text, Language::L2),
        }
    };

    let mut catalogs = Vec::new();
    for lang in [Language::L1, Language::L2] {
        let mut cat = Catalog {
            products: Vec::with_capacity(spec.n_products),
            meta: Vec::with_capacity(spec.n_products),
            by_category: vec![Vec::new(); n_cat],
        };
        for i in 0..spec.n_products {
            let c = rng.random_range(0..n_cat);
            let b = *brands_of[c]
                .choose(&mut rng)
                .expect("brands_per_category > 0");
            let title = product_title(&vocab, c, b, &mut rng);
            let description = product_description(&vocab, c, &mut rng);
            let tag = if lang == Language::L1 { 1 } else { 2 };
            cat.by_category[c].push(i);
            cat.meta.push((c, b));
            cat.products.push(Product {
                id: format!("p{tag}-{i:05}"),
                title: tr(&title, lang)?,
                description: tr(&description, lang)?,
                brand: tr(&vocab.brands[b], lang)?,
                category: tr(&vocab.path(c), lang)?,
                language: lang,
            });
        }
        catalogs.push((lang, cat));
    }

    let mut queries = Vec::new();
    let mut pairs = Vec::new();
    let mut impressions = Vec::new();
    let mut l1_query_texts = Vec::new();
    for (lang, catalog) in &catalogs {
        let lang = *lang;
        let tag = if lang == Language::L1 { 1 } else { 2 };
        let alias_slot = if lang == Language::L1 { 0 } else { 1 };
        for i in 0..spec.n_queries {
            let c = rng.random_range(0..n_cat);
            let brand = (rng.random::<f64>() < spec.query_brand_rate)
                .then(|| *brands_of[c].choose(&mut rng).expect("non-empty"));
            let ambiguous = rng.random::<f64>() < spec.ambiguous_query_rate;
            let mut words: Vec<String> = Vec::new();
            if let Some(b) = brand {
                words.push(vocab.brands[b].clone());
            }
            if ambiguous {
                words.push(vocab.alias(c, alias_slot).to_string());
            } else {
                words.push(vocab.leaves[c].clone());
            }
            if rng.random::<f64>() < 0.5 {
                words.push(
                    vocab
                        .general(c)
                        .choose(&mut rng)
                        .expect("general attrs")
                        .clone(),
                );
            }
            let text = words.join(" ");
            if lang == Language::L1 {
                l1_query_texts.push(text.clone());
            }
            let query = Query {
                id: format!("q{tag}-{i:05}"),
                text: tr(&text, lang)?,
                brand: brand.map(|b| tr(&vocab.brands[b], lang)).transpose()?,
                category: tr(&vocab.path(c), lang)?,
                language: lang,
            };
            for pi in
                sample_pair_products(&vocab, catalog, c, brand, spec.pairs_per_query, &mut rng)
            {
                let product = &catalog.products[pi];
                pairs.push(LabeledPair {
                    query: query.id.clone(),
                    product: product.id.clone(),
                    label: true_label(&query, product),
                    market: lang.market(),
                });
            }
            impressions.extend(impression_log(
                &vocab,
                catalog,
                &query,
                c,
                spec.impressions_per_query,
                &mut rng,
            ));
            queries.push(query);
        }
    }

    let mut translations = Vec::new();
    for c in 0..n_cat {
        let path = vocab.path(c);
        translations.push(TranslationPair {
            target_text: lexicon.translate(&path, Language::L2)?,
            source_text: path,
            kind: TranslationKind::Category,
        });
    }
    for b in &vocab.brands {
        translations.push(TranslationPair {
            source_text: b.clone(),
            target_text: lexicon.translate(b, Language::L2)?,
            kind: TranslationKind::Brand,
        });
    }
    let l1_catalog = &catalogs[0].1;
    for p in &l1_catalog.products {
        if rng.random::<f64>() < spec.title_translation_rate {
            translations.push(TranslationPair {
                source_text: p.title.clone(),
                target_text: lexicon.translate(&p.title, Language::L2)?,
                kind: TranslationKind::Title,
            });
        }
    }
    for text in &l1_query_texts {
        if rng.random::<f64>() < spec.query_translation_rate {
            translations.push(TranslationPair {
                source_text: text.clone(),
                target_text: lexicon.translate(text, Language::L2)?,
                kind: TranslationKind::Query,
            });
        }
    }

    let mut taxonomy_l1: Vec<String> = (0..n_cat).map(|c| vocab.path(c)).collect();
    let mut taxonomy_l2 = taxonomy_l1
        .iter()
        .map(|p| lexicon.translate(p, Language::L2))
        .collect::<Result<Vec<_>>>()?;
    let brands_l2 = vocab
        .brands
        .iter()
        .map(|b| lexicon.translate(b, Language::L2))
        .collect::<Result<Vec<_>>>()?;
    taxonomy_l1.sort();
    taxonomy_l2.sort();
    let mut brands_l1 = vocab.brands.clone();
    brands_l1.sort();
    let mut brands_l2 = brands_l2;
    brands_l2.sort();

    let world = WorldInfo {
        spec: SyntheticWorldSpec {
            lexicon: None,
            ..spec.clone()
        },
        lexicon,
        taxonomy_l1,
        taxonomy_l2,
        brands_l1,
        brands_l2,
    };
    let products = catalogs.into_iter().flat_map(|(_, c)| c.products).collect();
    Corpus::new(world, products, queries, pairs, translations, impressions)
}

fn product_title(vocab: &Vocab, c: usize, b: usize, rng: &mut ChaCha8Rng) -> String {
    let mut words = vec![vocab.brands[b].clone()];
    let partner = vocab.partner(c);
    let mut attrs: Vec<&str> = Vec::new();
    while attrs.len() < 2 {
        let r = rng.random::<f64>();
        let pool = if r < 0.65 {
            vocab.general(c)
        } else if r < 0.90 {
            vocab.general(partner)
        } else {
            vocab.general(rng.random_range(0..vocab.leaves.len()))
        };
        let a = pool.choose(rng).expect("general attrs").as_str();
        if !attrs.contains(&a) {
            attrs.push(a);
        }
    }
    words.extend(attrs.into_iter().map(String::from));
    let r = rng.random::<f64>();
    let which = rng.random_range(0..2);
    if r < 0.15 {
        words.push(vocab.alias(c, which).to_string());
    } else if r < 0.55 {
        words.push(vocab.alias(partner, which).to_string());
    }
    words.push(vocab.leaves[c].clone());
    words.join(" ")
}

fn product_description(vocab: &Vocab, c: usize, rng: &mut ChaCha8Rng) -> String {
    let mut words = vec![
        vocab.depts[c % vocab.depts.len()].clone(),
        vocab.leaves[c].clone(),
    ];
    for _ in 0..3 {
        words.push(vocab.general(c).choose(rng).expect("general attrs").clone());
    }
    words.join(" ")
}

fn sample_pair_products(
    vocab: &Vocab,
    catalog: &Catalog,
    c: usize,
    brand: Option<usize>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let take = |pool: Vec<usize>, k: usize, chosen: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        let fresh: Vec<usize> = pool.into_iter().filter(|p| !chosen.contains(p)).collect();
        for &p in fresh.choose_multiple(rng, k) {
            if chosen.len() < n {
                chosen.push(p);
            }
        }
    };
    let same = catalog.by_category[c].clone();
    let same_quota = n / 2;
    match brand {
        Some(b) => {
            let (matching, other): (Vec<usize>, Vec<usize>) =
                same.into_iter().partition(|&p| catalog.meta[p].1 == b);
            take(matching, same_quota / 2, &mut chosen, rng);
            let rest = same_quota - chosen.len();
            take(other, rest, &mut chosen, rng);
        }
        None => take(same, same_quota, &mut chosen, rng),
    }
    let partner = vocab.partner(c);
    take(
        catalog.by_category[partner].clone(),
        (n - chosen.len()) / 2,
        &mut chosen,
        rng,
    );
    let others: Vec<usize> = (0..catalog.products.len())
        .filter(|&p| catalog.meta[p].0 != c && catalog.meta[p].0 != partner)
        .collect();
    let rest = n - chosen.len();
    take(others, rest, &mut chosen, rng);
    if chosen.len() < n {
        let all: Vec<usize> = (0..catalog.products.len()).collect();
        let rest = n - chosen.len();
        take(all, rest, &mut chosen, rng);
    }
    chosen
}

fn impression_log(
    vocab: &Vocab,
    catalog: &Catalog,
    query: &Query,
    c: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ImpressionRecord> {
    let partner = vocab.partner(c);
    let mut picked: BTreeSet<usize> = BTreeSet::new();
    let mut attempts = 0;
    while picked.len() < n.min(catalog.products.len()) && attempts < 20 * n {
        attempts += 1;
        let r = rng.random::<f64>();
        let pool: &[usize] = if r < 0.5 {
            &catalog.by_category[c]
        } else if r < 0.75 {
            &catalog.by_category[partner]
        } else {
            &[]
        };
        let p = match pool.choose(rng) {
            Some(&p) => p,
            None => rng.random_range(0..catalog.products.len()),
        };
        picked.insert(p);
    }
    picked
        .into_iter()
        .map(|p| {
            let product = &catalog.products[p];
            let (base, cvr) = match true_label(query, product) {
                RelevanceLabel::Exact => (60.0, 0.30),
                RelevanceLabel::Substitute => (25.0, 0.10),
                RelevanceLabel::Irrelevant => (10.0, 0.01),
            };
            let impressions = (base * rng.random_range(0.5f64..1.5)).round().max(1.0) as u32;
            let conversions = (0..impressions)
                .filter(|_| rng.random::<f64>() < cvr)
                .count() as u32;
            ImpressionRecord {
                query_id: query.id.clone(),
                product_id: product.id.clone(),
                impressions,
                conversions,
            }
        })
        .collect()
}
