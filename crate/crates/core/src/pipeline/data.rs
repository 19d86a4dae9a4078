use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SplitConfig;
use crate::corpus::{inject_label_noise, split, Corpus, LabeledPair, Language, Query};
use crate::error::{Error, Result};

pub const SPLITS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Query ids of one language, partitioned.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuerySplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl QuerySplit {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Per-language query splits; pairs follow their query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub format_version: u32,
    pub l1: QuerySplit,
    pub l2: QuerySplit,
}

impl Splits {
    pub fn language(&self, lang: Language) -> &QuerySplit {
        match lang {
            Language::L1 => &self.l1,
            Language::L2 => &self.l2,
        }
    }

    pub fn queries(&self, lang: Language, split: Split) -> &[String] {
        self.language(lang).get(split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let raw = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, raw).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Splits = serde_json::from_str(&raw)?;
        if s.format_version != SPLITS_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "{}: unsupported splits format {}",
                path.display(),
                s.format_version
            )));
        }
        Ok(s)
    }
}

pub fn make_splits(corpus: &Corpus, fractions: &SplitConfig, seed: u64) -> Result<Splits> {
    let part = |lang: Language, salt: u64| -> Result<QuerySplit> {
        let mut ids: Vec<String> = corpus.queries_in(lang).map(|q| q.id.clone()).collect();
        ids.sort();
        let mut parts = split(
            &ids,
            &[fractions.train, fractions.dev, fractions.test],
            seed ^ salt,
        )?;
        for p in &mut parts {
            p.sort();
        }
        let test = parts.pop().unwrap_or_default();
        let dev = parts.pop().unwrap_or_default();
        let train = parts.pop().unwrap_or_default();
        Ok(QuerySplit { train, dev, test })
    };
    Ok(Splits {
        format_version: SPLITS_FORMAT_VERSION,
        l1: part(Language::L1, 0x11)?,
        l2: part(Language::L2, 0x22)?,
    })
}

/// Stored pairs whose query is in `query_ids`, in corpus order.
pub fn pairs_of(corpus: &Corpus, query_ids: &[String]) -> Vec<LabeledPair> {
    let set: BTreeSet<&str> = query_ids.iter().map(String::as_str).collect();
    corpus
        .pairs
        .iter()
        .filter(|p| set.contains(p.query.as_str()))
        .cloned()
        .collect()
}

pub fn queries_of<'c>(corpus: &'c Corpus, query_ids: &[String]) -> Result<Vec<&'c Query>> {
    query_ids
        .iter()
        .map(|id| {
            corpus
                .query(id)
                .ok_or_else(|| Error::validation(format!("split names unknown query {id}")))
        })
        .collect()
}

/// Pairs whose query text omits its category word.
pub fn ambiguous_pairs(corpus: &Corpus, pairs: &[LabeledPair]) -> Vec<LabeledPair> {
    pairs
        .iter()
        .filter(|p| {
            corpus
                .query(&p.query)
                .is_some_and(|q| corpus.is_ambiguous(q))
        })
        .cloned()
        .collect()
}

/// Labeled pair sets of every stage, with noise already applied to the
/// target-market training pairs.
#[derive(Clone, Debug)]
pub struct StageData {
    pub l1_train: Vec<LabeledPair>,
    pub l1_dev: Vec<LabeledPair>,
    pub l1_test: Vec<LabeledPair>,
    pub l2_train_clean: Vec<LabeledPair>,
    pub l2_train: Vec<LabeledPair>,
    pub l2_dev: Vec<LabeledPair>,
    pub l2_test: Vec<LabeledPair>,
}

impl StageData {
    pub fn new(corpus: &Corpus, splits: &Splits, noise_rate: f64, noise_seed: u64) -> Result<Self> {
        let get = |lang, split| pairs_of(corpus, splits.queries(lang, split));
        let l2_train_clean = get(Language::L2, Split::Train);
        let l2_train = inject_label_noise(&l2_train_clean, noise_rate, noise_seed)?;
        let data = StageData {
            l1_train: get(Language::L1, Split::Train),
            l1_dev: get(Language::L1, Split::Dev),
            l1_test: get(Language::L1, Split::Test),
            l2_train_clean,
            l2_train,
            l2_dev: get(Language::L2, Split::Dev),
            l2_test: get(Language::L2, Split::Test),
        };
        for (name, set) in [
            ("source-market train", &data.l1_train),
            ("source-market dev", &data.l1_dev),
            ("target-market dev", &data.l2_dev),
            ("target-market test", &data.l2_test),
        ] {
            if set.is_empty() {
                return Err(Error::validation(format!(
                    "{name} split has no labeled pairs"
                )));
            }
        }
        Ok(data)
    }

    /// Source-market training pairs, plus the noisy target-market ones when requested.
    pub fn training_pairs(&self, target_market: bool) -> Vec<LabeledPair> {
        let mut out = self.l1_train.clone();
        if target_market {
            out.extend(self.l2_train.iter().cloned());
        }
        out
    }

    /// Pairs used for best-checkpoint selection.
    pub fn selection_pairs(&self, target_market: bool) -> &[LabeledPair] {
        if target_market {
            &self.l2_dev
        } else {
            &self.l1_dev
        }
    }

    /// Fraction of target-market training labels changed by noise.
    pub fn flipped_fraction(&self) -> f64 {
        if self.l2_train.is_empty() {
            return 0.0;
        }
        let flipped = self
            .l2_train
            .iter()
            .zip(&self.l2_train_clean)
            .filter(|(a, b)| a.label != b.label)
            .count();
        flipped as f64 / self.l2_train.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_world, SyntheticWorldSpec};

    fn small() -> Corpus {
        generate_world(&SyntheticWorldSpec {
            n_products: 120,
            n_queries: 60,
            ..SyntheticWorldSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn splits_cover_each_language_disjointly() {
        let c = small();
        let s = make_splits(&c, &SplitConfig::default(), 3).unwrap();
        for lang in [Language::L1, Language::L2] {
            let q = s.language(lang);
            let mut all: Vec<&String> = q.train.iter().chain(&q.dev).chain(&q.test).collect();
            assert_eq!(all.len(), 60);
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 60);
            assert_eq!((q.train.len(), q.dev.len(), q.test.len()), (42, 9, 9));
        }
        assert_eq!(s, make_splits(&c, &SplitConfig::default(), 3).unwrap());
    }

    #[test]
    fn noise_touches_only_target_training_pairs() {
        let c = small();
        let s = make_splits(&c, &SplitConfig::default(), 3).unwrap();
        let d = StageData::new(&c, &s, 0.2, 7).unwrap();
        assert_eq!(d.l1_train, pairs_of(&c, &s.l1.train));
        assert_eq!(d.l2_dev, pairs_of(&c, &s.l2.dev));
        assert!(
            d.flipped_fraction() > 0.1 && d.flipped_fraction() < 0.3,
            "{}",
            d.flipped_fraction()
        );
        let clean = StageData::new(&c, &s, 0.0, 7).unwrap();
        assert_eq!(clean.flipped_fraction(), 0.0);
        assert_eq!(
            d.training_pairs(true).len(),
            d.l1_train.len() + d.l2_train.len()
        );
    }
}
