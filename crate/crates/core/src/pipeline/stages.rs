//! Stage computations shared by the subcommands and the ablation harness.
//! Nothing here touches the file system except teacher caches.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, TeacherKind};
use super::data::{ambiguous_pairs, queries_of, Split, Splits, StageData};
use crate::corpus::{Corpus, LabeledPair, Language, Product, Query, RelevanceLabel};
use crate::error::{Error, Result};
use crate::metrics::{defect_at_5, em_at_1, mean_vector, transfer_gap, RankedResult, TransferGap};
use crate::model::{
    calibrate, dot, encode, token_ids, Checkpoint, CvrExample, RelevanceModel, Tower, TowerParams,
};
use crate::retrieval::{
    build_embedding_index, build_rqa, generate_pseudo_pairs, Bm25Index, EbrRetriever,
    EmbeddingIndex, RetrieverTag,
};
use crate::teacher::{
    model_teacher, oracle_teacher, LabelCache, PromptTemplate, RemoteTeacher, TeacherScorer,
};
use crate::training::{
    cvr_examples, distill_online, ebr_top_k, eval_pairs, online_candidates, recall_set,
    relevance_examples, relevance_f1, train_ebr_distill, train_relevance, Candidates, OnlineInputs,
    OnlineOutcome, RecallSet, RelevanceData, RqaMap, SoftLabelMap, TrainConfig, TrainOutcome,
};

/// The teacher named by the `teacher` section.
pub fn external_teacher(config: &PipelineConfig) -> Result<Box<dyn TeacherScorer>> {
    let t = &config.teacher;
    Ok(match t.kind {
        TeacherKind::Oracle => Box::new(oracle_teacher(t.temperature, config.seed)?),
        TeacherKind::Model => {
            let path = t.checkpoint.as_ref().ok_or_else(|| {
                Error::validation("teacher: kind \"model\" needs a checkpoint path")
            })?;
            Box::new(model_teacher(&Checkpoint::load(path)?)?)
        }
        TeacherKind::Remote => {
            let template = match &t.prompt_template {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::default(),
            };
            Box::new(RemoteTeacher::new(t.remote.clone(), template)?)
        }
    })
}

fn split_queries(corpus: &Corpus, splits: &Splits, split: Split) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for lang in [Language::L1, Language::L2] {
        out.extend(
            queries_of(corpus, splits.queries(lang, split))?
                .into_iter()
                .cloned(),
        );
    }
    Ok(out)
}

/// BM25 pseudo pairs of all training queries, scored with teacher CVR.
pub fn pseudo_pair_examples(
    corpus: &Corpus,
    splits: &Splits,
    bm25: &Bm25Index,
    config: &PipelineConfig,
    teacher: &dyn TeacherScorer,
    cache: &mut LabelCache,
) -> Result<Vec<CvrExample>> {
    let queries = split_queries(corpus, splits, Split::Train)?;
    let pairs = generate_pseudo_pairs(bm25, &queries, config.retrieval.pseudo_k);
    cvr_examples(corpus, &pairs, teacher, cache, config.model.vocab_size)
}

/// Target-market training-query impressions with their observed conversion rate.
pub fn impression_examples(
    corpus: &Corpus,
    splits: &Splits,
    vocab_size: usize,
) -> Result<Vec<CvrExample>> {
    let train: std::collections::BTreeSet<&str> = splits
        .queries(Language::L2, Split::Train)
        .iter()
        .map(String::as_str)
        .collect();
    corpus
        .impressions
        .iter()
        .filter(|r| train.contains(r.query_id.as_str()))
        .map(|r| {
            let q = corpus.query(&r.query_id).ok_or_else(|| {
                Error::validation(format!("impression names unknown query {}", r.query_id))
            })?;
            let p = corpus.product(&r.product_id).ok_or_else(|| {
                Error::validation(format!("impression names unknown product {}", r.product_id))
            })?;
            Ok(CvrExample {
                query: token_ids(Tower::Query, &q.text, None, vocab_size),
                product: token_ids(Tower::Product, &p.relevance_text(), None, vocab_size),
                cvr: r.conversions as f64 / r.impressions as f64,
            })
        })
        .collect()
}

/// Dev queries of both languages against the whole catalog.
pub fn ebr_dev_set(corpus: &Corpus, splits: &Splits, vocab_size: usize) -> Result<RecallSet> {
    let queries = split_queries(corpus, splits, Split::Dev)?;
    let refs: Vec<&Query> = queries.iter().collect();
    Ok(recall_set(&refs, &corpus.products, vocab_size))
}

pub fn train_ebr(
    config: &PipelineConfig,
    examples: &[CvrExample],
    dev: &RecallSet,
) -> Result<TrainOutcome<TowerParams>> {
    let init = TowerParams::init(&config.model, config.init_seed())?;
    train_ebr_distill(init, examples, dev, &config.ebr_train)
}

/// One embedding index per language.
#[derive(Clone, Debug)]
pub struct LanguageIndexes {
    pub l1: EmbeddingIndex,
    pub l2: EmbeddingIndex,
}

impl LanguageIndexes {
    pub fn build(towers: &TowerParams, corpus: &Corpus) -> Result<Self> {
        let products = |lang| corpus.products_in(lang).cloned().collect::<Vec<Product>>();
        Ok(LanguageIndexes {
            l1: build_embedding_index(towers, &products(Language::L1))?,
            l2: build_embedding_index(towers, &products(Language::L2))?,
        })
    }

    pub fn get(&self, lang: Language) -> &EmbeddingIndex {
        match lang {
            Language::L1 => &self.l1,
            Language::L2 => &self.l2,
        }
    }
}

/// Where RQA titles come from.
pub enum RqaSource<'a> {
    Bm25(&'a Bm25Index),
    Ebr {
        towers: &'a TowerParams,
        indexes: &'a LanguageIndexes,
        tag: RetrieverTag,
    },
}

/// RQA features for every query in `queries`, keyed by query id.
pub fn rqa_map(
    corpus: &Corpus,
    queries: &[Query],
    source: &RqaSource<'_>,
    config: &PipelineConfig,
) -> Result<RqaMap> {
    let (k, max_chars) = (config.retrieval.rqa_k, config.retrieval.rqa_max_chars);
    let features = queries
        .par_iter()
        .map(|q| match source {
            RqaSource::Bm25(index) => build_rqa(corpus, q, *index, k, max_chars),
            RqaSource::Ebr {
                towers,
                indexes,
                tag,
            } => {
                let r = EbrRetriever {
                    towers,
                    index: indexes.get(q.language),
                    tag: *tag,
                };
                build_rqa(corpus, q, &r, k, max_chars)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(features
        .into_iter()
        .map(|f| (f.query_id.clone(), f))
        .collect())
}

/// Lexicon translations of every auxiliary pair, tokenized for the query tower.
pub fn translation_streams(corpus: &Corpus, vocab_size: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    crate::training::translation_examples(&corpus.translations, vocab_size)
}

/// Training config of a relevance run with the translation task switched on or off.
pub fn relevance_config(base: &TrainConfig, mt: bool) -> TrainConfig {
    let mut t = base.clone();
    if !mt {
        t.mt_weight = 0.0;
    }
    t
}

/// One relevance training setup.
pub struct RelevanceRun<'a> {
    pub corpus: &'a Corpus,
    pub data: &'a StageData,
    pub translations: &'a [(Vec<usize>, Vec<usize>)],
    pub rqa: Option<&'a RqaMap>,
    pub soft: Option<&'a SoftLabelMap>,
    pub target_market: bool,
}

pub fn train_relevance_run(
    init: RelevanceModel,
    run: &RelevanceRun<'_>,
    config: &TrainConfig,
) -> Result<TrainOutcome<RelevanceModel>> {
    let vocab = init.towers.vocab_size();
    let pairs = run.data.training_pairs(run.target_market);
    let train = relevance_examples(run.corpus, &pairs, run.rqa, run.soft, config.alpha, vocab)?;
    let dev = eval_pairs(
        run.corpus,
        run.data.selection_pairs(run.target_market),
        run.rqa,
        vocab,
    )?;
    let data = RelevanceData {
        train: &train,
        dev: &dev,
        translations: run.translations,
    };
    train_relevance(init, &data, config)
}

/// Micro-F1 of a relevance model on the held-out sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceScores {
    pub l1_test_f1: f64,
    pub l2_dev_f1: f64,
    pub l2_test_f1: f64,
    /// Restricted to queries that omit their category word.
    pub l2_dev_ambiguous_f1: f64,
    pub l2_test_ambiguous_f1: f64,
}

pub fn pairs_f1(
    model: &RelevanceModel,
    corpus: &Corpus,
    pairs: &[LabeledPair],
    rqa: Option<&RqaMap>,
) -> Result<f64> {
    let eval = eval_pairs(corpus, pairs, rqa, model.towers.vocab_size())?;
    relevance_f1(model, &eval)
}

pub fn score_relevance(
    model: &RelevanceModel,
    corpus: &Corpus,
    data: &StageData,
    rqa: Option<&RqaMap>,
) -> Result<RelevanceScores> {
    let f1 = |pairs: &[LabeledPair]| pairs_f1(model, corpus, pairs, rqa);
    Ok(RelevanceScores {
        l1_test_f1: f1(&data.l1_test)?,
        l2_dev_f1: f1(&data.l2_dev)?,
        l2_test_f1: f1(&data.l2_test)?,
        l2_dev_ambiguous_f1: f1(&ambiguous_pairs(corpus, &data.l2_dev))?,
        l2_test_ambiguous_f1: f1(&ambiguous_pairs(corpus, &data.l2_test))?,
    })
}

fn pair_representation(towers: &TowerParams, query: &str, product: &str) -> Result<Vec<f64>> {
    let mut v = encode(towers, Tower::Query, query, None)?.into_inner();
    v.extend(encode(towers, Tower::Product, product, None)?.into_inner());
    Ok(v)
}

/// Transfer gap between source-market pairs and their lexicon translations.
///
/// A pair is represented by its concatenated query and product embeddings;
/// the reference mean is taken over the translated representations.
pub fn lexicon_transfer_gap(
    towers: &TowerParams,
    corpus: &Corpus,
    pairs: &[LabeledPair],
) -> Result<TransferGap> {
    let lex = &corpus.world.lexicon;
    let reps: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .par_iter()
        .map(|pair| {
            let q = corpus
                .query(&pair.query)
                .ok_or_else(|| Error::validation(format!("unknown query {}", pair.query)))?;
            let p = corpus
                .product(&pair.product)
                .ok_or_else(|| Error::validation(format!("unknown product {}", pair.product)))?;
            let text = p.relevance_text();
            let e1 = pair_representation(towers, &q.text, &text)?;
            let e2 = pair_representation(
                towers,
                &lex.translate(&q.text, Language::L2)?,
                &lex.translate(&text, Language::L2)?,
            )?;
            Ok((e1, e2))
        })
        .collect::<Result<_>>()?;
    let targets: Vec<&[f64]> = reps.iter().map(|(_, e2)| e2.as_slice()).collect();
    let mean = mean_vector(&targets)?;
    transfer_gap(&reps, &mean)
}

/// Online candidates for the target-market training queries.
pub fn target_candidates(
    corpus: &Corpus,
    splits: &Splits,
    ebr: &TowerParams,
    l2_index: &EmbeddingIndex,
    m: usize,
    n: usize,
) -> Result<Candidates> {
    let queries = queries_of(corpus, splits.queries(Language::L2, Split::Train))?;
    let retriever = EbrRetriever {
        towers: ebr,
        index: l2_index,
        tag: RetrieverTag::EbrLocal,
    };
    online_candidates(&queries, &corpus.impressions, &retriever, m, n)
}

/// Distills `teacher` into the two binary students.
#[allow(clippy::too_many_arguments)]
pub fn online_stage(
    config: &PipelineConfig,
    corpus: &Corpus,
    data: &StageData,
    candidates: &Candidates,
    teacher: &dyn TeacherScorer,
    cache: &mut LabelCache,
    rqa: Option<&RqaMap>,
) -> Result<OnlineOutcome> {
    let init = TowerParams::init(&config.model, config.init_seed().wrapping_add(7))?;
    let inputs = OnlineInputs {
        corpus,
        candidates,
        rqa,
        dev_pairs: &data.l2_dev,
    };
    distill_online(&init, teacher, cache, &inputs, &config.online.train)
}

/// Position-based quality of the served ranking against the plain EBR order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub n_queries: usize,
    pub baseline_em_at_1: f64,
    pub baseline_defect_at_5: f64,
    pub online_em_at_1: f64,
    pub online_defect_at_5: f64,
}

/// Student scores of every product in `index`, keyed by id.
fn product_scores(
    student: &TowerParams,
    products: &[&Product],
) -> Result<HashMap<String, Vec<f64>>> {
    products
        .par_iter()
        .map(|p| {
            Ok((
                p.id.clone(),
                encode(student, Tower::Product, &p.relevance_text(), None)?.into_inner(),
            ))
        })
        .collect()
}

/// Reranks the top-`n` EBR results of each query: products the defect student
/// flags (score at or above `threshold`) sink to the bottom, products the
/// exact-match student scores at 0.5 or more rise to the top, and the EBR
/// order is kept inside each group.
#[allow(clippy::too_many_arguments)]
pub fn ranking_eval(
    corpus: &Corpus,
    queries: &[&Query],
    ebr: &TowerParams,
    index: &EmbeddingIndex,
    em: &TowerParams,
    defect: &TowerParams,
    n: usize,
    threshold: f64,
    scale: f64,
) -> Result<RankingReport> {
    let products: Vec<&Product> = index
        .ids
        .iter()
        .map(|id| {
            corpus
                .product(id)
                .ok_or_else(|| Error::validation(format!("unknown product {id}")))
        })
        .collect::<Result<_>>()?;
    let em_vecs = product_scores(em, &products)?;
    let defect_vecs = product_scores(defect, &products)?;
    let ranked: Vec<(RankedResult, RankedResult)> = queries
        .par_iter()
        .map(|q| {
            let hits = ebr_top_k(ebr, index, q, n)?;
            let eq_em = encode(em, Tower::Query, &q.text, None)?;
            let eq_defect = encode(defect, Tower::Query, &q.text, None)?;
            let mut scored: Vec<(bool, bool, usize, String)> = hits
                .iter()
                .enumerate()
                .map(|(rank, (id, _))| {
                    let e = calibrate(dot(eq_em.as_slice(), &em_vecs[id]), scale);
                    let d = calibrate(dot(eq_defect.as_slice(), &defect_vecs[id]), scale);
                    (d >= threshold, e < 0.5, rank, id.clone())
                })
                .collect();
            scored.sort();
            let baseline = RankedResult {
                query_id: q.id.clone(),
                product_ids: hits.into_iter().map(|(id, _)| id).collect(),
            };
            let online = RankedResult {
                query_id: q.id.clone(),
                product_ids: scored.into_iter().map(|s| s.3).collect(),
            };
            Ok((baseline, online))
        })
        .collect::<Result<_>>()?;
    let (baseline, online): (Vec<RankedResult>, Vec<RankedResult>) = ranked.into_iter().unzip();
    let oracle = |q: &str, p: &str| corpus.oracle_label(q, p);
    Ok(RankingReport {
        n_queries: queries.len(),
        baseline_em_at_1: em_at_1(&baseline, oracle)?,
        baseline_defect_at_5: defect_at_5(&baseline, oracle)?,
        online_em_at_1: em_at_1(&online, oracle)?,
        online_defect_at_5: defect_at_5(&online, oracle)?,
    })
}

/// Queries of one language and split.
pub fn split_query_refs<'c>(
    corpus: &'c Corpus,
    splits: &Splits,
    lang: Language,
    split: Split,
) -> Result<Vec<&'c Query>> {
    queries_of(corpus, splits.queries(lang, split))
}

/// RQA features restricted to `ids`, in id order.
pub fn features_for(map: &RqaMap, ids: &[String]) -> Vec<crate::retrieval::RqaFeature> {
    ids.iter().filter_map(|id| map.get(id).cloned()).collect()
}

/// Soft labels map into records ordered by pair id.
pub fn soft_label_records(map: &SoftLabelMap) -> Vec<SoftLabelRecord> {
    map.iter()
        .map(|(id, s)| SoftLabelRecord {
            pair_id: id.clone(),
            soft_label: *s,
        })
        .collect()
}

pub fn soft_label_map(records: Vec<SoftLabelRecord>) -> SoftLabelMap {
    records
        .into_iter()
        .map(|r| (r.pair_id, r.soft_label))
        .collect::<BTreeMap<_, _>>()
}

/// One line of a `soft_labels.jsonl` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelRecord {
    pub pair_id: String,
    pub soft_label: crate::corpus::SoftLabel,
}

/// Binary dev accuracy of a student at the 0.5 cut.
pub fn student_accuracy(
    towers: &TowerParams,
    corpus: &Corpus,
    pairs: &[LabeledPair],
    positive: RelevanceLabel,
    scale: f64,
) -> Result<f64> {
    let eval = eval_pairs(corpus, pairs, None, towers.vocab_size())?;
    let scores = crate::training::student_scores(towers, &eval, scale)?;
    let pred: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
    let gold: Vec<bool> = eval.iter().map(|p| p.label == positive).collect();
    crate::metrics::accuracy(&pred, &gold)
}
