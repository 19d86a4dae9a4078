use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{relevance_examples, EvalPair, RqaMap, SoftLabelMap};
use super::relevance::{train_relevance, RelevanceData};
use super::trainer::{EvalPoint, LossPoint};
use crate::corpus::{Corpus, LabeledPair};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelParams, RelevanceModel};
use crate::teacher::{batch_label, model_teacher, LabelCache, PairRequest, TeacherScorer};

/// Everything a self-distillation run reads besides the initial model.
pub struct SelfDistillInputs<'a> {
    pub corpus: &'a Corpus,
    /// Training pairs with their (possibly noisy) hard labels.
    pub train_pairs: &'a [LabeledPair],
    pub dev: &'a [EvalPair],
    pub rqa: Option<&'a RqaMap>,
    pub translations: &'a [(Vec<usize>, Vec<usize>)],
    /// Where teacher label caches are kept; `None` keeps them in memory.
    pub cache_dir: Option<&'a Path>,
    /// Stored in the teacher checkpoints built between rounds.
    pub config_snapshot: serde_json::Value,
}

/// Bookkeeping of one completed round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLogEntry {
    pub round: usize,
    pub dev_f1: f64,
    pub best_step: usize,
    pub soft_labels: usize,
    pub evals: Vec<EvalPoint>,
    pub train_loss: Vec<LossPoint>,
}

pub struct RoundResult {
    pub model: RelevanceModel,
    pub log: RoundLogEntry,
    pub soft_labels: SoftLabelMap,
}

pub struct SelfDistillOutcome {
    pub rounds: Vec<RoundResult>,
    pub best_round: usize,
}

impl SelfDistillOutcome {
    pub fn best(&self) -> &RoundResult {
        &self.rounds[self.best_round]
    }

    pub fn log(&self) -> Vec<RoundLogEntry> {
        self.rounds.iter().map(|r| r.log.clone()).collect()
    }
}

/// Labels every training pair with `teacher`.
pub fn label_pairs(
    corpus: &Corpus,
    pairs: &[LabeledPair],
    rqa: Option<&RqaMap>,
    teacher: &dyn TeacherScorer,
    cache: &mut LabelCache,
) -> Result<SoftLabelMap> {
    let mut reqs = Vec::with_capacity(pairs.len());
    for p in pairs {
        let query = corpus
            .query(&p.query)
            .ok_or_else(|| Error::validation(format!("unknown query {}", p.query)))?;
        let product = corpus
            .product(&p.product)
            .ok_or_else(|| Error::validation(format!("unknown product {}", p.product)))?;
        reqs.push(PairRequest {
            query,
            rqa: rqa.and_then(|m| m.get(&query.id)),
            product,
        });
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let labels = batch_label(teacher, &reqs, cache, threads)?;
    Ok(reqs.iter().map(|r| r.pair_id()).zip(labels).collect())
}

/// Round 0 trains on hard labels only. Each later round labels all training
/// pairs with the previous round's model and retrains on the blended loss,
/// from `init` (or from the previous round's parameters when
/// `continue_rounds` is set). The best round is the one with the highest dev
/// micro-F1, earliest on ties.
pub fn self_distill(
    init: &RelevanceModel,
    inputs: &SelfDistillInputs<'_>,
    config: &TrainConfig,
) -> Result<SelfDistillOutcome> {
    config.validate()?;
    let vocab = init.towers.vocab_size();
    let mut rounds: Vec<RoundResult> = Vec::with_capacity(config.sd_rounds + 1);
    for round in 0..=config.sd_rounds {
        let soft = match rounds.last() {
            None => SoftLabelMap::new(),
            Some(prev) => {
                let labeled = (|| {
                    let ck = Checkpoint::new(
                        ModelParams::Relevance(prev.model.clone()),
                        inputs.config_snapshot.clone(),
                        "micro_f1",
                        prev.log.dev_f1,
                        prev.log.round,
                        prev.log.best_step,
                    );
                    let teacher = model_teacher(&ck)?;
                    let mut cache = match inputs.cache_dir {
                        Some(dir) => LabelCache::open(dir, &teacher.identity())?,
                        None => LabelCache::in_memory(),
                    };
                    label_pairs(
                        inputs.corpus,
                        inputs.train_pairs,
                        inputs.rqa,
                        &teacher,
                        &mut cache,
                    )
                })();
                labeled.map_err(|e| Error::Round {
                    round,
                    source: Box::new(e),
                })?
            }
        };
        let soft_ref = (round > 0).then_some(&soft);
        let train = relevance_examples(
            inputs.corpus,
            inputs.train_pairs,
            inputs.rqa,
            soft_ref,
            config.alpha,
            vocab,
        )?;
        let start = match rounds.last() {
            Some(prev) if config.continue_rounds => prev.model.clone(),
            _ => init.clone(),
        };
        let data = RelevanceData {
            train: &train,
            dev: inputs.dev,
            translations: inputs.translations,
        };
        let out = train_relevance(start, &data, config)?;
        log::info!(
            "self-distillation round {round}: dev F1 {:.4}",
            out.best_metric
        );
        rounds.push(RoundResult {
            log: RoundLogEntry {
                round,
                dev_f1: out.best_metric,
                best_step: out.best_step,
                soft_labels: soft.len(),
                evals: out.evals,
                train_loss: out.losses,
            },
            model: out.best,
            soft_labels: soft,
        });
    }
    let mut best_round = 0;
    for (i, r) in rounds.iter().enumerate() {
        if r.log.dev_f1 > rounds[best_round].log.dev_f1 {
            best_round = i;
        }
    }
    Ok(SelfDistillOutcome { rounds, best_round })
}
