use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{eval_pairs, EvalPair, RqaMap};
use super::trainer::{train_loop, Task, TrainOutcome};
use crate::corpus::{Corpus, ImpressionRecord, LabeledPair, Query, RelevanceLabel};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, binary_f1};
use crate::model::{
    calibrate, encode_ids, token_ids, BinaryKdObjective, KdExample, Tower, TowerParams,
};
use crate::retrieval::Retriever;
use crate::teacher::{batch_label, LabelCache, PairRequest, TeacherScorer};

/// Default number of impressed products per query.
pub const DEFAULT_M: usize = 20;
/// Default number of retrieved products per query.
pub const DEFAULT_N: usize = 100;

/// Query/product pairs for student training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Candidates {
    pub pairs: Vec<(String, String)>,
    /// Queries that had no candidate at all.
    pub skipped: usize,
}

/// Per query: the top-`m` impressed products (ties by conversions, then id)
/// followed by the top-`n` retrieved products not already present.
pub fn online_candidates(
    queries: &[&Query],
    impressions: &[ImpressionRecord],
    retriever: &dyn Retriever,
    m: usize,
    n: usize,
) -> Result<Candidates> {
    if m == 0 && n == 0 {
        return Err(Error::validation("online distillation needs M + N >= 1"));
    }
    let mut by_query: BTreeMap<&str, Vec<&ImpressionRecord>> = BTreeMap::new();
    for r in impressions {
        by_query.entry(r.query_id.as_str()).or_default().push(r);
    }
    let retrieved: Vec<Vec<(String, f64)>> = if n > 0 {
        queries
            .par_iter()
            .map(|q| retriever.retrieve(&q.text, n))
            .collect::<Result<_>>()?
    } else {
        vec![Vec::new(); queries.len()]
    };
    let mut out = Candidates::default();
    for (q, hits) in queries.iter().zip(retrieved) {
        let mut seen = BTreeSet::new();
        let mut list = Vec::new();
        if m > 0 {
            let mut recs = by_query.get(q.id.as_str()).cloned().unwrap_or_default();
            recs.sort_by(|a, b| {
                b.impressions
                    .cmp(&a.impressions)
                    .then(b.conversions.cmp(&a.conversions))
                    .then(a.product_id.cmp(&b.product_id))
            });
            for r in recs.into_iter().take(m) {
                if seen.insert(r.product_id.clone()) {
                    list.push(r.product_id.clone());
                }
            }
        }
        for (pid, _) in hits {
            if seen.insert(pid.clone()) {
                list.push(pid);
            }
        }
        if list.is_empty() {
            out.skipped += 1;
            continue;
        }
        out.pairs
            .extend(list.into_iter().map(|p| (q.id.clone(), p)));
    }
    if out.skipped > 0 {
        log::warn!(
            "{} quer(ies) had no online-distillation candidates",
            out.skipped
        );
    }
    Ok(out)
}

pub struct OnlineInputs<'a> {
    pub corpus: &'a Corpus,
    pub candidates: &'a Candidates,
    /// RQA features shown to the teacher (students see the bare query).
    pub rqa: Option<&'a RqaMap>,
    /// Labeled pairs used for best-checkpoint selection and reporting.
    pub dev_pairs: &'a [LabeledPair],
}

/// One binary student and how it compares with its teacher on the dev pairs.
#[derive(Clone, Debug)]
pub struct StudentResult {
    pub outcome: TrainOutcome<TowerParams>,
    pub dev_accuracy: f64,
    pub dev_f1: f64,
    pub teacher_accuracy: f64,
    pub teacher_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub dev_accuracy: f64,
    pub dev_f1: f64,
    pub teacher_accuracy: f64,
    pub teacher_f1: f64,
    pub best_step: usize,
}

impl StudentResult {
    pub fn summary(&self) -> StudentSummary {
        StudentSummary {
            dev_accuracy: self.dev_accuracy,
            dev_f1: self.dev_f1,
            teacher_accuracy: self.teacher_accuracy,
            teacher_f1: self.teacher_f1,
            best_step: self.outcome.best_step,
        }
    }
}

pub struct OnlineOutcome {
    pub em: StudentResult,
    pub defect: StudentResult,
    pub n_pairs: usize,
    pub skipped_queries: usize,
}

/// `σ(s·cos)` of the student towers for every pair, in order.
pub fn student_scores(towers: &TowerParams, pairs: &[EvalPair], scale: f64) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| {
            let eq = encode_ids(towers, Tower::Query, &p.query)?;
            let ep = encode_ids(towers, Tower::Product, &p.product)?;
            Ok(calibrate(crate::model::dot(&eq.output, &ep.output), scale))
        })
        .collect()
}

fn binary_scores(
    scores: &[f64],
    pairs: &[EvalPair],
    positive: RelevanceLabel,
) -> Result<(f64, f64)> {
    let pred: Vec<bool> = scores.iter().map(|s| *s >= 0.5).collect();
    let gold: Vec<bool> = pairs.iter().map(|p| p.label == positive).collect();
    Ok((accuracy(&pred, &gold)?, binary_f1(&pred, &gold, &true)?))
}

fn pair_requests<'c>(
    corpus: &'c Corpus,
    ids: &[(String, String)],
    rqa: Option<&'c RqaMap>,
) -> Result<Vec<PairRequest<'c>>> {
    ids.iter()
        .map(|(q, p)| {
            let query = corpus
                .query(q)
                .ok_or_else(|| Error::validation(format!("unknown query {q}")))?;
            let product = corpus
                .product(p)
                .ok_or_else(|| Error::validation(format!("unknown product {p}")))?;
            Ok(PairRequest {
                query,
                rqa: rqa.and_then(|m| m.get(q)),
                product,
            })
        })
        .collect()
}

/// Trains the exact-match student on teacher `p_e` and the defect student on
/// teacher `p_i` with binary distillation; hard labels are used only to pick
/// and report checkpoints.
pub fn distill_online(
    init: &TowerParams,
    teacher: &dyn TeacherScorer,
    cache: &mut LabelCache,
    inputs: &OnlineInputs<'_>,
    config: &TrainConfig,
) -> Result<OnlineOutcome> {
    init.validate()?;
    if inputs.candidates.pairs.is_empty() {
        return Err(Error::validation("no online-distillation candidates"));
    }
    let vocab = init.vocab_size();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let reqs = pair_requests(inputs.corpus, &inputs.candidates.pairs, inputs.rqa)?;
    let soft = batch_label(teacher, &reqs, cache, threads)?;
    let base: Vec<(Vec<usize>, Vec<usize>)> = reqs
        .iter()
        .map(|r| {
            (
                token_ids(Tower::Query, &r.query.text, None, vocab),
                token_ids(Tower::Product, &r.product.relevance_text(), None, vocab),
            )
        })
        .collect();

    let dev_ids: Vec<(String, String)> = inputs
        .dev_pairs
        .iter()
        .map(|p| (p.query.clone(), p.product.clone()))
        .collect();
    let dev_reqs = pair_requests(inputs.corpus, &dev_ids, inputs.rqa)?;
    let dev_soft = batch_label(teacher, &dev_reqs, cache, threads)?;
    let dev = eval_pairs(inputs.corpus, inputs.dev_pairs, None, vocab)?;

    let train_student = |positive: RelevanceLabel| -> Result<StudentResult> {
        let examples: Vec<KdExample> = base
            .iter()
            .zip(&soft)
            .map(|((q, p), s)| KdExample {
                query: q.clone(),
                product: p.clone(),
                target: s.prob(positive),
            })
            .collect();
        let tasks = vec![Task {
            name: "kd",
            len: examples.len(),
            weight: 1.0,
            build: Box::new(|idx: &[usize]| {
                Box::new(BinaryKdObjective {
                    examples: idx.iter().map(|&i| examples[i].clone()).collect(),
                    scale: config.scale,
                }) as Box<_>
            }),
        }];
        let evaluate = |t: &TowerParams| -> Result<f64> {
            let scores = student_scores(t, &dev, config.scale)?;
            Ok(binary_scores(&scores, &dev, positive)?.0)
        };
        let outcome = train_loop(init.clone(), &tasks, &evaluate, config)?;
        let scores = student_scores(&outcome.best, &dev, config.scale)?;
        let (dev_accuracy, dev_f1) = binary_scores(&scores, &dev, positive)?;
        let teacher_scores: Vec<f64> = dev_soft.iter().map(|s| s.prob(positive)).collect();
        let (teacher_accuracy, teacher_f1) = binary_scores(&teacher_scores, &dev, positive)?;
        Ok(StudentResult {
            outcome,
            dev_accuracy,
            dev_f1,
            teacher_accuracy,
            teacher_f1,
        })
    };
    let em = train_student(RelevanceLabel::Exact)?;
    let defect = train_student(RelevanceLabel::Irrelevant)?;
    Ok(OnlineOutcome {
        em,
        defect,
        n_pairs: inputs.candidates.pairs.len(),
        skipped_queries: inputs.candidates.skipped,
    })
}
