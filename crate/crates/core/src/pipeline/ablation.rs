use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::data::{make_splits, Split, StageData};
use super::stages::{
    ebr_dev_set, external_teacher, features_for, impression_examples, lexicon_transfer_gap,
    online_stage, pseudo_pair_examples, ranking_eval, relevance_config, rqa_map, score_relevance,
    split_query_refs, target_candidates, train_ebr, train_relevance_run, translation_streams,
    LanguageIndexes, RankingReport, RelevanceRun, RelevanceScores, RqaSource,
};
use crate::corpus::{generate_world, Language};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ModelParams, RelevanceModel};
use crate::retrieval::{build_bm25, rqa_accuracy, RetrieverTag};
use crate::teacher::{model_teacher, LabelCache};
use crate::training::{eval_pairs, self_distill, RqaMap, SelfDistillInputs, StudentSummary};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    /// 1: source-market data only; 2: source plus noisy target-market data.
    pub stage: u8,
    /// Dev micro-F1 used for checkpoint selection.
    pub selection_f1: f64,
    pub best_step: usize,
    #[serde(flatten)]
    pub scores: RelevanceScores,
    pub transfer_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EbrSummary {
    pub pseudo_pairs: usize,
    pub impression_pairs: usize,
    /// recall@10 of exact matches on dev queries.
    pub recall_init: f64,
    pub recall_ebr: f64,
    pub recall_ebr_local: f64,
}

/// Share of held-out target-market queries whose RQA titles include one from the right category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RqaAccuracy {
    pub n_queries: usize,
    pub bm25: f64,
    pub ebr: f64,
    pub ebr_local: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineSummary {
    pub em: StudentSummary,
    pub defect: StudentSummary,
    pub n_pairs: usize,
    pub skipped_queries: usize,
    pub ranking: RankingReport,
}

/// Everything one ablation run measures; serialized as `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub noise_flipped: f64,
    pub ebr: EbrSummary,
    pub rqa_accuracy: RqaAccuracy,
    pub rows: Vec<AblationRow>,
    /// Self-distillation round of the best stage-2 row.
    pub best_round: usize,
    pub online: OnlineSummary,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// Row name of self-distillation round `r` (round 0 is the RQA* row).
pub fn round_row_name(r: usize) -> String {
    if r == 0 {
        "RQA*".into()
    } else {
        format!("+SD-{r}")
    }
}

/// Runs every stage in memory and collects the ablation table.
pub fn run_ablation(config: &PipelineConfig) -> Result<AblationReport> {
    config.validate()?;
    let c = config.resolved();
    if !c.teacher.has_cvr() {
        return Err(Error::Capability(
            "the ablation distills teacher CVR into the retriever; the configured teacher has none"
                .into(),
        ));
    }
    let snapshot = serde_json::to_value(&c)?;
    let vocab = c.model.vocab_size;

    let corpus = generate_world(&c.world)?;
    let splits = make_splits(&corpus, &c.splits, c.split_seed())?;
    let data = StageData::new(&corpus, &splits, c.world.noise_rate, c.noise_seed())?;
    let bm25 = build_bm25(&corpus.products, c.retrieval.k1, c.retrieval.b)?;
    log::info!(
        "world: {} products, {} queries",
        corpus.products.len(),
        corpus.queries.len()
    );

    let teacher = external_teacher(&c)?;
    let mut cache = LabelCache::in_memory();
    let pseudo = pseudo_pair_examples(&corpus, &splits, &bm25, &c, teacher.as_ref(), &mut cache)?;
    let impressions = impression_examples(&corpus, &splits, vocab)?;
    let dev_set = ebr_dev_set(&corpus, &splits, vocab)?;
    let ebr = train_ebr(&c, &pseudo, &dev_set)?;
    let local_examples: Vec<_> = pseudo.iter().chain(&impressions).cloned().collect();
    let ebr_local = train_ebr(&c, &local_examples, &dev_set)?;
    log::info!(
        "retrievers: recall@10 {:.3} / {:.3}",
        ebr.best_metric,
        ebr_local.best_metric
    );

    let indexes = LanguageIndexes::build(&ebr.best, &corpus)?;
    let indexes_local = LanguageIndexes::build(&ebr_local.best, &corpus)?;
    let all_queries = corpus.queries.clone();
    let rqa_bm25 = rqa_map(&corpus, &all_queries, &RqaSource::Bm25(&bm25), &c)?;
    let rqa_ebr = rqa_map(
        &corpus,
        &all_queries,
        &RqaSource::Ebr {
            towers: &ebr.best,
            indexes: &indexes,
            tag: RetrieverTag::Ebr,
        },
        &c,
    )?;
    let rqa_local = rqa_map(
        &corpus,
        &all_queries,
        &RqaSource::Ebr {
            towers: &ebr_local.best,
            indexes: &indexes_local,
            tag: RetrieverTag::EbrLocal,
        },
        &c,
    )?;
    let held_out = splits.queries(Language::L2, Split::Test);
    let accuracy = |m: &RqaMap| rqa_accuracy(&corpus, &features_for(m, held_out));
    let rqa_report = RqaAccuracy {
        n_queries: held_out.len(),
        bm25: accuracy(&rqa_bm25)?,
        ebr: accuracy(&rqa_ebr)?,
        ebr_local: accuracy(&rqa_local)?,
    };

    let translations = translation_streams(&corpus, vocab);
    let init = RelevanceModel::init(&c.model, c.init_seed())?;
    let mut rows = Vec::new();
    let stage1: [(&str, bool, Option<&RqaMap>); 3] = [
        ("SFT", false, None),
        ("SFT+MT", true, None),
        ("SFT+MT+RQA", true, Some(&rqa_ebr)),
    ];
    for (name, mt, rqa) in stage1 {
        let run = RelevanceRun {
            corpus: &corpus,
            data: &data,
            translations: &translations,
            rqa,
            soft: None,
            target_market: false,
        };
        let out = train_relevance_run(init.clone(), &run, &relevance_config(&c.train, mt))?;
        rows.push(AblationRow {
            name: name.into(),
            stage: 1,
            selection_f1: out.best_metric,
            best_step: out.best_step,
            scores: score_relevance(&out.best, &corpus, &data, rqa)?,
            transfer_gap: lexicon_transfer_gap(&out.best.towers, &corpus, &data.l1_test)?.gap,
        });
        log::info!("{name}: selection F1 {:.4}", out.best_metric);
    }

    let stage2 = relevance_config(&c.train, c.stages.mt);
    let run = RelevanceRun {
        corpus: &corpus,
        data: &data,
        translations: &translations,
        rqa: Some(&rqa_ebr),
        soft: None,
        target_market: true,
    };
    let out = train_relevance_run(init.clone(), &run, &stage2)?;
    rows.push(AblationRow {
        name: "RQA".into(),
        stage: 2,
        selection_f1: out.best_metric,
        best_step: out.best_step,
        scores: score_relevance(&out.best, &corpus, &data, Some(&rqa_ebr))?,
        transfer_gap: lexicon_transfer_gap(&out.best.towers, &corpus, &data.l1_test)?.gap,
    });

    let train_pairs = data.training_pairs(true);
    let dev = eval_pairs(&corpus, &data.l2_dev, Some(&rqa_local), vocab)?;
    let sd_translations = if c.stages.mt {
        translations.as_slice()
    } else {
        &[]
    };
    let inputs = SelfDistillInputs {
        corpus: &corpus,
        train_pairs: &train_pairs,
        dev: &dev,
        rqa: Some(&rqa_local),
        translations: sd_translations,
        cache_dir: None,
        config_snapshot: snapshot.clone(),
    };
    let sd = self_distill(&init, &inputs, &stage2)?;
    for round in &sd.rounds {
        rows.push(AblationRow {
            name: round_row_name(round.log.round),
            stage: 2,
            selection_f1: round.log.dev_f1,
            best_step: round.log.best_step,
            scores: score_relevance(&round.model, &corpus, &data, Some(&rqa_local))?,
            transfer_gap: lexicon_transfer_gap(&round.model.towers, &corpus, &data.l1_test)?.gap,
        });
        log::info!(
            "round {}: selection F1 {:.4}",
            round.log.round,
            round.log.dev_f1
        );
    }

    let best = sd.best();
    let teacher_ck = Checkpoint::new(
        ModelParams::Relevance(best.model.clone()),
        snapshot,
        "micro_f1",
        best.log.dev_f1,
        best.log.round,
        best.log.best_step,
    );
    let online_teacher = model_teacher(&teacher_ck)?;
    let candidates = target_candidates(
        &corpus,
        &splits,
        &ebr_local.best,
        &indexes_local.l2,
        c.online.m,
        c.online.n,
    )?;
    let online = online_stage(
        &c,
        &corpus,
        &data,
        &candidates,
        &online_teacher,
        &mut LabelCache::in_memory(),
        Some(&rqa_local),
    )?;
    let test_queries = split_query_refs(&corpus, &splits, Language::L2, Split::Test)?;
    let ranking = ranking_eval(
        &corpus,
        &test_queries,
        &ebr_local.best,
        &indexes_local.l2,
        &online.em.outcome.best,
        &online.defect.outcome.best,
        c.online.n,
        c.serving.defect_threshold,
        c.online.train.scale,
    )?;

    Ok(AblationReport {
        format_version: REPORT_FORMAT_VERSION,
        name: c.name.clone(),
        seed: c.seed,
        config_hash: config.hash(),
        noise_flipped: data.flipped_fraction(),
        ebr: EbrSummary {
            pseudo_pairs: pseudo.len(),
            impression_pairs: impressions.len(),
            recall_init: ebr.evals.first().map_or(f64::NAN, |e| e.metric),
            recall_ebr: ebr.best_metric,
            recall_ebr_local: ebr_local.best_metric,
        },
        rqa_accuracy: rqa_report,
        rows,
        best_round: sd.best_round,
        online: OnlineSummary {
            em: online.em.summary(),
            defect: online.defect.summary(),
            n_pairs: online.n_pairs,
            skipped_queries: online.skipped_queries,
            ranking,
        },
    })
}
