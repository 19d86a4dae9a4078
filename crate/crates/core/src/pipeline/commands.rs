//! File-backed stage runners behind the `csrm` subcommands. Each one checks
//! its inputs against the manifests of the stages that produced them, writes
//! its outputs under the run directory and records a manifest of its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ablation::{run_ablation, AblationReport, OnlineSummary};
use super::config::{OnlineTeacher, PipelineConfig};
use super::data::{make_splits, Split, Splits, StageData};
use super::run::{
    checkpoint_in, metrics_in, now_ms, read_json, soft_labels_in, write_json, ArtifactDigest,
    RunDir, RunManifest, Stage,
};
use super::stages::{
    ebr_dev_set, external_teacher, features_for, impression_examples, online_stage, pairs_f1,
    pseudo_pair_examples, ranking_eval, relevance_config, rqa_map, score_relevance, soft_label_map,
    soft_label_records, split_query_refs, student_accuracy, target_candidates, train_ebr,
    train_relevance_run, translation_streams, LanguageIndexes, RelevanceRun, RqaSource,
    SoftLabelRecord,
};
use crate::corpus::{generate_world, load_jsonl, save_jsonl, Corpus, Language, RelevanceLabel};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{Checkpoint, ModelParams, RelevanceModel};
use crate::retrieval::{build_bm25, rqa_accuracy, Bm25Index, RetrieverTag, RqaFeature};
use crate::serving::{ServingState, StudentPair};
use crate::teacher::{model_teacher, LabelCache, TeacherScorer};
use crate::training::{
    eval_pairs, label_pairs, recall_at_k, self_distill, EvalPoint, LossPoint, RoundLogEntry,
    RqaMap, SelfDistillInputs, TrainOutcome,
};

pub const METRIC_MICRO_F1: &str = "micro_f1";
pub const METRIC_RECALL_AT_10: &str = "recall@10";
pub const METRIC_EM_ACCURACY: &str = "accuracy_exact";
pub const METRIC_DEFECT_ACCURACY: &str = "accuracy_irrelevant";

/// How a relevance checkpoint picked its best step; stored in the checkpoint
/// so `eval` can recompute the metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub target_market: bool,
    pub rqa: Option<RetrieverTag>,
}

/// Config snapshot embedded in every checkpoint the pipeline writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointContext {
    pub pipeline: PipelineConfig,
    pub selection: Selection,
}

/// A resolved config bound to a run directory.
pub struct Context {
    pub config: PipelineConfig,
    pub run: RunDir,
}

impl Context {
    /// `out` overrides `<runs_dir>/<name>`.
    pub fn new(config: PipelineConfig, out: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let config = config.resolved();
        let root = out.unwrap_or_else(|| config.run_dir());
        Ok(Context {
            config,
            run: RunDir::new(root),
        })
    }

    fn snapshot(&self, selection: Selection) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(CheckpointContext {
            pipeline: self.config.clone(),
            selection,
        })?)
    }

    fn selection(&self) -> Selection {
        Selection {
            target_market: self.config.stages.target_market,
            rqa: self
                .config
                .stages
                .rqa
                .then_some(self.config.stages.rqa_retriever),
        }
    }

    fn load_world(&self, inputs: &mut Vec<ArtifactDigest>) -> Result<(Corpus, Splits)> {
        inputs.extend(self.run.require_all(Stage::Gen, &self.run.corpus_files())?);
        inputs.push(self.run.require(Stage::Gen, &self.run.splits())?);
        Ok((
            Corpus::load(&self.run.corpus_dir())?,
            Splits::load(&self.run.splits())?,
        ))
    }

    fn stage_data(&self, corpus: &Corpus, splits: &Splits) -> Result<StageData> {
        StageData::new(
            corpus,
            splits,
            self.config.world.noise_rate,
            self.config.noise_seed(),
        )
    }

    fn load_checkpoint(
        &self,
        producer: Stage,
        path: &Path,
        inputs: &mut Vec<ArtifactDigest>,
    ) -> Result<Checkpoint> {
        inputs.push(self.run.require(producer, path)?);
        Checkpoint::load(path)
    }

    fn load_rqa(&self, tag: RetrieverTag, inputs: &mut Vec<ArtifactDigest>) -> Result<RqaMap> {
        let path = self.run.rqa(tag);
        inputs.push(self.run.require(Stage::Rqa(tag), &path)?);
        let features: Vec<RqaFeature> = load_jsonl(&path)?;
        Ok(features
            .into_iter()
            .map(|f| (f.query_id.clone(), f))
            .collect())
    }

    fn teacher_cache(&self, teacher: &dyn TeacherScorer) -> Result<LabelCache> {
        LabelCache::open(&self.run.teacher_cache_dir(), &teacher.identity())
    }
}

/// `gen`: synthetic world plus query splits.
pub fn gen(ctx: &Context) -> Result<RunManifest> {
    let started = now_ms();
    let c = &ctx.config;
    let corpus = generate_world(&c.world)?;
    corpus.save(&ctx.run.corpus_dir())?;
    let splits = make_splits(&corpus, &c.splits, c.split_seed())?;
    splits.save(&ctx.run.splits())?;
    let mut outputs = ctx.run.corpus_files();
    outputs.push(ctx.run.splits());
    ctx.run
        .write_manifest(Stage::Gen, c, started, Vec::new(), &outputs)
}

/// `index`: BM25 over the whole catalog.
pub fn index(ctx: &Context) -> Result<RunManifest> {
    let started = now_ms();
    let mut inputs = ctx.run.require_all(Stage::Gen, &ctx.run.corpus_files())?;
    let corpus = Corpus::load(&ctx.run.corpus_dir())?;
    let r = &ctx.config.retrieval;
    let bm25 = build_bm25(&corpus.products, r.k1, r.b)?;
    let path = ctx.run.bm25();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    bm25.save(&path)?;
    inputs.sort_by(|a, b| a.path.cmp(&b.path));
    ctx.run
        .write_manifest(Stage::Index, &ctx.config, started, inputs, &[path])
}

/// Summary written next to a trained retriever.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EbrMetrics {
    pub examples: usize,
    pub recall_init: f64,
    pub recall_at_10: f64,
    pub best_step: usize,
    pub evals: Vec<EvalPoint>,
    pub train_loss: Vec<LossPoint>,
}

/// `train-ebr`: distills teacher CVR on BM25 pseudo pairs into the retriever;
/// with `local`, target-market impression pairs are added.
pub fn train_ebr_stage(ctx: &Context, local: bool) -> Result<RunManifest> {
    let started = now_ms();
    let c = &ctx.config;
    if !c.teacher.has_cvr() {
        return Err(Error::Capability(format!(
            "train-ebr needs CVR estimates, which a {:?} teacher cannot give",
            c.teacher.kind
        )));
    }
    let mut inputs = Vec::new();
    let (corpus, splits) = ctx.load_world(&mut inputs)?;
    inputs.push(ctx.run.require(Stage::Index, &ctx.run.bm25())?);
    let bm25 = Bm25Index::load(&ctx.run.bm25())?;
    let teacher = external_teacher(c)?;
    let mut cache = ctx.teacher_cache(teacher.as_ref())?;
    let mut examples =
        pseudo_pair_examples(&corpus, &splits, &bm25, c, teacher.as_ref(), &mut cache)?;
    if local {
        examples.extend(impression_examples(&corpus, &splits, c.model.vocab_size)?);
    }
    let dev = ebr_dev_set(&corpus, &splits, c.model.vocab_size)?;
    let out = train_ebr(c, &examples, &dev)?;
    let ck = Checkpoint::new(
        ModelParams::Towers(out.best.clone()),
        ctx.snapshot(Selection {
            target_market: false,
            rqa: None,
        })?,
        METRIC_RECALL_AT_10,
        out.best_metric,
        0,
        out.best_step,
    );
    ck.save(&ctx.run.ebr_checkpoint(local))?;
    write_json(
        &ctx.run.ebr_metrics(local),
        &EbrMetrics {
            examples: examples.len(),
            recall_init: out.evals.first().map_or(f64::NAN, |e| e.metric),
            recall_at_10: out.best_metric,
            best_step: out.best_step,
            evals: out.evals,
            train_loss: out.losses,
        },
    )?;
    ctx.run.write_manifest(
        Stage::TrainEbr { local },
        c,
        started,
        inputs,
        &[ctx.run.ebr_checkpoint(local), ctx.run.ebr_metrics(local)],
    )
}

/// `rqa`: augmentation features of every query from one retriever.
/// Returns the manifest and the RQA accuracy on held-out target-market queries.
pub fn rqa_stage(ctx: &Context, tag: RetrieverTag) -> Result<(RunManifest, f64)> {
    let started = now_ms();
    let c = &ctx.config;
    let mut inputs = Vec::new();
    let (corpus, splits) = ctx.load_world(&mut inputs)?;
    let queries = corpus.queries.clone();
    let map = match tag {
        RetrieverTag::Bm25 => {
            inputs.push(ctx.run.require(Stage::Index, &ctx.run.bm25())?);
            let bm25 = Bm25Index::load(&ctx.run.bm25())?;
            rqa_map(&corpus, &queries, &RqaSource::Bm25(&bm25), c)?
        }
        RetrieverTag::Ebr | RetrieverTag::EbrLocal => {
            let local = tag == RetrieverTag::EbrLocal;
            let ck = ctx.load_checkpoint(
                Stage::TrainEbr { local },
                &ctx.run.ebr_checkpoint(local),
                &mut inputs,
            )?;
            let indexes = LanguageIndexes::build(ck.towers(), &corpus)?;
            rqa_map(
                &corpus,
                &queries,
                &RqaSource::Ebr {
                    towers: ck.towers(),
                    indexes: &indexes,
                    tag,
                },
                c,
            )?
        }
    };
    let path = ctx.run.rqa(tag);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let features: Vec<RqaFeature> = map.values().cloned().collect();
    save_jsonl(&path, &features)?;
    let accuracy = rqa_accuracy(
        &corpus,
        &features_for(&map, splits.queries(Language::L2, Split::Test)),
    )?;
    let manifest = ctx
        .run
        .write_manifest(Stage::Rqa(tag), c, started, inputs, &[path])?;
    Ok((manifest, accuracy))
}

/// `label`: the configured teacher's soft labels for every training pair of
/// the current stage mixture.
pub fn label_stage(ctx: &Context) -> Result<RunManifest> {
    let started = now_ms();
    let c = &ctx.config;
    let mut inputs = Vec::new();
    let (corpus, splits) = ctx.load_world(&mut inputs)?;
    let data = ctx.stage_data(&corpus, &splits)?;
    let rqa = match c.stages.rqa {
        true => Some(ctx.load_rqa(c.stages.rqa_retriever, &mut inputs)?),
        false => None,
    };
    let teacher = external_teacher(c)?;
    let mut cache = ctx.teacher_cache(teacher.as_ref())?;
    let pairs = data.training_pairs(c.stages.target_market);
    let labels = label_pairs(&corpus, &pairs, rqa.as_ref(), teacher.as_ref(), &mut cache)?;
    let path = ctx.run.soft_labels();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_jsonl(&path, &soft_label_records(&labels))?;
    ctx.run
        .write_manifest(Stage::Label, c, started, inputs, &[path])
}

/// Inputs shared by `train` and `self-distill`.
struct RelevanceInputs {
    corpus: Corpus,
    data: StageData,
    rqa: Option<RqaMap>,
    translations: Vec<(Vec<usize>, Vec<usize>)>,
    inputs: Vec<ArtifactDigest>,
}

fn relevance_inputs(ctx: &Context) -> Result<RelevanceInputs> {
    let c = &ctx.config;
    let mut inputs = Vec::new();
    let (corpus, splits) = ctx.load_world(&mut inputs)?;
    let data = ctx.stage_data(&corpus, &splits)?;
    let rqa = match c.stages.rqa {
        true => Some(ctx.load_rqa(c.stages.rqa_retriever, &mut inputs)?),
        false => None,
    };
    let translations = if c.stages.mt {
        translation_streams(&corpus, c.model.vocab_size)
    } else {
        Vec::new()
    };
    Ok(RelevanceInputs {
        corpus,
        data,
        rqa,
        translations,
        inputs,
    })
}

fn write_round(
    ctx: &Context,
    dir: &Path,
    log: &RoundLogEntry,
    model: &RelevanceModel,
    soft: &[SoftLabelRecord],
) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::new(
        ModelParams::Relevance(model.clone()),
        ctx.snapshot(ctx.selection())?,
        METRIC_MICRO_F1,
        log.dev_f1,
        log.round,
        log.best_step,
    );
    ck.save(&checkpoint_in(dir))?;
    save_jsonl(&soft_labels_in(dir), soft)?;
    write_json(&metrics_in(dir), log)?;
    Ok(vec![
        checkpoint_in(dir),
        soft_labels_in(dir),
        metrics_in(dir),
    ])
}

fn round_log(
    round: usize,
    soft_labels: usize,
    out: TrainOutcome<RelevanceModel>,
) -> (RoundLogEntry, RelevanceModel) {
    (
        RoundLogEntry {
            round,
            dev_f1: out.best_metric,
            best_step: out.best_step,
            soft_labels,
            evals: out.evals,
            train_loss: out.losses,
        },
        out.best,
    )
}

/// `train`: one relevance run per the stage toggles.
pub fn train_stage(ctx: &Context) -> Result<RunManifest> {
    let started = now_ms();
    let c = &ctx.config;
    let mut ri = relevance_inputs(ctx)?;
    let soft = match c.stages.soft_labels {
        true => {
            ri.inputs
                .push(ctx.run.require(Stage::Label, &ctx.run.soft_labels())?);
            Some(soft_label_map(load_jsonl(&ctx.run.soft_labels())?))
        }
        false => None,
    };
    let run = RelevanceRun {
        corpus: &ri.corpus,
        data: &ri.data,
        translations: &ri.translations,
        rqa: ri.rqa.as_ref(),
        soft: soft.as_ref(),
        target_market: c.stages.target_market,
    };
    let init = RelevanceModel::init(&c.model, c.init_seed())?;
    let out = train_relevance_run(init, &run, &relevance_config(&c.train, c.stages.mt))?;
    let records = soft.as_ref().map(soft_label_records).unwrap_or_default();
    let (log, model) = round_log(0, records.len(), out);
    let outputs = write_round(ctx, &ctx.run.train_dir(), &log, &model, &records)?;
    ctx.run
        .write_manifest(Stage::Train, c, started, ri.inputs, &outputs)
}

/// Contents of `best_round.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRound {
    pub round: usize,
    pub dev_f1: f64,
    pub checkpoint: String,
}

/// `self-distill`: rounds `0..=sd_rounds`, each written to its own directory.
pub fn self_distill_stage(ctx: &Context) -> Result<RunManifest> {
    let started = now_ms();
    let c = &ctx.config;
    let ri = relevance_inputs(ctx)?;
    let vocab = c.model.vocab_size;
    let train_pairs = ri.data.training_pairs(c.stages.target_market);
    let dev = eval_pairs(
        &ri.corpus,
        ri.data.selection_pairs(c.stages.target_market),
        ri.rqa.as_ref(),
        vocab,
    )?;
    let cache_dir = ctx.run.teacher_cache_dir();
    let inputs = SelfDistillInputs {
        corpus: &ri.corpus,
        train_pairs: &train_pairs,
        dev: &dev,
        rqa: ri.rqa.as_ref(),
        translations: &ri.translations,
        cache_dir: Some(&cache_dir),
        config_snapshot: ctx.snapshot(ctx.selection())?,
    };
    let init = RelevanceModel::init(&c.model, c.init_seed())?;
    let sd = self_distill(&init, &inputs, &relevance_config(&c.train, c.stages.mt))?;
    let mut outputs = Vec::new();
    for round in &sd.rounds {
        outputs.extend(write_round(
            ctx,
            &ctx.run.round_dir(round.log.round),
            &round.log,
            &round.model,
            &soft_label_records(&round.soft_labels),
        )?);
    }
    let best = sd.best();
    write_json(
        &ctx.run.best_round(),
        &BestRound {
            round: best.log.round,
            dev_f1: best.log.dev_f1,
            checkpoint: format!("round_{}/checkpoint.ckpt", best.log.round),
        },
    )?;
    outputs.push(ctx.run.best_round());
    ctx.run
        .write_manifest(Stage::SelfDistill, c, started, ri.inputs, &outputs)
}

/// `distill-online`: binary students from the best self-distillation round
/// (or the configured teacher) on impression and EBR candidates.
pub fn distill_online_stage(ctx: &Context) -> Result<(RunManifest, OnlineSummary)> {
    let started = now_ms();
    let c = &ctx.config;
    let mut inputs = Vec::new();
    let (corpus, splits) = ctx.load_world(&mut inputs)?;
    let data = ctx.stage_data(&corpus, &splits)?;
    let local = c.stages.rqa_retriever == RetrieverTag::EbrLocal;
    let ebr = ctx.load_checkpoint(
        Stage::TrainEbr { local },
        &ctx.run.ebr_checkpoint(local),
        &mut inputs,
    )?;
    let l2_index = LanguageIndexes::build(ebr.towers(), &corpus)?.l2;

    let (teacher, rqa): (Box<dyn TeacherScorer>, Option<RqaMap>) = match c.online.teacher {
        OnlineTeacher::BestRound => {
            inputs.push(ctx.run.require(Stage::SelfDistill, &ctx.run.best_round())?);
            let best: BestRound = read_json(&ctx.run.best_round())?;
            let ck = ctx.load_checkpoint(
                Stage::SelfDistill,
                &ctx.run.round_checkpoint(best.round),
                &mut inputs,
            )?;
            let context: CheckpointContext = serde_json::from_value(ck.meta.config.clone())?;
            let rqa = match context.selection.rqa {
                Some(tag) => Some(ctx.load_rqa(tag, &mut inputs)?),
                None => None,
            };
            (Box::new(model_teacher(&ck)?), rqa)
        }
        OnlineTeacher::Configured => {
            let rqa = match c.stages.rqa {
                true => Some(ctx.load_rqa(c.stages.rqa_retriever, &mut inputs)?),
                false => None,
            };
            (external_teacher(c)?, rqa)
        }
    };
    let candidates = target_candidates(
        &corpus,
        &splits,
        ebr.towers(),
        &l2_index,
        c.online.m,
        c.online.n,
    )?;
    let mut cache = ctx.teacher_cache(teacher.as_ref())?;
    let online = online_stage(
        c,
        &corpus,
        &data,
        &candidates,
        teacher.as_ref(),
        &mut cache,
        rqa.as_ref(),
    )?;
    let test_queries = split_query_refs(&corpus, &splits, Language::L2, Split::Test)?;
    let ranking = ranking_eval(
        &corpus,
        &test_queries,
        ebr.towers(),
        &l2_index,
        &online.em.outcome.best,
        &online.defect.outcome.best,
        c.online.n,
        c.serving.defect_threshold,
        c.online.train.scale,
    )?;
    let snapshot = ctx.snapshot(Selection {
        target_market: true,
        rqa: None,
    })?;
    for (student, path, name) in [
        (&online.em, ctx.run.em_checkpoint(), METRIC_EM_ACCURACY),
        (
            &online.defect,
            ctx.run.defect_checkpoint(),
            METRIC_DEFECT_ACCURACY,
        ),
    ] {
        Checkpoint::new(
            ModelParams::Towers(student.outcome.best.clone()),
            snapshot.clone(),
            name,
            student.outcome.best_metric,
            0,
            student.outcome.best_step,
        )
        .save(&path)?;
    }
    let summary = OnlineSummary {
        em: online.em.summary(),
        defect: online.defect.summary(),
        n_pairs: online.n_pairs,
        skipped_queries: online.skipped_queries,
        ranking,
    };
    write_json(&ctx.run.online_metrics(), &summary)?;
    let manifest = ctx.run.write_manifest(
        Stage::DistillOnline,
        c,
        started,
        inputs,
        &[
            ctx.run.em_checkpoint(),
            ctx.run.defect_checkpoint(),
            ctx.run.online_metrics(),
        ],
    )?;
    Ok((manifest, summary))
}

/// `eval`: recomputes a checkpoint's dev metric from the run's data and adds
/// held-out metrics where they apply.
pub fn eval_stage(ctx: &Context, checkpoint: &Path) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let context: CheckpointContext =
        serde_json::from_value(ck.meta.config.clone()).map_err(|e| {
            Error::Checkpoint(format!(
                "{}: not written by this pipeline: {e}",
                checkpoint.display()
            ))
        })?;
    let mut inputs = Vec::new();
    let (corpus, splits) = ctx.load_world(&mut inputs)?;
    let p = &context.pipeline;
    let data = StageData::new(&corpus, &splits, p.world.noise_rate, p.noise_seed())?;
    let mut metrics = BTreeMap::new();
    metrics.insert("stored_dev_metric".to_string(), ck.meta.dev_metric);
    let n_samples;
    match ck.meta.dev_metric_name.as_str() {
        METRIC_MICRO_F1 => {
            let model = ck.relevance()?;
            let rqa = match context.selection.rqa {
                Some(tag) => Some(ctx.load_rqa(tag, &mut inputs)?),
                None => None,
            };
            let dev = data.selection_pairs(context.selection.target_market);
            n_samples = dev.len();
            metrics.insert(
                "dev_metric".into(),
                pairs_f1(model, &corpus, dev, rqa.as_ref())?,
            );
            let s = score_relevance(model, &corpus, &data, rqa.as_ref())?;
            metrics.insert("l1_test_micro_f1".into(), s.l1_test_f1);
            metrics.insert("l2_dev_micro_f1".into(), s.l2_dev_f1);
            metrics.insert("l2_test_micro_f1".into(), s.l2_test_f1);
            metrics.insert("l2_dev_ambiguous_micro_f1".into(), s.l2_dev_ambiguous_f1);
            metrics.insert("l2_test_ambiguous_micro_f1".into(), s.l2_test_ambiguous_f1);
        }
        METRIC_RECALL_AT_10 => {
            let dev = ebr_dev_set(&corpus, &splits, ck.meta.vocab_size)?;
            n_samples = dev.queries.len();
            metrics.insert("dev_metric".into(), recall_at_k(ck.towers(), &dev, 10)?);
        }
        name @ (METRIC_EM_ACCURACY | METRIC_DEFECT_ACCURACY) => {
            let positive = if name == METRIC_EM_ACCURACY {
                RelevanceLabel::Exact
            } else {
                RelevanceLabel::Irrelevant
            };
            n_samples = data.l2_dev.len();
            let scale = p.online.train.scale;
            metrics.insert(
                "dev_metric".into(),
                student_accuracy(ck.towers(), &corpus, &data.l2_dev, positive, scale)?,
            );
            metrics.insert(
                "l2_test_accuracy".into(),
                student_accuracy(ck.towers(), &corpus, &data.l2_test, positive, scale)?,
            );
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown dev metric {other:?}")));
        }
    }
    Ok(EvalReport {
        metrics,
        n_samples,
        skipped_pairs: 0,
        config_hash: ck.meta.config_hash.clone(),
    })
}

/// `ablation`: every stage in memory; the report lands in `report.json`.
pub fn ablation_stage(ctx: &Context) -> Result<AblationReport> {
    let started = now_ms();
    let report = run_ablation(&ctx.config)?;
    write_json(&ctx.run.report(), &report)?;
    ctx.run.write_manifest(
        Stage::Ablation,
        &ctx.config,
        started,
        Vec::new(),
        &[ctx.run.report()],
    )?;
    Ok(report)
}

/// Online students of the run, loaded into a scoring state over the whole catalog.
pub fn load_students(ctx: &Context) -> Result<(StudentPair, Corpus)> {
    let mut inputs = Vec::new();
    let em = ctx.load_checkpoint(Stage::DistillOnline, &ctx.run.em_checkpoint(), &mut inputs)?;
    let defect = ctx.load_checkpoint(
        Stage::DistillOnline,
        &ctx.run.defect_checkpoint(),
        &mut inputs,
    )?;
    inputs.extend(ctx.run.require_all(Stage::Gen, &ctx.run.corpus_files())?);
    Ok((
        StudentPair { em, defect },
        Corpus::load(&ctx.run.corpus_dir())?,
    ))
}

pub fn serving_state(ctx: &Context) -> Result<ServingState> {
    let (students, corpus) = load_students(ctx)?;
    ServingState::new(students, &corpus.products, ctx.config.serving_options())
}
