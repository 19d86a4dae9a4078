use super::config::TrainConfig;
use super::data::{relevance_f1, EvalPair};
use super::trainer::{train_loop, Task, TrainOutcome};
use crate::error::Result;
use crate::model::{
    grad, AlignmentObjective, RelevanceExample, RelevanceModel, RelevanceObjective, TowerParams,
};

/// Inputs of one relevance training run, already tokenized.
pub struct RelevanceData<'a> {
    pub train: &'a [RelevanceExample],
    pub dev: &'a [EvalPair],
    pub translations: &'a [(Vec<usize>, Vec<usize>)],
}

/// Loss and gradient of one translation-alignment batch on the query tower.
pub fn translation_alignment_step(
    params: &TowerParams,
    batch: &[(Vec<usize>, Vec<usize>)],
) -> Result<(f64, TowerParams)> {
    let objective = AlignmentObjective {
        pairs: batch.to_vec(),
    };
    grad(&objective, params)
}

/// Trains the relevance model on its examples, interleaving
/// translation-alignment batches at `mt_weight`, and keeps the checkpoint
/// with the best dev micro-F1.
pub fn train_relevance(
    init: RelevanceModel,
    data: &RelevanceData<'_>,
    config: &TrainConfig,
) -> Result<TrainOutcome<RelevanceModel>> {
    init.validate()?;
    let tasks = vec![
        Task {
            name: "relevance",
            len: data.train.len(),
            weight: 1.0,
            build: Box::new(|idx: &[usize]| {
                Box::new(RelevanceObjective {
                    examples: idx.iter().map(|&i| data.train[i].clone()).collect(),
                }) as Box<_>
            }),
        },
        Task {
            name: "alignment",
            len: data.translations.len(),
            weight: if data.translations.is_empty() {
                0.0
            } else {
                config.mt_weight
            },
            build: Box::new(|idx: &[usize]| {
                Box::new(AlignmentObjective {
                    pairs: idx.iter().map(|&i| data.translations[i].clone()).collect(),
                }) as Box<_>
            }),
        },
    ];
    train_loop(
        init,
        &tasks,
        &|m: &RelevanceModel| relevance_f1(m, data.dev),
        config,
    )
}
